#include "pglab/experiment.hpp"
#include "pglab/io.hpp"

#include <cmath>
#include <fstream>

namespace pglab {

namespace {

using nlohmann::json;

Vector vector_from_json(const json& j, const char* field) {
    if (!j.is_array()) throw InvalidArgument(std::string(field) + " must be an array of weights");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

bool finite_state(const MethodState& s) {
    return s.eval.v.values.allFinite() && s.eval.a.values.allFinite();
}

} // namespace

TabularMdp load_source(const MdpSource& source) {
    switch (source.kind) {
    case MdpSource::Kind::bandit:
        return two_arm_bandit();
    case MdpSource::Kind::random:
        return random_mdp(source.seed, source.n_states, source.n_actions, source.gamma);
    case MdpSource::Kind::file:
        return load_mdp(source.path);
    }
    throw InvalidArgument("unknown mdp source");
}

void ExperimentConfig::validate() const {
    if (max_iters < 1) throw InvalidArgument("max_iters must be at least 1");
    if (!(stop_gap >= 0.0)) throw InvalidArgument("stop_gap must be nonnegative");
    if (is_regularized(method)) {
        if (!tau) throw InvalidArgument(std::string(method_name(method)) + " needs tau");
        require_tau(*tau);
    } else if (tau) {
        throw InvalidArgument(std::string(method_name(method)) + " does not take tau");
    }
    if (uses_step(method)) schedule.validate();
    if (method == Method::ppg && schedule.kind == ScheduleKind::pg_adaptive) {
        throw InvalidArgument("pg_adaptive applies to softmax methods, not ppg");
    }
    if (schedule.kind == ScheduleKind::ppg_increasing && method != Method::ppg) {
        throw InvalidArgument("ppg_increasing applies to ppg only");
    }
    if (checks) {
        for (const auto& name : *checks)
            if (!find_check(name)) throw InvalidArgument("unknown check: " + name);
    }
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig base) {
    if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
    ExperimentConfig c = std::move(base);
    try {
        if (j.contains("mdp")) {
            const json& m = j.at("mdp");
            if (m.is_string() && m.get<std::string>() == "bandit") {
                c.mdp.kind = MdpSource::Kind::bandit;
            } else if (m.is_object() && m.contains("file")) {
                c.mdp.kind = MdpSource::Kind::file;
                c.mdp.path = m.at("file").get<std::string>();
            } else if (m.is_object() && m.contains("random")) {
                const json& r = m.at("random");
                c.mdp.kind = MdpSource::Kind::random;
                c.mdp.seed = r.value("seed", c.mdp.seed);
                c.mdp.n_states = r.value("states", c.mdp.n_states);
                c.mdp.n_actions = r.value("actions", c.mdp.n_actions);
                c.mdp.gamma = r.value("gamma", c.mdp.gamma);
            } else {
                throw InvalidArgument("mdp must be \"bandit\", {\"file\": ...} or {\"random\": {...}}");
            }
        }
        if (j.contains("method")) {
            const auto name = j.at("method").get<std::string>();
            const auto m = parse_method(name);
            if (!m) throw InvalidArgument("unknown method: " + name);
            c.method = *m;
        }
        if (j.contains("schedule")) {
            const json& s = j.at("schedule");
            if (s.contains("kind")) {
                const auto name = s.at("kind").get<std::string>();
                const auto k = parse_schedule(name);
                if (!k) throw InvalidArgument("unknown schedule: " + name);
                c.schedule.kind = *k;
            }
            c.schedule.eta = s.value("eta", c.schedule.eta);
            c.schedule.c3 = s.value("c3", c.schedule.c3);
            c.schedule.c_adapt = s.value("c_adapt", c.schedule.c_adapt);
        }
        if (j.contains("tau")) {
            c.tau = j.at("tau").is_null() ? std::nullopt : std::optional(j.at("tau").get<double>());
        }
        if (j.contains("mu")) c.mu = vector_from_json(j.at("mu"), "mu");
        if (j.contains("rho")) c.rho = vector_from_json(j.at("rho"), "rho");
        c.max_iters = j.value("max_iters", c.max_iters);
        c.stop_gap = j.value("stop_gap", c.stop_gap);
        if (j.contains("checks")) {
            const json& ch = j.at("checks");
            if (ch.is_string() && ch.get<std::string>() == "all") c.checks.reset();
            else c.checks = ch.get<std::vector<std::string>>();
        }
        c.keep_policies = j.value("keep_policies", c.keep_policies);
        c.output = j.value("output", c.output);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return config_from_json(j);
}

ExperimentResult run_experiment(const TabularMdp& mdp, const ExperimentConfig& config) {
    config.validate();
    require_valid(mdp);
    const int ns = mdp.n_states();
    const auto rho = config.rho ? StateDistribution::from_weights(*config.rho) : StateDistribution::uniform(ns);
    const auto mu = config.mu ? StateDistribution::from_weights(*config.mu) : StateDistribution::uniform(ns);
    if (rho.size() != ns || mu.size() != ns) throw InvalidArgument("rho and mu must have one weight per state");

    ExperimentResult result{Trace{}, config.tau ? soft_optimal(mdp, *config.tau) : optimal_values(mdp),
                            std::nullopt, {}, std::nullopt};
    auto checks = config.checks ? *config.checks : default_checks(config.method, config.schedule.kind);
    const RecordContext ctx = make_record_context(mdp, result.optimum, rho, mu, std::move(checks));
    Trace& trace = result.trace;
    trace.meta = make_trace_meta(ctx, config.method, config.schedule, config.tau, mdp_fingerprint(mdp));
    trace.optimal_policy = result.optimum.optimal_policy;

    MethodState state = make_state(mdp, uniform_policy(mdp), config.method, config.tau);
    auto blow_up = [&](int k, const std::string& what) {
        result.non_finite_at = k;
        result.non_finite_message = what;
    };
    while (true) {
        if (config.keep_policies) trace.policies.push_back(state.policy);
        const double gap = (result.optimum.v_star.values - state.eval.v.values).cwiseAbs().maxCoeff();
        const bool last = state.iteration >= config.max_iters || gap <= config.stop_gap;
        std::optional<MethodState> next;
        if (!last) {
            try {
                next = step(mdp, state, config.schedule, mu);
                if (!finite_state(*next)) {
                    blow_up(next->iteration, "non-finite value at iteration " + std::to_string(next->iteration));
                    next.reset();
                }
            } catch (const NumericError& e) {
                blow_up(state.iteration + 1, "iteration " + std::to_string(state.iteration + 1) + ": " + e.what());
            }
        }
        const bool stepped = next && !next->converged;
        try {
            append_record(trace, record_iteration(ctx, state, stepped ? &*next : nullptr));
        } catch (const NumericError& e) {
            blow_up(state.iteration, "iteration " + std::to_string(state.iteration) + ": " + e.what());
            break;
        }
        if (!stepped) break;
        state = std::move(*next);
    }
    finalize_trace(trace);
    if (!result.non_finite_at) result.final_policy = state.policy;
    return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    return run_experiment(load_source(config.mdp), config);
}

std::vector<CheckReport> verify_trace(const Trace& trace, const std::vector<std::string>& names, double tolerance) {
    std::vector<CheckReport> out;
    for (const auto& n : names) out.push_back(check_inequality(n, trace, tolerance));
    return out;
}

} // namespace pglab
