#include "pglab/algorithms.hpp"

#include <array>
#include <cmath>
#include <utility>

namespace pglab {

namespace {

struct MethodEntry {
    Method method;
    std::string_view name;
};

constexpr std::array<MethodEntry, 7> kMethods{{
    {Method::pi, "pi"},
    {Method::ppg, "ppg"},
    {Method::softmax_pg, "softmax_pg"},
    {Method::softmax_npg, "npg"},
    {Method::entropy_pg, "entropy_pg"},
    {Method::entropy_npg, "entropy_npg"},
    {Method::soft_pi, "soft_pi"},
}};

struct ScheduleEntry {
    ScheduleKind kind;
    std::string_view name;
};

constexpr std::array<ScheduleEntry, 3> kSchedules{{
    {ScheduleKind::constant, "constant"},
    {ScheduleKind::ppg_increasing, "ppg_increasing"},
    {ScheduleKind::pg_adaptive, "pg_adaptive"},
}};

/// eta_s = eta d_mu(s) / (1 - gamma)
Vector state_steps(const TabularMdp& mdp, const Policy& pi, double eta, const StateDistribution& mu) {
    return eta * visitation(mdp, pi, mu).weights() / (1.0 - mdp.gamma());
}

ScheduleInfo schedule_info(const TabularMdp& mdp, const MethodState& state, const StateDistribution& mu) {
    ScheduleInfo info;
    info.n_actions = mdp.n_actions();
    info.gamma = mdp.gamma();
    info.mu_min = mu.min();
    info.adaptive_denominator = adaptive_denominator(state.policy, state.eval.a);
    return info;
}

MethodState finish(const TabularMdp& mdp, const MethodState& prev, Policy next, std::optional<double> eta,
                   std::optional<Vector> steps) {
    MethodState out{std::move(next), prev.iteration + 1, Evaluation{}, prev.method, prev.tau, eta,
                    std::move(steps), false};
    out.eval = evaluate(mdp, out.policy, out.tau);
    return out;
}

void require_method(const MethodState& state, Method expected) {
    if (state.method != expected) {
        throw InvalidArgument("state belongs to method " + std::string(method_name(state.method)) + ", not " +
                              std::string(method_name(expected)));
    }
}

void require_eta(double eta) {
    if (!std::isfinite(eta) || eta <= 0.0) throw InvalidArgument("step size must be positive and finite");
}

} // namespace

std::string_view method_name(Method method) {
    for (const auto& e : kMethods)
        if (e.method == method) return e.name;
    return "unknown";
}

std::optional<Method> parse_method(std::string_view name) {
    for (const auto& e : kMethods)
        if (e.name == name) return e.method;
    return std::nullopt;
}

bool is_regularized(Method method) {
    return method == Method::entropy_pg || method == Method::entropy_npg || method == Method::soft_pi;
}

bool is_softmax_family(Method method) {
    return method == Method::softmax_pg || method == Method::softmax_npg || is_regularized(method);
}

bool uses_step(Method method) {
    return method != Method::pi && method != Method::soft_pi;
}

std::string_view schedule_name(ScheduleKind kind) {
    for (const auto& e : kSchedules)
        if (e.kind == kind) return e.name;
    return "unknown";
}

std::optional<ScheduleKind> parse_schedule(std::string_view name) {
    for (const auto& e : kSchedules)
        if (e.name == name) return e.kind;
    return std::nullopt;
}

void StepSchedule::validate() const {
    auto positive = [](double x) { return std::isfinite(x) && x > 0.0; };
    switch (kind) {
    case ScheduleKind::constant:
        if (!positive(eta)) throw InvalidArgument("constant schedule needs eta > 0");
        break;
    case ScheduleKind::ppg_increasing:
        if (!positive(c3)) throw InvalidArgument("ppg_increasing schedule needs c3 > 0");
        break;
    case ScheduleKind::pg_adaptive:
        if (!positive(c_adapt)) throw InvalidArgument("pg_adaptive schedule needs c_adapt > 0");
        break;
    }
}

std::optional<double> schedule_eta(const StepSchedule& schedule, int k, const ScheduleInfo& info) {
    schedule.validate();
    switch (schedule.kind) {
    case ScheduleKind::constant:
        return schedule.eta;
    case ScheduleKind::ppg_increasing: {
        if (!(info.mu_min > 0.0)) throw InvalidArgument("ppg_increasing needs min_s mu(s) > 0");
        const double ratio = (1.0 - info.gamma) / schedule.c3;
        return (2.0 + 5.0 * info.n_actions) / info.mu_min * ratio * std::pow(1.0 + ratio, k + 1);
    }
    case ScheduleKind::pg_adaptive:
        if (!info.adaptive_denominator) return std::nullopt;
        return schedule.c_adapt / *info.adaptive_denominator;
    }
    return std::nullopt;
}

std::optional<double> adaptive_denominator(const Policy& pi, const AdvantageTable& adv) {
    std::optional<double> best;
    for (int s = 0; s < pi.n_states(); ++s) {
        double max_hat = kNegInf;
        double max_abs = 0.0;
        for (int a = 0; a < pi.n_actions(); ++a) {
            const double hat = pi(s, a) * adv.values(s, a);
            max_hat = std::max(max_hat, hat);
            max_abs = std::max(max_abs, std::abs(hat));
        }
        if (max_hat > 0.0 && (!best || max_abs < *best)) best = max_abs;
    }
    return best;
}

BetaThreshold beta_threshold(double tau, double gamma, int n_actions) {
    require_tau(tau);
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in [0,1)");
    if (n_actions < 2) throw InvalidArgument("beta_threshold needs at least two actions");
    constexpr double kCap = 1e9;
    const double one_minus = 1.0 - gamma;
    const double decay = 2.0 * (1.0 + tau * std::log(static_cast<double>(n_actions))) / (one_minus * one_minus);
    const double slope = tau / (2.0 * one_minus);
    auto f = [&](double x) { return std::exp(-decay * x) - slope * x; };

    double lo = 0.0;
    double hi = 1.0;
    while (f(hi) > 0.0) {
        lo = hi;
        hi *= 2.0;
        if (hi >= kCap) {
            if (f(kCap) > 0.0) return {kCap, true};
            hi = kCap;
            break;
        }
    }
    for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (f(mid) > 0.0) lo = mid;
        else hi = mid;
    }
    const double mid = 0.5 * (lo + hi);
    return {mid, false};
}

Evaluation evaluate(const TabularMdp& mdp, const Policy& pi, std::optional<double> tau) {
    ValueTable v = tau ? soft_policy_eval(mdp, pi, *tau) : policy_eval(mdp, pi);
    QTable q = q_from_v(mdp, v);
    AdvantageTable a = advantage(mdp, pi, v, q, tau);
    return {std::move(v), std::move(q), std::move(a)};
}

MethodState make_state(const TabularMdp& mdp, Policy policy, Method method, std::optional<double> tau) {
    require_valid(mdp);
    if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions()) {
        throw InvalidArgument("policy shape does not match the mdp");
    }
    if (is_regularized(method)) {
        if (!tau) throw InvalidArgument(std::string(method_name(method)) + " needs an entropy weight tau");
        require_tau(*tau);
    } else if (tau) {
        throw InvalidArgument(std::string(method_name(method)) + " does not take an entropy weight");
    }
    if (is_softmax_family(method)) policy.require_strictly_positive(std::string(method_name(method)).c_str());
    MethodState state{std::move(policy), 0, Evaluation{}, method, tau, std::nullopt, std::nullopt, false};
    state.eval = evaluate(mdp, state.policy, tau);
    return state;
}

MethodState pi_step(const TabularMdp& mdp, const MethodState& state) {
    require_method(state, Method::pi);
    return finish(mdp, state, greedy_policy(state.eval.q.values), std::nullopt, std::nullopt);
}

MethodState ppg_step(const TabularMdp& mdp, const MethodState& state, const StepSchedule& schedule,
                     const StateDistribution& mu) {
    require_method(state, Method::ppg);
    const auto eta = schedule_eta(schedule, state.iteration, schedule_info(mdp, state, mu));
    if (!eta) {
        MethodState out = state;
        out.converged = true;
        return out;
    }
    Vector steps = state_steps(mdp, state.policy, *eta, mu);
    Matrix next(mdp.n_states(), mdp.n_actions());
    for (int s = 0; s < mdp.n_states(); ++s) {
        const Vector y = state.policy.probs().row(s).transpose() + steps(s) * state.eval.q.values.row(s).transpose();
        if (!y.allFinite()) throw NumericError("non-finite projection input in row " + std::to_string(s));
        next.row(s) = project_simplex(y).transpose();
    }
    return finish(mdp, state, Policy::from_probs(next), eta, std::move(steps));
}

MethodState softmax_pg_step(const TabularMdp& mdp, const MethodState& state, const StepSchedule& schedule,
                            const StateDistribution& mu) {
    require_method(state, Method::softmax_pg);
    const auto eta = schedule_eta(schedule, state.iteration, schedule_info(mdp, state, mu));
    if (!eta) {
        MethodState out = state;
        out.converged = true;
        return out;
    }
    Vector steps = state_steps(mdp, state.policy, *eta, mu);
    Matrix logits = state.policy.log_probs();
    const Matrix hat = state.policy.probs().cwiseProduct(state.eval.a.values);
    for (int s = 0; s < mdp.n_states(); ++s) logits.row(s) += steps(s) * hat.row(s);
    return finish(mdp, state, Policy::from_logits(logits), eta, std::move(steps));
}

MethodState softmax_npg_step(const TabularMdp& mdp, const MethodState& state, double eta) {
    require_method(state, Method::softmax_npg);
    require_eta(eta);
    const Matrix logits = state.policy.log_probs() + eta * state.eval.a.values;
    return finish(mdp, state, Policy::from_logits(logits), eta, std::nullopt);
}

MethodState entropy_softmax_pg_step(const TabularMdp& mdp, const MethodState& state, double eta,
                                    const StateDistribution& mu) {
    require_method(state, Method::entropy_pg);
    require_eta(eta);
    Vector steps = state_steps(mdp, state.policy, eta, mu);
    Matrix logits = state.policy.log_probs();
    const Matrix hat = state.policy.probs().cwiseProduct(state.eval.a.values);
    for (int s = 0; s < mdp.n_states(); ++s) logits.row(s) += steps(s) * hat.row(s);
    return finish(mdp, state, Policy::from_logits(logits), eta, std::move(steps));
}

MethodState entropy_softmax_npg_step(const TabularMdp& mdp, const MethodState& state, double eta) {
    require_method(state, Method::entropy_npg);
    require_eta(eta);
    const double tau = *state.tau;
    const Matrix logits = state.policy.log_probs() + (eta / (eta * tau + 1.0)) * state.eval.a.values;
    return finish(mdp, state, Policy::from_logits(logits), eta, std::nullopt);
}

MethodState soft_pi_step(const TabularMdp& mdp, const MethodState& state) {
    require_method(state, Method::soft_pi);
    const Matrix logits = state.eval.q.values / *state.tau;
    return finish(mdp, state, Policy::from_logits(logits), std::nullopt, std::nullopt);
}

MethodState step(const TabularMdp& mdp, const MethodState& state, const StepSchedule& schedule,
                 const StateDistribution& mu) {
    switch (state.method) {
    case Method::pi:
        return pi_step(mdp, state);
    case Method::ppg:
        return ppg_step(mdp, state, schedule, mu);
    case Method::softmax_pg:
        return softmax_pg_step(mdp, state, schedule, mu);
    case Method::soft_pi:
        return soft_pi_step(mdp, state);
    default:
        break;
    }
    const auto eta = schedule_eta(schedule, state.iteration, schedule_info(mdp, state, mu));
    if (!eta) {
        MethodState out = state;
        out.converged = true;
        return out;
    }
    switch (state.method) {
    case Method::softmax_npg:
        return softmax_npg_step(mdp, state, *eta);
    case Method::entropy_pg:
        return entropy_softmax_pg_step(mdp, state, *eta, mu);
    default:
        return entropy_softmax_npg_step(mdp, state, *eta);
    }
}

} // namespace pglab
