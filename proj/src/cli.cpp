#include "pglab/cli.hpp"
#include "pglab/experiment.hpp"
#include "pglab/io.hpp"
#include "pglab/svg_plot.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace pglab {

namespace {

/// Flags shared by run, verify and sweep; each is applied only when given.
struct RunFlags {
    std::string config;
    std::string mdp_file;
    bool bandit = false;
    bool random = false;
    std::uint64_t seed = 7;
    int states = 10;
    int actions = 5;
    double gamma = 0.9;
    std::string method;
    std::string schedule;
    double eta = 1.0;
    double c3 = 1.0;
    double c_adapt = 1.0;
    double tau = 0.0;
    int max_iters = 1000;
    double stop_gap = 0.0;
    std::vector<std::string> checks;
    bool keep_policies = false;
    std::string output;

    CLI::Option* seed_opt = nullptr;
    CLI::Option* states_opt = nullptr;
    CLI::Option* actions_opt = nullptr;
    CLI::Option* gamma_opt = nullptr;
    CLI::Option* eta_opt = nullptr;
    CLI::Option* c3_opt = nullptr;
    CLI::Option* c_adapt_opt = nullptr;
    CLI::Option* tau_opt = nullptr;
    CLI::Option* max_iters_opt = nullptr;
    CLI::Option* stop_gap_opt = nullptr;
    CLI::Option* check_opt = nullptr;

    void add_to(CLI::App& app, bool with_output) {
        app.add_option("--config", config, "JSON experiment config; flags override its fields");
        app.add_option("--mdp", mdp_file, "MDP file");
        app.add_flag("--bandit", bandit, "two-armed bandit");
        app.add_flag("--random", random, "random MDP from --seed/--states/--actions/--gamma");
        seed_opt = app.add_option("--seed", seed, "random MDP seed");
        states_opt = app.add_option("--states", states, "random MDP state count");
        actions_opt = app.add_option("--actions", actions, "random MDP action count");
        gamma_opt = app.add_option("--gamma", gamma, "discount factor");
        app.add_option("--method", method, "pi, ppg, softmax_pg, npg, entropy_pg, entropy_npg or soft_pi");
        app.add_option("--schedule", schedule, "constant, ppg_increasing or pg_adaptive");
        eta_opt = app.add_option("--eta", eta, "step size");
        c3_opt = app.add_option("--c3", c3, "ppg_increasing constant");
        c_adapt_opt = app.add_option("--c-adapt", c_adapt, "pg_adaptive constant");
        tau_opt = app.add_option("--tau", tau, "entropy weight");
        max_iters_opt = app.add_option("--max-iters", max_iters, "iteration cap");
        stop_gap_opt = app.add_option("--stop-gap", stop_gap, "stop once ||V* - V^k||_inf <= this");
        check_opt = app.add_option("--check", checks, "check to record (repeatable); default all applicable");
        app.add_flag("--keep-policies", keep_policies, "keep iterates in memory");
        if (with_output) app.add_option("-o,--output", output, "output path");
    }

    bool any_run_flag() const {
        return !config.empty() || !mdp_file.empty() || bandit || random || !method.empty();
    }

    ExperimentConfig build() const {
        ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_config(config);
        if (bandit + random + !mdp_file.empty() > 1) throw InvalidArgument("choose one of --mdp, --bandit, --random");
        if (bandit) c.mdp.kind = MdpSource::Kind::bandit;
        if (!mdp_file.empty()) {
            c.mdp.kind = MdpSource::Kind::file;
            c.mdp.path = mdp_file;
        }
        if (random) c.mdp.kind = MdpSource::Kind::random;
        if (*seed_opt) c.mdp.seed = seed;
        if (*states_opt) c.mdp.n_states = states;
        if (*actions_opt) c.mdp.n_actions = actions;
        if (*gamma_opt) c.mdp.gamma = gamma;
        if (!method.empty()) {
            const auto m = parse_method(method);
            if (!m) throw InvalidArgument("unknown method: " + method);
            c.method = *m;
        }
        if (!schedule.empty()) {
            const auto k = parse_schedule(schedule);
            if (!k) throw InvalidArgument("unknown schedule: " + schedule);
            c.schedule.kind = *k;
        }
        if (*eta_opt) c.schedule.eta = eta;
        if (*c3_opt) c.schedule.c3 = c3;
        if (*c_adapt_opt) c.schedule.c_adapt = c_adapt;
        if (*tau_opt) c.tau = tau;
        if (*max_iters_opt) c.max_iters = max_iters;
        if (*stop_gap_opt) c.stop_gap = stop_gap;
        if (*check_opt) c.checks = checks;
        if (keep_policies) c.keep_policies = true;
        if (!output.empty()) c.output = output;
        return c;
    }
};

int print_reports(const std::vector<CheckReport>& reports, std::ostream& out) {
    int code = kExitOk;
    for (const auto& r : reports) {
        out << format_report(r) << '\n';
        if (r.status == CheckStatus::fail) code = kExitViolation;
    }
    return code;
}

std::vector<CheckReport> report_all(const Trace& trace) {
    return verify_trace(trace, trace.meta.checks);
}

int run_exit_code(const ExperimentResult& result, const std::vector<CheckReport>& reports) {
    if (result.non_finite_at) return kExitNumeric;
    for (const auto& r : reports)
        if (r.status == CheckStatus::fail) return kExitViolation;
    return kExitOk;
}

std::string summary_line(const ExperimentConfig& c, const ExperimentResult& r) {
    std::ostringstream os;
    const auto& last = r.trace.records.back();
    os << method_name(c.method) << " k=" << last.k << " v_gap_inf=" << format_double(last.v_gap_inf)
       << " v_gap_rho=" << format_double(last.v_gap_rho);
    if (r.non_finite_at) os << " non-finite: " << r.non_finite_message;
    return os.str();
}

int cmd_gen(bool random, bool bandit, std::uint64_t seed, int states, int actions, double gamma,
            const std::string& output, std::ostream& out) {
    if (random == bandit) throw InvalidArgument("gen needs exactly one of --random or --bandit");
    const TabularMdp mdp = bandit ? two_arm_bandit() : random_mdp(seed, states, actions, gamma);
    save_mdp(output, mdp);
    out << "wrote " << output << " fingerprint " << mdp_fingerprint(mdp) << '\n';
    return kExitOk;
}

int cmd_run(const RunFlags& flags, std::ostream& out, std::ostream& err) {
    const ExperimentConfig config = flags.build();
    const ExperimentResult result = run_experiment(config);
    const auto reports = report_all(result.trace);
    if (config.output.empty()) {
        write_trace_csv(out, result.trace);
        print_reports(reports, err);
        err << summary_line(config, result) << '\n';
    } else {
        save_trace_csv(config.output, result.trace);
        print_reports(reports, out);
        out << summary_line(config, result) << '\n';
    }
    return run_exit_code(result, reports);
}

int cmd_verify(const RunFlags& flags, const std::string& trace_path, std::ostream& out) {
    Trace trace;
    std::optional<ExperimentResult> result;
    if (!trace_path.empty()) {
        if (flags.any_run_flag()) throw InvalidArgument("verify takes a trace file or run options, not both");
        trace = load_trace_csv(trace_path);
    } else {
        if (!flags.any_run_flag()) throw InvalidArgument("verify needs a trace file or run options");
        ExperimentConfig config = flags.build();
        const auto requested = config.checks;
        config.checks.reset();
        result = run_experiment(config);
        trace = result->trace;
        if (requested) trace.meta.checks = *requested;
    }
    std::vector<std::string> names = flags.checks.empty() ? trace.meta.checks : flags.checks;
    for (const auto& n : names)
        if (!find_check(n)) throw InvalidArgument("unknown check: " + n);
    const int code = print_reports(verify_trace(trace, names), out);
    if (result && result->non_finite_at) {
        out << "non-finite: " << result->non_finite_message << '\n';
        return kExitNumeric;
    }
    return code;
}

int cmd_rate(const std::string& path, const std::string& model_name, std::optional<int> lo, std::optional<int> hi,
             const std::string& column, std::ostream& out) {
    const auto model = parse_rate_model(model_name);
    if (!model) throw InvalidArgument("unknown rate model: " + model_name);
    if (column != "inf" && column != "rho") throw InvalidArgument("column must be inf or rho");
    const Trace trace = load_trace_csv(path);
    if (trace.records.empty()) throw InvalidArgument(path + ": empty trace");
    const RateFit fit =
        estimate_rate(trace, *model, RateWindow{lo, hi}, column == "inf" ? GapColumn::inf_norm : GapColumn::rho);
    out << rate_model_name(fit.model) << ' ' << (fit.model == RateModel::sublinear ? "constant" : "rate") << '='
        << format_double(fit.value) << " residual=" << format_double(fit.residual) << " window=[" << fit.k_lo << ','
        << fit.k_hi << "]\n";
    if (!fit.note.empty()) out << "note: " << fit.note << '\n';
    return kExitOk;
}

int cmd_plot(const std::vector<std::string>& paths, const std::string& output, const std::string& column,
             bool envelopes, const std::string& title, std::ostream& out) {
    if (column != "inf" && column != "rho") throw InvalidArgument("column must be inf or rho");
    std::vector<PlotSeries> series;
    std::optional<Trace> first;
    for (const auto& path : paths) {
        Trace trace = load_trace_csv(path);
        if (trace.records.empty()) throw InvalidArgument(path + ": empty trace");
        PlotSeries s;
        s.label = std::filesystem::path(path).stem().string() + " (" + std::string(method_name(trace.meta.method)) + ")";
        for (const auto& r : trace.records) {
            s.x.push_back(r.k);
            s.y.push_back(column == "inf" ? r.v_gap_inf : r.v_gap_rho);
        }
        series.push_back(std::move(s));
        if (!first) first = std::move(trace);
    }
    if (envelopes) {
        const TraceMeta& m = first->meta;
        const double gap0 = series.front().y.front();
        auto envelope = [&](std::string label, double rate) {
            PlotSeries e{std::move(label), {}, {}, true};
            for (double k : series.front().x) {
                e.x.push_back(k);
                e.y.push_back(gap0 * std::pow(rate, k));
            }
            series.push_back(std::move(e));
        };
        envelope("gamma^k", m.gamma);
        envelope("gamma^(2k)", m.gamma * m.gamma);
        if (m.method == Method::entropy_npg && m.tau) {
            const double r = 1.0 / (m.schedule.eta * *m.tau + 1.0);
            envelope("(1/(eta tau+1))^(2k)", r * r);
        }
    }
    PlotOptions options;
    options.title = title;
    options.y_label = column == "inf" ? "||V* - V^k||_inf" : "V*(rho) - V^k(rho)";
    const std::string svg = render_svg(series, options);
    std::ofstream file(output);
    if (!file) throw IoError("cannot open " + output + " for writing");
    file << svg;
    out << "wrote " << output << " with " << series.size() << " curves\n";
    return kExitOk;
}

std::string eta_tag(double eta) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", eta);
    return buf;
}

int cmd_sweep(const RunFlags& flags, const std::vector<double>& etas, const std::string& prefix, std::ostream& out) {
    const ExperimentConfig base = flags.build();
    if (etas.empty()) throw InvalidArgument("sweep needs --etas");
    std::vector<ExperimentConfig> configs;
    for (double eta : etas) {
        ExperimentConfig c = base;
        c.schedule.eta = eta;
        c.output = prefix + "_eta" + eta_tag(eta) + ".csv";
        c.validate();
        configs.push_back(std::move(c));
    }
    const TabularMdp mdp = load_source(base.mdp);
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("PGLAB_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) workers = std::min<std::size_t>(workers, static_cast<std::size_t>(cap));
    }
    workers = std::min(workers, configs.size());

    std::vector<std::string> lines(configs.size());
    std::vector<int> codes(configs.size(), kExitOk);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            try {
                const ExperimentResult result = run_experiment(mdp, configs[i]);
                save_trace_csv(configs[i].output, result.trace);
                const auto reports = report_all(result.trace);
                codes[i] = run_exit_code(result, reports);
                lines[i] = "eta=" + eta_tag(configs[i].schedule.eta) + " -> " + configs[i].output + ": " +
                           summary_line(configs[i], result);
            } catch (const std::exception& e) {
                codes[i] = kExitUsage;
                lines[i] = "eta=" + eta_tag(configs[i].schedule.eta) + " failed: " + e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& l : lines) out << l << '\n';
    return *std::max_element(codes.begin(), codes.end());
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"pglab: exact tabular policy optimization experiments", "pglab"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen", "write an MDP file");
    bool gen_random = false, gen_bandit = false;
    std::uint64_t gen_seed = 7;
    int gen_states = 10, gen_actions = 5;
    double gen_gamma = 0.9;
    std::string gen_output;
    gen->add_flag("--random", gen_random, "random MDP");
    gen->add_flag("--bandit", gen_bandit, "two-armed bandit");
    gen->add_option("--seed", gen_seed, "seed");
    gen->add_option("--states", gen_states, "state count");
    gen->add_option("--actions", gen_actions, "action count");
    gen->add_option("--gamma", gen_gamma, "discount factor");
    gen->add_option("-o,--output", gen_output, "output path")->required();

    auto* run = app.add_subcommand("run", "run a method and write its trace CSV");
    RunFlags run_flags;
    run_flags.add_to(*run, true);

    auto* verify = app.add_subcommand("verify", "check inequalities on a trace or a fresh run");
    RunFlags verify_flags;
    verify_flags.add_to(*verify, false);
    std::string verify_trace_path;
    verify->add_option("trace", verify_trace_path, "trace CSV");

    auto* rate = app.add_subcommand("rate", "fit a convergence rate to a trace");
    std::string rate_path, rate_model = "linear", rate_column = "inf";
    std::optional<int> rate_lo, rate_hi;
    rate->add_option("trace", rate_path, "trace CSV")->required();
    rate->add_option("--model", rate_model, "linear, sublinear or quadratic");
    rate->add_option("--lo", rate_lo, "first iteration of the window");
    rate->add_option("--hi", rate_hi, "last iteration of the window");
    rate->add_option("--column", rate_column, "gap column: inf or rho");

    auto* plot = app.add_subcommand("plot", "render gap curves as SVG");
    std::vector<std::string> plot_paths;
    std::string plot_output, plot_column = "inf", plot_title;
    bool plot_envelopes = false;
    plot->add_option("traces", plot_paths, "trace CSVs")->required();
    plot->add_option("-o,--output", plot_output, "SVG path")->required();
    plot->add_option("--column", plot_column, "gap column: inf or rho");
    plot->add_option("--title", plot_title, "plot title");
    plot->add_flag("--envelopes", plot_envelopes, "overlay gamma^k, gamma^(2k) and the entropy NPG rate");

    auto* sweep = app.add_subcommand("sweep", "run several step sizes in parallel");
    RunFlags sweep_flags;
    sweep_flags.add_to(*sweep, false);
    std::vector<double> sweep_etas;
    std::string sweep_prefix = "sweep";
    sweep->add_option("--etas", sweep_etas, "step sizes")->required();
    sweep->add_option("--prefix", sweep_prefix, "output prefix; files are <prefix>_eta<eta>.csv");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) return cmd_gen(gen_random, gen_bandit, gen_seed, gen_states, gen_actions, gen_gamma, gen_output, out);
        if (*run) return cmd_run(run_flags, out, err);
        if (*verify) return cmd_verify(verify_flags, verify_trace_path, out);
        if (*rate) return cmd_rate(rate_path, rate_model, rate_lo, rate_hi, rate_column, out);
        if (*plot) return cmd_plot(plot_paths, plot_output, plot_column, plot_envelopes, plot_title, out);
        if (*sweep) return cmd_sweep(sweep_flags, sweep_etas, sweep_prefix, out);
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    }
    return kExitUsage;
}

} // namespace pglab
