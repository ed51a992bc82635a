#pragma once

#include "pglab/diagnostics.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pglab {

struct MdpSource {
    enum class Kind { bandit, random, file };
    Kind kind = Kind::bandit;
    std::string path;
    std::uint64_t seed = 7;
    int n_states = 10;
    int n_actions = 5;
    double gamma = 0.9;
};

TabularMdp load_source(const MdpSource& source);

struct ExperimentConfig {
    MdpSource mdp;
    Method method = Method::softmax_npg;
    StepSchedule schedule;
    std::optional<double> tau;
    /// Uniform when empty.
    std::optional<Vector> mu;
    std::optional<Vector> rho;
    int max_iters = 1000;
    double stop_gap = 0.0;
    /// All applicable checks when empty.
    std::optional<std::vector<std::string>> checks;
    bool keep_policies = false;
    std::string output;

    /// Throws InvalidArgument on an incompatible or out-of-range field.
    void validate() const;
};

/// Reads fields present in the JSON object over `base`.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path);

struct ExperimentResult {
    Trace trace;
    OptimalitySummary optimum;
    /// Iteration at which a non-finite value appeared.
    std::optional<int> non_finite_at;
    std::string non_finite_message;
    /// Final iterate, when no blow-up occurred.
    std::optional<Policy> final_policy;
};

/**
 * Runs the configured method from the uniform policy until max_iters steps,
 * stop_gap, or schedule convergence.  A non-finite value ends the run early
 * and is reported in the result instead of thrown.
 */
ExperimentResult run_experiment(const TabularMdp& mdp, const ExperimentConfig& config);
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Reports for every check of the trace, in trace order.
std::vector<CheckReport> verify_trace(const Trace& trace, const std::vector<std::string>& names,
                                      double tolerance = kSlackTolerance);

} // namespace pglab
