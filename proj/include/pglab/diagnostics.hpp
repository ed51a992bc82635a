#pragma once

#include "pglab/algorithms.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pglab {

/// Slacks at or above this value count as passing.
constexpr double kSlackTolerance = -1e-9;

/// KL(p||q) with 0 log 0 = 0; kInf when p puts mass where q has none.
double kl(const Vector& p, const Vector& q);
/// KL between row s of two policies, computed from their log-probabilities.
double kl(const Policy& p, const Policy& q, int s);

enum class CheckScope { iteration, trace };

struct CheckInfo {
    std::string_view name;
    CheckScope scope;
    std::string_view description;
};

/// Every check known to the diagnostics layer, in CSV column order.
const std::vector<CheckInfo>& check_registry();
const CheckInfo* find_check(std::string_view name);
bool check_applies(std::string_view name, Method method, ScheduleKind schedule);
/// All registered checks that apply to the method.
std::vector<std::string> default_checks(Method method, ScheduleKind schedule);

struct IterationRecord {
    int k = 0;
    std::optional<double> eta_k;
    double v_gap_inf = 0.0;
    double v_gap_rho = 0.0;
    std::optional<double> l_k_kp1;
    std::optional<double> b_max;
    std::optional<double> kappa_est;
    std::optional<double> kl_to_opt;
    /// Check name to signed slack; an empty value marks a skipped iteration.
    std::map<std::string, std::optional<double>> slacks;
    /// min_s C_s^t of the NPG global rate; kept in memory only.
    std::optional<double> npg_rate_constant;
};

struct TraceMeta {
    Method method = Method::pi;
    StepSchedule schedule;
    std::optional<double> tau;
    double gamma = 0.0;
    int n_states = 0;
    int n_actions = 0;
    double mu_min = 0.0;
    double rho_min = 0.0;
    /// Optimal advantage gap, kInf when every action is optimal.
    double delta = kInf;
    /// max_s |A_s^*|
    int max_optimal_set = 1;
    /// ||d_rho^* / rho||_inf
    double dstar_over_rho = 1.0;
    std::string fingerprint;
    std::vector<std::string> checks;
};

struct Trace {
    TraceMeta meta;
    std::vector<IterationRecord> records;
    /// Iterates, when the run keeps them (needed by kl_ratio_probe).
    std::vector<Policy> policies;
    std::optional<Policy> optimal_policy;

    /// min over recorded k of (1 - b_max); empty for regularized runs.
    std::optional<double> kappa_estimate() const;
};

/// Fixed inputs shared by every record of a run.
struct RecordContext {
    const TabularMdp* mdp;
    const OptimalitySummary* optimum;
    StateDistribution rho;
    StateDistribution mu;
    /// Visitation of the optimal policy from rho.
    StateDistribution d_star;
    std::vector<std::string> checks;
};

RecordContext make_record_context(const TabularMdp& mdp, const OptimalitySummary& optimum,
                                  const StateDistribution& rho, const StateDistribution& mu,
                                  std::vector<std::string> checks);

TraceMeta make_trace_meta(const RecordContext& ctx, Method method, const StepSchedule& schedule,
                          std::optional<double> tau, std::string fingerprint);

/// Record for iterate `current`; step quantities need `next` and stay empty without it.
IterationRecord record_iteration(const RecordContext& ctx, const MethodState& current, const MethodState* next);

/// Appends a record and updates the running kappa estimate.
void append_record(Trace& trace, IterationRecord record);

/// Fills slack columns of the enabled trace-scope checks.
void finalize_trace(Trace& trace);

/// Per-record slacks of a trace-scope check (empty entries where not applicable).
std::vector<std::optional<double>> trace_check_slacks(std::string_view name, const Trace& trace);

enum class CheckStatus { pass, fail, skipped };

struct CheckReport {
    std::string name;
    CheckStatus status = CheckStatus::skipped;
    std::string skip_reason;
    double min_slack = kInf;
    int argmin_k = -1;
    std::optional<int> first_violation;
    int evaluated = 0;
    std::vector<std::optional<double>> slacks;
};

/// Throws InvalidArgument for an unknown check name.
CheckReport check_inequality(std::string_view name, const Trace& trace, double tolerance = kSlackTolerance);

/// One line: name, min slack, argmin iteration, pass/FAIL, or the skip reason.
std::string format_report(const CheckReport& report);

enum class RateModel { linear, sublinear, quadratic };

std::string_view rate_model_name(RateModel model);
std::optional<RateModel> parse_rate_model(std::string_view name);

enum class GapColumn { inf_norm, rho };

struct RateWindow {
    std::optional<int> lo;
    std::optional<int> hi;
};

struct RateFit {
    int k_lo = 0;
    int k_hi = 0;
    RateModel model = RateModel::linear;
    /// Linear: per-step rate.  Sublinear: constant c in gap ~ c / k.  Quadratic: growth factor of -log(gap/E).
    double value = 0.0;
    /// Max relative residual of the fit over the window.
    double residual = 0.0;
    bool truncated = false;
    std::string note;
};

/**
 * Fits a gap series indexed by iteration k = ks[i].
 *
 * Default windows: last 25% for linear and quadratic, the whole series for
 * sublinear.  Gaps below 1e-14 end the window early.  The quadratic model
 * needs envelope = 2 tau (1 - gamma) / gamma^2.
 */
RateFit estimate_rate(const std::vector<int>& ks, const std::vector<double>& gaps, RateModel model,
                      RateWindow window = {}, std::optional<double> envelope = std::nullopt);

RateFit estimate_rate(const Trace& trace, RateModel model, RateWindow window = {},
                      GapColumn column = GapColumn::inf_norm);

/// Per-iteration max over states of |ratio - 1| for the four KL ratios; KLs below 1e-9 are skipped.
struct KlRatioPoint {
    int k;
    /// KL(k||k+1)/KL(k+1||k), KL(k+1||k)/KL(k||k+1), KL(k||*)/KL(*||k), KL(*||k)/KL(k||*)
    std::optional<std::array<double, 4>> deviations;
};

/// Needs stored policies and the optimal policy.
std::vector<KlRatioPoint> kl_ratio_probe(const Trace& trace);

struct CovarianceReport {
    int trials = 0;
    /// max |Cov(f,g) - E[(f(X)-f(Y))(g(X)-g(Y))]/2|
    double max_identity_residual = 0.0;
    /// min Cov(f,g) over monotone pairs
    double min_monotone_covariance = kInf;
};

/// Cov(f(X), g(X)) for X with P(X = i) = p_i.
double covariance(const Vector& p, const Vector& f, const Vector& g);
/// E[(f(X) - f(Y))(g(X) - g(Y))] / 2 for X, Y independent copies.
double pairwise_covariance(const Vector& p, const Vector& f, const Vector& g);

CovarianceReport covariance_checks(std::uint64_t seed, int trials);

} // namespace pglab
