#pragma once

#include "pglab/eval.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace pglab {

enum class Method { pi, ppg, softmax_pg, softmax_npg, entropy_pg, entropy_npg, soft_pi };

std::string_view method_name(Method method);
std::optional<Method> parse_method(std::string_view name);
bool is_regularized(Method method);
/// Methods whose iterates must stay strictly positive.
bool is_softmax_family(Method method);
/// Methods that take a step size.
bool uses_step(Method method);

enum class ScheduleKind { constant, ppg_increasing, pg_adaptive };

std::string_view schedule_name(ScheduleKind kind);
std::optional<ScheduleKind> parse_schedule(std::string_view name);

struct StepSchedule {
    ScheduleKind kind = ScheduleKind::constant;
    double eta = 1.0;
    double c3 = 1.0;
    double c_adapt = 1.0;

    static StepSchedule constant(double eta) { return {ScheduleKind::constant, eta, 1.0, 1.0}; }
    /// Throws InvalidArgument if a parameter used by kind is not positive.
    void validate() const;
};

/// Problem quantities a schedule may depend on.
struct ScheduleInfo {
    int n_actions = 2;
    double gamma = 0.0;
    double mu_min = 1.0;
    /// min over S^k of max_a |Ahat|; empty when S^k is empty.
    std::optional<double> adaptive_denominator;
};

/// eta_k, or nullopt when pg_adaptive finds S^k empty (the policy is optimal).
std::optional<double> schedule_eta(const StepSchedule& schedule, int k, const ScheduleInfo& info);

/// min over {s : max_a Ahat(s,a) > 0} of max_a |Ahat(s,a)|, Ahat = pi * A.
std::optional<double> adaptive_denominator(const Policy& pi, const AdvantageTable& adv);

/// Root of exp(-2x(1 + tau log|A|)/(1-gamma)^2) - tau x / (2(1-gamma)).
struct BetaThreshold {
    double value;
    /// True when the root exceeds the 1e9 search cap and value is the cap.
    bool capped;
};

BetaThreshold beta_threshold(double tau, double gamma, int n_actions);

/// V, Q and A of a policy; regularized when tau is set.
struct Evaluation {
    ValueTable v;
    QTable q;
    AdvantageTable a;
};

Evaluation evaluate(const TabularMdp& mdp, const Policy& pi, std::optional<double> tau);

/**
 * Iterate of a policy optimization method.
 *
 * eta and state_steps describe the step that produced this iterate
 * (eta_k and eta_s^k = eta_k d_mu^k(s) / (1 - gamma)); both are empty for
 * the initial state and for methods without a step size.
 */
struct MethodState {
    Policy policy;
    int iteration = 0;
    Evaluation eval;
    Method method = Method::pi;
    std::optional<double> tau;
    std::optional<double> eta;
    std::optional<Vector> state_steps;
    /// Set when the schedule reported convergence instead of stepping.
    bool converged = false;

    double operator()(int s, int a) const { return policy(s, a); }
};

/// Validates method/tau/policy compatibility and evaluates the policy.
MethodState make_state(const TabularMdp& mdp, Policy policy, Method method, std::optional<double> tau = std::nullopt);

MethodState pi_step(const TabularMdp& mdp, const MethodState& state);
MethodState ppg_step(const TabularMdp& mdp, const MethodState& state, const StepSchedule& schedule,
                     const StateDistribution& mu);
MethodState softmax_pg_step(const TabularMdp& mdp, const MethodState& state, const StepSchedule& schedule,
                            const StateDistribution& mu);
MethodState softmax_npg_step(const TabularMdp& mdp, const MethodState& state, double eta);
MethodState entropy_softmax_pg_step(const TabularMdp& mdp, const MethodState& state, double eta,
                                    const StateDistribution& mu);
MethodState entropy_softmax_npg_step(const TabularMdp& mdp, const MethodState& state, double eta);
MethodState soft_pi_step(const TabularMdp& mdp, const MethodState& state);

/// Dispatches on state.method, drawing eta_k from the schedule.
MethodState step(const TabularMdp& mdp, const MethodState& state, const StepSchedule& schedule,
                 const StateDistribution& mu);

} // namespace pglab
