#pragma once

#include "pglab/mdp.hpp"

#include <optional>
#include <vector>

namespace pglab {

/// State values; tau is set for entropy-regularized tables.
struct ValueTable {
    Vector values;
    std::optional<double> tau;
};

/// Action values r + gamma * P V; tau mirrors the ValueTable it came from.
struct QTable {
    Matrix values;
    std::optional<double> tau;
};

/// Q - V, or Q - tau log pi - V when regularized.
struct AdvantageTable {
    Matrix values;
    std::optional<double> tau;
};

struct OptimalitySummary {
    ValueTable v_star;
    QTable q_star;
    AdvantageTable a_star;
    /// Per state, the actions whose Q* is within kTolGap of the row maximum.
    std::vector<std::vector<int>> optimal_action_sets;
    /// Smallest |A*(s,a)| over non-optimal actions; kInf when every action is optimal.
    double gap_delta;
    Policy optimal_policy;
    /// Final ||T V - V||_inf of the returned values.
    double residual;
    int iterations;

    bool is_optimal(int s, int a) const;
    /// max_s |A_s^*|
    int max_optimal_set_size() const;
};

/// Transition matrix of the chain induced by pi.
Matrix policy_transition(const TabularMdp& mdp, const Policy& pi);
/// Expected one-step reward under pi.
Vector policy_reward(const TabularMdp& mdp, const Policy& pi);
/// Per-state Shannon entropy with 0 log 0 = 0.
Vector policy_entropy(const Policy& pi);

ValueTable policy_eval(const TabularMdp& mdp, const Policy& pi);
ValueTable soft_policy_eval(const TabularMdp& mdp, const Policy& pi, double tau);

QTable q_from_v(const TabularMdp& mdp, const ValueTable& v);
AdvantageTable advantage(const TabularMdp& mdp, const Policy& pi, const ValueTable& v, const QTable& q,
                         std::optional<double> tau = std::nullopt);

ValueTable bellman_apply(const TabularMdp& mdp, const Policy& pi, const Vector& v);
ValueTable bellman_optimal(const TabularMdp& mdp, const Vector& v);
/// T_tau^pi V = sum_a pi (Q^V - tau log pi).
ValueTable soft_bellman_apply(const TabularMdp& mdp, const Policy& pi, const Vector& v, double tau);
/// T_tau V = tau log sum_a exp(Q^V / tau).
ValueTable soft_bellman_optimal(const TabularMdp& mdp, const Vector& v, double tau);
/// softmax(Q^V / tau) row-wise.
Policy soft_greedy(const TabularMdp& mdp, const Vector& v, double tau);

OptimalitySummary optimal_values(const TabularMdp& mdp, double tol = 1e-12);
OptimalitySummary soft_optimal(const TabularMdp& mdp, double tau, double tol = 1e-12);

/// d_rho^pi = (1 - gamma) rho^T (I - gamma P_pi)^{-1}.
StateDistribution visitation(const TabularMdp& mdp, const Policy& pi, const StateDistribution& rho);

/// b_s = sum over non-optimal actions of pi(a|s).
Vector nonoptimal_mass(const Policy& pi, const OptimalitySummary& summary);

/// Delta * E_rho[b] <= V*(rho) - V(rho) <= E_{d^pi}[b] / (1 - gamma)^2
struct SuboptimalitySandwich {
    double lower;
    double gap;
    double upper;
};

SuboptimalitySandwich suboptimality_sandwich(const TabularMdp& mdp, const Policy& pi,
                                             const OptimalitySummary& summary, const StateDistribution& rho);

} // namespace pglab
