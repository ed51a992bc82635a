#include "pglab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pglab {

namespace {

void require_shape(const TabularMdp& mdp, const Policy& pi) {
    if (pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions()) {
        throw InvalidArgument("policy shape does not match the mdp");
    }
}

void require_shape(const TabularMdp& mdp, const Vector& v) {
    if (v.size() != mdp.n_states()) throw InvalidArgument("value vector length does not match the mdp");
    if (!v.allFinite()) throw InvalidArgument("value vector has non-finite entries");
}

/// Q^V(s,a) = r(s,a) + gamma * sum_s' P(s'|s,a) V(s')
Matrix q_values(const TabularMdp& mdp, const Vector& v) {
    const Vector pv = mdp.transition() * v;
    Matrix q = mdp.reward();
    for (int s = 0; s < mdp.n_states(); ++s)
        for (int a = 0; a < mdp.n_actions(); ++a) q(s, a) += mdp.gamma() * pv(mdp.row(s, a));
    return q;
}

/// Expected -log pi under pi, with the zero-entry convention.
Vector neg_log_expectation(const Policy& pi) {
    Vector h = Vector::Zero(pi.n_states());
    for (int s = 0; s < pi.n_states(); ++s)
        for (int a = 0; a < pi.n_actions(); ++a)
            if (pi(s, a) > 0.0) h(s) -= pi(s, a) * pi.log_probs()(s, a);
    return h;
}

Vector solve_policy_system(const TabularMdp& mdp, const Policy& pi, const Vector& rhs) {
    const int n = mdp.n_states();
    const Matrix system = Matrix::Identity(n, n) - mdp.gamma() * policy_transition(mdp, pi);
    Eigen::PartialPivLU<Matrix> lu(system);
    Vector v = lu.solve(rhs);
    if (!v.allFinite()) throw NumericError("policy evaluation produced non-finite values");
    return v;
}

void check_residual(const Vector& lhs, const Vector& v, const char* what) {
    const double residual = (lhs - v).cwiseAbs().maxCoeff();
    if (!(residual <= 1e-10)) {
        throw NumericError(std::string(what) + ": Bellman residual " + std::to_string(residual) + " exceeds 1e-10");
    }
}

double sup_norm(const Vector& v) {
    return v.cwiseAbs().maxCoeff();
}

} // namespace

bool OptimalitySummary::is_optimal(int s, int a) const {
    const auto& set = optimal_action_sets[static_cast<std::size_t>(s)];
    return std::find(set.begin(), set.end(), a) != set.end();
}

int OptimalitySummary::max_optimal_set_size() const {
    std::size_t m = 0;
    for (const auto& set : optimal_action_sets) m = std::max(m, set.size());
    return static_cast<int>(m);
}

Matrix policy_transition(const TabularMdp& mdp, const Policy& pi) {
    require_shape(mdp, pi);
    Matrix p = Matrix::Zero(mdp.n_states(), mdp.n_states());
    for (int s = 0; s < mdp.n_states(); ++s)
        for (int a = 0; a < mdp.n_actions(); ++a)
            if (pi(s, a) != 0.0) p.row(s) += pi(s, a) * mdp.transition().row(mdp.row(s, a));
    return p;
}

Vector policy_reward(const TabularMdp& mdp, const Policy& pi) {
    require_shape(mdp, pi);
    return mdp.reward().cwiseProduct(pi.probs()).rowwise().sum();
}

Vector policy_entropy(const Policy& pi) {
    return neg_log_expectation(pi);
}

ValueTable policy_eval(const TabularMdp& mdp, const Policy& pi) {
    const Vector v = solve_policy_system(mdp, pi, policy_reward(mdp, pi));
    check_residual(bellman_apply(mdp, pi, v).values, v, "policy_eval");
    return {v, std::nullopt};
}

ValueTable soft_policy_eval(const TabularMdp& mdp, const Policy& pi, double tau) {
    require_tau(tau);
    pi.require_strictly_positive("soft_policy_eval");
    const Vector rhs = policy_reward(mdp, pi) + tau * neg_log_expectation(pi);
    const Vector v = solve_policy_system(mdp, pi, rhs);
    check_residual(soft_bellman_apply(mdp, pi, v, tau).values, v, "soft_policy_eval");
    return {v, tau};
}

QTable q_from_v(const TabularMdp& mdp, const ValueTable& v) {
    require_shape(mdp, v.values);
    return {q_values(mdp, v.values), v.tau};
}

AdvantageTable advantage(const TabularMdp& mdp, const Policy& pi, const ValueTable& v, const QTable& q,
                         std::optional<double> tau) {
    require_shape(mdp, pi);
    if (v.tau != tau || q.tau != tau) {
        throw InvalidArgument("advantage: regularization flag of V or Q does not match the requested kind");
    }
    Matrix a = q.values;
    for (int s = 0; s < mdp.n_states(); ++s) a.row(s).array() -= v.values(s);
    if (tau) {
        pi.require_strictly_positive("soft advantage");
        a -= *tau * pi.log_probs();
    }
    return {a, tau};
}

ValueTable bellman_apply(const TabularMdp& mdp, const Policy& pi, const Vector& v) {
    require_shape(mdp, pi);
    require_shape(mdp, v);
    return {q_values(mdp, v).cwiseProduct(pi.probs()).rowwise().sum(), std::nullopt};
}

ValueTable bellman_optimal(const TabularMdp& mdp, const Vector& v) {
    require_shape(mdp, v);
    return {q_values(mdp, v).rowwise().maxCoeff(), std::nullopt};
}

ValueTable soft_bellman_apply(const TabularMdp& mdp, const Policy& pi, const Vector& v, double tau) {
    require_tau(tau);
    require_shape(mdp, pi);
    require_shape(mdp, v);
    const Vector out = q_values(mdp, v).cwiseProduct(pi.probs()).rowwise().sum() + tau * neg_log_expectation(pi);
    return {out, tau};
}

ValueTable soft_bellman_optimal(const TabularMdp& mdp, const Vector& v, double tau) {
    require_tau(tau);
    require_shape(mdp, v);
    const Matrix scaled = q_values(mdp, v) / tau;
    Vector out(mdp.n_states());
    for (int s = 0; s < mdp.n_states(); ++s) out(s) = tau * log_sum_exp(scaled.row(s));
    return {out, tau};
}

Policy soft_greedy(const TabularMdp& mdp, const Vector& v, double tau) {
    require_tau(tau);
    require_shape(mdp, v);
    return Policy::from_logits(q_values(mdp, v) / tau);
}

namespace {

/// Residual below which further digits are lost to rounding in T V.
double roundoff_floor(const Vector& v) {
    return 1e3 * std::numeric_limits<double>::epsilon() * std::max(1.0, sup_norm(v));
}

template <class Apply, class Polish>
std::pair<Vector, int> solve_fixed_point(const TabularMdp& mdp, double tol, Apply apply, Polish polish) {
    if (!(tol > 0.0)) throw InvalidArgument("tolerance must be positive");
    const double gamma = mdp.gamma();
    const double target = gamma > 0.0 ? tol * (1.0 - gamma) / gamma : kInf;
    constexpr int kMaxValueIterations = 1000000;
    constexpr int kMaxPolish = 100;

    Vector v = Vector::Zero(mdp.n_states());
    double residual = kInf;
    int iterations = 0;
    // Value iteration brings V close; exact policy evaluations then remove the remaining error.
    const double coarse = std::max(target, 1e-6);
    while (iterations < kMaxValueIterations) {
        Vector next = apply(v);
        residual = sup_norm(next - v);
        v = std::move(next);
        ++iterations;
        if (residual <= coarse) break;
    }
    residual = sup_norm(apply(v) - v);
    for (int i = 0; i < kMaxPolish && residual > target; ++i) {
        Vector next = polish(v);
        const double next_residual = sup_norm(apply(next) - next);
        ++iterations;
        if (!(next_residual < residual)) break;
        v = std::move(next);
        residual = next_residual;
    }
    if (!(residual <= std::max(target, roundoff_floor(v)))) {
        throw NumericError("optimal value computation did not converge: residual " + std::to_string(residual));
    }
    return {v, iterations};
}

std::vector<std::vector<int>> argmax_sets(const Matrix& q) {
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(q.rows()));
    for (Eigen::Index s = 0; s < q.rows(); ++s) {
        const double m = q.row(s).maxCoeff();
        for (Eigen::Index a = 0; a < q.cols(); ++a)
            if (q(s, a) >= m - kTolGap) sets[static_cast<std::size_t>(s)].push_back(static_cast<int>(a));
    }
    return sets;
}

} // namespace

OptimalitySummary optimal_values(const TabularMdp& mdp, double tol) {
    require_valid(mdp);
    auto apply = [&](const Vector& v) { return bellman_optimal(mdp, v).values; };
    auto polish = [&](const Vector& v) { return policy_eval(mdp, greedy_policy(q_values(mdp, v))).values; };
    auto [v, iterations] = solve_fixed_point(mdp, tol, apply, polish);

    ValueTable vt{v, std::nullopt};
    QTable q = q_from_v(mdp, vt);
    AdvantageTable a{q.values, std::nullopt};
    for (int s = 0; s < mdp.n_states(); ++s) a.values.row(s).array() -= v(s);
    auto sets = argmax_sets(q.values);
    double delta = kInf;
    for (int s = 0; s < mdp.n_states(); ++s) {
        const double m = q.values.row(s).maxCoeff();
        for (int a_idx = 0; a_idx < mdp.n_actions(); ++a_idx)
            if (q.values(s, a_idx) < m - kTolGap) delta = std::min(delta, std::abs(a.values(s, a_idx)));
    }
    Policy pi_star = greedy_policy(q.values);
    const double residual = sup_norm(apply(v) - v);
    return OptimalitySummary{vt, q, a, std::move(sets), delta, std::move(pi_star), residual, iterations};
}

OptimalitySummary soft_optimal(const TabularMdp& mdp, double tau, double tol) {
    require_valid(mdp);
    require_tau(tau);
    auto apply = [&](const Vector& v) { return soft_bellman_optimal(mdp, v, tau).values; };
    auto polish = [&](const Vector& v) { return soft_policy_eval(mdp, soft_greedy(mdp, v, tau), tau).values; };
    auto [v, iterations] = solve_fixed_point(mdp, tol, apply, polish);

    ValueTable vt{v, tau};
    QTable q = q_from_v(mdp, vt);
    Policy pi_star = soft_greedy(mdp, v, tau);
    AdvantageTable a = advantage(mdp, pi_star, vt, q, tau);
    const double opteq = a.values.cwiseAbs().maxCoeff();
    if (!(opteq <= 10.0 * std::max(tol, roundoff_floor(v)))) {
        throw NumericError("soft optimality equation residual " + std::to_string(opteq) + " too large");
    }
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(mdp.n_states()));
    for (auto& set : sets)
        for (int a_idx = 0; a_idx < mdp.n_actions(); ++a_idx) set.push_back(a_idx);
    const double residual = sup_norm(apply(v) - v);
    return OptimalitySummary{vt, q, a, std::move(sets), kInf, std::move(pi_star), residual, iterations};
}

StateDistribution visitation(const TabularMdp& mdp, const Policy& pi, const StateDistribution& rho) {
    if (rho.size() != mdp.n_states()) throw InvalidArgument("distribution length does not match the mdp");
    const int n = mdp.n_states();
    const Matrix system = Matrix::Identity(n, n) - mdp.gamma() * policy_transition(mdp, pi);
    Eigen::PartialPivLU<Matrix> lu(system.transpose());
    Vector d = (1.0 - mdp.gamma()) * lu.solve(rho.weights());
    if (!d.allFinite()) throw NumericError("visitation produced non-finite values");
    d = d.cwiseMax(0.0);
    return StateDistribution::from_weights(d);
}

Vector nonoptimal_mass(const Policy& pi, const OptimalitySummary& summary) {
    Vector b = Vector::Zero(pi.n_states());
    for (int s = 0; s < pi.n_states(); ++s)
        for (int a = 0; a < pi.n_actions(); ++a)
            if (!summary.is_optimal(s, a)) b(s) += pi(s, a);
    return b;
}

SuboptimalitySandwich suboptimality_sandwich(const TabularMdp& mdp, const Policy& pi,
                                             const OptimalitySummary& summary, const StateDistribution& rho) {
    const Vector b = nonoptimal_mass(pi, summary);
    const Vector v = policy_eval(mdp, pi).values;
    const double gap = rho.dot(summary.v_star.values - v);
    const double lower = std::isinf(summary.gap_delta) ? 0.0 : summary.gap_delta * rho.dot(b);
    const double one_minus = 1.0 - mdp.gamma();
    const double upper = visitation(mdp, pi, rho).dot(b) / (one_minus * one_minus);
    return {lower, gap, upper};
}

} // namespace pglab
