#include "doctest.h"
#include "fixtures.hpp"

using namespace pglab;
using fixtures::max_abs;

namespace {

const double kLog2 = std::log(2.0);
const double kLogE1 = std::log(std::exp(1.0) + 1.0);

Policy bandit_policy(double p1) {
    Matrix p(1, 2);
    p << p1, 1.0 - p1;
    return Policy::from_probs(p);
}

Vector random_values(SplitMix64& rng, int n, double scale) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.uniform(-scale, scale);
    return v;
}

} // namespace

TEST_CASE("policy_eval examples") {
    const auto b = two_arm_bandit();
    CHECK(policy_eval(b, uniform_policy(b)).values(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(policy_eval(b, bandit_policy(1.0)).values(0) == doctest::Approx(1.0).epsilon(1e-15));

    const auto c = fixtures::chain(0.5);
    SplitMix64 rng(1);
    for (int t = 0; t < 5; ++t) {
        const auto pi = fixtures::random_policy(rng, 2, 2);
        const auto v = policy_eval(c, pi).values;
        const auto oracle = fixtures::iterate_policy_values(c, pi, 200);
        CHECK(std::abs(v(0) - 1.0) <= 1e-12);
        CHECK(std::abs(v(1) - 2.0) <= 1e-12);
        CHECK(max_abs(v - oracle) <= 1e-12);
    }
}

TEST_CASE("policy_eval agrees with value iteration on random MDPs") {
    SplitMix64 rng(2);
    for (int t = 0; t < 10; ++t) {
        const auto m = random_mdp(100 + t, 6, 3, 0.9);
        const auto pi = fixtures::random_policy(rng, 6, 3);
        const int steps = static_cast<int>(10.0 * std::log(1e-12) / std::log(0.9));
        CHECK(max_abs(policy_eval(m, pi).values - fixtures::iterate_policy_values(m, pi, steps)) <= 1e-9);
    }
}

TEST_CASE("q and advantage on the bandit") {
    const auto b = two_arm_bandit();
    const auto u = uniform_policy(b);
    const auto v = policy_eval(b, u);
    const auto q = q_from_v(b, v);
    CHECK(q.values(0, 0) == 1.0);
    CHECK(q.values(0, 1) == 0.0);
    const auto a = advantage(b, u, v, q);
    CHECK(a.values(0, 0) == doctest::Approx(0.5));
    CHECK(a.values(0, 1) == doctest::Approx(-0.5));

    const auto vs = soft_policy_eval(b, u, 1.0);
    CHECK(std::abs(vs.values(0) - (0.5 + kLog2)) <= 1e-12);
    const auto qs = q_from_v(b, vs);
    const auto as = advantage(b, u, vs, qs, 1.0);
    CHECK(std::abs(as.values(0, 0) - 0.5) <= 1e-12);
    CHECK(std::abs(as.values(0, 1) + 0.5) <= 1e-12);

    CHECK_THROWS_AS(advantage(b, u, v, q, 1.0), InvalidArgument);
    CHECK_THROWS_AS(advantage(b, u, vs, qs), InvalidArgument);
    CHECK_THROWS_AS(advantage(b, u, vs, qs, 2.0), InvalidArgument);
}

TEST_CASE("advantages have zero policy mean") {
    SplitMix64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const auto m = random_mdp(200 + t, 5, 4, t % 2 ? 0.9 : 0.5);
        const auto pi = fixtures::random_policy(rng, 5, 4);
        const auto v = policy_eval(m, pi);
        const auto a = advantage(m, pi, v, q_from_v(m, v));
        const auto vs = soft_policy_eval(m, pi, 0.3);
        const auto as = advantage(m, pi, vs, q_from_v(m, vs), 0.3);
        for (int s = 0; s < 5; ++s) {
            CHECK(std::abs(pi.probs().row(s).dot(a.values.row(s))) <= 1e-10);
            CHECK(std::abs(pi.probs().row(s).dot(as.values.row(s))) <= 1e-10);
        }
    }
}

TEST_CASE("bellman operators on the bandit") {
    const auto b = two_arm_bandit();
    const Vector zero = Vector::Zero(1);
    CHECK(bellman_apply(b, uniform_policy(b), zero).values(0) == 0.5);
    CHECK(bellman_optimal(b, zero).values(0) == 1.0);
    CHECK(std::abs(soft_bellman_optimal(b, zero, 1.0).values(0) - kLogE1) <= 1e-12);
    const auto g = soft_greedy(b, zero, 1.0);
    CHECK(std::abs(g(0, 0) - 0.7310585786300049) <= 1e-12);
    CHECK(std::abs(g(0, 1) - 0.2689414213699951) <= 1e-12);

    const auto z = fixtures::zero_reward(4, 3, 0.7);
    const auto gz = soft_greedy(z, Vector::Zero(4), 0.2);
    CHECK((gz.probs().array() - 1.0 / 3.0).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("policy operators are dominated by the optimal ones") {
    SplitMix64 rng(4);
    for (int t = 0; t < 20; ++t) {
        const auto m = random_mdp(300 + t, 5, 3, 0.8);
        const auto pi = fixtures::random_policy(rng, 5, 3);
        const Vector v = random_values(rng, 5, 3.0);
        CHECK((bellman_optimal(m, v).values - bellman_apply(m, pi, v).values).minCoeff() >= -1e-12);
        CHECK((soft_bellman_optimal(m, v, 0.5).values - soft_bellman_apply(m, pi, v, 0.5).values).minCoeff() >=
              -1e-12);
    }
}

TEST_CASE("bellman operators are gamma-contractions") {
    SplitMix64 rng(5);
    for (int t = 0; t < 40; ++t) {
        const double gamma = rng.uniform(0.0, 0.99);
        const auto m = random_mdp(400 + t, 6, 4, gamma);
        const auto pi = fixtures::random_policy(rng, 6, 4);
        const Vector v1 = random_values(rng, 6, 5.0);
        const Vector v2 = random_values(rng, 6, 5.0);
        const double d = max_abs(v1 - v2);
        const double tau = rng.uniform(0.05, 2.0);
        CHECK(max_abs(bellman_apply(m, pi, v1).values - bellman_apply(m, pi, v2).values) <= gamma * d + 1e-12);
        CHECK(max_abs(bellman_optimal(m, v1).values - bellman_optimal(m, v2).values) <= gamma * d + 1e-12);
        CHECK(max_abs(soft_bellman_apply(m, pi, v1, tau).values - soft_bellman_apply(m, pi, v2, tau).values) <=
              gamma * d + 1e-12);
        CHECK(max_abs(soft_bellman_optimal(m, v1, tau).values - soft_bellman_optimal(m, v2, tau).values) <=
              gamma * d + 1e-12);
    }
}

TEST_CASE("evaluations are fixed points within 1e-10") {
    SplitMix64 rng(6);
    for (int t = 0; t < 20; ++t) {
        const auto m = random_mdp(500 + t, 8, 4, 0.99);
        const auto pi = fixtures::random_policy(rng, 8, 4);
        const auto v = policy_eval(m, pi).values;
        CHECK(max_abs(bellman_apply(m, pi, v).values - v) <= 1e-10);
        const auto vs = soft_policy_eval(m, pi, 0.1).values;
        CHECK(max_abs(soft_bellman_apply(m, pi, vs, 0.1).values - vs) <= 1e-10);
    }
}

TEST_CASE("soft_policy_eval examples") {
    const auto b = two_arm_bandit();
    const auto pi = bandit_policy(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(std::abs(soft_policy_eval(b, pi, 1.0).values(0) - kLogE1) <= 1e-12);
    for (double gamma : {0.0, 0.5, 0.95}) {
        const auto z = fixtures::zero_reward(3, 4, gamma);
        const auto v = soft_policy_eval(z, uniform_policy(z), 0.7).values;
        CHECK(max_abs(v - Vector::Constant(3, 0.7 * std::log(4.0) / (1.0 - gamma))) <= 1e-12);
    }
    Matrix p(1, 2);
    p << 1.0, 0.0;
    CHECK_THROWS_AS(soft_policy_eval(b, Policy::from_probs(p), 1.0), InvalidArgument);
    CHECK_THROWS_AS(soft_policy_eval(b, uniform_policy(b), 0.0), InvalidArgument);
}

TEST_CASE("values respect their range bounds") {
    SplitMix64 rng(7);
    for (int t = 0; t < 20; ++t) {
        const double gamma = 0.9;
        const auto m = random_mdp(600 + t, 5, 3, gamma);
        const auto pi = fixtures::random_policy(rng, 5, 3);
        const auto v = policy_eval(m, pi).values;
        CHECK(v.minCoeff() >= 0.0);
        CHECK(v.maxCoeff() <= 1.0 / (1.0 - gamma));
        const double tau = 0.4;
        const auto vs = soft_policy_eval(m, pi, tau);
        CHECK(vs.values.minCoeff() >= 0.0);
        CHECK(vs.values.maxCoeff() <= (1.0 + tau * std::log(3.0)) / (1.0 - gamma));
        const auto qs = q_from_v(m, vs).values;
        CHECK(qs.minCoeff() >= 0.0);
        CHECK(qs.maxCoeff() <= (1.0 + gamma * tau * std::log(3.0)) / (1.0 - gamma));
    }
}

TEST_CASE("optimal_values examples") {
    const auto b = two_arm_bandit();
    const auto opt = optimal_values(b);
    CHECK(opt.v_star.values(0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(opt.gap_delta == doctest::Approx(1.0));
    REQUIRE(opt.optimal_action_sets[0].size() == 1);
    CHECK(opt.optimal_action_sets[0][0] == 0);
    CHECK(opt.optimal_policy(0, 0) == 1.0);
    CHECK(opt.is_optimal(0, 0));
    CHECK_FALSE(opt.is_optimal(0, 1));

    const auto soft = soft_optimal(b, 1.0);
    CHECK(std::abs(soft.v_star.values(0) - kLogE1) <= 1e-12);
    CHECK(std::abs(soft.optimal_policy(0, 0) - 0.7310585786300049) <= 1e-12);
    CHECK(std::isinf(soft.gap_delta));

    Matrix r = Matrix::Constant(3, 2, 0.4);
    const auto flat = TabularMdp(r, random_mdp(1, 3, 2, 0.8).transition(), 0.8);
    const auto flat_opt = optimal_values(flat);
    CHECK(std::isinf(flat_opt.gap_delta));
    CHECK(flat_opt.max_optimal_set_size() == 2);
    for (int s = 0; s < 3; ++s) CHECK(flat_opt.optimal_action_sets[s].size() == 2);
}

TEST_CASE("optimal values satisfy the optimality equations on random MDPs") {
    for (int t = 0; t < 20; ++t) {
        const double gamma = t % 2 ? 0.99 : 0.6;
        const auto m = random_mdp(700 + t, 10, 4, gamma);
        const auto opt = optimal_values(m);
        CHECK(max_abs(bellman_optimal(m, opt.v_star.values).values - opt.v_star.values) <= 1e-10);
        CHECK(max_abs(policy_eval(m, opt.optimal_policy).values - opt.v_star.values) <= 1e-10);
        for (int s = 0; s < 10; ++s)
            for (int a : opt.optimal_action_sets[s]) CHECK(std::abs(opt.a_star.values(s, a)) <= kTolGap);
        double delta = kInf;
        for (int s = 0; s < 10; ++s)
            for (int a = 0; a < 4; ++a)
                if (!opt.is_optimal(s, a)) delta = std::min(delta, std::abs(opt.a_star.values(s, a)));
        CHECK(opt.gap_delta == delta);

        const double tau = t % 3 ? 0.1 : 1.0;
        const auto soft = soft_optimal(m, tau);
        CHECK(max_abs(soft_bellman_optimal(m, soft.v_star.values, tau).values - soft.v_star.values) <= 1e-10);
        const Matrix opteq = soft.q_star.values - soft.v_star.values.replicate(1, 4) - tau * soft.optimal_policy.log_probs();
        CHECK(opteq.cwiseAbs().maxCoeff() <= 1e-11);
    }
}

TEST_CASE("visitation measure") {
    const auto b = two_arm_bandit();
    CHECK(visitation(b, uniform_policy(b), StateDistribution::uniform(1))(0) == 1.0);

    const auto c = fixtures::chain(0.5);
    const auto d = visitation(c, uniform_policy(c), StateDistribution::point(2, 0));
    double tail = 0.0;
    for (int t = 1; t < 100; ++t) tail += 0.5 * std::pow(0.5, t);
    CHECK(std::abs(d(0) - 0.5) <= 1e-12);
    CHECK(std::abs(d(1) - tail) <= 1e-12);

    SplitMix64 rng(8);
    for (int t = 0; t < 30; ++t) {
        const double gamma = rng.uniform(0.0, 0.99);
        const auto m = random_mdp(800 + t, 7, 3, gamma);
        const auto rho = fixtures::random_distribution(rng, 7);
        const auto dv = visitation(m, fixtures::random_policy(rng, 7, 3), rho);
        CHECK(std::abs(dv.weights().sum() - 1.0) <= 1e-12);
        CHECK((dv.weights() - (1.0 - gamma) * rho.weights()).minCoeff() >= -1e-12);
    }
}

TEST_CASE("nonoptimal mass and the suboptimality sandwich on the bandit") {
    const auto b = two_arm_bandit();
    const auto opt = optimal_values(b);
    CHECK(nonoptimal_mass(uniform_policy(b), opt)(0) == 0.5);
    CHECK(nonoptimal_mass(opt.optimal_policy, opt)(0) == 0.0);
    const auto sw = suboptimality_sandwich(b, uniform_policy(b), opt, StateDistribution::point(1, 0));
    CHECK(sw.lower == doctest::Approx(0.5));
    CHECK(sw.gap == doctest::Approx(0.5));
    CHECK(sw.upper == doctest::Approx(0.5));
}

TEST_CASE("suboptimality sandwich holds on random instances") {
    SplitMix64 rng(9);
    for (int t = 0; t < 30; ++t) {
        const auto m = random_mdp(900 + t, 6, 3, 0.9);
        const auto opt = optimal_values(m);
        const auto rho = fixtures::random_distribution(rng, 6);
        const auto sw = suboptimality_sandwich(m, fixtures::random_policy(rng, 6, 3), opt, rho);
        CHECK(sw.lower <= sw.gap + 1e-10);
        CHECK(sw.gap <= sw.upper + 1e-10);
    }
}

TEST_CASE("performance difference identity") {
    SplitMix64 rng(10);
    double worst = 0.0;
    double worst_soft = 0.0;
    for (int t = 0; t < 200; ++t) {
        const double gamma = rng.uniform(0.0, 0.95);
        const auto m = random_mdp(1000 + t, 5, 3, gamma);
        const auto p1 = fixtures::random_policy(rng, 5, 3);
        const auto p2 = fixtures::random_policy(rng, 5, 3);
        const auto rho = fixtures::random_distribution(rng, 5);
        const auto d1 = visitation(m, p1, rho);

        const auto v1 = policy_eval(m, p1);
        const auto v2 = policy_eval(m, p2);
        const auto a2 = advantage(m, p2, v2, q_from_v(m, v2));
        Vector inner(5);
        for (int s = 0; s < 5; ++s) inner(s) = p1.probs().row(s).dot(a2.values.row(s));
        worst = std::max(worst, std::abs(rho.dot(v1.values - v2.values) - d1.dot(inner) / (1.0 - gamma)));

        const double tau = 0.3;
        const auto s1 = soft_policy_eval(m, p1, tau);
        const auto s2 = soft_policy_eval(m, p2, tau);
        const Vector gain = soft_bellman_apply(m, p1, s2.values, tau).values - s2.values;
        worst_soft = std::max(worst_soft, std::abs(rho.dot(s1.values - s2.values) - d1.dot(gain) / (1.0 - gamma)));
    }
    CHECK(worst <= 1e-9);
    CHECK(worst_soft <= 1e-9);
}

TEST_CASE("q and advantage errors are controlled by value errors") {
    SplitMix64 rng(11);
    for (int t = 0; t < 30; ++t) {
        const double gamma = 0.85;
        const auto m = random_mdp(1300 + t, 6, 4, gamma);
        const auto opt = optimal_values(m);
        const auto pi = fixtures::random_policy(rng, 6, 4);
        const auto v = policy_eval(m, pi);
        const auto q = q_from_v(m, v);
        const auto a = advantage(m, pi, v, q);
        const double dv = max_abs(opt.v_star.values - v.values);
        CHECK((opt.q_star.values - q.values).cwiseAbs().maxCoeff() <= gamma * dv + 1e-12);
        CHECK((opt.a_star.values - a.values).cwiseAbs().maxCoeff() <= dv + 1e-12);
    }
}

TEST_CASE("soft suboptimality equals the discounted KL to the soft optimum") {
    SplitMix64 rng(12);
    for (int t = 0; t < 30; ++t) {
        const double gamma = 0.8;
        const double tau = t % 2 ? 0.2 : 1.5;
        const auto m = random_mdp(1400 + t, 5, 3, gamma);
        const auto opt = soft_optimal(m, tau);
        const auto pi = fixtures::random_policy(rng, 5, 3);
        const auto rho = fixtures::random_distribution(rng, 5);
        const auto d = visitation(m, pi, rho);
        double expected = 0.0;
        for (int s = 0; s < 5; ++s) {
            double k = 0.0;
            for (int a = 0; a < 3; ++a) k += pi(s, a) * std::log(pi(s, a) / opt.optimal_policy(s, a));
            expected += d(s) * k;
        }
        const double gap = rho.dot(opt.v_star.values - soft_policy_eval(m, pi, tau).values);
        CHECK(std::abs(gap - tau / (1.0 - gamma) * expected) <= 1e-9);
    }
}
