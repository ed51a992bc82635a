#pragma once

#include "pglab/diagnostics.hpp"
#include "pglab/rng.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace fixtures {

using pglab::Matrix;
using pglab::Vector;

/// s0 -> s1 -> s1 under every action, r(s0,.) = 0, r(s1,.) = 1.
inline pglab::TabularMdp chain(double gamma = 0.5) {
    Matrix r(2, 2);
    r << 0.0, 0.0, 1.0, 1.0;
    Matrix p(4, 2);
    p << 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0;
    return pglab::TabularMdp(r, p, gamma);
}

inline pglab::TabularMdp zero_reward(int ns, int na, double gamma, std::uint64_t seed = 3) {
    const auto base = pglab::random_mdp(seed, ns, na, gamma);
    return pglab::TabularMdp(Matrix::Zero(ns, na), base.transition(), gamma);
}

/// Strictly positive random policy with logits uniform in [-scale, scale].
inline pglab::Policy random_policy(pglab::SplitMix64& rng, int ns, int na, double scale = 2.0) {
    Matrix logits(ns, na);
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) logits(s, a) = rng.uniform(-scale, scale);
    return pglab::Policy::from_logits(logits);
}

inline pglab::StateDistribution random_distribution(pglab::SplitMix64& rng, int ns) {
    Vector w(ns);
    for (int s = 0; s < ns; ++s) w(s) = rng.uniform_open();
    w /= w.sum();
    return pglab::StateDistribution::from_weights(w);
}

/// Value iteration for T^pi started from zero, independent of the linear solve.
inline Vector iterate_policy_values(const pglab::TabularMdp& mdp, const pglab::Policy& pi, int steps) {
    Vector v = Vector::Zero(mdp.n_states());
    for (int i = 0; i < steps; ++i) {
        Vector next(mdp.n_states());
        for (int s = 0; s < mdp.n_states(); ++s) {
            double total = 0.0;
            for (int a = 0; a < mdp.n_actions(); ++a) {
                double q = mdp.reward()(s, a);
                for (int t = 0; t < mdp.n_states(); ++t) q += mdp.gamma() * mdp.p(s, a, t) * v(t);
                total += pi(s, a) * q;
            }
            next(s) = total;
        }
        v = next;
    }
    return v;
}

inline double max_abs(const Vector& v) {
    return v.cwiseAbs().maxCoeff();
}

/// Exact projection by enumerating supports: on support S the minimizer is y_S + (1 - sum y_S)/|S|.
inline Vector project_by_supports(const Vector& y) {
    const int n = static_cast<int>(y.size());
    Vector best;
    double best_dist = pglab::kInf;
    for (int mask = 1; mask < (1 << n); ++mask) {
        double sum = 0.0;
        int size = 0;
        for (int i = 0; i < n; ++i)
            if (mask & (1 << i)) {
                sum += y(i);
                ++size;
            }
        const double shift = (1.0 - sum) / size;
        Vector p = Vector::Zero(n);
        bool feasible = true;
        for (int i = 0; i < n; ++i)
            if (mask & (1 << i)) {
                p(i) = y(i) + shift;
                if (p(i) < 0.0) feasible = false;
            }
        if (!feasible) continue;
        const double d = (p - y).squaredNorm();
        if (d < best_dist) {
            best_dist = d;
            best = p;
        }
    }
    return best;
}

inline void for_each_grid_vector(int n, double lo, double step, int count, const std::function<void(const Vector&)>& f) {
    Vector y(n);
    std::vector<int> idx(n, 0);
    while (true) {
        for (int i = 0; i < n; ++i) y(i) = lo + step * idx[i];
        f(y);
        int i = 0;
        while (i < n && ++idx[i] == count) idx[i++] = 0;
        if (i == n) return;
    }
}

} // namespace fixtures
