#include "pglab/diagnostics.hpp"
#include "pglab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace pglab {

namespace {

enum class Family { all, unregularized, regularized, ppg, softmax_pg, npg, entropy_pg, entropy_npg, soft_pi };

struct CheckDef {
    CheckInfo info;
    Family family;
    bool constant_step_only;
};

const std::vector<CheckDef>& check_defs() {
    static const std::vector<CheckDef> table{
        {{"monotone", CheckScope::iteration, "min_s V^{k+1}(s) - V^k(s)"}, Family::all, false},
        {{"visitation-lower", CheckScope::iteration, "min_s d_rho^k(s) - (1-gamma) rho(s)"}, Family::all, false},
        {{"lstar-identity", CheckScope::iteration, "L_k^* computed through d_rho^* equals V*(rho) - V^k(rho)"},
         Family::all, false},
        {{"gap-sandwich", CheckScope::iteration, "Delta E_rho[b] <= V*(rho) - V(rho) <= E_d[b]/(1-gamma)^2"},
         Family::unregularized, false},
        {{"lstar-sandwich", CheckScope::iteration, "L* <= E_{d*}[max A]/(1-gamma) <= L*/((1-gamma) rho_min)"},
         Family::unregularized, false},
        {{"linear-recursion", CheckScope::iteration, "gap_{k+1} <= (1 - (1-gamma) C_k) gap_k"},
         Family::unregularized, false},
        {{"kl-sandwich", CheckScope::iteration, "V*(rho) - V(rho) = tau/(1-gamma) E_d[KL(pi||pi*)]"},
         Family::regularized, false},
        {{"ppg-improvement", CheckScope::iteration, "PPG improvement >= m^2 / (m + (2+5|A|)/eta_s)"}, Family::ppg,
         false},
        {{"ppg-termination", CheckScope::iteration, "small gap forces an exactly optimal next policy"}, Family::ppg,
         true},
        {{"pg-identity", CheckScope::iteration, "softmax PG improvement identity"}, Family::softmax_pg, false},
        {{"pg-lower", CheckScope::iteration, "softmax PG improvement lower bound"}, Family::softmax_pg, false},
        {{"pg-upper", CheckScope::iteration, "softmax PG improvement upper bound"}, Family::softmax_pg, false},
        {{"npg-bound1", CheckScope::iteration, "NPG improvement bound via the argmax set"}, Family::npg, false},
        {{"npg-bound2", CheckScope::iteration, "NPG improvement bound near optimality"}, Family::npg, false},
        {{"npg-identity1", CheckScope::iteration, "NPG improvement = (KL(k+1||k) + KL(k||k+1))/eta"}, Family::npg,
         false},
        {{"npg-identity2", CheckScope::iteration, "NPG three-point identity with pi*"}, Family::npg, false},
        {{"entropy-pg-lower", CheckScope::iteration, "entropy PG improvement lower bound, eta < beta"},
         Family::entropy_pg, false},
        {{"entropy-npg-identity", CheckScope::iteration, "entropy NPG improvement KL identity"}, Family::entropy_npg,
         false},
        {{"entropy-npg-sandwich", CheckScope::iteration, "entropy NPG bounds on L_k^{k+1} under measured ratios"},
         Family::entropy_npg, true},
        {{"softpi-quadratic", CheckScope::iteration, "gap_{k+1} <= gamma^2/(2 tau (1-gamma)) gap_k^2"},
         Family::soft_pi, false},
        {{"ppg-linear", CheckScope::trace, "PPG constant-step linear rate bound"}, Family::ppg, true},
        {{"sublinear-pg", CheckScope::trace, "k (V*(rho) - V^k(rho)) <= softmax PG constant"}, Family::softmax_pg,
         true},
        {{"npg-rate-product", CheckScope::trace, "NPG global rate product bound"}, Family::npg, true},
        {{"softpi-envelope", CheckScope::trace, "soft PI quadratic envelope from k0 on"}, Family::soft_pi, false},
    };
    return table;
}

const CheckDef* find_def(std::string_view name) {
    for (const auto& s : check_defs())
        if (s.info.name == name) return &s;
    return nullptr;
}

bool family_contains(Family family, Method method) {
    switch (family) {
    case Family::all:
        return true;
    case Family::unregularized:
        return !is_regularized(method);
    case Family::regularized:
        return is_regularized(method);
    case Family::ppg:
        return method == Method::ppg;
    case Family::softmax_pg:
        return method == Method::softmax_pg;
    case Family::npg:
        return method == Method::softmax_npg;
    case Family::entropy_pg:
        return method == Method::entropy_pg;
    case Family::entropy_npg:
        return method == Method::entropy_npg;
    case Family::soft_pi:
        return method == Method::soft_pi;
    }
    return false;
}

double sup_norm(const Vector& v) {
    return v.cwiseAbs().maxCoeff();
}

/// Minimum over states, ignoring states that impose no constraint.
class StateMin {
public:
    void add(double x) { value_ = value_ ? std::min(*value_, x) : x; }
    std::optional<double> value() const { return value_; }

private:
    std::optional<double> value_;
};

/// 1 - 1/(1 + c (e^x - 1)), stable for large x.
double saturation(double c, double x) {
    const double grown = c * std::expm1(x);
    if (std::isinf(grown)) return 1.0;
    return grown / (1.0 + grown);
}

/// Quantities of one step k -> k+1 shared by several checks.
struct StepData {
    const MethodState& cur;
    const MethodState& next;
    Vector improvement;
    double eta;
};

Vector step_improvement(const MethodState& cur, const MethodState& next) {
    const int ns = cur.policy.n_states();
    Vector imp(ns);
    for (int s = 0; s < ns; ++s) {
        imp(s) = next.policy.probs().row(s).dot(cur.eval.a.values.row(s));
        if (cur.tau) imp(s) -= *cur.tau * kl(next.policy, cur.policy, s);
    }
    return imp;
}

/// T^* V^k - V^k per state under the optimal policy of the summary.
Vector optimal_improvement(const OptimalitySummary& opt, const MethodState& cur) {
    const Policy& star = opt.optimal_policy;
    Vector imp(star.n_states());
    for (int s = 0; s < star.n_states(); ++s) {
        imp(s) = 0.0;
        for (int a = 0; a < star.n_actions(); ++a)
            if (star(s, a) > 0.0) imp(s) += star(s, a) * cur.eval.a.values(s, a);
        if (cur.tau) imp(s) -= *cur.tau * kl(star, cur.policy, s);
    }
    return imp;
}

std::vector<int> argmax_set(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    const double m = row.maxCoeff();
    std::vector<int> set;
    for (Eigen::Index a = 0; a < row.size(); ++a)
        if (row(a) >= m - kTolGap) set.push_back(static_cast<int>(a));
    return set;
}

/// min_s C_s^t of the NPG global linear rate with epsilon = Delta/4.
std::optional<double> npg_rate_constant(const RecordContext& ctx, const MethodState& cur, double eta,
                                        double gap_inf) {
    const OptimalitySummary& opt = *ctx.optimum;
    if (std::isinf(opt.gap_delta)) return std::nullopt;
    const double eps = opt.gap_delta / 4.0;
    const Vector b = nonoptimal_mass(cur.policy, opt);
    double c_min = kInf;
    for (int s = 0; s < cur.policy.n_states(); ++s) {
        double c;
        if (gap_inf > eps) {
            const auto row = cur.eval.a.values.row(s);
            const auto set = argmax_set(row);
            if (static_cast<int>(set.size()) == cur.policy.n_actions()) continue;
            double mass = 0.0;
            double second = kNegInf;
            for (int a = 0; a < cur.policy.n_actions(); ++a) {
                if (std::find(set.begin(), set.end(), a) != set.end()) mass += cur.policy(s, a);
                else second = std::max(second, row(a));
            }
            c = mass * std::expm1(eta * (row.maxCoeff() - second));
        } else {
            c = (1.0 - b(s)) * std::expm1(eta * (opt.gap_delta - eps));
        }
        c_min = std::min(c_min, c);
    }
    return c_min;
}

void fill_step_checks(const RecordContext& ctx, const StepData& st, double gap_inf, IterationRecord& rec) {
    const TabularMdp& mdp = *ctx.mdp;
    const OptimalitySummary& opt = *ctx.optimum;
    const MethodState& cur = st.cur;
    const MethodState& next = st.next;
    const int ns = mdp.n_states();
    const int na = mdp.n_actions();
    const double gamma = mdp.gamma();
    const double one_minus = 1.0 - gamma;
    const Matrix& adv = cur.eval.a.values;
    const Matrix& pi = cur.policy.probs();
    const double next_gap_inf = sup_norm(opt.v_star.values - next.eval.v.values);
    auto wants = [&](std::string_view name) {
        return std::find(ctx.checks.begin(), ctx.checks.end(), name) != ctx.checks.end();
    };
    auto put = [&](std::string_view name, std::optional<double> value) {
        if (wants(name)) rec.slacks[std::string(name)] = value;
    };

    put("monotone", (next.eval.v.values - cur.eval.v.values).minCoeff());

    if (wants("linear-recursion")) {
        double c_k = 1.0;
        for (int s = 0; s < ns; ++s) {
            const double m = adv.row(s).maxCoeff();
            if (m > 0.0) c_k = std::min(c_k, st.improvement(s) / m);
        }
        c_k = std::clamp(c_k, 0.0, 1.0);
        put("linear-recursion", (1.0 - one_minus * c_k) * gap_inf - next_gap_inf);
    }

    if (wants("ppg-improvement") && next.state_steps) {
        StateMin out;
        for (int s = 0; s < ns; ++s) {
            const double m = adv.row(s).maxCoeff();
            const double bound = m > 0.0 ? m * m / (m + (2.0 + 5.0 * na) / (*next.state_steps)(s)) : 0.0;
            out.add(st.improvement(s) - bound);
        }
        put("ppg-improvement", out.value());
    }

    if (wants("ppg-termination") && next.state_steps) {
        StateMin out;
        const double delta = opt.gap_delta;
        const Vector b_next = nonoptimal_mass(next.policy, opt);
        for (int s = 0; s < ns; ++s) {
            const double eta_s = (*next.state_steps)(s);
            const double threshold =
                std::isinf(delta) ? kInf : 0.5 * delta * (eta_s * delta / (1.0 + eta_s * delta));
            if (gap_inf <= threshold) out.add(-b_next(s));
        }
        put("ppg-termination", out.value());
    }

    if ((wants("pg-identity") || wants("pg-lower") || wants("pg-upper")) && next.state_steps && next.eta) {
        StateMin identity;
        StateMin lower;
        StateMin upper;
        const double eta_k = *next.eta;
        for (int s = 0; s < ns; ++s) {
            const double eta_s = (*next.state_steps)(s);
            Eigen::RowVectorXd hat = pi.row(s).cwiseProduct(adv.row(s));
            const double shift = eta_s * hat.maxCoeff();
            Eigen::RowVectorXd e(na);
            for (int a = 0; a < na; ++a) e(a) = std::exp(eta_s * hat(a) - shift);
            const double z = pi.row(s).dot(e);
            double pair_sum = 0.0;
            for (int a = 0; a < na; ++a)
                for (int b = 0; b < na; ++b) pair_sum += (hat(a) - hat(b)) * (e(a) - e(b));
            identity.add(-std::abs(st.improvement(s) - pair_sum / (2.0 * na * z)));
            const double m = hat.cwiseAbs().maxCoeff();
            lower.add(st.improvement(s) - m * (-std::expm1(-eta_k * ctx.mu.min() * m)) / na);
            const double growth = std::expm1(2.0 * eta_k / (one_minus * one_minus));
            upper.add(growth * na * one_minus * m * m - st.improvement(s));
        }
        put("pg-identity", identity.value());
        put("pg-lower", lower.value());
        put("pg-upper", upper.value());
    }

    if (wants("npg-bound1")) {
        StateMin out;
        for (int s = 0; s < ns; ++s) {
            const auto row = adv.row(s);
            const auto set = argmax_set(row);
            const double m = row.maxCoeff();
            if (static_cast<int>(set.size()) == na) {
                out.add(st.improvement(s));
                continue;
            }
            double mass = 0.0;
            double second = kNegInf;
            for (int a = 0; a < na; ++a) {
                if (std::find(set.begin(), set.end(), a) != set.end()) mass += pi(s, a);
                else second = std::max(second, row(a));
            }
            out.add(st.improvement(s) - saturation(mass, st.eta * (m - second)) * m);
        }
        put("npg-bound1", out.value());
    }

    if (wants("npg-bound2")) {
        std::optional<double> value;
        const double delta = opt.gap_delta;
        if (!std::isinf(delta)) {
            const double eps = gap_inf > 0.0 ? std::min(delta / 4.0, gap_inf) : delta / 4.0;
            if (gap_inf <= eps) {
                StateMin out;
                const Vector b = nonoptimal_mass(cur.policy, opt);
                for (int s = 0; s < ns; ++s) {
                    double xi_adv = 0.0;
                    for (int a = 0; a < na; ++a)
                        if (opt.is_optimal(s, a)) xi_adv += pi(s, a) * adv(s, a);
                    xi_adv /= (1.0 - b(s));
                    out.add(st.improvement(s) - saturation(1.0 - b(s), st.eta * (delta - eps)) * xi_adv);
                }
                value = out.value();
            }
        }
        put("npg-bound2", value);
    }

    if (wants("npg-identity1") || wants("npg-identity2")) {
        StateMin first;
        StateMin second;
        const Policy& star = opt.optimal_policy;
        for (int s = 0; s < ns; ++s) {
            const double kl_fwd = kl(next.policy, cur.policy, s);
            const double kl_bwd = kl(cur.policy, next.policy, s);
            first.add(-std::abs(st.improvement(s) - (kl_fwd + kl_bwd) / st.eta));
            double star_adv = 0.0;
            for (int a = 0; a < na; ++a)
                if (star(s, a) > 0.0) star_adv += star(s, a) * adv(s, a);
            const double three_point =
                (kl(star, next.policy, s) - kl(star, cur.policy, s) + kl_fwd) / st.eta;
            second.add(-std::abs(st.improvement(s) - star_adv - three_point));
        }
        put("npg-identity1", first.value());
        put("npg-identity2", second.value());
    }

    if (wants("entropy-pg-lower")) {
        std::optional<double> value;
        const double tau = *cur.tau;
        if (st.eta < beta_threshold(tau, gamma, na).value) {
            const double bracket =
                std::exp(-2.0 * st.eta * (1.0 + tau * std::log(static_cast<double>(na))) / (one_minus * one_minus)) -
                tau * st.eta / (2.0 * one_minus);
            StateMin out;
            for (int s = 0; s < ns; ++s) {
                const double m = pi.row(s).cwiseProduct(adv.row(s)).cwiseAbs().maxCoeff();
                out.add(st.improvement(s) - st.eta * ctx.mu.min() * bracket * m * m);
            }
            value = out.value();
        }
        put("entropy-pg-lower", value);
    }

    if (wants("entropy-npg-identity")) {
        StateMin out;
        const double tau = *cur.tau;
        for (int s = 0; s < ns; ++s) {
            const double rhs = kl(next.policy, cur.policy, s) / st.eta +
                               (st.eta * tau + 1.0) / st.eta * kl(cur.policy, next.policy, s);
            out.add(-std::abs(st.improvement(s) - rhs));
        }
        put("entropy-npg-identity", out.value());
    }

    if (wants("entropy-npg-sandwich")) {
        put("entropy-npg-sandwich", std::nullopt);
        const double tau = *cur.tau;
        const Policy& star = opt.optimal_policy;
        constexpr double kFloor = 1e-16;
        double eps = 0.0;
        bool usable = true;
        auto ratio_dev = [&](double num, double den) {
            if (den < kFloor || num < kFloor) return 0.0;
            return std::abs(num / den - 1.0);
        };
        for (int s = 0; s < ns && usable; ++s) {
            const double fwd = kl(next.policy, cur.policy, s);
            const double bwd = kl(cur.policy, next.policy, s);
            eps = std::max({eps, ratio_dev(bwd, fwd), ratio_dev(fwd, bwd)});
            for (const Policy* p : {&cur.policy, &next.policy}) {
                const double to_star = kl(*p, star, s);
                const double from_star = kl(star, *p, s);
                eps = std::max({eps, ratio_dev(to_star, from_star), ratio_dev(from_star, to_star)});
            }
        }
        const Vector d_cur = visitation(mdp, cur.policy, ctx.rho).weights();
        const Vector d_next = visitation(mdp, next.policy, ctx.rho).weights();
        double dlt = 0.0;
        for (const Vector* d : {&d_cur, &d_next})
            for (int s = 0; s < ns; ++s) {
                const double r = ctx.d_star.weights()(s) / (*d)(s);
                dlt = std::max({dlt, std::abs(r - 1.0), std::abs(1.0 / r - 1.0)});
            }
        if (usable && eps < 1.0 && dlt < 1.0 && rec.l_k_kp1) {
            const double et = st.eta * tau;
            const double l_cur = rec.v_gap_rho;
            const double l_next = ctx.rho.dot(opt.v_star.values - next.eval.v.values);
            const double l_step = *rec.l_k_kp1;
            const double lower = (1.0 + 1.0 / ((et + 1.0) * (1.0 + eps))) *
                                 ((1.0 - (1.0 + eps) * (1.0 + dlt) / et) * l_cur +
                                  (1.0 + 1.0 / et) * (1.0 - eps) * (1.0 - dlt) * l_next);
            const double upper = (1.0 + 1.0 / ((et + 1.0) * (1.0 - eps))) *
                                 ((1.0 - (1.0 - eps) * (1.0 - dlt) / et) * l_cur +
                                  (1.0 + 1.0 / et) * (1.0 + eps) * (1.0 + dlt) * l_next);
            put("entropy-npg-sandwich", std::min(l_step - lower, upper - l_step));
        }
    }

    if (wants("softpi-quadratic")) {
        const double tau = *cur.tau;
        const double coef = gamma * gamma / (2.0 * tau * one_minus);
        put("softpi-quadratic", coef * gap_inf * gap_inf - next_gap_inf);
    }
}

} // namespace

double kl(const Vector& p, const Vector& q) {
    if (p.size() != q.size()) throw InvalidArgument("kl needs vectors of equal length");
    double total = 0.0;
    for (Eigen::Index a = 0; a < p.size(); ++a) {
        if (p(a) <= 0.0) continue;
        if (q(a) <= 0.0) return kInf;
        total += p(a) * (std::log(p(a)) - std::log(q(a)));
    }
    return std::max(total, 0.0);
}

double kl(const Policy& p, const Policy& q, int s) {
    double total = 0.0;
    for (int a = 0; a < p.n_actions(); ++a) {
        const double lp = p.log_probs()(s, a);
        if (lp == kNegInf) continue;
        const double lq = q.log_probs()(s, a);
        if (lq == kNegInf) return kInf;
        total += p(s, a) * (lp - lq);
    }
    return std::max(total, 0.0);
}

const std::vector<CheckInfo>& check_registry() {
    static const std::vector<CheckInfo> infos = [] {
        std::vector<CheckInfo> out;
        for (const auto& s : check_defs()) out.push_back(s.info);
        return out;
    }();
    return infos;
}

const CheckInfo* find_check(std::string_view name) {
    const CheckDef* def = find_def(name);
    return def ? &def->info : nullptr;
}

bool check_applies(std::string_view name, Method method, ScheduleKind schedule) {
    const CheckDef* def = find_def(name);
    if (!def) throw InvalidArgument("unknown check: " + std::string(name));
    if (!family_contains(def->family, method)) return false;
    if (def->constant_step_only && schedule != ScheduleKind::constant) return false;
    return true;
}

std::vector<std::string> default_checks(Method method, ScheduleKind schedule) {
    std::vector<std::string> out;
    for (const auto& s : check_defs())
        if (check_applies(s.info.name, method, schedule)) out.emplace_back(s.info.name);
    return out;
}

std::optional<double> Trace::kappa_estimate() const {
    std::optional<double> kappa;
    for (const auto& r : records)
        if (r.b_max) kappa = kappa ? std::min(*kappa, 1.0 - *r.b_max) : 1.0 - *r.b_max;
    return kappa;
}

RecordContext make_record_context(const TabularMdp& mdp, const OptimalitySummary& optimum,
                                  const StateDistribution& rho, const StateDistribution& mu,
                                  std::vector<std::string> checks) {
    for (const auto& name : checks)
        if (!find_def(name)) throw InvalidArgument("unknown check: " + name);
    StateDistribution d_star = visitation(mdp, optimum.optimal_policy, rho);
    return RecordContext{&mdp, &optimum, rho, mu, std::move(d_star), std::move(checks)};
}

TraceMeta make_trace_meta(const RecordContext& ctx, Method method, const StepSchedule& schedule,
                          std::optional<double> tau, std::string fingerprint) {
    TraceMeta meta;
    meta.method = method;
    meta.schedule = schedule;
    meta.tau = tau;
    meta.gamma = ctx.mdp->gamma();
    meta.n_states = ctx.mdp->n_states();
    meta.n_actions = ctx.mdp->n_actions();
    meta.mu_min = ctx.mu.min();
    meta.rho_min = ctx.rho.min();
    meta.delta = ctx.optimum->gap_delta;
    meta.max_optimal_set = ctx.optimum->max_optimal_set_size();
    meta.dstar_over_rho = ctx.d_star.weights().cwiseQuotient(ctx.rho.weights()).maxCoeff();
    meta.fingerprint = std::move(fingerprint);
    meta.checks = ctx.checks;
    return meta;
}

IterationRecord record_iteration(const RecordContext& ctx, const MethodState& current, const MethodState* next) {
    const TabularMdp& mdp = *ctx.mdp;
    const OptimalitySummary& opt = *ctx.optimum;
    if (current.tau != opt.v_star.tau) {
        throw InvalidArgument("optimality summary and method disagree on regularization");
    }
    const double one_minus = 1.0 - mdp.gamma();
    IterationRecord rec;
    rec.k = current.iteration;
    const Vector diff = opt.v_star.values - current.eval.v.values;
    rec.v_gap_inf = sup_norm(diff);
    rec.v_gap_rho = ctx.rho.dot(diff);
    const StateDistribution d_cur = visitation(mdp, current.policy, ctx.rho);

    if (current.tau) {
        double expected = 0.0;
        for (int s = 0; s < mdp.n_states(); ++s) expected += d_cur(s) * kl(current.policy, opt.optimal_policy, s);
        rec.kl_to_opt = expected;
    } else {
        rec.b_max = nonoptimal_mass(current.policy, opt).maxCoeff();
    }

    auto wants = [&](std::string_view name) {
        return std::find(ctx.checks.begin(), ctx.checks.end(), name) != ctx.checks.end();
    };
    auto put = [&](std::string_view name, std::optional<double> value) {
        if (wants(name)) rec.slacks[std::string(name)] = value;
    };

    put("visitation-lower", (d_cur.weights() - one_minus * ctx.rho.weights()).minCoeff());
    const double l_star = ctx.d_star.dot(optimal_improvement(opt, current)) / one_minus;
    put("lstar-identity", -std::abs(l_star - rec.v_gap_rho));
    if (wants("gap-sandwich")) {
        const auto sw = suboptimality_sandwich(mdp, current.policy, opt, ctx.rho);
        put("gap-sandwich", std::min(sw.gap - sw.lower, sw.upper - sw.gap));
    }
    if (wants("lstar-sandwich")) {
        const double mid = ctx.d_star.dot(current.eval.a.values.rowwise().maxCoeff()) / one_minus;
        put("lstar-sandwich",
            std::min(mid - rec.v_gap_rho, rec.v_gap_rho / (one_minus * ctx.rho.min()) - mid));
    }
    if (current.tau) put("kl-sandwich", -std::abs(rec.v_gap_rho - *current.tau / one_minus * *rec.kl_to_opt));

    if (current.method == Method::softmax_npg && next && next->eta) {
        rec.npg_rate_constant = npg_rate_constant(ctx, current, *next->eta, rec.v_gap_inf);
    }

    if (next && !next->converged) {
        rec.eta_k = next->eta;
        const Vector imp = step_improvement(current, *next);
        rec.l_k_kp1 = ctx.d_star.dot(imp) / one_minus;
        StepData st{current, *next, imp, next->eta.value_or(0.0)};
        fill_step_checks(ctx, st, rec.v_gap_inf, rec);
    }
    for (const auto& name : ctx.checks)
        if (!rec.slacks.count(name)) rec.slacks[name] = std::nullopt;
    return rec;
}

void append_record(Trace& trace, IterationRecord record) {
    if (!trace.records.empty() && record.k <= trace.records.back().k) {
        throw InvalidArgument("trace iterations must increase");
    }
    if (record.b_max) {
        const double here = 1.0 - *record.b_max;
        const auto prev = trace.records.empty() ? std::nullopt : trace.records.back().kappa_est;
        record.kappa_est = prev ? std::min(*prev, here) : here;
    }
    trace.records.push_back(std::move(record));
}

std::vector<std::optional<double>> trace_check_slacks(std::string_view name, const Trace& trace) {
    const CheckDef* def = find_def(name);
    if (!def) throw InvalidArgument("unknown check: " + std::string(name));
    if (def->info.scope != CheckScope::trace) {
        throw InvalidArgument(std::string(name) + " is evaluated per iteration, not from the trace");
    }
    const auto& recs = trace.records;
    const TraceMeta& m = trace.meta;
    std::vector<std::optional<double>> out(recs.size());
    if (recs.empty()) return out;
    const double one_minus = 1.0 - m.gamma;
    const double gap0_inf = recs.front().v_gap_inf;

    if (name == "ppg-linear") {
        if (std::isinf(m.delta)) return out;
        const double eta = m.schedule.eta;
        const double c1 = (2.0 + 5.0 * m.n_actions) / (eta * m.mu_min);
        const double c2 = 0.5 * m.rho_min * m.delta * (eta * m.mu_min * m.delta / (1.0 + eta * m.mu_min * m.delta));
        const double factor = 1.0 - one_minus / m.dstar_over_rho * (one_minus * c2 / (one_minus * c2 + c1));
        const double gap0 = recs.front().v_gap_rho;
        for (std::size_t i = 0; i < recs.size(); ++i)
            out[i] = std::pow(factor, recs[i].k) * gap0 - recs[i].v_gap_rho;
    } else if (name == "sublinear-pg") {
        const auto kappa = trace.kappa_estimate();
        if (!kappa || !(*kappa > 0.0)) return out;
        const double bound = 1.0 / (m.rho_min * one_minus * one_minus * one_minus) * m.n_actions /
                             (*kappa * *kappa) * m.max_optimal_set * m.max_optimal_set *
                             (1.0 + one_minus / (m.schedule.eta * m.mu_min));
        for (std::size_t i = 0; i < recs.size(); ++i)
            if (recs[i].k >= 1) out[i] = bound - recs[i].k * recs[i].v_gap_rho;
    } else if (name == "npg-rate-product") {
        double product = gap0_inf;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            out[i] = product - recs[i].v_gap_inf;
            const auto c = recs[i].npg_rate_constant;
            if (!c) {
                for (std::size_t j = i + 1; j < recs.size(); ++j) out[j] = std::nullopt;
                break;
            }
            product *= 1.0 - one_minus * (std::isinf(*c) ? 1.0 : *c / (1.0 + *c));
        }
    } else if (name == "softpi-envelope") {
        if (!(m.gamma > 0.0) || !m.tau) return out;
        const double scale = 2.0 * *m.tau * one_minus / (m.gamma * m.gamma);
        const double a0 = gap0_inf / scale;
        const double k0 = a0 <= 1.0 ? 1.0 : 2.0 + std::log(a0) / std::log(1.0 / m.gamma);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const double k = recs[i].k;
            if (k < k0) continue;
            const double envelope = scale * std::exp(std::exp2(k - k0) * std::log(m.gamma));
            out[i] = envelope - recs[i].v_gap_inf;
        }
    }
    return out;
}

void finalize_trace(Trace& trace) {
    for (const auto& name : trace.meta.checks) {
        const CheckDef* def = find_def(name);
        if (!def || def->info.scope != CheckScope::trace) continue;
        const auto slacks = trace_check_slacks(name, trace);
        for (std::size_t i = 0; i < trace.records.size(); ++i) trace.records[i].slacks[name] = slacks[i];
    }
}

CheckReport check_inequality(std::string_view name, const Trace& trace, double tolerance) {
    const CheckDef* def = find_def(name);
    if (!def) throw InvalidArgument("unknown check: " + std::string(name));
    CheckReport report;
    report.name = std::string(name);
    if (!check_applies(name, trace.meta.method, trace.meta.schedule.kind)) {
        report.skip_reason = "incompatible";
        return report;
    }
    const bool recorded = !trace.records.empty() && trace.records.front().slacks.count(report.name) > 0;
    if (recorded) {
        for (const auto& r : trace.records) {
            auto it = r.slacks.find(report.name);
            report.slacks.push_back(it == r.slacks.end() ? std::nullopt : it->second);
        }
    } else if (def->info.scope == CheckScope::trace) {
        report.slacks = trace_check_slacks(name, trace);
    } else {
        report.skip_reason = "not recorded";
        return report;
    }
    for (std::size_t i = 0; i < report.slacks.size(); ++i) {
        if (!report.slacks[i]) continue;
        const double v = *report.slacks[i];
        ++report.evaluated;
        const int k = trace.records[i].k;
        if (std::isnan(v) || v < report.min_slack || report.argmin_k < 0) {
            if (std::isnan(v) || report.argmin_k < 0 || v < report.min_slack) {
                report.min_slack = v;
                report.argmin_k = k;
            }
        }
        if ((std::isnan(v) || v < tolerance) && !report.first_violation) report.first_violation = k;
    }
    if (report.evaluated == 0) {
        report.skip_reason = "no applicable iterations";
        return report;
    }
    report.status = report.first_violation ? CheckStatus::fail : CheckStatus::pass;
    return report;
}

std::string format_report(const CheckReport& report) {
    char buf[256];
    if (report.status == CheckStatus::skipped) {
        std::snprintf(buf, sizeof buf, "%s skipped: %s", report.name.c_str(), report.skip_reason.c_str());
        return buf;
    }
    std::snprintf(buf, sizeof buf, "%s min_slack=%.6e argmin_k=%d %s", report.name.c_str(), report.min_slack + 0.0,
                  report.argmin_k, report.status == CheckStatus::pass ? "pass" : "FAIL");
    std::string line = buf;
    if (report.first_violation) line += " first_violation_k=" + std::to_string(*report.first_violation);
    return line;
}

std::string_view rate_model_name(RateModel model) {
    switch (model) {
    case RateModel::linear:
        return "linear";
    case RateModel::sublinear:
        return "sublinear";
    case RateModel::quadratic:
        return "quadratic";
    }
    return "unknown";
}

std::optional<RateModel> parse_rate_model(std::string_view name) {
    for (RateModel m : {RateModel::linear, RateModel::sublinear, RateModel::quadratic})
        if (rate_model_name(m) == name) return m;
    return std::nullopt;
}

RateFit estimate_rate(const std::vector<int>& ks, const std::vector<double>& gaps, RateModel model,
                      RateWindow window, std::optional<double> envelope) {
    if (ks.size() != gaps.size()) throw InvalidArgument("iteration and gap series differ in length");
    if (ks.empty()) throw InvalidArgument("cannot fit an empty series");
    const int first = ks.front();
    const int last = ks.back();
    int lo = first;
    if (window.lo) {
        lo = *window.lo;
    } else if (model != RateModel::sublinear) {
        lo = std::max(first, last - std::max(1, (last - first + 3) / 4));
    }
    int hi = window.hi.value_or(last);
    if (lo < first || hi > last || lo > hi) throw InvalidArgument("rate window outside the trace");

    RateFit fit;
    fit.model = model;
    std::vector<double> xs;
    std::vector<double> ys;
    std::vector<double> gs;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] < lo || ks[i] > hi) continue;
        if (gaps[i] < 1e-14) {
            fit.truncated = true;
            hi = i > 0 ? ks[i - 1] : ks[i];
            fit.note = "window truncated at k=" + std::to_string(ks[i]) + " where the gap fell below 1e-14";
            break;
        }
        xs.push_back(ks[i]);
        gs.push_back(gaps[i]);
    }
    fit.k_lo = lo;
    fit.k_hi = std::min(hi, xs.empty() ? lo : static_cast<int>(xs.back()));

    if (model == RateModel::sublinear) {
        std::vector<double> scaled;
        for (std::size_t i = 0; i < xs.size(); ++i)
            if (xs[i] >= 1.0) scaled.push_back(xs[i] * gs[i]);
        if (scaled.empty()) throw InvalidArgument("sublinear fit needs iterations k >= 1 in the window");
        const double c = std::accumulate(scaled.begin(), scaled.end(), 0.0) / static_cast<double>(scaled.size());
        fit.value = c;
        for (double v : scaled) fit.residual = std::max(fit.residual, std::abs(v / c - 1.0));
        return fit;
    }

    std::vector<double> fx;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (model == RateModel::linear) {
            fx.push_back(xs[i]);
            ys.push_back(std::log(gs[i]));
        } else {
            if (!envelope || !(*envelope > 0.0)) throw InvalidArgument("quadratic fit needs a positive envelope");
            if (gs[i] >= *envelope) continue;
            fx.push_back(xs[i]);
            ys.push_back(std::log(-std::log(gs[i] / *envelope)));
        }
    }
    if (fx.size() < 2) throw InvalidArgument("rate fit needs at least two usable points in the window");
    const double n = static_cast<double>(fx.size());
    const double mx = std::accumulate(fx.begin(), fx.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < fx.size(); ++i) {
        sxx += (fx[i] - mx) * (fx[i] - mx);
        sxy += (fx[i] - mx) * (ys[i] - my);
    }
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    fit.value = std::exp(slope);
    for (std::size_t i = 0; i < fx.size(); ++i) {
        const double predicted = std::exp(intercept + slope * fx[i]);
        const double observed = std::exp(ys[i]);
        fit.residual = std::max(fit.residual, std::abs(predicted / observed - 1.0));
    }
    return fit;
}

RateFit estimate_rate(const Trace& trace, RateModel model, RateWindow window, GapColumn column) {
    std::vector<int> ks;
    std::vector<double> gaps;
    for (const auto& r : trace.records) {
        ks.push_back(r.k);
        gaps.push_back(column == GapColumn::inf_norm ? r.v_gap_inf : r.v_gap_rho);
    }
    std::optional<double> envelope;
    if (model == RateModel::quadratic && trace.meta.tau && trace.meta.gamma > 0.0) {
        envelope = 2.0 * *trace.meta.tau * (1.0 - trace.meta.gamma) / (trace.meta.gamma * trace.meta.gamma);
    }
    return estimate_rate(ks, gaps, model, window, envelope);
}

std::vector<KlRatioPoint> kl_ratio_probe(const Trace& trace) {
    if (!trace.optimal_policy) throw InvalidArgument("kl_ratio_probe needs the optimal policy");
    if (trace.policies.size() < 2) throw InvalidArgument("kl_ratio_probe needs stored policies");
    constexpr double kFloor = 1e-9;
    const Policy& star = *trace.optimal_policy;
    std::vector<KlRatioPoint> out;
    for (std::size_t i = 0; i + 1 < trace.policies.size(); ++i) {
        const Policy& cur = trace.policies[i];
        const Policy& next = trace.policies[i + 1];
        std::array<double, 4> dev{0.0, 0.0, 0.0, 0.0};
        bool any = false;
        for (int s = 0; s < cur.n_states(); ++s) {
            const double fwd = kl(cur, next, s);
            const double bwd = kl(next, cur, s);
            const double to_star = kl(cur, star, s);
            const double from_star = kl(star, cur, s);
            if (fwd >= kFloor && bwd >= kFloor) {
                dev[0] = std::max(dev[0], std::abs(fwd / bwd - 1.0));
                dev[1] = std::max(dev[1], std::abs(bwd / fwd - 1.0));
                any = true;
            }
            if (to_star >= kFloor && from_star >= kFloor) {
                dev[2] = std::max(dev[2], std::abs(to_star / from_star - 1.0));
                dev[3] = std::max(dev[3], std::abs(from_star / to_star - 1.0));
                any = true;
            }
        }
        const int k = i < trace.records.size() ? trace.records[i].k : static_cast<int>(i);
        out.push_back({k, any ? std::optional(dev) : std::nullopt});
    }
    return out;
}

double covariance(const Vector& p, const Vector& f, const Vector& g) {
    const double ef = p.dot(f);
    const double eg = p.dot(g);
    return p.dot(((f.array() - ef) * (g.array() - eg)).matrix());
}

double pairwise_covariance(const Vector& p, const Vector& f, const Vector& g) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        for (Eigen::Index j = 0; j < p.size(); ++j) total += p(i) * p(j) * (f(i) - f(j)) * (g(i) - g(j));
    return 0.5 * total;
}

CovarianceReport covariance_checks(std::uint64_t seed, int trials) {
    if (trials < 1) throw InvalidArgument("covariance_checks needs at least one trial");
    SplitMix64 rng(seed);
    CovarianceReport report;
    report.trials = trials;
    for (int t = 0; t < trials; ++t) {
        const int n = 2 + static_cast<int>(rng.below(7));
        Vector p(n);
        Vector x(n);
        for (int i = 0; i < n; ++i) {
            p(i) = rng.uniform_open();
            x(i) = rng.uniform(-1.0, 1.0);
        }
        p /= p.sum();

        Vector f(n);
        Vector g(n);
        for (int i = 0; i < n; ++i) {
            f(i) = rng.uniform(-1.0, 1.0);
            g(i) = rng.uniform(-1.0, 1.0);
        }
        report.max_identity_residual =
            std::max(report.max_identity_residual, std::abs(covariance(p, f, g) - pairwise_covariance(p, f, g)));

        // Increasing piecewise-linear maps through random knots with nonnegative slopes.
        const int knots = 1 + static_cast<int>(rng.below(4));
        auto monotone = [&]() {
            std::vector<double> at(knots);
            std::vector<double> slope(knots + 1);
            for (double& a : at) a = rng.uniform(-1.0, 1.0);
            std::sort(at.begin(), at.end());
            for (double& s : slope) s = rng.uniform(0.0, 2.0);
            const double base = rng.uniform(-1.0, 1.0);
            Vector out(n);
            for (int i = 0; i < n; ++i) {
                double value = base + slope[0] * x(i);
                for (int j = 0; j < knots; ++j)
                    if (x(i) > at[j]) value += (slope[j + 1] - slope[j]) * (x(i) - at[j]);
                out(i) = value;
            }
            return out;
        };
        const Vector mf = monotone();
        const Vector mg = monotone();
        report.min_monotone_covariance = std::min(report.min_monotone_covariance, covariance(p, mf, mg));
    }
    return report;
}

} // namespace pglab
