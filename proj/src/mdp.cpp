#include "pglab/mdp.hpp"
#include "pglab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pglab {

TabularMdp::TabularMdp(Matrix reward, Matrix transition, double gamma)
    : reward_(std::move(reward)), transition_(std::move(transition)), gamma_(gamma) {
    if (reward_.rows() < 1 || reward_.cols() < 1) {
        throw InvalidArgument("mdp needs at least one state and one action");
    }
    if (transition_.rows() != reward_.rows() * reward_.cols() || transition_.cols() != reward_.rows()) {
        std::ostringstream os;
        os << "transition shape " << transition_.rows() << "x" << transition_.cols() << " does not match "
           << reward_.rows() << " states and " << reward_.cols() << " actions";
        throw InvalidArgument(os.str());
    }
}

std::optional<MdpError> validate_mdp(const TabularMdp& mdp) {
    const int ns = mdp.n_states();
    const int na = mdp.n_actions();
    auto fail = [](MdpErrorKind kind, int s, int a, int next, const std::string& what) {
        std::ostringstream os;
        os << what;
        if (s >= 0) os << " at state " << s;
        if (a >= 0) os << ", action " << a;
        if (next >= 0) os << ", next state " << next;
        return MdpError{kind, s, a, next, os.str()};
    };
    if (!std::isfinite(mdp.gamma()) || mdp.gamma() < 0.0 || mdp.gamma() >= 1.0) {
        return fail(MdpErrorKind::gamma_range, -1, -1, -1, "gamma must lie in [0,1)");
    }
    for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
            const double r = mdp.reward()(s, a);
            if (!std::isfinite(r)) return fail(MdpErrorKind::non_finite, s, a, -1, "non-finite reward");
            if (r < 0.0 || r > 1.0) return fail(MdpErrorKind::reward_range, s, a, -1, "reward outside [0,1]");
            double sum = 0.0;
            for (int t = 0; t < ns; ++t) {
                const double p = mdp.p(s, a, t);
                if (!std::isfinite(p)) return fail(MdpErrorKind::non_finite, s, a, t, "non-finite probability");
                if (p < 0.0) return fail(MdpErrorKind::negative_probability, s, a, t, "negative probability");
                sum += p;
            }
            if (std::abs(sum - 1.0) > kTolSum) {
                return fail(MdpErrorKind::row_sum, s, a, -1, "transition row does not sum to 1");
            }
        }
    }
    return std::nullopt;
}

void require_valid(const TabularMdp& mdp) {
    if (auto err = validate_mdp(mdp)) throw InvalidArgument(err->message);
}

TabularMdp random_mdp(std::uint64_t seed, int n_states, int n_actions, double gamma) {
    if (n_states < 1) throw InvalidArgument("random_mdp needs n_states >= 1");
    if (n_actions < 2) throw InvalidArgument("random_mdp needs n_actions >= 2");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in [0,1)");
    SplitMix64 rng(seed);
    Matrix reward(n_states, n_actions);
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) reward(s, a) = rng.uniform_open();
    Matrix transition(n_states * n_actions, n_states);
    for (int row = 0; row < n_states * n_actions; ++row) {
        double sum = 0.0;
        for (int t = 0; t < n_states; ++t) {
            transition(row, t) = rng.uniform_open();
            sum += transition(row, t);
        }
        transition.row(row) /= sum;
    }
    TabularMdp mdp(std::move(reward), std::move(transition), gamma);
    require_valid(mdp);
    return mdp;
}

TabularMdp two_arm_bandit() {
    Matrix reward(1, 2);
    reward << 1.0, 0.0;
    Matrix transition = Matrix::Ones(2, 1);
    return TabularMdp(std::move(reward), std::move(transition), 0.0);
}

StateDistribution StateDistribution::from_weights(const Vector& weights) {
    if (weights.size() < 1) throw InvalidArgument("distribution must be non-empty");
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        if (!std::isfinite(weights(i)) || weights(i) < 0.0) {
            throw InvalidArgument("distribution entry " + std::to_string(i) + " is negative or non-finite");
        }
    }
    const double sum = weights.sum();
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("distribution does not sum to 1");
    return StateDistribution(weights / sum);
}

StateDistribution StateDistribution::uniform(int n_states) {
    if (n_states < 1) throw InvalidArgument("distribution must be non-empty");
    return StateDistribution(Vector::Constant(n_states, 1.0 / n_states));
}

StateDistribution StateDistribution::point(int n_states, int state) {
    if (state < 0 || state >= n_states) throw InvalidArgument("point mass outside state range");
    Vector w = Vector::Zero(n_states);
    w(state) = 1.0;
    return StateDistribution(std::move(w));
}

Policy Policy::from_probs(const Matrix& probs) {
    if (probs.rows() < 1 || probs.cols() < 1) throw InvalidArgument("policy must be non-empty");
    Matrix p = probs;
    Matrix lp(p.rows(), p.cols());
    for (Eigen::Index s = 0; s < p.rows(); ++s) {
        double sum = 0.0;
        for (Eigen::Index a = 0; a < p.cols(); ++a) {
            if (!std::isfinite(p(s, a)) || p(s, a) < 0.0) {
                throw InvalidArgument("policy entry (" + std::to_string(s) + "," + std::to_string(a) +
                                      ") is negative or non-finite");
            }
            sum += p(s, a);
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw InvalidArgument("policy row " + std::to_string(s) + " does not sum to 1");
        }
        p.row(s) /= sum;
        for (Eigen::Index a = 0; a < p.cols(); ++a) lp(s, a) = p(s, a) > 0.0 ? std::log(p(s, a)) : kNegInf;
    }
    return Policy(std::move(p), std::move(lp));
}

Policy Policy::from_logits(const Matrix& logits) {
    if (logits.rows() < 1 || logits.cols() < 1) throw InvalidArgument("policy must be non-empty");
    Matrix p(logits.rows(), logits.cols());
    Matrix lp(logits.rows(), logits.cols());
    for (Eigen::Index s = 0; s < logits.rows(); ++s) {
        double m = kNegInf;
        for (Eigen::Index a = 0; a < logits.cols(); ++a) {
            const double x = logits(s, a);
            if (std::isnan(x) || x == kInf) throw NumericError("non-finite logit in row " + std::to_string(s));
            m = std::max(m, x);
        }
        if (m == kNegInf) throw InvalidArgument("logit row " + std::to_string(s) + " has no finite entry");
        double sum = 0.0;
        for (Eigen::Index a = 0; a < logits.cols(); ++a) {
            const double z = logits(s, a) - m;
            lp(s, a) = z;
            p(s, a) = std::exp(z);
            sum += p(s, a);
        }
        const double log_sum = std::log(sum);
        for (Eigen::Index a = 0; a < logits.cols(); ++a) {
            p(s, a) /= sum;
            lp(s, a) -= log_sum;
        }
    }
    return Policy(std::move(p), std::move(lp));
}

bool Policy::strictly_positive() const {
    return (log_probs_.array() > kNegInf).all();
}

void Policy::require_strictly_positive(const char* context) const {
    for (Eigen::Index s = 0; s < probs_.rows(); ++s)
        for (Eigen::Index a = 0; a < probs_.cols(); ++a)
            if (!(log_probs_(s, a) > kNegInf)) {
                throw InvalidArgument(std::string(context) + ": policy has a zero entry at (" + std::to_string(s) +
                                      "," + std::to_string(a) + ")");
            }
}

void require_tau(double tau) {
    if (!std::isfinite(tau) || tau <= 0.0) throw InvalidArgument("entropy weight tau must be positive");
}

Policy uniform_policy(const TabularMdp& mdp) {
    return Policy::from_probs(Matrix::Constant(mdp.n_states(), mdp.n_actions(), 1.0 / mdp.n_actions()));
}

Policy greedy_policy(const Matrix& scores, double tol) {
    if (!scores.allFinite()) throw InvalidArgument("greedy_policy needs finite scores");
    Matrix p = Matrix::Zero(scores.rows(), scores.cols());
    for (Eigen::Index s = 0; s < scores.rows(); ++s) {
        const double m = scores.row(s).maxCoeff();
        int count = 0;
        for (Eigen::Index a = 0; a < scores.cols(); ++a)
            if (scores(s, a) >= m - tol) ++count;
        for (Eigen::Index a = 0; a < scores.cols(); ++a)
            if (scores(s, a) >= m - tol) p(s, a) = 1.0 / count;
    }
    return Policy::from_probs(p);
}

Vector project_simplex(const Vector& y) {
    if (y.size() < 1) throw InvalidArgument("project_simplex needs a non-empty vector");
    if (!y.allFinite()) throw InvalidArgument("project_simplex needs finite input");
    std::vector<double> u(y.data(), y.data() + y.size());
    std::sort(u.begin(), u.end(), std::greater<>());
    double prefix = 0.0;
    double lambda = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        prefix += u[j];
        const double candidate = (1.0 - prefix) / static_cast<double>(j + 1);
        if (u[j] + candidate > 0.0) lambda = candidate;
    }
    Vector x = (y.array() + lambda).max(0.0);
    return x / x.sum();
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    const double m = x.maxCoeff();
    if (m == kNegInf) return kNegInf;
    return m + std::log((x.array() - m).exp().sum());
}

} // namespace pglab
