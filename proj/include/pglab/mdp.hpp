#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pglab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Tolerance used when forming argmax sets.
constexpr double kTolGap = 1e-9;
/// Tolerance for probability rows and distributions.
constexpr double kTolSum = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Invalid input to a library operation.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure (singular system, non-finite values, non-convergence).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Finite MDP with dense storage.
 *
 * reward is |S| x |A|.  transition is (|S|*|A|) x |S| with row s*|A|+a
 * holding P(.|s,a).  The constructor only checks shapes; use validate_mdp
 * for the probabilistic invariants.
 */
class TabularMdp {
public:
    TabularMdp(Matrix reward, Matrix transition, double gamma);

    int n_states() const { return static_cast<int>(reward_.rows()); }
    int n_actions() const { return static_cast<int>(reward_.cols()); }
    double gamma() const { return gamma_; }
    const Matrix& reward() const { return reward_; }
    const Matrix& transition() const { return transition_; }

    int row(int s, int a) const { return s * n_actions() + a; }
    double p(int s, int a, int next) const { return transition_(row(s, a), next); }

private:
    Matrix reward_;
    Matrix transition_;
    double gamma_;
};

enum class MdpErrorKind { non_finite, negative_probability, row_sum, reward_range, gamma_range };

/// First invariant violation found by validate_mdp; -1 marks unused indices.
struct MdpError {
    MdpErrorKind kind;
    int state = -1;
    int action = -1;
    int next_state = -1;
    std::string message;
};

std::optional<MdpError> validate_mdp(const TabularMdp& mdp);

/// Throws InvalidArgument carrying the validation message.
void require_valid(const TabularMdp& mdp);

/// Rewards and raw transition entries uniform on (0,1); rows renormalized.
TabularMdp random_mdp(std::uint64_t seed, int n_states, int n_actions, double gamma);

/// One state, two actions, r = (1, 0), gamma = 0, self-loops.
TabularMdp two_arm_bandit();

/// Probability vector over states.
class StateDistribution {
public:
    /// Requires nonnegative finite weights summing to 1 within 1e-9; stores w / sum(w).
    static StateDistribution from_weights(const Vector& weights);
    static StateDistribution uniform(int n_states);
    static StateDistribution point(int n_states, int state);

    const Vector& weights() const { return weights_; }
    int size() const { return static_cast<int>(weights_.size()); }
    double operator()(int s) const { return weights_(s); }
    double min() const { return weights_.minCoeff(); }
    double dot(const Vector& v) const { return weights_.dot(v); }

private:
    explicit StateDistribution(Vector w) : weights_(std::move(w)) {}
    Vector weights_;
};

/**
 * Row-stochastic policy with a log-space companion.
 *
 * Zero probabilities have log_probs equal to kNegInf.  Strict positivity is
 * judged on log_probs, so an entry whose probability underflows but whose
 * log is finite still counts as positive.
 */
class Policy {
public:
    /// Rows must be nonnegative and sum to 1 within 1e-9; each row is rescaled to sum to 1.
    static Policy from_probs(const Matrix& probs);
    /// Row-wise softmax of logits; kNegInf entries give exact zeros.
    static Policy from_logits(const Matrix& logits);

    const Matrix& probs() const { return probs_; }
    const Matrix& log_probs() const { return log_probs_; }
    int n_states() const { return static_cast<int>(probs_.rows()); }
    int n_actions() const { return static_cast<int>(probs_.cols()); }
    double operator()(int s, int a) const { return probs_(s, a); }

    bool strictly_positive() const;
    /// Throws InvalidArgument naming the first zero entry.
    void require_strictly_positive(const char* context) const;

private:
    Policy(Matrix probs, Matrix log_probs) : probs_(std::move(probs)), log_probs_(std::move(log_probs)) {}
    Matrix probs_;
    Matrix log_probs_;
};

/// Entropy regularization weight.
struct EntropyConfig {
    double tau;
};

/// Throws InvalidArgument unless tau is finite and positive.
void require_tau(double tau);

Policy uniform_policy(const TabularMdp& mdp);

/// Uniform mass over {a : scores(s,a) >= max_a scores(s,.) - tol} at every state.
Policy greedy_policy(const Matrix& scores, double tol = kTolGap);

/// Euclidean projection onto the probability simplex, (y + lambda)_+.
Vector project_simplex(const Vector& y);

/// Row-wise log-sum-exp with max subtraction.
double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& x);

} // namespace pglab
