#pragma once

#include "rapbrl/mdp.hpp"

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

namespace rapbrl {

/// Atoms closer than this are merged when a distribution is built.
inline constexpr double kAtomMergeTolerance = 1e-12;

/**
 * Finitely supported real random variable.
 *
 * Atoms are strictly increasing; atoms within kAtomMergeTolerance of their
 * predecessor are merged and zero-probability atoms are dropped.
 */
class FiniteDistribution {
public:
    FiniteDistribution() = default;
    FiniteDistribution(std::vector<double> atoms, std::vector<double> probs);

    static FiniteDistribution point_mass(double value);

    const Eigen::VectorXd& atoms() const { return atoms_; }
    const Eigen::VectorXd& probs() const { return probs_; }
    Eigen::Index size() const { return atoms_.size(); }
    double mean() const { return atoms_.dot(probs_); }
    double min() const { return atoms_(0); }
    double max() const { return atoms_(atoms_.size() - 1); }

private:
    Eigen::VectorXd atoms_;
    Eigen::VectorXd probs_;
};

/// Distortion G over quantile levels, with G(0)=0, G(1)=1, nondecreasing, L_G-Lipschitz.
class QuantileWeight {
public:
    enum class Kind { Identity, CVaR, PiecewiseLinear };

    static QuantileWeight identity();
    /// G(t) = min(t / alpha, 1); alpha in (0, 1].
    static QuantileWeight cvar(double alpha);
    /// Linear interpolation through knots (t_i, g_i) from (0,0) to (1,1).
    static QuantileWeight piecewise_linear(std::vector<std::pair<double, double>> knots);

    double operator()(double tau) const;
    double lipschitz() const { return lipschitz_; }
    Kind kind() const { return kind_; }
    /// CVaR level; 1 for Identity.
    double alpha() const { return alpha_; }

private:
    Kind kind_ = Kind::Identity;
    double alpha_ = 1.0;
    double lipschitz_ = 1.0;
    std::vector<std::pair<double, double>> knots_;
};

enum class ObjectiveKind { Nested, Static };

struct Objective {
    ObjectiveKind kind = ObjectiveKind::Nested;
    QuantileWeight weight = QuantileWeight::identity();
};

/// Value of a policy at the root, the policy itself (planners) and per-node values (nested only).
struct PolicyValue {
    double value = 0.0;
    HistoryPolicy policy;
    Eigen::VectorXd node_values;
};

/// Smallest atom x with F(x) >= tau.
double quantile(const FiniteDistribution& dist, double tau);

/// Riemann-Stieltjes integral of the quantile function against G, exact for finite support.
double risk_value(const FiniteDistribution& dist, const QuantileWeight& g);

/// Same functional on an unsorted, unmerged small support (zero-probability entries ignored).
double risk_value(std::span<const double> values, std::span<const double> probs,
                  const QuantileWeight& g);

/// Mean of the worst alpha-fraction of outcomes.
double cvar(const FiniteDistribution& dist, double alpha);

/// max over rho in the atoms of rho - E[(rho - X)^+] / alpha.
double cvar_sup_form(const FiniteDistribution& dist, double alpha);

/// E[(rho - X)^+].
double expected_shortfall(const FiniteDistribution& dist, double rho);

// ----------------------------------------------------------------------------
// Policy evaluation and planning on a history tree.
//
// `leaf_rewards` holds one trajectory reward per leaf, in leaf order.
// ----------------------------------------------------------------------------

/// Nested recursion: leaves carry the trajectory reward, each node applies G to its successors.
PolicyValue nested_value(const HistoryTree& tree, const Kernel& kernel,
                         const Eigen::VectorXd& leaf_rewards, const HistoryPolicy& policy,
                         const QuantileWeight& g);

/// Exact law of the trajectory reward under the policy.
FiniteDistribution static_distribution(const HistoryTree& tree, const Kernel& kernel,
                                       const Eigen::VectorXd& leaf_rewards,
                                       const HistoryPolicy& policy);

PolicyValue static_value(const HistoryTree& tree, const Kernel& kernel,
                         const Eigen::VectorXd& leaf_rewards, const HistoryPolicy& policy,
                         const QuantileWeight& g);

/// Backward induction maximizing the nested objective; ties go to the lowest action.
PolicyValue optimal_nested_policy(const HistoryTree& tree, const Kernel& kernel,
                                  const Eigen::VectorXd& leaf_rewards, const QuantileWeight& g);

struct StaticPlanOptions {
    /// Distinct leaf rewards beyond this count switch the rho grid to a uniform grid.
    std::size_t grid_cap = 4096;
    /// Number of points of the uniform fallback grid.
    std::size_t fallback_resolution = 4096;
    /// Limit on (tree nodes) x (grid points) evaluated by one plan.
    double work_cap = 1e10;
};

/// Candidate rho values: distinct sorted values, or a uniform grid past the cap.
std::vector<double> rho_grid(std::span<const double> values, const StaticPlanOptions& options);

/// Optimal static CVaR policy via the rho-augmented shortfall recursion.
PolicyValue optimal_static_policy(const HistoryTree& tree, const Kernel& kernel,
                                  const Eigen::VectorXd& leaf_rewards, const QuantileWeight& g,
                                  const StaticPlanOptions& options = {});

PolicyValue evaluate(const HistoryTree& tree, const Kernel& kernel,
                     const Eigen::VectorXd& leaf_rewards, const HistoryPolicy& policy,
                     const Objective& objective);

PolicyValue optimal_policy(const HistoryTree& tree, const Kernel& kernel,
                           const Eigen::VectorXd& leaf_rewards, const Objective& objective,
                           const StaticPlanOptions& options = {});

// Convenience overloads on the pruned tree of `mdp`.
PolicyValue nested_value(const TabularMdp& mdp, const TrajectoryEmbedding& embedding,
                         const RewardModel& model, const HistoryPolicy& policy,
                         const QuantileWeight& g);
FiniteDistribution static_distribution(const TabularMdp& mdp, const TrajectoryEmbedding& embedding,
                                       const RewardModel& model, const HistoryPolicy& policy);
PolicyValue static_value(const TabularMdp& mdp, const TrajectoryEmbedding& embedding,
                         const RewardModel& model, const HistoryPolicy& policy,
                         const QuantileWeight& g);
PolicyValue optimal_nested_policy(const TabularMdp& mdp, const TrajectoryEmbedding& embedding,
                                  const RewardModel& model, const QuantileWeight& g);
PolicyValue optimal_static_policy(const TabularMdp& mdp, const TrajectoryEmbedding& embedding,
                                  const RewardModel& model, const QuantileWeight& g,
                                  const StaticPlanOptions& options = {});

namespace detail {

/// Collects child values and transition probabilities of (n, a) into the given buffers.
void gather_children(const HistoryTree& tree, const Kernel& kernel, NodeId n, int action,
                     const Eigen::VectorXd& node_values, std::vector<double>& values,
                     std::vector<double>& probs);

} // namespace detail

} // namespace rapbrl
