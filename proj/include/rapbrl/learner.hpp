#pragma once

#include "rapbrl/mdp.hpp"
#include "rapbrl/oracle.hpp"
#include "rapbrl/risk.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace rapbrl {

// ----------------------------------------------------------------------------
// Transition confidence sets
// ----------------------------------------------------------------------------

/// Empirical kernel with a per-(s,a) L1 radius.
struct TransitionEstimate {
    int num_states = 0;
    int num_actions = 0;
    /// (S*A) x S successor counts.
    Eigen::MatrixXd successor_counts;
    /// n(s,a), indexed s*A + a.
    Eigen::VectorXd visits;
    /// Empirical frequencies; uniform rows where n(s,a) = 0.
    Kernel kernel;
    /// L1 radius, indexed s*A + a.
    Eigen::VectorXd radius;
};

/// min(2, sqrt(2 S ln(2 K H S A / delta) / n)); 2 when n = 0.
double transition_radius(double n, int num_states, int episodes, int horizon, int num_actions,
                         double delta);

/// Adds every (s, a, s') step of a trajectory to a (S*A) x S count table.
void count_transitions(const Trajectory& traj, int num_actions, Eigen::MatrixXd& successor_counts);

TransitionEstimate estimate_transitions(const Eigen::MatrixXd& successor_counts, int num_states,
                                        int num_actions, int episodes, int horizon, double delta);

// ----------------------------------------------------------------------------
// Reward estimation
// ----------------------------------------------------------------------------

struct OptimizerSettings {
    /// Initial step; 0 selects 0.5 / (kappa_upper^2 B^2 k).
    double step_size = 0.0;
    int max_iterations = 500;
    /// Stop once an accepted step improves the loss by less than this.
    double tolerance = 1e-10;
};

struct RewardFit {
    Eigen::VectorXd weights;
    double loss = 0.0;
    /// Loss at w = 0.
    double initial_loss = 0.0;
    int iterations = 0;
    /// Loss after each accepted step, starting with the initial point.
    std::vector<double> trace;
};

/// Sum over records of (sigma(<dphi, w>) - o)^2; `diffs` holds one column dphi per record.
double preference_loss(const Eigen::Ref<const Eigen::MatrixXd>& diffs,
                       const Eigen::Ref<const Eigen::VectorXd>& outcomes, const LinkFunction& link,
                       const Eigen::VectorXd& weights);

/**
 * Projected gradient descent on the preference loss over ||w|| <= rho_w.
 *
 * Starts from `init` (default w = 0). Steps that increase the loss are rejected and the
 * step halved; accepted steps grow it by 1.2. The result never has a larger loss than w = 0.
 */
RewardFit fit_reward(const Eigen::Ref<const Eigen::MatrixXd>& diffs,
                     const Eigen::Ref<const Eigen::VectorXd>& outcomes, const LinkFunction& link,
                     double rho_w, double embedding_bound, const OptimizerSettings& settings,
                     const Eigen::VectorXd* init = nullptr);

/// c_beta (dim ln(k (1 + 2 B rho_w)) + ln(1/delta)); requires k >= 1.
double reward_beta(int k, int dim, double embedding_bound, double rho_w, double delta,
                   double c_beta);

/// Per-dimension weight interval [lower_d, upper_d].
struct WeightBox {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    static WeightBox full(int dim, double rho_w);
    bool contains(const Eigen::VectorXd& w, double tol = 0.0) const;
    Eigen::VectorXd width() const { return upper - lower; }
};

/**
 * Intervals w_hat_d +- sqrt(beta / max(1, n_d)) / (kappa b), clipped to [-rho_w, rho_w] and
 * intersected with `previous`. A dimension whose intersection would be empty restarts from
 * the fresh interval and sets `*reset`.
 */
WeightBox weight_intervals(const Eigen::VectorXd& w_hat, double beta,
                           const Eigen::VectorXd& dim_counts, double kappa, double lower_bound,
                           double rho_w, const WeightBox* previous = nullptr,
                           bool* reset = nullptr);

// ----------------------------------------------------------------------------
// Optimistic planning
// ----------------------------------------------------------------------------

enum class Direction { Upper, Lower };

/// Transition L1 balls and a weight box: the learner's confidence set.
struct ConfidenceModel {
    Kernel kernel;
    Eigen::VectorXd radius;
    WeightBox box;
};

/**
 * Moves min(radius/2, 1 - p_target) mass onto the best (Upper) or worst (Lower) successor,
 * taking it from the opposite end of the value order first.
 */
void shift_mass(std::span<const double> values, std::span<double> probs, double radius,
                Direction direction);

/// Upper bounds sum_d phi_d w_upper_d, lower bounds with w_lower; embedding must be nonnegative.
std::pair<Eigen::VectorXd, Eigen::VectorXd> leaf_bounds(const HistoryTree& tree,
                                                        const TrajectoryEmbedding& embedding,
                                                        const WeightBox& box);

/// Upper: max over policies and models. Lower: min over policies and models.
PolicyValue optimistic_value(const HistoryTree& tree, const ConfidenceModel& model,
                             const TrajectoryEmbedding& embedding, const Objective& objective,
                             Direction direction, const StaticPlanOptions& options = {});

/// Best policy against the least favorable model, with its guaranteed value.
PolicyValue pessimistic_best(const HistoryTree& tree, const ConfidenceModel& model,
                             const TrajectoryEmbedding& embedding, const Objective& objective,
                             const StaticPlanOptions& options = {});

struct ValueInterval {
    double lower = 0.0;
    double upper = 0.0;
};

/// Range of a fixed policy's value over the confidence set (static lower end is conservative).
ValueInterval policy_bounds(const HistoryTree& tree, const ConfidenceModel& model,
                            const TrajectoryEmbedding& embedding, const Objective& objective,
                            const HistoryPolicy& policy, const StaticPlanOptions& options = {});

struct PolicyPair {
    HistoryPolicy first;
    HistoryPolicy second;
    /// Upper value of `first`.
    double upper = 0.0;
    /// Best guaranteed value: the membership threshold.
    double threshold = 0.0;
    /// Lower value of `second`.
    double lower = 0.0;
};

/**
 * first = optimistic policy; second = the plausible policy with the smallest pessimistic value.
 *
 * Plausibility eliminates an action at a node once its optimistic value falls below the
 * best pessimistic value there, which never removes an optimal action while the
 * confidence set holds.
 */
PolicyPair select_policy_pair(const HistoryTree& tree, const ConfidenceModel& model,
                              const TrajectoryEmbedding& embedding, const Objective& objective,
                              double tolerance = 1e-9, const StaticPlanOptions& options = {});

// ----------------------------------------------------------------------------
// The learner
// ----------------------------------------------------------------------------

enum class LearnerKind { RaPbrl, RiskNeutral, UniformRandom, Optimal };

const char* to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(const std::string& name);

struct LearnerConfig {
    LearnerKind kind = LearnerKind::RaPbrl;
    Objective objective;
    double delta = 0.1;
    /// Episode budget K used inside the confidence radii.
    int episodes = 2000;
    double c_beta = 1.0;
    OptimizerSettings optimizer;
    /// Start each refit from the previous estimate instead of w = 0.
    bool warm_start = true;
    double plausibility_tolerance = 1e-9;
    StaticPlanOptions static_options;
    std::size_t node_cap = UnrollOptions{}.node_cap;
    /// Keep both executed policies in the log (memory grows with K x tree size).
    bool store_policies = false;
};

struct EpisodeEntry {
    PreferenceRecord record;
    HistoryPolicy policy_1;
    HistoryPolicy policy_2;
};

struct EpisodeLog {
    std::vector<EpisodeEntry> entries;
    std::size_t size() const { return entries.size(); }
};

TransitionEstimate update_transitions(const EpisodeLog& log, int num_states, int num_actions,
                                      int episodes, int horizon, double delta);

RewardFit fit_reward(const EpisodeLog& log, const TrajectoryEmbedding& embedding,
                     const LinkFunction& link, double rho_w, const OptimizerSettings& settings);

struct EpisodeResult {
    HistoryPolicy policy_1;
    HistoryPolicy policy_2;
    PreferenceRecord record;
    /// Planner outputs of the episode (zero for non-planning learners).
    double upper = 0.0;
    double threshold = 0.0;
};

/**
 * One learner instance: owns its data, estimates and confidence set.
 *
 * Plans on the complete history tree of the MDP shape, since the support of the true
 * kernel is unknown.
 */
class Learner {
public:
    Learner(int num_states, int num_actions, int horizon, int initial_state,
            TrajectoryEmbedding embedding, LinkFunction link, double rho_w, LearnerConfig config);

    /// Selects the pair, simulates both trajectories on `truth`, queries the oracle and refits.
    EpisodeResult step(const TabularMdp& truth, const RewardModel& true_reward, Rng& rng);

    /// Policies the learner would execute next (random for the first episode).
    PolicyPair propose(Rng& rng) const;

    /// Adds one comparison and refits all estimates.
    void observe(const PreferenceRecord& record, const HistoryPolicy* policy_1 = nullptr,
                 const HistoryPolicy* policy_2 = nullptr);

    const HistoryTree& tree() const { return tree_; }
    const LearnerConfig& config() const { return config_; }
    const TrajectoryEmbedding& embedding() const { return embedding_; }
    const EpisodeLog& log() const { return log_; }
    const TransitionEstimate& transitions() const { return transitions_; }
    const Eigen::VectorXd& weights() const { return fit_.weights; }
    const RewardFit& fit() const { return fit_; }
    const WeightBox& box() const { return box_; }
    const Eigen::VectorXd& dim_counts() const { return dim_counts_; }
    double beta() const { return beta_; }
    int box_resets() const { return box_resets_; }
    int episodes_run() const { return static_cast<int>(log_.size()); }
    ConfidenceModel confidence_model() const;
    /// Objective the learner plans with (identity weighting for RiskNeutral).
    Objective planning_objective() const;

private:
    void refit();

    HistoryTree tree_;
    TrajectoryEmbedding embedding_;
    LinkFunction link_;
    double rho_w_;
    LearnerConfig config_;
    int horizon_;

    EpisodeLog log_;
    Eigen::MatrixXd successor_counts_;
    Eigen::MatrixXd diffs_;
    Eigen::VectorXd outcomes_;
    Eigen::VectorXd dim_counts_;

    TransitionEstimate transitions_;
    RewardFit fit_;
    WeightBox box_;
    double beta_ = 0.0;
    int box_resets_ = 0;

    std::optional<HistoryPolicy> oracle_policy_;
};

} // namespace rapbrl
