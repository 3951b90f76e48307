#pragma once

#include "rapbrl/errors.hpp"
#include "rapbrl/random.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rapbrl {

using NodeId = std::int32_t;

/// Transition probabilities stored as a (S*A) x S matrix; row s*A + a is P(.|s,a).
using Kernel = Eigen::MatrixXd;

/// Tolerance on row sums of a transition kernel.
inline constexpr double kStochasticTolerance = 1e-12;

/**
 * Finite-horizon tabular MDP with a single fixed initial state.
 *
 * A trajectory visits `horizon` states and takes `horizon - 1` actions.
 */
struct TabularMdp {
    int num_states = 0;
    int num_actions = 0;
    int horizon = 0;
    int initial_state = 0;
    Kernel transitions;

    auto row(int state, int action) const {
        return transitions.row(static_cast<Eigen::Index>(state) * num_actions + action);
    }
    double prob(int state, int action, int next) const {
        return transitions(static_cast<Eigen::Index>(state) * num_actions + action, next);
    }

    /// Throws StructuralError / ModelValidityError naming the first violated invariant.
    void validate() const;
};

/// Builds and validates an MDP.
TabularMdp make_mdp(int num_states, int num_actions, int horizon, int initial_state,
                    Kernel transitions);

/// A (possibly partial) history: (state, action) pairs followed by the current state.
struct Trajectory {
    std::vector<std::pair<int, int>> steps;
    int final_state = 0;

    /// Number of states visited (steps + 1).
    int length() const { return static_cast<int>(steps.size()) + 1; }

    /// Canonical key "s1.a1.s2.a2...sh".
    std::string key() const;
    static Trajectory from_key(const std::string& key);

    bool operator==(const Trajectory&) const = default;
};

enum class EmbeddingKind { TerminalIndicator, StateActionCount, ExplicitTable };

/**
 * Trajectory embedding phi: full trajectories -> R^dim.
 *
 * Every component of phi is 0 or has absolute value in [lower_bound, upper_bound].
 */
struct TrajectoryEmbedding {
    EmbeddingKind kind = EmbeddingKind::StateActionCount;
    int dim = 0;
    double lower_bound = 1.0;
    double upper_bound = 1.0;
    int num_states = 0;
    int num_actions = 0;
    int horizon = 0;
    /// TerminalIndicator: designated terminal states, one component each.
    std::vector<int> terminals;
    /// ExplicitTable: full-trajectory key -> embedding vector.
    std::map<std::string, Eigen::VectorXd> table;

    /// phi_d = scale * 1{final state == terminals[d]}.
    static TrajectoryEmbedding terminal_indicator(const TabularMdp& mdp, std::vector<int> terminals,
                                                  double scale);
    /// phi_{s*A+a} = number of visits to (s, a).
    static TrajectoryEmbedding state_action_count(const TabularMdp& mdp);
    /// Table must list every full trajectory the embedding will be asked about.
    static TrajectoryEmbedding explicit_table(const TabularMdp& mdp, int dim,
                                              std::map<std::string, Eigen::VectorXd> table);

    /// True when every component is nonnegative for every trajectory.
    bool nonnegative() const;
};

/// Weight vector w_r with norm bound rho_w; trajectory reward is <phi, w_r>.
struct RewardModel {
    Eigen::VectorXd weights;
    double norm_bound = 1.0;
};

Eigen::VectorXd embed(const Trajectory& traj, const TrajectoryEmbedding& spec);

/// Inner product <phi(traj), w>; throws ModelValidityError outside [0,1] by more than 1e-9.
double trajectory_reward(const Trajectory& traj, const TrajectoryEmbedding& spec,
                         const RewardModel& model);

/**
 * All histories of an MDP, stored breadth-first so that every layer and every
 * (node, action) child group is a contiguous id range.
 *
 * Depth runs from 1 (the root, holding only s_1) to horizon (full trajectories).
 */
class HistoryTree {
public:
    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }
    int horizon() const { return horizon_; }

    std::size_t size() const { return state_.size(); }
    std::size_t num_internal() const { return layer_begin_[horizon_ - 1]; }
    std::size_t num_leaves() const { return size() - num_internal(); }
    bool is_leaf(NodeId n) const { return static_cast<std::size_t>(n) >= num_internal(); }

    /// Node-id range of depth h (1-based).
    NodeId layer_begin(int depth) const { return static_cast<NodeId>(layer_begin_[depth - 1]); }
    NodeId layer_end(int depth) const { return static_cast<NodeId>(layer_begin_[depth]); }
    NodeId first_leaf() const { return static_cast<NodeId>(num_internal()); }

    int state(NodeId n) const { return state_[n]; }
    int depth(NodeId n) const { return depth_[n]; }
    NodeId parent(NodeId n) const { return parent_[n]; }
    int action_in(NodeId n) const { return action_in_[n]; }

    /// Children reached from internal node n by action a, as [first, last).
    std::pair<NodeId, NodeId> children(NodeId n, int action) const {
        const std::size_t slot = static_cast<std::size_t>(n) * num_actions_ + action;
        return {slot_begin_[slot], slot_begin_[slot + 1]};
    }
    /// Child of n via (action, next state), or -1 when pruned.
    NodeId child(NodeId n, int action, int next_state) const;

    Trajectory trajectory(NodeId n) const;
    std::string key(NodeId n) const { return trajectory(n).key(); }
    /// Node holding the given history, or -1.
    NodeId find(const Trajectory& traj) const;

private:
    friend HistoryTree unroll_impl(int, int, int, int, const Kernel*, std::size_t);

    int num_states_ = 0;
    int num_actions_ = 0;
    int horizon_ = 0;
    std::vector<int> state_;
    std::vector<int> depth_;
    std::vector<NodeId> parent_;
    std::vector<int> action_in_;
    std::vector<std::size_t> layer_begin_;
    std::vector<NodeId> slot_begin_;
};

struct UnrollOptions {
    std::size_t node_cap = 2'000'000;
    /// Drop successors with zero transition probability.
    bool prune_zero = true;
};

HistoryTree unroll(const TabularMdp& mdp, const UnrollOptions& options = {});

/// Every (action, successor) pair kept: the tree a learner with an unknown kernel plans on.
HistoryTree unroll_full(int num_states, int num_actions, int horizon, int initial_state,
                        std::size_t node_cap = UnrollOptions{}.node_cap);

/// Deterministic history-dependent policy: one action per internal node of a tree.
struct HistoryPolicy {
    std::vector<int> actions;

    int operator()(NodeId n) const { return actions[n]; }
    /// Totality: one in-range action for every internal node.
    void validate(const HistoryTree& tree) const;

    static HistoryPolicy constant(const HistoryTree& tree, int action);
    static HistoryPolicy uniform_random(const HistoryTree& tree, Rng& rng);

    bool operator==(const HistoryPolicy&) const = default;
};

struct Rollout {
    Trajectory trajectory;
    NodeId leaf = -1;
};

/// Samples one H-step trajectory of `mdp` following `policy` on `tree`.
Rollout rollout(const TabularMdp& mdp, const HistoryTree& tree, const HistoryPolicy& policy,
                Rng& rng);

inline Trajectory simulate(const TabularMdp& mdp, const HistoryTree& tree,
                           const HistoryPolicy& policy, Rng& rng) {
    return rollout(mdp, tree, policy, rng).trajectory;
}

/// <phi(leaf), w> for every leaf of the tree, in leaf order (not clamped).
Eigen::VectorXd leaf_values(const HistoryTree& tree, const TrajectoryEmbedding& spec,
                            const Eigen::VectorXd& weights);

/// Validated trajectory rewards for every leaf (throws ModelValidityError on out-of-range values).
Eigen::VectorXd leaf_rewards(const HistoryTree& tree, const TrajectoryEmbedding& spec,
                             const RewardModel& model);

} // namespace rapbrl
