#include "rapbrl/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rapbrl {

void TabularMdp::validate() const {
    if (num_states < 1 || num_actions < 1 || horizon < 1)
        throw StructuralError("mdp: S, A and H must all be at least 1");
    if (initial_state < 0 || initial_state >= num_states)
        throw StructuralError("mdp: initial_state out of range");
    if (transitions.rows() != static_cast<Eigen::Index>(num_states) * num_actions ||
        transitions.cols() != num_states)
        throw StructuralError("mdp: transition table must be (S*A) x S");
    for (int s = 0; s < num_states; ++s) {
        for (int a = 0; a < num_actions; ++a) {
            const auto p = row(s, a);
            if ((p.array() < 0.0).any() || (p.array() > 1.0).any())
                throw ModelValidityError("mdp: P(.|" + std::to_string(s) + "," +
                                         std::to_string(a) + ") has an entry outside [0,1]");
            if (std::abs(p.sum() - 1.0) > kStochasticTolerance)
                throw ModelValidityError("mdp: P(.|" + std::to_string(s) + "," +
                                         std::to_string(a) + ") does not sum to 1");
        }
    }
}

TabularMdp make_mdp(int num_states, int num_actions, int horizon, int initial_state,
                    Kernel transitions) {
    TabularMdp mdp{num_states, num_actions, horizon, initial_state, std::move(transitions)};
    mdp.validate();
    return mdp;
}

// ----------------------------------------------------------------------------
// Trajectories and embeddings
// ----------------------------------------------------------------------------

std::string Trajectory::key() const {
    std::string out;
    for (const auto& [s, a] : steps) {
        out += std::to_string(s);
        out += '.';
        out += std::to_string(a);
        out += '.';
    }
    out += std::to_string(final_state);
    return out;
}

Trajectory Trajectory::from_key(const std::string& key) {
    std::vector<int> parts;
    std::stringstream ss(key);
    std::string item;
    while (std::getline(ss, item, '.')) {
        if (item.empty()) throw StructuralError("trajectory key '" + key + "' is malformed");
        parts.push_back(std::stoi(item));
    }
    if (parts.empty() || parts.size() % 2 == 0)
        throw StructuralError("trajectory key '" + key + "' must alternate states and actions");
    Trajectory traj;
    for (std::size_t i = 0; i + 1 < parts.size(); i += 2) traj.steps.emplace_back(parts[i], parts[i + 1]);
    traj.final_state = parts.back();
    return traj;
}

TrajectoryEmbedding TrajectoryEmbedding::terminal_indicator(const TabularMdp& mdp,
                                                            std::vector<int> terminals,
                                                            double scale) {
    if (terminals.empty()) throw StructuralError("terminal indicator needs at least one terminal");
    if (!(scale > 0.0)) throw DomainError("terminal indicator scale must be positive");
    for (int x : terminals)
        if (x < 0 || x >= mdp.num_states) throw StructuralError("terminal state out of range");
    TrajectoryEmbedding e;
    e.kind = EmbeddingKind::TerminalIndicator;
    e.dim = static_cast<int>(terminals.size());
    e.lower_bound = scale;
    e.upper_bound = scale;
    e.num_states = mdp.num_states;
    e.num_actions = mdp.num_actions;
    e.horizon = mdp.horizon;
    e.terminals = std::move(terminals);
    return e;
}

TrajectoryEmbedding TrajectoryEmbedding::state_action_count(const TabularMdp& mdp) {
    TrajectoryEmbedding e;
    e.kind = EmbeddingKind::StateActionCount;
    e.dim = mdp.num_states * mdp.num_actions;
    e.lower_bound = 1.0;
    e.upper_bound = mdp.horizon;
    e.num_states = mdp.num_states;
    e.num_actions = mdp.num_actions;
    e.horizon = mdp.horizon;
    return e;
}

TrajectoryEmbedding TrajectoryEmbedding::explicit_table(const TabularMdp& mdp, int dim,
                                                        std::map<std::string, Eigen::VectorXd> table) {
    if (dim < 1) throw StructuralError("explicit embedding dimension must be positive");
    double lo = 0.0;
    double hi = 0.0;
    for (const auto& [key, phi] : table) {
        if (phi.size() != dim)
            throw StructuralError("explicit embedding entry '" + key + "' has the wrong dimension");
        if (Trajectory::from_key(key).length() != mdp.horizon)
            throw StructuralError("explicit embedding entry '" + key + "' is not a full trajectory");
        for (double v : phi) {
            const double m = std::abs(v);
            if (m == 0.0) continue;
            lo = lo == 0.0 ? m : std::min(lo, m);
            hi = std::max(hi, m);
        }
    }
    TrajectoryEmbedding e;
    e.kind = EmbeddingKind::ExplicitTable;
    e.dim = dim;
    e.lower_bound = lo > 0.0 ? lo : 1.0;
    e.upper_bound = hi > 0.0 ? hi : 1.0;
    e.num_states = mdp.num_states;
    e.num_actions = mdp.num_actions;
    e.horizon = mdp.horizon;
    e.table = std::move(table);
    return e;
}

bool TrajectoryEmbedding::nonnegative() const {
    if (kind != EmbeddingKind::ExplicitTable) return true;
    return std::all_of(table.begin(), table.end(),
                       [](const auto& kv) { return (kv.second.array() >= 0.0).all(); });
}

namespace {

void check_indices(const Trajectory& traj, const TrajectoryEmbedding& spec) {
    for (const auto& [s, a] : traj.steps)
        if (s < 0 || s >= spec.num_states || a < 0 || a >= spec.num_actions)
            throw StructuralError("trajectory index out of range for the embedding");
    if (traj.final_state < 0 || traj.final_state >= spec.num_states)
        throw StructuralError("trajectory final state out of range for the embedding");
}

} // namespace

Eigen::VectorXd embed(const Trajectory& traj, const TrajectoryEmbedding& spec) {
    if (traj.length() != spec.horizon)
        throw PreconditionError("embed: trajectory has " + std::to_string(traj.length()) +
                                " states, expected a full trajectory of " +
                                std::to_string(spec.horizon));
    check_indices(traj, spec);
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(spec.dim);
    switch (spec.kind) {
    case EmbeddingKind::TerminalIndicator:
        for (int d = 0; d < spec.dim; ++d)
            if (spec.terminals[d] == traj.final_state) phi(d) = spec.upper_bound;
        break;
    case EmbeddingKind::StateActionCount:
        for (const auto& [s, a] : traj.steps) phi(s * spec.num_actions + a) += 1.0;
        break;
    case EmbeddingKind::ExplicitTable: {
        const auto it = spec.table.find(traj.key());
        if (it == spec.table.end())
            throw StructuralError("explicit embedding has no entry for '" + traj.key() + "'");
        phi = it->second;
        break;
    }
    }
    return phi;
}

double trajectory_reward(const Trajectory& traj, const TrajectoryEmbedding& spec,
                         const RewardModel& model) {
    if (model.weights.size() != spec.dim)
        throw StructuralError("reward weights do not match the embedding dimension");
    const double r = embed(traj, spec).dot(model.weights);
    if (r < -1e-9 || r > 1.0 + 1e-9)
        throw ModelValidityError("trajectory reward " + std::to_string(r) + " for '" + traj.key() +
                                 "' is outside [0,1]");
    return std::clamp(r, 0.0, 1.0);
}

// ----------------------------------------------------------------------------
// History tree
// ----------------------------------------------------------------------------

HistoryTree unroll_impl(int num_states, int num_actions, int horizon, int initial_state,
                        const Kernel* kernel, std::size_t node_cap) {
    HistoryTree t;
    t.num_states_ = num_states;
    t.num_actions_ = num_actions;
    t.horizon_ = horizon;
    t.layer_begin_.assign(horizon + 1, 0);

    auto push = [&t](int state, int depth, NodeId parent, int action) {
        t.state_.push_back(state);
        t.depth_.push_back(depth);
        t.parent_.push_back(parent);
        t.action_in_.push_back(action);
    };
    push(initial_state, 1, -1, -1);
    t.layer_begin_[1] = 1;

    for (int depth = 1; depth < horizon; ++depth) {
        const std::size_t begin = t.layer_begin_[depth - 1];
        const std::size_t end = t.layer_begin_[depth];

        std::size_t next_count = 0;
        for (std::size_t n = begin; n < end; ++n) {
            if (kernel == nullptr) {
                next_count += static_cast<std::size_t>(num_actions) * num_states;
                continue;
            }
            const auto rows = kernel->middleRows(
                static_cast<Eigen::Index>(t.state_[n]) * num_actions, num_actions);
            next_count += static_cast<std::size_t>((rows.array() > 0.0).count());
        }
        if (t.state_.size() + next_count > node_cap)
            throw CapacityError("unroll: layer " + std::to_string(depth + 1) + " needs " +
                                std::to_string(next_count) + " nodes; total would exceed node_cap " +
                                std::to_string(node_cap));

        t.state_.reserve(t.state_.size() + next_count);
        for (std::size_t n = begin; n < end; ++n) {
            for (int a = 0; a < num_actions; ++a) {
                t.slot_begin_.push_back(static_cast<NodeId>(t.state_.size()));
                for (int s = 0; s < num_states; ++s) {
                    if (kernel != nullptr &&
                        !((*kernel)(static_cast<Eigen::Index>(t.state_[n]) * num_actions + a, s) > 0.0))
                        continue;
                    push(s, depth + 1, static_cast<NodeId>(n), a);
                }
            }
        }
        t.layer_begin_[depth + 1] = t.state_.size();
    }
    t.slot_begin_.push_back(static_cast<NodeId>(t.state_.size()));
    return t;
}

HistoryTree unroll(const TabularMdp& mdp, const UnrollOptions& options) {
    mdp.validate();
    return unroll_impl(mdp.num_states, mdp.num_actions, mdp.horizon, mdp.initial_state,
                       options.prune_zero ? &mdp.transitions : nullptr, options.node_cap);
}

HistoryTree unroll_full(int num_states, int num_actions, int horizon, int initial_state,
                        std::size_t node_cap) {
    if (num_states < 1 || num_actions < 1 || horizon < 1)
        throw StructuralError("unroll_full: S, A and H must all be at least 1");
    return unroll_impl(num_states, num_actions, horizon, initial_state, nullptr, node_cap);
}

NodeId HistoryTree::child(NodeId n, int action, int next_state) const {
    const auto [first, last] = children(n, action);
    for (NodeId c = first; c < last; ++c)
        if (state_[c] == next_state) return c;
    return -1;
}

Trajectory HistoryTree::trajectory(NodeId n) const {
    Trajectory traj;
    traj.final_state = state_[n];
    for (NodeId c = n; parent_[c] >= 0; c = parent_[c])
        traj.steps.emplace_back(state_[parent_[c]], action_in_[c]);
    std::reverse(traj.steps.begin(), traj.steps.end());
    return traj;
}

NodeId HistoryTree::find(const Trajectory& traj) const {
    if (traj.length() > horizon_) return -1;
    const int first = traj.steps.empty() ? traj.final_state : traj.steps.front().first;
    if (first != state_[0]) return -1;
    NodeId n = 0;
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
        const int a = traj.steps[i].second;
        if (a < 0 || a >= num_actions_) return -1;
        const int next = i + 1 < traj.steps.size() ? traj.steps[i + 1].first : traj.final_state;
        n = child(n, a, next);
        if (n < 0) return -1;
    }
    return n;
}

// ----------------------------------------------------------------------------
// Policies and simulation
// ----------------------------------------------------------------------------

void HistoryPolicy::validate(const HistoryTree& tree) const {
    if (actions.size() != tree.num_internal())
        throw PreconditionError("policy covers " + std::to_string(actions.size()) +
                                " nodes but the tree has " + std::to_string(tree.num_internal()) +
                                " internal nodes");
    for (std::size_t n = 0; n < actions.size(); ++n)
        if (actions[n] < 0 || actions[n] >= tree.num_actions())
            throw PreconditionError("policy has no valid action at history '" +
                                    tree.key(static_cast<NodeId>(n)) + "'");
}

HistoryPolicy HistoryPolicy::constant(const HistoryTree& tree, int action) {
    return HistoryPolicy{std::vector<int>(tree.num_internal(), action)};
}

HistoryPolicy HistoryPolicy::uniform_random(const HistoryTree& tree, Rng& rng) {
    HistoryPolicy p;
    p.actions.resize(tree.num_internal());
    for (auto& a : p.actions) a = uniform_index(rng, tree.num_actions());
    return p;
}

Rollout rollout(const TabularMdp& mdp, const HistoryTree& tree, const HistoryPolicy& policy,
                Rng& rng) {
    if (tree.num_states() != mdp.num_states || tree.num_actions() != mdp.num_actions ||
        tree.horizon() != mdp.horizon)
        throw StructuralError("simulate: tree shape does not match the mdp");
    Rollout out;
    NodeId n = 0;
    for (int depth = 1; depth < mdp.horizon; ++depth) {
        const int s = tree.state(n);
        const int a = static_cast<std::size_t>(n) < policy.actions.size() ? policy.actions[n] : -1;
        if (a < 0 || a >= mdp.num_actions)
            throw PreconditionError("simulate: policy has no action at history '" + tree.key(n) + "'");
        const int next = sample_categorical(mdp.row(s, a), rng);
        out.trajectory.steps.emplace_back(s, a);
        n = tree.child(n, a, next);
        if (n < 0) throw StructuralError("simulate: sampled successor is missing from the tree");
    }
    out.trajectory.final_state = tree.state(n);
    out.leaf = n;
    return out;
}

// ----------------------------------------------------------------------------
// Leaf values
// ----------------------------------------------------------------------------

Eigen::VectorXd leaf_values(const HistoryTree& tree, const TrajectoryEmbedding& spec,
                            const Eigen::VectorXd& weights) {
    if (weights.size() != spec.dim)
        throw StructuralError("leaf_values: weights do not match the embedding dimension");
    if (spec.num_states != tree.num_states() || spec.num_actions != tree.num_actions() ||
        spec.horizon != tree.horizon())
        throw StructuralError("leaf_values: embedding shape does not match the tree");

    const NodeId first = tree.first_leaf();
    const auto count = static_cast<Eigen::Index>(tree.num_leaves());
    Eigen::VectorXd out(count);

    switch (spec.kind) {
    case EmbeddingKind::StateActionCount: {
        Eigen::VectorXd prefix(static_cast<Eigen::Index>(tree.size()));
        prefix(0) = 0.0;
        const int A = tree.num_actions();
        for (NodeId n = 1; n < static_cast<NodeId>(tree.size()); ++n) {
            const NodeId p = tree.parent(n);
            prefix(n) = prefix(p) + weights(tree.state(p) * A + tree.action_in(n));
        }
        out = prefix.tail(count);
        break;
    }
    case EmbeddingKind::TerminalIndicator: {
        Eigen::VectorXd by_state = Eigen::VectorXd::Zero(tree.num_states());
        for (int d = 0; d < spec.dim; ++d) by_state(spec.terminals[d]) += spec.upper_bound * weights(d);
        for (Eigen::Index i = 0; i < count; ++i) out(i) = by_state(tree.state(first + static_cast<NodeId>(i)));
        break;
    }
    case EmbeddingKind::ExplicitTable:
        for (Eigen::Index i = 0; i < count; ++i) {
            const auto key = tree.key(first + static_cast<NodeId>(i));
            const auto it = spec.table.find(key);
            if (it == spec.table.end())
                throw StructuralError("explicit embedding has no entry for '" + key + "'");
            out(i) = it->second.dot(weights);
        }
        break;
    }
    return out;
}

Eigen::VectorXd leaf_rewards(const HistoryTree& tree, const TrajectoryEmbedding& spec,
                             const RewardModel& model) {
    Eigen::VectorXd r = leaf_values(tree, spec, model.weights);
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        if (r(i) < -1e-9 || r(i) > 1.0 + 1e-9)
            throw ModelValidityError("trajectory reward " + std::to_string(r(i)) + " for '" +
                                     tree.key(tree.first_leaf() + static_cast<NodeId>(i)) +
                                     "' is outside [0,1]");
    }
    return r.cwiseMax(0.0).cwiseMin(1.0);
}

} // namespace rapbrl
