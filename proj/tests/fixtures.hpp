#pragma once

#include "oracles.hpp"

#include "rapbrl/envs.hpp"
#include "rapbrl/mdp.hpp"
#include "rapbrl/random.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace fixture {

using namespace rapbrl;

/// Random sparse kernel: each row keeps a random nonempty subset of successors.
inline Kernel sparse_kernel(int S, int A, Rng& rng, double keep = 0.6) {
    Kernel p = Kernel::Zero(static_cast<Eigen::Index>(S) * A, S);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        for (int s = 0; s < S; ++s)
            if (uniform01(rng) < keep) p(r, s) = 0.05 + uniform01(rng);
        if (p.row(r).sum() == 0.0) p(r, uniform_index(rng, S)) = 1.0;
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

/// MDP whose trajectory reward is a sum of step rewards plus a terminal reward.
struct Decomposable {
    Instance instance;
    oracle::StepRewards rewards;
};

inline Decomposable random_decomposable(int S, int A, int H, std::uint64_t seed) {
    Rng rng(seed);
    Decomposable out;
    out.instance.mdp = make_mdp(S, A, H, 0, sparse_kernel(S, A, rng));
    const double cap = 1.0 / H;
    out.rewards.step.assign(S, std::vector<double>(A));
    out.rewards.terminal.assign(S, 0.0);
    for (auto& row : out.rewards.step)
        for (auto& r : row) r = cap * uniform01(rng);
    for (auto& r : out.rewards.terminal) r = cap * uniform01(rng);

    std::map<std::string, Eigen::VectorXd> table;
    for (const auto& t : oracle::all_reachable(out.instance.mdp))
        table[t.key()] = Eigen::VectorXd::Constant(1, out.rewards.total(t));
    out.instance.embedding = TrajectoryEmbedding::explicit_table(out.instance.mdp, 1, std::move(table));
    out.instance.reward = {Eigen::VectorXd::Ones(1), 1.0};
    return out;
}

/// MDP with an arbitrary (non-decomposable) random reward per reachable trajectory.
inline Instance random_table_instance(int S, int A, int H, std::uint64_t seed, double keep = 0.6) {
    Rng rng(seed);
    Instance inst;
    inst.mdp = make_mdp(S, A, H, 0, sparse_kernel(S, A, rng, keep));
    std::map<std::string, Eigen::VectorXd> table;
    for (const auto& t : oracle::all_reachable(inst.mdp))
        table[t.key()] = Eigen::VectorXd::Constant(1, uniform01(rng));
    inst.embedding = TrajectoryEmbedding::explicit_table(inst.mdp, 1, std::move(table));
    inst.reward = {Eigen::VectorXd::Ones(1), 1.0};
    return inst;
}

/// Policy whose action at each history is a hash of the history key.
inline oracle::PolicyFn hashed_policy(std::uint64_t seed, int num_actions) {
    return [seed, num_actions](const std::string& key) {
        return static_cast<int>(hash64(seed, std::hash<std::string>{}(key)) %
                                static_cast<std::uint64_t>(num_actions));
    };
}

inline oracle::RewardFn reward_fn(const Instance& inst) {
    return [&inst](const Trajectory& t) { return trajectory_reward(t, inst.embedding, inst.reward); };
}

/// A key -> action map as a policy function (missing keys take action 0).
inline oracle::PolicyFn map_policy(const std::map<std::string, int>& m) {
    return [&m](const std::string& key) {
        auto it = m.find(key);
        return it == m.end() ? 0 : it->second;
    };
}

} // namespace fixture
