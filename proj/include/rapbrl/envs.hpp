#pragma once

#include "rapbrl/mdp.hpp"

#include <cstdint>
#include <string>

namespace rapbrl {

/// An MDP with its trajectory embedding and true reward model.
struct Instance {
    std::string name;
    TabularMdp mdp;
    TrajectoryEmbedding embedding;
    RewardModel reward;
};

/// Two-policy example whose policies share one reward law in the corrected variant.
struct ExampleInstance {
    Instance instance;
    /// Policies are indexed on `unroll(instance.mdp)`.
    HistoryTree tree;
    HistoryPolicy policy_a;
    HistoryPolicy policy_b;
};

/**
 * Three-step example with states S1, S21, S22, S31..S34 and an absorbing end state.
 *
 * Step rewards are summed into a one-dimensional table embedding. Both actions behave
 * alike before the third step; there action 0 is a3 (policy A) and action 1 is a'3 (policy B).
 */
ExampleInstance example_mdp(bool corrected);

struct HardCaseParams {
    int chain_length = 3;
    double mu = 0.3;
    double eta = 0.05;
    double alpha = 0.2;
    double scale = 1.0;
    double rho = 1.0;
    int num_actions = 3;
    int special_action = 0;
};

/// Chain s_1..s_n feeding absorbing terminals x1, x2, x3; a_J at s_n shifts eta mass off x3.
Instance hard_case_1(const HardCaseParams& params = {});

/// As case 1 with a fourth terminal x4 that the suboptimal actions reach instead of x3.
Instance hard_case_2(const HardCaseParams& params = {});

/// ((alpha - eta) 0.2 + eta 0.8) / alpha * B rho.
double hard_case_1_formula_value(const HardCaseParams& params);

/// 0.2 eta B rho.
double hard_case_2_formula_gap(const HardCaseParams& params);

/**
 * Random instance: Dirichlet(1) transition rows and uniform nonnegative weights scaled so the
 * largest trajectory reward is exactly 1.
 */
Instance random_mdp(int num_states, int num_actions, int horizon, std::uint64_t seed,
                    EmbeddingKind kind = EmbeddingKind::StateActionCount);

} // namespace rapbrl
