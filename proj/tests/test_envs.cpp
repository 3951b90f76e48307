#include "fixtures.hpp"

#include "rapbrl/envs.hpp"
#include "rapbrl/io.hpp"
#include "rapbrl/risk.hpp"

#include <doctest.h>

#include <cmath>

using namespace rapbrl;

namespace {

void check_rows(const TabularMdp& mdp) {
    for (Eigen::Index r = 0; r < mdp.transitions.rows(); ++r)
        CHECK(std::abs(mdp.transitions.row(r).sum() - 1.0) <= 1e-12);
}

/// Nested CVaR of the constant policy that plays `a` everywhere, by direct recursion on the MDP.
double constant_nested(const Instance& inst, int a, double alpha) {
    return oracle::nested(inst.mdp, [a](const std::string&) { return a; }, fixture::reward_fn(inst),
                          oracle::cvar_weight(alpha));
}

} // namespace

TEST_CASE("example instance: structure and values") {
    for (bool corrected : {false, true}) {
        const auto ex = example_mdp(corrected);
        const auto& mdp = ex.instance.mdp;
        check_rows(mdp);
        CHECK(mdp.prob(1, 0, 4) == 0.9); // S21 -> S32
        CHECK(mdp.prob(0, 1, 1) == 0.5);
        CHECK(ex.tree.num_leaves() == 2 * 2 * 2 * 2 * 2 * 1);
        CHECK_NOTHROW(ex.policy_a.validate(ex.tree));
        CHECK_NOTHROW(ex.policy_b.validate(ex.tree));
    }

    const auto ex = example_mdp(true);
    const auto& in = ex.instance;
    const auto la = static_distribution(in.mdp, in.embedding, in.reward, ex.policy_a);
    const auto lb = static_distribution(in.mdp, in.embedding, in.reward, ex.policy_b);
    CHECK(la.size() == 4);
    CHECK((la.atoms() - lb.atoms()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((la.probs() - lb.probs()).cwiseAbs().maxCoeff() <= 1e-12);
    const auto g = QuantileWeight::cvar(0.2);
    CHECK(std::abs(static_value(in.mdp, in.embedding, in.reward, ex.policy_a, g).value -
                   static_value(in.mdp, in.embedding, in.reward, ex.policy_b, g).value) <= 1e-9);
    const double na = nested_value(in.mdp, in.embedding, in.reward, ex.policy_a, g).value;
    const double nb = nested_value(in.mdp, in.embedding, in.reward, ex.policy_b, g).value;
    CHECK(std::abs(na - nb) >= 0.01);
    // Hand recursion: S21 gives CVaR over {0.1+0.5 : 0.1, 0.1+0.2 : 0.9} etc.
    CHECK(na == doctest::Approx(0.30).epsilon(1e-12));
    CHECK(nb == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("hard case 1: structure") {
    HardCaseParams q;
    const auto inst = hard_case_1(q);
    const auto& m = inst.mdp;
    check_rows(m);
    const int n = q.chain_length;
    for (int a = 0; a < q.num_actions; ++a) {
        CHECK(m.prob(0, a, n) == doctest::Approx(1 - 3 * q.mu));
        for (int x = n; x < m.num_states; ++x) CHECK(m.prob(x, a, x) == 1.0);
    }
    CHECK(m.prob(n - 1, q.special_action, n + 2) == doctest::Approx(q.alpha - q.eta));
    CHECK(inst.reward.weights == Eigen::Vector3d(1.0, 0.8, 0.2));
    CHECK(m.horizon == n + 1);

    HardCaseParams f = q;
    f.eta = 0.1;
    CHECK(hard_case_1_formula_value(f) == doctest::Approx(0.5).epsilon(1e-14));

    HardCaseParams bad = q;
    bad.alpha = 0.4;
    CHECK_THROWS_AS(hard_case_1(bad), DomainError);
    bad = q;
    bad.eta = 0.3;
    CHECK_THROWS_AS(hard_case_1(bad), DomainError);
}

TEST_CASE("hard case 1: planner against direct recursion") {
    HardCaseParams q;
    const auto inst = hard_case_1(q);
    const auto best = optimal_nested_policy(inst.mdp, inst.embedding, inst.reward, QuantileWeight::cvar(q.alpha));
    double brute = -1;
    for (int a = 0; a < q.num_actions; ++a) brute = std::max(brute, constant_nested(inst, a, q.alpha));
    CHECK(best.value == doctest::Approx(brute).epsilon(1e-12));
    MESSAGE("hard_case_1 nested optimum " << best.value << ", closed form "
                                          << hard_case_1_formula_value(q));
}

TEST_CASE("hard case 2: structure and action gap") {
    HardCaseParams q;
    const auto inst = hard_case_2(q);
    check_rows(inst.mdp);
    const int n = q.chain_length;
    CHECK(inst.reward.weights.size() == 4);
    CHECK(inst.reward.weights(3) == doctest::Approx(0.2 - q.eta));
    for (int a = 0; a < q.num_actions; ++a)
        for (int x = n; x < inst.mdp.num_states; ++x) CHECK(inst.mdp.prob(x, a, x) == 1.0);

    const int other = (q.special_action + 1) % q.num_actions;
    const double special = constant_nested(inst, q.special_action, q.alpha);
    const double worse = constant_nested(inst, other, q.alpha);
    const auto tree = unroll(inst.mdp);
    const auto leaves = leaf_rewards(tree, inst.embedding, inst.reward);
    const auto g = QuantileWeight::cvar(q.alpha);
    CHECK(nested_value(tree, inst.mdp.transitions, leaves, HistoryPolicy::constant(tree, q.special_action), g).value ==
          doctest::Approx(special).epsilon(1e-12));
    CHECK(nested_value(tree, inst.mdp.transitions, leaves, HistoryPolicy::constant(tree, other), g).value ==
          doctest::Approx(worse).epsilon(1e-12));
    // The low terminal mass mu exceeds alpha at the root, so the full eta gap reaches it.
    CHECK(special - worse == doctest::Approx(q.eta * q.scale * q.rho).epsilon(1e-12));
    MESSAGE("hard_case_2 gap " << special - worse << ", closed form " << hard_case_2_formula_gap(q));
}

TEST_CASE("random instances") {
    const auto a = random_mdp(4, 3, 6, 42);
    const auto b = random_mdp(4, 3, 6, 42);
    CHECK(instance_to_json(a).dump() == instance_to_json(b).dump());
    CHECK(a.mdp.num_states == 4);
    CHECK(a.mdp.num_actions == 3);
    CHECK(a.mdp.horizon == 6);
    CHECK(a.reward.weights.norm() <= a.reward.norm_bound + 1e-12);

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto kind = seed % 2 ? EmbeddingKind::StateActionCount : EmbeddingKind::TerminalIndicator;
        const auto inst = random_mdp(3, 2, 4, seed, kind);
        check_rows(inst.mdp);
        const auto tree = unroll(inst.mdp);
        const Eigen::VectorXd leaves = leaf_values(tree, inst.embedding, inst.reward.weights);
        CHECK(leaves.minCoeff() >= 0.0);
        CHECK(leaves.maxCoeff() <= 1.0 + 1e-12);
        CHECK(leaves.maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("instance and policy files round trip") {
    for (const auto& inst : {random_mdp(3, 2, 4, 1), hard_case_2(), example_mdp(true).instance,
                             random_mdp(3, 2, 3, 2, EmbeddingKind::TerminalIndicator)}) {
        const auto back = instance_from_json(instance_to_json(inst));
        CHECK(back.mdp.transitions == inst.mdp.transitions);
        CHECK(back.reward.weights == inst.reward.weights);
        CHECK(back.reward.norm_bound == inst.reward.norm_bound);
        const auto tree = unroll(inst.mdp);
        CHECK(leaf_values(tree, back.embedding, back.reward.weights) ==
              leaf_values(tree, inst.embedding, inst.reward.weights));

        Rng rng(3);
        const auto p = HistoryPolicy::uniform_random(tree, rng);
        CHECK(policy_from_json(tree, policy_to_json(tree, p)) == p);
    }
    auto j = instance_to_json(random_mdp(2, 2, 3, 1));
    j["transitions"][0][0][0] = 0.9;
    CHECK_THROWS(instance_from_json(j));
}
