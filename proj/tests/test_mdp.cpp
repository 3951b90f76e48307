#include "fixtures.hpp"

#include "rapbrl/mdp.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace rapbrl;

namespace {

TabularMdp uniform_mdp(int S, int A, int H) {
    return make_mdp(S, A, H, 0, Kernel::Constant(static_cast<Eigen::Index>(S) * A, S, 1.0 / S));
}

} // namespace

TEST_CASE("make_mdp rejects invalid kernels") {
    Kernel p(2, 2);
    p << 0.5, 0.5, 0.3, 0.6;
    CHECK_THROWS_AS(make_mdp(2, 1, 2, 0, p), ModelValidityError);
    p << 0.5, 0.5, -0.1, 1.1;
    CHECK_THROWS_AS(make_mdp(2, 1, 2, 0, p), ModelValidityError);
    CHECK_THROWS_AS(make_mdp(2, 2, 2, 0, Kernel::Constant(2, 2, 0.5)), StructuralError);
    CHECK_THROWS_AS(make_mdp(2, 1, 2, 5, Kernel::Constant(2, 2, 0.5)), StructuralError);
}

TEST_CASE("trajectory keys round trip") {
    Trajectory t{{{0, 1}, {2, 0}}, 3};
    CHECK(t.key() == "0.1.2.0.3");
    CHECK(Trajectory::from_key(t.key()) == t);
    CHECK(Trajectory::from_key("4") == Trajectory{{}, 4});
    CHECK_THROWS_AS(Trajectory::from_key("0.1"), StructuralError);
}

TEST_CASE("embed: state-action counts and terminal indicators") {
    const auto mdp = uniform_mdp(3, 2, 3);
    const auto sac = TrajectoryEmbedding::state_action_count(mdp);
    CHECK(sac.dim == 6);

    const Eigen::VectorXd phi = embed({{{0, 1}, {1, 0}}, 2}, sac);
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(6);
    expected(0 * 2 + 1) = 1;
    expected(1 * 2 + 0) = 1;
    CHECK(phi == expected);

    CHECK(embed({{{0, 0}, {0, 0}}, 1}, sac)(0) == 2.0);

    const auto ti = TrajectoryEmbedding::terminal_indicator(mdp, {1, 2}, 1.0);
    const Eigen::VectorXd e = embed({{{0, 0}, {2, 1}}, 1}, ti);
    CHECK(e(0) == 1.0);
    CHECK(e(1) == 0.0);

    CHECK_THROWS_AS(embed({{{0, 0}}, 1}, sac), PreconditionError);
    CHECK_THROWS_AS(embed({{{0, 5}, {0, 0}}, 1}, sac), StructuralError);
}

TEST_CASE("trajectory_reward dot products and range check") {
    const auto mdp = uniform_mdp(3, 1, 2);
    std::map<std::string, Eigen::VectorXd> table;
    Eigen::VectorXd a(3), b(3);
    a << 1, 0, 0;
    b << 1, 2, 0;
    table["0.0.0"] = a;
    table["0.0.1"] = b;
    table["0.0.2"] = Eigen::VectorXd::Zero(3);
    const auto emb = TrajectoryEmbedding::explicit_table(mdp, 3, table);

    RewardModel zero{Eigen::VectorXd::Zero(3), 1.0};
    CHECK(trajectory_reward({{{0, 0}}, 1}, emb, zero) == 0.0);

    RewardModel w1{Eigen::Vector3d(0.3, 0.5, 0.2), 1.0};
    CHECK(trajectory_reward({{{0, 0}}, 0}, emb, w1) == doctest::Approx(0.3).epsilon(1e-15));

    RewardModel w2{Eigen::Vector3d(0.1, 0.2, 0.3), 1.0};
    CHECK(trajectory_reward({{{0, 0}}, 1}, emb, w2) == doctest::Approx(0.5).epsilon(1e-15));

    RewardModel big{Eigen::Vector3d(1.0, 1.0, 0.0), 2.0};
    CHECK_THROWS_AS(trajectory_reward({{{0, 0}}, 1}, emb, big), ModelValidityError);
    CHECK_THROWS_AS(trajectory_reward({{{0, 0}}, 1}, emb, {Eigen::VectorXd::Zero(2), 1.0}),
                    StructuralError);
}

TEST_CASE("unroll: node counts") {
    CHECK(unroll(uniform_mdp(3, 2, 1)).size() == 1);
    CHECK(unroll(uniform_mdp(3, 2, 1)).num_internal() == 0);
    CHECK(unroll(uniform_mdp(2, 2, 2)).size() == 5);

    const auto big = unroll(uniform_mdp(4, 3, 6));
    CHECK(big.num_leaves() == 248'832);
    for (int h = 1; h <= 6; ++h)
        CHECK(big.layer_end(h) - big.layer_begin(h) ==
              static_cast<NodeId>(std::pow(12.0, h - 1)));
}

TEST_CASE("unroll: capacity error names the layer") {
    try {
        unroll(uniform_mdp(4, 3, 6), {1000, true});
        FAIL("expected a capacity error");
    } catch (const CapacityError& e) {
        CHECK(std::string(e.what()).find("layer") != std::string::npos);
    }
}

TEST_CASE("unroll: leaves equal brute-force reachable trajectories") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto inst = fixture::random_table_instance(3, 2, 4, seed, 0.5);
        const auto tree = unroll(inst.mdp);
        std::set<std::string> from_tree;
        for (NodeId n = tree.first_leaf(); n < static_cast<NodeId>(tree.size()); ++n)
            from_tree.insert(tree.key(n));
        std::set<std::string> brute;
        for (const auto& t : oracle::all_reachable(inst.mdp)) brute.insert(t.key());
        CHECK(from_tree == brute);
        CHECK(from_tree.size() == tree.num_leaves());
        for (NodeId n = 0; n < static_cast<NodeId>(tree.size()); ++n)
            CHECK(tree.find(tree.trajectory(n)) == n);
    }
}

TEST_CASE("unroll: children are contiguous and consistent") {
    const auto inst = fixture::random_table_instance(3, 2, 4, 11);
    const auto tree = unroll(inst.mdp);
    for (NodeId n = 0; n < tree.first_leaf(); ++n)
        for (int a = 0; a < 2; ++a) {
            auto [b, e] = tree.children(n, a);
            double mass = 0.0;
            for (NodeId c = b; c < e; ++c) {
                CHECK(tree.parent(c) == n);
                CHECK(tree.action_in(c) == a);
                CHECK(tree.depth(c) == tree.depth(n) + 1);
                CHECK(tree.child(n, a, tree.state(c)) == c);
                mass += inst.mdp.prob(tree.state(n), a, tree.state(c));
            }
            CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("embedding component bounds hold on every leaf") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto inst = random_mdp(3, 2, 4, seed);
        const auto tree = unroll(inst.mdp);
        for (NodeId n = tree.first_leaf(); n < static_cast<NodeId>(tree.size()); ++n) {
            const Eigen::VectorXd phi = embed(tree.trajectory(n), inst.embedding);
            for (double v : phi)
                CHECK((v == 0.0 || (std::abs(v) >= inst.embedding.lower_bound &&
                                    std::abs(v) <= inst.embedding.upper_bound)));
        }
    }
}

TEST_CASE("leaf_values matches per-trajectory rewards") {
    const auto inst = random_mdp(3, 2, 4, 5);
    const auto tree = unroll(inst.mdp);
    const Eigen::VectorXd leaves = leaf_rewards(tree, inst.embedding, inst.reward);
    for (NodeId n = tree.first_leaf(); n < static_cast<NodeId>(tree.size()); ++n)
        CHECK(leaves(n - tree.first_leaf()) ==
              doctest::Approx(trajectory_reward(tree.trajectory(n), inst.embedding, inst.reward))
                  .epsilon(1e-14));
}

TEST_CASE("policies: totality") {
    const auto tree = unroll(uniform_mdp(2, 2, 3));
    auto p = HistoryPolicy::constant(tree, 1);
    CHECK_NOTHROW(p.validate(tree));
    p.actions[2] = 2;
    CHECK_THROWS_AS(p.validate(tree), PreconditionError);
    p.actions.pop_back();
    CHECK_THROWS_AS(p.validate(tree), PreconditionError);
}

TEST_CASE("simulate: determinism and deterministic transitions") {
    Kernel p = Kernel::Zero(4, 2);
    p(0, 1) = 1;
    p(1, 0) = 1;
    p(2, 0) = 1;
    p(3, 1) = 1;
    const auto mdp = make_mdp(2, 2, 5, 0, p);
    const auto tree = unroll(mdp);
    const auto policy = HistoryPolicy::constant(tree, 0);
    Rng a(1), b(99);
    CHECK(simulate(mdp, tree, policy, a) == simulate(mdp, tree, policy, b));

    const auto inst = random_mdp(3, 2, 5, 3);
    const auto t2 = unroll(inst.mdp);
    Rng pick(4);
    const auto rp = HistoryPolicy::uniform_random(t2, pick);
    Rng r1(77), r2(77);
    for (int i = 0; i < 50; ++i) CHECK(simulate(inst.mdp, t2, rp, r1) == simulate(inst.mdp, t2, rp, r2));
}

TEST_CASE("simulate: successor frequencies") {
    Kernel p(2, 2);
    p << 0.3, 0.7, 0.0, 1.0;
    const auto mdp = make_mdp(2, 1, 2, 0, p);
    const auto tree = unroll(mdp);
    const auto policy = HistoryPolicy::constant(tree, 0);
    Rng rng(2024);
    const int n = 100000;
    int zeros = 0;
    for (int i = 0; i < n; ++i) zeros += simulate(mdp, tree, policy, rng).final_state == 0;
    const double sd = std::sqrt(n * 0.3 * 0.7);
    CHECK(std::abs(zeros - 0.3 * n) <= 3 * sd);
}

TEST_CASE("simulate: path frequencies match path probabilities") {
    const auto inst = fixture::random_table_instance(2, 2, 4, 8, 1.0);
    const auto tree = unroll(inst.mdp);
    const auto fn = fixture::hashed_policy(3, 2);
    const auto policy = oracle::to_tree_policy(tree, fn);
    std::map<std::string, int> hits;
    Rng rng(5);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++hits[simulate(inst.mdp, tree, policy, rng).key()];
    for (const auto& [t, prob] : oracle::enumerate_paths(inst.mdp, fn)) {
        const double sd = std::sqrt(n * prob * (1 - prob));
        CHECK(std::abs(hits[t.key()] - n * prob) <= 3.5 * sd + 1);
    }
}
