#include "rapbrl/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace rapbrl {

// ----------------------------------------------------------------------------
// Appendix example
// ----------------------------------------------------------------------------

namespace {

enum ExampleState { S1, S21, S22, S31, S32, S33, S34, End, kExampleStates };

} // namespace

ExampleInstance example_mdp(bool corrected) {
    constexpr int A = 2;
    Kernel p = Kernel::Zero(kExampleStates * A, kExampleStates);
    for (int a = 0; a < A; ++a) {
        p(S1 * A + a, S21) = 0.5;
        p(S1 * A + a, S22) = 0.5;
        p(S21 * A + a, S31) = 0.1;
        p(S21 * A + a, S32) = 0.9;
        p(S22 * A + a, S33) = 0.1;
        p(S22 * A + a, S34) = 0.9;
        for (int s : {S31, S32, S33, S34, End}) p(s * A + a, End) = 1.0;
    }
    TabularMdp mdp = make_mdp(kExampleStates, A, 4, S1, std::move(p));

    const std::array<double, kExampleStates> second_step{0.0, 0.1, 0.2};
    // Third-step rewards, [state - S31][action].
    std::array<std::array<double, 2>, 4> third =
        corrected ? std::array<std::array<double, 2>, 4>{{{0.5, 0.1}, {0.2, 0.2}, {0.0, 0.4}, {0.5, 0.5}}}
                  : std::array<std::array<double, 2>, 4>{{{0.3, 0.6}, {0.2, 0.2}, {0.4, 0.4}, {0.5, 0.2}}};

    std::map<std::string, Eigen::VectorXd> table;
    for (int a1 = 0; a1 < A; ++a1)
        for (int s2 : {S21, S22})
            for (int a2 = 0; a2 < A; ++a2)
                for (int s3 : s2 == S21 ? std::array{S31, S32} : std::array{S33, S34})
                    for (int a3 = 0; a3 < A; ++a3) {
                        Trajectory t{{{S1, a1}, {s2, a2}, {s3, a3}}, End};
                        table[t.key()] = Eigen::VectorXd::Constant(1, second_step[s2] + third[s3 - S31][a3]);
                    }

    ExampleInstance ex;
    ex.instance.name = corrected ? "example_corrected" : "example";
    ex.instance.embedding = TrajectoryEmbedding::explicit_table(mdp, 1, std::move(table));
    ex.instance.reward = {Eigen::VectorXd::Ones(1), 1.0};
    ex.tree = unroll(mdp);
    ex.instance.mdp = std::move(mdp);
    ex.policy_a = HistoryPolicy::constant(ex.tree, 0);
    ex.policy_b = HistoryPolicy::constant(ex.tree, 0);
    for (NodeId n = ex.tree.layer_begin(3); n < ex.tree.layer_end(3); ++n) ex.policy_b.actions[n] = 1;
    return ex;
}

// ----------------------------------------------------------------------------
// Hard instances
// ----------------------------------------------------------------------------

namespace {

void check_hard_params(const HardCaseParams& q) {
    if (q.chain_length < 2) throw DomainError("hard case: chain length must be at least 2");
    if (!(0.0 < q.alpha && q.alpha < q.mu && q.mu < 1.0 / 3.0))
        throw DomainError("hard case: requires 0 < alpha < mu < 1/3");
    if (!(0.0 < q.eta && q.eta < q.alpha)) throw DomainError("hard case: requires 0 < eta < alpha");
    if (q.num_actions < 1 || q.special_action < 0 || q.special_action >= q.num_actions)
        throw StructuralError("hard case: special action out of range");
    if (!(q.scale > 0.0 && q.rho > 0.0)) throw DomainError("hard case: B and rho must be positive");
}

/// Chain with terminals x1..x_m appended after s_1..s_n; s_n rows left for the caller.
Kernel chain_kernel(const HardCaseParams& q, int terminals) {
    const int n = q.chain_length;
    const int S = n + terminals;
    const int A = q.num_actions;
    const int x1 = n;
    Kernel p = Kernel::Zero(static_cast<Eigen::Index>(S) * A, S);
    for (int a = 0; a < A; ++a) {
        // s_1 also leaks mass to x2 and x3.
        p(0 * A + a, 1) = q.mu;
        p(0 * A + a, x1) = 1.0 - 3.0 * q.mu;
        p(0 * A + a, x1 + 1) = q.mu;
        p(0 * A + a, x1 + 2) = q.mu;
        for (int i = 1; i + 1 < n; ++i) {
            p(i * A + a, i + 1) = q.mu;
            p(i * A + a, x1) = 1.0 - q.mu;
        }
        for (int x = x1; x < S; ++x) p(x * A + a, x) = 1.0;
    }
    return p;
}

Instance finish_hard_case(std::string name, const HardCaseParams& q, Kernel p,
                          Eigen::VectorXd weights) {
    const int n = q.chain_length;
    const int terminals = static_cast<int>(weights.size());
    TabularMdp mdp = make_mdp(n + terminals, q.num_actions, n + 1, 0, std::move(p));
    std::vector<int> xs(terminals);
    for (int i = 0; i < terminals; ++i) xs[i] = n + i;
    Instance inst;
    inst.name = std::move(name);
    inst.embedding = TrajectoryEmbedding::terminal_indicator(mdp, xs, q.scale);
    inst.reward = {weights, weights.norm()};
    inst.mdp = std::move(mdp);
    if (q.scale * weights.maxCoeff() > 1.0 + 1e-12)
        throw ModelValidityError("hard case: B * rho must not exceed 1");
    return inst;
}

} // namespace

Instance hard_case_1(const HardCaseParams& q) {
    check_hard_params(q);
    Kernel p = chain_kernel(q, 3);
    const int n = q.chain_length;
    const int A = q.num_actions;
    const int sn = n - 1;
    for (int a = 0; a < A; ++a) {
        const double eta = a == q.special_action ? q.eta : 0.0;
        p(sn * A + a, n + 1) = 1.0 - q.alpha + eta;
        p(sn * A + a, n + 2) = q.alpha - eta;
    }
    Eigen::VectorXd w(3);
    w << q.rho, 0.8 * q.rho, 0.2 * q.rho;
    return finish_hard_case("hard_case_1", q, std::move(p), std::move(w));
}

Instance hard_case_2(const HardCaseParams& q) {
    check_hard_params(q);
    Kernel p = chain_kernel(q, 4);
    const int n = q.chain_length;
    const int A = q.num_actions;
    const int sn = n - 1;
    for (int a = 0; a < A; ++a) {
        p(sn * A + a, n + 1) = 1.0 - q.alpha;
        p(sn * A + a, a == q.special_action ? n + 2 : n + 3) = q.alpha;
    }
    Eigen::VectorXd w(4);
    w << q.rho, 0.8 * q.rho, 0.2 * q.rho, (0.2 - q.eta) * q.rho;
    return finish_hard_case("hard_case_2", q, std::move(p), std::move(w));
}

double hard_case_1_formula_value(const HardCaseParams& q) {
    return ((q.alpha - q.eta) * 0.2 + q.eta * 0.8) / q.alpha * q.scale * q.rho;
}

double hard_case_2_formula_gap(const HardCaseParams& q) { return 0.2 * q.eta * q.scale * q.rho; }

// ----------------------------------------------------------------------------
// Random instances
// ----------------------------------------------------------------------------

Instance random_mdp(int num_states, int num_actions, int horizon, std::uint64_t seed,
                    EmbeddingKind kind) {
    if (num_states < 1 || num_actions < 1 || horizon < 2)
        throw StructuralError("random_mdp: needs S, A >= 1 and H >= 2");
    if (kind == EmbeddingKind::ExplicitTable)
        throw UnsupportedError("random_mdp: table embeddings are not generated");
    Rng rng(seed);
    const int S = num_states;
    const int A = num_actions;

    Kernel p(static_cast<Eigen::Index>(S) * A, S);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        for (int s = 0; s < S; ++s) p(r, s) = -std::log1p(-uniform01(rng));
        p.row(r) /= p.row(r).sum();
    }
    TabularMdp mdp = make_mdp(S, A, horizon, 0, std::move(p));

    Instance inst;
    inst.name = "random";
    Eigen::VectorXd w;
    double best = 0.0;
    if (kind == EmbeddingKind::StateActionCount) {
        inst.embedding = TrajectoryEmbedding::state_action_count(mdp);
        w.resize(static_cast<Eigen::Index>(S) * A);
        for (auto& x : w) x = uniform01(rng);
        // Largest path sum by backward induction over (depth, state).
        Eigen::VectorXd next = Eigen::VectorXd::Zero(S);
        for (int depth = horizon - 1; depth >= 1; --depth) {
            Eigen::VectorXd here = Eigen::VectorXd::Constant(S, -std::numeric_limits<double>::infinity());
            for (int s = 0; s < S; ++s)
                for (int a = 0; a < A; ++a) {
                    double tail = -std::numeric_limits<double>::infinity();
                    for (int s2 = 0; s2 < S; ++s2)
                        if (mdp.prob(s, a, s2) > 0.0) tail = std::max(tail, next(s2));
                    here(s) = std::max(here(s), w(s * A + a) + tail);
                }
            next = here;
        }
        best = next(mdp.initial_state);
    } else {
        std::vector<int> all(S);
        for (int s = 0; s < S; ++s) all[s] = s;
        inst.embedding = TrajectoryEmbedding::terminal_indicator(mdp, all, 1.0);
        w.resize(S);
        for (auto& x : w) x = uniform01(rng);
        // Every state is reachable at the last step because Dirichlet rows are positive.
        best = w.maxCoeff();
    }
    if (best > 0.0) w /= best;
    inst.reward = {w, std::max(1.0, w.norm())};
    inst.mdp = std::move(mdp);
    return inst;
}

} // namespace rapbrl
