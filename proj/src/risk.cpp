#include "rapbrl/risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rapbrl {

// ----------------------------------------------------------------------------
// FiniteDistribution
// ----------------------------------------------------------------------------

FiniteDistribution::FiniteDistribution(std::vector<double> atoms, std::vector<double> probs) {
    if (atoms.size() != probs.size())
        throw StructuralError("distribution: atoms and probabilities differ in length");
    if (atoms.empty()) throw PreconditionError("distribution: empty support");

    std::vector<std::size_t> order(atoms.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return atoms[i] < atoms[j]; });

    std::vector<double> xs;
    std::vector<double> ps;
    double total = 0.0;
    for (std::size_t i : order) {
        const double p = probs[i];
        if (!(p >= 0.0 && p <= 1.0) || !std::isfinite(atoms[i]))
            throw DomainError("distribution: probability outside [0,1] or non-finite atom");
        total += p;
        if (p == 0.0) continue;
        if (!xs.empty() && atoms[i] - xs.back() <= kAtomMergeTolerance)
            ps.back() += p;
        else {
            xs.push_back(atoms[i]);
            ps.push_back(p);
        }
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw DomainError("distribution: probabilities sum to " + std::to_string(total));
    if (xs.empty()) throw PreconditionError("distribution: no atom has positive probability");
    atoms_ = Eigen::Map<Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    probs_ = Eigen::Map<Eigen::VectorXd>(ps.data(), static_cast<Eigen::Index>(ps.size()));
}

FiniteDistribution FiniteDistribution::point_mass(double value) { return {{value}, {1.0}}; }

// ----------------------------------------------------------------------------
// QuantileWeight
// ----------------------------------------------------------------------------

QuantileWeight QuantileWeight::identity() { return {}; }

QuantileWeight QuantileWeight::cvar(double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("CVaR level must lie in (0, 1]");
    QuantileWeight g;
    g.kind_ = Kind::CVaR;
    g.alpha_ = alpha;
    g.lipschitz_ = 1.0 / alpha;
    return g;
}

QuantileWeight QuantileWeight::piecewise_linear(std::vector<std::pair<double, double>> knots) {
    if (knots.size() < 2 || knots.front() != std::pair{0.0, 0.0} ||
        knots.back() != std::pair{1.0, 1.0})
        throw DomainError("quantile weight knots must run from (0,0) to (1,1)");
    double lipschitz = 0.0;
    for (std::size_t i = 1; i < knots.size(); ++i) {
        const double dt = knots[i].first - knots[i - 1].first;
        const double dg = knots[i].second - knots[i - 1].second;
        if (!(dt > 0.0) || dg < 0.0)
            throw DomainError("quantile weight must be nondecreasing on increasing knots");
        lipschitz = std::max(lipschitz, dg / dt);
    }
    QuantileWeight g;
    g.kind_ = Kind::PiecewiseLinear;
    g.lipschitz_ = lipschitz;
    g.knots_ = std::move(knots);
    return g;
}

double QuantileWeight::operator()(double tau) const {
    tau = std::clamp(tau, 0.0, 1.0);
    switch (kind_) {
    case Kind::Identity:
        return tau;
    case Kind::CVaR:
        return std::min(tau / alpha_, 1.0);
    case Kind::PiecewiseLinear: {
        auto it = std::upper_bound(knots_.begin(), knots_.end(), tau,
                                   [](double t, const auto& k) { return t < k.first; });
        if (it == knots_.end()) return 1.0;
        const auto& [t1, g1] = *it;
        const auto& [t0, g0] = *(it - 1);
        return g0 + (g1 - g0) * (tau - t0) / (t1 - t0);
    }
    }
    return tau;
}

// ----------------------------------------------------------------------------
// Risk functionals
// ----------------------------------------------------------------------------

double quantile(const FiniteDistribution& dist, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw DomainError("quantile level must lie in (0, 1]");
    double cdf = 0.0;
    const Eigen::Index last = dist.size() - 1;
    for (Eigen::Index i = 0; i < last; ++i) {
        cdf += dist.probs()(i);
        if (cdf >= tau - 1e-12) return dist.atoms()(i);
    }
    return dist.atoms()(last);
}

double risk_value(const FiniteDistribution& dist, const QuantileWeight& g) {
    double value = 0.0;
    double cdf = 0.0;
    double g_prev = 0.0;
    const Eigen::Index last = dist.size() - 1;
    for (Eigen::Index i = 0; i <= last; ++i) {
        cdf = i == last ? 1.0 : cdf + dist.probs()(i);
        const double g_now = g(cdf);
        value += dist.atoms()(i) * (g_now - g_prev);
        g_prev = g_now;
    }
    return value;
}

double risk_value(std::span<const double> values, std::span<const double> probs,
                  const QuantileWeight& g) {
    thread_local std::vector<std::size_t> order;
    order.clear();
    for (std::size_t i = 0; i < values.size(); ++i)
        if (probs[i] > 0.0) order.push_back(i);
    std::sort(order.begin(), order.end(),
              [&](auto i, auto j) { return values[i] < values[j]; });
    double value = 0.0;
    double cdf = 0.0;
    double g_prev = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        cdf = k + 1 == order.size() ? 1.0 : cdf + probs[order[k]];
        const double g_now = g(cdf);
        value += values[order[k]] * (g_now - g_prev);
        g_prev = g_now;
    }
    return value;
}

double cvar(const FiniteDistribution& dist, double alpha) {
    return risk_value(dist, QuantileWeight::cvar(alpha));
}

double expected_shortfall(const FiniteDistribution& dist, double rho) {
    return ((rho - dist.atoms().array()).max(0.0) * dist.probs().array()).sum();
}

double cvar_sup_form(const FiniteDistribution& dist, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("CVaR level must lie in (0, 1]");
    double best = -std::numeric_limits<double>::infinity();
    double cdf = 0.0;
    double partial_mean = 0.0;
    for (Eigen::Index j = 0; j < dist.size(); ++j) {
        const double rho = dist.atoms()(j);
        cdf += dist.probs()(j);
        partial_mean += dist.probs()(j) * rho;
        // E[(rho - X)^+] over atoms at or below rho.
        best = std::max(best, rho - (rho * cdf - partial_mean) / alpha);
    }
    return best;
}

// ----------------------------------------------------------------------------
// Tree evaluation
// ----------------------------------------------------------------------------

namespace detail {

void gather_children(const HistoryTree& tree, const Kernel& kernel, NodeId n, int action,
                     const Eigen::VectorXd& node_values, std::vector<double>& values,
                     std::vector<double>& probs) {
    values.clear();
    probs.clear();
    const auto row = static_cast<Eigen::Index>(tree.state(n)) * tree.num_actions() + action;
    const auto [first, last] = tree.children(n, action);
    for (NodeId c = first; c < last; ++c) {
        values.push_back(node_values(c));
        probs.push_back(kernel(row, tree.state(c)));
    }
}

} // namespace detail

namespace {

void check_shapes(const HistoryTree& tree, const Kernel& kernel, const Eigen::VectorXd& leaves) {
    if (kernel.rows() != static_cast<Eigen::Index>(tree.num_states()) * tree.num_actions() ||
        kernel.cols() != tree.num_states())
        throw StructuralError("kernel shape does not match the tree");
    if (leaves.size() != static_cast<Eigen::Index>(tree.num_leaves()))
        throw StructuralError("leaf reward count does not match the tree");
}

Eigen::VectorXd with_leaves(const HistoryTree& tree, const Eigen::VectorXd& leaves) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tree.size()));
    v.tail(leaves.size()) = leaves;
    return v;
}

constexpr double kTieTolerance = 1e-12;

} // namespace

PolicyValue nested_value(const HistoryTree& tree, const Kernel& kernel,
                         const Eigen::VectorXd& leaf_rewards, const HistoryPolicy& policy,
                         const QuantileWeight& g) {
    check_shapes(tree, kernel, leaf_rewards);
    policy.validate(tree);
    Eigen::VectorXd v = with_leaves(tree, leaf_rewards);
    std::vector<double> values;
    std::vector<double> probs;
    for (NodeId n = tree.first_leaf() - 1; n >= 0; --n) {
        detail::gather_children(tree, kernel, n, policy(n), v, values, probs);
        v(n) = risk_value(values, probs, g);
    }
    return {v(0), policy, std::move(v)};
}

FiniteDistribution static_distribution(const HistoryTree& tree, const Kernel& kernel,
                                       const Eigen::VectorXd& leaf_rewards,
                                       const HistoryPolicy& policy) {
    check_shapes(tree, kernel, leaf_rewards);
    policy.validate(tree);
    std::vector<double> reach(tree.size(), 0.0);
    reach[0] = 1.0;
    const int A = tree.num_actions();
    for (NodeId n = 0; n < tree.first_leaf(); ++n) {
        if (reach[n] == 0.0) continue;
        const int a = policy(n);
        const auto row = static_cast<Eigen::Index>(tree.state(n)) * A + a;
        const auto [first, last] = tree.children(n, a);
        for (NodeId c = first; c < last; ++c) reach[c] = reach[n] * kernel(row, tree.state(c));
    }
    std::vector<double> atoms;
    std::vector<double> probs;
    const NodeId first_leaf = tree.first_leaf();
    for (NodeId n = first_leaf; n < static_cast<NodeId>(tree.size()); ++n) {
        if (reach[n] == 0.0) continue;
        atoms.push_back(leaf_rewards(n - first_leaf));
        probs.push_back(reach[n]);
    }
    return {std::move(atoms), std::move(probs)};
}

PolicyValue static_value(const HistoryTree& tree, const Kernel& kernel,
                         const Eigen::VectorXd& leaf_rewards, const HistoryPolicy& policy,
                         const QuantileWeight& g) {
    return {risk_value(static_distribution(tree, kernel, leaf_rewards, policy), g), policy, {}};
}

PolicyValue optimal_nested_policy(const HistoryTree& tree, const Kernel& kernel,
                                  const Eigen::VectorXd& leaf_rewards, const QuantileWeight& g) {
    check_shapes(tree, kernel, leaf_rewards);
    Eigen::VectorXd v = with_leaves(tree, leaf_rewards);
    HistoryPolicy policy{std::vector<int>(tree.num_internal(), 0)};
    std::vector<double> values;
    std::vector<double> probs;
    for (NodeId n = tree.first_leaf() - 1; n >= 0; --n) {
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < tree.num_actions(); ++a) {
            detail::gather_children(tree, kernel, n, a, v, values, probs);
            const double q = risk_value(values, probs, g);
            if (q > best + kTieTolerance) {
                best = q;
                policy.actions[n] = a;
            }
        }
        v(n) = best;
    }
    return {v(0), std::move(policy), std::move(v)};
}

// ----------------------------------------------------------------------------
// Static CVaR planning
// ----------------------------------------------------------------------------

std::vector<double> rho_grid(std::span<const double> values, const StaticPlanOptions& options) {
    std::vector<double> grid(values.begin(), values.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end(),
                           [](double a, double b) { return b - a <= kAtomMergeTolerance; }),
               grid.end());
    if (grid.size() <= options.grid_cap || grid.empty()) return grid;

    const double lo = grid.front();
    const double hi = grid.back();
    const std::size_t m = std::max<std::size_t>(options.fallback_resolution, 1);
    std::vector<double> uniform(m);
    for (std::size_t i = 0; i < m; ++i)
        uniform[i] = m == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m - 1);
    return uniform;
}

namespace {

/// Depth-first evaluation of min over policies of E[(rho - Z)^+] for every rho in a grid.
class ShortfallRecursion {
public:
    ShortfallRecursion(const HistoryTree& tree, const Kernel& kernel, const Eigen::VectorXd& leaves,
                       Eigen::ArrayXd grid)
        : tree_(tree), kernel_(kernel), leaves_(leaves), grid_(std::move(grid)) {
        const auto g = grid_.size();
        for (int d = 0; d <= tree.horizon(); ++d) {
            best_.emplace_back(g);
            acc_.emplace_back(g);
            child_.emplace_back(g);
        }
    }

    Eigen::ArrayXd root() {
        Eigen::ArrayXd out(grid_.size());
        if (tree_.horizon() == 1)
            out = (grid_ - leaves_(0)).max(0.0);
        else
            eval(0, out);
        return out;
    }

private:
    void eval(NodeId n, Eigen::ArrayXd& out) {
        const int d = tree_.depth(n);
        auto& best = best_[d];
        auto& acc = acc_[d];
        auto& tmp = child_[d];
        const NodeId first_leaf = tree_.first_leaf();
        best.setConstant(std::numeric_limits<double>::infinity());
        for (int a = 0; a < tree_.num_actions(); ++a) {
            const auto row = static_cast<Eigen::Index>(tree_.state(n)) * tree_.num_actions() + a;
            acc.setZero();
            const auto [first, last] = tree_.children(n, a);
            for (NodeId c = first; c < last; ++c) {
                const double p = kernel_(row, tree_.state(c));
                if (p == 0.0) continue;
                if (c >= first_leaf) {
                    acc += p * (grid_ - leaves_(c - first_leaf)).max(0.0);
                } else {
                    eval(c, tmp);
                    acc += p * tmp;
                }
            }
            best = best.min(acc);
        }
        out = best;
    }

    const HistoryTree& tree_;
    const Kernel& kernel_;
    const Eigen::VectorXd& leaves_;
    Eigen::ArrayXd grid_;
    std::vector<Eigen::ArrayXd> best_;
    std::vector<Eigen::ArrayXd> acc_;
    std::vector<Eigen::ArrayXd> child_;
};

/// Shortfall-minimizing policy at a fixed rho.
HistoryPolicy shortfall_policy(const HistoryTree& tree, const Kernel& kernel,
                               const Eigen::VectorXd& leaves, double rho) {
    Eigen::VectorXd v = with_leaves(tree, (rho - leaves.array()).max(0.0).matrix());
    HistoryPolicy policy{std::vector<int>(tree.num_internal(), 0)};
    std::vector<double> values;
    std::vector<double> probs;
    for (NodeId n = tree.first_leaf() - 1; n >= 0; --n) {
        double best = std::numeric_limits<double>::infinity();
        for (int a = 0; a < tree.num_actions(); ++a) {
            detail::gather_children(tree, kernel, n, a, v, values, probs);
            double q = 0.0;
            for (std::size_t i = 0; i < values.size(); ++i) q += probs[i] * values[i];
            if (q < best - kTieTolerance) {
                best = q;
                policy.actions[n] = a;
            }
        }
        v(n) = best;
    }
    return policy;
}

} // namespace

PolicyValue optimal_static_policy(const HistoryTree& tree, const Kernel& kernel,
                                  const Eigen::VectorXd& leaf_rewards, const QuantileWeight& g,
                                  const StaticPlanOptions& options) {
    if (g.kind() == QuantileWeight::Kind::PiecewiseLinear)
        throw UnsupportedError("static planning is only exact for CVaR weightings");
    check_shapes(tree, kernel, leaf_rewards);
    const double alpha = g.alpha();

    const auto grid = rho_grid({leaf_rewards.data(), static_cast<std::size_t>(leaf_rewards.size())},
                               options);
    if (static_cast<double>(tree.size()) * static_cast<double>(grid.size()) > options.work_cap)
        throw CapacityError("static planner: tree x rho grid (" + std::to_string(tree.size()) + " x " +
                            std::to_string(grid.size()) + ") exceeds the work cap");

    const Eigen::ArrayXd rho =
        Eigen::Map<const Eigen::ArrayXd>(grid.data(), static_cast<Eigen::Index>(grid.size()));
    ShortfallRecursion recursion(tree, kernel, leaf_rewards, rho);
    const Eigen::ArrayXd objective = rho - recursion.root() / alpha;
    Eigen::Index best = 0;
    objective.maxCoeff(&best);

    HistoryPolicy policy = shortfall_policy(tree, kernel, leaf_rewards, rho(best));
    const double value =
        risk_value(static_distribution(tree, kernel, leaf_rewards, policy), g);
    return {value, std::move(policy), {}};
}

PolicyValue evaluate(const HistoryTree& tree, const Kernel& kernel,
                     const Eigen::VectorXd& leaf_rewards, const HistoryPolicy& policy,
                     const Objective& objective) {
    return objective.kind == ObjectiveKind::Nested
               ? nested_value(tree, kernel, leaf_rewards, policy, objective.weight)
               : static_value(tree, kernel, leaf_rewards, policy, objective.weight);
}

PolicyValue optimal_policy(const HistoryTree& tree, const Kernel& kernel,
                           const Eigen::VectorXd& leaf_rewards, const Objective& objective,
                           const StaticPlanOptions& options) {
    return objective.kind == ObjectiveKind::Nested
               ? optimal_nested_policy(tree, kernel, leaf_rewards, objective.weight)
               : optimal_static_policy(tree, kernel, leaf_rewards, objective.weight, options);
}

// ----------------------------------------------------------------------------
// Convenience overloads
// ----------------------------------------------------------------------------

PolicyValue nested_value(const TabularMdp& mdp, const TrajectoryEmbedding& embedding,
                         const RewardModel& model, const HistoryPolicy& policy,
                         const QuantileWeight& g) {
    const auto tree = unroll(mdp);
    return nested_value(tree, mdp.transitions, leaf_rewards(tree, embedding, model), policy, g);
}

FiniteDistribution static_distribution(const TabularMdp& mdp, const TrajectoryEmbedding& embedding,
                                       const RewardModel& model, const HistoryPolicy& policy) {
    const auto tree = unroll(mdp);
    return static_distribution(tree, mdp.transitions, leaf_rewards(tree, embedding, model), policy);
}

PolicyValue static_value(const TabularMdp& mdp, const TrajectoryEmbedding& embedding,
                         const RewardModel& model, const HistoryPolicy& policy,
                         const QuantileWeight& g) {
    const auto tree = unroll(mdp);
    return static_value(tree, mdp.transitions, leaf_rewards(tree, embedding, model), policy, g);
}

PolicyValue optimal_nested_policy(const TabularMdp& mdp, const TrajectoryEmbedding& embedding,
                                  const RewardModel& model, const QuantileWeight& g) {
    const auto tree = unroll(mdp);
    return optimal_nested_policy(tree, mdp.transitions, leaf_rewards(tree, embedding, model), g);
}

PolicyValue optimal_static_policy(const TabularMdp& mdp, const TrajectoryEmbedding& embedding,
                                  const RewardModel& model, const QuantileWeight& g,
                                  const StaticPlanOptions& options) {
    const auto tree = unroll(mdp);
    return optimal_static_policy(tree, mdp.transitions, leaf_rewards(tree, embedding, model), g,
                                 options);
}

} // namespace rapbrl
