#include "rapbrl/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rapbrl {

// ----------------------------------------------------------------------------
// Transitions
// ----------------------------------------------------------------------------

double transition_radius(double n, int num_states, int episodes, int horizon, int num_actions,
                         double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must lie in (0, 1)");
    if (n <= 0.0) return 2.0;
    const double log_term = std::log(2.0 * episodes * horizon * num_states * num_actions / delta);
    return std::min(2.0, std::sqrt(2.0 * num_states * log_term / n));
}

void count_transitions(const Trajectory& traj, int num_actions, Eigen::MatrixXd& successor_counts) {
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
        const auto [s, a] = traj.steps[i];
        const int next = i + 1 < traj.steps.size() ? traj.steps[i + 1].first : traj.final_state;
        successor_counts(static_cast<Eigen::Index>(s) * num_actions + a, next) += 1.0;
    }
}

TransitionEstimate estimate_transitions(const Eigen::MatrixXd& successor_counts, int num_states,
                                        int num_actions, int episodes, int horizon, double delta) {
    TransitionEstimate est;
    est.num_states = num_states;
    est.num_actions = num_actions;
    est.successor_counts = successor_counts;
    est.visits = successor_counts.rowwise().sum();
    est.kernel.resize(successor_counts.rows(), num_states);
    est.radius.resize(successor_counts.rows());
    for (Eigen::Index r = 0; r < successor_counts.rows(); ++r) {
        const double n = est.visits(r);
        if (n > 0.0)
            est.kernel.row(r) = successor_counts.row(r) / n;
        else
            est.kernel.row(r).setConstant(1.0 / num_states);
        est.radius(r) = transition_radius(n, num_states, episodes, horizon, num_actions, delta);
    }
    return est;
}

// ----------------------------------------------------------------------------
// Reward fitting
// ----------------------------------------------------------------------------

namespace {

/// sigma and sigma' evaluated elementwise.
void link_arrays(const LinkFunction& link, const Eigen::ArrayXd& x, Eigen::ArrayXd& value,
                 Eigen::ArrayXd& slope) {
    if (link.kind() == LinkFunction::Kind::Logistic) {
        value = 1.0 / (1.0 + (-x).exp());
        slope = value * (1.0 - value);
        return;
    }
    value.resize(x.size());
    slope.resize(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        value(i) = link(x(i));
        slope(i) = link.derivative(x(i));
    }
}

Eigen::VectorXd project_ball(Eigen::VectorXd w, double radius) {
    const double norm = w.norm();
    if (norm > radius) w *= radius / norm;
    return w;
}

} // namespace

double preference_loss(const Eigen::Ref<const Eigen::MatrixXd>& diffs,
                       const Eigen::Ref<const Eigen::VectorXd>& outcomes, const LinkFunction& link,
                       const Eigen::VectorXd& weights) {
    Eigen::ArrayXd value;
    Eigen::ArrayXd slope;
    link_arrays(link, (diffs.transpose() * weights).array(), value, slope);
    return (value - outcomes.array()).square().sum();
}

RewardFit fit_reward(const Eigen::Ref<const Eigen::MatrixXd>& diffs,
                     const Eigen::Ref<const Eigen::VectorXd>& outcomes, const LinkFunction& link,
                     double rho_w, double embedding_bound, const OptimizerSettings& settings,
                     const Eigen::VectorXd* init) {
    const Eigen::Index k = diffs.cols();
    if (k == 0) throw PreconditionError("fit_reward: no preference records");
    if (outcomes.size() != k) throw StructuralError("fit_reward: one outcome per record required");

    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(diffs.rows());
    RewardFit fit;
    fit.initial_loss = preference_loss(diffs, outcomes, link, zero);

    Eigen::VectorXd w = init != nullptr ? project_ball(*init, rho_w) : zero;
    Eigen::ArrayXd value;
    Eigen::ArrayXd slope;
    auto evaluate = [&](const Eigen::VectorXd& at) {
        link_arrays(link, (diffs.transpose() * at).array(), value, slope);
        return (value - outcomes.array()).square().sum();
    };

    double loss = evaluate(w);
    fit.trace.push_back(loss);
    double step = settings.step_size > 0.0
                      ? settings.step_size
                      : 0.5 / (link.lipschitz() * link.lipschitz() * embedding_bound *
                               embedding_bound * static_cast<double>(k));

    Eigen::VectorXd grad = 2.0 * diffs * ((value - outcomes.array()) * slope).matrix();
    for (int it = 0; it < settings.max_iterations; ++it) {
        if (grad.squaredNorm() == 0.0) break;
        const Eigen::VectorXd candidate = project_ball(w - step * grad, rho_w);
        const double candidate_loss = evaluate(candidate);
        ++fit.iterations;
        if (candidate_loss <= loss) {
            const double improvement = loss - candidate_loss;
            w = candidate;
            loss = candidate_loss;
            fit.trace.push_back(loss);
            grad = 2.0 * diffs * ((value - outcomes.array()) * slope).matrix();
            step *= 1.2;
            if (improvement < settings.tolerance) break;
        } else {
            step *= 0.5;
            if (step * std::sqrt(grad.squaredNorm()) < 1e-15 * (1.0 + w.norm())) break;
        }
    }

    if (loss > fit.initial_loss) {
        w = zero;
        loss = fit.initial_loss;
        fit.trace.push_back(loss);
    }
    fit.weights = std::move(w);
    fit.loss = loss;
    return fit;
}

double reward_beta(int k, int dim, double embedding_bound, double rho_w, double delta,
                   double c_beta) {
    if (k < 1) throw PreconditionError("reward_beta: needs at least one episode");
    if (!(delta > 0.0 && delta <= 1.0)) throw DomainError("delta must lie in (0, 1]");
    if (!(c_beta > 0.0)) throw DomainError("c_beta must be positive");
    return c_beta * (dim * std::log(k * (1.0 + 2.0 * embedding_bound * rho_w)) - std::log(delta));
}

WeightBox WeightBox::full(int dim, double rho_w) {
    return {Eigen::VectorXd::Constant(dim, -rho_w), Eigen::VectorXd::Constant(dim, rho_w)};
}

bool WeightBox::contains(const Eigen::VectorXd& w, double tol) const {
    return w.size() == lower.size() && (w.array() >= lower.array() - tol).all() &&
           (w.array() <= upper.array() + tol).all();
}

WeightBox weight_intervals(const Eigen::VectorXd& w_hat, double beta,
                           const Eigen::VectorXd& dim_counts, double kappa, double lower_bound,
                           double rho_w, const WeightBox* previous, bool* reset) {
    if (!(kappa > 0.0) || !(lower_bound > 0.0))
        throw DomainError("weight_intervals: kappa and b must be positive");
    if (dim_counts.size() != w_hat.size())
        throw StructuralError("weight_intervals: one count per dimension required");
    if (reset != nullptr) *reset = false;

    const Eigen::ArrayXd half =
        (beta / dim_counts.array().max(1.0)).sqrt() / (kappa * lower_bound);
    WeightBox box{(w_hat.array() - half).max(-rho_w).matrix(),
                  (w_hat.array() + half).min(rho_w).matrix()};
    if (previous == nullptr || previous->lower.size() != w_hat.size()) return box;

    for (Eigen::Index d = 0; d < w_hat.size(); ++d) {
        const double lo = std::max(box.lower(d), previous->lower(d));
        const double hi = std::min(box.upper(d), previous->upper(d));
        if (lo > hi) {
            if (reset != nullptr) *reset = true;
            continue;
        }
        box.lower(d) = lo;
        box.upper(d) = hi;
    }
    return box;
}

// ----------------------------------------------------------------------------
// Per-node optimism
// ----------------------------------------------------------------------------

namespace {

/// Scratch buffers for one node's successors.
struct NodeScratch {
    std::vector<double> values;
    std::vector<double> probs;
    std::vector<double> shifted;
    std::vector<int> order;
};

void sort_order(std::span<const double> values, std::vector<int>& order) {
    const int m = static_cast<int>(values.size());
    order.resize(m);
    for (int i = 0; i < m; ++i) {
        int j = i;
        while (j > 0 && values[order[j - 1]] > values[i]) {
            order[j] = order[j - 1];
            --j;
        }
        order[j] = i;
    }
}

/// Mass shift on sorted successors (order ascending by value).
void shift_sorted(std::span<double> probs, const std::vector<int>& order, double radius,
                  Direction direction) {
    const int m = static_cast<int>(order.size());
    if (m < 2 || radius <= 0.0) return;
    const bool up = direction == Direction::Upper;
    const int target = up ? order[m - 1] : order[0];
    double budget = std::min(0.5 * radius, 1.0 - probs[target]);
    for (int k = 0; k < m - 1 && budget > 0.0; ++k) {
        const int source = up ? order[k] : order[m - 1 - k];
        const double take = std::min(probs[source], budget);
        probs[source] -= take;
        probs[target] += take;
        budget -= take;
    }
}

/// Phi of the shifted successor law.
double shifted_risk(NodeScratch& s, double radius, Direction direction, const QuantileWeight& g) {
    sort_order(s.values, s.order);
    s.shifted = s.probs;
    shift_sorted(s.shifted, s.order, radius, direction);
    int last = -1;
    for (int k = static_cast<int>(s.order.size()) - 1; k >= 0; --k)
        if (s.shifted[s.order[k]] > 0.0) {
            last = k;
            break;
        }
    double value = 0.0;
    double cdf = 0.0;
    double g_prev = 0.0;
    for (int k = 0; k <= last; ++k) {
        const int i = s.order[k];
        if (s.shifted[i] <= 0.0) continue;
        cdf = k == last ? 1.0 : cdf + s.shifted[i];
        const double g_now = g(cdf);
        value += s.values[i] * (g_now - g_prev);
        g_prev = g_now;
    }
    return value;
}

/// Expectation of the shifted successor law.
double shifted_mean(NodeScratch& s, double radius, Direction direction) {
    sort_order(s.values, s.order);
    s.shifted = s.probs;
    shift_sorted(s.shifted, s.order, radius, direction);
    double value = 0.0;
    for (std::size_t i = 0; i < s.values.size(); ++i) value += s.shifted[i] * s.values[i];
    return value;
}

Eigen::VectorXd with_leaves(const HistoryTree& tree, const Eigen::VectorXd& leaves) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tree.size()));
    v.tail(leaves.size()) = leaves;
    return v;
}

double radius_of(const HistoryTree& tree, const ConfidenceModel& model, NodeId n, int a) {
    return model.radius(static_cast<Eigen::Index>(tree.state(n)) * tree.num_actions() + a);
}

void check_model(const HistoryTree& tree, const ConfidenceModel& model) {
    const auto rows = static_cast<Eigen::Index>(tree.num_states()) * tree.num_actions();
    if (model.kernel.rows() != rows || model.kernel.cols() != tree.num_states() ||
        model.radius.size() != rows)
        throw StructuralError("confidence model shape does not match the tree");
}

enum class ActionRule { Max, Min, Fixed };

constexpr double kTie = 1e-12;

/// Nested recursion with per-node mass shifts; actions maximized, minimized or fixed.
PolicyValue nested_pass(const HistoryTree& tree, const ConfidenceModel& model,
                        const Eigen::VectorXd& leaves, const QuantileWeight& g, Direction shift,
                        ActionRule rule, const HistoryPolicy* fixed) {
    Eigen::VectorXd v = with_leaves(tree, leaves);
    HistoryPolicy policy{std::vector<int>(tree.num_internal(), 0)};
    NodeScratch s;
    for (NodeId n = tree.first_leaf() - 1; n >= 0; --n) {
        if (rule == ActionRule::Fixed) {
            const int a = (*fixed)(n);
            detail::gather_children(tree, model.kernel, n, a, v, s.values, s.probs);
            v(n) = shifted_risk(s, radius_of(tree, model, n, a), shift, g);
            policy.actions[n] = a;
            continue;
        }
        const bool maximize = rule == ActionRule::Max;
        double best = maximize ? -std::numeric_limits<double>::infinity()
                               : std::numeric_limits<double>::infinity();
        for (int a = 0; a < tree.num_actions(); ++a) {
            detail::gather_children(tree, model.kernel, n, a, v, s.values, s.probs);
            const double q = shifted_risk(s, radius_of(tree, model, n, a), shift, g);
            if (maximize ? q > best + kTie : q < best - kTie) {
                best = q;
                policy.actions[n] = a;
            }
        }
        v(n) = best;
    }
    return {v(0), std::move(policy), std::move(v)};
}

/// Root shortfall E[(rho - Z)^+] with per-node mass shifts; `shift` acts on shortfall values.
double shortfall_pass(const HistoryTree& tree, const ConfidenceModel& model,
                      const Eigen::VectorXd& leaves, double rho, Direction shift, ActionRule rule,
                      const HistoryPolicy* fixed, HistoryPolicy* out_policy) {
    Eigen::VectorXd v = with_leaves(tree, (rho - leaves.array()).max(0.0).matrix());
    if (out_policy != nullptr) out_policy->actions.assign(tree.num_internal(), 0);
    NodeScratch s;
    for (NodeId n = tree.first_leaf() - 1; n >= 0; --n) {
        if (rule == ActionRule::Fixed) {
            const int a = (*fixed)(n);
            detail::gather_children(tree, model.kernel, n, a, v, s.values, s.probs);
            v(n) = shifted_mean(s, radius_of(tree, model, n, a), shift);
            continue;
        }
        const bool maximize = rule == ActionRule::Max;
        double best = maximize ? -std::numeric_limits<double>::infinity()
                               : std::numeric_limits<double>::infinity();
        int best_a = 0;
        for (int a = 0; a < tree.num_actions(); ++a) {
            detail::gather_children(tree, model.kernel, n, a, v, s.values, s.probs);
            const double q = shifted_mean(s, radius_of(tree, model, n, a), shift);
            if (maximize ? q > best + kTie : q < best - kTie) {
                best = q;
                best_a = a;
            }
        }
        v(n) = best;
        if (out_policy != nullptr) out_policy->actions[n] = best_a;
    }
    return v(0);
}

std::vector<double> checked_grid(const HistoryTree& tree, const Eigen::VectorXd& a,
                                 const Eigen::VectorXd* b, const StaticPlanOptions& options) {
    std::vector<double> values(a.data(), a.data() + a.size());
    if (b != nullptr) values.insert(values.end(), b->data(), b->data() + b->size());
    auto grid = rho_grid(values, options);
    if (static_cast<double>(tree.size()) * static_cast<double>(grid.size()) > options.work_cap)
        throw CapacityError("static optimism: tree x rho grid exceeds the work cap");
    return grid;
}

/// max over the grid of rho - shortfall(rho) / alpha, with the policy at the maximizer.
PolicyValue static_sup(const HistoryTree& tree, const ConfidenceModel& model,
                       const Eigen::VectorXd& leaves, double alpha, Direction shift,
                       ActionRule rule, const HistoryPolicy* fixed,
                       const StaticPlanOptions& options) {
    const auto grid = checked_grid(tree, leaves, nullptr, options);
    double best = -std::numeric_limits<double>::infinity();
    double best_rho = grid.front();
    for (double rho : grid) {
        const double j = rho - shortfall_pass(tree, model, leaves, rho, shift, rule, fixed, nullptr) / alpha;
        if (j > best + kTie) {
            best = j;
            best_rho = rho;
        }
    }
    PolicyValue out;
    out.value = best;
    if (rule == ActionRule::Fixed)
        out.policy = *fixed;
    else
        shortfall_pass(tree, model, leaves, best_rho, shift, rule, fixed, &out.policy);
    return out;
}

void require_nonnegative(const TrajectoryEmbedding& embedding) {
    if (!embedding.nonnegative())
        throw UnsupportedError("optimistic planning needs a nonnegative trajectory embedding");
}

const QuantileWeight& static_weight(const Objective& objective) {
    if (objective.weight.kind() == QuantileWeight::Kind::PiecewiseLinear)
        throw UnsupportedError("static planning is only exact for CVaR weightings");
    return objective.weight;
}

} // namespace

void shift_mass(std::span<const double> values, std::span<double> probs, double radius,
                Direction direction) {
    if (values.size() != probs.size()) throw StructuralError("shift_mass: size mismatch");
    std::vector<int> order;
    sort_order(values, order);
    shift_sorted(probs, order, radius, direction);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> leaf_bounds(const HistoryTree& tree,
                                                        const TrajectoryEmbedding& embedding,
                                                        const WeightBox& box) {
    require_nonnegative(embedding);
    return {leaf_values(tree, embedding, box.upper), leaf_values(tree, embedding, box.lower)};
}

PolicyValue optimistic_value(const HistoryTree& tree, const ConfidenceModel& model,
                             const TrajectoryEmbedding& embedding, const Objective& objective,
                             Direction direction, const StaticPlanOptions& options) {
    check_model(tree, model);
    const auto [upper, lower] = leaf_bounds(tree, embedding, model.box);
    const bool up = direction == Direction::Upper;
    const Eigen::VectorXd& leaves = up ? upper : lower;
    const ActionRule rule = up ? ActionRule::Max : ActionRule::Min;
    if (objective.kind == ObjectiveKind::Nested)
        return nested_pass(tree, model, leaves, objective.weight, direction, rule, nullptr);
    // Shortfall is decreasing in the reward, so optimism minimizes it.
    const double alpha = static_weight(objective).alpha();
    return static_sup(tree, model, leaves, alpha, up ? Direction::Lower : Direction::Upper,
                      up ? ActionRule::Min : ActionRule::Max, nullptr, options);
}

PolicyValue pessimistic_best(const HistoryTree& tree, const ConfidenceModel& model,
                             const TrajectoryEmbedding& embedding, const Objective& objective,
                             const StaticPlanOptions& options) {
    check_model(tree, model);
    const auto [upper, lower] = leaf_bounds(tree, embedding, model.box);
    if (objective.kind == ObjectiveKind::Nested)
        return nested_pass(tree, model, lower, objective.weight, Direction::Lower, ActionRule::Max,
                           nullptr);
    const double alpha = static_weight(objective).alpha();
    return static_sup(tree, model, lower, alpha, Direction::Upper, ActionRule::Min, nullptr,
                      options);
}

ValueInterval policy_bounds(const HistoryTree& tree, const ConfidenceModel& model,
                            const TrajectoryEmbedding& embedding, const Objective& objective,
                            const HistoryPolicy& policy, const StaticPlanOptions& options) {
    check_model(tree, model);
    policy.validate(tree);
    const auto [upper, lower] = leaf_bounds(tree, embedding, model.box);
    if (objective.kind == ObjectiveKind::Nested) {
        const auto& g = objective.weight;
        return {nested_pass(tree, model, lower, g, Direction::Lower, ActionRule::Fixed, &policy).value,
                nested_pass(tree, model, upper, g, Direction::Upper, ActionRule::Fixed, &policy).value};
    }
    const double alpha = static_weight(objective).alpha();
    return {static_sup(tree, model, lower, alpha, Direction::Upper, ActionRule::Fixed, &policy,
                       options)
                .value,
            static_sup(tree, model, upper, alpha, Direction::Lower, ActionRule::Fixed, &policy,
                       options)
                .value};
}

// ----------------------------------------------------------------------------
// Policy pair selection
// ----------------------------------------------------------------------------

namespace {

PolicyPair nested_pair(const HistoryTree& tree, const ConfidenceModel& model,
                       const Eigen::VectorXd& upper, const Eigen::VectorXd& lower,
                       const QuantileWeight& g, double tolerance) {
    Eigen::VectorXd u = with_leaves(tree, upper);
    Eigen::VectorXd lb = with_leaves(tree, lower);
    Eigen::VectorXd w = lb;
    PolicyPair pair;
    pair.first.actions.assign(tree.num_internal(), 0);
    pair.second.actions.assign(tree.num_internal(), 0);

    const int A = tree.num_actions();
    std::vector<double> uq(A);
    NodeScratch s;
    for (NodeId n = tree.first_leaf() - 1; n >= 0; --n) {
        double best_u = -std::numeric_limits<double>::infinity();
        double best_l = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < A; ++a) {
            const double r = radius_of(tree, model, n, a);
            detail::gather_children(tree, model.kernel, n, a, u, s.values, s.probs);
            uq[a] = shifted_risk(s, r, Direction::Upper, g);
            if (uq[a] > best_u + kTie) {
                best_u = uq[a];
                pair.first.actions[n] = a;
            }
            detail::gather_children(tree, model.kernel, n, a, lb, s.values, s.probs);
            best_l = std::max(best_l, shifted_risk(s, r, Direction::Lower, g));
        }
        u(n) = best_u;
        lb(n) = best_l;

        double worst = std::numeric_limits<double>::infinity();
        for (int a = 0; a < A; ++a) {
            if (uq[a] < best_l - tolerance) continue;
            detail::gather_children(tree, model.kernel, n, a, w, s.values, s.probs);
            const double q = shifted_risk(s, radius_of(tree, model, n, a), Direction::Lower, g);
            if (q < worst - kTie) {
                worst = q;
                pair.second.actions[n] = a;
            }
        }
        w(n) = worst;
    }
    pair.upper = u(0);
    pair.threshold = lb(0);
    pair.lower = w(0);
    return pair;
}

struct StaticRoots {
    double optimistic = 0.0;
    double pessimistic = 0.0;
    double worst = 0.0;
};

/// Shortfalls at one rho: optimistic best, pessimistic best, and worst plausible.
StaticRoots static_pair_pass(const HistoryTree& tree, const ConfidenceModel& model,
                             const Eigen::VectorXd& upper, const Eigen::VectorXd& lower,
                             double rho, double tolerance, HistoryPolicy* first,
                             HistoryPolicy* second) {
    Eigen::VectorXd su = with_leaves(tree, (rho - upper.array()).max(0.0).matrix());
    Eigen::VectorXd sp = with_leaves(tree, (rho - lower.array()).max(0.0).matrix());
    Eigen::VectorXd sw = sp;
    if (first != nullptr) first->actions.assign(tree.num_internal(), 0);
    if (second != nullptr) second->actions.assign(tree.num_internal(), 0);

    const int A = tree.num_actions();
    std::vector<double> uq(A);
    NodeScratch s;
    for (NodeId n = tree.first_leaf() - 1; n >= 0; --n) {
        double best_u = std::numeric_limits<double>::infinity();
        double best_p = std::numeric_limits<double>::infinity();
        for (int a = 0; a < A; ++a) {
            const double r = radius_of(tree, model, n, a);
            detail::gather_children(tree, model.kernel, n, a, su, s.values, s.probs);
            uq[a] = shifted_mean(s, r, Direction::Lower);
            if (uq[a] < best_u - kTie) {
                best_u = uq[a];
                if (first != nullptr) first->actions[n] = a;
            }
            detail::gather_children(tree, model.kernel, n, a, sp, s.values, s.probs);
            best_p = std::min(best_p, shifted_mean(s, r, Direction::Upper));
        }
        su(n) = best_u;
        sp(n) = best_p;

        double worst = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < A; ++a) {
            if (uq[a] > best_p + tolerance) continue;
            detail::gather_children(tree, model.kernel, n, a, sw, s.values, s.probs);
            const double q = shifted_mean(s, radius_of(tree, model, n, a), Direction::Upper);
            if (q > worst + kTie) {
                worst = q;
                if (second != nullptr) second->actions[n] = a;
            }
        }
        sw(n) = worst;
    }
    return {su(0), sp(0), sw(0)};
}

PolicyPair static_pair(const HistoryTree& tree, const ConfidenceModel& model,
                       const Eigen::VectorXd& upper, const Eigen::VectorXd& lower, double alpha,
                       double tolerance, const StaticPlanOptions& options) {
    const auto grid = checked_grid(tree, upper, &lower, options);
    std::vector<StaticRoots> roots;
    roots.reserve(grid.size());
    for (double rho : grid)
        roots.push_back(static_pair_pass(tree, model, upper, lower, rho, tolerance, nullptr, nullptr));

    PolicyPair pair;
    pair.upper = -std::numeric_limits<double>::infinity();
    pair.threshold = -std::numeric_limits<double>::infinity();
    std::size_t first_at = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double ju = grid[i] - roots[i].optimistic / alpha;
        if (ju > pair.upper + kTie) {
            pair.upper = ju;
            first_at = i;
        }
        pair.threshold = std::max(pair.threshold, grid[i] - roots[i].pessimistic / alpha);
    }
    pair.lower = std::numeric_limits<double>::infinity();
    std::size_t second_at = first_at;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] - roots[i].optimistic / alpha < pair.threshold - tolerance) continue;
        const double jw = grid[i] - roots[i].worst / alpha;
        if (jw < pair.lower - kTie) {
            pair.lower = jw;
            second_at = i;
        }
    }
    HistoryPolicy unused;
    static_pair_pass(tree, model, upper, lower, grid[first_at], tolerance, &pair.first, &unused);
    static_pair_pass(tree, model, upper, lower, grid[second_at], tolerance, &unused, &pair.second);
    return pair;
}

} // namespace

PolicyPair select_policy_pair(const HistoryTree& tree, const ConfidenceModel& model,
                              const TrajectoryEmbedding& embedding, const Objective& objective,
                              double tolerance, const StaticPlanOptions& options) {
    check_model(tree, model);
    const auto [upper, lower] = leaf_bounds(tree, embedding, model.box);
    if (objective.kind == ObjectiveKind::Nested)
        return nested_pair(tree, model, upper, lower, objective.weight, tolerance);
    return static_pair(tree, model, upper, lower, static_weight(objective).alpha(), tolerance,
                       options);
}

// ----------------------------------------------------------------------------
// Log-based estimators
// ----------------------------------------------------------------------------

TransitionEstimate update_transitions(const EpisodeLog& log, int num_states, int num_actions,
                                      int episodes, int horizon, double delta) {
    Eigen::MatrixXd counts =
        Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_states) * num_actions, num_states);
    for (const auto& e : log.entries) {
        count_transitions(e.record.traj_1, num_actions, counts);
        count_transitions(e.record.traj_2, num_actions, counts);
    }
    return estimate_transitions(counts, num_states, num_actions, episodes, horizon, delta);
}

RewardFit fit_reward(const EpisodeLog& log, const TrajectoryEmbedding& embedding,
                     const LinkFunction& link, double rho_w, const OptimizerSettings& settings) {
    if (log.size() == 0) throw PreconditionError("fit_reward: empty episode log");
    Eigen::MatrixXd diffs(embedding.dim, static_cast<Eigen::Index>(log.size()));
    Eigen::VectorXd outcomes(static_cast<Eigen::Index>(log.size()));
    for (std::size_t i = 0; i < log.size(); ++i) {
        const auto& r = log.entries[i].record;
        diffs.col(static_cast<Eigen::Index>(i)) = embed(r.traj_1, embedding) - embed(r.traj_2, embedding);
        outcomes(static_cast<Eigen::Index>(i)) = r.outcome;
    }
    return fit_reward(diffs, outcomes, link, rho_w, embedding.upper_bound, settings);
}

// ----------------------------------------------------------------------------
// Learner
// ----------------------------------------------------------------------------

const char* to_string(LearnerKind kind) {
    switch (kind) {
    case LearnerKind::RaPbrl:
        return "ra_pbrl";
    case LearnerKind::RiskNeutral:
        return "risk_neutral";
    case LearnerKind::UniformRandom:
        return "uniform_random";
    case LearnerKind::Optimal:
        return "optimal";
    }
    return "unknown";
}

LearnerKind learner_kind_from_string(const std::string& name) {
    for (auto kind : {LearnerKind::RaPbrl, LearnerKind::RiskNeutral, LearnerKind::UniformRandom,
                      LearnerKind::Optimal})
        if (name == to_string(kind)) return kind;
    throw StructuralError("unknown learner kind '" + name + "'");
}

Learner::Learner(int num_states, int num_actions, int horizon, int initial_state,
                 TrajectoryEmbedding embedding, LinkFunction link, double rho_w,
                 LearnerConfig config)
    : tree_(unroll_full(num_states, num_actions, horizon, initial_state, config.node_cap)),
      embedding_(std::move(embedding)),
      link_(std::move(link)),
      rho_w_(rho_w),
      config_(std::move(config)),
      horizon_(horizon) {
    if (!(config_.delta > 0.0 && config_.delta < 1.0)) throw DomainError("delta must lie in (0, 1)");
    if (!(config_.c_beta > 0.0)) throw DomainError("c_beta must be positive");
    if (config_.episodes < 1) throw DomainError("episode budget must be positive");
    if (embedding_.num_states != num_states || embedding_.num_actions != num_actions ||
        embedding_.horizon != horizon)
        throw StructuralError("learner: embedding shape does not match the mdp shape");
    const bool plans = config_.kind == LearnerKind::RaPbrl || config_.kind == LearnerKind::RiskNeutral;
    if (plans) {
        require_nonnegative(embedding_);
        if (!(link_.inverse_slope() > 0.0))
            throw DomainError("learner: link must have a positive slope on [-1, 1]");
    }

    const auto rows = static_cast<Eigen::Index>(num_states) * num_actions;
    successor_counts_ = Eigen::MatrixXd::Zero(rows, num_states);
    diffs_.resize(embedding_.dim, 0);
    dim_counts_ = Eigen::VectorXd::Zero(embedding_.dim);
    transitions_ = estimate_transitions(successor_counts_, num_states, num_actions,
                                        config_.episodes, horizon, config_.delta);
    fit_.weights = Eigen::VectorXd::Zero(embedding_.dim);
    box_ = WeightBox::full(embedding_.dim, rho_w_);
}

Objective Learner::planning_objective() const {
    if (config_.kind == LearnerKind::RiskNeutral)
        return {config_.objective.kind, QuantileWeight::identity()};
    return config_.objective;
}

ConfidenceModel Learner::confidence_model() const {
    return {transitions_.kernel, transitions_.radius, box_};
}

PolicyPair Learner::propose(Rng& rng) const {
    const bool random = config_.kind == LearnerKind::UniformRandom || log_.size() == 0;
    if (config_.kind == LearnerKind::Optimal)
        throw PreconditionError("the optimal learner needs the true model; call step()");
    if (random) {
        PolicyPair pair;
        pair.first = HistoryPolicy::uniform_random(tree_, rng);
        pair.second = HistoryPolicy::uniform_random(tree_, rng);
        return pair;
    }
    return select_policy_pair(tree_, confidence_model(), embedding_, planning_objective(),
                              config_.plausibility_tolerance, config_.static_options);
}

EpisodeResult Learner::step(const TabularMdp& truth, const RewardModel& true_reward, Rng& rng) {
    if (truth.num_states != tree_.num_states() || truth.num_actions != tree_.num_actions() ||
        truth.horizon != tree_.horizon())
        throw StructuralError("learner: true mdp shape does not match the learner");
    EpisodeResult result;
    if (config_.kind == LearnerKind::Optimal) {
        if (!oracle_policy_) {
            const auto leaves = leaf_rewards(tree_, embedding_, true_reward);
            oracle_policy_ = optimal_policy(tree_, truth.transitions, leaves, config_.objective,
                                            config_.static_options)
                                 .policy;
        }
        result.policy_1 = *oracle_policy_;
        result.policy_2 = *oracle_policy_;
    } else {
        auto pair = propose(rng);
        result.policy_1 = std::move(pair.first);
        result.policy_2 = std::move(pair.second);
        result.upper = pair.upper;
        result.threshold = pair.threshold;
    }
    const auto first = rollout(truth, tree_, result.policy_1, rng);
    const auto second = rollout(truth, tree_, result.policy_2, rng);
    result.record = sample_preference(first.trajectory, second.trajectory, embedding_, true_reward,
                                      link_, rng, episodes_run());
    observe(result.record, &result.policy_1, &result.policy_2);
    return result;
}

void Learner::observe(const PreferenceRecord& record, const HistoryPolicy* policy_1,
                      const HistoryPolicy* policy_2) {
    EpisodeEntry entry;
    entry.record = record;
    if (config_.store_policies) {
        if (policy_1 != nullptr) entry.policy_1 = *policy_1;
        if (policy_2 != nullptr) entry.policy_2 = *policy_2;
    }
    log_.entries.push_back(std::move(entry));

    count_transitions(record.traj_1, tree_.num_actions(), successor_counts_);
    count_transitions(record.traj_2, tree_.num_actions(), successor_counts_);

    const Eigen::VectorXd phi_1 = embed(record.traj_1, embedding_);
    const Eigen::VectorXd phi_2 = embed(record.traj_2, embedding_);
    const auto k = static_cast<Eigen::Index>(log_.size());
    if (diffs_.cols() < k) {
        const Eigen::Index capacity = std::max<Eigen::Index>(2 * diffs_.cols(), std::max(k, Eigen::Index{64}));
        diffs_.conservativeResize(Eigen::NoChange, capacity);
        outcomes_.conservativeResize(capacity);
    }
    diffs_.col(k - 1) = phi_1 - phi_2;
    outcomes_(k - 1) = record.outcome;
    dim_counts_.array() += ((phi_1.array() != 0.0) || (phi_2.array() != 0.0)).cast<double>();

    refit();
}

void Learner::refit() {
    transitions_ = estimate_transitions(successor_counts_, tree_.num_states(), tree_.num_actions(),
                                        config_.episodes, horizon_, config_.delta);
    const bool plans = config_.kind == LearnerKind::RaPbrl || config_.kind == LearnerKind::RiskNeutral;
    if (!plans) return;

    const auto k = static_cast<Eigen::Index>(log_.size());
    const Eigen::VectorXd previous = fit_.weights;
    fit_ = fit_reward(diffs_.leftCols(k), outcomes_.head(k), link_, rho_w_, embedding_.upper_bound,
                      config_.optimizer, config_.warm_start ? &previous : nullptr);
    beta_ = reward_beta(static_cast<int>(k), embedding_.dim, embedding_.upper_bound, rho_w_,
                        config_.delta, config_.c_beta);
    bool reset = false;
    box_ = weight_intervals(fit_.weights, beta_, dim_counts_, link_.inverse_slope(),
                            embedding_.lower_bound, rho_w_, &box_, &reset);
    if (reset) ++box_resets_;
}

} // namespace rapbrl
