#include "rapbrl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rapbrl {

LinkFunction LinkFunction::logistic() {
    LinkFunction link;
    link.inverse_slope_ = link.derivative(1.0);
    return link;
}

LinkFunction LinkFunction::explicit_monotone(std::vector<std::pair<double, double>> knots) {
    if (knots.empty()) throw StructuralError("explicit link needs at least one knot");
    for (std::size_t i = 0; i < knots.size(); ++i) {
        const auto [x, p] = knots[i];
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("explicit link values must lie in [0,1]");
        if (i > 0 && (!(x > knots[i - 1].first) || p < knots[i - 1].second))
            throw DomainError("explicit link knots must be increasing and monotone");
    }
    LinkFunction link;
    link.kind_ = Kind::ExplicitMonotone;
    link.knots_ = std::move(knots);

    // Slopes are piecewise constant; scan the breakpoints inside [-1, 1].
    std::vector<double> probes{-1.0, 1.0};
    for (const auto& k : link.knots_)
        if (k.first > -1.0 && k.first < 1.0) probes.push_back(k.first);
    std::sort(probes.begin(), probes.end());
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (std::size_t i = 0; i + 1 < probes.size(); ++i) {
        const double slope = link.derivative(0.5 * (probes[i] + probes[i + 1]));
        lo = std::min(lo, slope);
        hi = std::max(hi, slope);
    }
    link.inverse_slope_ = lo;
    link.lipschitz_ = hi;
    return link;
}

double LinkFunction::operator()(double gap) const {
    if (kind_ == Kind::Logistic) return 1.0 / (1.0 + std::exp(-gap));
    if (gap <= knots_.front().first) return knots_.front().second;
    if (gap >= knots_.back().first) return knots_.back().second;
    auto it = std::upper_bound(knots_.begin(), knots_.end(), gap,
                               [](double x, const auto& k) { return x < k.first; });
    const auto& [x1, p1] = *it;
    const auto& [x0, p0] = *(it - 1);
    return p0 + (p1 - p0) * (gap - x0) / (x1 - x0);
}

double LinkFunction::derivative(double gap) const {
    if (kind_ == Kind::Logistic) {
        const double s = 1.0 / (1.0 + std::exp(-gap));
        return s * (1.0 - s);
    }
    if (gap < knots_.front().first || gap >= knots_.back().first) return 0.0;
    auto it = std::upper_bound(knots_.begin(), knots_.end(), gap,
                               [](double x, const auto& k) { return x < k.first; });
    return (it->second - (it - 1)->second) / (it->first - (it - 1)->first);
}

double preference_prob(const Trajectory& traj_1, const Trajectory& traj_2,
                       const TrajectoryEmbedding& embedding, const RewardModel& model,
                       const LinkFunction& link) {
    const double gap = trajectory_reward(traj_1, embedding, model) -
                       trajectory_reward(traj_2, embedding, model);
    return link(gap);
}

PreferenceRecord sample_preference(const Trajectory& traj_1, const Trajectory& traj_2,
                                   const TrajectoryEmbedding& embedding, const RewardModel& model,
                                   const LinkFunction& link, Rng& rng, int episode) {
    const double p = preference_prob(traj_1, traj_2, embedding, model, link);
    return {traj_1, traj_2, uniform01(rng) < p ? 1 : 0, episode};
}

} // namespace rapbrl
