#pragma once

#include "rapbrl/mdp.hpp"

#include <utility>
#include <vector>

namespace rapbrl {

/**
 * Increasing link sigma: reward gap -> probability that the first trajectory is preferred.
 *
 * `inverse_slope` is the smallest derivative on [-1, 1] and `lipschitz` the largest.
 */
class LinkFunction {
public:
    enum class Kind { Logistic, ExplicitMonotone };

    static LinkFunction logistic();
    /// Linear interpolation through (gap, probability) knots, constant outside them.
    static LinkFunction explicit_monotone(std::vector<std::pair<double, double>> knots);

    double operator()(double gap) const;
    double derivative(double gap) const;

    Kind kind() const { return kind_; }
    double lipschitz() const { return lipschitz_; }
    double inverse_slope() const { return inverse_slope_; }
    const std::vector<std::pair<double, double>>& knots() const { return knots_; }

private:
    Kind kind_ = Kind::Logistic;
    double lipschitz_ = 0.25;
    double inverse_slope_ = 0.0;
    std::vector<std::pair<double, double>> knots_;
};

/// One comparison; outcome 1 means traj_1 was preferred.
struct PreferenceRecord {
    Trajectory traj_1;
    Trajectory traj_2;
    int outcome = 0;
    int episode = 0;
};

/// P[o = 1] = sigma(r(traj_1) - r(traj_2)).
double preference_prob(const Trajectory& traj_1, const Trajectory& traj_2,
                       const TrajectoryEmbedding& embedding, const RewardModel& model,
                       const LinkFunction& link);

PreferenceRecord sample_preference(const Trajectory& traj_1, const Trajectory& traj_2,
                                   const TrajectoryEmbedding& embedding, const RewardModel& model,
                                   const LinkFunction& link, Rng& rng, int episode = 0);

} // namespace rapbrl
