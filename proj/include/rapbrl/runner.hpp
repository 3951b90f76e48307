#pragma once

#include "rapbrl/envs.hpp"
#include "rapbrl/io.hpp"
#include "rapbrl/learner.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace rapbrl {

/// Builtin names: random, hard_case_1, hard_case_2, example, example_corrected, or a file.
struct EnvironmentSpec {
    std::string builtin = "random";
    /// MDP JSON file; takes precedence over `builtin` when set.
    std::string file;
    int num_states = 4;
    int num_actions = 3;
    int horizon = 6;
    /// Seed of the random instance; the instance is shared by every trial.
    std::uint64_t seed = 0;
    EmbeddingKind embedding = EmbeddingKind::StateActionCount;
    HardCaseParams hard;
};

struct ExperimentConfig {
    EnvironmentSpec environment;
    ObjectiveKind objective = ObjectiveKind::Nested;
    std::vector<double> alphas{0.2};
    int episodes = 2000;
    int trials = 50;
    std::uint64_t base_seed = 0;
    std::vector<LearnerKind> learners{LearnerKind::RaPbrl, LearnerKind::RiskNeutral,
                                      LearnerKind::UniformRandom};
    std::string output_dir = "results";
    /// Worker threads; RAPBRL_THREADS overrides.
    int threads = 1;
    double delta = 0.1;
    double c_beta = 1.0;
    OptimizerSettings optimizer;
    bool warm_start = true;
    bool svg = true;
    /// JSONL path for per-episode learner snapshots of trial 0; empty disables.
    std::string dump_state;

    void validate() const;
};

ExperimentConfig config_from_json(const Json& value);
Json config_to_json(const ExperimentConfig& config);

Instance make_instance(const EnvironmentSpec& spec);

/// Per-episode and cumulative regret of one trial.
struct RegretSeries {
    LearnerKind learner = LearnerKind::RaPbrl;
    double alpha = 1.0;
    std::uint64_t seed = 0;
    std::vector<double> instantaneous;
    std::vector<double> cumulative;
};

/// Across-trial statistics of cumulative regret.
struct AggregateResult {
    std::string learner;
    double alpha = 1.0;
    int trials = 0;
    std::vector<double> mean;
    /// Sample standard deviation (n - 1); 0 for a single trial.
    std::vector<double> std;
    /// 1.96 std / sqrt(trials).
    std::vector<double> ci95;
};

/// 2 V(pi_star) - V(pi_1) - V(pi_2) on the true model.
double episode_regret(const HistoryTree& tree, const Kernel& kernel,
                      const Eigen::VectorXd& leaf_rewards, const Objective& objective,
                      double optimal_value, const HistoryPolicy& policy_1,
                      const HistoryPolicy& policy_2);

/// trial seed = hash64(base seed, trial); episode k draws from Rng(hash64(trial seed, k)).
std::uint64_t trial_seed(std::uint64_t base_seed, int trial);

RegretSeries run_trial(const ExperimentConfig& config, const Instance& instance,
                       LearnerKind learner, double alpha, int trial,
                       std::ostream* dump = nullptr);

AggregateResult aggregate(const std::vector<RegretSeries>& series, const std::string& learner,
                          double alpha);

/// Runs every (learner, alpha, trial); curves are ordered by learner then alpha.
std::vector<AggregateResult> run_experiment(const ExperimentConfig& config,
                                            bool write_outputs = true);

/// Worker count: RAPBRL_THREADS when set, else `configured`.
int thread_count(int configured);

std::string csv_filename(const std::string& learner, double alpha);

/// Header `episode,learner,alpha,regret_mean,regret_std,ci95`, values printed round-trip exact.
void emit_csv(const AggregateResult& result, const std::string& path);
AggregateResult parse_csv(const std::string& path);

/// Line chart of mean cumulative regret with a shaded CI band per curve.
void emit_svg(const std::vector<AggregateResult>& curves, const std::string& path,
              const std::string& title = "Cumulative regret");

/// Least-squares slope of log(y) against log(x) over episodes [from, to] (1-based).
double loglog_slope(const std::vector<double>& cumulative, int from, int to);

} // namespace rapbrl
