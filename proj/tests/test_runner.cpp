#include "rapbrl/runner.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

using namespace rapbrl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("rapbrl_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Balanced-tag check for the subset of XML the SVG writer emits.
bool well_formed(const std::string& xml) {
    std::vector<std::string> stack;
    std::size_t i = 0;
    while ((i = xml.find('<', i)) != std::string::npos) {
        const std::size_t end = xml.find('>', i);
        if (end == std::string::npos) return false;
        const std::string tag = xml.substr(i + 1, end - i - 1);
        i = end + 1;
        if (tag.empty()) return false;
        if (tag[0] == '?' || tag[0] == '!') continue;
        if (tag.back() == '/') continue;
        const std::string name = tag.substr(tag[0] == '/' ? 1 : 0, tag.find_first_of(" \t\n") - (tag[0] == '/' ? 1 : 0));
        if (tag[0] == '/') {
            if (stack.empty() || stack.back() != name) return false;
            stack.pop_back();
        } else {
            stack.push_back(name);
        }
    }
    return stack.empty();
}

/// One step, three terminal states: action 0 reaches reward 0.5, action 1 reward 0.3.
Instance two_policy_instance() {
    Kernel p = Kernel::Zero(6, 3);
    p(0, 1) = 1;
    p(1, 2) = 1;
    for (int s = 1; s < 3; ++s)
        for (int a = 0; a < 2; ++a) p(s * 2 + a, s) = 1;
    Instance inst;
    inst.mdp = make_mdp(3, 2, 2, 0, p);
    inst.embedding = TrajectoryEmbedding::terminal_indicator(inst.mdp, {0, 1, 2}, 1.0);
    inst.reward = {Eigen::Vector3d(0.0, 0.5, 0.3), 1.0};
    return inst;
}

ExperimentConfig small_config(const fs::path& out) {
    ExperimentConfig c;
    c.environment.num_states = 3;
    c.environment.num_actions = 2;
    c.environment.horizon = 4;
    c.environment.seed = 5;
    c.episodes = 30;
    c.trials = 3;
    c.alphas = {0.2, 0.5};
    c.output_dir = out.string();
    return c;
}

} // namespace

TEST_CASE("episode regret") {
    const auto inst = two_policy_instance();
    const auto tree = unroll(inst.mdp);
    const auto leaves = leaf_rewards(tree, inst.embedding, inst.reward);
    const Objective obj{ObjectiveKind::Nested, QuantileWeight::cvar(0.2)};
    const auto best = optimal_policy(tree, inst.mdp.transitions, leaves, obj);
    CHECK(best.value == doctest::Approx(0.5));
    const auto worse = HistoryPolicy::constant(tree, 1);
    CHECK(episode_regret(tree, inst.mdp.transitions, leaves, obj, best.value, best.policy, best.policy) == 0.0);
    CHECK(episode_regret(tree, inst.mdp.transitions, leaves, obj, best.value, worse, worse) ==
          doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("trials: optimal learner, nonnegativity, replay") {
    auto c = small_config(scratch_dir("trial"));
    const auto inst = make_instance(c.environment);
    for (auto kind : {ObjectiveKind::Nested, ObjectiveKind::Static}) {
        c.objective = kind;
        const auto opt = run_trial(c, inst, LearnerKind::Optimal, 0.2, 0);
        for (double r : opt.instantaneous) CHECK(std::abs(r) <= 1e-12);

        for (auto learner : {LearnerKind::RaPbrl, LearnerKind::RiskNeutral, LearnerKind::UniformRandom}) {
            const auto s = run_trial(c, inst, learner, 0.2, 1);
            const auto again = run_trial(c, inst, learner, 0.2, 1);
            CHECK(s.instantaneous == again.instantaneous);
            CHECK(s.cumulative.size() == static_cast<std::size_t>(c.episodes));
            double total = 0.0;
            for (std::size_t k = 0; k < s.instantaneous.size(); ++k) {
                CHECK(s.instantaneous[k] >= -1e-9);
                total += s.instantaneous[k];
                CHECK(s.cumulative[k] == total);
            }
        }
    }
}

TEST_CASE("uniform baseline regret grows linearly") {
    auto c = small_config(scratch_dir("uniform"));
    c.episodes = 2000;
    const auto inst = make_instance(c.environment);
    const auto s = run_trial(c, inst, LearnerKind::UniformRandom, 0.2, 0);
    const double slope = loglog_slope(s.cumulative, 500, 2000);
    CHECK(slope == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("aggregation") {
    RegretSeries a, b;
    a.cumulative = {1.0, 1.0, 1.0};
    b.cumulative = {3.0, 3.0, 3.0};
    const auto r = aggregate({a, b}, "x", 0.2);
    CHECK(r.trials == 2);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(r.mean[k] == 2.0);
        CHECK(r.std[k] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
        CHECK(r.ci95[k] == doctest::Approx(1.96 * std::sqrt(2.0) / std::sqrt(2.0)).epsilon(1e-15));
    }
    const auto one = aggregate({a}, "x", 0.2);
    CHECK(one.mean == a.cumulative);
    CHECK(one.std == std::vector<double>{0, 0, 0});
}

TEST_CASE("csv and svg output") {
    const auto dir = scratch_dir("csv");
    AggregateResult empty;
    empty.learner = "ra_pbrl";
    emit_csv(empty, (dir / "empty.csv").string());
    CHECK(slurp(dir / "empty.csv") == "episode,learner,alpha,regret_mean,regret_std,ci95\n");

    AggregateResult r;
    r.learner = "ra_pbrl";
    r.alpha = 0.2;
    r.trials = 3;
    for (int k = 0; k < 50; ++k) {
        r.mean.push_back(std::sqrt(k + 1.0) / 3.0);
        r.std.push_back(0.1 * k / 7.0);
        r.ci95.push_back(1.96 * r.std.back() / std::sqrt(3.0));
    }
    const auto path = (dir / csv_filename(r.learner, r.alpha)).string();
    emit_csv(r, path);
    const auto back = parse_csv(path);
    CHECK(back.mean == r.mean);
    CHECK(back.std == r.std);
    CHECK(back.ci95 == r.ci95);
    CHECK(back.alpha == r.alpha);
    CHECK(back.learner == r.learner);

    std::ifstream in(path);
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 51);

    auto other = r;
    other.learner = "uniform_random";
    for (auto& m : other.mean) m *= 2;
    emit_svg({r, other}, (dir / "plot.svg").string(), "a < b & c");
    const auto svg = slurp(dir / "plot.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("polygon") != std::string::npos);
    CHECK(well_formed(svg));
    CHECK(svg.find("a < b") == std::string::npos);
}

TEST_CASE("experiment outputs and configuration") {
    const auto dir = scratch_dir("experiment");
    auto c = small_config(dir);
    c.learners = {LearnerKind::RaPbrl, LearnerKind::UniformRandom};
    c.episodes = 10;
    const auto curves = run_experiment(c);
    CHECK(curves.size() == 4);
    CHECK(fs::exists(dir / csv_filename("ra_pbrl", 0.2)));
    CHECK(fs::exists(dir / csv_filename("uniform_random", 0.5)));
    CHECK(fs::exists(dir / "regret_alpha0.2.svg"));
    CHECK(parse_csv((dir / csv_filename("ra_pbrl", 0.5)).string()).mean == curves[1].mean);

    const auto round = config_from_json(config_to_json(c));
    CHECK(config_to_json(round).dump() == config_to_json(c).dump());

    auto bad = c;
    bad.alphas = {1.5};
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = c;
    bad.episodes = 0;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    CHECK_THROWS(config_from_json(Json::parse(R"({"objective": "median"})")));
}

TEST_CASE("state dump") {
    const auto dir = scratch_dir("dump");
    auto c = small_config(dir);
    c.learners = {LearnerKind::RaPbrl};
    c.alphas = {0.2};
    c.episodes = 4;
    c.trials = 2;
    c.dump_state = (dir / "state.jsonl").string();
    run_experiment(c);
    std::ifstream in(c.dump_state);
    int lines = 0;
    for (std::string line; std::getline(in, line);) {
        const auto j = Json::parse(line);
        CHECK(j.contains("weights"));
        CHECK(j.contains("regret"));
        ++lines;
    }
    CHECK(lines == 4);
}

TEST_CASE("seeds and threads") {
    CHECK(trial_seed(0, 0) != trial_seed(0, 1));
    CHECK(trial_seed(7, 3) == trial_seed(7, 3));
    unsetenv("RAPBRL_THREADS");
    CHECK(thread_count(3) == 3);
    setenv("RAPBRL_THREADS", "2", 1);
    CHECK(thread_count(5) == 2);
    unsetenv("RAPBRL_THREADS");
}

TEST_CASE("log-log slope") {
    std::vector<double> lin, root;
    for (int k = 1; k <= 100; ++k) {
        lin.push_back(3.0 * k);
        root.push_back(std::sqrt(k));
    }
    CHECK(loglog_slope(lin, 10, 100) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(loglog_slope(root, 10, 100) == doctest::Approx(0.5).epsilon(1e-12));
}
