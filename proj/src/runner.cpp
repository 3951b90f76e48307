#include "rapbrl/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace rapbrl {

// ----------------------------------------------------------------------------
// Configuration
// ----------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (episodes < 1) throw DomainError("config: episodes must be at least 1");
    if (trials < 1) throw DomainError("config: trials must be at least 1");
    if (alphas.empty()) throw DomainError("config: at least one alpha is required");
    for (double a : alphas)
        if (!(a > 0.0 && a <= 1.0)) throw DomainError("config: alpha values must lie in (0, 1]");
    if (learners.empty()) throw DomainError("config: at least one learner is required");
    if (!(delta > 0.0 && delta < 1.0)) throw DomainError("config: delta must lie in (0, 1)");
    if (!(c_beta > 0.0)) throw DomainError("config: c_beta must be positive");
}

ExperimentConfig config_from_json(const Json& j) {
    ExperimentConfig c;
    try {
        if (j.contains("environment")) {
            const auto& e = j["environment"];
            auto& env = c.environment;
            env.builtin = e.value("builtin", env.builtin);
            env.file = e.value("file", env.file);
            env.num_states = e.value("num_states", env.num_states);
            env.num_actions = e.value("num_actions", env.num_actions);
            env.horizon = e.value("horizon", env.horizon);
            env.seed = e.value("seed", env.seed);
            if (e.contains("embedding"))
                env.embedding = embedding_kind_from_string(e["embedding"].get<std::string>());
            auto& h = env.hard;
            h.chain_length = e.value("chain_length", h.chain_length);
            h.mu = e.value("mu", h.mu);
            h.eta = e.value("eta", h.eta);
            h.alpha = e.value("hard_alpha", h.alpha);
            h.scale = e.value("scale", h.scale);
            h.rho = e.value("rho", h.rho);
            h.num_actions = e.value("num_actions", h.num_actions);
            h.special_action = e.value("special_action", h.special_action);
        }
        const std::string objective = j.value("objective", std::string("nested"));
        if (objective == "nested")
            c.objective = ObjectiveKind::Nested;
        else if (objective == "static")
            c.objective = ObjectiveKind::Static;
        else
            throw StructuralError("config: objective must be 'nested' or 'static'");
        if (j.contains("alphas")) c.alphas = j["alphas"].get<std::vector<double>>();
        c.episodes = j.value("episodes", c.episodes);
        c.trials = j.value("trials", c.trials);
        c.base_seed = j.value("base_seed", c.base_seed);
        if (j.contains("learners")) {
            c.learners.clear();
            for (const auto& name : j["learners"]) c.learners.push_back(learner_kind_from_string(name));
        }
        c.output_dir = j.value("output_dir", c.output_dir);
        c.threads = j.value("threads", c.threads);
        c.delta = j.value("delta", c.delta);
        c.c_beta = j.value("c_beta", c.c_beta);
        c.optimizer.step_size = j.value("step_size", c.optimizer.step_size);
        c.optimizer.max_iterations = j.value("max_iterations", c.optimizer.max_iterations);
        c.optimizer.tolerance = j.value("tolerance", c.optimizer.tolerance);
        c.warm_start = j.value("warm_start", c.warm_start);
        c.svg = j.value("svg", c.svg);
        c.dump_state = j.value("dump_state", c.dump_state);
    } catch (const Json::exception& ex) {
        throw StructuralError(std::string("config: ") + ex.what());
    }
    c.validate();
    return c;
}

Json config_to_json(const ExperimentConfig& c) {
    const auto& e = c.environment;
    Json learners = Json::array();
    for (auto k : c.learners) learners.push_back(to_string(k));
    return Json{{"environment",
                 {{"builtin", e.builtin},
                  {"file", e.file},
                  {"num_states", e.num_states},
                  {"num_actions", e.num_actions},
                  {"horizon", e.horizon},
                  {"seed", e.seed},
                  {"embedding", to_string(e.embedding)},
                  {"chain_length", e.hard.chain_length},
                  {"mu", e.hard.mu},
                  {"eta", e.hard.eta},
                  {"hard_alpha", e.hard.alpha},
                  {"scale", e.hard.scale},
                  {"rho", e.hard.rho},
                  {"special_action", e.hard.special_action}}},
                {"objective", c.objective == ObjectiveKind::Nested ? "nested" : "static"},
                {"alphas", c.alphas},
                {"episodes", c.episodes},
                {"trials", c.trials},
                {"base_seed", c.base_seed},
                {"learners", learners},
                {"output_dir", c.output_dir},
                {"threads", c.threads},
                {"delta", c.delta},
                {"c_beta", c.c_beta},
                {"step_size", c.optimizer.step_size},
                {"max_iterations", c.optimizer.max_iterations},
                {"tolerance", c.optimizer.tolerance},
                {"warm_start", c.warm_start},
                {"svg", c.svg},
                {"dump_state", c.dump_state}};
}

Instance make_instance(const EnvironmentSpec& spec) {
    if (!spec.file.empty()) return instance_from_json(read_json_file(spec.file));
    if (spec.builtin == "random")
        return random_mdp(spec.num_states, spec.num_actions, spec.horizon, spec.seed, spec.embedding);
    if (spec.builtin == "hard_case_1") return hard_case_1(spec.hard);
    if (spec.builtin == "hard_case_2") return hard_case_2(spec.hard);
    if (spec.builtin == "example") return example_mdp(false).instance;
    if (spec.builtin == "example_corrected") return example_mdp(true).instance;
    throw StructuralError("unknown builtin environment '" + spec.builtin + "'");
}

// ----------------------------------------------------------------------------
// Trials
// ----------------------------------------------------------------------------

double episode_regret(const HistoryTree& tree, const Kernel& kernel,
                      const Eigen::VectorXd& leaf_rewards, const Objective& objective,
                      double optimal_value, const HistoryPolicy& policy_1,
                      const HistoryPolicy& policy_2) {
    const double v1 = evaluate(tree, kernel, leaf_rewards, policy_1, objective).value;
    const double v2 =
        policy_2 == policy_1 ? v1 : evaluate(tree, kernel, leaf_rewards, policy_2, objective).value;
    return 2.0 * optimal_value - v1 - v2;
}

std::uint64_t trial_seed(std::uint64_t base_seed, int trial) {
    return hash64(base_seed, static_cast<std::uint64_t>(trial));
}

RegretSeries run_trial(const ExperimentConfig& config, const Instance& instance,
                       LearnerKind learner_kind, double alpha, int trial, std::ostream* dump) {
    const Objective objective{config.objective, QuantileWeight::cvar(alpha)};
    LearnerConfig lc;
    lc.kind = learner_kind;
    lc.objective = objective;
    lc.delta = config.delta;
    lc.episodes = config.episodes;
    lc.c_beta = config.c_beta;
    lc.optimizer = config.optimizer;
    lc.warm_start = config.warm_start;

    const auto& m = instance.mdp;
    Learner learner(m.num_states, m.num_actions, m.horizon, m.initial_state, instance.embedding,
                    LinkFunction::logistic(), instance.reward.norm_bound, lc);
    const auto& tree = learner.tree();
    const Eigen::VectorXd leaves = leaf_rewards(tree, instance.embedding, instance.reward);
    const double optimal = optimal_policy(tree, m.transitions, leaves, objective).value;

    RegretSeries series;
    series.learner = learner_kind;
    series.alpha = alpha;
    series.seed = trial_seed(config.base_seed, trial);
    series.instantaneous.reserve(config.episodes);
    series.cumulative.reserve(config.episodes);
    double total = 0.0;
    for (int k = 0; k < config.episodes; ++k) {
        Rng rng(hash64(series.seed, static_cast<std::uint64_t>(k)));
        const auto step = learner.step(m, instance.reward, rng);
        const double r = episode_regret(tree, m.transitions, leaves, objective, optimal,
                                        step.policy_1, step.policy_2);
        total += r;
        series.instantaneous.push_back(r);
        series.cumulative.push_back(total);
        if (dump != nullptr) {
            Json line = learner_state(learner);
            line["alpha"] = alpha;
            line["regret"] = r;
            *dump << line.dump() << '\n';
        }
    }
    return series;
}

AggregateResult aggregate(const std::vector<RegretSeries>& series, const std::string& learner,
                          double alpha) {
    AggregateResult out;
    out.learner = learner;
    out.alpha = alpha;
    out.trials = static_cast<int>(series.size());
    if (series.empty()) return out;
    const std::size_t K = series.front().cumulative.size();
    for (const auto& s : series)
        if (s.cumulative.size() != K) throw StructuralError("aggregate: series differ in length");
    const double n = static_cast<double>(series.size());
    out.mean.resize(K);
    out.std.resize(K);
    out.ci95.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        double sum = 0.0;
        for (const auto& s : series) sum += s.cumulative[k];
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& s : series) ss += (s.cumulative[k] - mean) * (s.cumulative[k] - mean);
        const double sd = series.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        out.mean[k] = mean;
        out.std[k] = sd;
        out.ci95[k] = 1.96 * sd / std::sqrt(n);
    }
    return out;
}

int thread_count(int configured) {
    if (const char* env = std::getenv("RAPBRL_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1, configured);
}

std::vector<AggregateResult> run_experiment(const ExperimentConfig& config, bool write_outputs) {
    config.validate();
    const Instance instance = make_instance(config.environment);

    struct Task {
        LearnerKind learner;
        double alpha;
        int trial;
    };
    std::vector<Task> tasks;
    for (auto learner : config.learners)
        for (double alpha : config.alphas)
            for (int t = 0; t < config.trials; ++t) tasks.push_back({learner, alpha, t});

    std::vector<RegretSeries> results(tasks.size());
    std::vector<std::string> dumps(tasks.size());
    std::vector<std::exception_ptr> errors(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            try {
                const auto& task = tasks[i];
                const bool dump = !config.dump_state.empty() && task.trial == 0;
                std::ostringstream buffer;
                results[i] = run_trial(config, instance, task.learner, task.alpha, task.trial,
                                       dump ? &buffer : nullptr);
                dumps[i] = buffer.str();
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int width = std::min<int>(thread_count(config.threads), static_cast<int>(tasks.size()));
    std::vector<std::thread> pool;
    for (int i = 1; i < width; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<AggregateResult> curves;
    for (auto learner : config.learners)
        for (double alpha : config.alphas) {
            std::vector<RegretSeries> group;
            for (std::size_t i = 0; i < tasks.size(); ++i)
                if (tasks[i].learner == learner && tasks[i].alpha == alpha) group.push_back(results[i]);
            curves.push_back(aggregate(group, to_string(learner), alpha));
        }

    if (write_outputs) {
        std::filesystem::create_directories(config.output_dir);
        for (const auto& c : curves)
            emit_csv(c, (std::filesystem::path(config.output_dir) / csv_filename(c.learner, c.alpha)).string());
        if (config.svg)
            for (double alpha : config.alphas) {
                std::vector<AggregateResult> same_alpha;
                for (const auto& c : curves)
                    if (c.alpha == alpha) same_alpha.push_back(c);
                std::ostringstream name;
                name << "regret_alpha" << alpha << ".svg";
                std::ostringstream title;
                title << instance.name << ", alpha = " << alpha;
                emit_svg(same_alpha, (std::filesystem::path(config.output_dir) / name.str()).string(),
                         title.str());
            }
        if (!config.dump_state.empty()) {
            std::ofstream out(config.dump_state);
            if (!out) throw std::runtime_error("cannot write '" + config.dump_state + "'");
            for (const auto& d : dumps) out << d;
        }
    }
    return curves;
}

// ----------------------------------------------------------------------------
// Output
// ----------------------------------------------------------------------------

namespace {

std::string xml_escape(const std::string& text) {
    std::string out;
    for (char ch : text) {
        switch (ch) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

std::string exact(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

} // namespace

std::string csv_filename(const std::string& learner, double alpha) {
    std::ostringstream name;
    name << "regret_" << learner << "_alpha" << alpha << ".csv";
    return name.str();
}

void emit_csv(const AggregateResult& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "episode,learner,alpha,regret_mean,regret_std,ci95\n";
    for (std::size_t k = 0; k < r.mean.size(); ++k)
        out << k + 1 << ',' << r.learner << ',' << exact(r.alpha) << ',' << exact(r.mean[k]) << ','
            << exact(r.std[k]) << ',' << exact(r.ci95[k]) << '\n';
}

AggregateResult parse_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    std::getline(in, line);
    if (line != "episode,learner,alpha,regret_mean,regret_std,ci95")
        throw StructuralError("'" + path + "' has an unexpected header");
    AggregateResult r;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field[6];
        for (auto& f : field)
            if (!std::getline(ss, f, ',')) throw StructuralError("'" + path + "': short row");
        r.learner = field[1];
        r.alpha = std::strtod(field[2].c_str(), nullptr);
        r.mean.push_back(std::strtod(field[3].c_str(), nullptr));
        r.std.push_back(std::strtod(field[4].c_str(), nullptr));
        r.ci95.push_back(std::strtod(field[5].c_str(), nullptr));
    }
    return r;
}

void emit_svg(const std::vector<AggregateResult>& curves, const std::string& path,
              const std::string& title) {
    constexpr double W = 720, H = 440, left = 70, right = 160, top = 40, bottom = 50;
    const double pw = W - left - right;
    const double ph = H - top - bottom;
    std::size_t K = 1;
    double ymax = 0.0;
    for (const auto& c : curves) {
        K = std::max(K, c.mean.size());
        for (std::size_t k = 0; k < c.mean.size(); ++k) ymax = std::max(ymax, c.mean[k] + c.ci95[k]);
    }
    if (ymax <= 0.0) ymax = 1.0;
    auto x = [&](std::size_t k) { return left + pw * static_cast<double>(k + 1) / static_cast<double>(K); };
    auto y = [&](double v) { return top + ph * (1.0 - std::max(0.0, v) / ymax); };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << std::fixed << std::setprecision(2);
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"15\">"
        << xml_escape(title) << "</text>\n"
        << "<g stroke=\"black\" stroke-width=\"1\">"
        << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\""
        << top + ph << "\"/>"
        << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
        << "\"/></g>\n";
    out << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = ymax * i / 4.0;
        out << "<text x=\"" << left - 6 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">"
            << std::setprecision(1) << v << std::setprecision(2) << "</text>\n";
        const std::size_t k = i == 0 ? 0 : K * i / 4 - 1;
        out << "<text x=\"" << x(k) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
            << k + 1 << "</text>\n";
    }
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12
        << "\" text-anchor=\"middle\">episode</text>\n"
        << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << top + ph / 2 << ")\">cumulative regret</text>\n</g>\n";

    // Polylines are thinned to at most ~800 points per curve.
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& c = curves[i];
        const char* colour = palette[i % 6];
        const std::size_t stride = std::max<std::size_t>(1, c.mean.size() / 800);
        std::ostringstream band;
        std::ostringstream line;
        band << std::fixed << std::setprecision(2);
        line << std::fixed << std::setprecision(2);
        std::vector<std::size_t> ks;
        for (std::size_t k = 0; k < c.mean.size(); k += stride) ks.push_back(k);
        if (!c.mean.empty() && ks.back() != c.mean.size() - 1) ks.push_back(c.mean.size() - 1);
        for (auto k : ks) band << x(k) << ',' << y(c.mean[k] + c.ci95[k]) << ' ';
        for (auto it = ks.rbegin(); it != ks.rend(); ++it)
            band << x(*it) << ',' << y(c.mean[*it] - c.ci95[*it]) << ' ';
        for (auto k : ks) line << x(k) << ',' << y(c.mean[k]) << ' ';
        if (!ks.empty()) {
            out << "<polygon fill=\"" << colour << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\""
                << band.str() << "\"/>\n";
            out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\""
                << line.str() << "\"/>\n";
        }
        const double ly = top + 14 + 18 * static_cast<double>(i);
        out << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32
            << "\" y2=\"" << ly << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>"
            << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(c.learner) << "</text>\n";
    }
    out << "</svg>\n";
}

double loglog_slope(const std::vector<double>& cumulative, int from, int to) {
    if (from < 1 || to > static_cast<int>(cumulative.size()) || to <= from)
        throw DomainError("loglog_slope: invalid episode range");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (int k = from; k <= to; ++k) {
        const double v = cumulative[k - 1];
        if (!(v > 0.0)) continue;
        const double lx = std::log(static_cast<double>(k));
        const double ly = std::log(v);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n < 2) return 0.0;
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace rapbrl
