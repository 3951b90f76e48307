#include "rapbrl/envs.hpp"
#include "rapbrl/io.hpp"
#include "rapbrl/runner.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace rapbrl;

namespace {

Objective parse_objective(const std::string& kind, const std::string& g, double alpha) {
    QuantileWeight weight = QuantileWeight::identity();
    if (g == "cvar")
        weight = QuantileWeight::cvar(alpha);
    else if (g != "identity")
        throw StructuralError("g must be 'identity' or 'cvar'");
    if (kind == "nested") return {ObjectiveKind::Nested, weight};
    if (kind == "static") return {ObjectiveKind::Static, weight};
    throw StructuralError("objective must be 'nested' or 'static'");
}

Instance load_instance(const std::string& file, const std::string& builtin) {
    EnvironmentSpec spec;
    spec.file = file;
    spec.builtin = builtin;
    return make_instance(spec);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Risk-aware preference-based RL on tabular MDPs"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "Run a regret experiment from a JSON config");
    std::string config_path;
    std::string dump_state;
    std::string output_dir;
    int threads = 0;
    run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--dump-state", dump_state, "Write per-episode learner snapshots (JSONL) for trial 0");
    run->add_option("--output", output_dir, "Override the output directory");
    run->add_option("--threads", threads, "Worker threads (RAPBRL_THREADS takes precedence)");

    // plan
    auto* plan = app.add_subcommand("plan", "Compute an optimal policy for an instance");
    std::string mdp_path;
    std::string builtin = "random";
    std::string objective = "nested";
    double alpha = 0.2;
    std::string g = "cvar";
    std::string policy_out;
    plan->add_option("--mdp", mdp_path, "Instance file (JSON)");
    plan->add_option("--builtin", builtin, "Builtin instance when no file is given");
    plan->add_option("--objective", objective, "nested or static");
    plan->add_option("--alpha", alpha, "CVaR level");
    plan->add_option("--g", g, "identity or cvar");
    plan->add_option("--policy-out", policy_out, "Write the policy (JSON)");

    // gen-env
    auto* gen = app.add_subcommand("gen-env", "Write a builtin instance to JSON");
    EnvironmentSpec spec;
    std::string embedding = "state_action_count";
    std::string out_path;
    gen->add_option("--builtin", spec.builtin, "random, hard_case_1, hard_case_2, example, example_corrected");
    gen->add_option("--states", spec.num_states);
    gen->add_option("--actions", spec.num_actions);
    gen->add_option("--horizon", spec.horizon);
    gen->add_option("--seed", spec.seed);
    gen->add_option("--embedding", embedding, "state_action_count or terminal_indicator");
    gen->add_option("--chain-length", spec.hard.chain_length);
    gen->add_option("--mu", spec.hard.mu);
    gen->add_option("--eta", spec.hard.eta);
    gen->add_option("--hard-alpha", spec.hard.alpha);
    gen->add_option("--special-action", spec.hard.special_action);
    gen->add_option("--out", out_path, "Output file; stdout when omitted");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a policy on an instance");
    std::string policy_path;
    eval->add_option("--mdp", mdp_path, "Instance file (JSON)")->required()->check(CLI::ExistingFile);
    eval->add_option("--policy", policy_path, "Policy file (JSON)")->required()->check(CLI::ExistingFile);
    eval->add_option("--objective", objective, "nested or static");
    eval->add_option("--alpha", alpha, "CVaR level");
    eval->add_option("--g", g, "identity or cvar");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            auto config = config_from_json(read_json_file(config_path));
            if (!dump_state.empty()) config.dump_state = dump_state;
            if (!output_dir.empty()) config.output_dir = output_dir;
            if (threads > 0) config.threads = threads;
            const auto curves = run_experiment(config);
            for (const auto& c : curves)
                std::printf("%-16s alpha=%-5g trials=%d regret(K)=%.4f +- %.4f\n", c.learner.c_str(),
                            c.alpha, c.trials, c.mean.back(), c.ci95.back());
            std::printf("wrote %s\n", config.output_dir.c_str());
        } else if (*plan) {
            const auto inst = load_instance(mdp_path, builtin);
            const auto tree = unroll(inst.mdp);
            const auto leaves = leaf_rewards(tree, inst.embedding, inst.reward);
            const auto result = optimal_policy(tree, inst.mdp.transitions, leaves,
                                               parse_objective(objective, g, alpha));
            std::printf("%s %s %s optimal value %.12g over %zu histories\n", inst.name.c_str(),
                        objective.c_str(), g == "cvar" ? ("CVaR(" + std::to_string(alpha) + ")").c_str() : "mean",
                        result.value, tree.size());
            if (!policy_out.empty()) write_json_file(policy_out, policy_to_json(tree, result.policy));
        } else if (*gen) {
            spec.embedding = embedding_kind_from_string(embedding);
            const auto json = instance_to_json(make_instance(spec));
            if (out_path.empty())
                std::cout << json.dump(2) << '\n';
            else
                write_json_file(out_path, json);
        } else if (*eval) {
            const auto inst = load_instance(mdp_path, builtin);
            const auto tree = unroll(inst.mdp);
            const auto policy = policy_from_json(tree, read_json_file(policy_path));
            const auto leaves = leaf_rewards(tree, inst.embedding, inst.reward);
            const auto value = evaluate(tree, inst.mdp.transitions, leaves, policy,
                                        parse_objective(objective, g, alpha));
            std::printf("%.12g\n", value.value);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
