#include "rapbrl/io.hpp"

#include <fstream>

namespace rapbrl {

namespace {

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw StructuralError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_json_file(const std::string& path, const Json& value) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << value.dump(2) << '\n';
}

const char* to_string(EmbeddingKind kind) {
    switch (kind) {
    case EmbeddingKind::TerminalIndicator:
        return "terminal_indicator";
    case EmbeddingKind::StateActionCount:
        return "state_action_count";
    case EmbeddingKind::ExplicitTable:
        return "explicit_table";
    }
    return "unknown";
}

EmbeddingKind embedding_kind_from_string(const std::string& name) {
    for (auto kind : {EmbeddingKind::TerminalIndicator, EmbeddingKind::StateActionCount,
                      EmbeddingKind::ExplicitTable})
        if (name == to_string(kind)) return kind;
    throw StructuralError("unknown embedding kind '" + name + "'");
}

Json instance_to_json(const Instance& inst) {
    const auto& m = inst.mdp;
    Json transitions = Json::array();
    for (int s = 0; s < m.num_states; ++s) {
        Json by_action = Json::array();
        for (int a = 0; a < m.num_actions; ++a) by_action.push_back(to_vector(m.row(s, a).transpose()));
        transitions.push_back(std::move(by_action));
    }
    Json embedding{{"kind", to_string(inst.embedding.kind)}};
    switch (inst.embedding.kind) {
    case EmbeddingKind::TerminalIndicator:
        embedding["terminals"] = inst.embedding.terminals;
        embedding["scale"] = inst.embedding.upper_bound;
        break;
    case EmbeddingKind::StateActionCount:
        break;
    case EmbeddingKind::ExplicitTable: {
        embedding["dim"] = inst.embedding.dim;
        Json table = Json::object();
        for (const auto& [key, phi] : inst.embedding.table) table[key] = to_vector(phi);
        embedding["table"] = std::move(table);
        break;
    }
    }
    return Json{{"name", inst.name},
                {"num_states", m.num_states},
                {"num_actions", m.num_actions},
                {"horizon", m.horizon},
                {"initial_state", m.initial_state},
                {"transitions", std::move(transitions)},
                {"embedding", std::move(embedding)},
                {"weights", to_vector(inst.reward.weights)},
                {"rho_w", inst.reward.norm_bound}};
}

Instance instance_from_json(const Json& j) {
    try {
        const int S = j.at("num_states").get<int>();
        const int A = j.at("num_actions").get<int>();
        const int H = j.at("horizon").get<int>();
        const int s1 = j.value("initial_state", 0);
        const auto& t = j.at("transitions");
        if (!t.is_array() || static_cast<int>(t.size()) != S)
            throw StructuralError("instance: transitions must list one entry per state");
        Kernel p(static_cast<Eigen::Index>(S) * A, S);
        for (int s = 0; s < S; ++s) {
            if (static_cast<int>(t[s].size()) != A)
                throw StructuralError("instance: transitions[" + std::to_string(s) + "] needs one row per action");
            for (int a = 0; a < A; ++a) {
                const auto row = t[s][a].get<std::vector<double>>();
                if (static_cast<int>(row.size()) != S)
                    throw StructuralError("instance: transitions[" + std::to_string(s) + "][" +
                                          std::to_string(a) + "] needs one entry per state");
                p.row(static_cast<Eigen::Index>(s) * A + a) = to_eigen(row).transpose();
            }
        }
        Instance inst;
        inst.name = j.value("name", "file");
        inst.mdp = make_mdp(S, A, H, s1, std::move(p));
        const auto& e = j.at("embedding");
        switch (embedding_kind_from_string(e.at("kind").get<std::string>())) {
        case EmbeddingKind::TerminalIndicator:
            inst.embedding = TrajectoryEmbedding::terminal_indicator(
                inst.mdp, e.at("terminals").get<std::vector<int>>(), e.value("scale", 1.0));
            break;
        case EmbeddingKind::StateActionCount:
            inst.embedding = TrajectoryEmbedding::state_action_count(inst.mdp);
            break;
        case EmbeddingKind::ExplicitTable: {
            std::map<std::string, Eigen::VectorXd> table;
            for (const auto& [key, phi] : e.at("table").items())
                table[key] = to_eigen(phi.get<std::vector<double>>());
            inst.embedding = TrajectoryEmbedding::explicit_table(inst.mdp, e.at("dim").get<int>(),
                                                                 std::move(table));
            break;
        }
        }
        inst.reward.weights = to_eigen(j.at("weights").get<std::vector<double>>());
        if (inst.reward.weights.size() != inst.embedding.dim)
            throw StructuralError("instance: weights do not match the embedding dimension");
        inst.reward.norm_bound = j.value("rho_w", std::max(1.0, inst.reward.weights.norm()));
        if (inst.reward.weights.norm() > inst.reward.norm_bound + 1e-12)
            throw ModelValidityError("instance: ||w|| exceeds rho_w");
        return inst;
    } catch (const Json::exception& ex) {
        throw StructuralError(std::string("instance: ") + ex.what());
    }
}

Json policy_to_json(const HistoryTree& tree, const HistoryPolicy& policy) {
    policy.validate(tree);
    Json actions = Json::object();
    for (NodeId n = 0; n < tree.first_leaf(); ++n) actions[tree.key(n)] = policy(n);
    return Json{{"num_states", tree.num_states()},
                {"num_actions", tree.num_actions()},
                {"horizon", tree.horizon()},
                {"actions", std::move(actions)}};
}

HistoryPolicy policy_from_json(const HistoryTree& tree, const Json& j) {
    HistoryPolicy policy{std::vector<int>(tree.num_internal(), -1)};
    try {
        for (const auto& [key, action] : j.at("actions").items()) {
            const NodeId n = tree.find(Trajectory::from_key(key));
            if (n < 0 || tree.is_leaf(n)) continue;
            policy.actions[n] = action.get<int>();
        }
    } catch (const Json::exception& ex) {
        throw StructuralError(std::string("policy: ") + ex.what());
    }
    return policy;
}

Json learner_state(const Learner& learner) {
    const auto& t = learner.transitions();
    Json kernel = Json::array();
    for (Eigen::Index r = 0; r < t.kernel.rows(); ++r) kernel.push_back(to_vector(t.kernel.row(r).transpose()));
    return Json{{"episode", learner.episodes_run()},
                {"learner", to_string(learner.config().kind)},
                {"visits", to_vector(t.visits)},
                {"kernel", std::move(kernel)},
                {"radius", to_vector(t.radius)},
                {"weights", to_vector(learner.weights())},
                {"box_lower", to_vector(learner.box().lower)},
                {"box_upper", to_vector(learner.box().upper)},
                {"dim_counts", to_vector(learner.dim_counts())},
                {"beta", learner.beta()},
                {"fit_loss", learner.fit().loss},
                {"fit_iterations", learner.fit().iterations},
                {"box_resets", learner.box_resets()}};
}

} // namespace rapbrl
