#pragma once

#include "rapbrl/envs.hpp"
#include "rapbrl/learner.hpp"

#include <json.hpp>

#include <string>

namespace rapbrl {

using Json = nlohmann::json;

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& value);

/// Instance schema: shape, transitions[s][a][s'], embedding, weights, rho_w.
Json instance_to_json(const Instance& instance);
Instance instance_from_json(const Json& value);

/// Policy schema: {"actions": {"<history key>": action}} over the internal nodes of `tree`.
Json policy_to_json(const HistoryTree& tree, const HistoryPolicy& policy);
/// Histories absent from the file are left without an action (-1).
HistoryPolicy policy_from_json(const HistoryTree& tree, const Json& value);

EmbeddingKind embedding_kind_from_string(const std::string& name);
const char* to_string(EmbeddingKind kind);

/// Snapshot of a learner's estimates, one object per episode in `--dump-state` output.
Json learner_state(const Learner& learner);

} // namespace rapbrl
