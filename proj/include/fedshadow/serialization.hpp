#pragma once

// JSON mapping of the persisted and served types. Doubles go through
// nlohmann::json's shortest round-trip formatting, so parse(dump(x)) == x
// bit for bit.

#include <json.hpp>

#include "fedshadow/federation.hpp"
#include "fedshadow/learner.hpp"
#include "fedshadow/signature.hpp"

namespace fedshadow {

using json = nlohmann::json;

json config_to_json(const FederationConfig& config);

/// Lenient about missing keys (defaults apply), strict about types and
/// values: every problem is reported as a FieldError in the thrown ConfigError.
FederationConfig config_from_json(const json& doc);

json params_to_json(const ModelParams& params);
ModelParams params_from_json(const json& doc);

json metrics_to_json(const EvalMetrics& metrics);
EvalMetrics metrics_from_json(const json& doc);

json round_to_json(const RoundRecord& round);
RoundRecord round_from_json(const json& doc);

json signature_to_json(const SignatureRound& signature);
SignatureRound signature_from_json(const json& doc);

json trajectory_to_json(const Trajectory& trajectory);
Trajectory trajectory_from_json(const json& doc);

/// Whole run as a single document (config, status, rounds, final params).
json run_to_json(const RunRecord& run);
RunRecord run_from_json(const json& doc);

}  // namespace fedshadow
