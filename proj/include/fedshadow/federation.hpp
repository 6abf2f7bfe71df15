#pragma once

// Federated training loop: sharding, participant selection with availability
// bias, label flipping at malicious clients, FedAvg and per-round evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <vector>

#include "fedshadow/data.hpp"
#include "fedshadow/errors.hpp"
#include "fedshadow/learner.hpp"
#include "fedshadow/rng.hpp"

namespace fedshadow {

struct AttackConfig {
    int victim_class = 1;
    int target_class = 9;
    std::size_t n_malicious = 10;
    std::size_t window_start = 1;  // inclusive, 1-based rounds
    std::size_t window_end = 60;   // inclusive
    std::optional<double> availability_bias;
    bool allow_same_class = false;

    bool operator==(const AttackConfig&) const = default;
};

struct DataSpec {
    enum class Kind { blobs, idx };
    Kind kind = Kind::blobs;
    BlobSpec blobs;
    double test_fraction = 0.2;
    IdxSource idx;

    bool operator==(const DataSpec& other) const;
};

/// Client-side training hyperparameters plus the model width. The step decay
/// multiplies the local learning rate by `lr_decay_gamma` every
/// `lr_decay_every` rounds (0 disables it).
struct TrainConfig {
    double learning_rate = 0.05;
    std::size_t local_epochs = 2;
    std::size_t batch_size = 32;
    std::size_t hidden_width = 32;
    std::size_t lr_decay_every = 10;
    double lr_decay_gamma = 0.5;

    double learning_rate_at(std::size_t round_index) const;

    bool operator==(const TrainConfig&) const = default;
};

struct FederationConfig {
    std::size_t n_clients = 50;
    std::size_t participants_per_round = 5;
    std::size_t n_rounds = 60;
    std::optional<AttackConfig> attack;
    DataSpec data_spec;
    TrainConfig train_spec;
    std::uint64_t master_seed = 1;

    bool operator==(const FederationConfig&) const = default;
};

/// Every violated rule, keyed by JSON field path. Empty when valid.
std::vector<FieldError> validate_config(const FederationConfig& config);

/// Throws ConfigError carrying validate_config's findings.
void require_valid(const FederationConfig& config);

struct RoundRecord {
    std::size_t round_index = 0;
    std::vector<std::size_t> participant_ids;   // ascending
    std::vector<bool> malicious_flags;          // ground truth, aligned with participant_ids
    std::vector<std::vector<double>> update_deltas;  // flattened local - previous global
    std::string global_params_digest;
    EvalMetrics metrics;

    bool operator==(const RoundRecord&) const = default;
};

enum class RunStatus { pending, running, completed, failed };

std::string to_string(RunStatus status);
RunStatus run_status_from_string(const std::string& text);

struct RunFailure {
    std::size_t round_index = 0;
    std::string message;

    bool operator==(const RunFailure&) const = default;
};

struct RunRecord {
    std::string run_id;
    FederationConfig config;
    std::vector<RoundRecord> rounds;
    RunStatus status = RunStatus::pending;
    std::optional<ModelParams> final_params;
    std::optional<RunFailure> failure;

    bool operator==(const RunRecord&) const = default;
};

/// Disjoint shards whose sizes differ by at most one. Rows are dealt out in a
/// seeded random order; the clients that receive the remainder rows are the
/// first ones in a second seeded permutation.
std::vector<LabeledDataset> shard_data(const LabeledDataset& dataset, std::size_t n_clients, std::uint64_t seed);

/// Copy of `shard` with every `victim` label replaced by `target`.
LabeledDataset flip_labels(const LabeledDataset& shard, int victim, int target);

bool is_attack_active(std::size_t round_index, const std::optional<AttackConfig>& attack);

/// True when client `id` belongs to the malicious pool (ids 0..m-1).
bool is_malicious_client(std::size_t id, const std::optional<AttackConfig>& attack);

/// `participants_per_round` distinct ids in ascending order.
std::vector<std::size_t> select_participants(std::size_t round_index, const FederationConfig& config, Rng& stream);

/// Weighted element-wise mean, weights normalised to sum 1. Accumulated as
/// first + sum_i w_i (x_i - first) in the given order, so identical inputs
/// come back bit-exact.
ModelParams fedavg(std::span<const ModelParams> models, std::span<const double> weights);

/// Hex FNV-1a 64 over the IEEE-754 bytes of the flattened parameters.
std::string params_digest(const ModelParams& params);

/// Data materialised for one federation: train shards and held-out test set.
struct FederationData {
    std::vector<LabeledDataset> shards;
    LabeledDataset test;
    ModelDims dims;
};

FederationData prepare_data(const FederationConfig& config);

struct RunOptions {
    /// Worker threads for local training within a round; 0 picks hardware concurrency.
    std::size_t threads = 1;
    std::function<void(const RoundRecord&)> on_round;
    std::stop_token stop;
    std::string run_id;
};

/// Thrown out of run_federation when `options.stop` is requested.
class RunCancelled : public Error {
public:
    RunCancelled() : Error("run cancelled") {}
};

/// Runs the configured rounds. Numeric divergence ends the run with
/// status failed and the failing round in `failure`; configuration
/// problems throw ConfigError.
RunRecord run_federation(const FederationConfig& config, const RunOptions& options = {});

/// Same as run_federation, with the data already prepared.
RunRecord run_federation(const FederationConfig& config, const FederationData& data, const RunOptions& options);

}  // namespace fedshadow
