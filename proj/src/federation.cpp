#include "fedshadow/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <numeric>
#include <thread>

namespace fedshadow {

namespace {

// Stream keys, so the different consumers of master_seed never overlap.
constexpr std::uint64_t kDataKey = 0x64617461ULL;
constexpr std::uint64_t kShardKey = 0x73686172ULL;
constexpr std::uint64_t kInitKey = 0x696e6974ULL;
constexpr std::uint64_t kSelectKey = 0x73656c65ULL;
constexpr std::uint64_t kTrainKey = 0x7472616eULL;

}  // namespace

bool DataSpec::operator==(const DataSpec& other) const {
    if (kind != other.kind || test_fraction != other.test_fraction) return false;
    const auto blob_eq = [](const BlobSpec& a, const BlobSpec& b) {
        return a.n_classes == b.n_classes && a.n_features == b.n_features &&
               a.samples_per_class == b.samples_per_class && a.min_center_distance == b.min_center_distance && a.unit_range == b.unit_range &&
               a.stddev == b.stddev;
    };
    const auto idx_eq = [](const IdxSource& a, const IdxSource& b) {
        return a.train_images == b.train_images && a.train_labels == b.train_labels &&
               a.test_images == b.test_images && a.test_labels == b.test_labels && a.n_classes == b.n_classes &&
               a.train_limit == b.train_limit && a.test_limit == b.test_limit;
    };
    return kind == Kind::blobs ? blob_eq(blobs, other.blobs) : idx_eq(idx, other.idx);
}

double TrainConfig::learning_rate_at(std::size_t round_index) const {
    if (lr_decay_every == 0 || round_index == 0) return learning_rate;
    const auto steps = static_cast<double>((round_index - 1) / lr_decay_every);
    return learning_rate * std::pow(lr_decay_gamma, steps);
}

std::string to_string(RunStatus status) {
    switch (status) {
        case RunStatus::pending: return "pending";
        case RunStatus::running: return "running";
        case RunStatus::completed: return "completed";
        case RunStatus::failed: return "failed";
    }
    return "unknown";
}

RunStatus run_status_from_string(const std::string& text) {
    if (text == "pending") return RunStatus::pending;
    if (text == "running") return RunStatus::running;
    if (text == "completed") return RunStatus::completed;
    if (text == "failed") return RunStatus::failed;
    throw ConfigError("unknown run status '" + text + "'");
}

std::vector<FieldError> validate_config(const FederationConfig& c) {
    std::vector<FieldError> errors;
    const auto fail = [&](std::string field, std::string message) {
        errors.push_back({std::move(field), std::move(message)});
    };

    if (c.n_clients == 0) fail("n_clients", "must be at least 1");
    if (c.participants_per_round == 0) fail("participants_per_round", "must be at least 1");
    if (c.participants_per_round > c.n_clients)
        fail("participants_per_round", "must not exceed n_clients (" + std::to_string(c.n_clients) + ")");
    if (c.n_rounds == 0) fail("n_rounds", "must be at least 1");

    int n_classes = 0;
    if (c.data_spec.kind == DataSpec::Kind::blobs) {
        const auto& b = c.data_spec.blobs;
        n_classes = b.n_classes;
        if (b.n_classes < 2) fail("data_spec.n_classes", "must be at least 2");
        if (b.n_features == 0) fail("data_spec.n_features", "must be at least 1");
        if (b.samples_per_class == 0) fail("data_spec.samples_per_class", "must be at least 1");
        if (!(b.min_center_distance >= 0.0)) fail("data_spec.min_center_distance", "must be non-negative");
        if (!(b.stddev > 0.0)) fail("data_spec.stddev", "must be positive");
        if (!(c.data_spec.test_fraction > 0.0 && c.data_spec.test_fraction < 1.0))
            fail("data_spec.test_fraction", "must be in (0, 1)");
        if (b.n_classes >= 2 && b.samples_per_class > 0 && c.data_spec.test_fraction > 0.0 &&
            c.data_spec.test_fraction < 1.0) {
            const double train = (1.0 - c.data_spec.test_fraction) * static_cast<double>(b.samples_per_class) *
                                 static_cast<double>(b.n_classes);
            if (train < static_cast<double>(c.n_clients))
                fail("data_spec.samples_per_class", "too few training samples for n_clients");
        }
    } else {
        n_classes = c.data_spec.idx.n_classes;
        if (n_classes < 2) fail("data_spec.n_classes", "must be at least 2");
        if (c.data_spec.idx.train_images.empty()) fail("data_spec.train_images", "required for idx data");
        if (c.data_spec.idx.train_labels.empty()) fail("data_spec.train_labels", "required for idx data");
        if (c.data_spec.idx.test_images.empty()) fail("data_spec.test_images", "required for idx data");
        if (c.data_spec.idx.test_labels.empty()) fail("data_spec.test_labels", "required for idx data");
    }

    const auto& t = c.train_spec;
    if (!(t.learning_rate > 0.0) || !std::isfinite(t.learning_rate))
        fail("train_spec.learning_rate", "must be a positive finite number");
    if (t.local_epochs == 0) fail("train_spec.local_epochs", "must be at least 1");
    if (t.batch_size == 0) fail("train_spec.batch_size", "must be at least 1");
    if (t.hidden_width == 0) fail("train_spec.hidden_width", "must be at least 1");
    if (!(t.lr_decay_gamma > 0.0 && t.lr_decay_gamma <= 1.0)) fail("train_spec.lr_decay_gamma", "must be in (0, 1]");

    if (c.attack) {
        const auto& a = *c.attack;
        const auto bad_class = [&](int cls) { return cls < 0 || (n_classes >= 2 && cls >= n_classes); };
        if (bad_class(a.victim_class)) fail("attack.victim_class", "not a valid class id");
        if (bad_class(a.target_class)) fail("attack.target_class", "not a valid class id");
        if (a.victim_class == a.target_class && !a.allow_same_class)
            fail("attack.target_class", "must differ from victim_class unless allow_same_class is set");
        if (a.n_malicious > c.n_clients) fail("attack.n_malicious", "must not exceed n_clients");
        if (a.window_start == 0) fail("attack.window", "rounds are 1-based; start must be at least 1");
        if (a.window_start > a.window_end) fail("attack.window", "start must not exceed end");
        if (a.availability_bias && !(*a.availability_bias >= 0.0 && *a.availability_bias <= 1.0))
            fail("attack.availability_bias", "must be in [0, 1]");
    }
    return errors;
}

void require_valid(const FederationConfig& config) {
    auto errors = validate_config(config);
    if (errors.empty()) return;
    std::string message = "invalid federation config:";
    for (const auto& e : errors) message += " " + e.field + ": " + e.message + ";";
    throw ConfigError(message, std::move(errors));
}

std::vector<LabeledDataset> shard_data(const LabeledDataset& dataset, std::size_t n_clients, std::uint64_t seed) {
    if (n_clients == 0) throw ConfigError("n_clients must be positive");
    if (dataset.size() < n_clients) {
        throw ConfigError("cannot shard " + std::to_string(dataset.size()) + " samples across " +
                          std::to_string(n_clients) + " clients");
    }
    std::vector<std::size_t> rows(dataset.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    Rng row_rng(seed, {kShardKey, 0});
    row_rng.shuffle(std::span<std::size_t>(rows));

    std::vector<std::size_t> sizes(n_clients, dataset.size() / n_clients);
    std::vector<std::size_t> clients(n_clients);
    std::iota(clients.begin(), clients.end(), std::size_t{0});
    Rng client_rng(seed, {kShardKey, 1});
    client_rng.shuffle(std::span<std::size_t>(clients));
    for (std::size_t i = 0; i < dataset.size() % n_clients; ++i) ++sizes[clients[i]];

    std::vector<LabeledDataset> shards;
    shards.reserve(n_clients);
    std::size_t offset = 0;
    const std::span<const std::size_t> all(rows);
    for (std::size_t c = 0; c < n_clients; ++c) {
        shards.push_back(dataset.subset(all.subspan(offset, sizes[c])));
        offset += sizes[c];
    }
    return shards;
}

LabeledDataset flip_labels(const LabeledDataset& shard, int victim, int target) {
    LabeledDataset out = shard;
    std::replace(out.labels.begin(), out.labels.end(), victim, target);
    return out;
}

bool is_attack_active(std::size_t round_index, const std::optional<AttackConfig>& attack) {
    return attack && attack->window_start <= round_index && round_index <= attack->window_end;
}

bool is_malicious_client(std::size_t id, const std::optional<AttackConfig>& attack) {
    return attack && id < attack->n_malicious;
}

std::vector<std::size_t> select_participants(std::size_t round_index, const FederationConfig& config, Rng& stream) {
    const std::size_t n = config.n_clients;
    const std::size_t k = std::min(config.participants_per_round, n);
    std::vector<std::size_t> chosen;
    chosen.reserve(k);

    const bool biased = config.attack && config.attack->availability_bias && is_attack_active(round_index, config.attack);
    if (!biased) {
        // Partial Fisher-Yates over all clients.
        std::vector<std::size_t> pool(n);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(stream.below(n - i));
            std::swap(pool[i], pool[j]);
            chosen.push_back(pool[i]);
        }
    } else {
        const std::size_t m = std::min(config.attack->n_malicious, n);
        const double p = *config.attack->availability_bias;
        std::vector<std::size_t> malicious(m);
        std::iota(malicious.begin(), malicious.end(), std::size_t{0});
        std::vector<std::size_t> benign(n - m);
        std::iota(benign.begin(), benign.end(), m);
        const auto draw = [&](std::vector<std::size_t>& pool) {
            const std::size_t j = static_cast<std::size_t>(stream.below(pool.size()));
            chosen.push_back(pool[j]);
            pool[j] = pool.back();
            pool.pop_back();
        };
        for (std::size_t slot = 0; slot < k; ++slot) {
            const bool want_malicious = stream.uniform() < p;
            auto& preferred = want_malicious ? malicious : benign;
            auto& fallback = want_malicious ? benign : malicious;
            draw(preferred.empty() ? fallback : preferred);
        }
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

ModelParams fedavg(std::span<const ModelParams> models, std::span<const double> weights) {
    if (models.empty()) throw AggregationError("fedavg needs at least one model");
    if (weights.size() != models.size()) {
        throw AggregationError("fedavg got " + std::to_string(models.size()) + " models but " +
                               std::to_string(weights.size()) + " weights");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw AggregationError("fedavg weights must be positive and finite");
        total += w;
    }
    const ModelParams& first = models.front();
    for (const auto& m : models) {
        if (!m.same_shape(first)) throw AggregationError("fedavg inputs have mismatched shapes");
    }

    ModelParams out = first;
    for (std::size_t i = 1; i < models.size(); ++i) {
        const double share = weights[i] / total;
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            auto& w = out.layers[l].weight.values;
            const auto& wi = models[i].layers[l].weight.values;
            const auto& w0 = first.layers[l].weight.values;
            for (std::size_t j = 0; j < w.size(); ++j) w[j] += share * (wi[j] - w0[j]);
            auto& b = out.layers[l].bias;
            const auto& bi = models[i].layers[l].bias;
            const auto& b0 = first.layers[l].bias;
            for (std::size_t j = 0; j < b.size(); ++j) b[j] += share * (bi[j] - b0[j]);
        }
    }
    return out;
}

std::string params_digest(const ModelParams& params) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (double v : params.flatten()) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            hash ^= b;
            hash *= 0x100000001b3ULL;
        }
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, hash >>= 4) out[static_cast<std::size_t>(i)] = kHex[hash & 0xf];
    return out;
}

FederationData prepare_data(const FederationConfig& config) {
    require_valid(config);
    TrainTestSplit split;
    if (config.data_spec.kind == DataSpec::Kind::blobs) {
        const auto full = make_blobs(config.data_spec.blobs, derive_seed(config.master_seed, {kDataKey}));
        split = split_train_test(full, config.data_spec.test_fraction, derive_seed(config.master_seed, {kDataKey, 1}));
    } else {
        split = load_idx(config.data_spec.idx);
    }
    FederationData data;
    data.dims = {split.train.n_features(), config.train_spec.hidden_width,
                 static_cast<std::size_t>(split.train.n_classes)};
    data.shards = shard_data(split.train, config.n_clients, derive_seed(config.master_seed, {kShardKey}));
    data.test = std::move(split.test);
    return data;
}

RunRecord run_federation(const FederationConfig& config, const RunOptions& options) {
    return run_federation(config, prepare_data(config), options);
}

namespace {

struct ClientResult {
    ModelParams local;
    std::exception_ptr error;
};

void train_participants(const std::vector<std::function<ModelParams()>>& jobs, std::vector<ClientResult>& results,
                        std::size_t threads) {
    if (threads <= 1 || jobs.size() <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            try {
                results[i].local = jobs[i]();
            } catch (...) {
                results[i].error = std::current_exception();
            }
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                results[i].local = jobs[i]();
            } catch (...) {
                results[i].error = std::current_exception();
            }
        }
    };
    std::vector<std::jthread> pool;
    const std::size_t n = std::min(threads, jobs.size());
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
}

}  // namespace

RunRecord run_federation(const FederationConfig& config, const FederationData& data, const RunOptions& options) {
    require_valid(config);
    if (data.shards.size() != config.n_clients) throw ConfigError("prepared data does not match n_clients");

    const std::size_t threads =
        options.threads == 0 ? std::max<std::size_t>(1, std::thread::hardware_concurrency()) : options.threads;

    RunRecord run;
    run.run_id = options.run_id;
    run.config = config;
    run.status = RunStatus::running;

    std::vector<LabeledDataset> poisoned;
    if (config.attack) {
        for (std::size_t id = 0; id < config.attack->n_malicious; ++id)
            poisoned.push_back(flip_labels(data.shards[id], config.attack->victim_class, config.attack->target_class));
    }

    ModelParams global = init_params(data.dims, derive_seed(config.master_seed, {kInitKey}));
    for (std::size_t round = 1; round <= config.n_rounds; ++round) {
        if (options.stop.stop_requested()) throw RunCancelled();

        Rng select_stream(config.master_seed, {kSelectKey, round});
        const auto participants = select_participants(round, config, select_stream);
        const bool active = is_attack_active(round, config.attack);

        std::vector<std::function<ModelParams()>> jobs;
        std::vector<bool> flags;
        std::vector<double> weights;
        for (std::size_t id : participants) {
            const bool malicious = is_malicious_client(id, config.attack);
            const LabeledDataset& shard = (malicious && active) ? poisoned[id] : data.shards[id];
            TrainSpec spec;
            spec.learning_rate = config.train_spec.learning_rate_at(round);
            spec.local_epochs = config.train_spec.local_epochs;
            spec.batch_size = config.train_spec.batch_size;
            spec.seed = derive_seed(config.master_seed, {kTrainKey, round, id});
            jobs.emplace_back([&global, &shard, spec] { return train_local(global, shard, spec); });
            flags.push_back(malicious);
            weights.push_back(static_cast<double>(shard.size()));
        }

        std::vector<ClientResult> results(jobs.size());
        train_participants(jobs, results, threads);

        RoundRecord record;
        record.round_index = round;
        record.participant_ids = participants;
        record.malicious_flags = flags;
        std::vector<ModelParams> locals;
        locals.reserve(results.size());
        const auto global_flat = global.flatten();
        for (std::size_t i = 0; i < results.size(); ++i) {
            if (results[i].error) {
                try {
                    std::rethrow_exception(results[i].error);
                } catch (const NumericDivergence& e) {
                    run.status = RunStatus::failed;
                    run.failure = RunFailure{round, "client " + std::to_string(participants[i]) + ": " + e.what()};
                    return run;
                }
            }
            auto delta = results[i].local.flatten();
            for (std::size_t j = 0; j < delta.size(); ++j) delta[j] -= global_flat[j];
            record.update_deltas.push_back(std::move(delta));
            locals.push_back(std::move(results[i].local));
        }

        global = fedavg(locals, weights);
        record.global_params_digest = params_digest(global);
        record.metrics = evaluate(global, data.test);
        run.rounds.push_back(record);
        if (options.on_round) options.on_round(run.rounds.back());
    }

    run.status = RunStatus::completed;
    run.final_params = std::move(global);
    return run;
}

}  // namespace fedshadow
