#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "fedshadow/federation.hpp"
#include "test_util.hpp"

using namespace fedshadow;
using fedshadow::testing::Gen;
using fedshadow::testing::small_attack_config;
using fedshadow::testing::small_config;

namespace {

LabeledDataset indexed_dataset(std::size_t n, int classes) {
    LabeledDataset d;
    d.n_classes = classes;
    d.features = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        d.features(i, 0) = static_cast<double>(i);
        d.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
    }
    return d;
}

ModelParams random_model(Gen& g, const ModelDims& dims) {
    return ModelParams::unflatten(dims, g.vec(init_params(dims, 1).parameter_count(), -3, 3));
}

}  // namespace

TEST_CASE("shards partition the rows with sizes within one") {
    // Property over random sizes: every row lands in exactly one shard.
    Gen g(1);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = g.index(20, 400);
        const std::size_t clients = g.index(1, 20);
        const auto data = indexed_dataset(n, 3);
        const auto shards = shard_data(data, clients, g.engine()());
        REQUIRE(shards.size() == clients);
        std::vector<int> hits(n, 0);
        std::size_t lo = n, hi = 0;
        for (const auto& s : shards) {
            lo = std::min(lo, s.size());
            hi = std::max(hi, s.size());
            for (std::size_t i = 0; i < s.size(); ++i) {
                const auto row = static_cast<std::size_t>(s.features(i, 0));
                ++hits[row];
                CHECK(s.labels[i] == data.labels[row]);
            }
        }
        CHECK(hi - lo <= 1);
        CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    }
}

TEST_CASE("shard class histogram follows the global one") {
    // 50 shards of a 10-class set: no class may be missing from the union and
    // the pooled per-class count equals the global count.
    const auto data = indexed_dataset(5000, 10);
    const auto shards = shard_data(data, 50, 7);
    std::map<int, std::size_t> pooled;
    for (const auto& s : shards)
        for (int label : s.labels) ++pooled[label];
    for (int c = 0; c < 10; ++c) CHECK(pooled[c] == 500);
    CHECK(shard_data(data, 50, 7) == shards);
    CHECK_THROWS_AS(shard_data(data, 0, 7), ConfigError);
    CHECK_THROWS_AS(shard_data(indexed_dataset(3, 2), 5, 7), ConfigError);
}

TEST_CASE("flip_labels rewrites only the victim class") {
    const auto data = indexed_dataset(30, 3);
    const auto flipped = flip_labels(data, 1, 2);
    CHECK(flipped.features == data.features);
    for (std::size_t i = 0; i < data.size(); ++i) CHECK(flipped.labels[i] == (data.labels[i] == 1 ? 2 : data.labels[i]));
}

TEST_CASE("attack window bounds are inclusive") {
    AttackConfig a;
    a.window_start = 3;
    a.window_end = 5;
    const std::optional<AttackConfig> attack = a;
    CHECK(!is_attack_active(2, attack));
    CHECK(is_attack_active(3, attack));
    CHECK(is_attack_active(5, attack));
    CHECK(!is_attack_active(6, attack));
    CHECK(!is_attack_active(4, std::nullopt));
    a.n_malicious = 4;
    CHECK(is_malicious_client(3, a));
    CHECK(!is_malicious_client(4, a));
    CHECK(!is_malicious_client(0, std::nullopt));
}

TEST_CASE("selection returns distinct ascending ids") {
    Gen g(2);
    for (int trial = 0; trial < 200; ++trial) {
        FederationConfig c;
        c.n_clients = g.index(1, 30);
        c.participants_per_round = g.index(1, c.n_clients);
        if (g.coin()) {
            AttackConfig a;
            a.n_malicious = g.index(0, c.n_clients);
            a.availability_bias = g.real(0, 1);
            c.attack = a;
        }
        Rng stream(g.engine()());
        const auto ids = select_participants(1, c, stream);
        CHECK(ids.size() == c.participants_per_round);
        CHECK(std::is_sorted(ids.begin(), ids.end()));
        CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
        CHECK(ids.back() < c.n_clients);
    }
}

TEST_CASE("unbiased selection is uniform over clients") {
    FederationConfig c;
    c.n_clients = 10;
    c.participants_per_round = 3;
    std::vector<int> counts(10, 0);
    for (std::size_t r = 1; r <= 20000; ++r) {
        Rng stream(r);
        for (auto id : select_participants(r, c, stream)) ++counts[id];
    }
    for (int n : counts) CHECK(std::abs(n - 6000) < 300);
}

TEST_CASE("availability bias sets the malicious share per slot") {
    FederationConfig c;
    AttackConfig a;
    a.n_malicious = 10;
    a.availability_bias = 0.7;
    c.attack = a;
    std::size_t malicious = 0, slots = 0;
    for (std::size_t r = 1; r <= 10000; ++r) {
        Rng stream(c.master_seed, {99, r});
        for (auto id : select_participants(a.window_start, c, stream)) {
            malicious += id < 10;
            ++slots;
        }
    }
    const double share = static_cast<double>(malicious) / static_cast<double>(slots);
    CHECK(share >= 0.67);
    CHECK(share <= 0.73);

    // Outside the window the pool is drawn uniformly.
    c.attack->window_end = 5;
    malicious = slots = 0;
    for (std::size_t r = 1; r <= 4000; ++r) {
        Rng stream(r);
        for (auto id : select_participants(6, c, stream)) {
            malicious += id < 10;
            ++slots;
        }
    }
    CHECK(static_cast<double>(malicious) / static_cast<double>(slots) == doctest::Approx(0.2).epsilon(0.1));

    // p = 1 with a pool smaller than k falls back to benign clients.
    c.attack->window_end = 60;
    c.attack->n_malicious = 2;
    c.attack->availability_bias = 1.0;
    Rng stream(1);
    const auto ids = select_participants(1, c, stream);
    CHECK(ids.size() == 5);
    CHECK(ids[0] == 0);
    CHECK(ids[1] == 1);
}

TEST_CASE("fedavg identities hold exactly") {
    Gen g(3);
    const ModelDims dims{3, 4, 2};
    for (int trial = 0; trial < 50; ++trial) {
        const ModelParams a = random_model(g, dims);
        const ModelParams b = random_model(g, dims);

        // Idempotence: averaging copies of one model returns it bit for bit.
        std::vector<ModelParams> same(g.index(1, 6), a);
        std::vector<double> w;
        for (std::size_t i = 0; i < same.size(); ++i) w.push_back(g.real(0.1, 100));
        CHECK(fedavg(same, w) == a);

        // Two points: a + (wb / (wa + wb)) (b - a), element by element.
        const double wa = g.real(0.1, 50), wb = g.real(0.1, 50);
        const std::vector<ModelParams> pair{a, b};
        const std::vector<double> pw{wa, wb};
        const auto fa = a.flatten(), fb = b.flatten();
        const auto got = fedavg(pair, pw).flatten();
        const double share = wb / (wa + wb);
        for (std::size_t i = 0; i < fa.size(); ++i) CHECK(got[i] == fa[i] + share * (fb[i] - fa[i]));

        // Scaling every weight by a power of two changes nothing.
        const std::vector<double> scaled{wa * 4, wb * 4};
        CHECK(fedavg(pair, scaled) == fedavg(pair, pw));
    }
}

TEST_CASE("fedavg rejects bad input") {
    const ModelParams a = init_params({2, 2, 2}, 1);
    const ModelParams b = init_params({3, 2, 2}, 1);
    CHECK_THROWS_AS(fedavg(std::vector<ModelParams>{}, std::vector<double>{}), AggregationError);
    CHECK_THROWS_AS(fedavg(std::vector<ModelParams>{a}, std::vector<double>{}), AggregationError);
    CHECK_THROWS_AS(fedavg(std::vector<ModelParams>{a}, std::vector<double>{0.0}), AggregationError);
    CHECK_THROWS_AS(fedavg(std::vector<ModelParams>{a, b}, std::vector<double>{1, 1}), AggregationError);
}

TEST_CASE("params_digest is a stable hex fingerprint") {
    const ModelParams a = init_params({2, 2, 2}, 1);
    ModelParams b = a;
    CHECK(params_digest(a) == params_digest(b));
    CHECK(params_digest(a).size() == 16);
    b.layers[1].bias[0] = -0.0;   // same value, different bytes
    CHECK(params_digest(a) != params_digest(b));
}

TEST_CASE("config validation names every bad field") {
    CHECK(validate_config(FederationConfig{}).empty());
    FederationConfig c;
    c.participants_per_round = 80;
    c.train_spec.learning_rate = 0;
    AttackConfig a;
    a.victim_class = 3;
    a.target_class = 3;
    a.window_start = 9;
    a.window_end = 4;
    a.availability_bias = 1.5;
    a.n_malicious = 51;
    c.attack = a;
    std::set<std::string> fields;
    for (const auto& e : validate_config(c)) fields.insert(e.field);
    CHECK(fields == std::set<std::string>{"participants_per_round", "train_spec.learning_rate", "attack.target_class",
                                          "attack.window", "attack.availability_bias", "attack.n_malicious"});
    CHECK_THROWS_AS(require_valid(c), ConfigError);
    c = {};
    c.attack = AttackConfig{};
    c.attack->victim_class = 10;
    CHECK(validate_config(c).front().field == "attack.victim_class");
    c.attack->victim_class = 9;
    c.attack->allow_same_class = true;
    CHECK(validate_config(c).empty());
}

TEST_CASE("learning rate steps down on schedule") {
    TrainConfig t;
    t.learning_rate = 0.08;
    t.lr_decay_every = 10;
    t.lr_decay_gamma = 0.5;
    CHECK(t.learning_rate_at(1) == 0.08);
    CHECK(t.learning_rate_at(10) == 0.08);
    CHECK(t.learning_rate_at(11) == 0.04);
    CHECK(t.learning_rate_at(21) == 0.02);
    t.lr_decay_every = 0;
    CHECK(t.learning_rate_at(59) == 0.08);
}

TEST_CASE("run status strings round-trip") {
    for (auto s : {RunStatus::pending, RunStatus::running, RunStatus::completed, RunStatus::failed})
        CHECK(run_status_from_string(to_string(s)) == s);
    CHECK_THROWS_AS(run_status_from_string("done"), ConfigError);
}

TEST_CASE("a federation run is fully recorded") {
    const auto config = small_attack_config(3, 6);
    std::vector<std::size_t> seen;
    RunOptions options;
    options.on_round = [&](const RoundRecord& r) { seen.push_back(r.round_index); };
    const RunRecord run = run_federation(config, options);
    CHECK(run.status == RunStatus::completed);
    CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4, 5, 6});
    REQUIRE(run.final_params);
    CHECK(run.rounds.back().global_params_digest == params_digest(*run.final_params));
    const std::size_t count = run.final_params->parameter_count();
    for (const auto& r : run.rounds) {
        CHECK(r.participant_ids.size() == 4);
        CHECK(r.update_deltas.size() == 4);
        for (std::size_t i = 0; i < r.participant_ids.size(); ++i) {
            CHECK(r.update_deltas[i].size() == count);
            CHECK(r.malicious_flags[i] == (r.participant_ids[i] < 3));
        }
        CHECK(r.metrics.per_class_f1.size() == 4);
    }
}

TEST_CASE("global model moves by the weighted mean delta") {
    // Initial biases are zero, so after one round the global biases equal the
    // shard-size-weighted mean of the bias deltas.
    const auto config = small_config(4, 1);
    const auto data = prepare_data(config);
    const RunRecord run = run_federation(config, data, {});
    REQUIRE(run.final_params);
    const auto& r1 = run.rounds[0];
    const auto final_flat = run.final_params->flatten();
    std::vector<double> mean(final_flat.size(), 0.0);
    double total = 0;
    for (std::size_t i = 0; i < r1.participant_ids.size(); ++i) {
        const double w = static_cast<double>(data.shards[r1.participant_ids[i]].size());
        total += w;
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += w * r1.update_deltas[i][j];
    }
    const ModelDims dims = run.final_params->dims;
    const std::size_t hidden_bias = dims.hidden_width * dims.n_features;
    const std::size_t out_bias = hidden_bias + dims.hidden_width + dims.n_classes * dims.hidden_width;
    for (std::size_t j = 0; j < dims.hidden_width; ++j)
        CHECK(final_flat[hidden_bias + j] == doctest::Approx(mean[hidden_bias + j] / total).epsilon(1e-12));
    for (std::size_t j = 0; j < dims.n_classes; ++j)
        CHECK(final_flat[out_bias + j] == doctest::Approx(mean[out_bias + j] / total).epsilon(1e-12));
    CHECK(r1.update_deltas[0] != r1.update_deltas[1]);
}

TEST_CASE("identical seeds replay bit for bit, threads included") {
    const auto config = small_attack_config(5, 5);
    RunOptions serial;
    RunOptions parallel;
    parallel.threads = 4;
    const RunRecord a = run_federation(config, serial);
    const RunRecord b = run_federation(config, parallel);
    CHECK(a == b);
    auto other = config;
    other.master_seed = 6;
    CHECK(run_federation(other, serial).rounds != a.rounds);
}

TEST_CASE("stop requests cancel before the next round") {
    std::stop_source source;
    RunOptions options;
    options.stop = source.get_token();
    std::size_t rounds = 0;
    options.on_round = [&](const RoundRecord&) {
        if (++rounds == 2) source.request_stop();
    };
    CHECK_THROWS_AS(run_federation(small_config(1, 6), options), RunCancelled);
    CHECK(rounds == 2);
}

TEST_CASE("divergence ends the run as failed with the round") {
    auto config = small_config(1, 4);
    config.train_spec.learning_rate = 1e300;
    const RunRecord run = run_federation(config);
    CHECK(run.status == RunStatus::failed);
    REQUIRE(run.failure);
    CHECK(run.failure->round_index == 1);
    CHECK(run.failure->message.find("divergence") != std::string::npos);
    CHECK(run.rounds.empty());
    CHECK(!run.final_params);
}

TEST_CASE("invalid configs throw before any work") {
    auto config = small_config();
    config.participants_per_round = 11;
    CHECK_THROWS_AS(run_federation(config), ConfigError);
}
