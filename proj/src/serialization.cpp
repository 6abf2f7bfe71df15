#include "fedshadow/serialization.hpp"

#include <algorithm>
#include <initializer_list>
#include <string>

#include "fedshadow/errors.hpp"

namespace fedshadow {

namespace {

/// Collects type errors while reading a config document field by field.
class FieldReader {
public:
    FieldReader(const json& doc, std::string prefix, std::vector<FieldError>& errors)
        : doc_(doc), prefix_(std::move(prefix)), errors_(errors) {}

    template <typename T>
    void read(const char* key, T& out) {
        if (!doc_.contains(key) || doc_.at(key).is_null()) return;
        const json& value = doc_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!value.is_boolean()) throw std::invalid_argument("expected a boolean");
                out = value.get<bool>();
            } else if constexpr (std::is_integral_v<T>) {
                if (!value.is_number_integer()) throw std::invalid_argument("expected an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (value.is_number_unsigned()) {
                        out = value.get<T>();
                    } else {
                        const auto v = value.get<std::int64_t>();
                        if (v < 0) throw std::invalid_argument("expected a non-negative integer");
                        out = static_cast<T>(v);
                    }
                } else {
                    out = value.get<T>();
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!value.is_number()) throw std::invalid_argument("expected a number");
                out = value.get<T>();
            } else {
                if (!value.is_string()) throw std::invalid_argument("expected a string");
                out = value.get<std::string>();
            }
        } catch (const std::exception& e) {
            errors_.push_back({prefix_ + key, e.what()});
        }
    }

private:
    const json& doc_;
    std::string prefix_;
    std::vector<FieldError>& errors_;
};

template <typename T>
json optional_to_json(const std::optional<T>& value) {
    return value ? json(*value) : json(nullptr);
}

template <typename T>
std::optional<T> optional_from_json(const json& value) {
    if (value.is_null()) return std::nullopt;
    return value.get<T>();
}

void reject_unknown(const json& doc, const std::string& prefix, std::initializer_list<const char*> known,
                    std::vector<FieldError>& errors) {
    for (const auto& item : doc.items()) {
        const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; });
        if (!ok) errors.push_back({prefix + item.key(), "unknown field"});
    }
}

json point_to_json(const Point3& p) { return json::array({p[0], p[1], p[2]}); }

Point3 point_from_json(const json& doc) { return {doc.at(0).get<double>(), doc.at(1).get<double>(), doc.at(2).get<double>()}; }

}  // namespace

json config_to_json(const FederationConfig& c) {
    json doc;
    doc["n_clients"] = c.n_clients;
    doc["participants_per_round"] = c.participants_per_round;
    doc["n_rounds"] = c.n_rounds;
    if (c.attack) {
        const auto& a = *c.attack;
        doc["attack"] = {{"victim_class", a.victim_class},
                         {"target_class", a.target_class},
                         {"n_malicious", a.n_malicious},
                         {"window", json::array({a.window_start, a.window_end})},
                         {"availability_bias", optional_to_json(a.availability_bias)},
                         {"allow_same_class", a.allow_same_class}};
    } else {
        doc["attack"] = nullptr;
    }
    const auto& d = c.data_spec;
    if (d.kind == DataSpec::Kind::blobs) {
        doc["data_spec"] = {{"kind", "blobs"},
                            {"n_classes", d.blobs.n_classes},
                            {"n_features", d.blobs.n_features},
                            {"samples_per_class", d.blobs.samples_per_class},
                            {"min_center_distance", d.blobs.min_center_distance},
                            {"stddev", d.blobs.stddev},
                            {"unit_range", d.blobs.unit_range},
                            {"test_fraction", d.test_fraction}};
    } else {
        doc["data_spec"] = {{"kind", "idx"},
                            {"train_images", d.idx.train_images.string()},
                            {"train_labels", d.idx.train_labels.string()},
                            {"test_images", d.idx.test_images.string()},
                            {"test_labels", d.idx.test_labels.string()},
                            {"n_classes", d.idx.n_classes},
                            {"train_limit", optional_to_json(d.idx.train_limit)},
                            {"test_limit", optional_to_json(d.idx.test_limit)}};
    }
    const auto& t = c.train_spec;
    doc["train_spec"] = {{"learning_rate", t.learning_rate},   {"local_epochs", t.local_epochs},
                         {"batch_size", t.batch_size},         {"hidden_width", t.hidden_width},
                         {"lr_decay_every", t.lr_decay_every}, {"lr_decay_gamma", t.lr_decay_gamma}};
    doc["master_seed"] = c.master_seed;
    return doc;
}

FederationConfig config_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object", {{"", "expected an object"}});
    std::vector<FieldError> errors;
    FederationConfig c;
    FieldReader top(doc, "", errors);
    reject_unknown(doc, "",
                   {"n_clients", "participants_per_round", "n_rounds", "master_seed", "attack", "data_spec", "train_spec"},
                   errors);
    top.read("n_clients", c.n_clients);
    top.read("participants_per_round", c.participants_per_round);
    top.read("n_rounds", c.n_rounds);
    top.read("master_seed", c.master_seed);

    if (doc.contains("attack") && !doc.at("attack").is_null()) {
        const json& a = doc.at("attack");
        if (!a.is_object()) {
            errors.push_back({"attack", "expected an object or null"});
        } else {
            AttackConfig attack;
            attack.window_end = c.n_rounds;
            FieldReader r(a, "attack.", errors);
            reject_unknown(a, "attack.",
                           {"victim_class", "target_class", "n_malicious", "window", "availability_bias",
                            "allow_same_class"},
                           errors);
            r.read("victim_class", attack.victim_class);
            r.read("target_class", attack.target_class);
            r.read("n_malicious", attack.n_malicious);
            r.read("allow_same_class", attack.allow_same_class);
            if (a.contains("availability_bias") && !a.at("availability_bias").is_null()) {
                double p = 0.0;
                r.read("availability_bias", p);
                attack.availability_bias = p;
            }
            if (a.contains("window") && !a.at("window").is_null()) {
                const json& w = a.at("window");
                if (!w.is_array() || w.size() != 2 || !w[0].is_number_integer() || !w[1].is_number_integer() ||
                    w[0].get<std::int64_t>() < 0 || w[1].get<std::int64_t>() < 0) {
                    errors.push_back({"attack.window", "expected [start, end] with non-negative integers"});
                } else {
                    attack.window_start = w[0].get<std::size_t>();
                    attack.window_end = w[1].get<std::size_t>();
                }
            }
            c.attack = attack;
        }
    }

    if (doc.contains("data_spec") && !doc.at("data_spec").is_null()) {
        const json& d = doc.at("data_spec");
        if (!d.is_object()) {
            errors.push_back({"data_spec", "expected an object"});
        } else {
            FieldReader r(d, "data_spec.", errors);
            std::string kind = "blobs";
            r.read("kind", kind);
            if (kind == "blobs") {
                reject_unknown(d, "data_spec.",
                               {"kind", "n_classes", "n_features", "samples_per_class", "min_center_distance", "stddev",
                                "unit_range", "test_fraction"},
                               errors);
                c.data_spec.kind = DataSpec::Kind::blobs;
                r.read("n_classes", c.data_spec.blobs.n_classes);
                r.read("n_features", c.data_spec.blobs.n_features);
                r.read("samples_per_class", c.data_spec.blobs.samples_per_class);
                r.read("min_center_distance", c.data_spec.blobs.min_center_distance);
                r.read("stddev", c.data_spec.blobs.stddev);
                r.read("unit_range", c.data_spec.blobs.unit_range);
                r.read("test_fraction", c.data_spec.test_fraction);
            } else if (kind == "idx") {
                reject_unknown(d, "data_spec.",
                               {"kind", "train_images", "train_labels", "test_images", "test_labels", "n_classes",
                                "train_limit", "test_limit"},
                               errors);
                c.data_spec.kind = DataSpec::Kind::idx;
                std::string path;
                r.read("train_images", path);
                c.data_spec.idx.train_images = path;
                path.clear();
                r.read("train_labels", path);
                c.data_spec.idx.train_labels = path;
                path.clear();
                r.read("test_images", path);
                c.data_spec.idx.test_images = path;
                path.clear();
                r.read("test_labels", path);
                c.data_spec.idx.test_labels = path;
                r.read("n_classes", c.data_spec.idx.n_classes);
                if (d.contains("train_limit") && !d.at("train_limit").is_null()) {
                    std::size_t limit = 0;
                    r.read("train_limit", limit);
                    c.data_spec.idx.train_limit = limit;
                }
                if (d.contains("test_limit") && !d.at("test_limit").is_null()) {
                    std::size_t limit = 0;
                    r.read("test_limit", limit);
                    c.data_spec.idx.test_limit = limit;
                }
            } else {
                errors.push_back({"data_spec.kind", "expected \"blobs\" or \"idx\""});
            }
        }
    }

    if (doc.contains("train_spec") && !doc.at("train_spec").is_null()) {
        const json& t = doc.at("train_spec");
        if (!t.is_object()) {
            errors.push_back({"train_spec", "expected an object"});
        } else {
            FieldReader r(t, "train_spec.", errors);
            reject_unknown(t, "train_spec.",
                           {"learning_rate", "local_epochs", "batch_size", "hidden_width", "lr_decay_every",
                            "lr_decay_gamma"},
                           errors);
            r.read("learning_rate", c.train_spec.learning_rate);
            r.read("local_epochs", c.train_spec.local_epochs);
            r.read("batch_size", c.train_spec.batch_size);
            r.read("hidden_width", c.train_spec.hidden_width);
            r.read("lr_decay_every", c.train_spec.lr_decay_every);
            r.read("lr_decay_gamma", c.train_spec.lr_decay_gamma);
        }
    }

    if (errors.empty()) errors = validate_config(c);
    if (!errors.empty()) {
        std::string message = "invalid federation config:";
        for (const auto& e : errors) message += " " + e.field + ": " + e.message + ";";
        throw ConfigError(message, std::move(errors));
    }
    return c;
}

json params_to_json(const ModelParams& params) {
    json layers = json::array();
    for (const auto& layer : params.layers) {
        layers.push_back({{"rows", layer.weight.rows},
                          {"cols", layer.weight.cols},
                          {"weight", layer.weight.values},
                          {"bias", layer.bias}});
    }
    return {{"dims",
             {{"n_features", params.dims.n_features},
              {"hidden_width", params.dims.hidden_width},
              {"n_classes", params.dims.n_classes}}},
            {"layers", std::move(layers)}};
}

ModelParams params_from_json(const json& doc) {
    ModelParams p;
    const json& dims = doc.at("dims");
    p.dims = {dims.at("n_features").get<std::size_t>(), dims.at("hidden_width").get<std::size_t>(),
              dims.at("n_classes").get<std::size_t>()};
    for (const json& layer : doc.at("layers")) {
        DenseLayer l;
        l.weight.rows = layer.at("rows").get<std::size_t>();
        l.weight.cols = layer.at("cols").get<std::size_t>();
        l.weight.values = layer.at("weight").get<std::vector<double>>();
        l.bias = layer.at("bias").get<std::vector<double>>();
        if (l.weight.values.size() != l.weight.rows * l.weight.cols || l.bias.size() != l.weight.rows)
            throw ConfigError("layer shape does not match its values");
        p.layers.push_back(std::move(l));
    }
    return p;
}

json metrics_to_json(const EvalMetrics& m) {
    return {{"confusion", m.confusion}, {"per_class_f1", m.per_class_f1}, {"accuracy", m.accuracy}};
}

EvalMetrics metrics_from_json(const json& doc) {
    EvalMetrics m;
    m.confusion = doc.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
    m.per_class_f1 = doc.at("per_class_f1").get<std::vector<double>>();
    m.accuracy = doc.at("accuracy").get<double>();
    return m;
}

json round_to_json(const RoundRecord& r) {
    return {{"round_index", r.round_index},
            {"participant_ids", r.participant_ids},
            {"malicious_flags", r.malicious_flags},
            {"update_deltas", r.update_deltas},
            {"global_params_digest", r.global_params_digest},
            {"metrics", metrics_to_json(r.metrics)}};
}

RoundRecord round_from_json(const json& doc) {
    RoundRecord r;
    r.round_index = doc.at("round_index").get<std::size_t>();
    r.participant_ids = doc.at("participant_ids").get<std::vector<std::size_t>>();
    r.malicious_flags = doc.at("malicious_flags").get<std::vector<bool>>();
    r.update_deltas = doc.at("update_deltas").get<std::vector<std::vector<double>>>();
    r.global_params_digest = doc.at("global_params_digest").get<std::string>();
    r.metrics = metrics_from_json(doc.at("metrics"));
    if (r.malicious_flags.size() != r.participant_ids.size() || r.update_deltas.size() != r.participant_ids.size())
        throw ConfigError("round " + std::to_string(r.round_index) + " has misaligned participant lists");
    return r;
}

json signature_to_json(const SignatureRound& s) {
    json points = json::array();
    for (const auto& p : s.points) points.push_back(point_to_json(p));
    return {{"round", s.round_index},
            {"clients", s.client_ids},
            {"points", std::move(points)},
            {"malicious", s.malicious_flags},
            {"explained_variance", point_to_json(s.explained_variance)},
            {"separability", optional_to_json(s.separability)},
            {"density_ratio", optional_to_json(s.density_ratio)}};
}

SignatureRound signature_from_json(const json& doc) {
    SignatureRound s;
    s.round_index = doc.at("round").get<std::size_t>();
    s.client_ids = doc.at("clients").get<std::vector<std::size_t>>();
    for (const json& p : doc.at("points")) s.points.push_back(point_from_json(p));
    s.malicious_flags = doc.at("malicious").get<std::vector<bool>>();
    s.explained_variance = point_from_json(doc.at("explained_variance"));
    s.separability = optional_from_json<double>(doc.at("separability"));
    s.density_ratio = optional_from_json<double>(doc.at("density_ratio"));
    return s;
}

json trajectory_to_json(const Trajectory& t) {
    json points = json::array();
    for (const auto& p : t.points) {
        points.push_back({{"round", p.round_index},
                          {"client", p.client_id},
                          {"point", point_to_json(p.coordinates)},
                          {"malicious", p.malicious}});
    }
    return {{"explained_variance", point_to_json(t.explained_variance)}, {"points", std::move(points)}};
}

Trajectory trajectory_from_json(const json& doc) {
    Trajectory t;
    t.explained_variance = point_from_json(doc.at("explained_variance"));
    for (const json& p : doc.at("points")) {
        t.points.push_back({p.at("round").get<std::size_t>(), p.at("client").get<std::size_t>(),
                            point_from_json(p.at("point")), p.at("malicious").get<bool>()});
    }
    return t;
}

json run_to_json(const RunRecord& run) {
    json rounds = json::array();
    for (const auto& r : run.rounds) rounds.push_back(round_to_json(r));
    json doc = {{"run_id", run.run_id},
                {"config", config_to_json(run.config)},
                {"status", to_string(run.status)},
                {"rounds", std::move(rounds)},
                {"final_params", run.final_params ? params_to_json(*run.final_params) : json(nullptr)}};
    doc["failure"] = run.failure ? json{{"round", run.failure->round_index}, {"message", run.failure->message}}
                                 : json(nullptr);
    return doc;
}

RunRecord run_from_json(const json& doc) {
    RunRecord run;
    run.run_id = doc.at("run_id").get<std::string>();
    run.config = config_from_json(doc.at("config"));
    run.status = run_status_from_string(doc.at("status").get<std::string>());
    for (const json& r : doc.at("rounds")) run.rounds.push_back(round_from_json(r));
    if (doc.contains("final_params") && !doc.at("final_params").is_null())
        run.final_params = params_from_json(doc.at("final_params"));
    if (doc.contains("failure") && !doc.at("failure").is_null()) {
        const json& f = doc.at("failure");
        run.failure = RunFailure{f.at("round").get<std::size_t>(), f.at("message").get<std::string>()};
    }
    return run;
}

}  // namespace fedshadow
