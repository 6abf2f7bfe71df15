#include "fedshadow/service.hpp"

#include <httplib.h>

#include <charconv>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fedshadow/scenarios.hpp"
#include "fedshadow/serialization.hpp"

namespace fedshadow {

namespace fs = std::filesystem;

RunManager::RunManager(RunStore& store, std::size_t threads_per_run, AdvisoryThresholds thresholds)
    : store_(store), threads_per_run_(threads_per_run), thresholds_(std::move(thresholds)) {}

RunManager::~RunManager() {
    std::map<std::string, std::unique_ptr<std::jthread>> workers;
    {
        std::lock_guard lock(mutex_);
        workers.swap(workers_);
    }
    for (auto& [id, worker] : workers) worker->request_stop();
    workers.clear();  // joins
}

std::string RunManager::submit(const FederationConfig& config) {
    require_valid(config);
    std::string run_id = new_run_id();
    while (store_.exists(run_id)) run_id = new_run_id();
    store_.create_run(run_id, config);
    std::lock_guard lock(mutex_);
    workers_[run_id] = std::make_unique<std::jthread>(
        [this](std::stop_token stop, std::string id, FederationConfig cfg) { execute(stop, std::move(id), std::move(cfg)); },
        run_id, config);
    return run_id;
}

void RunManager::execute(std::stop_token stop, std::string run_id, FederationConfig config) {
    std::size_t completed = 0;
    try {
        store_.save_status(run_id, RunStatus::running);
        const FederationData data = prepare_data(config);
        RunOptions options;
        options.threads = threads_per_run_;
        options.stop = stop;
        options.run_id = run_id;
        options.on_round = [&](const RoundRecord& round) {
            store_.save_round(run_id, round);
            completed = round.round_index;
            try {
                auto signature = analyze_round(round, data.dims);
                std::lock_guard lock(mutex_);
                live_[run_id][round.round_index] = std::move(signature);
            } catch (const AnalysisError&) {
                // Too few points for PCA; the round simply has no live signature.
            }
        };
        RunRecord run = run_federation(config, data, options);
        if (!run.rounds.empty()) {
            const RunAnalysis analysis = analyze_run(run);
            store_.save_signatures(run_id, analysis.signatures);
            store_.save_trajectory(run_id, analysis.trajectory);
            store_.save_advisory(run_id, report_to_json(advise(run, analysis.signatures, thresholds_)));
        }
        // Status last: a completed run always has its analyses on disk.
        store_.finish_run(run);
    } catch (const std::exception& e) {
        bool deleting = false;
        {
            std::lock_guard lock(mutex_);
            deleting = deleting_.count(run_id) > 0;
        }
        if (!deleting) {
            try {
                store_.save_status(run_id, RunStatus::failed, RunFailure{completed + 1, e.what()});
            } catch (const std::exception& inner) {
                std::cerr << "run " << run_id << ": cannot record failure: " << inner.what() << "\n";
            }
        }
    }
    std::lock_guard lock(mutex_);
    live_.erase(run_id);
    finished_.insert(run_id);
}

void RunManager::remove(const std::string& run_id) {
    std::unique_ptr<std::jthread> worker;
    {
        std::lock_guard lock(mutex_);
        if (deleting_.count(run_id)) throw ConflictError("run '" + run_id + "' is already being deleted");
        if (!store_.exists(run_id)) throw NotFoundError("unknown run '" + run_id + "'");
        deleting_.insert(run_id);
        if (auto it = workers_.find(run_id); it != workers_.end()) {
            worker = std::move(it->second);
            workers_.erase(it);
        }
    }
    if (worker) {
        worker->request_stop();
        worker->join();
    }
    try {
        store_.delete_run(run_id);
    } catch (...) {
        std::lock_guard lock(mutex_);
        deleting_.erase(run_id);
        throw;
    }
    std::lock_guard lock(mutex_);
    deleting_.erase(run_id);
    live_.erase(run_id);
    finished_.erase(run_id);
}

bool RunManager::is_active(const std::string& run_id) const {
    std::lock_guard lock(mutex_);
    return workers_.count(run_id) > 0 && finished_.count(run_id) == 0;
}

void RunManager::wait(const std::string& run_id) {
    std::unique_ptr<std::jthread> worker;
    {
        std::lock_guard lock(mutex_);
        if (auto it = workers_.find(run_id); it != workers_.end()) {
            worker = std::move(it->second);
            workers_.erase(it);
        }
    }
    if (worker) worker->join();
}

std::optional<SignatureRound> RunManager::live_signature(const std::string& run_id, std::size_t round_index) const {
    std::lock_guard lock(mutex_);
    const auto run = live_.find(run_id);
    if (run == live_.end()) return std::nullopt;
    const auto round = run->second.find(round_index);
    if (round == run->second.end()) return std::nullopt;
    return round->second;
}

int port_from_env(int fallback) {
    const char* text = std::getenv("FEDSHADOW_PORT");
    if (!text || !*text) return fallback;
    int port = 0;
    const auto [end, ec] = std::from_chars(text, text + std::char_traits<char>::length(text), port);
    if (ec != std::errc{} || *end != '\0' || port < 0 || port > 65535) return fallback;
    return port;
}

std::string iso_timestamp(std::int64_t ns) {
    const std::time_t seconds = static_cast<std::time_t>(ns / 1'000'000'000);
    const auto millis = static_cast<int>((ns / 1'000'000) % 1000);
    std::tm tm{};
    gmtime_r(&seconds, &tm);
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, millis);
    return buffer;
}

namespace {

class BadRequest : public Error {
public:
    using Error::Error;
};

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, const json& fields = json::array()) {
    send_json(res, status, {{"error", message}, {"fields", fields}});
}

template <class F>
httplib::Server::Handler guarded(F&& handler) {
    return [handler = std::forward<F>(handler)](const httplib::Request& req, httplib::Response& res) {
        try {
            handler(req, res);
        } catch (const NotFoundError& e) {
            send_error(res, 404, e.what());
        } catch (const ConflictError& e) {
            send_error(res, 409, e.what());
        } catch (const BadRequest& e) {
            send_error(res, 400, e.what());
        } catch (const ConfigError& e) {
            json fields = json::array();
            for (const auto& f : e.fields()) fields.push_back({{"field", f.field}, {"message", f.message}});
            send_error(res, 400, e.what(), fields);
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    };
}

std::size_t parse_index(const std::string& text, const std::string& name) {
    std::size_t value = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc{} || end != text.data() + text.size())
        throw BadRequest(name + " must be a non-negative integer");
    return value;
}

int config_classes(const FederationConfig& config) {
    return config.data_spec.kind == DataSpec::Kind::blobs ? config.data_spec.blobs.n_classes
                                                          : config.data_spec.idx.n_classes;
}

json handle_json(const RunSummary& s) {
    return {{"run_id", s.run_id},
            {"status", to_string(s.status)},
            {"completed_rounds", s.completed_rounds},
            {"n_rounds", s.config.n_rounds},
            {"created_at", iso_timestamp(s.created_at)},
            {"config_summary", config_summary(s.config)}};
}

std::optional<std::string> read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

}  // namespace

ApiServer::ApiServer(ServiceOptions options)
    : options_(std::move(options)),
      store_(options_.store_root),
      manager_(std::make_unique<RunManager>(store_, options_.threads_per_run, options_.thresholds)),
      server_(std::make_unique<httplib::Server>()) {
    routes();
}

ApiServer::~ApiServer() {
    stop();
    manager_.reset();
}

int ApiServer::bind(const std::string& host, int port) {
    if (port == 0) return server_->bind_to_any_port(host);
    return server_->bind_to_port(host, port) ? port : -1;
}

bool ApiServer::listen() { return server_->listen_after_bind(); }

void ApiServer::stop() {
    if (server_) server_->stop();
}

void ApiServer::routes() {
    auto& srv = *server_;
    RunManager& runs = *manager_;
    RunStore& store = store_;

    srv.Get("/api/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

    srv.Get("/api/scenarios", guarded([](const httplib::Request&, httplib::Response& res) {
        json out = json::array();
        for (const auto& s : scenario_catalog())
            out.push_back({{"name", s.name}, {"description", s.description}, {"config", config_to_json(s.config)}});
        send_json(res, 200, out);
    }));

    srv.Post("/api/runs", guarded([&runs](const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception& e) {
            throw BadRequest(std::string("request body is not valid JSON: ") + e.what());
        }
        if (!body.is_object()) throw BadRequest("request body must be a JSON object");
        const std::string run_id = runs.submit(config_from_json(body));
        send_json(res, 202, {{"run_id", run_id}});
    }));

    srv.Get("/api/runs", guarded([&store](const httplib::Request&, httplib::Response& res) {
        json out = json::array();
        for (const auto& s : store.list_runs()) out.push_back(handle_json(s));
        send_json(res, 200, out);
    }));

    srv.Get(R"(/api/runs/([^/]+))", guarded([&store](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const RunSummary s = store.describe(id);
        json out = handle_json(s);
        out["config"] = config_to_json(s.config);
        out["failure"] = s.failure ? json{{"round", s.failure->round_index}, {"message", s.failure->message}}
                                   : json(nullptr);
        const fs::path dir = store.run_dir(id);
        out["analyses"] = {{"signatures", fs::exists(dir / "signatures.json")},
                           {"trajectory", fs::exists(dir / "trajectory.json")},
                           {"advisory", fs::exists(dir / "advisory.json")}};
        send_json(res, 200, out);
    }));

    srv.Get(R"(/api/runs/([^/]+)/metrics)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const FederationConfig config = store.load_config(id);
        if (!req.has_param("class")) throw BadRequest("query parameter 'class' is required");
        const std::size_t cls = parse_index(req.get_param_value("class"), "class");
        if (cls >= static_cast<std::size_t>(config_classes(config)))
            throw BadRequest("class must be below " + std::to_string(config_classes(config)));
        const std::size_t from = req.has_param("from") ? parse_index(req.get_param_value("from"), "from") : 1;
        const std::size_t to = req.has_param("to") ? parse_index(req.get_param_value("to"), "to") : config.n_rounds;
        if (from < 1) throw BadRequest("from must be at least 1");
        if (from > to) throw BadRequest("from must not exceed to");
        json out = json::array();
        for (const auto& round : store.load_rounds(id, LoadMode::tolerant)) {
            if (round.round_index < from || round.round_index > to) continue;
            const auto& f1 = round.metrics.per_class_f1;
            out.push_back({{"round", round.round_index},
                           {"f1", cls < f1.size() ? f1[cls] : 0.0},
                           {"accuracy", round.metrics.accuracy}});
        }
        send_json(res, 200, out);
    }));

    srv.Get(R"(/api/runs/([^/]+)/rounds/([^/]+)/signature)",
            guarded([&store, &runs](const httplib::Request& req, httplib::Response& res) {
                const std::string id = req.matches[1];
                const std::size_t r = parse_index(req.matches[2], "round");
                const std::size_t completed = store.count_rounds(id);
                if (r < 1 || r > completed)
                    throw NotFoundError("round " + std::to_string(r) + " is not complete (" + std::to_string(completed) +
                                        " rounds so far)");
                const fs::path stored = store.run_dir(id) / "signatures.json";
                if (const auto text = read_text(stored)) {
                    for (const auto& s : json::parse(*text)) {
                        if (s.at("round").get<std::size_t>() == r) return send_json(res, 200, s);
                    }
                }
                if (auto live = runs.live_signature(id, r)) return send_json(res, 200, signature_to_json(*live));
                // Neither persisted nor cached (for instance a run interrupted
                // mid-flight): compute it from the stored round.
                const auto rounds = store.load_rounds(id, LoadMode::tolerant);
                if (r > rounds.size()) throw NotFoundError("round " + std::to_string(r) + " is not complete");
                RunRecord shell;
                shell.config = store.load_config(id);
                shell.rounds = {rounds[r - 1]};
                send_json(res, 200, signature_to_json(analyze_round(rounds[r - 1], run_dims(shell))));
            }));

    const auto serve_file = [&store](const char* name, const char* what) {
        return guarded([&store, name, what](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            store.describe(id);
            const auto text = read_text(store.run_dir(id) / name);
            if (!text) throw NotFoundError(std::string(what) + " for run '" + id + "' is not available yet");
            res.status = 200;
            res.set_content(*text, "application/json");
        });
    };
    srv.Get(R"(/api/runs/([^/]+)/trajectory)", serve_file("trajectory.json", "trajectory"));
    srv.Get(R"(/api/runs/([^/]+)/advisory)", serve_file("advisory.json", "advisory report"));

    srv.Delete(R"(/api/runs/([^/]+))", guarded([&runs](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        runs.remove(id);
        send_json(res, 200, {{"run_id", id}, {"deleted", true}});
    }));

    if (options_.static_root && fs::is_directory(*options_.static_root))
        srv.set_mount_point("/", options_.static_root->string());
}

}  // namespace fedshadow
