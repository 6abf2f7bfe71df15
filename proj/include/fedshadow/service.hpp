#pragma once

// HTTP API over the run store. Federations run on background workers; every
// read is served from what is already persisted, so requests never wait on a
// training round.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fedshadow/advisory.hpp"
#include "fedshadow/federation.hpp"
#include "fedshadow/signature.hpp"
#include "fedshadow/store.hpp"

namespace httplib {
class Server;
}

namespace fedshadow {

/// Thrown by RunManager::remove when the run is already being deleted.
class ConflictError : public Error {
public:
    using Error::Error;
};

/// Owns the background workers. One writer per run; any number of readers.
class RunManager {
public:
    RunManager(RunStore& store, std::size_t threads_per_run = 1, AdvisoryThresholds thresholds = {});
    ~RunManager();

    RunManager(const RunManager&) = delete;
    RunManager& operator=(const RunManager&) = delete;

    /// Persists the run as pending and starts it. Throws ConfigError.
    std::string submit(const FederationConfig& config);

    /// Stops a running run, waits for its worker and removes its directory.
    /// Throws NotFoundError, or ConflictError while another delete is underway.
    void remove(const std::string& run_id);

    bool is_active(const std::string& run_id) const;

    /// Blocks until the run's worker has finished (no-op when idle).
    void wait(const std::string& run_id);

    /// Signature of a completed round, from the live cache when present.
    std::optional<SignatureRound> live_signature(const std::string& run_id, std::size_t round_index) const;

    RunStore& store() { return store_; }

private:
    void execute(std::stop_token stop, std::string run_id, FederationConfig config);

    RunStore& store_;
    std::size_t threads_per_run_;
    AdvisoryThresholds thresholds_;
    mutable std::mutex mutex_;
    std::map<std::string, std::unique_ptr<std::jthread>> workers_;
    std::set<std::string> deleting_;
    std::set<std::string> finished_;
    std::map<std::string, std::map<std::size_t, SignatureRound>> live_;
};

struct ServiceOptions {
    std::filesystem::path store_root = "runs";
    std::optional<std::filesystem::path> static_root;
    std::size_t threads_per_run = 1;
    AdvisoryThresholds thresholds;
};

/// Port from FEDSHADOW_PORT when set and valid, else `fallback`.
int port_from_env(int fallback = 8080);

/// Nanoseconds since the epoch as an ISO-8601 UTC timestamp with milliseconds.
std::string iso_timestamp(std::int64_t ns);

class ApiServer {
public:
    explicit ApiServer(ServiceOptions options);
    ~ApiServer();

    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    /// Binds to `port` (0 picks a free one) and returns the bound port, or -1.
    int bind(const std::string& host, int port);

    /// Serves until stop() is called. Call bind first.
    bool listen();

    void stop();

    RunManager& runs() { return *manager_; }

private:
    void routes();

    ServiceOptions options_;
    RunStore store_;
    std::unique_ptr<RunManager> manager_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace fedshadow
