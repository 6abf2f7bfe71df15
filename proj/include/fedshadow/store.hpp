#pragma once

// Filesystem run store. Layout, one directory per run under the root:
//
//   <root>/<run_id>/config.json        FederationConfig
//   <root>/<run_id>/rounds.jsonl       one RoundRecord per line, line i = round i+1
//   <root>/<run_id>/status.json        status, created_at, failure, final_params
//   <root>/<run_id>/signatures.json    per-round SignatureRound list (optional)
//   <root>/<run_id>/trajectory.json    Trajectory (optional)
//   <root>/<run_id>/advisory.json      advisory report (optional)

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fedshadow/federation.hpp"
#include "fedshadow/serialization.hpp"
#include "fedshadow/signature.hpp"

namespace fedshadow {

bool valid_run_id(const std::string& run_id);

/// Fresh id of the form "run-<16 hex digits>".
std::string new_run_id();

struct RunSummary {
    std::string run_id;
    RunStatus status = RunStatus::pending;
    std::int64_t created_at = 0;   // nanoseconds since the Unix epoch
    std::size_t completed_rounds = 0;
    FederationConfig config;
    std::optional<RunFailure> failure;
};

struct StoredRun {
    RunRecord run;
    std::int64_t created_at = 0;
    std::optional<std::vector<SignatureRound>> signatures;
    std::optional<Trajectory> trajectory;
    std::optional<json> advisory;
};

enum class LoadMode {
    strict,    // any bad line, including an unterminated last one, throws LoadError
    tolerant,  // an unterminated last line is ignored (live runs)
};

/// Compact description of a config for listings.
json config_summary(const FederationConfig& config);

class RunStore {
public:
    /// Creates the root directory if needed.
    explicit RunStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path run_dir(const std::string& run_id) const;
    bool exists(const std::string& run_id) const;

    /// New run directory with config.json, an empty rounds.jsonl and a
    /// pending status. Throws StorageError if the id is taken or invalid.
    void create_run(const std::string& run_id, const FederationConfig& config);

    /// Appends one line and fsyncs before returning. The round index must be
    /// exactly one past the rounds already stored, else SequencingError. A
    /// torn line left by an earlier crash is cut off first.
    void save_round(const std::string& run_id, const RoundRecord& round);

    void save_status(const std::string& run_id, RunStatus status, const std::optional<RunFailure>& failure = {},
                     const std::optional<ModelParams>& final_params = {});

    /// Writes status and final params from the record (rounds must already be saved).
    void finish_run(const RunRecord& run);

    void save_signatures(const std::string& run_id, const std::vector<SignatureRound>& signatures);
    void save_trajectory(const std::string& run_id, const Trajectory& trajectory);
    void save_advisory(const std::string& run_id, const json& report);

    /// Throws NotFoundError for an unknown run and LoadError (with the
    /// 1-based line number for rounds.jsonl) for corrupt content.
    StoredRun load_run(const std::string& run_id, LoadMode mode = LoadMode::strict) const;

    FederationConfig load_config(const std::string& run_id) const;

    /// Status, creation time, config and the count of complete round lines.
    RunSummary describe(const std::string& run_id) const;

    /// Complete lines in rounds.jsonl.
    std::size_t count_rounds(const std::string& run_id) const;

    /// rounds.jsonl alone.
    std::vector<RoundRecord> load_rounds(const std::string& run_id, LoadMode mode = LoadMode::strict) const;

    /// Newest first. Directories without config.json are skipped; unreadable
    /// ones are skipped with a warning on stderr.
    std::vector<RunSummary> list_runs() const;

    /// Removes the run directory. Throws NotFoundError for an unknown run.
    void delete_run(const std::string& run_id);

private:
    std::filesystem::path checked_dir(const std::string& run_id) const;
    std::size_t stored_rounds(const std::string& run_id);

    std::filesystem::path root_;
    std::mutex mutex_;
    std::map<std::string, std::size_t> round_counts_;
};

/// Writes `contents` to a temporary sibling, fsyncs it and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace fedshadow
