#include "fedshadow/store.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include "fedshadow/errors.hpp"

namespace fs = std::filesystem;

namespace fedshadow {

namespace {

constexpr const char* kConfigFile = "config.json";
constexpr const char* kRoundsFile = "rounds.jsonl";
constexpr const char* kStatusFile = "status.json";
constexpr const char* kSignaturesFile = "signatures.json";
constexpr const char* kTrajectoryFile = "trajectory.json";
constexpr const char* kAdvisoryFile = "advisory.json";

std::string errno_text() { return std::strerror(errno); }

std::int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::optional<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

json read_json(const fs::path& path) {
    const auto text = read_file(path);
    if (!text) throw NotFoundError("missing " + path.string());
    try {
        return json::parse(*text);
    } catch (const json::exception& e) {
        throw LoadError("corrupt JSON in " + path.string() + ": " + e.what(), 0);
    }
}

template <class F>
auto parse_document(const fs::path& path, F&& convert) {
    const json doc = read_json(path);
    try {
        return convert(doc);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw LoadError("invalid content in " + path.string() + ": " + e.what(), 0);
    }
}

void fsync_dir(const fs::path& dir) {
    const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
    if (fd < 0) return;
    ::fsync(fd);
    ::close(fd);
}

void write_all(int fd, const std::string& data, const fs::path& path) {
    std::size_t done = 0;
    while (done < data.size()) {
        const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw StorageError("write to " + path.string() + " failed: " + errno_text());
        }
        done += static_cast<std::size_t>(n);
    }
}

// Complete lines in rounds.jsonl and the byte offset just past the last one.
std::pair<std::size_t, std::uintmax_t> complete_lines(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot read " + path.string());
    std::size_t lines = 0;
    std::uintmax_t offset = 0, position = 0;
    char buffer[1 << 16];
    while (in.read(buffer, sizeof buffer) || in.gcount() > 0) {
        const auto got = static_cast<std::size_t>(in.gcount());
        for (std::size_t i = 0; i < got; ++i) {
            if (buffer[i] == '\n') {
                ++lines;
                offset = position + i + 1;
            }
        }
        position += got;
    }
    return {lines, offset};
}

RunStatus status_or_pending(const json& status) {
    if (!status.contains("status")) return RunStatus::pending;
    return run_status_from_string(status.at("status").get<std::string>());
}

}  // namespace

bool valid_run_id(const std::string& run_id) {
    static const std::regex pattern("^[a-z0-9-]{8,64}$");
    return std::regex_match(run_id, pattern);
}

std::string new_run_id() {
    static std::mutex mutex;
    static std::mt19937_64 engine{std::random_device{}() ^ static_cast<std::uint64_t>(now_ns())};
    std::lock_guard lock(mutex);
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "run-%016llx", static_cast<unsigned long long>(engine()));
    return buffer;
}

json config_summary(const FederationConfig& config) {
    json attack = nullptr;
    if (config.attack) {
        const auto& a = *config.attack;
        attack = {{"victim_class", a.victim_class},
                  {"target_class", a.target_class},
                  {"n_malicious", a.n_malicious},
                  {"window", json::array({a.window_start, a.window_end})},
                  {"availability_bias", a.availability_bias ? json(*a.availability_bias) : json(nullptr)}};
    }
    return {{"n_clients", config.n_clients},
            {"participants_per_round", config.participants_per_round},
            {"n_rounds", config.n_rounds},
            {"master_seed", config.master_seed},
            {"data", config.data_spec.kind == DataSpec::Kind::blobs ? "blobs" : "idx"},
            {"attack", attack}};
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
    fs::path tmp = path;
    tmp += ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw StorageError("cannot write " + tmp.string() + ": " + errno_text());
    try {
        write_all(fd, contents, tmp);
    } catch (...) {
        ::close(fd);
        throw;
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) throw StorageError("cannot flush " + tmp.string() + ": " + errno_text());
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw StorageError("cannot rename " + tmp.string() + ": " + ec.message());
    fsync_dir(path.parent_path());
}

RunStore::RunStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw StorageError("cannot create store root " + root_.string() + ": " + ec.message());
}

fs::path RunStore::run_dir(const std::string& run_id) const { return root_ / run_id; }

bool RunStore::exists(const std::string& run_id) const {
    return valid_run_id(run_id) && fs::is_regular_file(run_dir(run_id) / kConfigFile);
}

fs::path RunStore::checked_dir(const std::string& run_id) const {
    if (!valid_run_id(run_id)) throw NotFoundError("invalid run id '" + run_id + "'");
    const fs::path dir = run_dir(run_id);
    if (!fs::is_directory(dir)) throw NotFoundError("unknown run '" + run_id + "'");
    return dir;
}

void RunStore::create_run(const std::string& run_id, const FederationConfig& config) {
    if (!valid_run_id(run_id)) throw StorageError("invalid run id '" + run_id + "'");
    const fs::path dir = run_dir(run_id);
    std::error_code ec;
    if (!fs::create_directory(dir, ec)) {
        throw StorageError(ec ? "cannot create " + dir.string() + ": " + ec.message()
                              : "run '" + run_id + "' already exists");
    }
    write_file_atomic(dir / kRoundsFile, "");
    write_file_atomic(dir / kStatusFile,
                      json{{"status", to_string(RunStatus::pending)}, {"created_at", now_ns()},
                           {"completed_rounds", 0}, {"failure", nullptr}, {"final_params", nullptr}}
                          .dump());
    // config.json goes last: its presence marks the run as valid.
    write_file_atomic(dir / kConfigFile, config_to_json(config).dump(2));
    std::lock_guard lock(mutex_);
    round_counts_[run_id] = 0;
}

std::size_t RunStore::stored_rounds(const std::string& run_id) {
    if (auto it = round_counts_.find(run_id); it != round_counts_.end()) return it->second;
    const fs::path path = checked_dir(run_id) / kRoundsFile;
    const auto [lines, offset] = complete_lines(path);
    std::error_code ec;
    if (fs::file_size(path, ec) != offset && !ec) {
        // A torn line from an interrupted append; drop it before appending.
        fs::resize_file(path, offset, ec);
        if (ec) throw StorageError("cannot repair " + path.string() + ": " + ec.message());
    }
    round_counts_[run_id] = lines;
    return lines;
}

void RunStore::save_round(const std::string& run_id, const RoundRecord& round) {
    std::lock_guard lock(mutex_);
    const std::size_t have = stored_rounds(run_id);
    if (round.round_index != have + 1) {
        throw SequencingError("run '" + run_id + "' has " + std::to_string(have) + " rounds; cannot append round " +
                              std::to_string(round.round_index));
    }
    const fs::path path = run_dir(run_id) / kRoundsFile;
    const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
    if (fd < 0) throw StorageError("cannot open " + path.string() + ": " + errno_text());
    try {
        write_all(fd, round_to_json(round).dump() + "\n", path);
    } catch (...) {
        ::close(fd);
        round_counts_.erase(run_id);
        throw;
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) {
        round_counts_.erase(run_id);
        throw StorageError("cannot flush " + path.string() + ": " + errno_text());
    }
    round_counts_[run_id] = have + 1;
}

void RunStore::save_status(const std::string& run_id, RunStatus status, const std::optional<RunFailure>& failure,
                           const std::optional<ModelParams>& final_params) {
    const fs::path dir = checked_dir(run_id);
    std::int64_t created_at = now_ns();
    if (const auto text = read_file(dir / kStatusFile)) {
        const json previous = json::parse(*text, nullptr, false);
        if (previous.is_object() && previous.contains("created_at")) created_at = previous["created_at"].get<std::int64_t>();
    }
    std::size_t completed = 0;
    {
        std::lock_guard lock(mutex_);
        completed = stored_rounds(run_id);
    }
    json doc = {{"status", to_string(status)},
                {"created_at", created_at},
                {"completed_rounds", completed},
                {"failure", failure ? json{{"round", failure->round_index}, {"message", failure->message}} : json(nullptr)},
                {"final_params", final_params ? params_to_json(*final_params) : json(nullptr)}};
    write_file_atomic(dir / kStatusFile, doc.dump());
}

void RunStore::finish_run(const RunRecord& run) { save_status(run.run_id, run.status, run.failure, run.final_params); }

void RunStore::save_signatures(const std::string& run_id, const std::vector<SignatureRound>& signatures) {
    json doc = json::array();
    for (const auto& s : signatures) doc.push_back(signature_to_json(s));
    write_file_atomic(checked_dir(run_id) / kSignaturesFile, doc.dump());
}

void RunStore::save_trajectory(const std::string& run_id, const Trajectory& trajectory) {
    write_file_atomic(checked_dir(run_id) / kTrajectoryFile, trajectory_to_json(trajectory).dump());
}

void RunStore::save_advisory(const std::string& run_id, const json& report) {
    write_file_atomic(checked_dir(run_id) / kAdvisoryFile, report.dump(2));
}

std::vector<RoundRecord> RunStore::load_rounds(const std::string& run_id, LoadMode mode) const {
    const fs::path path = checked_dir(run_id) / kRoundsFile;
    const auto text = read_file(path);
    if (!text) throw LoadError("missing " + path.string(), 0);
    std::vector<RoundRecord> rounds;
    std::size_t start = 0;
    std::size_t line = 0;
    while (start < text->size()) {
        ++line;
        const std::size_t end = text->find('\n', start);
        if (end == std::string::npos) {
            if (mode == LoadMode::tolerant) break;
            throw LoadError(path.string() + ": line " + std::to_string(line) + " is truncated", line);
        }
        const std::string_view body(text->data() + start, end - start);
        start = end + 1;
        RoundRecord round;
        try {
            round = round_from_json(json::parse(body));
        } catch (const std::exception& e) {
            throw LoadError(path.string() + ": line " + std::to_string(line) + ": " + e.what(), line);
        }
        if (round.round_index != line) {
            throw LoadError(path.string() + ": line " + std::to_string(line) + " holds round " +
                                std::to_string(round.round_index),
                            line);
        }
        rounds.push_back(std::move(round));
    }
    return rounds;
}

StoredRun RunStore::load_run(const std::string& run_id, LoadMode mode) const {
    const fs::path dir = checked_dir(run_id);
    if (!fs::is_regular_file(dir / kConfigFile)) throw NotFoundError("run '" + run_id + "' has no config");
    StoredRun stored;
    RunRecord& run = stored.run;
    run.run_id = run_id;
    run.config = load_config(run_id);
    run.rounds = load_rounds(run_id, mode);

    if (fs::is_regular_file(dir / kStatusFile)) {
        parse_document(dir / kStatusFile, [&](const json& doc) {
            run.status = status_or_pending(doc);
            stored.created_at = doc.value("created_at", std::int64_t{0});
            if (doc.contains("failure") && !doc["failure"].is_null()) {
                run.failure = RunFailure{doc["failure"].at("round").get<std::size_t>(),
                                         doc["failure"].at("message").get<std::string>()};
            }
            if (doc.contains("final_params") && !doc["final_params"].is_null())
                run.final_params = params_from_json(doc["final_params"]);
            return 0;
        });
    }
    if (fs::is_regular_file(dir / kSignaturesFile)) {
        stored.signatures = parse_document(dir / kSignaturesFile, [](const json& doc) {
            std::vector<SignatureRound> out;
            for (const auto& s : doc) out.push_back(signature_from_json(s));
            return out;
        });
    }
    if (fs::is_regular_file(dir / kTrajectoryFile))
        stored.trajectory = parse_document(dir / kTrajectoryFile, [](const json& doc) { return trajectory_from_json(doc); });
    if (fs::is_regular_file(dir / kAdvisoryFile)) stored.advisory = read_json(dir / kAdvisoryFile);
    return stored;
}

FederationConfig RunStore::load_config(const std::string& run_id) const {
    const fs::path path = checked_dir(run_id) / kConfigFile;
    if (!fs::is_regular_file(path)) throw NotFoundError("run '" + run_id + "' has no config");
    return parse_document(path, [](const json& doc) { return config_from_json(doc); });
}

std::size_t RunStore::count_rounds(const std::string& run_id) const {
    return complete_lines(checked_dir(run_id) / kRoundsFile).first;
}

RunSummary RunStore::describe(const std::string& run_id) const {
    RunSummary summary;
    summary.run_id = run_id;
    summary.config = load_config(run_id);
    const fs::path status_path = run_dir(run_id) / kStatusFile;
    if (fs::is_regular_file(status_path)) {
        parse_document(status_path, [&](const json& doc) {
            summary.status = status_or_pending(doc);
            summary.created_at = doc.value("created_at", std::int64_t{0});
            if (doc.contains("failure") && !doc["failure"].is_null()) {
                summary.failure = RunFailure{doc["failure"].at("round").get<std::size_t>(),
                                             doc["failure"].at("message").get<std::string>()};
            }
            return 0;
        });
    }
    summary.completed_rounds = count_rounds(run_id);
    return summary;
}

std::vector<RunSummary> RunStore::list_runs() const {
    std::vector<RunSummary> runs;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(root_, ec)) {
        const std::string id = entry.path().filename().string();
        if (!entry.is_directory() || !valid_run_id(id)) continue;
        if (!fs::is_regular_file(entry.path() / kConfigFile)) continue;
        try {
            runs.push_back(describe(id));
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping run directory " << entry.path().string() << ": " << e.what() << "\n";
        }
    }
    std::sort(runs.begin(), runs.end(), [](const RunSummary& a, const RunSummary& b) {
        if (a.created_at != b.created_at) return a.created_at > b.created_at;
        return a.run_id > b.run_id;
    });
    return runs;
}

void RunStore::delete_run(const std::string& run_id) {
    const fs::path dir = checked_dir(run_id);
    std::error_code ec;
    fs::remove_all(dir, ec);
    if (ec) throw StorageError("cannot delete " + dir.string() + ": " + ec.message());
    std::lock_guard lock(mutex_);
    round_counts_.erase(run_id);
}

}  // namespace fedshadow
