#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "fedshadow/advisory.hpp"
#include "fedshadow/errors.hpp"
#include "fedshadow/federation.hpp"
#include "fedshadow/scenarios.hpp"
#include "fedshadow/serialization.hpp"
#include "fedshadow/service.hpp"
#include "fedshadow/signature.hpp"
#include "fedshadow/store.hpp"

namespace fedshadow::cli {

namespace fs = std::filesystem;

namespace {

std::string fixed(double value, int digits = 4) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(digits) << value;
    return out.str();
}

void print_config_error(const ConfigError& e, std::ostream& err) {
    err << "error: " << e.what() << "\n";
    for (const auto& f : e.fields()) err << "  " << f.field << ": " << f.message << "\n";
}

FederationConfig read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(doc);
}

// A run directory is <store root>/<run id>.
struct RunLocation {
    fs::path root;
    std::string run_id;
};

RunLocation locate(const fs::path& run_dir) {
    fs::path dir = run_dir;
    if (dir.filename().empty()) dir = dir.parent_path();
    if (!fs::is_directory(dir)) throw NotFoundError("no run directory at " + run_dir.string());
    RunLocation loc{dir.parent_path(), dir.filename().string()};
    if (loc.root.empty()) loc.root = ".";
    if (!valid_run_id(loc.run_id)) throw NotFoundError("'" + loc.run_id + "' is not a run directory name");
    return loc;
}

void print_metrics_table(const RoundRecord& last, const FederationConfig& config, std::ostream& out) {
    out << "class   f1\n";
    const auto& f1 = last.metrics.per_class_f1;
    for (std::size_t c = 0; c < f1.size(); ++c) {
        std::string marker;
        if (config.attack && static_cast<int>(c) == config.attack->victim_class) marker = "  (victim)";
        if (config.attack && static_cast<int>(c) == config.attack->target_class) marker = "  (target)";
        out << std::setw(5) << c << "   " << fixed(f1[c]) << marker << "\n";
    }
    out << "accuracy " << fixed(last.metrics.accuracy) << "\n";
}

json final_metrics_json(const RunRecord& run) {
    if (run.rounds.empty()) return nullptr;
    const auto& m = run.rounds.back().metrics;
    return {{"round", run.rounds.back().round_index}, {"accuracy", m.accuracy}, {"per_class_f1", m.per_class_f1}};
}

int simulate(const std::optional<std::string>& config_path, const std::optional<std::string>& scenario,
             const std::string& out_dir, std::optional<std::uint64_t> seed, std::size_t threads,
             const std::optional<std::string>& run_id_flag, bool as_json, std::ostream& out, std::ostream& err) {
    FederationConfig config;
    try {
        if (scenario) {
            auto found = find_scenario(*scenario);
            if (!found) {
                err << "error: unknown scenario '" << *scenario << "' (see `fedshadow scenarios`)\n";
                return kFailure;
            }
            config = found->config;
        } else {
            config = read_config_file(*config_path);
        }
        if (seed) config.master_seed = *seed;
        require_valid(config);
    } catch (const ConfigError& e) {
        print_config_error(e, err);
        return kFailure;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }

    RunStore store(out_dir);
    const std::string run_id = run_id_flag ? *run_id_flag : new_run_id();
    if (!valid_run_id(run_id)) {
        err << "error: run id must match ^[a-z0-9-]{8,64}$\n";
        return kFailure;
    }
    store.create_run(run_id, config);
    store.save_status(run_id, RunStatus::running);

    RunOptions options;
    options.threads = threads;
    options.run_id = run_id;
    options.on_round = [&](const RoundRecord& round) { store.save_round(run_id, round); };
    RunRecord run;
    try {
        run = run_federation(config, options);
    } catch (const ConfigError& e) {
        store.save_status(run_id, RunStatus::failed, RunFailure{store.count_rounds(run_id) + 1, e.what()});
        print_config_error(e, err);
        return kFailure;
    }
    store.finish_run(run);

    const fs::path run_dir = store.run_dir(run_id);
    if (as_json) {
        json doc = {{"run_id", run_id},
                    {"run_dir", run_dir.string()},
                    {"status", to_string(run.status)},
                    {"completed_rounds", run.rounds.size()},
                    {"final", final_metrics_json(run)},
                    {"victim_class", nullptr},
                    {"victim_f1", nullptr},
                    {"failure", run.failure ? json{{"round", run.failure->round_index}, {"message", run.failure->message}}
                                            : json(nullptr)}};
        if (config.attack && !run.rounds.empty()) {
            doc["victim_class"] = config.attack->victim_class;
            doc["victim_f1"] = run.rounds.back().metrics.per_class_f1.at(config.attack->victim_class);
        }
        out << doc.dump(2) << "\n";
    } else {
        out << "run_id " << run_id << "\n";
        out << "run_dir " << run_dir.string() << "\n";
        out << "status " << to_string(run.status) << " after " << run.rounds.size() << " rounds\n";
        if (!run.rounds.empty()) print_metrics_table(run.rounds.back(), config, out);
        if (config.attack && !run.rounds.empty()) {
            out << "victim class " << config.attack->victim_class << " final f1 "
                << fixed(run.rounds.back().metrics.per_class_f1.at(config.attack->victim_class)) << "\n";
        }
    }
    if (run.status == RunStatus::failed) {
        err << "error: " << (run.failure ? run.failure->message : std::string("run failed")) << "\n";
        return kDiverged;
    }
    return kOk;
}

// Loads a run for analysis; returns nullopt after printing when it must stop.
std::optional<StoredRun> load_for_analysis(const RunStore& store, const std::string& run_id, bool partial,
                                           std::ostream& err, int& code) {
    StoredRun stored = store.load_run(run_id, partial ? LoadMode::tolerant : LoadMode::strict);
    if (stored.run.status != RunStatus::completed && !partial) {
        err << "error: run " << run_id << " is " << to_string(stored.run.status) << " with "
            << stored.run.rounds.size() << " of " << stored.run.config.n_rounds
            << " rounds; pass --partial to analyze the completed prefix\n";
        code = kIncomplete;
        return std::nullopt;
    }
    if (stored.run.rounds.empty()) {
        err << "error: run " << run_id << " has no completed rounds\n";
        code = kIncomplete;
        return std::nullopt;
    }
    return stored;
}

int analyze(const std::string& run_path, bool partial, bool as_json, std::ostream& out, std::ostream& err) {
    const RunLocation loc = locate(run_path);
    RunStore store(loc.root);
    int code = kOk;
    auto stored = load_for_analysis(store, loc.run_id, partial, err, code);
    if (!stored) return code;

    const RunAnalysis analysis = analyze_run(stored->run);
    store.save_signatures(loc.run_id, analysis.signatures);
    store.save_trajectory(loc.run_id, analysis.trajectory);

    std::vector<double> separability;
    for (const auto& s : analysis.signatures)
        if (s.separability) separability.push_back(*s.separability);
    std::optional<double> median;
    if (!separability.empty()) {
        std::sort(separability.begin(), separability.end());
        const std::size_t n = separability.size();
        median = n % 2 ? separability[n / 2] : 0.5 * (separability[n / 2 - 1] + separability[n / 2]);
    }
    const fs::path dir = store.run_dir(loc.run_id);
    if (as_json) {
        out << json{{"run_id", loc.run_id},
                    {"rounds", analysis.signatures.size()},
                    {"trajectory_points", analysis.trajectory.points.size()},
                    {"median_separability", median ? json(*median) : json(nullptr)},
                    {"signatures_path", (dir / "signatures.json").string()},
                    {"trajectory_path", (dir / "trajectory.json").string()}}
                   .dump(2)
            << "\n";
    } else {
        out << "analyzed " << analysis.signatures.size() << " rounds of " << loc.run_id << "\n";
        out << "trajectory points " << analysis.trajectory.points.size() << "\n";
        out << "median separability " << (median ? fixed(*median) : std::string("n/a")) << "\n";
        out << "wrote " << (dir / "signatures.json").string() << "\n";
        out << "wrote " << (dir / "trajectory.json").string() << "\n";
    }
    return kOk;
}

int report(const std::string& run_path, bool partial, bool as_json, const AdvisoryThresholds& thresholds,
           std::ostream& out, std::ostream& err) {
    const RunLocation loc = locate(run_path);
    RunStore store(loc.root);
    int code = kOk;
    auto stored = load_for_analysis(store, loc.run_id, partial, err, code);
    if (!stored) return code;

    std::vector<SignatureRound> signatures;
    if (stored->signatures && stored->signatures->size() == stored->run.rounds.size()) {
        signatures = *stored->signatures;
    } else {
        const ModelDims dims = run_dims(stored->run);
        for (const auto& round : stored->run.rounds) {
            try {
                signatures.push_back(analyze_round(round, dims));
            } catch (const AnalysisError&) {
                // Rounds with fewer than two participants carry no signature.
            }
        }
    }
    const AdvisoryReport advisory = advise(stored->run, signatures, thresholds);
    const json doc = report_to_json(advisory);
    const std::string text = render_text(advisory);
    store.save_advisory(loc.run_id, doc);
    write_file_atomic(store.run_dir(loc.run_id) / "report.txt", text);
    if (as_json)
        out << doc.dump(2) << "\n";
    else
        out << text;
    return kOk;
}

std::atomic<ApiServer*> active_server{nullptr};

extern "C" void on_signal(int) {
    if (auto* server = active_server.load()) server->stop();
}

int serve(const std::string& host, int port, const std::string& store_root, const std::string& web_root,
          std::size_t threads, std::ostream& out, std::ostream& err) {
    ServiceOptions options;
    options.store_root = store_root;
    if (!web_root.empty()) options.static_root = web_root;
    options.threads_per_run = threads;
    ApiServer server(options);
    const int bound = server.bind(host, port);
    if (bound < 0) {
        err << "error: cannot listen on " << host << ":" << port << "\n";
        return kFailure;
    }
    out << "listening on http://" << host << ":" << bound << " (store " << store_root << ")" << std::endl;
    active_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.listen();
    active_server = nullptr;
    return kOk;
}

int scenarios(bool as_json, std::ostream& out) {
    if (as_json) {
        json list = json::array();
        for (const auto& s : scenario_catalog())
            list.push_back({{"name", s.name}, {"description", s.description}, {"config", config_to_json(s.config)}});
        out << list.dump(2) << "\n";
        return kOk;
    }
    std::size_t width = 0;
    for (const auto& s : scenario_catalog()) width = std::max(width, s.name.size());
    for (const auto& s : scenario_catalog()) out << std::left << std::setw(static_cast<int>(width + 2)) << s.name << s.description << "\n";
    return kOk;
}

std::string default_web_root() {
    if (const char* env = std::getenv("FEDSHADOW_WEB_ROOT")) return env;
    return fs::is_directory("web") ? "web" : "";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Federated label-flipping attack simulator and analyzer", "fedshadow"};
    app.require_subcommand(1, 1);

    auto* sim = app.add_subcommand("simulate", "Run a federation and persist it");
    std::optional<std::string> config_path, scenario_name, run_id;
    std::string out_dir = "runs";
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    bool sim_json = false;
    auto* config_opt = sim->add_option("--config", config_path, "Config JSON file (same format as the API body)");
    auto* scenario_opt = sim->add_option("--scenario", scenario_name, "Bundled scenario name");
    config_opt->excludes(scenario_opt);
    sim->add_option("--out", out_dir, "Run store root directory")->capture_default_str();
    sim->add_option("--seed", seed, "Override master_seed");
    sim->add_option("--threads", threads, "Client-training threads (0 = all cores)")->capture_default_str();
    sim->add_option("--run-id", run_id, "Run id to use instead of a fresh one");
    sim->add_flag("--json", sim_json, "Machine-readable output");

    auto* ana = app.add_subcommand("analyze", "Compute signatures and trajectory for a stored run");
    std::string ana_run;
    bool ana_partial = false, ana_json = false;
    ana->add_option("--run", ana_run, "Run directory")->required();
    ana->add_flag("--partial", ana_partial, "Analyze the completed prefix of an unfinished run");
    ana->add_flag("--json", ana_json, "Machine-readable output");

    auto* rep = app.add_subcommand("report", "Write advisory.json and report.txt for a stored run");
    std::string rep_run;
    bool rep_partial = false, rep_json = false;
    AdvisoryThresholds thresholds;
    rep->add_option("--run", rep_run, "Run directory")->required();
    rep->add_flag("--partial", rep_partial, "Report on the completed prefix of an unfinished run");
    rep->add_flag("--json", rep_json, "Print the JSON report instead of text");
    rep->add_option("--f1-drop", thresholds.f1_drop, "F1 drop threshold")->capture_default_str();
    rep->add_option("--signature-fraction", thresholds.signature_fraction, "Share of gated rounds")->capture_default_str();
    rep->add_option("--separability-gate", thresholds.separability_gate, "Split quality gate")->capture_default_str();

    auto* srv = app.add_subcommand("serve", "Start the HTTP API");
    std::string host = "127.0.0.1", store_root = "runs", web_root = default_web_root();
    int port = port_from_env(8080);
    std::size_t srv_threads = 1;
    srv->add_option("--host", host, "Listen address")->capture_default_str();
    srv->add_option("--port", port, "Listen port (env FEDSHADOW_PORT)")->capture_default_str();
    srv->add_option("--store", store_root, "Run store root directory")->capture_default_str();
    srv->add_option("--web", web_root, "Static dashboard directory served at /");
    srv->add_option("--threads", srv_threads, "Client-training threads per run")->capture_default_str();

    auto* cat = app.add_subcommand("scenarios", "List the bundled scenarios");
    bool cat_json = false;
    cat->add_flag("--json", cat_json, "Machine-readable output");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
        if (sim->parsed() && !config_path && !scenario_name) throw CLI::RequiredError("--config or --scenario");
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kFailure;
    }

    try {
        if (sim->parsed())
            return simulate(config_path, scenario_name, out_dir, seed, threads, run_id, sim_json, out, err);
        if (ana->parsed()) return analyze(ana_run, ana_partial, ana_json, out, err);
        if (rep->parsed()) return report(rep_run, rep_partial, rep_json, thresholds, out, err);
        if (srv->parsed()) return serve(host, port, store_root, web_root, srv_threads, out, err);
        if (cat->parsed()) return scenarios(cat_json, out);
    } catch (const ConfigError& e) {
        print_config_error(e, err);
        return kFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}

}  // namespace fedshadow::cli
