#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "fedshadow/serialization.hpp"
#include "fedshadow/store.hpp"
#include "schema_validator.hpp"
#include "test_util.hpp"

using namespace fedshadow;
using fedshadow::testing::SchemaSet;
using fedshadow::testing::schema_dir;
using fedshadow::testing::slurp;
using fedshadow::testing::small_attack_config;
using fedshadow::testing::small_config;
using fedshadow::testing::TempDir;

namespace {

const SchemaSet& schemas() {
    static const SchemaSet set(schema_dir());
    return set;
}

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome invoke(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = fedshadow::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string write_config(const TempDir& dir, const FederationConfig& config, const std::string& name = "config.json") {
    const auto path = dir / name;
    std::ofstream(path) << config_to_json(config).dump(2);
    return path.string();
}

void check_schema(const std::string& schema, const json& doc) {
    const auto errors = schemas().validate(schema, doc);
    CHECK_MESSAGE(errors.empty(), schema << ": " << (errors.empty() ? "" : errors.front()));
}

// Runs simulate --json and returns the parsed summary.
json simulate(const TempDir& dir, const FederationConfig& config, const std::string& run_id,
              const std::vector<std::string>& extra = {}) {
    std::vector<std::string> args = {"simulate", "--config", write_config(dir, config), "--out",
                                     (dir / "runs").string(), "--run-id", run_id, "--json"};
    args.insert(args.end(), extra.begin(), extra.end());
    const Outcome o = invoke(args);
    REQUIRE_MESSAGE(o.code == 0, o.err);
    return json::parse(o.out);
}

}  // namespace

TEST_CASE("simulate from a config file") {
    TempDir dir;
    const auto config = small_attack_config(3, 6);
    const json summary = simulate(dir, config, "run-cli-0001");
    check_schema("cli-simulate.schema.json", summary);
    CHECK(summary["status"] == "completed");
    CHECK(summary["completed_rounds"] == 6);
    CHECK(summary["victim_class"] == 1);

    const RunRecord reference = run_federation(config);
    CHECK(summary["victim_f1"].get<double>() == reference.rounds.back().metrics.per_class_f1[1]);
    std::string expected;
    for (const auto& r : reference.rounds) expected += round_to_json(r).dump() + "\n";
    CHECK(slurp(dir / "runs" / "run-cli-0001" / "rounds.jsonl") == expected);

    const Outcome text = invoke({"simulate", "--config", write_config(dir, config), "--out", (dir / "runs").string()});
    CHECK(text.code == 0);
    CHECK(text.out.find("status completed after 6 rounds") != std::string::npos);
    CHECK(text.out.find("victim class 1 final f1") != std::string::npos);
}

TEST_CASE("--seed overrides the config seed and runs are reproducible") {
    TempDir dir;
    auto config = small_config(99, 5);
    simulate(dir, config, "run-seed-aaaa", {"--seed", "7"});
    simulate(dir, config, "run-seed-bbbb", {"--seed", "7", "--threads", "3"});
    config.master_seed = 7;
    simulate(dir, config, "run-seed-cccc");
    const auto a = slurp(dir / "runs" / "run-seed-aaaa" / "rounds.jsonl");
    CHECK(!a.empty());
    CHECK(a == slurp(dir / "runs" / "run-seed-bbbb" / "rounds.jsonl"));
    CHECK(a == slurp(dir / "runs" / "run-seed-cccc" / "rounds.jsonl"));
    simulate(dir, config, "run-seed-dddd", {"--seed", "8"});
    CHECK(a != slurp(dir / "runs" / "run-seed-dddd" / "rounds.jsonl"));
}

TEST_CASE("simulate argument and config errors exit 1") {
    TempDir dir;
    const std::string out = (dir / "runs").string();
    Outcome o = invoke({"simulate", "--config", (dir / "missing.json").string(), "--out", out});
    CHECK(o.code == 1);
    CHECK(o.err.find("error") != std::string::npos);

    o = invoke({"simulate", "--scenario", "no-such-scenario", "--out", out});
    CHECK(o.code == 1);
    CHECK(o.err.find("unknown scenario") != std::string::npos);

    o = invoke({"simulate", "--out", out});
    CHECK(o.code == 1);

    auto bad = small_config();
    bad.participants_per_round = 80;
    o = invoke({"simulate", "--config", write_config(dir, bad), "--out", out});
    CHECK(o.code == 1);
    CHECK(o.err.find("participants_per_round") != std::string::npos);

    std::ofstream(dir / "garbage.json") << "{\"n_clients\": ";
    o = invoke({"simulate", "--config", (dir / "garbage.json").string(), "--out", out});
    CHECK(o.code == 1);

    o = invoke({"simulate", "--config", write_config(dir, small_config()), "--out", out, "--run-id", "BAD ID"});
    CHECK(o.code == 1);

    CHECK(invoke({"bogus"}).code == 1);
    CHECK(invoke({}).code == 1);
}

TEST_CASE("divergence exits 2 and records the failure") {
    TempDir dir;
    auto config = small_config(1, 4);
    config.train_spec.learning_rate = 1e300;
    const Outcome o = invoke({"simulate", "--config", write_config(dir, config), "--out", (dir / "runs").string(),
                           "--run-id", "run-diverged", "--json"});
    CHECK(o.code == 2);
    const json summary = json::parse(o.out);
    check_schema("cli-simulate.schema.json", summary);
    CHECK(summary["status"] == "failed");
    CHECK(summary["failure"]["round"] == 1);
    const auto desc = RunStore(dir / "runs").describe("run-diverged");
    CHECK(desc.status == RunStatus::failed);
}

TEST_CASE("analyze and report a completed run") {
    TempDir dir;
    simulate(dir, small_attack_config(2, 8), "run-analysis");
    const std::string run = (dir / "runs" / "run-analysis").string();

    Outcome o = invoke({"analyze", "--run", run, "--json"});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const json summary = json::parse(o.out);
    check_schema("cli-analyze.schema.json", summary);
    CHECK(summary["rounds"] == 8);
    const std::string first = slurp(dir / "runs" / "run-analysis" / "signatures.json");
    const std::string first_traj = slurp(dir / "runs" / "run-analysis" / "trajectory.json");
    CHECK(invoke({"analyze", "--run", run + "/"}).code == 0);
    CHECK(slurp(dir / "runs" / "run-analysis" / "signatures.json") == first);
    CHECK(slurp(dir / "runs" / "run-analysis" / "trajectory.json") == first_traj);
    for (const auto& s : json::parse(first)) check_schema("signature.schema.json", s);
    check_schema("trajectory.schema.json", json::parse(first_traj));

    o = invoke({"report", "--run", run, "--json"});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const json report = json::parse(o.out);
    check_schema("advisory.schema.json", report);
    CHECK(report == json::parse(slurp(dir / "runs" / "run-analysis" / "advisory.json")));
    o = invoke({"report", "--run", run});
    CHECK(o.code == 0);
    CHECK(o.out == slurp(dir / "runs" / "run-analysis" / "report.txt"));
}

TEST_CASE("a clean run reports no flagged clients") {
    TempDir dir;
    simulate(dir, small_config(1, 8), "run-clean-01");
    const Outcome o = invoke({"report", "--run", (dir / "runs" / "run-clean-01").string()});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    CHECK(o.out.find("no clients flagged") != std::string::npos);
}

TEST_CASE("incomplete runs exit 3 unless --partial") {
    TempDir dir;
    const auto config = small_attack_config(5, 10);
    RunStore store(dir / "runs");
    store.create_run("run-partial", config);
    store.save_status("run-partial", RunStatus::running);
    const RunRecord full = run_federation(config);
    for (std::size_t r = 0; r < 4; ++r) store.save_round("run-partial", full.rounds[r]);
    const std::string run = (dir / "runs" / "run-partial").string();

    Outcome o = invoke({"analyze", "--run", run});
    CHECK(o.code == 3);
    CHECK(o.err.find("--partial") != std::string::npos);
    CHECK(invoke({"report", "--run", run}).code == 3);

    o = invoke({"analyze", "--run", run, "--partial", "--json"});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    CHECK(json::parse(o.out)["rounds"] == 4);
    o = invoke({"report", "--run", run, "--partial", "--json"});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    check_schema("advisory.schema.json", json::parse(o.out));

    store.create_run("run-empty-1", config);
    CHECK(invoke({"analyze", "--run", (dir / "runs" / "run-empty-1").string(), "--partial"}).code == 3);
    CHECK(invoke({"analyze", "--run", (dir / "runs" / "run-nothere").string()}).code == 1);
}

TEST_CASE("scenarios listing") {
    Outcome o = invoke({"scenarios", "--json"});
    REQUIRE(o.code == 0);
    check_schema("scenarios.schema.json", json::parse(o.out));
    o = invoke({"scenarios"});
    CHECK(o.code == 0);
    CHECK(o.out.find("label-auto-truck") != std::string::npos);
}
