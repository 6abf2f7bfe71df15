#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedshadow/advisory.hpp"
#include "schema_validator.hpp"
#include "test_util.hpp"

using namespace fedshadow;
using fedshadow::testing::Gen;
using fedshadow::testing::SchemaSet;
using fedshadow::testing::schema_dir;

namespace {

RedactedRound plain_round(std::size_t index, std::vector<std::size_t> ids, std::vector<double> f1) {
    RedactedRound r;
    r.round_index = index;
    r.participant_ids = std::move(ids);
    r.per_class_f1 = std::move(f1);
    r.accuracy = 0.9;
    return r;
}

EvidenceView flat_view(std::size_t rounds, int classes = 3) {
    EvidenceView v;
    v.n_classes = classes;
    for (std::size_t t = 1; t <= rounds; ++t)
        v.rounds.push_back(plain_round(t, {0, 1, 2, 3, 4}, std::vector<double>(static_cast<std::size_t>(classes), 0.9)));
    return v;
}

// Four benign points near the origin and one far away.
std::vector<Point3> one_outlier(Gen& g, std::size_t outlier) {
    std::vector<Point3> pts;
    for (std::size_t i = 0; i < 5; ++i) {
        Point3 p = g.point(-0.1, 0.1);
        if (i == outlier) p[0] += 10;
        pts.push_back(p);
    }
    return pts;
}

RunRecord synthetic_run(const std::vector<std::vector<double>>& f1_per_round, std::optional<AttackConfig> attack,
                        const std::vector<std::vector<bool>>& flags = {}) {
    RunRecord run;
    run.config.attack = attack;
    run.config.data_spec.blobs.n_classes = static_cast<int>(f1_per_round.front().size());
    run.status = RunStatus::completed;
    for (std::size_t t = 0; t < f1_per_round.size(); ++t) {
        RoundRecord r;
        r.round_index = t + 1;
        r.participant_ids = {0, 1, 2, 3};
        r.malicious_flags = flags.empty() ? std::vector<bool>{false, false, false, false} : flags[t];
        r.metrics.per_class_f1 = f1_per_round[t];
        r.metrics.accuracy = 0.9;
        run.rounds.push_back(r);
    }
    return run;
}

std::vector<std::size_t> ids_of(const std::vector<FlaggedClient>& flags) {
    std::vector<std::size_t> out;
    for (const auto& f : flags) out.push_back(f.client_id);
    return out;
}

}  // namespace

TEST_CASE("no flags below the minimum round count") {
    EvidenceView v = flat_view(4);
    v.rounds[3].per_class_f1[0] = 0.1;
    CHECK(flag_clients(v).empty());
    v = flat_view(5);
    v.rounds[4].per_class_f1[0] = 0.1;
    CHECK(flag_clients(v).size() == 5);
}

TEST_CASE("F1 drop against the trailing median flags that round's participants") {
    EvidenceView v = flat_view(8);
    v.rounds[6].participant_ids = {7, 8, 9, 10, 11};
    v.rounds[6].per_class_f1 = {0.9, 0.7, 0.9};   // class 1 fell by 0.2
    const auto flags = flag_clients(v);
    CHECK(ids_of(flags) == std::vector<std::size_t>{7, 8, 9, 10, 11});
    for (const auto& f : flags) {
        CHECK(f.evidence == std::vector<EvidenceKind>{EvidenceKind::f1_impact});
        CHECK(f.participations == 1);
        CHECK(f.score == 1.0);
    }
    // A drop under the threshold does not fire.
    v = flat_view(8);
    v.rounds[6].per_class_f1 = {0.9, 0.8, 0.9};
    CHECK(flag_clients(v).empty());
}

TEST_CASE("F1 monitoring can be narrowed to chosen classes") {
    EvidenceView v = flat_view(8);
    v.rounds[6].per_class_f1 = {0.9, 0.9, 0.5};
    AdvisoryThresholds t;
    t.monitored_classes = {0, 1};
    CHECK(flag_clients(v, t).empty());
    t.monitored_classes = {2};
    CHECK(flag_clients(v, t).size() == 5);
}

TEST_CASE("cleanly separated minorities are signature outliers") {
    Gen g(1);
    EvidenceView v = flat_view(6);
    for (auto& r : v.rounds) r.points = one_outlier(g, 4);   // client 4 always apart
    const auto flags = flag_clients(v);
    REQUIRE(flags.size() == 1);
    CHECK(flags[0].client_id == 4);
    CHECK(flags[0].evidence == std::vector<EvidenceKind>{EvidenceKind::signature_outlier});
    CHECK(flags[0].score == 1.0);

    // Apart in only 2 of 6 gated rounds: 1/3 < 0.5.
    for (std::size_t t = 2; t < 6; ++t) v.rounds[t].points = one_outlier(g, t % 4);
    CHECK(flag_clients(v).empty());
}

TEST_CASE("rounds below the separability gate give no signature evidence") {
    Gen g(2);
    EvidenceView v = flat_view(6);
    for (auto& r : v.rounds)
        for (int i = 0; i < 5; ++i) r.points.push_back(g.point(-1, 1));
    AdvisoryThresholds t;
    t.separability_gate = 0.99;
    CHECK(flag_clients(v, t).empty());
}

TEST_CASE("update evidence follows the side that pulls victim towards target") {
    Gen g(3);
    EvidenceView v = flat_view(6, 3);
    v.hidden_width = 2;
    v.victim_class = 0;
    v.target_class = 2;
    for (auto& r : v.rounds) {
        // Two clients (0, 1) far from three others; clients 0 and 1 raise class 2
        // and lower class 0, the rest do the opposite.
        r.points.clear();
        r.output_deltas.clear();
        for (std::size_t i = 0; i < 5; ++i) {
            Point3 p = g.point(-0.1, 0.1);
            if (i < 2) p[1] += 5;
            r.points.push_back(p);
            std::vector<double> d(3 * 2 + 3, 0.0);
            const double s = i < 2 ? 1.0 : -0.2;
            d[2 * 2 + 0] = s;          // row 2 weight
            d[3 * 2 + 2] = s;          // row 2 bias
            d[0] = -s;                 // row 0 weight
            r.output_deltas.push_back(d);
        }
    }
    AdvisoryThresholds t;
    const auto flags = flag_clients(v, t);
    REQUIRE(ids_of(flags) == std::vector<std::size_t>{0, 1});
    for (const auto& f : flags) {
        CHECK(std::find(f.evidence.begin(), f.evidence.end(), EvidenceKind::update_impact) != f.evidence.end());
        CHECK(std::find(f.evidence.begin(), f.evidence.end(), EvidenceKind::signature_outlier) != f.evidence.end());
    }
    // Watching the reverse flip points at the majority instead.
    t.suspected_flip = std::pair{2, 0};
    const auto reverse = flag_clients(v, t);
    CHECK(ids_of(reverse) == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("flip_pull sums rows with their biases") {
    // 2 classes, hidden 3: rows [1 2 3], [4 5 6], biases [7, 8].
    const std::vector<double> d{1, 2, 3, 4, 5, 6, 7, 8};
    CHECK(flip_pull(d, 2, 3, 0, 1) == (4 + 5 + 6 + 8) - (1 + 2 + 3 + 7));
    CHECK(flip_pull(d, 2, 3, 1, 0) == -flip_pull(d, 2, 3, 0, 1));
}

TEST_CASE("best bipartition is the exhaustive optimum") {
    Gen g(4);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = g.index(2, 9);
        std::vector<Point3> pts;
        for (std::size_t i = 0; i < n; ++i) pts.push_back(g.point(-2, 2));
        const auto best = best_bipartition(pts);
        double want = -std::numeric_limits<double>::infinity();
        for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
            std::vector<bool> f(n);
            for (std::size_t i = 0; i < n; ++i) f[i] = (mask >> i) & 1U;
            want = std::max(want, *separability_score(pts, f));
        }
        CHECK(best.silhouette == doctest::Approx(want).epsilon(1e-12));
        CHECK(*separability_score(pts, best.in_first) == doctest::Approx(best.silhouette).epsilon(1e-12));
    }
    // Large rounds fall back to 2-means and still split two obvious blobs.
    std::vector<Point3> big;
    for (int i = 0; i < 20; ++i) big.push_back({i < 8 ? 10.0 : 0.0, g.real(-0.1, 0.1), 0.0});
    const auto split = best_bipartition(big);
    for (std::size_t i = 0; i < 20; ++i) CHECK((split.in_first[i] == split.in_first[0]) == (i < 8));
    CHECK(split.silhouette > 0.9);
}

TEST_CASE("looser thresholds only add flags and never lower scores") {
    Gen g(5);
    for (int trial = 0; trial < 30; ++trial) {
        EvidenceView v;
        v.n_classes = 3;
        v.hidden_width = 1;
        v.victim_class = 0;
        v.target_class = 1;
        for (std::size_t t = 1; t <= 8; ++t) {
            auto r = plain_round(t, {}, {g.real(0.3, 1), g.real(0.3, 1), g.real(0.3, 1)});
            std::vector<std::size_t> ids(12);
            std::iota(ids.begin(), ids.end(), std::size_t{0});
            std::shuffle(ids.begin(), ids.end(), g.engine());
            ids.resize(5);
            std::sort(ids.begin(), ids.end());
            r.participant_ids = ids;
            for (int i = 0; i < 5; ++i) {
                r.points.push_back(g.point(-1, 1));
                r.output_deltas.push_back(g.vec(3 * 2));
            }
            v.rounds.push_back(r);
        }
        AdvisoryThresholds strict;
        strict.f1_drop = g.real(0.1, 0.5);
        strict.signature_fraction = g.real(0.3, 1);
        strict.separability_gate = g.real(0.2, 0.8);
        AdvisoryThresholds loose = strict;
        loose.f1_drop *= g.real(0.2, 1);
        loose.signature_fraction *= g.real(0.2, 1);
        loose.separability_gate *= g.real(0.2, 1);
        // A lower gate admits more rounds, which can shift a fraction either way;
        // monotonicity is claimed only for f1_drop and signature_fraction.
        loose.separability_gate = strict.separability_gate;
        const auto a = flag_clients(v, strict);
        const auto b = flag_clients(v, loose);
        for (const auto& f : a) {
            const auto it = std::find_if(b.begin(), b.end(), [&](const FlaggedClient& x) { return x.client_id == f.client_id; });
            REQUIRE(it != b.end());
            CHECK(it->score >= f.score);
            for (auto e : f.evidence) CHECK(std::find(it->evidence.begin(), it->evidence.end(), e) != it->evidence.end());
        }
        for (const auto& f : b) {
            CHECK(f.score >= 0.0);
            CHECK(f.score <= 1.0);
        }
        CHECK(std::is_sorted(b.begin(), b.end(), [](const auto& x, const auto& y) { return x.client_id < y.client_id; }));
    }
}

TEST_CASE("the detector never sees ground truth") {
    RunRecord run = run_federation(fedshadow::testing::small_attack_config(2, 8));
    const auto analysis = analyze_run(run);
    const auto before = advise(run, analysis.signatures);
    RunRecord scrambled = run;
    auto sigs = analysis.signatures;
    for (auto& r : scrambled.rounds) r.malicious_flags.flip();
    for (auto& s : sigs) s.malicious_flags.flip();
    CHECK(flag_clients(redact(scrambled, sigs)) == before.flagged_clients);
    const EvidenceView view = redact(run, analysis.signatures);
    CHECK(view.rounds.size() == 8);
    CHECK(view.hidden_width == run.final_params->dims.hidden_width);
    CHECK(view.rounds[0].output_deltas.size() == run.rounds[0].participant_ids.size());
}

TEST_CASE("report JSON is deterministic and schema-valid") {
    const SchemaSet schemas(schema_dir());
    RunRecord run = run_federation(fedshadow::testing::small_attack_config(3, 8));
    const auto analysis = analyze_run(run);
    const std::string a = report_to_json(advise(run, analysis.signatures)).dump();
    const std::string b = report_to_json(advise(run, analysis.signatures)).dump();
    CHECK(a == b);
    const auto errors = schemas.validate("advisory.schema.json", json::parse(a));
    CHECK_MESSAGE(errors.empty(), (errors.empty() ? "" : errors.front()));
}

TEST_CASE("victim F1 drop compares against the other classes") {
    AttackConfig attack;
    attack.victim_class = 0;
    attack.target_class = 1;
    std::vector<std::vector<double>> f1(10, {0.9, 0.9, 0.9, 0.9});
    for (std::size_t t = 5; t < 10; ++t) f1[t] = {0.4, 0.2, 0.9, 0.8};   // others (2, 3) mean 0.85
    const auto report = generate_report(synthetic_run(f1, attack), {}, {});
    CHECK(report.summary.victim_class == 0);
    CHECK(report.summary.victim_f1_drop == doctest::Approx(0.45));
    CHECK(report.summary.rounds == 10);

    // Without an attack the worst class is reported.
    const auto clean = generate_report(synthetic_run(f1, std::nullopt), {}, {});
    CHECK(clean.summary.victim_class == 1);
    CHECK(clean.summary.victim_f1_drop == doctest::Approx((0.4 + 0.9 + 0.8) / 3 - 0.2));
}

TEST_CASE("recommendation triggers") {
    AttackConfig attack;
    attack.victim_class = 0;
    attack.target_class = 1;
    attack.n_malicious = 2;
    const auto categories = [](const AdvisoryReport& r) {
        std::vector<std::string> out;
        for (const auto& rec : r.recommendations) out.push_back(to_string(rec.category));
        return out;
    };

    // Healthy run: nothing.
    const std::vector<std::vector<double>> healthy(10, {0.9, 0.9, 0.9});
    const auto quiet = generate_report(synthetic_run(healthy, attack), {}, {});
    CHECK(quiet.recommendations.empty());
    CHECK(render_text(quiet).find("no clients flagged") != std::string::npos);

    // Flags alone ask for client verification.
    FlaggedClient f;
    f.client_id = 3;
    f.evidence = {EvidenceKind::f1_impact};
    f.score = 0.5;
    f.participations = 2;
    const auto flagged = generate_report(synthetic_run(healthy, attack), {}, {f});
    CHECK(categories(flagged) == std::vector<std::string>{"client_verification"});
    CHECK(flagged.recommendations[0].trigger.name == "flagged_clients");
    CHECK(render_text(flagged).find("client 3") != std::string::npos);

    // Victim damage at high accuracy: verification and co-design.
    std::vector<std::vector<double>> damaged(10, {0.3, 0.9, 0.9});
    const auto hurt = generate_report(synthetic_run(damaged, attack), {}, {});
    CHECK(categories(hurt) == std::vector<std::string>{"client_verification", "robustness_codesign"});

    // Separable signatures suggest anomaly detection.
    SignatureRound s;
    s.round_index = 4;
    s.malicious_flags = {true, false, false};
    s.separability = 0.8;
    const std::vector<SignatureRound> sigs{s};
    const auto sep = generate_report(synthetic_run(healthy, attack), sigs, {});
    CHECK(categories(sep) == std::vector<std::string>{"anomaly_detection"});
    CHECK(sep.summary.peak_separability_round == 4);

    // Malicious majorities with merged clusters suggest robust models.
    std::vector<std::vector<bool>> majority(10, {true, true, true, false});
    s.malicious_flags = {true, true, false};
    s.separability = 0.1;
    const std::vector<SignatureRound> merged{s};
    const auto robust = generate_report(synthetic_run(healthy, attack, majority), merged, {});
    CHECK(categories(robust) == std::vector<std::string>{"robust_model"});
    CHECK(robust.summary.malicious_fraction == doctest::Approx(0.75));

    // Without signatures the fallback uses the malicious share and the drop.
    const auto fallback = generate_report(synthetic_run(damaged, attack, majority), {}, {});
    CHECK(categories(fallback) ==
          std::vector<std::string>{"client_verification", "robust_model", "robustness_codesign"});
    CHECK(fallback.recommendations[1].trigger.name == "malicious_fraction");
}
