#include "fedshadow/advisory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

namespace fedshadow {

namespace {

double distance(const Point3& a, const Point3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Two-means from the farthest pair, for rounds too large to enumerate.
std::vector<bool> two_means(std::span<const Point3> points) {
    const std::size_t n = points.size();
    std::size_t a = 0, b = 1;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (const double d = distance(points[i], points[j]); d > best) best = d, a = i, b = j;
    Point3 ca = points[a], cb = points[b];
    std::vector<bool> in_first(n, false);
    for (int iter = 0; iter < 100; ++iter) {
        std::vector<bool> next(n);
        for (std::size_t i = 0; i < n; ++i) next[i] = distance(points[i], ca) <= distance(points[i], cb);
        if (iter > 0 && next == in_first) break;
        in_first = std::move(next);
        Point3 sa{}, sb{};
        std::size_t na = 0, nb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            auto& s = in_first[i] ? sa : sb;
            for (int k = 0; k < 3; ++k) s[k] += points[i][k];
            ++(in_first[i] ? na : nb);
        }
        if (na == 0 || nb == 0) break;
        for (int k = 0; k < 3; ++k) ca[k] = sa[k] / na, cb[k] = sb[k] / nb;
    }
    return in_first;
}

std::string fixed3(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.3f", value);
    return buffer;
}

std::vector<int> monitored_classes(const EvidenceView& view, const AdvisoryThresholds& thresholds) {
    if (!thresholds.monitored_classes.empty()) return thresholds.monitored_classes;
    if (view.victim_class && view.target_class) return {*view.victim_class, *view.target_class};
    std::vector<int> all(static_cast<std::size_t>(std::max(view.n_classes, 0)));
    std::iota(all.begin(), all.end(), 0);
    return all;
}

struct ClientTally {
    std::size_t participations = 0;
    std::size_t drop_rounds = 0;
    std::size_t gated = 0;
    std::size_t minority_hits = 0;
    std::size_t impact_hits = 0;
};

}  // namespace

EvidenceView redact(const RunRecord& run, std::span<const SignatureRound> signatures) {
    EvidenceView view;
    std::optional<ModelDims> dims;
    if (run.final_params) {
        dims = run.final_params->dims;
    } else if (!run.rounds.empty()) {
        try {
            dims = run_dims(run);
        } catch (const Error&) {
            // Without dims the update evidence is simply unavailable.
        }
    }
    if (dims) view.hidden_width = dims->hidden_width;
    if (const auto& attack = run.config.attack) {
        view.victim_class = attack->victim_class;
        view.target_class = attack->target_class;
    }
    std::map<std::size_t, const SignatureRound*> by_round;
    for (const auto& s : signatures) by_round[s.round_index] = &s;
    for (const auto& round : run.rounds) {
        RedactedRound r;
        r.round_index = round.round_index;
        r.participant_ids = round.participant_ids;
        r.per_class_f1 = round.metrics.per_class_f1;
        r.accuracy = round.metrics.accuracy;
        view.n_classes = std::max(view.n_classes, static_cast<int>(r.per_class_f1.size()));
        if (auto it = by_round.find(round.round_index); it != by_round.end() && it->second->client_ids == r.participant_ids)
            r.points = it->second->points;
        if (dims)
            for (const auto& delta : round.update_deltas) r.output_deltas.push_back(output_layer_feature(delta, *dims));
        view.rounds.push_back(std::move(r));
    }
    return view;
}

std::string to_string(EvidenceKind kind) {
    switch (kind) {
        case EvidenceKind::f1_impact: return "f1_impact";
        case EvidenceKind::signature_outlier: return "signature_outlier";
        case EvidenceKind::update_impact: return "update_impact";
    }
    return "unknown";
}

double flip_pull(std::span<const double> output_delta, std::size_t n_classes, std::size_t hidden_width, int from,
                 int to) {
    const auto row = [&](int c) {
        const auto ci = static_cast<std::size_t>(c);
        double total = output_delta[n_classes * hidden_width + ci];
        for (std::size_t h = 0; h < hidden_width; ++h) total += output_delta[ci * hidden_width + h];
        return total;
    };
    return row(to) - row(from);
}

Bipartition best_bipartition(std::span<const Point3> points) {
    const std::size_t n = points.size();
    Bipartition best;
    best.silhouette = -std::numeric_limits<double>::infinity();
    if (n < 2) {
        best.in_first.assign(n, true);
        best.silhouette = 0.0;
        return best;
    }
    if (n > 12) {
        best.in_first = two_means(points);
        best.silhouette = separability_score(points, best.in_first).value_or(0.0);
        return best;
    }
    // Point 0 always sits in the first group, so each split is visited once.
    const std::size_t masks = std::size_t{1} << (n - 1);
    std::vector<bool> in_first(n);
    for (std::size_t mask = 0; mask + 1 < masks; ++mask) {
        in_first[0] = true;
        for (std::size_t i = 1; i < n; ++i) in_first[i] = ((mask >> (i - 1)) & 1U) != 0;
        const auto s = separability_score(points, in_first);
        if (s && *s > best.silhouette) {
            best.silhouette = *s;
            best.in_first = in_first;
        }
    }
    return best;
}

std::vector<FlaggedClient> flag_clients(const EvidenceView& view, const AdvisoryThresholds& thresholds) {
    if (view.rounds.size() < thresholds.min_rounds) return {};
    const auto classes = monitored_classes(view, thresholds);
    int from = -1, to = -1;
    if (thresholds.suspected_flip) {
        std::tie(from, to) = *thresholds.suspected_flip;
    } else if (view.victim_class && view.target_class) {
        from = *view.victim_class;
        to = *view.target_class;
    }
    const bool watch_flip = from >= 0 && to >= 0 && from < view.n_classes && to < view.n_classes && from != to;

    std::map<std::size_t, ClientTally> tally;
    for (std::size_t t = 0; t < view.rounds.size(); ++t) {
        const auto& round = view.rounds[t];
        for (auto id : round.participant_ids) ++tally[id].participations;

        // Utility evidence: a monitored class fell below its recent median.
        bool dropped = false;
        if (t > 0) {
            const std::size_t from = t > thresholds.trailing_rounds ? t - thresholds.trailing_rounds : 0;
            for (int c : classes) {
                const auto ci = static_cast<std::size_t>(c);
                if (ci >= round.per_class_f1.size()) continue;
                std::vector<double> history;
                for (std::size_t s = from; s < t; ++s)
                    if (ci < view.rounds[s].per_class_f1.size()) history.push_back(view.rounds[s].per_class_f1[ci]);
                if (!history.empty() && median(history) - round.per_class_f1[ci] > thresholds.f1_drop) dropped = true;
            }
        }
        if (dropped)
            for (auto id : round.participant_ids) ++tally[id].drop_rounds;

        // Signature evidence, only in rounds that split cleanly in two.
        if (round.points.size() != round.participant_ids.size() || round.points.size() < 3) continue;
        const auto split = best_bipartition(round.points);
        if (!(split.silhouette > thresholds.separability_gate)) continue;
        const std::size_t n = round.points.size();
        const auto first_size = static_cast<std::size_t>(std::count(split.in_first.begin(), split.in_first.end(), true));
        const std::size_t second_size = n - first_size;
        std::optional<bool> minority;
        if (first_size != second_size) minority = first_size < second_size;
        // The half whose updates push the suspected source class towards
        // the suspected destination is the one doing the flipping.
        std::optional<bool> pulling;
        const auto n_out = static_cast<std::size_t>(view.n_classes);
        if (watch_flip && round.output_deltas.size() == n && view.hidden_width > 0) {
            double p_first = 0.0, p_second = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (round.output_deltas[i].size() != n_out * (view.hidden_width + 1)) continue;
                const double p = flip_pull(round.output_deltas[i], n_out, view.hidden_width, from, to);
                (split.in_first[i] ? p_first : p_second) += p;
            }
            p_first /= static_cast<double>(first_size);
            p_second /= static_cast<double>(second_size);
            if (p_first != p_second) pulling = p_first > p_second;
        }
        for (std::size_t i = 0; i < n; ++i) {
            auto& c = tally[round.participant_ids[i]];
            ++c.gated;
            if (minority && split.in_first[i] == *minority) ++c.minority_hits;
            if (pulling && split.in_first[i] == *pulling) ++c.impact_hits;
        }
    }

    std::vector<FlaggedClient> flagged;
    for (const auto& [id, c] : tally) {
        FlaggedClient f;
        f.client_id = id;
        f.participations = c.participations;
        const auto consider = [&](EvidenceKind kind, std::size_t hits, std::size_t base, bool fires) {
            if (!fires) return;
            f.evidence.push_back(kind);
            f.score = std::max(f.score, static_cast<double>(hits) / static_cast<double>(base));
        };
        consider(EvidenceKind::f1_impact, c.drop_rounds, c.participations, c.drop_rounds > 0);
        if (c.gated > 0) {
            const double g = static_cast<double>(c.gated);
            consider(EvidenceKind::signature_outlier, c.minority_hits, c.gated,
                     c.minority_hits > 0 && c.minority_hits / g >= thresholds.signature_fraction);
            consider(EvidenceKind::update_impact, c.impact_hits, c.gated,
                     c.impact_hits > 0 && c.impact_hits / g >= thresholds.signature_fraction);
        }
        if (!f.evidence.empty()) flagged.push_back(std::move(f));
    }
    return flagged;
}

std::string to_string(RecommendationCategory category) {
    switch (category) {
        case RecommendationCategory::client_verification: return "client_verification";
        case RecommendationCategory::anomaly_detection: return "anomaly_detection";
        case RecommendationCategory::robust_model: return "robust_model";
        case RecommendationCategory::robustness_codesign: return "robustness_codesign";
    }
    return "unknown";
}

namespace {

// Gap between the other classes' mean F1 and class c's F1, averaged over the
// trailing rounds. The target class is left out of the comparison group since
// it is damaged by the same attack.
double class_gap(const RunRecord& run, int c, std::optional<int> target, std::size_t trailing) {
    const std::size_t n = run.rounds.size();
    const std::size_t from = n > trailing ? n - trailing : 0;
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t t = from; t < n; ++t) {
        const auto& f1 = run.rounds[t].metrics.per_class_f1;
        if (static_cast<std::size_t>(c) >= f1.size()) continue;
        double others = 0.0;
        std::size_t count = 0;
        for (std::size_t k = 0; k < f1.size(); ++k) {
            if (static_cast<int>(k) == c || (target && static_cast<int>(k) == *target)) continue;
            others += f1[k];
            ++count;
        }
        if (count == 0) continue;
        total += others / static_cast<double>(count) - f1[static_cast<std::size_t>(c)];
        ++used;
    }
    return used == 0 ? 0.0 : std::max(0.0, total / static_cast<double>(used));
}

}  // namespace

AdvisoryReport generate_report(const RunRecord& run, std::span<const SignatureRound> signatures,
                               const std::vector<FlaggedClient>& flags, const AdvisoryThresholds& thresholds) {
    AdvisoryReport report;
    report.flagged_clients = flags;
    SummaryStats& s = report.summary;
    s.rounds = run.rounds.size();
    if (!run.rounds.empty()) s.final_accuracy = run.rounds.back().metrics.accuracy;

    const auto& attack = run.config.attack;
    if (attack) {
        s.victim_class = attack->victim_class;
        s.victim_f1_drop = class_gap(run, attack->victim_class, attack->target_class, thresholds.trailing_rounds);
    } else if (!run.rounds.empty()) {
        const auto n_classes = static_cast<int>(run.rounds.back().metrics.per_class_f1.size());
        for (int c = 0; c < n_classes; ++c) {
            const double gap = class_gap(run, c, std::nullopt, thresholds.trailing_rounds);
            if (!s.victim_class || gap > s.victim_f1_drop) s.victim_class = c, s.victim_f1_drop = gap;
        }
    }

    double density_total = 0.0;
    std::size_t density_count = 0;
    std::vector<double> merged;
    for (const auto& sig : signatures) {
        if (sig.separability && (!s.peak_separability || *sig.separability > *s.peak_separability)) {
            s.peak_separability = sig.separability;
            s.peak_separability_round = sig.round_index;
        }
        if (sig.density_ratio) density_total += *sig.density_ratio, ++density_count;
        if (sig.separability && !sig.malicious_flags.empty()) {
            const auto bad = std::count(sig.malicious_flags.begin(), sig.malicious_flags.end(), true);
            if (static_cast<double>(bad) / sig.malicious_flags.size() >= thresholds.majority_fraction)
                merged.push_back(*sig.separability);
        }
    }
    if (density_count > 0) s.mean_density_ratio = density_total / static_cast<double>(density_count);

    double fraction_total = 0.0;
    std::size_t active = 0;
    for (const auto& round : run.rounds) {
        if (!is_attack_active(round.round_index, attack) || round.malicious_flags.empty()) continue;
        const auto bad = std::count(round.malicious_flags.begin(), round.malicious_flags.end(), true);
        fraction_total += static_cast<double>(bad) / round.malicious_flags.size();
        ++active;
    }
    if (active > 0) s.malicious_fraction = fraction_total / static_cast<double>(active);

    const std::string victim = s.victim_class ? std::to_string(*s.victim_class) : "n/a";
    auto& recs = report.recommendations;

    if (!flags.empty()) {
        recs.push_back({RecommendationCategory::client_verification,
                        std::to_string(flags.size()) +
                            " client(s) were flagged by utility or signature evidence. Verify their data "
                            "provenance and labeling before admitting further updates from them.",
                        {"flagged_clients", static_cast<double>(flags.size())}});
    } else if (s.victim_f1_drop > thresholds.f1_drop) {
        recs.push_back({RecommendationCategory::client_verification,
                        "Class " + victim + " trails the other classes by " + fixed3(s.victim_f1_drop) +
                            " F1 although no single client was flagged. Audit client label quality.",
                        {"victim_f1_drop", s.victim_f1_drop}});
    }

    if (s.peak_separability && *s.peak_separability > thresholds.separability_gate) {
        recs.push_back({RecommendationCategory::anomaly_detection,
                        "Malicious and benign updates separated with silhouette " + fixed3(*s.peak_separability) +
                            " in round " + std::to_string(*s.peak_separability_round) +
                            ". Monitor per-round update geometry over time to catch poisoned contributions.",
                        {"peak_separability", *s.peak_separability}});
    }

    if (!merged.empty() && median(merged) < thresholds.merge_separability) {
        const double m = median(merged);
        recs.push_back({RecommendationCategory::robust_model,
                        "In rounds dominated by malicious clients the update clusters merge (median silhouette " +
                            fixed3(m) + "). Prefer robust aggregation and continual data sanitization.",
                        {"merged_round_separability", m}});
    } else if (s.malicious_fraction >= thresholds.majority_fraction && s.victim_f1_drop > thresholds.f1_drop) {
        recs.push_back({RecommendationCategory::robust_model,
                        "Malicious clients made up " + fixed3(s.malicious_fraction) +
                            " of attacked rounds and the model absorbed their bias (class " + victim + " F1 gap " +
                            fixed3(s.victim_f1_drop) +
                            "). Prefer robust aggregation and continual data sanitization.",
                        {"malicious_fraction", s.malicious_fraction}});
    }

    if (s.victim_f1_drop > thresholds.f1_drop && s.final_accuracy >= thresholds.healthy_accuracy) {
        recs.push_back({RecommendationCategory::robustness_codesign,
                        "Overall accuracy stayed at " + fixed3(s.final_accuracy) + " while class " + victim +
                            " lost " + fixed3(s.victim_f1_drop) +
                            " F1. Track per-class robustness alongside aggregate performance.",
                        {"victim_f1_drop", s.victim_f1_drop}});
    }
    return report;
}

AdvisoryReport advise(const RunRecord& run, std::span<const SignatureRound> signatures,
                      const AdvisoryThresholds& thresholds) {
    const auto flags = flag_clients(redact(run, signatures), thresholds);
    return generate_report(run, signatures, flags, thresholds);
}

json report_to_json(const AdvisoryReport& report) {
    json flagged = json::array();
    for (const auto& f : report.flagged_clients) {
        json evidence = json::array();
        for (auto e : f.evidence) evidence.push_back(to_string(e));
        flagged.push_back({{"client_id", f.client_id},
                           {"evidence", evidence},
                           {"score", f.score},
                           {"participations", f.participations}});
    }
    json recs = json::array();
    for (const auto& r : report.recommendations) {
        recs.push_back({{"category", to_string(r.category)},
                        {"text", r.text},
                        {"triggering_metric", {{"name", r.trigger.name}, {"value", r.trigger.value}}}});
    }
    const auto& s = report.summary;
    const auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
    json summary = {{"victim_class", opt(s.victim_class)},
                    {"victim_f1_drop", s.victim_f1_drop},
                    {"peak_separability_round", opt(s.peak_separability_round)},
                    {"peak_separability", opt(s.peak_separability)},
                    {"mean_density_ratio", opt(s.mean_density_ratio)},
                    {"malicious_fraction", s.malicious_fraction},
                    {"final_accuracy", s.final_accuracy},
                    {"rounds", s.rounds}};
    return {{"flagged_clients", flagged}, {"recommendations", recs}, {"summary_stats", summary}};
}

std::string render_text(const AdvisoryReport& report) {
    std::ostringstream out;
    const auto& s = report.summary;
    out << "Advisory report (" << s.rounds << " rounds)\n\n";
    out << "Summary\n";
    out << "  victim class:          " << (s.victim_class ? std::to_string(*s.victim_class) : "n/a") << "\n";
    out << "  victim F1 drop:        " << fixed3(s.victim_f1_drop) << "\n";
    out << "  final accuracy:        " << fixed3(s.final_accuracy) << "\n";
    out << "  peak separability:     "
        << (s.peak_separability
                ? fixed3(*s.peak_separability) + " (round " + std::to_string(*s.peak_separability_round) + ")"
                : std::string("n/a"))
        << "\n";
    out << "  mean density ratio:    " << (s.mean_density_ratio ? fixed3(*s.mean_density_ratio) : "n/a") << "\n";
    out << "  malicious fraction:    " << fixed3(s.malicious_fraction) << "\n\n";

    out << "Flagged clients\n";
    if (report.flagged_clients.empty()) out << "  no clients flagged\n";
    for (const auto& f : report.flagged_clients) {
        out << "  client " << f.client_id << "  score " << fixed3(f.score) << "  participations " << f.participations
            << "  evidence:";
        for (auto e : f.evidence) out << " " << to_string(e);
        out << "\n";
    }
    out << "\nRecommendations\n";
    if (report.recommendations.empty()) out << "  none\n";
    for (const auto& r : report.recommendations) {
        out << "  [" << to_string(r.category) << "] " << r.text << "\n";
        out << "    trigger: " << r.trigger.name << " = " << fixed3(r.trigger.value) << "\n";
    }
    return out.str();
}

}  // namespace fedshadow
