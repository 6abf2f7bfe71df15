#pragma once

// Rule-based advisory: flags suspicious clients from utility and signature
// evidence, then maps the analytics to recommendation categories.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedshadow/federation.hpp"
#include "fedshadow/serialization.hpp"
#include "fedshadow/signature.hpp"

namespace fedshadow {

struct AdvisoryThresholds {
    double f1_drop = 0.15;               // absolute drop vs trailing median
    double signature_fraction = 0.5;     // share of gated participations
    double separability_gate = 0.5;      // unsupervised split quality
    std::size_t trailing_rounds = 5;
    std::size_t min_rounds = 5;          // fewer rounds: no flags at all
    double merge_separability = 0.2;
    double majority_fraction = 0.5;
    double healthy_accuracy = 0.8;
    /// Classes whose F1 is watched. Empty: the configured victim and target
    /// classes when an attack is configured, every class otherwise.
    std::vector<int> monitored_classes;
    /// (from, to) class pair watched for flipping. Empty: the configured
    /// attack's victim and target; without either, no update evidence.
    std::optional<std::pair<int, int>> suspected_flip;
};

/// One round as the detector sees it: no ground-truth malicious flags.
struct RedactedRound {
    std::size_t round_index = 0;
    std::vector<std::size_t> participant_ids;
    std::vector<double> per_class_f1;
    double accuracy = 0.0;
    std::vector<Point3> points;   // aligned with participant_ids; may be empty
    /// Output-layer update per participant (weights row-major, then bias).
    std::vector<std::vector<double>> output_deltas;
};

struct EvidenceView {
    int n_classes = 0;
    std::size_t hidden_width = 0;
    std::optional<int> victim_class;
    std::optional<int> target_class;
    std::vector<RedactedRound> rounds;
};

/// The only way run data reaches flag_clients.
EvidenceView redact(const RunRecord& run, std::span<const SignatureRound> signatures);

enum class EvidenceKind { f1_impact, signature_outlier, update_impact };

std::string to_string(EvidenceKind kind);

struct FlaggedClient {
    std::size_t client_id = 0;
    std::vector<EvidenceKind> evidence;
    double score = 0.0;   // max of the normalised evidence scores, in [0, 1]
    std::size_t participations = 0;

    bool operator==(const FlaggedClient&) const = default;
};

/// How strongly an output-layer delta (layout of RedactedRound::output_deltas)
/// shifts the output of class `to` up relative to class `from`: the sum of
/// row `to` (weights and bias) minus the sum of row `from`.
double flip_pull(std::span<const double> output_delta, std::size_t n_classes, std::size_t hidden_width, int from,
                 int to);

/// Best two-way split of a round's points by mean silhouette (exhaustive for
/// up to 12 points). `in_first[i]` marks membership of the first group.
struct Bipartition {
    std::vector<bool> in_first;
    double silhouette = 0.0;
};

Bipartition best_bipartition(std::span<const Point3> points);

/// Ascending by client id. Empty when the view has fewer than
/// `thresholds.min_rounds` rounds.
std::vector<FlaggedClient> flag_clients(const EvidenceView& view, const AdvisoryThresholds& thresholds = {});

enum class RecommendationCategory { client_verification, anomaly_detection, robust_model, robustness_codesign };

std::string to_string(RecommendationCategory category);

struct TriggeringMetric {
    std::string name;
    double value = 0.0;
};

struct Recommendation {
    RecommendationCategory category;
    std::string text;
    TriggeringMetric trigger;
};

struct SummaryStats {
    std::optional<int> victim_class;
    double victim_f1_drop = 0.0;
    std::optional<std::size_t> peak_separability_round;
    std::optional<double> peak_separability;
    std::optional<double> mean_density_ratio;
    double malicious_fraction = 0.0;   // among participants of attack-active rounds
    double final_accuracy = 0.0;
    std::size_t rounds = 0;
};

struct AdvisoryReport {
    std::vector<FlaggedClient> flagged_clients;
    std::vector<Recommendation> recommendations;
    SummaryStats summary;
};

AdvisoryReport generate_report(const RunRecord& run, std::span<const SignatureRound> signatures,
                               const std::vector<FlaggedClient>& flags, const AdvisoryThresholds& thresholds = {});

/// redact + flag_clients + generate_report.
AdvisoryReport advise(const RunRecord& run, std::span<const SignatureRound> signatures,
                      const AdvisoryThresholds& thresholds = {});

json report_to_json(const AdvisoryReport& report);

/// Human-readable report for the CLI.
std::string render_text(const AdvisoryReport& report);

}  // namespace fedshadow
