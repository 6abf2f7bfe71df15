#pragma once

// Attack-behaviour analytics over client update deltas: output-layer
// features, 3-D PCA, silhouette separability, density ratio, trajectories.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fedshadow/federation.hpp"
#include "fedshadow/learner.hpp"

namespace fedshadow {

using Point3 = std::array<double, 3>;

/// Which output-layer rows feed the signature feature.
struct FeatureSelection {
    /// Empty: every class row. Otherwise only these rows, in the given order.
    std::vector<int> class_rows;
};

/// Output-layer delta (local - global_prev): weights row-major, then bias.
std::vector<double> extract_delta(const ModelParams& local, const ModelParams& global_prev,
                                  const FeatureSelection& selection = {});

/// The same feature taken from a flattened full-model delta.
std::vector<double> output_layer_feature(std::span<const double> flat_delta, const ModelDims& dims,
                                         const FeatureSelection& selection = {});

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
struct SymmetricEigen {
    std::vector<double> values;   // descending
    Matrix vectors;               // column j pairs with values[j]
};

/// Sweeps until the off-diagonal Frobenius norm is <= tolerance * ||A||_F.
SymmetricEigen jacobi_eigen(const Matrix& symmetric, double tolerance = 1e-12, int max_sweeps = 100);

struct PcaResult {
    std::vector<Point3> projections;               // one per input vector, zero padded
    std::vector<std::vector<double>> components;   // up to 3 orthonormal d-vectors
    Point3 explained_variance{};                   // sample variance along each component, descending
};

/// Top min(3, n-1, d) principal components. Uses the n x n Gram matrix when
/// n <= d and the d x d covariance otherwise. Component signs are fixed so
/// that the largest-magnitude coordinate is positive.
/// Throws AnalysisError for fewer than two vectors or ragged input.
PcaResult pca_project(std::span<const std::vector<double>> vectors, std::size_t n_components = 3);

/// Mean silhouette of the malicious/benign split in 3-D. Points in a group of
/// one contribute 0. Empty when either group is empty.
std::optional<double> separability_score(std::span<const Point3> points, const std::vector<bool>& flags);

/// Mean pairwise distance within the benign group divided by the same for the
/// malicious group. Empty unless both groups have two or more points and the
/// malicious spread is non-zero.
std::optional<double> density_ratio(std::span<const Point3> points, const std::vector<bool>& flags);

struct SignatureRound {
    std::size_t round_index = 0;
    std::vector<std::size_t> client_ids;
    std::vector<Point3> points;
    std::vector<bool> malicious_flags;
    Point3 explained_variance{};
    std::optional<double> separability;
    std::optional<double> density_ratio;

    bool operator==(const SignatureRound&) const = default;
};

struct TrajectoryPoint {
    std::size_t round_index = 0;
    std::size_t client_id = 0;
    Point3 coordinates{};
    bool malicious = false;

    bool operator==(const TrajectoryPoint&) const = default;
};

struct Trajectory {
    std::vector<TrajectoryPoint> points;
    Point3 explained_variance{};

    bool operator==(const Trajectory&) const = default;
};

struct RunAnalysis {
    std::vector<SignatureRound> signatures;
    Trajectory trajectory;
};

/// PCA over one round's update deltas.
SignatureRound analyze_round(const RoundRecord& round, const ModelDims& dims, const FeatureSelection& selection = {});

/// Per-round signatures plus one trajectory under a PCA basis fit on every
/// delta in the run. Throws AnalysisError for a run without rounds.
RunAnalysis analyze_run(const RunRecord& run, const FeatureSelection& selection = {});

/// Trajectory alone (global basis over all rounds given).
Trajectory build_trajectory(std::span<const RoundRecord> rounds, const ModelDims& dims,
                            const FeatureSelection& selection = {});

/// Model dims implied by a run config (resolves IDX feature width from the files).
ModelDims run_dims(const RunRecord& run);

}  // namespace fedshadow
