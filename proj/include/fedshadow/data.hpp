#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "fedshadow/learner.hpp"

namespace fedshadow {

/// Isotropic Gaussian blobs, one per class. With `unit_range` the features
/// are min-max scaled to [0, 1] after sampling.
struct BlobSpec {
    int n_classes = 10;
    std::size_t n_features = 32;
    std::size_t samples_per_class = 625;
    double min_center_distance = 6.0;
    double stddev = 1.0;
    bool unit_range = false;
};

/// IDX (MNIST / Fashion-MNIST) files on disk.
struct IdxSource {
    std::filesystem::path train_images;
    std::filesystem::path train_labels;
    std::filesystem::path test_images;
    std::filesystem::path test_labels;
    int n_classes = 10;
    std::optional<std::size_t> train_limit;
    std::optional<std::size_t> test_limit;
};

struct TrainTestSplit {
    LabeledDataset train;
    LabeledDataset test;
};

/// Class centers: N(0, s^2) coordinates with s = max(1, 1.25 * distance /
/// sqrt(2 * n_features)), redrawn until every pair is at least
/// `min_center_distance` apart. Throws ConfigError when that fails.
Matrix blob_centers(const BlobSpec& spec, std::uint64_t seed);

/// Samples are emitted class-by-class; callers shuffle as needed.
LabeledDataset make_blobs(const BlobSpec& spec, std::uint64_t seed);

/// Seeded shuffle, then the first round(test_fraction * n) rows go to test.
TrainTestSplit split_train_test(const LabeledDataset& data, double test_fraction, std::uint64_t seed);

/// Reads an IDX3 image file (magic 0x00000803); pixels scaled to [0, 1].
Matrix read_idx_images(const std::filesystem::path& path, std::optional<std::size_t> limit = std::nullopt);

/// Reads an IDX1 label file (magic 0x00000801).
std::vector<int> read_idx_labels(const std::filesystem::path& path, std::optional<std::size_t> limit = std::nullopt);

TrainTestSplit load_idx(const IdxSource& source);

}  // namespace fedshadow
