#include "fedshadow/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

#include "fedshadow/errors.hpp"
#include "fedshadow/rng.hpp"

namespace fedshadow {

Matrix blob_centers(const BlobSpec& spec, std::uint64_t seed) {
    if (spec.n_classes < 2) throw ConfigError("blobs need at least 2 classes");
    if (spec.n_features == 0) throw ConfigError("blobs need at least 1 feature");
    const auto classes = static_cast<std::size_t>(spec.n_classes);
    Matrix centers(classes, spec.n_features);
    Rng rng(seed, {0x63656e74ULL});
    // Two N(0, s^2 I) draws sit about s * sqrt(2d) apart; widen s in low
    // dimensions so the spacing stays reachable.
    const double scale =
        std::max(1.0, 1.25 * spec.min_center_distance / std::sqrt(2.0 * static_cast<double>(spec.n_features)));
    constexpr int max_attempts = 10000;
    for (std::size_t c = 0; c < classes; ++c) {
        int attempt = 0;
        for (;; ++attempt) {
            if (attempt == max_attempts) {
                throw ConfigError("could not place " + std::to_string(classes) + " centers " +
                                  std::to_string(spec.min_center_distance) + " apart in " +
                                  std::to_string(spec.n_features) + " dimensions");
            }
            auto row = centers.row(c);
            for (double& v : row) v = scale * rng.normal();
            bool far_enough = true;
            for (std::size_t prev = 0; prev < c && far_enough; ++prev) {
                double d2 = 0.0;
                const auto other = centers.row(prev);
                for (std::size_t f = 0; f < row.size(); ++f) d2 += (row[f] - other[f]) * (row[f] - other[f]);
                far_enough = std::sqrt(d2) >= spec.min_center_distance;
            }
            if (far_enough) break;
        }
    }
    return centers;
}

LabeledDataset make_blobs(const BlobSpec& spec, std::uint64_t seed) {
    if (spec.samples_per_class == 0) throw ConfigError("samples_per_class must be positive");
    if (!(spec.stddev > 0.0)) throw ConfigError("blob stddev must be positive");
    const Matrix centers = blob_centers(spec, seed);
    const auto classes = static_cast<std::size_t>(spec.n_classes);

    LabeledDataset data;
    data.n_classes = spec.n_classes;
    data.features = Matrix(classes * spec.samples_per_class, spec.n_features);
    data.labels.reserve(data.features.rows);
    Rng rng(seed, {0x73616d70ULL});
    std::size_t row = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        const auto center = centers.row(c);
        for (std::size_t i = 0; i < spec.samples_per_class; ++i, ++row) {
            auto x = data.features.row(row);
            for (std::size_t f = 0; f < x.size(); ++f) x[f] = center[f] + spec.stddev * rng.normal();
            data.labels.push_back(static_cast<int>(c));
        }
    }

    if (!spec.unit_range) return data;
    for (std::size_t f = 0; f < spec.n_features; ++f) {
        double lo = data.features(0, f);
        double hi = lo;
        for (std::size_t r = 1; r < data.features.rows; ++r) {
            lo = std::min(lo, data.features(r, f));
            hi = std::max(hi, data.features(r, f));
        }
        const double span = hi - lo;
        for (std::size_t r = 0; r < data.features.rows; ++r)
            data.features(r, f) = span > 0.0 ? (data.features(r, f) - lo) / span : 0.0;
    }
    return data;
}

TrainTestSplit split_train_test(const LabeledDataset& data, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must be in (0, 1)");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, {0x73706c74ULL});
    rng.shuffle(std::span<std::size_t>(order));
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
    if (n_test == 0 || n_test >= data.size()) throw ConfigError("dataset too small for the requested split");
    const std::span<const std::size_t> all(order);
    return {data.subset(all.subspan(n_test)), data.subset(all.first(n_test))};
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw LoadError("truncated IDX header in " + path.string(), 0);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

std::ifstream open_idx(const std::filesystem::path& path, std::uint32_t expected_magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open IDX file " + path.string());
    const std::uint32_t magic = read_be32(in, path);
    if (magic != expected_magic) {
        throw LoadError("bad IDX magic in " + path.string() + ": got " + std::to_string(magic) + ", expected " +
                            std::to_string(expected_magic),
                        0);
    }
    return in;
}

}  // namespace

Matrix read_idx_images(const std::filesystem::path& path, std::optional<std::size_t> limit) {
    auto in = open_idx(path, 0x00000803);
    const std::size_t count = read_be32(in, path);
    const std::size_t rows = read_be32(in, path);
    const std::size_t cols = read_be32(in, path);
    const std::size_t n = limit ? std::min(*limit, count) : count;
    Matrix images(n, rows * cols);
    std::vector<unsigned char> buffer(rows * cols);
    for (std::size_t i = 0; i < n; ++i) {
        if (!in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size())))
            throw LoadError("truncated IDX image data in " + path.string(), 0);
        auto row = images.row(i);
        for (std::size_t p = 0; p < buffer.size(); ++p) row[p] = buffer[p] / 255.0;
    }
    return images;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path, std::optional<std::size_t> limit) {
    auto in = open_idx(path, 0x00000801);
    const std::size_t count = read_be32(in, path);
    const std::size_t n = limit ? std::min(*limit, count) : count;
    std::vector<unsigned char> buffer(n);
    if (!in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(n)))
        throw LoadError("truncated IDX label data in " + path.string(), 0);
    return {buffer.begin(), buffer.end()};
}

TrainTestSplit load_idx(const IdxSource& source) {
    TrainTestSplit split;
    split.train.features = read_idx_images(source.train_images, source.train_limit);
    split.train.labels = read_idx_labels(source.train_labels, source.train_limit);
    split.train.n_classes = source.n_classes;
    split.test.features = read_idx_images(source.test_images, source.test_limit);
    split.test.labels = read_idx_labels(source.test_labels, source.test_limit);
    split.test.n_classes = source.n_classes;
    split.train.validate();
    split.test.validate();
    return split;
}

}  // namespace fedshadow
