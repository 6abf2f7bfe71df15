#pragma once

// One-hidden-layer ReLU classifier with softmax cross-entropy, trained by
// mini-batch SGD. Everything here is a pure function of its arguments.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedshadow {

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

struct LabeledDataset {
    Matrix features;            // n_samples x n_features
    std::vector<int> labels;    // class ids in [0, n_classes)
    int n_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t n_features() const noexcept { return features.cols; }

    /// Throws ConfigError when the invariants do not hold.
    void validate() const;

    /// Rows selected by `indices`, in that order.
    LabeledDataset subset(std::span<const std::size_t> indices) const;

    bool operator==(const LabeledDataset&) const = default;
};

struct ModelDims {
    std::size_t n_features = 0;
    std::size_t hidden_width = 0;
    std::size_t n_classes = 0;

    bool operator==(const ModelDims&) const = default;
};

struct DenseLayer {
    Matrix weight;               // out x in
    std::vector<double> bias;    // out

    bool operator==(const DenseLayer&) const = default;
};

/// Layer 0 is the hidden layer (ReLU), layer 1 the output layer (logits).
struct ModelParams {
    ModelDims dims;
    std::vector<DenseLayer> layers;

    std::size_t parameter_count() const noexcept;

    /// Flatten as layer 0 W (row-major), layer 0 b, layer 1 W, layer 1 b.
    std::vector<double> flatten() const;
    static ModelParams unflatten(const ModelDims& dims, std::span<const double> flat);

    bool all_finite() const noexcept;
    bool same_shape(const ModelParams& other) const noexcept;

    bool operator==(const ModelParams&) const = default;
};

struct TrainSpec {
    double learning_rate = 0.05;
    std::size_t local_epochs = 2;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

struct EvalMetrics {
    std::vector<std::vector<std::uint64_t>> confusion;  // rows = true, cols = predicted
    std::vector<double> per_class_f1;
    double accuracy = 0.0;

    bool operator==(const EvalMetrics&) const = default;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

/// Output logits for one sample.
std::vector<double> forward(const ModelParams& params, std::span<const double> sample);

/// Index of the largest logit, lowest index on ties.
int predict(const ModelParams& params, std::span<const double> sample);

/// Mean softmax cross-entropy over the rows in `batch` (all rows when empty).
double mean_loss(const ModelParams& params, const LabeledDataset& data,
                 std::span<const std::size_t> batch = {});

/// Gradient of mean_loss with respect to every parameter, same layout as params.
/// An empty batch means every row; an empty dataset gives a zero gradient.
ModelParams loss_gradient(const ModelParams& params, const LabeledDataset& data,
                          std::span<const std::size_t> batch);

/// Runs `spec.local_epochs` epochs of mini-batch SGD starting from `start`.
/// Batch order per epoch comes from the stream keyed by (spec.seed, epoch).
/// Throws NumericDivergence on the first non-finite parameter.
ModelParams train_local(const ModelParams& start, const LabeledDataset& data, const TrainSpec& spec);

EvalMetrics evaluate(const ModelParams& params, const LabeledDataset& test);

/// Per-class F1 from a confusion matrix; F1 = 0 when precision + recall = 0.
std::vector<double> f1_from_confusion(const std::vector<std::vector<std::uint64_t>>& confusion);

/// Micro-averaged F1 (pooled TP/FP/FN over all classes).
double micro_f1(const std::vector<std::vector<std::uint64_t>>& confusion);

}  // namespace fedshadow
