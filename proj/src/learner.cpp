#include "fedshadow/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedshadow/errors.hpp"
#include "fedshadow/rng.hpp"

namespace fedshadow {

double Rng::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_normal_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
}

void LabeledDataset::validate() const {
    if (n_classes < 2) throw ConfigError("dataset needs at least 2 classes");
    if (features.rows != labels.size()) {
        throw ConfigError("feature rows (" + std::to_string(features.rows) + ") != labels (" +
                          std::to_string(labels.size()) + ")");
    }
    for (int label : labels) {
        if (label < 0 || label >= n_classes) {
            throw ConfigError("label " + std::to_string(label) + " outside [0, " +
                              std::to_string(n_classes) + ")");
        }
    }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.n_classes = n_classes;
    out.features = Matrix(indices.size(), features.cols);
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = features.row(indices[i]);
        std::copy(src.begin(), src.end(), out.features.row(i).begin());
        out.labels.push_back(labels[indices[i]]);
    }
    return out;
}

std::size_t ModelParams::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.weight.values.size() + layer.bias.size();
    return n;
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& layer : layers) {
        flat.insert(flat.end(), layer.weight.values.begin(), layer.weight.values.end());
        flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
    }
    return flat;
}

namespace {

ModelParams zero_params(const ModelDims& dims) {
    if (dims.n_features == 0 || dims.hidden_width == 0 || dims.n_classes < 2) {
        throw ConfigError("invalid model dims (" + std::to_string(dims.n_features) + ", " +
                          std::to_string(dims.hidden_width) + ", " + std::to_string(dims.n_classes) + ")");
    }
    ModelParams p;
    p.dims = dims;
    p.layers.push_back({Matrix(dims.hidden_width, dims.n_features), std::vector<double>(dims.hidden_width, 0.0)});
    p.layers.push_back({Matrix(dims.n_classes, dims.hidden_width), std::vector<double>(dims.n_classes, 0.0)});
    return p;
}

}  // namespace

ModelParams ModelParams::unflatten(const ModelDims& dims, std::span<const double> flat) {
    ModelParams p = zero_params(dims);
    if (flat.size() != p.parameter_count()) {
        throw ConfigError("flat parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                          std::to_string(p.parameter_count()));
    }
    auto it = flat.begin();
    for (auto& layer : p.layers) {
        std::copy_n(it, layer.weight.values.size(), layer.weight.values.begin());
        it += static_cast<std::ptrdiff_t>(layer.weight.values.size());
        std::copy_n(it, layer.bias.size(), layer.bias.begin());
        it += static_cast<std::ptrdiff_t>(layer.bias.size());
    }
    return p;
}

bool ModelParams::all_finite() const noexcept {
    for (const auto& layer : layers) {
        for (double v : layer.weight.values)
            if (!std::isfinite(v)) return false;
        for (double v : layer.bias)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

bool ModelParams::same_shape(const ModelParams& other) const noexcept {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].weight.rows != other.layers[i].weight.rows ||
            layers[i].weight.cols != other.layers[i].weight.cols ||
            layers[i].bias.size() != other.layers[i].bias.size())
            return false;
    }
    return true;
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
    ModelParams p = zero_params(dims);
    Rng rng(seed, {0x696e6974ULL});
    for (auto& layer : p.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols));
        for (double& w : layer.weight.values) w = rng.uniform(-bound, bound);
    }
    return p;
}

namespace {

struct Activations {
    std::vector<double> hidden_pre;
    std::vector<double> hidden;
    std::vector<double> logits;
};

void dense(const DenseLayer& layer, std::span<const double> in, std::vector<double>& out) {
    out.assign(layer.bias.begin(), layer.bias.end());
    for (std::size_t r = 0; r < layer.weight.rows; ++r) {
        const auto w = layer.weight.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * in[c];
        out[r] += acc;
    }
}

void forward_into(const ModelParams& params, std::span<const double> sample, Activations& act) {
    dense(params.layers[0], sample, act.hidden_pre);
    act.hidden.resize(act.hidden_pre.size());
    for (std::size_t i = 0; i < act.hidden.size(); ++i) act.hidden[i] = std::max(0.0, act.hidden_pre[i]);
    dense(params.layers[1], act.hidden, act.logits);
}

/// Softmax in place; returns log-sum-exp of the input logits.
double softmax_inplace(std::vector<double>& z) {
    const double peak = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - peak);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return peak + std::log(sum);
}

void check_compatible(const ModelParams& params, const LabeledDataset& data) {
    if (params.layers.size() != 2) throw ConfigError("model must have exactly two layers");
    if (params.dims.n_features != data.n_features()) {
        throw ConfigError("model expects " + std::to_string(params.dims.n_features) + " features, data has " +
                          std::to_string(data.n_features()));
    }
    if (params.dims.n_classes != static_cast<std::size_t>(data.n_classes)) {
        throw ConfigError("model expects " + std::to_string(params.dims.n_classes) + " classes, data has " +
                          std::to_string(data.n_classes));
    }
}

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams g = params;
    for (auto& layer : g.layers) {
        std::fill(layer.weight.values.begin(), layer.weight.values.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
    return g;
}

}  // namespace

std::vector<double> forward(const ModelParams& params, std::span<const double> sample) {
    Activations act;
    forward_into(params, sample, act);
    return act.logits;
}

int predict(const ModelParams& params, std::span<const double> sample) {
    const auto logits = forward(params, sample);
    // max_element returns the first maximum, which is the lowest class id.
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double mean_loss(const ModelParams& params, const LabeledDataset& data, std::span<const std::size_t> batch) {
    check_compatible(params, data);
    std::vector<std::size_t> rows;
    if (batch.empty()) {
        rows = all_rows(data.size());
        batch = rows;
    }
    if (batch.empty()) throw ConfigError("cannot compute loss on an empty dataset");
    Activations act;
    double total = 0.0;
    for (std::size_t idx : batch) {
        forward_into(params, data.features.row(idx), act);
        const double label_logit = act.logits[static_cast<std::size_t>(data.labels[idx])];
        total += softmax_inplace(act.logits) - label_logit;
    }
    return total / static_cast<double>(batch.size());
}

ModelParams loss_gradient(const ModelParams& params, const LabeledDataset& data,
                          std::span<const std::size_t> batch) {
    check_compatible(params, data);
    ModelParams grad = zeros_like(params);
    std::vector<std::size_t> rows;
    if (batch.empty()) {
        rows = all_rows(data.size());
        batch = rows;
    }
    if (batch.empty()) return grad;

    const auto& out_layer = params.layers[1];
    auto& g_hidden = grad.layers[0];
    auto& g_out = grad.layers[1];
    const std::size_t hidden = params.dims.hidden_width;
    const std::size_t classes = params.dims.n_classes;

    Activations act;
    std::vector<double> d_hidden(hidden);
    for (std::size_t idx : batch) {
        const auto x = data.features.row(idx);
        forward_into(params, x, act);
        softmax_inplace(act.logits);
        auto& d_logits = act.logits;
        d_logits[static_cast<std::size_t>(data.labels[idx])] -= 1.0;

        std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
        for (std::size_t k = 0; k < classes; ++k) {
            const double dk = d_logits[k];
            auto g_row = g_out.weight.row(k);
            const auto w_row = out_layer.weight.row(k);
            for (std::size_t h = 0; h < hidden; ++h) {
                g_row[h] += dk * act.hidden[h];
                d_hidden[h] += dk * w_row[h];
            }
            g_out.bias[k] += dk;
        }
        for (std::size_t h = 0; h < hidden; ++h) {
            if (act.hidden_pre[h] <= 0.0) continue;
            const double dh = d_hidden[h];
            auto g_row = g_hidden.weight.row(h);
            for (std::size_t f = 0; f < x.size(); ++f) g_row[f] += dh * x[f];
            g_hidden.bias[h] += dh;
        }
    }

    const double scale = 1.0 / static_cast<double>(batch.size());
    for (auto& layer : grad.layers) {
        for (double& v : layer.weight.values) v *= scale;
        for (double& v : layer.bias) v *= scale;
    }
    return grad;
}

ModelParams train_local(const ModelParams& start, const LabeledDataset& data, const TrainSpec& spec) {
    check_compatible(start, data);
    if (data.size() == 0) throw ConfigError("cannot train on an empty dataset");
    if (!(spec.learning_rate >= 0.0) || !std::isfinite(spec.learning_rate))
        throw ConfigError("learning_rate must be a finite non-negative number");
    if (spec.local_epochs == 0) throw ConfigError("local_epochs must be positive");
    if (spec.batch_size == 0) throw ConfigError("batch_size must be positive");

    const std::size_t batch_size = std::min(spec.batch_size, data.size());
    ModelParams params = start;
    std::vector<std::size_t> order = all_rows(data.size());

    for (std::size_t epoch = 0; epoch < spec.local_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(spec.seed, {epoch});
        rng.shuffle(std::span<std::size_t>(order));

        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), begin + batch_size);
            const std::span<const std::size_t> batch(order.data() + begin, end - begin);
            const ModelParams grad = loss_gradient(params, data, batch);
            for (std::size_t l = 0; l < params.layers.size(); ++l) {
                auto& w = params.layers[l].weight.values;
                const auto& gw = grad.layers[l].weight.values;
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= spec.learning_rate * gw[i];
                auto& b = params.layers[l].bias;
                const auto& gb = grad.layers[l].bias;
                for (std::size_t i = 0; i < b.size(); ++i) b[i] -= spec.learning_rate * gb[i];
            }
            if (!params.all_finite()) throw NumericDivergence(epoch, batch_index);
        }
    }
    return params;
}

std::vector<double> f1_from_confusion(const std::vector<std::vector<std::uint64_t>>& confusion) {
    const std::size_t n = confusion.size();
    std::vector<double> f1(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        std::uint64_t predicted = 0;
        std::uint64_t actual = 0;
        for (std::size_t k = 0; k < n; ++k) {
            predicted += confusion[k][c];
            actual += confusion[c][k];
        }
        const std::uint64_t tp = confusion[c][c];
        // 2PR/(P+R) == 2TP/(2TP+FP+FN); zero when there are no true positives.
        const std::uint64_t denom = predicted + actual;
        f1[c] = (tp == 0 || denom == 0) ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }
    return f1;
}

double micro_f1(const std::vector<std::vector<std::uint64_t>>& confusion) {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    const std::size_t n = confusion.size();
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t k = 0; k < n; ++k) {
            if (c == k) {
                tp += confusion[c][c];
            } else {
                fp += confusion[k][c];
                fn += confusion[c][k];
            }
        }
    }
    const std::uint64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

EvalMetrics evaluate(const ModelParams& params, const LabeledDataset& test) {
    check_compatible(params, test);
    if (test.size() == 0) throw ConfigError("cannot evaluate on an empty test set");
    const auto n = static_cast<std::size_t>(test.n_classes);
    EvalMetrics m;
    m.confusion.assign(n, std::vector<std::uint64_t>(n, 0));
    std::uint64_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const int guess = predict(params, test.features.row(i));
        const int truth = test.labels[i];
        ++m.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(guess)];
        if (guess == truth) ++correct;
    }
    m.per_class_f1 = f1_from_confusion(m.confusion);
    m.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    return m;
}

}  // namespace fedshadow
