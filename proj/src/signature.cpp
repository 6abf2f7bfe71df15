#include "fedshadow/signature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedshadow/errors.hpp"

namespace fedshadow {

namespace {

std::size_t checked_row(int cls, std::size_t n_classes) {
    if (cls < 0 || static_cast<std::size_t>(cls) >= n_classes)
        throw AnalysisError("feature row " + std::to_string(cls) + " is not a class id");
    return static_cast<std::size_t>(cls);
}

double distance(const Point3& a, const Point3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

std::vector<double> output_layer_feature(std::span<const double> flat_delta, const ModelDims& dims,
                                         const FeatureSelection& selection) {
    const std::size_t hidden = dims.hidden_width;
    const std::size_t classes = dims.n_classes;
    const std::size_t out_weights = classes * hidden;
    const std::size_t out_total = out_weights + classes;
    const std::size_t expected = hidden * dims.n_features + hidden + out_total;
    if (flat_delta.size() != expected) {
        throw AnalysisError("delta has " + std::to_string(flat_delta.size()) + " entries, expected " +
                            std::to_string(expected));
    }
    const auto tail = flat_delta.subspan(flat_delta.size() - out_total);
    if (selection.class_rows.empty()) return {tail.begin(), tail.end()};

    std::vector<double> feature;
    feature.reserve(selection.class_rows.size() * (hidden + 1));
    for (int cls : selection.class_rows) {
        const std::size_t r = checked_row(cls, classes);
        const auto row = tail.subspan(r * hidden, hidden);
        feature.insert(feature.end(), row.begin(), row.end());
    }
    for (int cls : selection.class_rows) feature.push_back(tail[out_weights + checked_row(cls, classes)]);
    return feature;
}

std::vector<double> extract_delta(const ModelParams& local, const ModelParams& global_prev,
                                  const FeatureSelection& selection) {
    if (!local.same_shape(global_prev) || local.layers.empty())
        throw AnalysisError("extract_delta: parameter shapes differ");
    const DenseLayer& a = local.layers.back();
    const DenseLayer& b = global_prev.layers.back();

    std::vector<std::size_t> rows;
    if (selection.class_rows.empty()) {
        rows.resize(a.weight.rows);
        std::iota(rows.begin(), rows.end(), std::size_t{0});
    } else {
        for (int cls : selection.class_rows) rows.push_back(checked_row(cls, a.weight.rows));
    }
    std::vector<double> feature;
    feature.reserve(rows.size() * (a.weight.cols + 1));
    for (std::size_t r : rows) {
        for (std::size_t c = 0; c < a.weight.cols; ++c) feature.push_back(a.weight(r, c) - b.weight(r, c));
    }
    for (std::size_t r : rows) feature.push_back(a.bias[r] - b.bias[r]);
    return feature;
}

SymmetricEigen jacobi_eigen(const Matrix& symmetric, double tolerance, int max_sweeps) {
    if (symmetric.rows != symmetric.cols) throw AnalysisError("jacobi_eigen needs a square matrix");
    const std::size_t n = symmetric.rows;
    Matrix a = symmetric;
    Matrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

    double frob = 0.0;
    for (double x : a.values) frob += x * x;
    frob = std::sqrt(frob);

    const auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) s += 2.0 * a(p, q) * a(p, q);
        return std::sqrt(s);
    };

    for (int sweep = 0; sweep < max_sweeps && frob > 0.0 && off_norm() > tolerance * frob; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                a(p, p) -= t * apq;
                a(q, q) += t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    if (r == p || r == q) continue;
                    const double arp = a(r, p);
                    const double arq = a(r, q);
                    a(r, p) = a(p, r) = c * arp - s * arq;
                    a(r, q) = a(q, r) = s * arp + c * arq;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vrp = v(r, p);
                    const double vrq = v(r, q);
                    v(r, p) = c * vrp - s * vrq;
                    v(r, q) = s * vrp + c * vrq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    SymmetricEigen out;
    out.values.reserve(n);
    out.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values.push_back(a(order[j], order[j]));
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, j) = v(r, order[j]);
    }
    return out;
}

PcaResult pca_project(std::span<const std::vector<double>> vectors, std::size_t n_components) {
    const std::size_t n = vectors.size();
    if (n < 2) throw AnalysisError("PCA needs at least two vectors, got " + std::to_string(n));
    const std::size_t d = vectors.front().size();
    if (d == 0) throw AnalysisError("PCA needs non-empty vectors");
    for (const auto& v : vectors) {
        if (v.size() != d) throw AnalysisError("PCA input vectors have different dimensions");
    }
    n_components = std::min<std::size_t>(n_components, 3);

    Matrix centered(n, d);
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += vectors[r][c];
        mean /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) centered(r, c) = vectors[r][c] - mean;
    }

    const std::size_t rank_cap = std::min({n_components, n - 1, d});
    const double dof = static_cast<double>(n - 1);
    std::vector<double> eigenvalues;
    std::vector<std::vector<double>> directions;

    if (n <= d) {
        Matrix gram(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i; j < n; ++j) {
                double acc = 0.0;
                const auto ri = centered.row(i);
                const auto rj = centered.row(j);
                for (std::size_t c = 0; c < d; ++c) acc += ri[c] * rj[c];
                gram(i, j) = gram(j, i) = acc;
            }
        }
        const auto eig = jacobi_eigen(gram);
        for (std::size_t k = 0; k < rank_cap; ++k) {
            eigenvalues.push_back(eig.values[k]);
            std::vector<double> dir(d, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                const double u = eig.vectors(r, k);
                const auto row = centered.row(r);
                for (std::size_t c = 0; c < d; ++c) dir[c] += u * row[c];
            }
            directions.push_back(std::move(dir));
        }
    } else {
        Matrix scatter(d, d);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = i; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t r = 0; r < n; ++r) acc += centered(r, i) * centered(r, j);
                scatter(i, j) = scatter(j, i) = acc;
            }
        }
        const auto eig = jacobi_eigen(scatter);
        for (std::size_t k = 0; k < rank_cap; ++k) {
            eigenvalues.push_back(eig.values[k]);
            std::vector<double> dir(d);
            for (std::size_t c = 0; c < d; ++c) dir[c] = eig.vectors(c, k);
            directions.push_back(std::move(dir));
        }
    }

    PcaResult result;
    result.projections.assign(n, Point3{0.0, 0.0, 0.0});
    const double top = eigenvalues.empty() ? 0.0 : std::max(0.0, eigenvalues.front());
    for (std::size_t k = 0; k < eigenvalues.size(); ++k) {
        // Directions beyond the numerical rank carry no variance and an arbitrary orientation.
        if (!(top > 0.0) || eigenvalues[k] <= 1e-12 * top) break;
        auto& dir = directions[k];
        double norm = 0.0;
        for (double x : dir) norm += x * x;
        norm = std::sqrt(norm);
        if (!(norm > 0.0)) break;
        std::size_t peak = 0;
        for (std::size_t c = 0; c < d; ++c) {
            dir[c] /= norm;
            if (std::abs(dir[c]) > std::abs(dir[peak])) peak = c;
        }
        if (dir[peak] < 0.0) {
            for (double& x : dir) x = -x;
        }
        double variance = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const auto row = centered.row(r);
            double proj = 0.0;
            for (std::size_t c = 0; c < d; ++c) proj += row[c] * dir[c];
            result.projections[r][k] = proj;
            variance += proj * proj;
        }
        result.explained_variance[k] = variance / dof;
        result.components.push_back(std::move(dir));
    }
    return result;
}

std::optional<double> separability_score(std::span<const Point3> points, const std::vector<bool>& flags) {
    if (points.size() != flags.size()) throw AnalysisError("points and flags differ in length");
    const auto n_mal = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
    const std::size_t n_ben = flags.size() - n_mal;
    if (n_mal == 0 || n_ben == 0) return std::nullopt;

    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::size_t own = flags[i] ? n_mal : n_ben;
        if (own == 1) continue;
        double same = 0.0;
        double other = 0.0;
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (j == i) continue;
            (flags[j] == flags[i] ? same : other) += distance(points[i], points[j]);
        }
        const double a = same / static_cast<double>(own - 1);
        const double b = other / static_cast<double>(flags.size() - own);
        const double scale = std::max(a, b);
        if (scale > 0.0) total += (b - a) / scale;
    }
    return total / static_cast<double>(points.size());
}

namespace {

std::optional<double> mean_pairwise(std::span<const Point3> points, const std::vector<bool>& flags, bool group) {
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (flags[i] != group) continue;
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            if (flags[j] != group) continue;
            sum += distance(points[i], points[j]);
            ++pairs;
        }
    }
    if (pairs == 0) return std::nullopt;
    return sum / static_cast<double>(pairs);
}

}  // namespace

std::optional<double> density_ratio(std::span<const Point3> points, const std::vector<bool>& flags) {
    if (points.size() != flags.size()) throw AnalysisError("points and flags differ in length");
    const auto benign = mean_pairwise(points, flags, false);
    const auto malicious = mean_pairwise(points, flags, true);
    if (!benign || !malicious || !(*malicious > 0.0) || !(*benign > 0.0)) return std::nullopt;
    return *benign / *malicious;
}

ModelDims run_dims(const RunRecord& run) {
    if (run.final_params) return run.final_params->dims;
    ModelDims dims;
    dims.hidden_width = run.config.train_spec.hidden_width;
    dims.n_classes = static_cast<std::size_t>(run.config.data_spec.kind == DataSpec::Kind::blobs
                                                  ? run.config.data_spec.blobs.n_classes
                                                  : run.config.data_spec.idx.n_classes);
    if (run.config.data_spec.kind == DataSpec::Kind::blobs) {
        dims.n_features = run.config.data_spec.blobs.n_features;
        return dims;
    }
    // IDX width is not in the config; recover it from the delta length.
    for (const auto& round : run.rounds) {
        if (round.update_deltas.empty()) continue;
        const std::size_t total = round.update_deltas.front().size();
        const std::size_t h = dims.hidden_width;
        const std::size_t rest = h + dims.n_classes * h + dims.n_classes;
        if (total > rest && (total - rest) % h == 0) dims.n_features = (total - rest) / h;
        return dims;
    }
    throw AnalysisError("cannot infer model dims from a run without deltas");
}

SignatureRound analyze_round(const RoundRecord& round, const ModelDims& dims, const FeatureSelection& selection) {
    SignatureRound sig;
    sig.round_index = round.round_index;
    sig.client_ids = round.participant_ids;
    sig.malicious_flags = round.malicious_flags;
    sig.points.assign(round.update_deltas.size(), Point3{0.0, 0.0, 0.0});
    if (round.update_deltas.size() >= 2) {
        std::vector<std::vector<double>> features;
        features.reserve(round.update_deltas.size());
        for (const auto& delta : round.update_deltas) features.push_back(output_layer_feature(delta, dims, selection));
        auto pca = pca_project(features);
        sig.points = std::move(pca.projections);
        sig.explained_variance = pca.explained_variance;
    }
    sig.separability = separability_score(sig.points, sig.malicious_flags);
    sig.density_ratio = density_ratio(sig.points, sig.malicious_flags);
    return sig;
}

Trajectory build_trajectory(std::span<const RoundRecord> rounds, const ModelDims& dims,
                            const FeatureSelection& selection) {
    Trajectory trajectory;
    std::vector<std::vector<double>> features;
    for (const auto& round : rounds) {
        for (std::size_t i = 0; i < round.update_deltas.size(); ++i) {
            features.push_back(output_layer_feature(round.update_deltas[i], dims, selection));
            trajectory.points.push_back({round.round_index, round.participant_ids[i], Point3{0.0, 0.0, 0.0},
                                         static_cast<bool>(round.malicious_flags[i])});
        }
    }
    if (features.size() >= 2) {
        const auto pca = pca_project(features);
        for (std::size_t i = 0; i < features.size(); ++i) trajectory.points[i].coordinates = pca.projections[i];
        trajectory.explained_variance = pca.explained_variance;
    }
    return trajectory;
}

RunAnalysis analyze_run(const RunRecord& run, const FeatureSelection& selection) {
    if (run.rounds.empty()) throw AnalysisError("cannot analyze a run with no rounds");
    const ModelDims dims = run_dims(run);
    RunAnalysis analysis;
    analysis.signatures.reserve(run.rounds.size());
    for (const auto& round : run.rounds) analysis.signatures.push_back(analyze_round(round, dims, selection));
    analysis.trajectory = build_trajectory(run.rounds, dims, selection);
    return analysis;
}

}  // namespace fedshadow
