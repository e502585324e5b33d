#include "catuda/losses.hpp"

#include "catuda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace catuda {

namespace {

constexpr double kProbFloor = 1e-12;

void check_labels(std::span<const int> labels, Eigen::Index rows, int num_classes,
                  const char* what) {
    if (static_cast<Eigen::Index>(labels.size()) != rows) {
        throw ShapeError(std::string(what) + ": label count differs from row count");
    }
    for (int y : labels) {
        if (y < 0 || y >= num_classes) {
            throw ParameterError(std::string(what) + ": label " + std::to_string(y) + " out of range");
        }
    }
}

struct ClassMeans {
    Matrix means;                  // K x d
    std::vector<std::size_t> counts;
};

ClassMeans class_means(const PseudoLabeledBatch& b) {
    ClassMeans cm{Matrix::Zero(b.num_classes, b.features.cols()),
                  std::vector<std::size_t>(static_cast<std::size_t>(b.num_classes), 0)};
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
        cm.means.row(b.labels[i]) += b.features.row(static_cast<Eigen::Index>(i));
        ++cm.counts[static_cast<std::size_t>(b.labels[i])];
    }
    for (int k = 0; k < b.num_classes; ++k) {
        if (cm.counts[static_cast<std::size_t>(k)] > 0) {
            cm.means.row(k) /= static_cast<double>(cm.counts[static_cast<std::size_t>(k)]);
        }
    }
    return cm;
}

}  // namespace

void PseudoLabeledBatch::validate() const {
    if (num_classes < 1) throw ParameterError("batch needs num_classes >= 1");
    check_labels(labels, features.rows(), num_classes, "pseudo-labeled batch");
    if (!confidences.empty() && confidences.size() != labels.size()) {
        throw ShapeError("pseudo-labeled batch: confidence count differs from label count");
    }
}

CrossEntropy cross_entropy(const Matrix& probabilities, std::span<const int> labels) {
    const auto n = probabilities.rows();
    check_labels(labels, n, static_cast<int>(probabilities.cols()), "cross_entropy");
    if (n == 0) throw ParameterError("cross_entropy: empty batch");

    CrossEntropy out;
    out.d_logits = probabilities / static_cast<double>(n);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        double p = probabilities(i, y);
        if (p < kProbFloor) {
            p = kProbFloor;
            ++out.clamped;
        }
        sum -= std::log(p);
        out.d_logits(i, y) -= 1.0 / static_cast<double>(n);
    }
    out.loss = sum / static_cast<double>(n);
    return out;
}

LossAndGradient clustering_loss(const Matrix& features, std::span<const int> labels, double margin,
                                Metric metric) {
    if (!(margin > 0.0)) throw ParameterError("clustering_loss: margin must be > 0");
    const auto n = features.rows();
    if (n < 1) throw ParameterError("clustering_loss: empty batch");
    if (static_cast<Eigen::Index>(labels.size()) != n) {
        throw ShapeError("clustering_loss: label count differs from row count");
    }

    LossAndGradient out{0.0, Matrix::Zero(n, features.cols())};
    const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
    double sum = 0.0;
    // Ordered pairs (i, j) and (j, i) contribute identically, so visit i < j
    // once and count it twice. Diagonal terms are exactly zero.
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const auto diff = (features.row(i) - features.row(j)).eval();
            const double sq = diff.squaredNorm();
            const double d = metric == Metric::sq_euclidean ? sq : std::sqrt(sq);
            const bool same = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)];

            double coef = 0.0;
            if (same) {
                sum += 2.0 * d;
                coef = 1.0;
            } else if (d < margin) {
                sum += 2.0 * (margin - d);
                coef = -1.0;
            }
            if (coef == 0.0) continue;

            // d(distance)/d(f_i)
            double scale = 0.0;
            if (metric == Metric::sq_euclidean) {
                scale = 2.0;
            } else if (d > 0.0) {
                scale = 1.0 / d;
            }
            const double g = 2.0 * norm * coef * scale;
            out.d_features.row(i) += g * diff;
            out.d_features.row(j) -= g * diff;
        }
    }
    out.loss = sum * norm;
    return out;
}

AlignmentLoss alignment_loss(const PseudoLabeledBatch& source, const PseudoLabeledBatch& target) {
    if (source.num_classes != target.num_classes) {
        throw ParameterError("alignment_loss: batches disagree on class count");
    }
    if (source.features.cols() != target.features.cols()) {
        throw ShapeError("alignment_loss: feature widths differ");
    }
    source.validate();
    target.validate();

    AlignmentLoss out;
    out.d_features_source = Matrix::Zero(source.features.rows(), source.features.cols());
    out.d_features_target = Matrix::Zero(target.features.rows(), target.features.cols());

    const auto s = class_means(source);
    const auto t = class_means(target);
    std::vector<int> present;
    for (int k = 0; k < source.num_classes; ++k) {
        if (s.counts[static_cast<std::size_t>(k)] > 0 && t.counts[static_cast<std::size_t>(k)] > 0) {
            present.push_back(k);
        }
    }
    out.classes_present = present.size();
    if (present.empty()) return out;

    const double inv_present = 1.0 / static_cast<double>(present.size());
    Matrix grad_mean = Matrix::Zero(source.num_classes, source.features.cols());
    double sum = 0.0;
    for (int k : present) {
        const auto delta = (s.means.row(k) - t.means.row(k)).eval();
        sum += delta.squaredNorm();
        grad_mean.row(k) = 2.0 * inv_present * delta;
    }
    out.loss = sum * inv_present;

    // Chain rule through the means: each member of class k carries 1/count of it.
    for (std::size_t i = 0; i < source.labels.size(); ++i) {
        const int k = source.labels[i];
        if (t.counts[static_cast<std::size_t>(k)] == 0) continue;
        out.d_features_source.row(static_cast<Eigen::Index>(i)) =
            grad_mean.row(k) / static_cast<double>(s.counts[static_cast<std::size_t>(k)]);
    }
    for (std::size_t i = 0; i < target.labels.size(); ++i) {
        const int k = target.labels[i];
        if (s.counts[static_cast<std::size_t>(k)] == 0) continue;
        out.d_features_target.row(static_cast<Eigen::Index>(i)) =
            -grad_mean.row(k) / static_cast<double>(t.counts[static_cast<std::size_t>(k)]);
    }
    return out;
}

AdversarialLoss domain_adversarial_loss(std::span<const double> source_out,
                                        std::span<const double> target_out,
                                        std::span<const double> target_confidences, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("domain_adversarial_loss: p must be in [0, 1]");
    if (target_out.size() != target_confidences.size()) {
        throw ShapeError("domain_adversarial_loss: confidence count differs from target count");
    }
    if (source_out.empty()) throw ParameterError("domain_adversarial_loss: empty source batch");

    auto clamp = [](double c) { return std::clamp(c, kProbFloor, 1.0 - kProbFloor); };

    AdversarialLoss out;
    out.d_source.resize(source_out.size());
    out.d_target.assign(target_out.size(), 0.0);

    const double inv_n = 1.0 / static_cast<double>(source_out.size());
    double source_term = 0.0;
    for (std::size_t i = 0; i < source_out.size(); ++i) {
        const double c = clamp(source_out[i]);
        source_term += std::log(c);
        out.d_source[i] = inv_n / c;
    }
    source_term *= inv_n;

    for (double conf : target_confidences) {
        if (conf > p) ++out.selection_count;
    }
    double target_term = 0.0;
    if (out.selection_count > 0) {
        const double inv_m = 1.0 / static_cast<double>(out.selection_count);
        for (std::size_t i = 0; i < target_out.size(); ++i) {
            if (!(target_confidences[i] > p)) continue;
            const double c = clamp(target_out[i]);
            target_term += std::log(1.0 - c);
            out.d_target[i] = -inv_m / (1.0 - c);
        }
        target_term *= inv_m;
    }
    out.loss = source_term + target_term;
    return out;
}

double total_objective(double l_y, double l_c, double l_a, double l_d, double alpha, double lambda) {
    if (!(alpha >= 0.0) || !(lambda >= 0.0)) {
        throw ParameterError("total_objective: alpha and lambda must be >= 0");
    }
    return l_y + alpha * (l_c + l_a) + lambda * l_d;
}

}  // namespace catuda
