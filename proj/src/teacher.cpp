#include "catuda/teacher.hpp"

#include "catuda/errors.hpp"
#include "catuda/format.hpp"

#include <cmath>
#include <ostream>
#include <string>

namespace catuda {

Matrix pi_predict(const Network& net, const Matrix& target_x, std::uint64_t noise_seed) {
    return forward(net, target_x, Mode::train, noise_seed).probabilities;
}

TemporalEnsemble::TemporalEnsemble(std::size_t num_samples, std::size_t num_classes, double decay)
    : ensemble_(Matrix::Zero(static_cast<Eigen::Index>(num_samples),
                             static_cast<Eigen::Index>(num_classes))),
      counts_(num_samples, 0),
      decay_(decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw ParameterError("ensemble decay must be in [0, 1)");
    if (num_classes < 2) throw ParameterError("ensemble needs at least 2 classes");
}

void TemporalEnsemble::update(std::span<const std::size_t> indices, const Matrix& probabilities) {
    require_shape(probabilities, static_cast<Eigen::Index>(indices.size()), ensemble_.cols(),
                  "temporal update probabilities");
    for (auto i : indices) {
        if (i >= num_samples()) {
            throw std::out_of_range("temporal update: sample index " + std::to_string(i) +
                                    " out of range");
        }
    }
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(indices[r]);
        ensemble_.row(i) = decay_ * ensemble_.row(i) +
                           (1.0 - decay_) * probabilities.row(static_cast<Eigen::Index>(r));
        ++counts_[indices[r]];
    }
}

Matrix TemporalEnsemble::corrected(std::span<const std::size_t> indices) const {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(indices.size()), ensemble_.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto i = indices[r];
        if (i >= num_samples()) throw std::out_of_range("temporal read: index out of range");
        if (counts_[i] == 0) continue;
        const double bias = 1.0 - std::pow(decay_, static_cast<double>(counts_[i]));
        out.row(static_cast<Eigen::Index>(r)) = ensemble_.row(static_cast<Eigen::Index>(i)) / bias;
    }
    return out;
}

Matrix TemporalEnsemble::corrected() const {
    std::vector<std::size_t> all(num_samples());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return corrected(all);
}

std::size_t PseudoLabels::seen_count() const {
    std::size_t n = 0;
    for (bool s : seen) n += s ? 1 : 0;
    return n;
}

PseudoLabels pseudo_labels(const Matrix& probabilities) {
    PseudoLabels out;
    const auto n = static_cast<std::size_t>(probabilities.rows());
    out.labels.resize(n);
    out.confidences.resize(n);
    out.seen.resize(n);
    for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
        int best = 0;
        for (Eigen::Index k = 1; k < probabilities.cols(); ++k) {
            if (probabilities(i, k) > probabilities(i, best)) best = static_cast<int>(k);
        }
        const double conf = probabilities(i, best);
        const auto r = static_cast<std::size_t>(i);
        out.seen[r] = conf > 0.0;
        out.labels[r] = out.seen[r] ? best : 0;
        out.confidences[r] = out.seen[r] ? conf : 0.0;
    }
    return out;
}

PseudoLabels pseudo_labels(const TemporalEnsemble& teacher, std::span<const std::size_t> indices) {
    return pseudo_labels(teacher.corrected(indices));
}

void write_teacher_csv(std::ostream& os, const TemporalEnsemble& teacher) {
    const auto k = teacher.num_classes();
    os << "index";
    for (std::size_t c = 0; c < k; ++c) os << ",p" << c;
    os << ",confidence\n";
    const Matrix probs = teacher.corrected();
    const auto labels = pseudo_labels(probs);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        os << i;
        for (Eigen::Index c = 0; c < probs.cols(); ++c) os << ',' << format_double(probs(i, c));
        os << ',' << format_double(labels.confidences[static_cast<std::size_t>(i)]) << '\n';
    }
}

}  // namespace catuda
