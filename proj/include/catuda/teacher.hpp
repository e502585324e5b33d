#pragma once

// Teacher classifier: an implicit ensemble of the student that labels target
// samples. Two realizations:
//   pi        - a second, independently perturbed (dropout) forward pass;
//   temporal  - per-sample exponential moving average of past predictions,
//               bias-corrected by 1 - decay^t.

#include "catuda/diffnet.hpp"
#include "catuda/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace catuda {

enum class TeacherMode { pi, temporal };

/// Independent train-mode forward pass; its probabilities are the teacher's.
/// Gradients never flow through this pass.
Matrix pi_predict(const Network& net, const Matrix& target_x, std::uint64_t noise_seed);

class TemporalEnsemble {
  public:
    TemporalEnsemble(std::size_t num_samples, std::size_t num_classes, double decay = 0.6);

    /// ensemble_i <- decay * ensemble_i + (1 - decay) * p_i for each listed sample.
    void update(std::span<const std::size_t> indices, const Matrix& probabilities);

    /// Bias-corrected rows for the listed samples. Unseen rows are all zero.
    Matrix corrected(std::span<const std::size_t> indices) const;
    Matrix corrected() const;

    const Matrix& raw() const { return ensemble_; }
    const std::vector<std::size_t>& step_counts() const { return counts_; }
    double decay() const { return decay_; }
    std::size_t num_samples() const { return static_cast<std::size_t>(ensemble_.rows()); }
    std::size_t num_classes() const { return static_cast<std::size_t>(ensemble_.cols()); }

  private:
    Matrix ensemble_;
    std::vector<std::size_t> counts_;
    double decay_;
};

struct PseudoLabels {
    std::vector<int> labels;
    std::vector<double> confidences;
    std::vector<bool> seen;

    std::size_t seen_count() const;
};

/// Argmax label (ties toward the smallest class id) and max probability.
/// An all-zero row is an unseen sample: label 0, confidence 0, seen = false.
PseudoLabels pseudo_labels(const Matrix& probabilities);

/// Pseudo labels straight from the ensemble for the listed samples.
PseudoLabels pseudo_labels(const TemporalEnsemble& teacher, std::span<const std::size_t> indices);

/// CSV with header `index,p0,...,p{K-1},confidence` (corrected probabilities).
void write_teacher_csv(std::ostream& os, const TemporalEnsemble& teacher);

}  // namespace catuda
