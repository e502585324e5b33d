#pragma once

// The four training objectives and their exact gradients:
//   supervised cross-entropy on the source batch,
//   discriminative clustering over pairs within one domain,
//   class-conditional alignment of per-class feature means across domains,
//   confidence-thresholded domain-adversarial loss on critic outputs.

#include "catuda/diffnet.hpp"
#include "catuda/matrix.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace catuda {

/// Features with (ground-truth or teacher-assigned) labels for one domain.
struct PseudoLabeledBatch {
    Matrix features;
    std::vector<int> labels;
    std::vector<double> confidences;  // 1.0 for source rows
    int num_classes = 2;

    void validate() const;
};

enum class Metric { sq_euclidean, euclidean };

struct CrossEntropy {
    double loss = 0.0;
    Matrix d_logits;
    std::size_t clamped = 0;  // rows where p[y] was clamped to 1e-12
};

/// -(1/N) sum log p_i[y_i]; gradient is taken w.r.t. the pre-softmax logits.
CrossEntropy cross_entropy(const Matrix& probabilities, std::span<const int> labels);

struct LossAndGradient {
    double loss = 0.0;
    Matrix d_features;
};

/// (1/|X|^2) over all ordered pairs (i, j), i == j included:
///   same label:      d(f_i, f_j)
///   different label: max(0, m - d(f_i, f_j))
/// The hinge subgradient at d == m is 0, as is the Euclidean one at d == 0.
LossAndGradient clustering_loss(const Matrix& features, std::span<const int> labels, double margin,
                                Metric metric = Metric::sq_euclidean);

inline LossAndGradient clustering_loss(const PseudoLabeledBatch& batch, double margin,
                                       Metric metric = Metric::sq_euclidean) {
    return clustering_loss(batch.features, batch.labels, margin, metric);
}

struct AlignmentLoss {
    double loss = 0.0;
    Matrix d_features_source;
    Matrix d_features_target;
    std::size_t classes_present = 0;
};

/// Mean over classes present in both batches of ||mu_s,k - mu_t,k||^2.
/// Classes missing from either batch are dropped from the mean; with no
/// shared class the loss and gradients are zero.
AlignmentLoss alignment_loss(const PseudoLabeledBatch& source, const PseudoLabeledBatch& target);

struct AdversarialLoss {
    double loss = 0.0;
    std::vector<double> d_source;  // dL/dc per source critic output
    std::vector<double> d_target;  // dL/dc per target critic output (0 if not selected)
    std::size_t selection_count = 0;
};

/// (1/N) sum log c_s + (1/M~) sum_i gamma_i log(1 - c_t,i), gamma_i = [conf_i > p],
/// M~ = number of selected targets. An empty selection contributes 0.
/// The critic maximizes this quantity; the feature extractor minimizes it.
AdversarialLoss domain_adversarial_loss(std::span<const double> source_out,
                                        std::span<const double> target_out,
                                        std::span<const double> target_confidences, double p);

/// Student-side objective: L_y + alpha (L_c + L_a) + lambda L_d.
double total_objective(double l_y, double l_c, double l_a, double l_d, double alpha, double lambda);

struct LossBundle {
    double l_y = 0.0;
    double l_c = 0.0;
    double l_a = 0.0;
    double l_d = 0.0;
    Matrix d_features_source;
    Matrix d_features_target;
    Matrix d_logits_source;
    GradientSet critic_grads;
    std::size_t selection_count = 0;
    std::size_t target_batch_size = 0;
    double alpha = 0.0;
    double lambda = 0.0;
};

}  // namespace catuda
