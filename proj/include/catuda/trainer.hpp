#pragma once

// CAT training loop.
//
// Each step runs the student on a source and a target batch, asks the teacher
// for target pseudo labels, and composes
//
//   student:  dL_y + alpha (dL_c + dL_a) + lambda dL_d     (L_d through gradient reversal)
//   critic:   -dL_d                                        (critic maximizes L_d)
//
// Both parameter sets move with momentum SGD under the annealed learning
// rate. Before `pretrain_iters`, alpha = lambda = 0 so only L_y reaches the
// student, while the critic keeps training.

#include "catuda/datasets.hpp"
#include "catuda/diffnet.hpp"
#include "catuda/eval.hpp"
#include "catuda/losses.hpp"
#include "catuda/teacher.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace catuda {

enum class RampSchedule { logistic, exp_ramp, constant };
enum class LambdaSchedule { same_as_alpha, constant };
enum class TeacherKind { pi, temporal, self };

/// 2 / (1 + exp(-10 t)) - 1.
double alpha_logistic(double t);

/// 0 before `start`, then exp(-10 (1 - min((ite - start) / length, 1))).
double alpha_exp_ramp(std::size_t ite, std::size_t start, std::size_t length);

/// base / (1 + 10 p)^0.75.
double lr_schedule(double progress, double base);

struct StudentArch {
    std::vector<std::size_t> hidden{32, 32};
    Activation activation = Activation::tanh;
    double dropout = 0.0;
    std::optional<FeatureTap> feature_tap;  // default: logits when K == 2, else penultimate
};

struct TrainConfig {
    std::size_t total_iters = 5000;
    std::size_t pretrain_iters = 500;
    std::size_t batch_source = 64;
    std::size_t batch_target = 64;
    double m = 3.0;
    Metric metric = Metric::sq_euclidean;
    double p = 0.9;
    RampSchedule alpha_schedule = RampSchedule::logistic;
    double alpha_max = 1.0;
    std::size_t ramp_length = 0;  // exp_ramp only; 0 means total_iters - pretrain_iters
    LambdaSchedule lambda_schedule = LambdaSchedule::same_as_alpha;
    double lambda_max = 1.0;
    double lr_base = 0.01;
    double momentum = 0.9;
    TeacherKind teacher_mode = TeacherKind::temporal;
    double decay = 0.6;
    std::uint64_t seed = 0;
    std::size_t critic_hidden = 16;
    bool use_clustering = true;
    bool use_alignment = true;
    StudentArch student;

    /// Throws ParameterError naming the offending field.
    void validate() const;
};

/// Trade-off weights in effect at an iteration.
struct Weights {
    double alpha = 0.0;
    double lambda = 0.0;
    double lr = 0.0;
};

Weights schedule_at(const TrainConfig& cfg, std::size_t iteration);

NetworkSpec student_spec(const TrainConfig& cfg, const DomainDataset& ds);
NetworkSpec critic_spec(const TrainConfig& cfg, std::size_t feature_dim);

struct TrainState {
    Network student;
    Network critic;
    OptimizerState student_opt;
    OptimizerState critic_opt;
    std::optional<TemporalEnsemble> ensemble;  // temporal teacher only
    std::size_t iteration = 0;
};

TrainState make_train_state(const TrainConfig& cfg, const DomainDataset& ds);

enum class NoiseStream : std::uint64_t {
    student_init = 1,
    critic_init = 2,
    source_pass = 3,
    target_pass = 4,
    teacher_pass = 5,
    batches = 6,
    eval = 7,
};

std::uint64_t noise_seed(const TrainConfig& cfg, std::size_t iteration, NoiseStream stream);

/// Everything a step needs besides the networks. `target_labels` empty means
/// the student labels its own target batch (the no-teacher ablation).
struct StepInputs {
    std::optional<PseudoLabels> target_labels;
    double alpha = 0.0;
    double lambda = 0.0;
    std::uint64_t source_noise = 0;
    std::uint64_t target_noise = 0;
};

struct StepResult {
    LossBundle bundle;
    GradientSet student_grads;
    Matrix target_probabilities;  // student train-mode probabilities on the target batch
    double objective = 0.0;       // L_y + alpha (L_c + L_a) + lambda L_d
};

/// Losses and composed gradients for fixed networks and pseudo labels.
/// Pure: no parameter or teacher state changes.
StepResult compute_step(const Network& student, const Network& critic, const BatchPair& batch,
                        const TrainConfig& cfg, const StepInputs& inputs);

/// One full training step; mutates `state`. Throws TrainingAbort on
/// non-finite losses or parameters.
LossBundle train_step(TrainState& state, const BatchPair& batch, const TrainConfig& cfg);

/// Pseudo labels for the whole target set as the teacher currently sees it.
PseudoLabels teacher_view(const TrainState& state, const TrainConfig& cfg, const DomainDataset& ds);

/// Accuracy, clustering, divergence and selection monitors (loss fields left 0).
RunMetrics evaluate(const TrainState& state, const TrainConfig& cfg, const DomainDataset& ds);

struct TrainResult {
    TrainState state;
    std::vector<RunMetrics> metrics;
};

/// Runs total_iters steps, evaluating at iteration 0 and every eval_every steps.
/// Loss fields of each record average the steps since the previous record
/// (iteration 0 reports a dry step on the first batch).
TrainResult train(const TrainConfig& cfg, const DomainDataset& ds, std::size_t eval_every);

}  // namespace catuda
