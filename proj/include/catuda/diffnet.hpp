#pragma once

// Small feedforward networks with exact reverse-mode gradients.
//
// A network is a stack of affine layers. Hidden layers apply an activation
// followed by (inverted) dropout; the final affine layer produces logits,
// which pass through a softmax head (K >= 2 classes) or a sigmoid head
// (single output, used by the domain critic).

#include "catuda/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace catuda {

enum class Activation { relu, tanh };
enum class FeatureTap { penultimate, logits };
enum class Head { softmax, sigmoid };
enum class Mode { train, eval };

struct NetworkSpec {
    std::vector<std::size_t> layer_sizes;  // input -> hidden... -> output
    Activation activation = Activation::relu;
    double dropout_rate = 0.0;
    FeatureTap feature_tap = FeatureTap::logits;
    Head head = Head::softmax;

    /// Throws ParameterError if the layer layout is unusable.
    void validate() const;

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t layer_count() const { return layer_sizes.size() - 1; }
    /// Width of f(x) as selected by feature_tap.
    std::size_t feature_dim() const;
};

/// One affine map: out = in * weight + bias. weight is fan_in x fan_out.
struct Layer {
    Matrix weight;
    Vector bias;
};

/// Per-parameter gradients (or momentum buffers), congruent with a Network.
struct GradientSet {
    std::vector<Layer> layers;

    static GradientSet zeros_like(const std::vector<Layer>& shape);

    std::size_t size() const;
    double& at(std::size_t flat_index);
    double at(std::size_t flat_index) const;
    bool all_finite() const;

    GradientSet& operator+=(const GradientSet& other);
    GradientSet& operator*=(double s);
};

GradientSet operator+(GradientSet a, const GradientSet& b);

class Network {
  public:
    /// Glorot-uniform weights, zero biases, drawn from `seed`.
    Network(NetworkSpec spec, std::uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }

    std::size_t parameter_count() const;
    double& parameter(std::size_t flat_index);
    double parameter(std::size_t flat_index) const;
    bool all_finite() const;

  private:
    NetworkSpec spec_;
    std::uint64_t seed_;
    std::vector<Layer> layers_;
};

struct ForwardTrace {
    Matrix input;
    std::vector<Matrix> pre_activations;  // z for every layer
    std::vector<Matrix> activations;      // post activation+dropout; last entry is logits
    std::vector<Matrix> masks;            // per hidden layer; empty unless dropout was active
    Matrix features;
    Matrix probabilities;

    const Matrix& logits() const { return activations.back(); }
    bool dropout_active() const { return !masks.empty(); }
};

/// Deterministic in (net, x, mode, noise_seed). Eval mode never drops units.
ForwardTrace forward(const Network& net, const Matrix& x, Mode mode, std::uint64_t noise_seed);

enum class Entry { probabilities, logits, features };

/// Upstream gradients entering the network at several points at once.
/// Empty (0x0) matrices are absent contributions.
struct Upstream {
    Matrix d_probabilities;
    Matrix d_logits;
    Matrix d_features;
};

struct Backprop {
    GradientSet params;
    Matrix d_input;
};

Backprop backpropagate(const Network& net, const ForwardTrace& trace, const Upstream& upstream);

GradientSet backward(const Network& net, const ForwardTrace& trace, const Matrix& upstream,
                     Entry entry);

/// Gradient reversal: identity forward, -lambda * g backward.
Matrix reverse_gradient(const Matrix& g, double lambda);

struct OptimizerState {
    GradientSet buffers;
    double momentum = 0.9;
    double base_lr = 0.01;

    static OptimizerState for_network(const Network& net, double momentum = 0.9,
                                      double base_lr = 0.01);
};

/// Classical momentum: buf <- momentum*buf + g; theta <- theta - lr*buf.
void sgd_step(Network& net, OptimizerState& state, const GradientSet& grads, double lr);

struct FiniteDiffOptions {
    double h = 1e-5;
    std::size_t max_coordinates = 0;  // 0 checks every coordinate
    std::uint64_t seed = 0;           // picks the coordinate subset
};

/// Worst relative error between `grads` and central differences of `loss`.
/// Denominator is max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const Network& net, const std::function<double(const Network&)>& loss,
                         const GradientSet& grads, const FiniteDiffOptions& options = {});

}  // namespace catuda
