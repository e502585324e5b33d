#include "catuda/diffnet.hpp"

#include "catuda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace catuda {

namespace {

Matrix activate(const Matrix& z, Activation act) {
    switch (act) {
        case Activation::relu:
            return z.cwiseMax(0.0);
        case Activation::tanh:
            return z.array().tanh().matrix();
    }
    return z;
}

Matrix activation_derivative(const Matrix& z, Activation act) {
    switch (act) {
        case Activation::relu:
            return (z.array() > 0.0).cast<double>().matrix();
        case Activation::tanh: {
            Eigen::ArrayXXd t = z.array().tanh();
            return (1.0 - t * t).matrix();
        }
    }
    return Matrix::Ones(z.rows(), z.cols());
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index k = 0; k < logits.cols(); ++k) {
            out(i, k) = std::exp(logits(i, k) - mx);
            sum += out(i, k);
        }
        out.row(i) /= sum;
    }
    return out;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::size_t layers_size(const std::vector<Layer>& layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

template <typename Layers>
auto& flat_ref(Layers& layers, std::size_t index) {
    for (auto& l : layers) {
        const auto w = static_cast<std::size_t>(l.weight.size());
        if (index < w) return l.weight.data()[index];
        index -= w;
        const auto b = static_cast<std::size_t>(l.bias.size());
        if (index < b) return l.bias.data()[index];
        index -= b;
    }
    throw std::out_of_range("flat parameter index out of range");
}

void require_congruent(const std::vector<Layer>& a, const std::vector<Layer>& b,
                       std::string_view what) {
    if (a.size() != b.size()) throw ShapeError(std::string(what) + ": layer count mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].weight.rows() != b[i].weight.rows() || a[i].weight.cols() != b[i].weight.cols() ||
            a[i].bias.size() != b[i].bias.size()) {
            throw ShapeError(std::string(what) + ": layer " + std::to_string(i) +
                             " shape mismatch");
        }
    }
}

}  // namespace

void NetworkSpec::validate() const {
    if (layer_sizes.size() < 2) throw ParameterError("network needs at least two layer sizes");
    for (auto s : layer_sizes) {
        if (s == 0) throw ParameterError("layer sizes must be positive");
    }
    if (head == Head::softmax && output_dim() < 2) {
        throw ParameterError("softmax head needs at least 2 outputs");
    }
    if (head == Head::sigmoid && output_dim() != 1) {
        throw ParameterError("sigmoid head needs exactly 1 output");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ParameterError("dropout_rate must be in [0, 1)");
    }
    if (feature_tap == FeatureTap::penultimate && layer_sizes.size() < 3) {
        throw ParameterError("penultimate feature tap needs a hidden layer");
    }
}

std::size_t NetworkSpec::feature_dim() const {
    return feature_tap == FeatureTap::logits ? output_dim() : layer_sizes[layer_sizes.size() - 2];
}

GradientSet GradientSet::zeros_like(const std::vector<Layer>& shape) {
    GradientSet g;
    g.layers.reserve(shape.size());
    for (const auto& l : shape) {
        g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()),
                            Vector::Zero(l.bias.size())});
    }
    return g;
}

std::size_t GradientSet::size() const { return layers_size(layers); }
double& GradientSet::at(std::size_t i) { return flat_ref(layers, i); }
double GradientSet::at(std::size_t i) const { return flat_ref(layers, i); }

bool GradientSet::all_finite() const {
    return std::all_of(layers.begin(), layers.end(), [](const Layer& l) {
        return l.weight.allFinite() && l.bias.allFinite();
    });
}

GradientSet& GradientSet::operator+=(const GradientSet& other) {
    require_congruent(layers, other.layers, "gradient sum");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].weight += other.layers[i].weight;
        layers[i].bias += other.layers[i].bias;
    }
    return *this;
}

GradientSet& GradientSet::operator*=(double s) {
    for (auto& l : layers) {
        l.weight *= s;
        l.bias *= s;
    }
    return *this;
}

GradientSet operator+(GradientSet a, const GradientSet& b) {
    a += b;
    return a;
}

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
        const auto fan_in = spec_.layer_sizes[l];
        const auto fan_out = spec_.layer_sizes[l + 1];
        const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> u(-s, s);
        Layer layer{Matrix(fan_in, fan_out), Vector::Zero(static_cast<Eigen::Index>(fan_out))};
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = u(rng);
        layers_.push_back(std::move(layer));
    }
}

std::size_t Network::parameter_count() const { return layers_size(layers_); }
double& Network::parameter(std::size_t i) { return flat_ref(layers_, i); }
double Network::parameter(std::size_t i) const { return flat_ref(layers_, i); }

bool Network::all_finite() const {
    return std::all_of(layers_.begin(), layers_.end(), [](const Layer& l) {
        return l.weight.allFinite() && l.bias.allFinite();
    });
}

ForwardTrace forward(const Network& net, const Matrix& x, Mode mode, std::uint64_t noise_seed) {
    const auto& spec = net.spec();
    if (static_cast<std::size_t>(x.cols()) != spec.input_dim()) {
        throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, network expects " +
                         std::to_string(spec.input_dim()));
    }
    if (!x.allFinite()) throw DomainError("forward: non-finite input");

    const bool drop = mode == Mode::train && spec.dropout_rate > 0.0;
    std::mt19937_64 rng(noise_seed);
    std::bernoulli_distribution keep(1.0 - spec.dropout_rate);
    const double scale = drop ? 1.0 / (1.0 - spec.dropout_rate) : 1.0;

    ForwardTrace trace;
    trace.input = x;
    const std::size_t n_layers = spec.layer_count();
    const Matrix* a = &trace.input;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& layer = net.layers()[l];
        Matrix z = (*a) * layer.weight;
        z.rowwise() += layer.bias.transpose();
        if (l + 1 < n_layers) {
            Matrix h = activate(z, spec.activation);
            if (drop) {
                Matrix mask(h.rows(), h.cols());
                for (Eigen::Index i = 0; i < mask.size(); ++i) {
                    mask.data()[i] = keep(rng) ? scale : 0.0;
                }
                h = h.cwiseProduct(mask);
                trace.masks.push_back(std::move(mask));
            }
            trace.pre_activations.push_back(std::move(z));
            trace.activations.push_back(std::move(h));
        } else {
            trace.activations.push_back(z);
            trace.pre_activations.push_back(std::move(z));
        }
        a = &trace.activations.back();
    }

    const Matrix& logits = trace.activations.back();
    if (spec.head == Head::softmax) {
        trace.probabilities = softmax_rows(logits);
    } else {
        trace.probabilities = logits.unaryExpr([](double v) { return sigmoid(v); });
    }
    trace.features = spec.feature_tap == FeatureTap::logits
                         ? logits
                         : trace.activations[trace.activations.size() - 2];
    return trace;
}

Backprop backpropagate(const Network& net, const ForwardTrace& trace, const Upstream& upstream) {
    const auto& spec = net.spec();
    const auto n = trace.input.rows();
    const auto out = static_cast<Eigen::Index>(spec.output_dim());
    const auto feat = static_cast<Eigen::Index>(spec.feature_dim());
    const std::size_t n_layers = spec.layer_count();

    Matrix delta = Matrix::Zero(n, out);
    if (upstream.d_probabilities.size() > 0) {
        require_shape(upstream.d_probabilities, n, out, "backward d_probabilities");
        const Matrix& p = trace.probabilities;
        const Matrix& g = upstream.d_probabilities;
        if (spec.head == Head::softmax) {
            const Vector dot = p.cwiseProduct(g).rowwise().sum();
            delta += p.cwiseProduct(g - dot.replicate(1, out));
        } else {
            delta += g.cwiseProduct(p.cwiseProduct((1.0 - p.array()).matrix()));
        }
    }
    if (upstream.d_logits.size() > 0) {
        require_shape(upstream.d_logits, n, out, "backward d_logits");
        delta += upstream.d_logits;
    }
    const bool has_features = upstream.d_features.size() > 0;
    if (has_features) {
        require_shape(upstream.d_features, n, feat, "backward d_features");
        if (spec.feature_tap == FeatureTap::logits) delta += upstream.d_features;
    }

    Backprop result;
    result.params = GradientSet::zeros_like(net.layers());
    for (std::size_t l = n_layers; l-- > 0;) {
        const Matrix& a_in = l == 0 ? trace.input : trace.activations[l - 1];
        auto& g = result.params.layers[l];
        g.weight.noalias() = a_in.transpose() * delta;
        g.bias = delta.colwise().sum().transpose();

        Matrix da = delta * net.layers()[l].weight.transpose();
        if (l == 0) {
            result.d_input = std::move(da);
            break;
        }
        if (has_features && spec.feature_tap == FeatureTap::penultimate && l == n_layers - 1) {
            da += upstream.d_features;
        }
        if (trace.dropout_active()) da = da.cwiseProduct(trace.masks[l - 1]);
        delta = da.cwiseProduct(activation_derivative(trace.pre_activations[l - 1], spec.activation));
    }
    return result;
}

GradientSet backward(const Network& net, const ForwardTrace& trace, const Matrix& upstream,
                     Entry entry) {
    Upstream up;
    switch (entry) {
        case Entry::probabilities:
            up.d_probabilities = upstream;
            break;
        case Entry::logits:
            up.d_logits = upstream;
            break;
        case Entry::features:
            up.d_features = upstream;
            break;
    }
    return backpropagate(net, trace, up).params;
}

Matrix reverse_gradient(const Matrix& g, double lambda) {
    if (!(lambda >= 0.0)) throw ParameterError("reverse_gradient: lambda must be >= 0");
    return -lambda * g;
}

OptimizerState OptimizerState::for_network(const Network& net, double momentum, double base_lr) {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must be in [0, 1)");
    return OptimizerState{GradientSet::zeros_like(net.layers()), momentum, base_lr};
}

void sgd_step(Network& net, OptimizerState& state, const GradientSet& grads, double lr) {
    if (!(lr > 0.0)) throw ParameterError("sgd_step: lr must be > 0");
    require_congruent(net.layers(), grads.layers, "sgd_step grads");
    require_congruent(net.layers(), state.buffers.layers, "sgd_step buffers");
    for (std::size_t l = 0; l < grads.layers.size(); ++l) {
        auto& buf = state.buffers.layers[l];
        auto& p = net.layers()[l];
        buf.weight = state.momentum * buf.weight + grads.layers[l].weight;
        buf.bias = state.momentum * buf.bias + grads.layers[l].bias;
        p.weight -= lr * buf.weight;
        p.bias -= lr * buf.bias;
    }
}

double finite_diff_check(const Network& net, const std::function<double(const Network&)>& loss,
                         const GradientSet& grads, const FiniteDiffOptions& options) {
    if (!(options.h > 0.0 && options.h <= 1e-3)) throw ParameterError("finite_diff_check: h must be in (0, 1e-3]");
    const std::size_t total = net.parameter_count();
    if (grads.size() != total) throw ShapeError("finite_diff_check: gradient size mismatch");

    std::vector<std::size_t> coords(total);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coordinates > 0 && options.max_coordinates < total) {
        std::mt19937_64 rng(options.seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(options.max_coordinates);
    }

    Network probe = net;
    double worst = 0.0;
    for (auto c : coords) {
        const double orig = probe.parameter(c);
        probe.parameter(c) = orig + options.h;
        const double up = loss(probe);
        probe.parameter(c) = orig - options.h;
        const double down = loss(probe);
        probe.parameter(c) = orig;
        const double numeric = (up - down) / (2.0 * options.h);
        const double analytic = grads.at(c);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    return worst;
}

}  // namespace catuda
