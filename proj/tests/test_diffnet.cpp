#include "catuda/diffnet.hpp"
#include "catuda/errors.hpp"
#include "catuda/losses.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace catuda;

namespace {

NetworkSpec small_spec(Activation act = Activation::tanh, double dropout = 0.0) {
    NetworkSpec s;
    s.layer_sizes = {3, 5, 4, 3};
    s.activation = act;
    s.dropout_rate = dropout;
    s.feature_tap = FeatureTap::penultimate;
    return s;
}

double ce_loss(const Network& net, const Matrix& x, const std::vector<int>& y, std::uint64_t noise) {
    return cross_entropy(forward(net, x, Mode::train, noise).probabilities, y).loss;
}

bool bit_identical(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

TEST_CASE("layout validation rejects malformed networks") {
    NetworkSpec s;
    s.layer_sizes = {3};
    CHECK_THROWS_AS(s.validate(), ParameterError);
    s.layer_sizes = {3, 1};
    CHECK_THROWS_AS(s.validate(), ParameterError);
    s.layer_sizes = {3, 2};
    s.dropout_rate = 1.0;
    CHECK_THROWS_AS(s.validate(), ParameterError);
    s.dropout_rate = 0.0;
    s.head = Head::sigmoid;
    CHECK_THROWS_AS(s.validate(), ParameterError);
    s.layer_sizes = {3, 4, 1};
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("glorot init keeps weights in range and zero biases") {
    Network net(small_spec(), 7);
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        const auto& layer = net.layers()[l];
        const double s = std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
        CHECK(layer.weight.cwiseAbs().maxCoeff() <= s);
        CHECK(layer.bias.isZero());
    }
}

TEST_CASE("zero network gives uniform probabilities") {
    NetworkSpec s;
    s.layer_sizes = {4, 6, 2};
    Network net(s, 1);
    for (auto& l : net.layers()) {
        l.weight.setZero();
        l.bias.setZero();
    }
    std::mt19937_64 rng(3);
    const auto tr = forward(net, oracle::random_matrix(5, 4, rng), Mode::eval, 0);
    CHECK(tr.probabilities.isApproxToConstant(0.5, 1e-15));
}

TEST_CASE("forward is deterministic and rows sum to one") {
    Network net(small_spec(Activation::relu, 0.3), 11);
    std::mt19937_64 rng(5);
    const Matrix x = oracle::random_matrix(16, 3, rng, 3.0);
    const auto a = forward(net, x, Mode::train, 99);
    const auto b = forward(net, x, Mode::train, 99);
    CHECK(bit_identical(a.probabilities, b.probabilities));
    CHECK(a.dropout_active());
    for (std::size_t i = 0; i < a.masks.size(); ++i) CHECK(bit_identical(a.masks[i], b.masks[i]));
    for (Eigen::Index i = 0; i < a.probabilities.rows(); ++i) {
        CHECK(std::abs(a.probabilities.row(i).sum() - 1.0) <= 1e-9);
    }
}

TEST_CASE("eval mode disables dropout") {
    Network net(small_spec(Activation::relu, 0.5), 2);
    std::mt19937_64 rng(8);
    const Matrix x = oracle::random_matrix(10, 3, rng);
    const auto a = forward(net, x, Mode::eval, 1);
    const auto b = forward(net, x, Mode::eval, 2);
    CHECK_FALSE(a.dropout_active());
    CHECK(bit_identical(a.probabilities, b.probabilities));
}

TEST_CASE("forward rejects bad input") {
    Network net(small_spec(), 2);
    CHECK_THROWS_AS(forward(net, Matrix::Zero(2, 4), Mode::eval, 0), ShapeError);
    Matrix bad = Matrix::Zero(2, 3);
    bad(1, 2) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(forward(net, bad, Mode::eval, 0), DomainError);
}

TEST_CASE("backward of zero upstream is zero; linear in the upstream gradient") {
    Network net(small_spec(Activation::relu, 0.2), 4);
    std::mt19937_64 rng(12);
    const Matrix x = oracle::random_matrix(8, 3, rng);
    const auto tr = forward(net, x, Mode::train, 5);

    const auto zero = backward(net, tr, Matrix::Zero(8, 3), Entry::probabilities);
    for (std::size_t i = 0; i < zero.size(); ++i) CHECK(zero.at(i) == 0.0);

    for (Entry e : {Entry::probabilities, Entry::logits, Entry::features}) {
        const auto cols = e == Entry::features ? 4 : 3;
        const Matrix g1 = oracle::random_matrix(8, cols, rng);
        const Matrix g2 = oracle::random_matrix(8, cols, rng);
        const auto sum = backward(net, tr, g1 + g2, e);
        const auto parts = backward(net, tr, g1, e) + backward(net, tr, g2, e);
        for (std::size_t i = 0; i < sum.size(); ++i) CHECK(std::abs(sum.at(i) - parts.at(i)) <= 1e-10);
    }
    CHECK_THROWS_AS(backward(net, tr, Matrix::Zero(7, 3), Entry::logits), ShapeError);
}

TEST_CASE("cross-entropy gradients match central differences") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        Network net(small_spec(Activation::tanh, 0.25), 100 + trial);
        const Matrix x = oracle::random_matrix(12, 3, rng);
        const auto y = oracle::random_labels(12, 3, rng);
        const auto tr = forward(net, x, Mode::train, 77);
        const auto ce = cross_entropy(tr.probabilities, y);
        const auto grads = backward(net, tr, ce.d_logits, Entry::logits);
        const double err = finite_diff_check(
            net, [&](const Network& n) { return ce_loss(n, x, y, 77); }, grads);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("probability entry matches finite differences for softmax and sigmoid heads") {
    std::mt19937_64 rng(31);
    const Matrix x = oracle::random_matrix(6, 3, rng);
    for (Head head : {Head::softmax, Head::sigmoid}) {
        NetworkSpec s = small_spec();
        s.head = head;
        if (head == Head::sigmoid) s.layer_sizes.back() = 1;
        Network net(s, 9);
        const Matrix w = oracle::random_matrix(6, static_cast<Eigen::Index>(s.output_dim()), rng);
        auto loss = [&](const Network& n) {
            return forward(n, x, Mode::eval, 0).probabilities.cwiseProduct(w).sum();
        };
        const auto grads = backward(net, forward(net, x, Mode::eval, 0), w, Entry::probabilities);
        CHECK(finite_diff_check(net, loss, grads) <= 1e-6);
    }
}

TEST_CASE("input gradient matches finite differences") {
    Network net(small_spec(), 3);
    std::mt19937_64 rng(41);
    Matrix x = oracle::random_matrix(4, 3, rng);
    const Matrix w = oracle::random_matrix(4, 3, rng);
    Upstream up;
    up.d_logits = w;
    const auto bp = backpropagate(net, forward(net, x, Mode::eval, 0), up);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = x.data()[i];
        x.data()[i] = orig + h;
        const double plus = forward(net, x, Mode::eval, 0).logits().cwiseProduct(w).sum();
        x.data()[i] = orig - h;
        const double minus = forward(net, x, Mode::eval, 0).logits().cwiseProduct(w).sum();
        x.data()[i] = orig;
        CHECK(bp.d_input.data()[i] == doctest::Approx((plus - minus) / (2 * h)).epsilon(1e-7));
    }
}

TEST_CASE("finite_diff_check is exact for a linear loss") {
    Network net(small_spec(), 5);
    auto linear = [](const Network& n) {
        double s = 0.0;
        for (std::size_t i = 0; i < n.parameter_count(); ++i) s += n.parameter(i);
        return s;
    };
    GradientSet ones = GradientSet::zeros_like(net.layers());
    for (std::size_t i = 0; i < ones.size(); ++i) ones.at(i) = 1.0;
    CHECK(finite_diff_check(net, linear, ones, {1e-3, 0, 0}) <= 1e-10);
    CHECK_THROWS_AS(finite_diff_check(net, linear, ones, {0.1, 0, 0}), ParameterError);
}

TEST_CASE("gradient reversal") {
    CHECK(reverse_gradient(Matrix::Constant(2, 2, 3.0), 0.0).isZero());
    Matrix g(1, 2);
    g << 2.0, -3.0;
    const Matrix r = reverse_gradient(g, 1.0);
    CHECK(r(0, 0) == -2.0);
    CHECK(r(0, 1) == 3.0);
    std::mt19937_64 rng(1);
    const Matrix big = oracle::random_matrix(5, 4, rng);
    CHECK((reverse_gradient(big, 0.5) + 0.5 * big).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK_THROWS_AS(reverse_gradient(g, -1.0), ParameterError);
}

TEST_CASE("momentum SGD recurrence") {
    Network net(small_spec(), 6);
    const Network start = net;
    GradientSet g = GradientSet::zeros_like(net.layers());

    auto opt = OptimizerState::for_network(net, 0.9);
    sgd_step(net, opt, g, 0.1);
    for (std::size_t i = 0; i < net.parameter_count(); ++i) CHECK(net.parameter(i) == start.parameter(i));

    for (std::size_t i = 0; i < g.size(); ++i) g.at(i) = 0.01 * static_cast<double>(i % 7) - 0.03;
    const double lr = 0.05;

    SUBCASE("zero momentum is plain gradient descent") {
        Network plain = start;
        auto o = OptimizerState::for_network(plain, 0.0);
        sgd_step(plain, o, g, lr);
        for (std::size_t i = 0; i < plain.parameter_count(); ++i) {
            CHECK(plain.parameter(i) - start.parameter(i) == doctest::Approx(-lr * g.at(i)));
        }
    }
    SUBCASE("second step with a constant gradient moves by lr * 1.9 g") {
        Network mom = start;
        auto o = OptimizerState::for_network(mom, 0.9);
        sgd_step(mom, o, g, lr);
        const Network after_one = mom;
        sgd_step(mom, o, g, lr);
        for (std::size_t i = 0; i < mom.parameter_count(); ++i) {
            CHECK(mom.parameter(i) - after_one.parameter(i) ==
                  doctest::Approx(-lr * 1.9 * g.at(i)).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(sgd_step(net, opt, g, 0.0), ParameterError);
}
