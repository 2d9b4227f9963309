#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "metaweight/nn.hpp"
#include "metaweight/rng.hpp"

using namespace metaweight;

namespace {

// Central finite difference of f along coordinate i of x.
double fd_partial(const std::function<double(const std::vector<double>&)>& f,
                  std::vector<double> x, std::size_t i, double h = 1e-5) {
    x[i] += h;
    const double hi = f(x);
    x[i] -= 2.0 * h;
    const double lo = f(x);
    return (hi - lo) / (2.0 * h);
}

void expect_close(double got, double want, double rel = 1e-6, double abs_floor = 1e-8) {
    const double tol = std::max(abs_floor, rel * std::max(std::abs(got), std::abs(want)));
    EXPECT_NEAR(got, want, tol);
}

// A fixed layer with weights away from relu kinks for FD probing.
DenseLayer fixed_layer(Activation act) {
    DenseLayer layer(3, 2, act);
    const double w[] = {0.4, -0.7, 0.9, 0.3, -0.5, 0.8};
    std::copy(std::begin(w), std::end(w), layer.weights.data().begin());
    layer.bias = {0.21, -0.13, 0.42};
    return layer;
}

}  // namespace

TEST(Activations, PointValues) {
    EXPECT_DOUBLE_EQ(apply_activation(Activation::identity, -2.5), -2.5);
    EXPECT_DOUBLE_EQ(apply_activation(Activation::relu, -2.5), 0.0);
    EXPECT_DOUBLE_EQ(apply_activation(Activation::relu, 2.5), 2.5);
    EXPECT_DOUBLE_EQ(apply_activation(Activation::sigmoid, 0.0), 0.5);
    EXPECT_NEAR(apply_activation(Activation::sigmoid, 3.0), 1.0 / (1.0 + std::exp(-3.0)),
                1e-15);
    // derivative conventions: relu uses subgradient 0 at the kink
    EXPECT_DOUBLE_EQ(activation_derivative(Activation::relu, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(activation_derivative(Activation::relu, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(activation_derivative(Activation::identity, 9.0), 1.0);
    const double s = apply_activation(Activation::sigmoid, 0.7);
    EXPECT_NEAR(activation_derivative(Activation::sigmoid, 0.7), s * (1.0 - s), 1e-15);
}

TEST(Activations, StringRoundTrip) {
    for (Activation a : {Activation::identity, Activation::relu, Activation::sigmoid,
                         Activation::tanh})
        EXPECT_EQ(activation_from_string(to_string(a)), a);
    EXPECT_THROW(activation_from_string("swish"), ConfigError);
}

TEST(AffineBackward, MatchesFiniteDifferences) {
    for (Activation act : {Activation::identity, Activation::relu, Activation::sigmoid}) {
        const DenseLayer layer = fixed_layer(act);
        const std::vector<double> x = {0.6, -0.9};
        const std::vector<double> upstream = {1.0, -2.0, 0.5};

        auto scalar_out = [&](const DenseLayer& l, const std::vector<double>& in) {
            const std::vector<double> out = affine_forward(l, in);
            double acc = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) acc += upstream[i] * out[i];
            return acc;
        };

        const AffineGradients g = affine_backward(layer, x, upstream);

        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 2; ++c) {
                auto f = [&](const std::vector<double>& v) {
                    DenseLayer l = layer;
                    l.weights(r, c) = v[0];
                    return scalar_out(l, x);
                };
                expect_close(g.weights(r, c), fd_partial(f, {layer.weights(r, c)}, 0));
            }
        for (std::size_t r = 0; r < 3; ++r) {
            auto f = [&](const std::vector<double>& v) {
                DenseLayer l = layer;
                l.bias[r] = v[0];
                return scalar_out(l, x);
            };
            expect_close(g.bias[r], fd_partial(f, {layer.bias[r]}, 0));
        }
        for (std::size_t c = 0; c < 2; ++c) {
            auto f = [&](const std::vector<double>& v) { return scalar_out(layer, v); };
            expect_close(g.input[c], fd_partial(f, x, c));
        }
    }
}

TEST(AffineBackward, UpstreamLengthChecked) {
    const DenseLayer layer = fixed_layer(Activation::identity);
    const std::vector<double> x = {1.0, 2.0};
    const std::vector<double> bad = {1.0, 2.0};
    EXPECT_THROW(affine_backward(layer, x, bad), ShapeError);
}

TEST(AccumulateLayerGrad, AgreesWithAffineBackward) {
    const DenseLayer layer = fixed_layer(Activation::sigmoid);
    const std::vector<double> x = {0.3, 0.8};
    const std::vector<double> u = affine_preactivation(layer, x);
    const std::vector<double> upstream = {0.2, -1.1, 0.7};

    std::vector<double> flat(layer.param_count() + 4, 0.5);  // offset slack, nonzero base
    std::vector<double> input_grad;
    const std::size_t end =
        accumulate_layer_grad(layer, x, u, upstream, flat, 2, &input_grad);
    EXPECT_EQ(end, 2 + layer.param_count());

    const AffineGradients g = affine_backward(layer, x, upstream);
    std::size_t k = 2;
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 2; ++c)
            EXPECT_DOUBLE_EQ(flat[k++], 0.5 + g.weights(r, c));  // accumulates, not assigns
    for (std::size_t r = 0; r < 3; ++r) EXPECT_DOUBLE_EQ(flat[k++], 0.5 + g.bias[r]);
    ASSERT_EQ(input_grad.size(), 2u);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(input_grad[c], g.input[c]);
    EXPECT_DOUBLE_EQ(flat[0], 0.5);  // untouched below offset
    EXPECT_DOUBLE_EQ(flat[1], 0.5);
}

TEST(LayerFlatten, RoundTripCanonicalOrder) {
    const DenseLayer layer = fixed_layer(Activation::relu);
    std::vector<double> flat;
    flatten_layer(layer, flat);
    ASSERT_EQ(flat.size(), 9u);
    EXPECT_DOUBLE_EQ(flat[0], layer.weights(0, 0));
    EXPECT_DOUBLE_EQ(flat[1], layer.weights(0, 1));
    EXPECT_DOUBLE_EQ(flat[5], layer.weights(2, 1));
    EXPECT_DOUBLE_EQ(flat[6], layer.bias[0]);
    EXPECT_DOUBLE_EQ(flat[8], layer.bias[2]);

    DenseLayer blank(3, 2, Activation::relu);
    EXPECT_EQ(unflatten_layer(blank, flat, 0), 9u);
    EXPECT_EQ(blank.weights, layer.weights);
    EXPECT_EQ(blank.bias, layer.bias);
}

TEST(MlpBackward, MatchesFiniteDifferences) {
    RngState rng(42);
    Mlp mlp = make_mlp({2, 4, 3}, Activation::relu, Activation::identity, rng);
    const std::vector<double> x = {0.37, -0.81};
    const std::vector<double> upstream = {0.9, -0.4, 1.3};

    auto scalar_out = [&](const std::vector<double>& params,
                          const std::vector<double>& in) {
        Mlp m = mlp;
        m.unflatten(params, 0);
        const std::vector<double> out = m.forward(in);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += upstream[i] * out[i];
        return acc;
    };

    std::vector<double> theta;
    mlp.flatten(theta);
    ASSERT_EQ(theta.size(), mlp.param_count());

    Mlp::Trace trace;
    mlp.forward(x, trace);
    std::vector<double> grad(theta.size(), 0.0);
    const std::vector<double> input_grad = mlp.backward(trace, upstream, grad);

    auto f_params = [&](const std::vector<double>& p) { return scalar_out(p, x); };
    for (std::size_t i = 0; i < theta.size(); ++i)
        expect_close(grad[i], fd_partial(f_params, theta, i));

    auto f_input = [&](const std::vector<double>& in) { return scalar_out(theta, in); };
    ASSERT_EQ(input_grad.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i)
        expect_close(input_grad[i], fd_partial(f_input, x, i));
}

TEST(MlpForward, TraceMatchesPlainForward) {
    RngState rng(7);
    const Mlp mlp = make_mlp({3, 5, 2}, Activation::sigmoid, Activation::identity, rng);
    const std::vector<double> x = {0.1, -0.2, 0.3};
    Mlp::Trace trace;
    EXPECT_EQ(mlp.forward(x, trace), mlp.forward(x));
    ASSERT_EQ(trace.inputs.size(), 2u);
    EXPECT_EQ(trace.inputs[0], x);
    ASSERT_EQ(trace.preacts.size(), 2u);
    EXPECT_EQ(trace.preacts[1].size(), 2u);
}

TEST(MakeDense, GlorotBoundsAndZeroBias) {
    RngState rng(11);
    const DenseLayer layer = make_dense_layer(8, 5, Activation::relu, rng);
    const double bound = std::sqrt(6.0 / 13.0);
    for (double w : layer.weights.data()) {
        EXPECT_LE(std::abs(w), bound);
    }
    for (double b : layer.bias) EXPECT_EQ(b, 0.0);
    // spread check: draws should not collapse to a narrow band
    double lo = 1e9, hi = -1e9;
    for (double w : layer.weights.data()) {
        lo = std::min(lo, w);
        hi = std::max(hi, w);
    }
    EXPECT_GT(hi - lo, bound);
}

TEST(MakeMlp, DeterministicGivenSeed) {
    RngState a(3), b(3);
    Mlp m1 = make_mlp({2, 3, 2}, Activation::relu, Activation::identity, a);
    Mlp m2 = make_mlp({2, 3, 2}, Activation::relu, Activation::identity, b);
    std::vector<double> f1, f2;
    m1.flatten(f1);
    m2.flatten(f2);
    EXPECT_EQ(f1, f2);
    EXPECT_THROW(make_mlp({4}, Activation::relu, Activation::identity, a), ShapeError);
}

TEST(Softmax, SumsToOneEvenForExtremeLogits) {
    const std::vector<std::vector<double>> cases = {
        {0.0, 0.0, 0.0},
        {1000.0, 999.0, 998.0},
        {-1000.0, -1001.0, -1002.0},
        {700.0, -700.0},
        {3.2},
    };
    for (const auto& z : cases) {
        const std::vector<double> p = softmax(z);
        double sum = 0.0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            EXPECT_TRUE(std::isfinite(v));
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(LogSumExp, StableAndExactOnHandCase) {
    EXPECT_NEAR(log_sum_exp(std::vector<double>{0.0, 0.0}), std::log(2.0), 1e-15);
    // would overflow without the max shift
    const double v = log_sum_exp(std::vector<double>{1000.0, 1000.0});
    EXPECT_NEAR(v, 1000.0 + std::log(2.0), 1e-12);
    EXPECT_DOUBLE_EQ(log_sum_exp(std::vector<double>{-5.0}), -5.0);
}

TEST(CrossEntropy, NonNegativeAndStable) {
    const std::vector<double> z = {2.0, -1.0, 0.5};
    for (std::size_t y = 0; y < 3; ++y) EXPECT_GE(cross_entropy_with_logits(z, y), 0.0);
    // loss of the max-logit class at huge margins stays near 0, not NaN
    EXPECT_NEAR(cross_entropy_with_logits(std::vector<double>{1000.0, 0.0}, 0), 0.0, 1e-12);
    EXPECT_THROW(cross_entropy_with_logits(z, 3), IndexError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
    const std::vector<double> z = {0.8, -0.3, 1.7, 0.1};
    for (std::size_t y = 0; y < z.size(); ++y) {
        const std::vector<double> g = cross_entropy_gradient(z, y);
        auto f = [&](const std::vector<double>& v) {
            return cross_entropy_with_logits(v, y);
        };
        double sum = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            expect_close(g[i], fd_partial(f, z, i));
            sum += g[i];
        }
        EXPECT_NEAR(sum, 0.0, 1e-12);  // softmax - onehot sums to zero
    }
    EXPECT_THROW(cross_entropy_gradient(z, 4), IndexError);
}

TEST(SampleNormal, DimCheckedAndDeterministic) {
    RngState a(1), b(1);
    EXPECT_EQ(sample_standard_normal(a, 6), sample_standard_normal(b, 6));
    EXPECT_THROW(sample_standard_normal(a, 0), ContractError);
}
