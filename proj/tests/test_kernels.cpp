#include "doctest.h"

#include <cmath>

#include "demenscan/kernels.hpp"

#include "test_util.hpp"

using namespace demenscan;
using testutil::central_difference;
using testutil::grad_error;
using testutil::naive_conv2d;
using testutil::random_tensor;
using testutil::to_double;

namespace {

// Scalar projection loss sum(out ⊙ u) used by every layer gradient check.
double projection_loss(const TensorT<double>& out, const TensorT<double>& u) {
    double acc = 0.0;
    for (size_t i = 0; i < out.size(); ++i) acc += out[i] * u[i];
    return acc;
}

} // namespace

TEST_SUITE("kernels") {

TEST_CASE("conv2d zeros input yields bias planes") {
    SeededRng rng(1);
    const Tensor x = Tensor::zeros({3, 6, 6});
    const Tensor w = random_tensor(rng, {2, 3, 3, 3});
    const Tensor b({2}, {0.25f, -1.5f});
    const Tensor y = conv2d_forward(x, w, b);
    CHECK(y.shape() == std::vector<size_t>{2, 6, 6});
    for (size_t i = 0; i < 36; ++i) {
        CHECK(y[i] == 0.25f);
        CHECK(y[36 + i] == -1.5f);
    }
}

TEST_CASE("conv2d 1x1 identity kernel") {
    SeededRng rng(2);
    const Tensor x = random_tensor(rng, {1, 5, 7});
    const Tensor w({1, 1, 1, 1}, {1.0f});
    const Tensor b({1}, {0.0f});
    const Tensor y = conv2d_forward(x, w, b);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d equals naive direct loop") {
    SeededRng rng(3);
    // The spec's instance: 3×5×5 input, 2 filters of 3×3×3.
    {
        const Tensor x = random_tensor(rng, {3, 5, 5});
        const Tensor w = random_tensor(rng, {2, 3, 3, 3});
        const Tensor b = random_tensor(rng, {2});
        const Tensor got = conv2d_forward(x, w, b);
        const Tensor want = naive_conv2d(x, w, b);
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(std::fabs(got[i] - want[i]) < 1e-6f);
        }
    }
    for (int iter = 0; iter < 30; ++iter) {
        const size_t c = 1 + rng.below(4), f = 1 + rng.below(5);
        const size_t h = 3 + rng.below(8), w_ext = 3 + rng.below(8);
        const size_t k = rng.below(2) == 0 ? 1 : 3;
        const Tensor x = random_tensor(rng, {c, h, w_ext});
        const Tensor w = random_tensor(rng, {f, c, k, k});
        const Tensor b = random_tensor(rng, {f});
        const Tensor got = conv2d_forward(x, w, b);
        const Tensor want = naive_conv2d(x, w, b);
        REQUIRE(got.shape() == want.shape());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(std::fabs(got[i] - want[i]) < 1e-6f);
        }
    }
}

TEST_CASE("conv2d channel mismatch is a shape error") {
    const Tensor x({2, 4, 4});
    const Tensor w({1, 3, 3, 3});
    const Tensor b({1});
    CHECK_THROWS_AS(conv2d_forward(x, w, b), ShapeError);
}

TEST_CASE("conv2d backward zeros upstream") {
    SeededRng rng(4);
    const Tensor x = random_tensor(rng, {2, 4, 4});
    const Tensor w = random_tensor(rng, {3, 2, 3, 3});
    const auto g = conv2d_backward(x, w, Tensor::zeros({3, 4, 4}));
    for (size_t i = 0; i < g.x.size(); ++i) CHECK(g.x[i] == 0.0f);
    for (size_t i = 0; i < g.w.size(); ++i) CHECK(g.w[i] == 0.0f);
    for (size_t i = 0; i < g.b.size(); ++i) CHECK(g.b[i] == 0.0f);
}

TEST_CASE("conv2d backward 1x1 single pixel chain rule") {
    const Tensor x({1, 1, 1}, {3.0f});
    const Tensor w({1, 1, 1, 1}, {-2.0f});
    const Tensor up({1, 1, 1}, {5.0f});
    const auto g = conv2d_backward(x, w, up);
    CHECK(g.w[0] == 15.0f); // upstream * x
    CHECK(g.x[0] == -10.0f); // upstream * w
    CHECK(g.b[0] == 5.0f);
}

TEST_CASE("conv2d backward matches finite differences") {
    SeededRng rng(5);
    for (int iter = 0; iter < 5; ++iter) {
        const Tensor x = random_tensor(rng, {2, 4, 4});
        const Tensor w = random_tensor(rng, {3, 2, 3, 3});
        const Tensor b = random_tensor(rng, {3});
        const Tensor u = random_tensor(rng, {3, 4, 4});

        const auto analytic = conv2d_backward(x, w, u);
        const auto xd = to_double(x);
        const auto wd = to_double(w);
        const auto bd = to_double(b);
        const auto ud = to_double(u);

        auto check_element = [&](const Tensor& agrads, TensorT<double> base, size_t idx,
                                 auto&& loss_of) {
            const double fd = central_difference(
                [&](double v) {
                    TensorT<double> mod = base;
                    mod[idx] = v;
                    return loss_of(mod);
                },
                base[idx]);
            CHECK(grad_error(agrads[idx], fd) < 1e-4);
        };

        for (size_t i = 0; i < x.size(); i += 7) {
            check_element(analytic.x, xd, i, [&](const TensorT<double>& m) {
                return projection_loss(conv2d_forward(m, wd, bd), ud);
            });
        }
        for (size_t i = 0; i < w.size(); i += 5) {
            check_element(analytic.w, wd, i, [&](const TensorT<double>& m) {
                return projection_loss(conv2d_forward(xd, m, bd), ud);
            });
        }
        for (size_t i = 0; i < b.size(); ++i) {
            check_element(analytic.b, bd, i, [&](const TensorT<double>& m) {
                return projection_loss(conv2d_forward(xd, wd, m), ud);
            });
        }
    }
}

TEST_CASE("maxpool constant input takes first window slot") {
    const Tensor x = Tensor::full({1, 4, 4}, 2.5f);
    const auto r = maxpool2x2_forward(x);
    CHECK(r.y.shape() == std::vector<size_t>{1, 2, 2});
    for (size_t i = 0; i < r.y.size(); ++i) CHECK(r.y[i] == 2.5f);
    CHECK(r.argmax[0] == 0);  // (0,0)
    CHECK(r.argmax[1] == 2);  // (0,2)
    CHECK(r.argmax[2] == 8);  // (2,0)
    CHECK(r.argmax[3] == 10); // (2,2)
}

TEST_CASE("maxpool single window and routing") {
    const Tensor x({1, 2, 2}, {1, 2, 3, 4});
    const auto r = maxpool2x2_forward(x);
    CHECK(r.y.size() == 1);
    CHECK(r.y[0] == 4.0f);
    CHECK(r.argmax[0] == 3);
    const Tensor up({1, 1, 1}, {1.0f});
    const Tensor gx = maxpool2x2_backward(r.argmax, up, x.shape());
    CHECK(gx[0] == 0.0f);
    CHECK(gx[1] == 0.0f);
    CHECK(gx[2] == 0.0f);
    CHECK(gx[3] == 1.0f);
}

TEST_CASE("maxpool rejects odd extents") {
    CHECK_THROWS_AS(maxpool2x2_forward(Tensor({1, 3, 4})), ShapeError);
    CHECK_THROWS_AS(maxpool2x2_forward(Tensor({1, 4, 5})), ShapeError);
}

TEST_CASE("maxpool gradient matches finite differences on tie-free input") {
    SeededRng rng(6);
    auto tie_free = [&rng]() {
        for (;;) {
            Tensor x = random_tensor(rng, {1, 8, 8});
            bool ok = true;
            for (size_t i = 0; i < 4 && ok; ++i) {
                for (size_t j = 0; j < 4 && ok; ++j) {
                    float vals[4] = {x[2 * i * 8 + 2 * j], x[2 * i * 8 + 2 * j + 1],
                                     x[(2 * i + 1) * 8 + 2 * j], x[(2 * i + 1) * 8 + 2 * j + 1]};
                    std::sort(vals, vals + 4);
                    if (vals[3] - vals[2] < 5e-3f) ok = false;
                }
            }
            if (ok) return x;
        }
    };
    for (int iter = 0; iter < 5; ++iter) {
        const Tensor x = tie_free();
        const Tensor u = random_tensor(rng, {1, 4, 4});
        const auto fwd = maxpool2x2_forward(x);
        const Tensor gx = maxpool2x2_backward(fwd.argmax, u, x.shape());
        const auto xd = to_double(x);
        const auto ud = to_double(u);
        for (size_t i = 0; i < x.size(); i += 3) {
            const double fd = central_difference(
                [&](double v) {
                    TensorT<double> mod = xd;
                    mod[i] = v;
                    return projection_loss(maxpool2x2_forward(mod).y, ud);
                },
                xd[i]);
            CHECK(grad_error(gx[i], fd) < 1e-4);
        }
    }
}

TEST_CASE("dense identity and zero input") {
    Tensor w({3, 3});
    for (size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0f;
    const Tensor b = Tensor::zeros({3});
    const Tensor x({3}, {0.5f, -1.0f, 2.0f});
    const Tensor y = dense_forward(x, w, b);
    for (size_t i = 0; i < 3; ++i) CHECK(y[i] == x[i]);

    SeededRng rng(7);
    const Tensor w2 = random_tensor(rng, {4, 3});
    const Tensor b2 = random_tensor(rng, {4});
    const Tensor y2 = dense_forward(Tensor::zeros({3}), w2, b2);
    for (size_t i = 0; i < 4; ++i) CHECK(y2[i] == b2[i]);
}

TEST_CASE("dense gradient matches finite differences") {
    SeededRng rng(8);
    const Tensor x = random_tensor(rng, {16});
    const Tensor w = random_tensor(rng, {8, 16});
    const Tensor b = random_tensor(rng, {8});
    const Tensor u = random_tensor(rng, {8});
    const auto g = dense_backward(x, w, u);
    const auto xd = to_double(x), wd = to_double(w), bd = to_double(b), ud = to_double(u);

    for (size_t i = 0; i < x.size(); ++i) {
        const double fd = central_difference(
            [&](double v) {
                auto mod = xd;
                mod[i] = v;
                return projection_loss(dense_forward(mod, wd, bd), ud);
            },
            xd[i]);
        CHECK(grad_error(g.x[i], fd) < 1e-4);
    }
    for (size_t i = 0; i < w.size(); i += 3) {
        const double fd = central_difference(
            [&](double v) {
                auto mod = wd;
                mod[i] = v;
                return projection_loss(dense_forward(xd, mod, bd), ud);
            },
            wd[i]);
        CHECK(grad_error(g.w[i], fd) < 1e-4);
    }
    for (size_t i = 0; i < b.size(); ++i) {
        const double fd = central_difference(
            [&](double v) {
                auto mod = bd;
                mod[i] = v;
                return projection_loss(dense_forward(xd, wd, mod), ud);
            },
            bd[i]);
        CHECK(grad_error(g.b[i], fd) < 1e-4);
    }
}

TEST_CASE("dropout eval and zero rate are identity") {
    SeededRng rng(9);
    const Tensor x = random_tensor(rng, {64});
    const auto ev = dropout(x, 0.5, RunMode::Eval, nullptr);
    CHECK(ev.y.values() == x.values());
    for (size_t i = 0; i < ev.mask.size(); ++i) CHECK(ev.mask[i] == 1.0f);

    const auto z = dropout(x, 0.0, RunMode::Train, &rng);
    CHECK(z.y.values() == x.values());

    CHECK_THROWS_AS(dropout(x, 1.0, RunMode::Train, &rng), ParameterError);
    CHECK_THROWS_AS(dropout(x, -0.1, RunMode::Train, &rng), ParameterError);
}

TEST_CASE("dropout keeps mean and kept fraction near targets") {
    SeededRng rng(10);
    const Tensor ones = Tensor::full({100'000}, 1.0f);
    const auto r = dropout(ones, 0.5, RunMode::Train, &rng);
    double mean = 0.0;
    size_t kept = 0;
    for (size_t i = 0; i < r.y.size(); ++i) {
        mean += r.y[i];
        if (r.mask[i] != 0.0f) {
            kept++;
            CHECK(r.mask[i] == 2.0f);
        }
    }
    mean /= static_cast<double>(r.y.size());
    CHECK(std::fabs(mean - 1.0) < 0.01);
    CHECK(std::fabs(static_cast<double>(kept) / 100'000.0 - 0.5) < 0.005);
}

TEST_CASE("softmax cross entropy symmetric logits") {
    const Tensor logits = Tensor::zeros({4});
    const auto r = softmax_cross_entropy(logits, 0);
    CHECK(r.loss == doctest::Approx(1.3862943611).epsilon(1e-9));
    CHECK(r.grad_logits[0] == doctest::Approx(-0.75));
    CHECK(r.grad_logits[1] == doctest::Approx(0.25));
    CHECK(r.grad_logits[2] == doctest::Approx(0.25));
    CHECK(r.grad_logits[3] == doctest::Approx(0.25));
}

TEST_CASE("softmax cross entropy extreme logits do not overflow") {
    const Tensor logits({4}, {1000.0f, 0.0f, 0.0f, 0.0f});
    const auto r = softmax_cross_entropy(logits, 0);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-12));
    for (size_t i = 0; i < 4; ++i) CHECK(std::isfinite(r.grad_logits[i]));
}

TEST_CASE("softmax cross entropy label range") {
    CHECK_THROWS_AS(softmax_cross_entropy(Tensor({4}), 4), ParameterError);
    CHECK_THROWS_AS(softmax_cross_entropy(Tensor({4}), -1), ParameterError);
}

TEST_CASE("softmax sums to one and loss is shift invariant") {
    SeededRng rng(11);
    for (int iter = 0; iter < 20; ++iter) {
        const Tensor logits = random_tensor(rng, {4}, -5.0, 5.0);
        const Tensor p = softmax(logits);
        double s = 0.0;
        for (size_t i = 0; i < 4; ++i) s += p[i];
        CHECK(std::fabs(s - 1.0) < 1e-6);

        const int label = static_cast<int>(rng.below(4));
        const auto base = softmax_cross_entropy(logits, label);
        Tensor shifted = logits;
        const float c = static_cast<float>(rng.uniform(-3.0, 3.0));
        for (size_t i = 0; i < 4; ++i) shifted[i] += c;
        const auto moved = softmax_cross_entropy(shifted, label);
        CHECK(std::fabs(base.loss - moved.loss) < 1e-6);
        for (size_t i = 0; i < 4; ++i) {
            CHECK(std::fabs(base.grad_logits[i] - moved.grad_logits[i]) < 1e-6f);
        }
    }
}

TEST_CASE("softmax cross entropy gradient matches finite differences") {
    SeededRng rng(12);
    const Tensor logits = random_tensor(rng, {4}, -2.0, 2.0);
    const auto r = softmax_cross_entropy(logits, 2);
    const auto ld = to_double(logits);
    for (size_t i = 0; i < 4; ++i) {
        const double fd = central_difference(
            [&](double v) {
                auto mod = ld;
                mod[i] = v;
                return softmax_cross_entropy(mod, 2).loss;
            },
            ld[i], 1e-5);
        CHECK(grad_error(r.grad_logits[i], fd) < 1e-4);
    }
}

} // TEST_SUITE
