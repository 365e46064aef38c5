#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "testutil.hpp"
#include "ugac/tensor.hpp"

using namespace ugac;
using Catch::Approx;

namespace {

Tensor rand_tensor(const Shape& shape, Rng& rng, bool requires_grad = true,
                   double offset = 0.0) {
    Tensor t = Tensor::randn(shape, rng, 1.0, requires_grad);
    if (offset != 0.0)
        for (double& v : t.values()) v += (v >= 0.0 ? offset : -offset);
    return t;
}

} // namespace

TEST_CASE("elementwise values and shapes", "[tensor]") {
    Tensor a = Tensor::from({1.0, -2.0, 3.0, 0.5}, {2, 2});
    Tensor b = Tensor::from({2.0, 2.0, -1.0, 4.0}, {2, 2});

    CHECK(add(a, b)[0] == 3.0);
    CHECK(sub(a, b)[3] == -3.5);
    CHECK(mul(a, b)[1] == -4.0);
    CHECK(div(a, b)[2] == -3.0);
    CHECK(abs(a)[1] == 2.0);

    CHECK(relu(Tensor::scalar(-1.0)).item() == 0.0);
    CHECK(relu(Tensor::scalar(2.0)).item() == 2.0);
    CHECK(leaky_relu(Tensor::scalar(-1.0)).item() == Approx(-0.2));

    CHECK_THROWS_AS(div(a, Tensor::zeros({2, 2})), DomainError);
    CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), DomainError);
    CHECK_THROWS_AS(add(a, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("pow value and both gradients", "[tensor]") {
    Tensor b = Tensor::scalar(4.0, true);
    Tensor e = Tensor::scalar(0.5, true);
    Tensor out = pow(b, e);
    CHECK(out.item() == Approx(2.0));
    backward(out);
    CHECK(b.grad()[0] == Approx(0.25));               // e * b^(e-1)
    CHECK(e.grad()[0] == Approx(2.0 * std::log(4.0))); // b^e ln b

    const double err = testutil::max_fd_rel_error(
        [&] { return sum(pow(b, e)); }, {b, e});
    CHECK(err < 1e-6);
    CHECK_THROWS_AS(pow(Tensor::scalar(-1.0), e), DomainError);
}

TEST_CASE("trailing-dimension broadcast", "[tensor]") {
    Tensor a = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3}, true);
    Tensor row = Tensor::from({10, 20, 30}, {3}, true);
    Tensor out = add(a, row);
    CHECK(out.shape() == Shape{2, 3});
    CHECK(out[0] == 11.0);
    CHECK(out[5] == 36.0);

    backward(sum(out));
    CHECK(a.grad()[0] == 1.0);
    CHECK(row.grad()[0] == 2.0); // reduced over the leading dim

    Tensor s = Tensor::scalar(2.0, true);
    Tensor scaled = mul(a, s);
    CHECK(scaled[4] == 10.0);
}

TEST_CASE("fan-out accumulates gradients", "[tensor]") {
    Tensor x = Tensor::from({3.0}, {1}, true);
    Tensor y = add(x, x);
    backward(sum(y));
    CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("backward basics", "[tensor]") {
    Tensor x = Tensor::from({1.0, 2.0}, {2}, true);
    backward(sum(x));
    CHECK(x.grad() == std::vector<double>{1.0, 1.0});

    x.zero_grad();
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == Approx(2.0));
    CHECK(x.grad()[1] == Approx(4.0));

    CHECK_THROWS_AS(backward(x), DimensionError); // non-scalar loss
}

TEST_CASE("finite flags NaN and Inf", "[tensor]") {
    Tensor x = Tensor::from({1.0, 2.0}, {2});
    CHECK(x.finite());
    x[1] = std::nan("");
    CHECK_FALSE(x.finite());
    x[1] = INFINITY;
    CHECK_FALSE(x.finite());
}

TEST_CASE("conv2d values", "[tensor]") {
    // 3x3 ones * 3x3 ones kernel, no padding -> 9.
    Tensor in = Tensor::ones({1, 1, 3, 3});
    Tensor w = Tensor::ones({1, 1, 3, 3});
    Tensor b = Tensor::zeros({1});
    Tensor out = conv2d(in, w, b, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out.item() == 9.0);

    // Identity 1x1 kernel reproduces the input.
    Rng rng(7);
    Tensor x = Tensor::randn({2, 1, 4, 5}, rng);
    Tensor id = Tensor::ones({1, 1, 1, 1});
    Tensor same = conv2d(x, id, b, 1, 0);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same[i] == x[i]);

    CHECK_THROWS_AS(conv2d(x, Tensor::ones({1, 3, 3, 3}), b, 1, 1), DimensionError);
}

TEST_CASE("conv2d gradient check", "[tensor]") {
    Rng rng(11);
    Tensor in = rand_tensor({2, 3, 8, 8}, rng);
    Tensor w = rand_tensor({4, 3, 3, 3}, rng);
    Tensor b = rand_tensor({4}, rng);
    const double err = testutil::max_fd_rel_error(
        [&] { return mean(mul(conv2d(in, w, b, 1, 1), conv2d(in, w, b, 1, 1))); },
        {in, w, b});
    CHECK(err < 1e-4);

    // Strided + padded variant as used by the discriminator.
    Tensor w2 = rand_tensor({2, 3, 4, 4}, rng);
    Tensor b2 = rand_tensor({2}, rng);
    const double err2 = testutil::max_fd_rel_error(
        [&] { return mean(mul(conv2d(in, w2, b2, 2, 1), conv2d(in, w2, b2, 2, 1))); },
        {in, w2, b2});
    CHECK(err2 < 1e-4);
}

TEST_CASE("maxpool2d forward, ties and gradient", "[tensor]") {
    Tensor x = Tensor::from({1, 2, 3, 4}, {1, 1, 2, 2}, true);
    Tensor out = maxpool2d(x, 2);
    CHECK(out.item() == 4.0);

    // Constant input: first element of each window gets the whole gradient.
    Tensor c = Tensor::full({1, 1, 4, 4}, 5.0, true);
    Tensor pooled = maxpool2d(c, 2);
    for (std::size_t i = 0; i < pooled.numel(); ++i) CHECK(pooled[i] == 5.0);
    backward(mean(pooled));
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x2 = 0; x2 < 4; ++x2) {
            const double expect = (y % 2 == 0 && x2 % 2 == 0) ? 0.25 : 0.0;
            CHECK(c.grad()[y * 4 + x2] == expect);
        }

    Rng rng(3);
    Tensor r = rand_tensor({2, 2, 4, 4}, rng); // random: ties have measure zero
    const double err = testutil::max_fd_rel_error(
        [&] { return mean(mul(maxpool2d(r, 2), maxpool2d(r, 2))); }, {r});
    CHECK(err < 1e-4);

    CHECK_THROWS_AS(maxpool2d(Tensor::ones({1, 1, 3, 4}), 2), DimensionError);
}

TEST_CASE("bilinear 2x upsampling", "[tensor]") {
    // Single pixel -> constant 2x2.
    Tensor one = Tensor::full({1, 1, 1, 1}, 3.25);
    Tensor up = upsample_bilinear2x(one);
    CHECK(up.shape() == Shape{1, 1, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) CHECK(up[i] == 3.25);

    // [[0,1]] with align-corners=false: hand-evaluated kernel.
    Tensor row = Tensor::from({0.0, 1.0}, {1, 1, 1, 2});
    Tensor up2 = upsample_bilinear2x(row);
    CHECK(up2.shape() == Shape{1, 1, 2, 4});
    const double expect[4] = {0.0, 0.25, 0.75, 1.0};
    for (std::size_t x = 0; x < 4; ++x) {
        CHECK(up2[x] == Approx(expect[x]));
        CHECK(up2[4 + x] == Approx(expect[x]));
    }

    Rng rng(5);
    Tensor r = rand_tensor({1, 2, 3, 3}, rng);
    const double err = testutil::max_fd_rel_error(
        [&] { return mean(mul(upsample_bilinear2x(r), upsample_bilinear2x(r))); }, {r});
    CHECK(err < 1e-4);
}

TEST_CASE("instance_norm values and gradient", "[tensor]") {
    // Constant channel -> output equals the bias.
    Tensor c = Tensor::full({1, 2, 2, 2}, 7.0);
    Tensor gain = Tensor::from({3.0, 3.0}, {2});
    Tensor bias = Tensor::from({-1.0, 2.0}, {2});
    Tensor out = instance_norm(c, gain, bias);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == Approx(-1.0));
    for (std::size_t i = 4; i < 8; ++i) CHECK(out[i] == Approx(2.0));

    // Two-pixel channel [0, 2]: closed-form +/- 1/sqrt(1 + eps).
    Tensor two = Tensor::from({0.0, 2.0}, {1, 1, 1, 2});
    Tensor g1 = Tensor::from({1.5}, {1});
    Tensor b1 = Tensor::from({0.25}, {1});
    Tensor out2 = instance_norm(two, g1, b1);
    const double xhat = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(out2[0] == Approx(-xhat * 1.5 + 0.25).epsilon(1e-12));
    CHECK(out2[1] == Approx(xhat * 1.5 + 0.25).epsilon(1e-12));

    Rng rng(9);
    Tensor x = rand_tensor({2, 3, 4, 4}, rng);
    Tensor gg = rand_tensor({3}, rng);
    Tensor bb = rand_tensor({3}, rng);
    const double err = testutil::max_fd_rel_error(
        [&] {
            Tensor o = instance_norm(x, gg, bb);
            return mean(mul(o, o));
        },
        {x, gg, bb});
    CHECK(err < 1e-4);
}

TEST_CASE("dropout semantics", "[tensor]") {
    Rng rng(1);
    Tensor x = Tensor::ones({1000});
    CHECK(dropout(x, 0.0, true, rng).node() == x.node());  // identity
    CHECK(dropout(x, 0.7, false, rng).node() == x.node()); // inactive

    // p = 0.5 on 1e6 ones: mean within 1 percent of 1.
    Tensor big = Tensor::ones({1000000});
    Tensor dropped = dropout(big, 0.5, true, rng);
    double acc = 0.0;
    for (double v : dropped.values()) acc += v;
    CHECK(acc / 1e6 == Approx(1.0).margin(0.01));

    // Deterministic under the seed.
    Rng r1(42), r2(42);
    Tensor d1 = dropout(x, 0.3, true, r1);
    Tensor d2 = dropout(x, 0.3, true, r2);
    CHECK(d1.values() == d2.values());

    // Gradient flows through the mask.
    Tensor y = Tensor::ones({100}, true);
    Rng r3(7);
    Tensor dy = dropout(y, 0.5, true, r3);
    backward(sum(dy));
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.grad()[i] == dy[i]);
}

TEST_CASE("concat on the channel axis", "[tensor]") {
    Rng rng(2);
    Tensor a = rand_tensor({2, 1, 3, 3}, rng);
    Tensor b = rand_tensor({2, 2, 3, 3}, rng);
    Tensor out = concat({a, b}, 1);
    CHECK(out.shape() == Shape{2, 3, 3, 3});
    CHECK(out[0] == a[0]);
    CHECK(out.at({0, 1, 0, 0}) == b.at({0, 0, 0, 0}));
    CHECK(out.at({1, 0, 2, 2}) == a.at({1, 0, 2, 2}));

    const double err = testutil::max_fd_rel_error(
        [&] {
            Tensor c = concat({a, b}, 1);
            return mean(mul(c, c));
        },
        {a, b});
    CHECK(err < 1e-4);
}

TEST_CASE("remaining primitive gradient sweep", "[tensor]") {
    Rng rng(13);
    // Offset inputs away from the |.| kink and log/div poles.
    Tensor x = rand_tensor({3, 4}, rng, true, 0.2);
    Tensor y = rand_tensor({3, 4}, rng, true, 0.2);
    Tensor pos = abs(x).detach();
    pos = Tensor::from(pos.values(), pos.shape(), true);

    auto check = [&](const char* name, std::function<Tensor()> f,
                     std::vector<Tensor> leaves) {
        INFO(name);
        CHECK(testutil::max_fd_rel_error(f, leaves) < 1e-4);
    };
    check("add", [&] { return mean(mul(add(x, y), add(x, y))); }, {x, y});
    check("sub", [&] { return mean(mul(sub(x, y), sub(x, y))); }, {x, y});
    check("mul", [&] { return mean(mul(x, y)); }, {x, y});
    check("div", [&] { return mean(div(x, y)); }, {x, y});
    check("abs", [&] { return mean(abs(x)); }, {x});
    check("exp", [&] { return mean(exp(x)); }, {x});
    check("log", [&] { return mean(log(pos)); }, {pos});
    check("relu", [&] { return mean(relu(x)); }, {x});
    check("leaky", [&] { return mean(leaky_relu(x)); }, {x});
    check("clamp", [&] { return mean(clamp(x, -0.8, 0.8)); }, {x});
    check("sum", [&] { return sum(mul(x, x)); }, {x});
}

TEST_CASE("clamp values and saturation", "[tensor]") {
    Tensor x = Tensor::from({-2.0, 0.5, 3.0}, {3}, true);
    Tensor c = clamp(x, 0.0, 1.0);
    CHECK(c[0] == 0.0);
    CHECK(c[1] == 0.5);
    CHECK(c[2] == 1.0);
    backward(sum(c));
    CHECK(x.grad() == std::vector<double>{0.0, 1.0, 0.0});
}
