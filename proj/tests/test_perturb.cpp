#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ugac/perturb.hpp"

using namespace ugac;
using Catch::Approx;

TEST_CASE("level schedules carry the fixed parameter tables", "[perturb]") {
    auto g = perturb::level_schedule(perturb::Family::kGaussian);
    CHECK(g[0].parameter == 0.0);
    CHECK(g[1].parameter == 0.10);
    CHECK(g[2].parameter == 0.20);
    CHECK(g[3].parameter == 0.30);

    auto u = perturb::level_schedule(perturb::Family::kUniform);
    CHECK(u[1].parameter == 0.20);
    CHECK(u[3].parameter == 0.60);

    auto imp = perturb::level_schedule(perturb::Family::kImpulse);
    CHECK(imp[1].parameter == 0.15);
    CHECK(imp[2].parameter == 0.30);
    CHECK(imp[3].parameter == 0.45);

    // NL0 of every family is the identity, bit for bit.
    Rng rng(1);
    Tensor x = Tensor::randn({3, 8, 8}, rng);
    for (auto family :
         {perturb::Family::kGaussian, perturb::Family::kUniform, perturb::Family::kImpulse}) {
        auto schedule = perturb::level_schedule(family);
        Tensor y = perturb::apply(x, schedule[0], rng);
        CHECK(y.values() == x.values());
    }
}

TEST_CASE("gaussian noise moments", "[perturb]") {
    Rng rng(2);
    Tensor x = Tensor::zeros({1, 1000, 1000});
    const double sigma = 0.2;
    Tensor y = perturb::perturb_gaussian(x, sigma, rng);
    double acc = 0.0, acc2 = 0.0;
    for (double v : y.values()) {
        acc += v;
        acc2 += v * v;
    }
    const double n = 1e6;
    const double mean = acc / n;
    const double std_dev = std::sqrt(acc2 / n - mean * mean);
    CHECK(std_dev == Approx(sigma).epsilon(0.01));
    CHECK(std::fabs(mean) < 3.0 * sigma / std::sqrt(n));

    // Values are not clipped back into [0,1].
    Tensor ones = Tensor::ones({1, 100, 100});
    Tensor z = perturb::perturb_gaussian(ones, 0.5, rng);
    bool above = false;
    for (double v : z.values()) above |= v > 1.0;
    CHECK(above);
}

TEST_CASE("uniform noise moments and support", "[perturb]") {
    Rng rng(3);
    Tensor x = Tensor::zeros({1, 1000, 1000});
    const double kappa = 0.4;
    Tensor y = perturb::perturb_uniform(x, kappa, rng);
    double acc = 0.0, top = -1.0, bottom = 2.0;
    for (double v : y.values()) {
        acc += v;
        top = std::max(top, v);
        bottom = std::min(bottom, v);
    }
    CHECK(acc / 1e6 == Approx(kappa / 2.0).epsilon(0.01));
    CHECK(top <= kappa);
    CHECK(bottom >= 0.0);
}

TEST_CASE("impulse replacement", "[perturb]") {
    Rng rng(4);
    const std::size_t H = 640, W = 1563; // ~1e6 pixels
    Tensor x = Tensor::full({3, H, W}, 2.0); // outside U[0,1): replacements always differ
    const double p = 0.3;
    Tensor y = perturb::perturb_impulse(x, p, rng);

    std::size_t replaced = 0, partial = 0, out_of_range = 0;
    const std::size_t hw = H * W;
    for (std::size_t i = 0; i < hw; ++i) {
        int changed = 0;
        for (std::size_t c = 0; c < 3; ++c)
            if (y[c * hw + i] != 2.0) ++changed;
        if (changed != 0 && changed != 3) ++partial; // mask must span channels
        if (changed == 3) {
            ++replaced;
            for (std::size_t c = 0; c < 3; ++c)
                if (y[c * hw + i] < 0.0 || y[c * hw + i] >= 1.0) ++out_of_range;
        }
    }
    CHECK(partial == 0);
    CHECK(out_of_range == 0);
    CHECK(static_cast<double>(replaced) / static_cast<double>(hw) ==
          Approx(p).epsilon(0.01));

    // p close to 1 replaces nearly everything.
    Rng rng2(5);
    Tensor small = Tensor::full({1, 100, 100}, 2.0);
    Tensor z = perturb::perturb_impulse(small, 0.999, rng2);
    std::size_t kept = 0;
    for (double v : z.values()) kept += v == 2.0;
    CHECK(kept < 50);

    CHECK_THROWS_AS(perturb::perturb_impulse(small, 1.0, rng2), DomainError);
    CHECK_THROWS_AS(perturb::perturb_impulse(small, -0.1, rng2), DomainError);
}

TEST_CASE("perturbations are deterministic and independent per stream", "[perturb]") {
    Tensor x = Tensor::zeros({1, 32, 32});
    for (auto family :
         {perturb::Family::kGaussian, perturb::Family::kUniform, perturb::Family::kImpulse}) {
        auto spec = perturb::level_schedule(family)[2];
        Rng r1(77), r2(77), r3(78);
        Tensor a = perturb::apply(x, spec, r1);
        Tensor b = perturb::apply(x, spec, r2);
        Tensor c = perturb::apply(x, spec, r3);
        CHECK(a.values() == b.values());
        CHECK_FALSE(a.values() == c.values());
    }
}
