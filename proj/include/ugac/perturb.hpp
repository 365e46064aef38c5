#pragma once

#include <array>
#include <string>

#include "ugac/errors.hpp"
#include "ugac/rng.hpp"
#include "ugac/tensor.hpp"

namespace ugac::perturb {

enum class Family { kGaussian, kUniform, kImpulse };

inline const char* family_name(Family f) {
    switch (f) {
        case Family::kGaussian: return "gaussian";
        case Family::kUniform: return "uniform";
        case Family::kImpulse: return "impulse";
    }
    return "?";
}

inline Family family_from_name(const std::string& s) {
    if (s == "gaussian") return Family::kGaussian;
    if (s == "uniform") return Family::kUniform;
    if (s == "impulse") return Family::kImpulse;
    throw DataError("unknown perturbation family: " + s);
}

/// One perturbation setting: family, severity level NL0..NL3, and the
/// family parameter at that level (sigma, kappa, or p).
struct PerturbSpec {
    Family family = Family::kGaussian;
    int level = 0;
    double parameter = 0.0;
};

/// The NL0..NL3 parameter tables: Gaussian sigma, Uniform kappa, Impulse p.
inline std::array<PerturbSpec, 4> level_schedule(Family f) {
    std::array<PerturbSpec, 4> out;
    static constexpr double gaussian[4] = {0.0, 0.10, 0.20, 0.30};
    static constexpr double uniform[4] = {0.0, 0.20, 0.40, 0.60};
    static constexpr double impulse[4] = {0.0, 0.15, 0.30, 0.45};
    for (int i = 0; i < 4; ++i) {
        out[static_cast<std::size_t>(i)].family = f;
        out[static_cast<std::size_t>(i)].level = i;
        const double* table = f == Family::kGaussian ? gaussian
                              : f == Family::kUniform ? uniform
                                                      : impulse;
        out[static_cast<std::size_t>(i)].parameter = table[i];
    }
    return out;
}

/// Adds i.i.d. N(0, sigma^2) per pixel. Output is not re-clipped to [0,1].
inline Tensor perturb_gaussian(const Tensor& x, double sigma, Rng& rng) {
    if (!(sigma >= 0.0)) throw DomainError("perturb_gaussian: sigma must be >= 0");
    if (sigma == 0.0) return x.detach();
    std::vector<double> out(x.values());
    for (double& v : out) v += rng.normal(0.0, sigma);
    return Tensor::from(std::move(out), x.shape());
}

/// Adds i.i.d. Uniform[0, kappa) per pixel (mean-shifting, as defined).
inline Tensor perturb_uniform(const Tensor& x, double kappa, Rng& rng) {
    if (!(kappa >= 0.0)) throw DomainError("perturb_uniform: kappa must be >= 0");
    if (kappa == 0.0) return x.detach();
    std::vector<double> out(x.values());
    for (double& v : out) v += rng.uniform(0.0, kappa);
    return Tensor::from(std::move(out), x.shape());
}

/// With probability p, replaces a pixel (all channels at once) by a random
/// color with channels ~ U[0,1). x must be [C,H,W].
inline Tensor perturb_impulse(const Tensor& x, double p, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("perturb_impulse: p must be in [0, 1)");
    if (x.ndim() != 3) throw DimensionError("perturb_impulse: expected [C,H,W]");
    if (p == 0.0) return x.detach();
    const std::size_t C = x.shape()[0], HW = x.shape()[1] * x.shape()[2];
    std::vector<double> out(x.values());
    for (std::size_t i = 0; i < HW; ++i) {
        if (!rng.bernoulli(p)) continue;
        for (std::size_t c = 0; c < C; ++c) out[c * HW + i] = rng.uniform();
    }
    return Tensor::from(std::move(out), x.shape());
}

/// Applies a perturbation spec to a [C,H,W] image.
inline Tensor apply(const Tensor& x, const PerturbSpec& spec, Rng& rng) {
    switch (spec.family) {
        case Family::kGaussian: return perturb_gaussian(x, spec.parameter, rng);
        case Family::kUniform: return perturb_uniform(x, spec.parameter, rng);
        case Family::kImpulse: return perturb_impulse(x, spec.parameter, rng);
    }
    throw InternalError("perturb::apply: bad family");
}

} // namespace ugac::perturb
