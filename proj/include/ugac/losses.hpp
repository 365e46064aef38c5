#pragma once

#include <string>

#include "ugac/errors.hpp"
#include "ugac/ggd.hpp"
#include "ugac/tensor.hpp"

namespace ugac::losses {

/// Weights of the combined generator objective: lambda1 scales the cycle
/// term, lambda2 the adversarial term. Defaults (10, 2).
struct LossWeights {
    double lambda1 = 10.0;
    double lambda2 = 2.0;
};

/// Keeps log(|r| + eps) differentiable at r = 0. Small enough that the
/// (alpha, beta) = (1, 1) loss still matches plain L1 to well under 1e-9.
constexpr double kResidualEps = 1e-10;

/// Elementwise ln Gamma, differentiable via digamma.
inline Tensor lgamma(const Tensor& x) {
    for (double v : x.values())
        if (!(v > 0.0)) throw DomainError("lgamma: input must be positive");
    return detail::unary_elementwise(
        x, "lgamma", [](double v) { return ggd::log_gamma(v); },
        [](double v, double) { return ggd::digamma(v); });
}

/// Mean over all pixels of the GGD NLL kernel
///   (|recon-target|/alpha)^beta - log(beta/alpha) + log Gamma(1/beta)
/// with the power computed as exp(beta * (log(|r|+eps) - log alpha)).
/// The pdf's ln 2 constant is omitted; it carries no gradient.
inline Tensor loss_alpha_beta(const Tensor& recon, const Tensor& alpha_map,
                              const Tensor& beta_map, const Tensor& target) {
    if (recon.shape() != target.shape() || recon.shape() != alpha_map.shape() ||
        recon.shape() != beta_map.shape())
        throw DimensionError("loss_alpha_beta: all four tensors must share a shape (got " +
                             shape_str(recon.shape()) + " vs " + shape_str(target.shape()) +
                             ")");
    Tensor r = abs(recon - target);
    Tensor power = exp(mul(beta_map, log(r + kResidualEps) - log(alpha_map)));
    Tensor per_pixel = power + log(alpha_map) - log(beta_map) + lgamma(1.0 / beta_map);
    return mean(per_pixel);
}

/// One domain's tuple for the cycle loss: reconstruction, its predicted
/// (alpha, beta) maps, and the original input.
struct CycleTerms {
    Tensor recon;
    Tensor alpha;
    Tensor beta;
    Tensor target;
};

/// Uncertainty-aware cycle loss: the alpha-beta objective summed over both
/// domains.
inline Tensor loss_ucyc(const CycleTerms& a, const CycleTerms& b) {
    return loss_alpha_beta(a.recon, a.alpha, a.beta, a.target) +
           loss_alpha_beta(b.recon, b.alpha, b.beta, b.target);
}

/// Plain L1 cycle baseline: mean |a_rec - a| + mean |b_rec - b|.
inline Tensor loss_cyc_l1(const Tensor& a_rec, const Tensor& b_rec, const Tensor& a,
                          const Tensor& b) {
    if (a_rec.shape() != a.shape() || b_rec.shape() != b.shape())
        throw DimensionError("loss_cyc_l1: reconstruction/input shape mismatch");
    return mean(abs(a_rec - a)) + mean(abs(b_rec - b));
}

/// Mean squared deviation of a patch score map from a constant target.
inline Tensor mse_to(const Tensor& scores, double target) {
    Tensor d = scores - target;
    return mean(mul(d, d));
}

/// Least-squares GAN loss for the generators: both fake score maps pushed
/// towards 1.
inline Tensor adv_generator_loss(const Tensor& d_a_fake, const Tensor& d_b_fake) {
    return mse_to(d_a_fake, 1.0) + mse_to(d_b_fake, 1.0);
}

/// Least-squares GAN loss for the discriminators: real maps to 1, fake maps
/// (from the replay buffer) to 0.
inline Tensor adv_discriminator_loss(const Tensor& d_a_real, const Tensor& d_a_fake,
                                     const Tensor& d_b_real, const Tensor& d_b_fake) {
    return mse_to(d_a_real, 1.0) + mse_to(d_a_fake, 0.0) + mse_to(d_b_real, 1.0) +
           mse_to(d_b_fake, 0.0);
}

/// Combined generator objective lambda1 * L_ucyc + lambda2 * L_adv.
inline Tensor total_generator_loss(const Tensor& ucyc, const Tensor& adv_g,
                                   const LossWeights& w) {
    if (!(w.lambda1 > 0.0 && w.lambda2 > 0.0))
        throw DomainError("total_generator_loss: loss weights must be positive");
    return w.lambda1 * ucyc + w.lambda2 * adv_g;
}

} // namespace ugac::losses
