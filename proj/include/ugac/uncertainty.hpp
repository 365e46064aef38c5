#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "ugac/errors.hpp"
#include "ugac/ggd.hpp"
#include "ugac/tensor.hpp"

namespace ugac::uncertainty {

/// Per-pixel variance maps; total = aleatoric + epistemic elementwise.
struct UncertaintyMaps {
    Tensor aleatoric;
    Tensor epistemic;
    Tensor total;
};

/// Elementwise closed-form GGD variance alpha^2 Gamma(3/beta) / Gamma(1/beta).
inline Tensor aleatoric_map(const Tensor& alpha_map, const Tensor& beta_map) {
    if (alpha_map.shape() != beta_map.shape())
        throw DimensionError("aleatoric_map: alpha/beta shape mismatch");
    std::vector<double> out(alpha_map.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = ggd::aleatoric_variance(alpha_map[i], beta_map[i]);
    return Tensor::from(std::move(out), alpha_map.shape());
}

/// One dropout-active forward pass returning the mean-head output.
using StochasticPass = std::function<Tensor()>;

/// Population variance (divide by T) across T dropout-active passes,
/// accumulated streaming so the passes are never all held in memory. The
/// sums are pivoted on the first pass, which keeps identical passes at an
/// exact zero instead of cancellation noise.
inline Tensor epistemic_map(const StochasticPass& pass, int T) {
    if (T < 2) throw DomainError("epistemic_map: need T >= 2 passes");
    Tensor first = pass();
    std::vector<double> sum_d(first.numel(), 0.0);
    std::vector<double> sum_d2(first.numel(), 0.0);
    for (int t = 1; t < T; ++t) {
        Tensor u = pass();
        if (u.shape() != first.shape())
            throw DimensionError("epistemic_map: pass output shape changed");
        for (std::size_t i = 0; i < sum_d.size(); ++i) {
            const double d = u[i] - first[i];
            sum_d[i] += d;
            sum_d2[i] += d * d;
        }
    }
    const double inv_t = 1.0 / static_cast<double>(T);
    std::vector<double> var(sum_d.size());
    for (std::size_t i = 0; i < var.size(); ++i) {
        const double m = sum_d[i] * inv_t;
        var[i] = std::max(0.0, sum_d2[i] * inv_t - m * m);
    }
    return Tensor::from(std::move(var), first.shape());
}

inline UncertaintyMaps total_uncertainty(const Tensor& aleatoric, const Tensor& epistemic) {
    if (aleatoric.shape() != epistemic.shape())
        throw DimensionError("total_uncertainty: shape mismatch");
    std::vector<double> tot(aleatoric.numel());
    for (std::size_t i = 0; i < tot.size(); ++i) tot[i] = aleatoric[i] + epistemic[i];
    return {aleatoric, epistemic, Tensor::from(std::move(tot), aleatoric.shape())};
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3)
        throw DomainError("pearson: need at least 3 paired samples");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DomainError("pearson: undefined for a constant sequence");
    return sxy / std::sqrt(sxx * syy);
}

/// Fractional ranks with average ties.
inline std::vector<double> ranks(const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(ranks(x), ranks(y));
}

/// Per-image summary of the residual/uncertainty relationship. The
/// uncertainty score is the standard deviation sqrt(total), matching
/// residual units.
struct CorrelationStats {
    std::vector<double> mean_residual; // mean |prediction - ground truth| per image
    std::vector<double> mean_sigma;    // mean sqrt(total variance) per image
    double pearson_r = 0.0;
    double spearman_rho = 0.0;
};

inline CorrelationStats uncertainty_residual_stats(const std::vector<Tensor>& predictions,
                                                   const std::vector<Tensor>& ground_truth,
                                                   const std::vector<Tensor>& totals) {
    if (predictions.size() != ground_truth.size() || predictions.size() != totals.size())
        throw DimensionError("uncertainty_residual_stats: list length mismatch");
    if (predictions.size() < 3)
        throw DomainError("uncertainty_residual_stats: need at least 3 images");
    CorrelationStats st;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const Tensor& p = predictions[i];
        const Tensor& g = ground_truth[i];
        const Tensor& t = totals[i];
        if (p.shape() != g.shape() || p.shape() != t.shape())
            throw DimensionError("uncertainty_residual_stats: shape mismatch at image " +
                                 std::to_string(i));
        double res = 0.0, sig = 0.0;
        for (std::size_t k = 0; k < p.numel(); ++k) {
            res += std::fabs(p[k] - g[k]);
            sig += std::sqrt(std::max(0.0, t[k]));
        }
        st.mean_residual.push_back(res / static_cast<double>(p.numel()));
        st.mean_sigma.push_back(sig / static_cast<double>(p.numel()));
    }
    st.pearson_r = pearson(st.mean_sigma, st.mean_residual);
    st.spearman_rho = spearman(st.mean_sigma, st.mean_residual);
    return st;
}

} // namespace ugac::uncertainty
