#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ugac/tensor.hpp"

namespace testutil {

/// Central finite differences against the analytic gradients of `make_loss`
/// w.r.t. every element of `leaves`. Returns the worst scaled error
/// |analytic - numeric| / max(|analytic|, |numeric|, scale_floor).
inline double max_fd_rel_error(const std::function<ugac::Tensor()>& make_loss,
                               std::vector<ugac::Tensor> leaves, double step = 1e-5,
                               double scale_floor = 1e-3) {
    for (auto& leaf : leaves) leaf.zero_grad();
    ugac::Tensor loss = make_loss();
    ugac::backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        ugac::Tensor& leaf = leaves[li];
        for (std::size_t i = 0; i < leaf.numel(); ++i) {
            const double v0 = leaf[i];
            leaf[i] = v0 + step;
            const double fp = make_loss().item();
            leaf[i] = v0 - step;
            const double fm = make_loss().item();
            leaf[i] = v0;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[li][i];
            const double scale = std::max({std::fabs(a), std::fabs(numeric), scale_floor});
            worst = std::max(worst, std::fabs(a - numeric) / scale);
        }
    }
    return worst;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() /
             ("ugac_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// ---------------------------------------------------------------------------
// Independent numerical oracles shared by the unit and acceptance suites.
// ---------------------------------------------------------------------------

/// High-precision ln Gamma reference: argument shift by recurrence, then the
/// Stirling series with ten Bernoulli terms in long double.
inline long double log_gamma_reference(long double x) {
    long double shift = 0.0L;
    while (x < 30.0L) {
        shift -= std::log(x);
        x += 1.0L;
    }
    static const long double bern[10] = {1.0L / 6,       -1.0L / 30,      1.0L / 42,
                                         -1.0L / 30,     5.0L / 66,       -691.0L / 2730,
                                         7.0L / 6,       -3617.0L / 510,  43867.0L / 798,
                                         -174611.0L / 330};
    long double s =
        (x - 0.5L) * std::log(x) - x + 0.5L * std::log(2.0L * 3.14159265358979323846L);
    long double zp = x;
    for (int n = 1; n <= 10; ++n) {
        s += bern[n - 1] / (2.0L * n * (2.0L * n - 1.0L) * zp);
        zp *= x * x;
    }
    return s + shift;
}

namespace detail {
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double fa, double fb, double fm, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::fabs(left + right - whole) < 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson(f, a, m, fa, fm, flm, tol / 2.0, depth - 1) +
           adaptive_simpson(f, m, b, fm, fb, frm, tol / 2.0, depth - 1);
}
} // namespace detail

/// Adaptive Simpson quadrature oracle.
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol) {
    const double m = 0.5 * (a + b);
    return detail::adaptive_simpson(f, a, b, f(a), f(b), f(m), tol, 60);
}

/// Independent direct-formula SSIM oracle: per-window two-pass centered
/// moments instead of the implementation's E[x^2] - mu^2 filtering route.
inline double ssim_oracle(const ugac::Tensor& x, const ugac::Tensor& y) {
    const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int k = 11;
    const double sigma = 1.5;
    std::vector<double> win(static_cast<std::size_t>(k * k));
    double wsum = 0.0;
    for (int wy = 0; wy < k; ++wy)
        for (int wx = 0; wx < k; ++wx) {
            const double dy = wy - 5, dx = wx - 5;
            win[static_cast<std::size_t>(wy * k + wx)] =
                std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            wsum += win[static_cast<std::size_t>(wy * k + wx)];
        }
    for (double& w : win) w /= wsum;

    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < C; ++c) {
        const double* px = x.data() + c * H * W;
        const double* py = y.data() + c * H * W;
        for (std::size_t oy = 0; oy + k <= H; ++oy)
            for (std::size_t ox = 0; ox + k <= W; ++ox) {
                double mx = 0, my = 0;
                for (int wy = 0; wy < k; ++wy)
                    for (int wx = 0; wx < k; ++wx) {
                        const double w = win[static_cast<std::size_t>(wy * k + wx)];
                        mx += w * px[(oy + wy) * W + ox + wx];
                        my += w * py[(oy + wy) * W + ox + wx];
                    }
                double vx = 0, vy = 0, cxy = 0;
                for (int wy = 0; wy < k; ++wy)
                    for (int wx = 0; wx < k; ++wx) {
                        const double w = win[static_cast<std::size_t>(wy * k + wx)];
                        const double dx = px[(oy + wy) * W + ox + wx] - mx;
                        const double dy = py[(oy + wy) * W + ox + wx] - my;
                        vx += w * dx * dx;
                        vy += w * dy * dy;
                        cxy += w * dx * dy;
                    }
                const double c1 = 1e-4, c2 = 9e-4;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) /
                         ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    }
    return total / static_cast<double>(count);
}

} // namespace testutil
