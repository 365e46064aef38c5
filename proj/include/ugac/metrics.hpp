#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "ugac/errors.hpp"
#include "ugac/perturb.hpp"
#include "ugac/rng.hpp"
#include "ugac/tensor.hpp"

namespace ugac::metrics {

inline double mse(const Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape()) throw DimensionError("mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = x[i] - y[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.numel());
}

namespace detail {

// Gaussian window, 11x11, sigma 1.5, normalized to sum 1.
constexpr int kSsimWindow = 11;

inline const std::vector<double>& ssim_window() {
    static const std::vector<double> win = [] {
        std::vector<double> w(kSsimWindow * kSsimWindow);
        const double sigma = 1.5;
        const int half = kSsimWindow / 2;
        double total = 0.0;
        for (int y = 0; y < kSsimWindow; ++y)
            for (int x = 0; x < kSsimWindow; ++x) {
                const double dy = y - half, dx = x - half;
                const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                w[static_cast<std::size_t>(y * kSsimWindow + x)] = v;
                total += v;
            }
        for (double& v : w) v /= total;
        return w;
    }();
    return win;
}

// Mean local SSIM of one channel over all fully-contained window positions.
inline double ssim_channel(const double* x, const double* y, std::size_t H, std::size_t W) {
    const auto& win = ssim_window();
    const int k = kSsimWindow;
    constexpr double kC1 = 0.01 * 0.01; // (K1 L)^2, dynamic range L = 1
    constexpr double kC2 = 0.03 * 0.03;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t oy = 0; oy + k <= H; ++oy)
        for (std::size_t ox = 0; ox + k <= W; ++ox) {
            double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (int wy = 0; wy < k; ++wy)
                for (int wx = 0; wx < k; ++wx) {
                    const double wv = win[static_cast<std::size_t>(wy * k + wx)];
                    const double xv = x[(oy + static_cast<std::size_t>(wy)) * W + ox +
                                        static_cast<std::size_t>(wx)];
                    const double yv = y[(oy + static_cast<std::size_t>(wy)) * W + ox +
                                        static_cast<std::size_t>(wx)];
                    mx += wv * xv;
                    my += wv * yv;
                    mxx += wv * xv * xv;
                    myy += wv * yv * yv;
                    mxy += wv * xv * yv;
                }
            const double vx = mxx - mx * mx;
            const double vy = myy - my * my;
            const double cxy = mxy - mx * my;
            const double num = (2.0 * mx * my + kC1) * (2.0 * cxy + kC2);
            const double den = (mx * mx + my * my + kC1) * (vx + vy + kC2);
            total += num / den;
            ++count;
        }
    return total / static_cast<double>(count);
}

} // namespace detail

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1. Channels are averaged.
inline double ssim(const Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape()) throw DimensionError("ssim: shape mismatch");
    if (x.ndim() != 3 && x.ndim() != 2) throw DimensionError("ssim: expected [C,H,W] or [H,W]");
    const std::size_t C = x.ndim() == 3 ? x.shape()[0] : 1;
    const std::size_t H = x.shape()[x.ndim() - 2], W = x.shape()[x.ndim() - 1];
    if (H < detail::kSsimWindow || W < detail::kSsimWindow)
        throw DimensionError("ssim: image smaller than the 11x11 window");
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c)
        acc += detail::ssim_channel(x.data() + c * H * W, y.data() + c * H * W, H, W);
    return acc / static_cast<double>(C);
}

/// Discretized area under a metric curve:
/// (eta_max - eta_min) * mean(scores).
inline double area_metric(const std::vector<double>& scores, double eta_min, double eta_max) {
    if (scores.empty()) throw DomainError("area_metric: need at least one score");
    double acc = 0.0;
    for (double s : scores) acc += s;
    return (eta_max - eta_min) * acc / static_cast<double>(scores.size());
}

/// Metric-vs-noise-level curve plus its area.
struct RobustnessCurve {
    std::vector<double> levels; // eta values, strictly increasing
    std::vector<double> scores;
    double area = 0.0;
};

struct RobustnessReport {
    RobustnessCurve amse;
    RobustnessCurve assim;
};

using Model = std::function<Tensor(const Tensor&)>; // [C,H,W] -> [C,H,W]

/// Shared driver: per level eta_k, mean MSE/SSIM between the model's output
/// on the perturbed input and on the clean input, then the area metric. The
/// comparison target is the model's own clean-input output.
inline RobustnessReport robustness_report(const Model& model,
                                          const std::vector<Tensor>& clean_inputs,
                                          perturb::Family family, std::uint64_t seed) {
    if (clean_inputs.empty()) throw DataError("robustness_report: empty evaluation set");
    const auto schedule = perturb::level_schedule(family);
    std::vector<Tensor> clean_outputs;
    clean_outputs.reserve(clean_inputs.size());
    for (const Tensor& img : clean_inputs) clean_outputs.push_back(model(img));

    RobustnessReport rep;
    for (const auto& spec : schedule) {
        double mse_acc = 0.0, ssim_acc = 0.0;
        for (std::size_t i = 0; i < clean_inputs.size(); ++i) {
            Rng stream(mix_seed(seed, static_cast<std::uint64_t>(spec.level), i));
            Tensor out = spec.parameter == 0.0
                             ? clean_outputs[i]
                             : model(perturb::apply(clean_inputs[i], spec, stream));
            mse_acc += mse(out, clean_outputs[i]);
            ssim_acc += ssim(out, clean_outputs[i]);
        }
        const double n = static_cast<double>(clean_inputs.size());
        rep.amse.levels.push_back(spec.parameter);
        rep.amse.scores.push_back(mse_acc / n);
        rep.assim.levels.push_back(spec.parameter);
        rep.assim.scores.push_back(ssim_acc / n);
    }
    const double eta_min = rep.amse.levels.front();
    const double eta_max = rep.amse.levels.back();
    rep.amse.area = area_metric(rep.amse.scores, eta_min, eta_max);
    rep.assim.area = area_metric(rep.assim.scores, eta_min, eta_max);
    return rep;
}

inline RobustnessCurve amse(const Model& model, const std::vector<Tensor>& clean_inputs,
                            perturb::Family family, std::uint64_t seed) {
    return robustness_report(model, clean_inputs, family, seed).amse;
}

inline RobustnessCurve assim(const Model& model, const std::vector<Tensor>& clean_inputs,
                             perturb::Family family, std::uint64_t seed) {
    return robustness_report(model, clean_inputs, family, seed).assim;
}

/// Nearest-palette quantization of a continuous image into class labels.
inline std::vector<int> quantize_to_palette(const Tensor& img,
                                            const std::vector<double>& palette) {
    if (palette.empty()) throw DomainError("quantize_to_palette: empty palette");
    std::vector<int> labels(img.numel());
    for (std::size_t i = 0; i < img.numel(); ++i) {
        int best = 0;
        double best_d = std::fabs(img[i] - palette[0]);
        for (std::size_t c = 1; c < palette.size(); ++c) {
            const double d = std::fabs(img[i] - palette[c]);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        labels[i] = best;
    }
    return labels;
}

/// Mean IoU and mean class accuracy over the classes present in gt.
inline std::pair<double, double> iou_and_accuracy(const std::vector<int>& pred,
                                                  const std::vector<int>& gt, int n_classes) {
    if (pred.size() != gt.size()) throw DimensionError("iou_and_accuracy: size mismatch");
    if (pred.empty()) throw DataError("iou_and_accuracy: empty label maps");
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] < 0 || pred[i] >= n_classes || gt[i] < 0 || gt[i] >= n_classes)
            throw DomainError("iou_and_accuracy: label out of range");
    std::vector<double> inter(static_cast<std::size_t>(n_classes), 0.0);
    std::vector<double> pred_n(static_cast<std::size_t>(n_classes), 0.0);
    std::vector<double> gt_n(static_cast<std::size_t>(n_classes), 0.0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred_n[static_cast<std::size_t>(pred[i])] += 1.0;
        gt_n[static_cast<std::size_t>(gt[i])] += 1.0;
        if (pred[i] == gt[i]) inter[static_cast<std::size_t>(pred[i])] += 1.0;
    }
    double iou = 0.0, acc = 0.0;
    int present = 0;
    for (int c = 0; c < n_classes; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        if (gt_n[cu] == 0.0) continue;
        ++present;
        const double uni = pred_n[cu] + gt_n[cu] - inter[cu];
        iou += inter[cu] / uni;
        acc += inter[cu] / gt_n[cu];
    }
    if (present == 0) throw DataError("iou_and_accuracy: no classes present in gt");
    return {iou / present, acc / present};
}

} // namespace ugac::metrics
