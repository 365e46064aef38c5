#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ugac/errors.hpp"
#include "ugac/ggd.hpp"
#include "ugac/rng.hpp"
#include "ugac/tensor.hpp"

namespace ugac::nets {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Per-forward options. Dropout is only applied when active (training, or
/// Monte-Carlo uncertainty passes) and then needs an Rng.
struct ForwardMode {
    bool dropout_active = false;
    Rng* rng = nullptr;
};

struct GeneratorConfig {
    int in_channels = 1;
    int out_channels = 1;
    int base_width = 16;
    int depth = 3;
    int cascade_len = 2;
    double dropout_p = 0.2;

    void validate() const {
        if (depth < 1 || cascade_len < 1 || base_width < 4)
            throw DomainError("GeneratorConfig: need depth >= 1, cascade_len >= 1, "
                              "base_width >= 4");
        if (in_channels < 1 || out_channels < 1)
            throw DomainError("GeneratorConfig: channel counts must be positive");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0))
            throw DomainError("GeneratorConfig: dropout_p must be in [0, 1)");
    }
};

struct DiscriminatorConfig {
    int in_channels = 1;
    int base_width = 16;
    int n_layers = 3;

    void validate() const {
        if (n_layers < 1 || base_width < 1 || in_channels < 1)
            throw DomainError("DiscriminatorConfig: invalid field");
    }
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct Conv2d {
    Tensor w, b;
    int stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride_, int pad_)
        : w(Tensor::zeros({static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch),
                           static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)},
                          true)),
          b(Tensor::zeros({static_cast<std::size_t>(out_ch)}, true)),
          stride(stride_), pad(pad_) {}

    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }

    void init(Rng& rng) {
        for (double& v : w.values()) v = rng.normal(0.0, 0.02);
        std::fill(b.values().begin(), b.values().end(), 0.0);
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

struct InstanceNorm {
    Tensor gain, bias;

    InstanceNorm() = default;
    explicit InstanceNorm(int channels)
        : gain(Tensor::ones({static_cast<std::size_t>(channels)}, true)),
          bias(Tensor::zeros({static_cast<std::size_t>(channels)}, true)) {}

    Tensor forward(const Tensor& x) const { return instance_norm(x, gain, bias); }

    void init(Rng&) {
        std::fill(gain.values().begin(), gain.values().end(), 1.0);
        std::fill(bias.values().begin(), bias.values().end(), 0.0);
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        out.emplace_back(prefix + ".gain", gain);
        out.emplace_back(prefix + ".bias", bias);
    }
};

/// Two conv+norm+ReLU layers plus a 1x1-conv skip added to the output.
/// Spatial size is preserved.
struct ResConv {
    Conv2d c1, c2, skip;
    InstanceNorm n1, n2;

    ResConv() = default;
    ResConv(int in_ch, int out_ch)
        : c1(in_ch, out_ch, 3, 1, 1), c2(out_ch, out_ch, 3, 1, 1), skip(in_ch, out_ch, 1, 1, 0),
          n1(out_ch), n2(out_ch) {}

    Tensor forward(const Tensor& x) const {
        Tensor h = relu(n1.forward(c1.forward(x)));
        h = relu(n2.forward(c2.forward(h)));
        return h + skip.forward(x);
    }

    void init(Rng& rng) {
        c1.init(rng);
        n1.init(rng);
        c2.init(rng);
        n2.init(rng);
        skip.init(rng);
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        c1.collect(prefix + ".c1", out);
        n1.collect(prefix + ".n1", out);
        c2.collect(prefix + ".c2", out);
        n2.collect(prefix + ".n2", out);
        skip.collect(prefix + ".skip", out);
    }
};

/// Halves the spatial dims by max pooling, then ResConv.
struct Down {
    ResConv block;

    Down() = default;
    Down(int in_ch, int out_ch) : block(in_ch, out_ch) {}

    Tensor forward(const Tensor& x) const { return block.forward(maxpool2d(x, 2)); }

    void init(Rng& rng) { block.init(rng); }
    void collect(const std::string& prefix, NamedParams& out) const {
        block.collect(prefix, out);
    }
};

/// Bilinear 2x upsampling, concatenation with the encoder skip feature, then
/// ResConv.
struct Up {
    ResConv block;

    Up() = default;
    Up(int in_ch_total, int out_ch) : block(in_ch_total, out_ch) {}

    Tensor forward(const Tensor& x, const Tensor& skip_feat) const {
        Tensor up = upsample_bilinear2x(x);
        return block.forward(concat({up, skip_feat}, 1));
    }

    void init(Rng& rng) { block.init(rng); }
    void collect(const std::string& prefix, NamedParams& out) const {
        block.collect(prefix, out);
    }
};

/// 1x1 convolution producing the final channel count.
struct OutConv {
    Conv2d c;

    OutConv() = default;
    OutConv(int in_ch, int out_ch) : c(in_ch, out_ch, 1, 1, 0) {}

    Tensor forward(const Tensor& x) const { return c.forward(x); }
    void init(Rng& rng) { c.init(rng); }
    void collect(const std::string& prefix, NamedParams& out) const {
        c.collect(prefix, out);
    }
};

// ---------------------------------------------------------------------------
// U-Nets
// ---------------------------------------------------------------------------

/// Shared encoder/decoder trunk. Dropout sits on the deepest encoder and
/// deepest decoder outputs.
struct UNetBackbone {
    int in_channels = 0, base_width = 0, depth = 0;
    double dropout_p = 0.0;
    ResConv inc;
    std::vector<Down> downs;
    std::vector<Up> ups;

    UNetBackbone() = default;
    UNetBackbone(int in_ch, int base, int depth_, double dropout)
        : in_channels(in_ch), base_width(base), depth(depth_), dropout_p(dropout),
          inc(in_ch, base) {
        for (int l = 0; l < depth; ++l)
            downs.emplace_back(base << l, base << (l + 1));
        for (int l = depth; l >= 1; --l)
            ups.emplace_back((base << l) + (base << (l - 1)), base << (l - 1));
    }

    /// Output is a base_width feature map at the input resolution.
    Tensor forward(const Tensor& x, const ForwardMode& mode) const {
        const Shape& s = x.shape();
        if (s.size() != 4 || s[1] != static_cast<std::size_t>(in_channels))
            throw DimensionError("UNet: expected [N," + std::to_string(in_channels) +
                                 ",H,W], got " + shape_str(s));
        const std::size_t div = std::size_t{1} << depth;
        if (s[2] % div != 0 || s[3] % div != 0)
            throw DimensionError("UNet: spatial dims " + shape_str(s) +
                                 " must be divisible by 2^depth = " + std::to_string(div));
        std::vector<Tensor> feats;
        feats.reserve(depth + 1);
        feats.push_back(inc.forward(x));
        for (int l = 0; l < depth; ++l) feats.push_back(downs[l].forward(feats.back()));

        Tensor cur = maybe_dropout(feats.back(), mode);
        for (int l = 0; l < depth; ++l) {
            cur = ups[l].forward(cur, feats[depth - 1 - l]);
            if (l == 0) cur = maybe_dropout(cur, mode);
        }
        return cur;
    }

    void init(Rng& rng) {
        inc.init(rng);
        for (auto& d : downs) d.init(rng);
        for (auto& u : ups) u.init(rng);
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        inc.collect(prefix + ".inc", out);
        for (std::size_t i = 0; i < downs.size(); ++i)
            downs[i].collect(prefix + ".down" + std::to_string(i), out);
        for (std::size_t i = 0; i < ups.size(); ++i)
            ups[i].collect(prefix + ".up" + std::to_string(i), out);
    }

private:
    Tensor maybe_dropout(const Tensor& t, const ForwardMode& mode) const {
        if (!mode.dropout_active || dropout_p == 0.0) return t;
        if (mode.rng == nullptr)
            throw InternalError("UNet: dropout active but no Rng supplied");
        return dropout(t, dropout_p, true, *mode.rng);
    }
};

struct UNet {
    UNetBackbone trunk;
    OutConv out;

    UNet() = default;
    UNet(int in_ch, int out_ch, int base, int depth, double dropout)
        : trunk(in_ch, base, depth, dropout), out(base, out_ch) {}

    Tensor forward(const Tensor& x, const ForwardMode& mode) const {
        return out.forward(trunk.forward(x, mode));
    }

    void init(Rng& rng) {
        trunk.init(rng);
        out.init(rng);
    }

    void collect(const std::string& prefix, NamedParams& out_params) const {
        trunk.collect(prefix, out_params);
        out.collect(prefix + ".out", out_params);
    }
};

/// The three generator head maps: predicted image, 1/alpha, and beta. The
/// ReLU heads make inv_alpha and beta nonnegative.
struct ThreeHeadOutput {
    Tensor mean;
    Tensor inv_alpha;
    Tensor beta;
};

struct UNet3Head {
    UNetBackbone trunk;
    OutConv head_mean, head_inv_alpha, head_beta;

    /// Head bias init of 1 starts training at the unit-map special case
    /// (alpha ~ 1, beta ~ 1, i.e. a plain L1 cycle). Zero bias would start
    /// at the alpha ceiling, where the reconstruction gradient vanishes and
    /// training calibrates scale maps around a collapsed mean instead.
    static constexpr double kHeadBiasInit = 1.0;

    UNet3Head() = default;
    UNet3Head(int in_ch, int out_ch, int base, int depth, double dropout)
        : trunk(in_ch, base, depth, dropout), head_mean(base, out_ch),
          head_inv_alpha(base, out_ch), head_beta(base, out_ch) {}

    ThreeHeadOutput forward(const Tensor& x, const ForwardMode& mode) const {
        Tensor f = trunk.forward(x, mode);
        return {head_mean.forward(f), relu(head_inv_alpha.forward(f)),
                relu(head_beta.forward(f))};
    }

    void init(Rng& rng) {
        trunk.init(rng);
        head_mean.init(rng);
        head_inv_alpha.init(rng);
        head_beta.init(rng);
        std::fill(head_inv_alpha.c.b.values().begin(), head_inv_alpha.c.b.values().end(),
                  kHeadBiasInit);
        std::fill(head_beta.c.b.values().begin(), head_beta.c.b.values().end(),
                  kHeadBiasInit);
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        trunk.collect(prefix, out);
        head_mean.collect(prefix + ".head_mean", out);
        head_inv_alpha.collect(prefix + ".head_inv_alpha", out);
        head_beta.collect(prefix + ".head_beta", out);
    }
};

/// Cascade of refining U-Nets (each adds its output residually to its input)
/// capped by one three-headed U-Net that emits the GGD parameters.
struct CasUNet3Head {
    GeneratorConfig cfg;
    std::vector<UNet> stages;
    UNet3Head head;

    CasUNet3Head() = default;
    explicit CasUNet3Head(const GeneratorConfig& config) : cfg(config) {
        cfg.validate();
        for (int i = 0; i < cfg.cascade_len - 1; ++i)
            stages.emplace_back(cfg.in_channels, cfg.in_channels, cfg.base_width, cfg.depth,
                                cfg.dropout_p);
        head = UNet3Head(cfg.in_channels, cfg.out_channels, cfg.base_width, cfg.depth,
                         cfg.dropout_p);
    }

    ThreeHeadOutput forward(const Tensor& x, const ForwardMode& mode) const {
        Tensor cur = x;
        for (const UNet& stage : stages) cur = cur + stage.forward(cur, mode);
        return head.forward(cur, mode);
    }

    void init(Rng& rng) {
        for (auto& s : stages) s.init(rng);
        head.init(rng);
    }

    NamedParams named_params(const std::string& prefix = "g") const {
        NamedParams out;
        for (std::size_t i = 0; i < stages.size(); ++i)
            stages[i].collect(prefix + ".stage" + std::to_string(i), out);
        head.collect(prefix + ".head", out);
        return out;
    }
};

// ---------------------------------------------------------------------------
// GGD parameter conversion
// ---------------------------------------------------------------------------

constexpr double kInvAlphaEps = 1e-3; // caps alpha at 1000 when the head is 0
constexpr double kBetaFloor = 1e-2;

struct GgdMaps {
    Tensor mean;
    Tensor alpha;
    Tensor beta;
};

/// alpha = 1 / (inv_alpha + eps), beta clamped into [beta_min, beta_max].
inline GgdMaps to_ggd_params(const ThreeHeadOutput& heads) {
    Tensor alpha = 1.0 / (heads.inv_alpha + kInvAlphaEps);
    Tensor beta = clamp(heads.beta + kBetaFloor, ggd::kBetaMin, ggd::kBetaMax);
    return {heads.mean, alpha, beta};
}

// ---------------------------------------------------------------------------
// Patch discriminator
// ---------------------------------------------------------------------------

/// Strided conv stack emitting one logit per receptive-field patch; no
/// sigmoid (least-squares GAN).
struct NLayerDiscriminator {
    DiscriminatorConfig cfg;

    struct Block {
        Conv2d conv;
        InstanceNorm norm;
        bool has_norm = false;
        bool has_act = false;
    };
    std::vector<Block> blocks;

    NLayerDiscriminator() = default;
    explicit NLayerDiscriminator(const DiscriminatorConfig& config) : cfg(config) {
        cfg.validate();
        const int cap = 8 * cfg.base_width;
        int prev = cfg.in_channels;
        int cur = cfg.base_width;
        blocks.push_back({Conv2d(prev, cur, 4, 2, 1), InstanceNorm(), false, true});
        prev = cur;
        for (int i = 1; i < cfg.n_layers; ++i) {
            cur = std::min(cfg.base_width << i, cap);
            blocks.push_back({Conv2d(prev, cur, 4, 2, 1), InstanceNorm(cur), true, true});
            prev = cur;
        }
        cur = std::min(cfg.base_width << cfg.n_layers, cap);
        blocks.push_back({Conv2d(prev, cur, 4, 1, 1), InstanceNorm(cur), true, true});
        prev = cur;
        blocks.push_back({Conv2d(prev, 1, 4, 1, 1), InstanceNorm(), false, false});
    }

    Tensor forward(const Tensor& x) const {
        Tensor h = x;
        for (const Block& b : blocks) {
            h = b.conv.forward(h);
            if (b.has_norm) h = b.norm.forward(h);
            if (b.has_act) h = leaky_relu(h, 0.2);
        }
        return h;
    }

    void init(Rng& rng) {
        for (auto& b : blocks) {
            b.conv.init(rng);
            if (b.has_norm) b.norm.init(rng);
        }
    }

    NamedParams named_params(const std::string& prefix = "d") const {
        NamedParams out;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = prefix + ".layer" + std::to_string(i);
            blocks[i].conv.collect(p + ".conv", out);
            if (blocks[i].has_norm) blocks[i].norm.collect(p + ".norm", out);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

inline std::size_t n_params(const NamedParams& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

template <class Net>
inline void init_weights(Net& net, Rng& rng) {
    net.init(rng);
}

} // namespace ugac::nets
