#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ugac/errors.hpp"
#include "ugac/io.hpp"
#include "ugac/rng.hpp"
#include "ugac/tensor.hpp"

namespace ugac::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG <-> [C,H,W] tensors in [0,1]
// ---------------------------------------------------------------------------

inline Tensor load_png(const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw DataError("cannot read PNG " + path.string() + ": " + image.message);
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const std::size_t C = color ? 3 : 1;
    const std::size_t H = image.height, W = image.width;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw DataError("cannot decode PNG " + path.string() + ": " + msg);
    }
    std::vector<double> out(C * H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c)
                out[(c * H + y) * W + x] = buf[(y * W + x) * C + c] / 255.0;
    return Tensor::from(std::move(out), {C, H, W});
}

/// Writes an image tensor as 8-bit PNG; values are clamped to [0,1].
inline void save_png(const fs::path& path, const Tensor& img) {
    if (img.ndim() != 3 || (img.shape()[0] != 1 && img.shape()[0] != 3))
        throw DataError("save_png: expected [1,H,W] or [3,H,W], got " + shape_str(img.shape()));
    const std::size_t C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    std::vector<std::uint8_t> buf(C * H * W);
    const double* p = img.data();
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) {
                const double v = std::clamp(p[(c * H + y) * W + x], 0.0, 1.0);
                buf[(y * W + x) * C + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(W);
    image.height = static_cast<png_uint_32>(H);
    image.format = (C == 3) ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr))
        throw DataError("cannot write PNG " + path.string() + ": " + image.message);
}

// ---------------------------------------------------------------------------
// Generic image IO and resizing
// ---------------------------------------------------------------------------

inline bool is_image_file(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".png" || ext == ".rt";
}

inline Tensor load_image(const fs::path& path) {
    if (path.extension() == ".rt") {
        Tensor t = io::load_tensor_raw(path);
        if (t.ndim() != 3) throw DataError("raw image must be [C,H,W]: " + path.string());
        return t;
    }
    return load_png(path);
}

/// All image files in a directory in sorted filename order.
inline std::vector<std::pair<std::string, Tensor>> load_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(files.size());
    for (const auto& f : files) out.emplace_back(f.filename().string(), load_image(f));
    return out;
}

enum class ResizeMode { kNearest, kBilinear };

/// Plain value-level resize of a [C,H,W] image (no autodiff). Nearest is
/// meant for label maps, bilinear for everything else.
inline Tensor resize(const Tensor& img, std::size_t new_h, std::size_t new_w,
                     ResizeMode mode) {
    if (img.ndim() != 3) throw DataError("resize: expected [C,H,W]");
    const std::size_t C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    std::vector<double> out(C * new_h * new_w);
    const double* p = img.data();
    const double sy = static_cast<double>(H) / static_cast<double>(new_h);
    const double sx = static_cast<double>(W) / static_cast<double>(new_w);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < new_h; ++y)
            for (std::size_t x = 0; x < new_w; ++x) {
                double v;
                if (mode == ResizeMode::kNearest) {
                    const std::size_t iy =
                        std::min<std::size_t>(static_cast<std::size_t>((y + 0.5) * sy), H - 1);
                    const std::size_t ix =
                        std::min<std::size_t>(static_cast<std::size_t>((x + 0.5) * sx), W - 1);
                    v = p[(c * H + iy) * W + ix];
                } else {
                    const double src_y = (y + 0.5) * sy - 0.5;
                    const double src_x = (x + 0.5) * sx - 0.5;
                    const long y0 = static_cast<long>(std::floor(src_y));
                    const long x0 = static_cast<long>(std::floor(src_x));
                    const double fy = src_y - y0, fx = src_x - x0;
                    auto sample = [&](long yy, long xx) {
                        yy = std::clamp<long>(yy, 0, static_cast<long>(H) - 1);
                        xx = std::clamp<long>(xx, 0, static_cast<long>(W) - 1);
                        return p[(c * H + yy) * W + xx];
                    };
                    v = sample(y0, x0) * (1 - fy) * (1 - fx) +
                        sample(y0, x0 + 1) * (1 - fy) * fx +
                        sample(y0 + 1, x0) * fy * (1 - fx) + sample(y0 + 1, x0 + 1) * fy * fx;
                }
                out[(c * new_h + y) * new_w + x] = v;
            }
    return Tensor::from(std::move(out), {C, new_h, new_w});
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Two unaligned image collections sharing (C,H,W); cardinalities may differ.
struct UnpairedDataset {
    std::vector<Tensor> domain_a;
    std::vector<Tensor> domain_b;
    std::size_t channels = 0, height = 0, width = 0;
};

struct LoadOptions {
    std::size_t target_size = 0; // 0 = keep native size
    ResizeMode resize_mode = ResizeMode::kBilinear;
};

/// Loads `dir/domainA` and `dir/domainB` (PNG or raw tensors), normalized to
/// [0,1], with consistent dimensions.
inline UnpairedDataset load_dataset(const fs::path& dir, const LoadOptions& opt = {}) {
    UnpairedDataset ds;
    auto load_domain = [&](const char* sub, std::vector<Tensor>& out) {
        const fs::path d = dir / sub;
        auto files = load_images(d);
        if (files.empty()) throw DataError("empty domain directory: " + d.string());
        for (auto& [name, img] : files) {
            Tensor t = std::move(img);
            if (opt.target_size != 0 &&
                (t.shape()[1] != opt.target_size || t.shape()[2] != opt.target_size))
                t = resize(t, opt.target_size, opt.target_size, opt.resize_mode);
            for (double v : t.values())
                if (!(v >= 0.0 && v <= 1.0))
                    throw DataError("pixel outside [0,1] in " + (d / name).string());
            if (ds.channels == 0) {
                ds.channels = t.shape()[0];
                ds.height = t.shape()[1];
                ds.width = t.shape()[2];
            } else if (t.shape()[0] != ds.channels || t.shape()[1] != ds.height ||
                       t.shape()[2] != ds.width) {
                throw DataError("inconsistent image dimensions at " + (d / name).string());
            }
            out.push_back(std::move(t));
        }
    };
    load_domain("domainA", ds.domain_a);
    load_domain("domainB", ds.domain_b);
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic shapes: a desk-scale two-domain dataset
// ---------------------------------------------------------------------------

namespace detail {

struct ShapeSpec {
    bool ellipse;
    double cy, cx, ry, rx;
    double intensity; // one of {1/3, 2/3, 1}
};

inline std::vector<ShapeSpec> sample_shapes(Rng& rng) {
    const int count = 2 + static_cast<int>(rng.integer(3)); // 2..4 shapes
    std::vector<ShapeSpec> shapes(count);
    for (auto& s : shapes) {
        s.ellipse = rng.bernoulli(0.5);
        s.cy = rng.uniform(0.2, 0.8);
        s.cx = rng.uniform(0.2, 0.8);
        s.ry = rng.uniform(0.08, 0.3);
        s.rx = rng.uniform(0.08, 0.3);
        s.intensity = (1.0 + static_cast<double>(rng.integer(3))) / 3.0;
    }
    return shapes;
}

inline bool inside(const ShapeSpec& s, double y, double x) {
    const double dy = (y - s.cy) / s.ry;
    const double dx = (x - s.cx) / s.rx;
    return s.ellipse ? (dy * dy + dx * dx <= 1.0)
                     : (std::fabs(dy) <= 1.0 && std::fabs(dx) <= 1.0);
}

// Index of the topmost shape covering the pixel, -1 for background.
inline int scene_label(const std::vector<ShapeSpec>& shapes, double y, double x) {
    for (int i = static_cast<int>(shapes.size()) - 1; i >= 0; --i)
        if (inside(shapes[static_cast<std::size_t>(i)], y, x)) return i;
    return -1;
}

/// Filled rendering: label-map-like, at most 4 distinct intensities
/// (background 0 plus the 3-value palette).
inline Tensor render_filled(const std::vector<ShapeSpec>& shapes, std::size_t size) {
    std::vector<double> img(size * size, 0.0);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const int l = scene_label(shapes, (y + 0.5) / size, (x + 0.5) / size);
            if (l >= 0) img[y * size + x] = shapes[static_cast<std::size_t>(l)].intensity;
        }
    return Tensor::from(std::move(img), {1, size, size});
}

/// Edge rendering: pixels whose scene label differs from a 4-neighbour.
inline Tensor render_edges(const std::vector<ShapeSpec>& shapes, std::size_t size) {
    std::vector<int> labels(size * size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            labels[y * size + x] = scene_label(shapes, (y + 0.5) / size, (x + 0.5) / size);
    std::vector<double> img(size * size, 0.0);
    auto lab = [&](long y, long x) {
        if (y < 0 || x < 0 || y >= static_cast<long>(size) || x >= static_cast<long>(size))
            return -1;
        return labels[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)];
    };
    for (long y = 0; y < static_cast<long>(size); ++y)
        for (long x = 0; x < static_cast<long>(size); ++x) {
            const int l = lab(y, x);
            if (l < 0) continue;
            if (lab(y - 1, x) != l || lab(y + 1, x) != l || lab(y, x - 1) != l ||
                lab(y, x + 1) != l)
                img[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)] = 1.0;
        }
    return Tensor::from(std::move(img), {1, size, size});
}

} // namespace detail

/// Domain A: filled shapes; domain B: edge renderings of independently
/// sampled shapes. Unpaired by construction, deterministic per seed.
inline UnpairedDataset synth_shapes_dataset(std::size_t n_per_domain, std::size_t size,
                                            std::uint64_t seed) {
    if (n_per_domain == 0 || size < 8)
        throw DataError("synth_shapes_dataset: need n >= 1 and size >= 8");
    UnpairedDataset ds;
    ds.channels = 1;
    ds.height = ds.width = size;
    Rng rng_a(mix_seed(seed, 0xA));
    Rng rng_b(mix_seed(seed, 0xB));
    for (std::size_t i = 0; i < n_per_domain; ++i)
        ds.domain_a.push_back(detail::render_filled(detail::sample_shapes(rng_a), size));
    for (std::size_t i = 0; i < n_per_domain; ++i)
        ds.domain_b.push_back(detail::render_edges(detail::sample_shapes(rng_b), size));
    return ds;
}

/// Aligned (filled, edges) pairs from the same shapes; used when residuals
/// against ground truth are needed at evaluation time.
inline std::vector<std::pair<Tensor, Tensor>> synth_paired_set(std::size_t n, std::size_t size,
                                                               std::uint64_t seed) {
    std::vector<std::pair<Tensor, Tensor>> out;
    out.reserve(n);
    Rng rng(mix_seed(seed, 0xAB));
    for (std::size_t i = 0; i < n; ++i) {
        auto shapes = detail::sample_shapes(rng);
        out.emplace_back(detail::render_filled(shapes, size),
                         detail::render_edges(shapes, size));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

inline Tensor flip_horizontal(const Tensor& img) {
    const std::size_t C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    std::vector<double> out(C * H * W);
    const double* p = img.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                out[(c * H + y) * W + x] = p[(c * H + y) * W + (W - 1 - x)];
    return Tensor::from(std::move(out), img.shape());
}

inline Tensor flip_vertical(const Tensor& img) {
    const std::size_t C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    std::vector<double> out(C * H * W);
    const double* p = img.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                out[(c * H + y) * W + x] = p[(c * H + (H - 1 - y)) * W + x];
    return Tensor::from(std::move(out), img.shape());
}

/// Independent 50/50 horizontal and vertical flips.
inline Tensor augment_flip(const Tensor& img, Rng& rng) {
    Tensor out = img;
    if (rng.bernoulli(0.5)) out = flip_horizontal(out);
    if (rng.bernoulli(0.5)) out = flip_vertical(out);
    return out;
}

/// Stacks [C,H,W] images into a [N,C,H,W] batch.
inline Tensor stack_batch(const std::vector<Tensor>& images) {
    if (images.empty()) throw DataError("stack_batch: no images");
    const Shape& s = images[0].shape();
    std::vector<double> out;
    out.reserve(images.size() * shape_numel(s));
    for (const Tensor& t : images) {
        if (t.shape() != s) throw DimensionError("stack_batch: inconsistent image shapes");
        out.insert(out.end(), t.values().begin(), t.values().end());
    }
    return Tensor::from(std::move(out), {images.size(), s[0], s[1], s[2]});
}

/// Extracts image i of a [N,C,H,W] batch as [C,H,W].
inline Tensor unstack(const Tensor& batch, std::size_t i) {
    const Shape& s = batch.shape();
    if (s.size() != 4 || i >= s[0]) throw DimensionError("unstack: bad index or rank");
    const std::size_t n = s[1] * s[2] * s[3];
    std::vector<double> out(batch.data() + i * n, batch.data() + (i + 1) * n);
    return Tensor::from(std::move(out), {s[1], s[2], s[3]});
}

} // namespace ugac::data
