#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pseudoblur/tensor.hpp"

namespace pseudoblur {

enum class Range { Signed, Unit }; // [-1,1] network domain, [0,1] metric domain

// H x W x C image, stored planar (C,H,W), float32. Values are clamped into
// the tagged range on construction.
class Image {
public:
    Image() = default;
    Image(int channels, int height, int width, Range range, float fill = 0.0f)
        : range_(range), t_({channels, height, width}, fill) {
        check_dims(channels, height, width);
        clamp_all();
    }
    Image(Tensor<float> t, Range range) : range_(range), t_(std::move(t)) {
        if (t_.rank() != 3) throw std::invalid_argument("image tensor must be rank 3 (C,H,W)");
        check_dims(t_.dim(0), t_.dim(1), t_.dim(2));
        clamp_all();
    }

    int channels() const { return t_.dim(0); }
    int height() const { return t_.dim(1); }
    int width() const { return t_.dim(2); }
    Range range() const { return range_; }

    float& at(int c, int y, int x) { return t_.at(c, y, x); }
    float at(int c, int y, int x) const { return t_.at(c, y, x); }

    const Tensor<float>& tensor() const { return t_; }
    Tensor<float>& tensor() { return t_; }

    bool same_shape(const Image& o) const { return t_.same_shape(o.t_); }

    Image to_unit() const {
        if (range_ == Range::Unit) return *this;
        Image out = *this;
        for (auto& v : out.t_.data) v = (v + 1.0f) * 0.5f;
        out.range_ = Range::Unit;
        return out;
    }

    Image to_signed() const {
        if (range_ == Range::Signed) return *this;
        Image out = *this;
        for (auto& v : out.t_.data) v = v * 2.0f - 1.0f;
        out.range_ = Range::Signed;
        return out;
    }

    void clamp_all() {
        const float lo = range_ == Range::Signed ? -1.0f : 0.0f;
        for (auto& v : t_.data) v = std::clamp(v, lo, 1.0f);
    }

private:
    static void check_dims(int c, int h, int w) {
        if (c != 1 && c != 3) throw std::invalid_argument("image channels must be 1 or 3");
        if (h < 1 || w < 1) throw std::invalid_argument("image dims must be >= 1");
    }

    Range range_ = Range::Unit;
    Tensor<float> t_;
};

// H x W map with values in {0,1}.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0)
        : h_(height), w_(width), data_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
        if (height < 1 || width < 1) throw std::invalid_argument("mask dims must be >= 1");
    }

    int height() const { return h_; }
    int width() const { return w_; }

    std::uint8_t& at(int y, int x) { return data_[static_cast<std::size_t>(y) * w_ + x]; }
    std::uint8_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * w_ + x]; }

    const std::vector<std::uint8_t>& data() const { return data_; }
    std::vector<std::uint8_t>& data() { return data_; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : data_) n += v;
        return n;
    }

private:
    int h_ = 0, w_ = 0;
    std::vector<std::uint8_t> data_;
};

inline BinaryMask invert(const BinaryMask& m) {
    BinaryMask out(m.height(), m.width());
    for (std::size_t i = 0; i < m.data().size(); ++i) out.data()[i] = m.data()[i] ? 0 : 1;
    return out;
}

inline BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw std::invalid_argument("mask shape mismatch");
    BinaryMask out(a.height(), a.width());
    for (std::size_t i = 0; i < out.data().size(); ++i)
        out.data()[i] = (a.data()[i] || b.data()[i]) ? 1 : 0;
    return out;
}

inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw std::invalid_argument("mask shape mismatch");
    BinaryMask out(a.height(), a.width());
    for (std::size_t i = 0; i < out.data().size(); ++i)
        out.data()[i] = (a.data()[i] && b.data()[i]) ? 1 : 0;
    return out;
}

// Zero the image outside the mask; mask broadcasts over channels.
inline Image apply_mask(const Image& img, const BinaryMask& m) {
    if (img.height() != m.height() || img.width() != m.width())
        throw std::invalid_argument("mask/image shape mismatch");
    Image out = img;
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x)
                if (!m.at(y, x)) out.at(c, y, x) = 0.0f;
    return out;
}

// BT.601 luma on unit-range RGB.
inline constexpr float kLumaR = 0.299f;
inline constexpr float kLumaG = 0.587f;
inline constexpr float kLumaB = 0.114f;

inline Image rgb_to_y(const Image& img) {
    if (img.channels() != 3) throw std::invalid_argument("rgb_to_y expects 3 channels");
    if (img.range() != Range::Unit) throw std::invalid_argument("rgb_to_y expects unit range");
    Image out(1, img.height(), img.width(), Range::Unit);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            out.at(0, y, x) =
                kLumaR * img.at(0, y, x) + kLumaG * img.at(1, y, x) + kLumaB * img.at(2, y, x);
    return out;
}

// Sobel gradient magnitude with replicate border padding. Output is not
// range-clamped (magnitudes can exceed 1), returned as a raw tensor.
inline Tensor<float> sobel_edges(const Image& img) {
    if (img.channels() != 1) throw std::invalid_argument("sobel_edges expects 1 channel");
    const int h = img.height(), w = img.width();
    Tensor<float> out({1, h, w}, 0.0f);
    auto px = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return img.at(0, y, x);
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // double accumulation so constant regions cancel to exactly zero
            double gx = -double(px(y - 1, x - 1)) + px(y - 1, x + 1) - 2.0 * px(y, x - 1) +
                        2.0 * px(y, x + 1) - px(y + 1, x - 1) + px(y + 1, x + 1);
            double gy = -double(px(y - 1, x - 1)) - 2.0 * px(y - 1, x) - px(y - 1, x + 1) +
                        px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1);
            out.at(0, y, x) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
        }
    }
    return out;
}

// Window max with same-padding (out-of-bounds positions ignored).
inline Tensor<float> max_pool(const Tensor<float>& t, int kernel, int stride = 1) {
    if (t.rank() != 3 || t.dim(0) != 1) throw std::invalid_argument("max_pool expects (1,H,W)");
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("max_pool kernel must be odd");
    if (stride < 1) throw std::invalid_argument("max_pool stride must be >= 1");
    const int h = t.dim(1), w = t.dim(2), r = kernel / 2;
    const int oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
    Tensor<float> out({1, oh, ow}, 0.0f);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const int cy = oy * stride, cx = ox * stride;
            float best = t.at(0, cy, cx);
            for (int dy = -r; dy <= r; ++dy) {
                int yy = cy + dy;
                if (yy < 0 || yy >= h) continue;
                for (int dx = -r; dx <= r; ++dx) {
                    int xx = cx + dx;
                    if (xx < 0 || xx >= w) continue;
                    best = std::max(best, t.at(0, yy, xx));
                }
            }
            out.at(0, oy, ox) = best;
        }
    }
    return out;
}

inline Image max_pool(const Image& img, int kernel, int stride = 1) {
    if (img.channels() != 1) throw std::invalid_argument("max_pool expects 1 channel");
    return Image(max_pool(img.tensor(), kernel, stride), img.range());
}

inline BinaryMask mask_max_pool(const BinaryMask& m, int kernel) {
    Tensor<float> t({1, m.height(), m.width()}, 0.0f);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) t.at(0, y, x) = m.at(y, x) ? 1.0f : 0.0f;
    Tensor<float> pooled = max_pool(t, kernel);
    BinaryMask out(m.height(), m.width());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) out.at(y, x) = pooled.at(0, y, x) > 0.5f ? 1 : 0;
    return out;
}

// 2x2 box average, stride 2. Requires even dims.
inline Image downsample_2x(const Image& img) {
    const int h = img.height(), w = img.width();
    if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("downsample_2x needs even dims");
    Image out(img.channels(), h / 2, w / 2, img.range());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < h / 2; ++y)
            for (int x = 0; x < w / 2; ++x)
                out.at(c, y, x) = 0.25f * (img.at(c, 2 * y, 2 * x) + img.at(c, 2 * y, 2 * x + 1) +
                                           img.at(c, 2 * y + 1, 2 * x) + img.at(c, 2 * y + 1, 2 * x + 1));
    return out;
}

// Elementwise arithmetic mean of >= 2 same-shape frames.
inline Image average_frames(const std::vector<Image>& frames) {
    if (frames.size() < 2) throw std::invalid_argument("average_frames needs >= 2 frames");
    const Image& first = frames.front();
    for (const auto& f : frames)
        if (!f.same_shape(first) || f.range() != first.range())
            throw std::invalid_argument("average_frames shape/range mismatch");
    Image out(first.channels(), first.height(), first.width(), first.range());
    // double accumulator, one rounding at the end: the mean of identical
    // frames reproduces the frame bitwise
    const double count = static_cast<double>(frames.size());
    for (std::size_t i = 0; i < out.tensor().data.size(); ++i) {
        double acc = 0.0;
        for (const auto& f : frames) acc += f.tensor().data[i];
        out.tensor().data[i] = static_cast<float>(acc / count);
    }
    return out;
}

inline constexpr double kPsnrCapDb = 99.0;

inline double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr shape mismatch");
    Image ua = a.to_unit(), ub = b.to_unit();
    double mse = 0.0;
    const auto& da = ua.tensor().data;
    const auto& db = ub.tensor().data;
    for (std::size_t i = 0; i < da.size(); ++i) {
        double d = static_cast<double>(da[i]) - static_cast<double>(db[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(da.size());
    if (mse <= 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01 K2=0.03, L=1.
// Windows are evaluated at fully-interior positions only. Multi-channel
// images score as the mean of per-channel SSIM.
inline double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim shape mismatch");
    constexpr int win = 11;
    if (a.height() < win || a.width() < win)
        throw std::invalid_argument("ssim needs images >= 11x11");
    Image ua = a.to_unit(), ub = b.to_unit();

    static const std::vector<double> g = [] {
        std::vector<double> k(win);
        double sum = 0.0;
        for (int i = 0; i < win; ++i) {
            double d = i - (win - 1) / 2.0;
            k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += k[i];
        }
        for (auto& v : k) v /= sum;
        return k;
    }();

    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const int h = a.height(), w = a.width();
    double total = 0.0;

    for (int c = 0; c < a.channels(); ++c) {
        double acc = 0.0;
        std::size_t n = 0;
        for (int y = 0; y + win <= h; ++y) {
            for (int x = 0; x + win <= w; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < win; ++i) {
                    for (int j = 0; j < win; ++j) {
                        double wgt = g[i] * g[j];
                        double va = ua.at(c, y + i, x + j);
                        double vb = ub.at(c, y + i, x + j);
                        mx += wgt * va;
                        my += wgt * vb;
                        sxx += wgt * va * va;
                        syy += wgt * vb * vb;
                        sxy += wgt * va * vb;
                    }
                }
                sxx -= mx * mx;
                syy -= my * my;
                sxy -= mx * my;
                double num = (2 * mx * my + c1) * (2 * sxy + c2);
                double den = (mx * mx + my * my + c1) * (sxx + syy + c2);
                acc += num / den;
                ++n;
            }
        }
        total += acc / static_cast<double>(n);
    }
    return total / a.channels();
}

struct BBox {
    int top = 0, left = 0, bottom = 0, right = 0; // half-open: [top,bottom) x [left,right)
};

inline void check_bbox(const BBox& box, int h, int w) {
    if (box.top < 0 || box.left < 0 || box.bottom > h || box.right > w ||
        box.top >= box.bottom || box.left >= box.right)
        throw std::invalid_argument("bbox out of bounds or degenerate");
}

inline Image crop_bbox(const Image& img, const BBox& box) {
    check_bbox(box, img.height(), img.width());
    Image out(img.channels(), box.bottom - box.top, box.right - box.left, img.range());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = box.top; y < box.bottom; ++y)
            for (int x = box.left; x < box.right; ++x)
                out.at(c, y - box.top, x - box.left) = img.at(c, y, x);
    return out;
}

inline BinaryMask zero_outside_bbox(const BinaryMask& m, const BBox& box) {
    check_bbox(box, m.height(), m.width());
    BinaryMask out(m.height(), m.width());
    for (int y = box.top; y < box.bottom; ++y)
        for (int x = box.left; x < box.right; ++x) out.at(y, x) = m.at(y, x);
    return out;
}

} // namespace pseudoblur
