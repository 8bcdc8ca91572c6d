#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pseudoblur/autodiff.hpp"
#include "pseudoblur/image.hpp"
#include "pseudoblur/rng.hpp"
#include "pseudoblur/tensor.hpp"

namespace pseudoblur {

// Named, shaped, ordered parameter collection for one network.
template <typename T>
class ParamSetT {
public:
    ParamSetT() = default;
    explicit ParamSetT(std::string stage_tag) : stage_tag_(std::move(stage_tag)) {}

    void add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter " + name);
        return entries_[it->second].second;
    }
    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter " + name);
        return entries_[it->second].second;
    }

    std::size_t size() const { return entries_.size(); }
    const std::pair<std::string, Tensor<T>>& entry(std::size_t i) const { return entries_[i]; }
    std::pair<std::string, Tensor<T>>& entry(std::size_t i) { return entries_[i]; }

    const std::string& stage_tag() const { return stage_tag_; }
    void set_stage_tag(std::string tag) { stage_tag_ = std::move(tag); }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries_) n += t.data.size();
        return n;
    }

    // name -> shape inventory must match exactly for checkpoint compatibility
    template <typename U>
    bool same_inventory(const ParamSetT<U>& o) const {
        if (size() != o.size()) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            if (entries_[i].first != o.entry(i).first) return false;
            if (entries_[i].second.shape != o.entry(i).second.shape) return false;
        }
        return true;
    }

    // FNV-1a over raw value bytes; used to assert freeze contracts.
    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&h](const unsigned char* p, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                h ^= p[i];
                h *= 0x100000001b3ULL;
            }
        };
        for (const auto& [name, t] : entries_) {
            mix(reinterpret_cast<const unsigned char*>(name.data()), name.size());
            mix(reinterpret_cast<const unsigned char*>(t.data.data()), t.data.size() * sizeof(T));
        }
        return h;
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
    std::map<std::string, std::size_t> index_;
    std::string stage_tag_;
};

using ParamSet = ParamSetT<float>;

template <typename T, typename U>
ParamSetT<T> paramset_cast(const ParamSetT<U>& src) {
    ParamSetT<T> out(src.stage_tag());
    for (std::size_t i = 0; i < src.size(); ++i)
        out.add(src.entry(i).first, tensor_cast<T>(src.entry(i).second));
    return out;
}

// Encoder/decoder generator of Tables 1 and 3. Channel plan with base width w:
// 3 -> w -> w -> 2w -> [res blocks at 4w] -> 2w -> w -> 3. The first residual
// block carries a 1x1 projection on its skip path to bridge the 2w -> 4w seam.
struct GeneratorSpec {
    int base_width = 64;
    int res_blocks = 9;

    int c0() const { return base_width; }
    int c1() const { return base_width; }
    int c2() const { return 2 * base_width; }
    int cres() const { return 4 * base_width; }

    static GeneratorSpec full() { return {64, 9}; }
    static GeneratorSpec toy() { return {4, 1}; }
};

// Patch discriminator of Tables 2 and 4: four stride-2 4x4 convs, one
// stride-1 4x4 conv, then a stride-1 4x4 conv to 1 channel with Sigmoid.
struct DiscriminatorSpec {
    int base_width = 64;

    int c(int layer) const { // layer 1..4
        int w = base_width;
        for (int i = 1; i < layer; ++i) w = std::min(8 * base_width, 2 * w);
        return w;
    }
    int c5() const { return 8 * base_width; }

    static DiscriminatorSpec full() { return {64}; }
    static DiscriminatorSpec toy() { return {4}; }
};

inline constexpr float kInstanceNormEps = 1e-5f;
inline constexpr float kLeakySlope = 0.2f;
inline constexpr float kInitStd = 0.02f;

namespace detail {

inline Tensor<float> normal_tensor(std::vector<int> shape, Rng& rng, float std_dev) {
    Tensor<float> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<float>(rng.normal()) * std_dev;
    return t;
}

inline void add_conv(ParamSet& ps, const std::string& name, int oc, int ic, int k, Rng& rng) {
    ps.add(name + ".w", normal_tensor({oc, ic, k, k}, rng, kInitStd));
    ps.add(name + ".b", Tensor<float>({oc}, 0.0f));
}

inline void add_in(ParamSet& ps, const std::string& name, int c) {
    ps.add(name + ".g", Tensor<float>({c}, 1.0f));
    ps.add(name + ".b", Tensor<float>({c}, 0.0f));
}

} // namespace detail

inline ParamSet init_generator_params(const GeneratorSpec& spec, std::uint64_t seed,
                                      const std::string& stage_tag) {
    Rng rng = Rng(seed).child("generator");
    ParamSet ps(stage_tag);
    detail::add_conv(ps, "enc0", spec.c0(), 3, 7, rng);
    detail::add_in(ps, "enc0.in", spec.c0());
    detail::add_conv(ps, "enc1", spec.c1(), spec.c0(), 3, rng);
    detail::add_in(ps, "enc1.in", spec.c1());
    detail::add_conv(ps, "enc2", spec.c2(), spec.c1(), 3, rng);
    detail::add_in(ps, "enc2.in", spec.c2());
    for (int i = 1; i <= spec.res_blocks; ++i) {
        const std::string base = "res" + std::to_string(i);
        const int in_c = i == 1 ? spec.c2() : spec.cres();
        if (i == 1) detail::add_conv(ps, base + ".proj", spec.cres(), in_c, 1, rng);
        detail::add_conv(ps, base + ".c1", spec.cres(), in_c, 3, rng);
        detail::add_in(ps, base + ".in1", spec.cres());
        detail::add_conv(ps, base + ".c2", spec.cres(), spec.cres(), 3, rng);
        detail::add_in(ps, base + ".in2", spec.cres());
    }
    detail::add_conv(ps, "dec1", spec.c2(), spec.cres(), 3, rng);
    detail::add_in(ps, "dec1.in", spec.c2());
    detail::add_conv(ps, "dec2", spec.c0(), spec.c2(), 3, rng);
    detail::add_in(ps, "dec2.in", spec.c0());
    detail::add_conv(ps, "out", 3, spec.c0(), 7, rng);
    return ps;
}

inline ParamSet init_discriminator_params(const DiscriminatorSpec& spec, std::uint64_t seed,
                                          const std::string& stage_tag) {
    Rng rng = Rng(seed).child("discriminator");
    ParamSet ps(stage_tag);
    int prev = 3;
    for (int l = 1; l <= 4; ++l) {
        const std::string base = "d" + std::to_string(l);
        detail::add_conv(ps, base, spec.c(l), prev, 4, rng);
        detail::add_in(ps, base + ".in", spec.c(l));
        prev = spec.c(l);
    }
    detail::add_conv(ps, "d5", spec.c5(), prev, 4, rng);
    detail::add_in(ps, "d5.in", spec.c5());
    detail::add_conv(ps, "out", 1, spec.c5(), 4, rng);
    return ps;
}

// Parameters bound into a graph as leaf nodes.
template <typename T>
struct BoundParams {
    std::unordered_map<std::string, Var<T>> vars;

    Var<T> operator[](const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw std::out_of_range("unbound parameter " + name);
        return it->second;
    }
};

template <typename T, typename U>
BoundParams<T> bind_params(Graph<T>& g, const ParamSetT<U>& ps, bool trainable) {
    BoundParams<T> out;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& [name, t] = ps.entry(i);
        out.vars.emplace(name, g.input(tensor_cast<T>(t), trainable));
    }
    return out;
}

// Gradients read back in ParamSet order after Graph::backward.
template <typename T, typename U>
ParamSetT<T> collect_grads(const ParamSetT<U>& ps, const BoundParams<T>& bound) {
    ParamSetT<T> out(ps.stage_tag());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& name = ps.entry(i).first;
        out.add(name, bound[name]->grad);
    }
    return out;
}

namespace nnops {

template <typename T>
Var<T> conv_in_relu(Graph<T>& g, Var<T> x, const BoundParams<T>& p, const std::string& name,
                    int stride, int pad) {
    Var<T> h = ops::conv2d(g, x, p[name + ".w"], p[name + ".b"], stride, pad);
    h = ops::instance_norm(g, h, p[name + ".in.g"], p[name + ".in.b"], T(kInstanceNormEps));
    return ops::relu(g, h);
}

template <typename T>
Var<T> residual_block(Graph<T>& g, Var<T> x, const BoundParams<T>& p, const std::string& base,
                      bool with_projection) {
    Var<T> skip = x;
    if (with_projection)
        skip = ops::conv2d(g, x, p[base + ".proj.w"], p[base + ".proj.b"], 1, 0);
    Var<T> f = ops::conv2d(g, x, p[base + ".c1.w"], p[base + ".c1.b"], 1, 1);
    f = ops::instance_norm(g, f, p[base + ".in1.g"], p[base + ".in1.b"], T(kInstanceNormEps));
    f = ops::relu(g, f);
    f = ops::conv2d(g, f, p[base + ".c2.w"], p[base + ".c2.b"], 1, 1);
    f = ops::instance_norm(g, f, p[base + ".in2.g"], p[base + ".in2.b"], T(kInstanceNormEps));
    return ops::add(g, skip, f);
}

// Full generator pass on a signed-range (3,H,W) input; H, W divisible by 4.
// Ends with a global skip: out = clamp(x + tanh(conv)), the DeblurGAN-style
// residual formulation that keeps the identity reachable at init.
template <typename T>
Var<T> generator_apply(Graph<T>& g, const GeneratorSpec& spec, const BoundParams<T>& p, Var<T> x) {
    if (x->val.rank() != 3 || x->val.dim(0) != 3)
        throw std::invalid_argument("generator expects (3,H,W) input");
    if (x->val.dim(1) % 4 != 0 || x->val.dim(2) % 4 != 0)
        throw std::invalid_argument("generator input dims must be divisible by 4");
    Var<T> h = conv_in_relu(g, x, p, "enc0", 1, 3);
    h = conv_in_relu(g, h, p, "enc1", 2, 1);
    h = conv_in_relu(g, h, p, "enc2", 2, 1);
    for (int i = 1; i <= spec.res_blocks; ++i)
        h = residual_block(g, h, p, "res" + std::to_string(i), i == 1);
    h = ops::conv_transpose2d(g, h, p["dec1.w"], p["dec1.b"], 2, 1, 1);
    h = ops::instance_norm(g, h, p["dec1.in.g"], p["dec1.in.b"], T(kInstanceNormEps));
    h = ops::relu(g, h);
    h = ops::conv_transpose2d(g, h, p["dec2.w"], p["dec2.b"], 2, 1, 1);
    h = ops::instance_norm(g, h, p["dec2.in.g"], p["dec2.in.b"], T(kInstanceNormEps));
    h = ops::relu(g, h);
    Var<T> y = ops::conv2d(g, h, p["out.w"], p["out.b"], 1, 3);
    y = ops::tanh_act(g, y);
    return ops::clamp_pm1(g, ops::add(g, x, y));
}

// Discriminator pass: (3,H,W) with H, W divisible by 16 -> (1,H/16,W/16)
// score map in (0,1).
template <typename T>
Var<T> discriminator_apply(Graph<T>& g, const DiscriminatorSpec& spec, const BoundParams<T>& p,
                           Var<T> x) {
    if (x->val.rank() != 3 || x->val.dim(0) != 3)
        throw std::invalid_argument("discriminator expects (3,H,W) input");
    if (x->val.dim(1) % 16 != 0 || x->val.dim(2) % 16 != 0)
        throw std::invalid_argument("discriminator input dims must be divisible by 16");
    (void)spec;
    Var<T> h = x;
    for (int l = 1; l <= 4; ++l) {
        const std::string base = "d" + std::to_string(l);
        h = ops::conv2d(g, h, p[base + ".w"], p[base + ".b"], 2, 1);
        h = ops::instance_norm(g, h, p[base + ".in.g"], p[base + ".in.b"], T(kInstanceNormEps));
        h = ops::leaky_relu(g, h, T(kLeakySlope));
    }
    // 4x4 stride-1 layers use pad 1/2 asymmetric padding to hold H/16 x W/16
    h = ops::conv2d(g, h, p["d5.w"], p["d5.b"], 1, 1, 1);
    h = ops::instance_norm(g, h, p["d5.in.g"], p["d5.in.b"], T(kInstanceNormEps));
    h = ops::leaky_relu(g, h, T(kLeakySlope));
    Var<T> s = ops::conv2d(g, h, p["out.w"], p["out.b"], 1, 1, 1);
    return ops::sigmoid(g, s);
}

} // namespace nnops

// Contract-checking single-image forwards (pure, deterministic).

inline Tensor<float> image_to_net_input(const Image& img) {
    return img.to_signed().tensor();
}

inline Image deblur_forward(const GeneratorSpec& spec, const ParamSet& theta, const Image& img) {
    if (img.channels() != 3) throw std::invalid_argument("deblur_forward expects 3 channels");
    Graph<float> g;
    Var<float> x = g.input(image_to_net_input(img));
    BoundParams<float> p = bind_params(g, theta, false);
    Var<float> y = nnops::generator_apply(g, spec, p, x);
    return Image(y->val, Range::Signed);
}

inline Image reblur_forward(const GeneratorSpec& spec, const ParamSet& omega, const Image& img) {
    return deblur_forward(spec, omega, img); // identical architecture (Tables 1 vs 3)
}

inline Tensor<float> discriminator_forward(const DiscriminatorSpec& spec, const ParamSet& d,
                                           const Image& img) {
    Graph<float> g;
    Var<float> x = g.input(image_to_net_input(img));
    BoundParams<float> p = bind_params(g, d, false);
    return nnops::discriminator_apply(g, spec, p, x)->val;
}

} // namespace pseudoblur
