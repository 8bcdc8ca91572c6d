#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pseudoblur/autodiff.hpp"
#include "pseudoblur/image.hpp"
#include "pseudoblur/nn.hpp"

namespace pseudoblur {

// Batch-mean discriminator outputs on the real and fake sides. Each side is
// the mean over the batch of per-image patch-map means, so both lie in [0,1].
struct AdvScores {
    double real_score = 0.0;
    double fake_score = 0.0;
};

// LSGAN penalties on scalar scores.
inline double deblur_disc_loss(const AdvScores& s) {
    return 0.5 * ((s.real_score - 1.0) * (s.real_score - 1.0) + s.fake_score * s.fake_score);
}

inline double deblur_gen_loss(double l1, const AdvScores& s) {
    return l1 + 0.5 * (s.fake_score - 1.0) * (s.fake_score - 1.0);
}

inline double reblur_disc_loss(const AdvScores& s) { return deblur_disc_loss(s); }

inline double reblur_gen_loss(const AdvScores& s, double content) {
    return content + 0.5 * (s.fake_score - 1.0) * (s.fake_score - 1.0);
}

// ---------------------------------------------------------------------------
// Image-level losses (metric/test path)
// ---------------------------------------------------------------------------

inline double l1_loss(const std::vector<Image>& a, const std::vector<Image>& b) {
    if (a.empty() || a.size() != b.size()) throw std::invalid_argument("l1_loss batch mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].same_shape(b[i])) throw std::invalid_argument("l1_loss shape mismatch");
        double item = 0.0;
        const auto& da = a[i].tensor().data;
        const auto& db = b[i].tensor().data;
        for (std::size_t j = 0; j < da.size(); ++j)
            item += std::abs(static_cast<double>(da[j]) - static_cast<double>(db[j]));
        acc += item / static_cast<double>(da.size());
    }
    return acc / static_cast<double>(a.size());
}

inline double l1_loss(const Image& a, const Image& b) {
    return l1_loss(std::vector<Image>{a}, std::vector<Image>{b});
}

// Eq-4-style content loss: mean |y(B) - y(R)| on unit-range luma.
inline double reblur_content_loss(const std::vector<Image>& b_batch,
                                  const std::vector<Image>& r_batch) {
    if (b_batch.empty() || b_batch.size() != r_batch.size())
        throw std::invalid_argument("reblur_content_loss batch mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < b_batch.size(); ++i) {
        if (!b_batch[i].same_shape(r_batch[i]))
            throw std::invalid_argument("reblur_content_loss shape mismatch");
        Image yb = rgb_to_y(b_batch[i].to_unit());
        Image yr = rgb_to_y(r_batch[i].to_unit());
        double item = 0.0;
        for (std::size_t j = 0; j < yb.tensor().data.size(); ++j)
            item += std::abs(static_cast<double>(yb.tensor().data[j]) -
                             static_cast<double>(yr.tensor().data[j]));
        acc += item / static_cast<double>(yb.tensor().data.size());
    }
    return acc / static_cast<double>(b_batch.size());
}

inline double luma_l1(const Image& a, const Image& b) {
    return reblur_content_loss({a}, {b});
}

// Task loss of the meta-transfer inner loop: full-RGB L1 on the first deblur
// plus luma L1 on the second deblur.
inline double meta_task_loss(const Image& s_star, const Image& d_in, const Image& d_out) {
    if (!s_star.same_shape(d_in) || !s_star.same_shape(d_out))
        throw std::invalid_argument("meta_task_loss shape mismatch");
    return l1_loss(s_star, d_in) + luma_l1(s_star, d_out);
}

// Self-supervised meta-test loss; D* replaces the sharp target.
inline double meta_test_loss(const Image& d_star, const Image& d_in, const Image& d_out) {
    return meta_task_loss(d_star, d_in, d_out);
}

inline double mean_score(const Tensor<float>& score_map) {
    double acc = 0.0;
    for (float v : score_map.data) acc += v;
    return acc / static_cast<double>(score_map.data.size());
}

// Eq. 1: batch means of the global discriminator on sharp (real) and
// deblurred (fake) batches.
inline AdvScores deblur_adv_scores(const DiscriminatorSpec& spec, const ParamSet& disc,
                                   const std::vector<Image>& s_batch,
                                   const std::vector<Image>& d_batch) {
    if (s_batch.empty() || s_batch.size() != d_batch.size())
        throw std::invalid_argument("deblur_adv_scores batch mismatch");
    AdvScores out;
    for (const auto& img : s_batch) out.real_score += mean_score(discriminator_forward(spec, disc, img));
    for (const auto& img : d_batch) out.fake_score += mean_score(discriminator_forward(spec, disc, img));
    out.real_score /= static_cast<double>(s_batch.size());
    out.fake_score /= static_cast<double>(d_batch.size());
    return out;
}

// Eqs. 5-6 single-side score: (1/3b) sum of global, body-masked and
// scene-masked discriminator means. Mv is derived as 1 - Mu.
inline double reblur_three_way_score(const DiscriminatorSpec& spec, const ParamSet& disc_glo,
                                     const ParamSet& disc_u, const ParamSet& disc_v,
                                     const std::vector<BinaryMask>& mu,
                                     const std::vector<Image>& batch) {
    if (batch.empty() || batch.size() != mu.size())
        throw std::invalid_argument("reblur score batch/mask mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].height() != mu[i].height() || batch[i].width() != mu[i].width())
            throw std::invalid_argument("mask/image shape mismatch");
        BinaryMask mv = invert(mu[i]);
        acc += mean_score(discriminator_forward(spec, disc_glo, batch[i]));
        acc += mean_score(discriminator_forward(spec, disc_u, apply_mask(batch[i], mu[i])));
        acc += mean_score(discriminator_forward(spec, disc_v, apply_mask(batch[i], mv)));
    }
    return acc / (3.0 * static_cast<double>(batch.size()));
}

inline AdvScores reblur_adv_scores(const DiscriminatorSpec& spec, const ParamSet& disc_glo,
                                   const ParamSet& disc_u, const ParamSet& disc_v,
                                   const std::vector<BinaryMask>& mu,
                                   const std::vector<Image>& real_batch,
                                   const std::vector<Image>& fake_batch) {
    AdvScores out;
    out.real_score = reblur_three_way_score(spec, disc_glo, disc_u, disc_v, mu, real_batch);
    out.fake_score = reblur_three_way_score(spec, disc_glo, disc_u, disc_v, mu, fake_batch);
    return out;
}

// ---------------------------------------------------------------------------
// Graph-level building blocks (training path)
// ---------------------------------------------------------------------------

namespace lossops {

// mean over batch of per-map means -> scalar score
template <typename T>
Var<T> batch_mean_score(Graph<T>& g, const std::vector<Var<T>>& maps) {
    std::vector<Var<T>> items;
    items.reserve(maps.size());
    for (Var<T> m : maps) items.push_back(ops::mean_all(g, m));
    return ops::linear_combo(g, items, std::vector<T>(items.size(), T(1.0 / static_cast<double>(items.size()))));
}

// 0.5 * ((real - 1)^2 + fake^2)
template <typename T>
Var<T> lsgan_disc_loss(Graph<T>& g, Var<T> real_score, Var<T> fake_score) {
    Var<T> r = ops::square(g, ops::affine(g, real_score, T(1), T(-1)));
    Var<T> f = ops::square(g, fake_score);
    return ops::linear_combo(g, std::vector<Var<T>>{r, f}, std::vector<T>{T(0.5), T(0.5)});
}

// 0.5 * (fake - 1)^2
template <typename T>
Var<T> lsgan_gen_term(Graph<T>& g, Var<T> fake_score) {
    Var<T> f = ops::square(g, ops::affine(g, fake_score, T(1), T(-1)));
    return ops::linear_combo(g, std::vector<Var<T>>{f}, std::vector<T>{T(0.5)});
}

// mean |y(a) - y(b)| with signed-range inputs converted to unit first
template <typename T>
Var<T> luma_l1(Graph<T>& g, Var<T> a_signed, Var<T> b_signed) {
    Var<T> ya = ops::luma(g, ops::affine(g, a_signed, T(0.5), T(0.5)));
    Var<T> yb = ops::luma(g, ops::affine(g, b_signed, T(0.5), T(0.5)));
    return ops::l1(g, ya, yb);
}

// ||target - d_in|| + ||y(target) - y(d_out)|| over a batch of items
template <typename T>
Var<T> sequence_loss(Graph<T>& g, const std::vector<Var<T>>& target,
                     const std::vector<Var<T>>& d_in, const std::vector<Var<T>>& d_out) {
    if (target.empty() || target.size() != d_in.size() || target.size() != d_out.size())
        throw std::invalid_argument("sequence_loss batch mismatch");
    std::vector<Var<T>> items;
    items.reserve(target.size() * 2);
    for (std::size_t i = 0; i < target.size(); ++i) {
        items.push_back(ops::l1(g, target[i], d_in[i]));
        items.push_back(luma_l1(g, target[i], d_out[i]));
    }
    return ops::linear_combo(g, items,
                             std::vector<T>(items.size(), T(1.0 / static_cast<double>(target.size()))));
}

} // namespace lossops

} // namespace pseudoblur
