#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pseudoblur/checkpoint.hpp"
#include "pseudoblur/image.hpp"
#include "pseudoblur/losses.hpp"
#include "pseudoblur/nn.hpp"
#include "pseudoblur/optim.hpp"
#include "pseudoblur/prior.hpp"
#include "pseudoblur/synth.hpp"

namespace pseudoblur {

struct TraceEntry {
    std::int64_t step = 0;
    std::string name;
    double value = 0.0;
};

struct StageReport {
    std::vector<TraceEntry> trace;
    std::map<std::string, double> metrics;
    std::vector<std::string> notes;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;

    void add(std::int64_t step, const std::string& name, double value) {
        trace.push_back({step, name, value});
    }
};

inline void write_report(const std::string& path, const StageReport& rep,
                         const std::string& header = "") {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report " + path);
    char buf[64];
    if (!header.empty()) {
        std::istringstream hs(header);
        std::string line;
        while (std::getline(hs, line)) out << "# " << line << "\n";
    }
    out << "# seed=" << rep.seed << " wall_seconds=" << rep.wall_seconds << "\n";
    for (const auto& note : rep.notes) out << "# note: " << note << "\n";
    for (const auto& e : rep.trace) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.value);
        out << e.step << "\t" << e.name << "\t" << buf << "\n";
    }
    for (const auto& [name, value] : rep.metrics) {
        std::snprintf(buf, sizeof(buf), "%.17g", value);
        out << -1 << "\tmetric:" << name << "\t" << buf << "\n";
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace train_detail {

inline Tensor<float> to_net(const Image& img) { return img.to_signed().tensor(); }

inline Tensor<float> mask_to_tensor(const BinaryMask& m) {
    Tensor<float> t({1, m.height(), m.width()});
    for (std::size_t i = 0; i < m.data().size(); ++i) t.data[i] = m.data()[i] ? 1.0f : 0.0f;
    return t;
}

inline std::vector<int> sample_batch_indices(Rng& rng, int avail, int batch) {
    if (avail < 1) throw std::invalid_argument("empty training split");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(batch));
    if (batch >= avail) {
        for (int i = 0; i < batch; ++i) out.push_back(i % avail);
        return out;
    }
    std::vector<int> idx(static_cast<std::size_t>(avail));
    for (int i = 0; i < avail; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < batch; ++i) {
        int j = i + static_cast<int>(rng.index(static_cast<std::uint64_t>(avail - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        out.push_back(idx[static_cast<std::size_t>(i)]);
    }
    return out;
}

template <typename T>
struct SequenceVars {
    Var<T> d_in, r, d_out;
};

// B -> theta -> D_in -> omega -> R -> theta -> D_out
template <typename T>
SequenceVars<T> apply_sequence(Graph<T>& g, const GeneratorSpec& spec, const BoundParams<T>& theta,
                               const BoundParams<T>& omega, Var<T> b) {
    SequenceVars<T> out;
    out.d_in = nnops::generator_apply(g, spec, theta, b);
    out.r = nnops::generator_apply(g, spec, omega, out.d_in);
    out.d_out = nnops::generator_apply(g, spec, theta, out.r);
    return out;
}

inline void check_finite(double v, const std::string& what, std::uint64_t step) {
    if (!std::isfinite(v))
        throw NumericError(what + " is not finite at step " + std::to_string(step));
}

} // namespace train_detail

struct TrainConfig {
    GeneratorSpec gen_spec = GeneratorSpec::toy();
    DiscriminatorSpec disc_spec = DiscriminatorSpec::toy();
    int steps = 600;
    int batch = 2;
    double lr = 1e-4;
    double clip_norm = 10.0;
    std::uint64_t seed = 1;
    int holdout = 0; // pairs at the dataset tail reserved for metrics
    int patch = 0;   // 0 = train on full images
    bool finetune_reblur = false;
};

struct GanState {
    ParamSet gen;
    ParamSet disc;
    OptimState opt_gen;
    OptimState opt_disc;
    std::uint64_t step = 0;
};

inline GanState init_deblur_state(const TrainConfig& cfg) {
    GanState st;
    st.gen = init_generator_params(cfg.gen_spec, cfg.seed, "theta_0");
    st.disc = init_discriminator_params(cfg.disc_spec, cfg.seed, "disc_deb_glo");
    st.opt_gen = OptimState::adam(cfg.lr);
    st.opt_disc = OptimState::adam(cfg.lr);
    return st;
}

inline double mean_holdout_psnr(const GeneratorSpec& spec, const ParamSet& theta,
                                const Dataset& ds, int holdout) {
    if (holdout <= 0) return 0.0;
    const int n = static_cast<int>(ds.pairs.size());
    double acc = 0.0;
    for (int i = n - holdout; i < n; ++i) {
        Image d = deblur_forward(spec, theta, ds.pairs[static_cast<std::size_t>(i)].b);
        acc += psnr(d, ds.pairs[static_cast<std::size_t>(i)].s);
    }
    return acc / holdout;
}

// Initial deblurring stage (and, with cfg.finetune_reblur, the naive
// fine-tune variant that also deblurs the frozen reblurrer's output).
// Alternates one discriminator and one generator ADAM update per step.
inline StageReport train_initial_deblur(GanState& st, const Dataset& ds, const TrainConfig& cfg,
                                        const ParamSet* omega_frozen = nullptr) {
    using namespace train_detail;
    if (ds.pairs.empty()) throw std::invalid_argument("dataset is empty");
    if (cfg.finetune_reblur && omega_frozen == nullptr)
        throw std::invalid_argument("finetune_reblur requires a frozen reblurrer");
    const int avail = static_cast<int>(ds.pairs.size()) - cfg.holdout;
    if (avail < 1) throw std::invalid_argument("holdout leaves no training pairs");

    StageReport rep;
    rep.seed = cfg.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const Rng root = Rng(cfg.seed).child(cfg.finetune_reblur ? "finetune" : "deblur");

    for (; st.step < static_cast<std::uint64_t>(cfg.steps); ++st.step) {
        Rng rng = root.child(st.step);
        auto idx = sample_batch_indices(rng, avail, cfg.batch);
        std::vector<Tensor<float>> b_sig, s_sig, d_sig;
        for (int i : idx) {
            BlurPair pair = ds.pairs[static_cast<std::size_t>(i)];
            if (cfg.patch > 0) pair = sample_patches(pair, cfg.patch, rng);
            b_sig.push_back(to_net(pair.b));
            s_sig.push_back(to_net(pair.s));
            d_sig.push_back(deblur_forward(cfg.gen_spec, st.gen, pair.b).tensor());
        }

        // discriminator update (generator output detached)
        double disc_loss_v;
        {
            Graph<float> g;
            auto dp = bind_params(g, st.disc, true);
            std::vector<Var<float>> real_maps, fake_maps;
            for (std::size_t i = 0; i < b_sig.size(); ++i) {
                real_maps.push_back(nnops::discriminator_apply(g, cfg.disc_spec, dp, g.input(s_sig[i])));
                fake_maps.push_back(nnops::discriminator_apply(g, cfg.disc_spec, dp, g.input(d_sig[i])));
            }
            Var<float> loss = lossops::lsgan_disc_loss(g, lossops::batch_mean_score(g, real_maps),
                                                       lossops::batch_mean_score(g, fake_maps));
            disc_loss_v = to_double(loss->val[0]);
            check_finite(disc_loss_v, "discriminator loss", st.step);
            g.backward(loss);
            ParamSet grads = collect_grads(st.disc, dp);
            if (!grads_finite(grads)) throw NumericError("NaN discriminator gradient");
            clip_grads(grads, cfg.clip_norm);
            st.opt_disc.step(st.disc, grads);
        }

        // generator update
        double gen_loss_v, l1_v;
        {
            Graph<float> g;
            auto tp = bind_params(g, st.gen, true);
            auto dp = bind_params(g, st.disc, false);
            BoundParams<float> op;
            if (cfg.finetune_reblur) op = bind_params(g, *omega_frozen, false);

            std::vector<Var<float>> items;
            std::vector<float> coeffs;
            std::vector<Var<float>> fake_maps;
            const float inv_b = 1.0f / static_cast<float>(b_sig.size());
            double l1_acc = 0.0;
            for (std::size_t i = 0; i < b_sig.size(); ++i) {
                Var<float> s = g.input(s_sig[i]);
                Var<float> d = nnops::generator_apply(g, cfg.gen_spec, tp, g.input(b_sig[i]));
                Var<float> term = ops::l1(g, s, d);
                l1_acc += to_double(term->val[0]);
                items.push_back(term);
                coeffs.push_back(inv_b);
                fake_maps.push_back(nnops::discriminator_apply(g, cfg.disc_spec, dp, d));
                if (cfg.finetune_reblur) {
                    Var<float> r = nnops::generator_apply(g, cfg.gen_spec, op, d);
                    Var<float> d_out = nnops::generator_apply(g, cfg.gen_spec, tp, r);
                    items.push_back(lossops::luma_l1(g, s, d_out));
                    coeffs.push_back(inv_b);
                }
            }
            items.push_back(lossops::lsgan_gen_term(g, lossops::batch_mean_score(g, fake_maps)));
            coeffs.push_back(1.0f);
            Var<float> loss = ops::linear_combo(g, items, coeffs);
            gen_loss_v = to_double(loss->val[0]);
            l1_v = l1_acc * inv_b;
            check_finite(gen_loss_v, "generator loss", st.step);
            g.backward(loss);
            ParamSet grads = collect_grads(st.gen, tp);
            if (!grads_finite(grads)) throw NumericError("NaN generator gradient");
            clip_grads(grads, cfg.clip_norm);
            st.opt_gen.step(st.gen, grads);
        }

        rep.add(static_cast<std::int64_t>(st.step), "disc_loss", disc_loss_v);
        rep.add(static_cast<std::int64_t>(st.step), "gen_loss", gen_loss_v);
        rep.add(static_cast<std::int64_t>(st.step), "l1", l1_v);
    }
    st.gen.set_stage_tag("theta_T");

    if (cfg.holdout > 0) {
        const int n = static_cast<int>(ds.pairs.size());
        double acc_d = 0.0, acc_b = 0.0;
        for (int i = n - cfg.holdout; i < n; ++i) {
            const BlurPair& pair = ds.pairs[static_cast<std::size_t>(i)];
            Image d = deblur_forward(cfg.gen_spec, st.gen, pair.b);
            acc_d += psnr(d, pair.s);
            acc_b += psnr(pair.b, pair.s);
        }
        rep.metrics["holdout_psnr_deblur"] = acc_d / cfg.holdout;
        rep.metrics["holdout_psnr_blur"] = acc_b / cfg.holdout;
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Pseudo-blur synthesizer stage
// ---------------------------------------------------------------------------

struct ReblurConfig {
    GeneratorSpec gen_spec = GeneratorSpec::toy();
    DiscriminatorSpec disc_spec = DiscriminatorSpec::toy();
    // phase (i) on sharp inputs, (ii) on deblurred inputs, (iii) on the
    // human-centric set with region discriminators; 1:2:2 step ratio
    int steps_phase1 = 60;
    int steps_phase2 = 120;
    int steps_phase3 = 120;
    int batch = 2;
    double lr = 1e-4;
    double clip_norm = 10.0;
    std::uint64_t seed = 2;
    int holdout = 0;
    PriorConfig prior;
};

struct ReblurState {
    ParamSet omega;
    ParamSet disc_glo, disc_u, disc_v;
    OptimState opt_omega, opt_glo, opt_u, opt_v;
    std::uint64_t step = 0;
};

inline ReblurState init_reblur_state(const ReblurConfig& cfg) {
    ReblurState st;
    st.omega = init_generator_params(cfg.gen_spec, cfg.seed + 101, "omega_0");
    st.disc_glo = init_discriminator_params(cfg.disc_spec, cfg.seed + 102, "disc_reb_glo");
    st.disc_u = init_discriminator_params(cfg.disc_spec, cfg.seed + 103, "disc_reb_u");
    st.disc_v = init_discriminator_params(cfg.disc_spec, cfg.seed + 104, "disc_reb_v");
    st.opt_omega = OptimState::adam(cfg.lr);
    st.opt_glo = OptimState::adam(cfg.lr);
    st.opt_u = OptimState::adam(cfg.lr);
    st.opt_v = OptimState::adam(cfg.lr);
    return st;
}

// Trains omega with the deblurring network frozen. scene_ds feeds phases
// (i)/(ii); human_ds (keypointed pairs) feeds phase (iii).
inline StageReport train_reblurrer(ReblurState& st, const ParamSet& theta_frozen,
                                   const Dataset& scene_ds, const Dataset& human_ds,
                                   const ReblurConfig& cfg) {
    using namespace train_detail;
    const int total = cfg.steps_phase1 + cfg.steps_phase2 + cfg.steps_phase3;
    if (scene_ds.pairs.empty() || human_ds.pairs.empty())
        throw std::invalid_argument("dataset is empty");

    StageReport rep;
    rep.seed = cfg.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const Rng root = Rng(cfg.seed).child("reblur");

    for (; st.step < static_cast<std::uint64_t>(total); ++st.step) {
        const int phase = st.step < static_cast<std::uint64_t>(cfg.steps_phase1) ? 1
                          : st.step < static_cast<std::uint64_t>(cfg.steps_phase1 + cfg.steps_phase2)
                              ? 2
                              : 3;
        const Dataset& ds = phase == 3 ? human_ds : scene_ds;
        const int avail = static_cast<int>(ds.pairs.size()) - cfg.holdout;
        if (avail < 1) throw std::invalid_argument("holdout leaves no training pairs");
        Rng rng = root.child(st.step);
        auto idx = sample_batch_indices(rng, avail, cfg.batch);

        std::vector<Tensor<float>> x_sig, b_sig, r_sig;
        std::vector<Tensor<float>> mu_t, mv_t;
        for (int i : idx) {
            const BlurPair& pair = ds.pairs[static_cast<std::size_t>(i)];
            Image x = phase == 2 ? deblur_forward(cfg.gen_spec, theta_frozen, pair.b)
                                 : pair.s.to_signed();
            Image r = reblur_forward(cfg.gen_spec, st.omega, x);
            x_sig.push_back(x.tensor());
            b_sig.push_back(to_net(pair.b));
            r_sig.push_back(r.tensor());
            if (phase == 3) {
                if (pair.keypoints.valid_count() < 3)
                    throw std::invalid_argument("phase (iii) requires prior maps: keypoints missing");
                Image d = deblur_forward(cfg.gen_spec, theta_frozen, pair.b);
                auto [mu, mv] = human_prior(d, r, pair.keypoints, cfg.prior);
                mu_t.push_back(mask_to_tensor(mu));
                mv_t.push_back(mask_to_tensor(mv));
            }
        }

        const bool masked = phase == 3;

        // discriminator update
        double disc_loss_v;
        {
            Graph<float> g;
            auto gp = bind_params(g, st.disc_glo, true);
            BoundParams<float> up, vp;
            if (masked) {
                up = bind_params(g, st.disc_u, true);
                vp = bind_params(g, st.disc_v, true);
            }
            std::vector<Var<float>> real_maps, fake_maps;
            for (std::size_t i = 0; i < b_sig.size(); ++i) {
                Var<float> b = g.input(b_sig[i]);
                Var<float> r = g.input(r_sig[i]);
                real_maps.push_back(nnops::discriminator_apply(g, cfg.disc_spec, gp, b));
                fake_maps.push_back(nnops::discriminator_apply(g, cfg.disc_spec, gp, r));
                if (masked) {
                    real_maps.push_back(nnops::discriminator_apply(
                        g, cfg.disc_spec, up, ops::mul_mask(g, b, mu_t[i])));
                    fake_maps.push_back(nnops::discriminator_apply(
                        g, cfg.disc_spec, up, ops::mul_mask(g, r, mu_t[i])));
                    real_maps.push_back(nnops::discriminator_apply(
                        g, cfg.disc_spec, vp, ops::mul_mask(g, b, mv_t[i])));
                    fake_maps.push_back(nnops::discriminator_apply(
                        g, cfg.disc_spec, vp, ops::mul_mask(g, r, mv_t[i])));
                }
            }
            Var<float> loss = lossops::lsgan_disc_loss(g, lossops::batch_mean_score(g, real_maps),
                                                       lossops::batch_mean_score(g, fake_maps));
            disc_loss_v = to_double(loss->val[0]);
            check_finite(disc_loss_v, "reblur discriminator loss", st.step);
            g.backward(loss);
            ParamSet grads_glo = collect_grads(st.disc_glo, gp);
            clip_grads(grads_glo, cfg.clip_norm);
            st.opt_glo.step(st.disc_glo, grads_glo);
            if (masked) {
                ParamSet grads_u = collect_grads(st.disc_u, up);
                ParamSet grads_v = collect_grads(st.disc_v, vp);
                clip_grads(grads_u, cfg.clip_norm);
                clip_grads(grads_v, cfg.clip_norm);
                st.opt_u.step(st.disc_u, grads_u);
                st.opt_v.step(st.disc_v, grads_v);
            }
        }

        // generator update: Eq.4 content + LSGAN fake term
        double gen_loss_v, content_v;
        {
            Graph<float> g;
            auto op = bind_params(g, st.omega, true);
            auto gp = bind_params(g, st.disc_glo, false);
            BoundParams<float> up, vp;
            if (masked) {
                up = bind_params(g, st.disc_u, false);
                vp = bind_params(g, st.disc_v, false);
            }
            std::vector<Var<float>> items;
            std::vector<float> coeffs;
            std::vector<Var<float>> fake_maps;
            const float inv_b = 1.0f / static_cast<float>(b_sig.size());
            double content_acc = 0.0;
            for (std::size_t i = 0; i < b_sig.size(); ++i) {
                Var<float> b = g.input(b_sig[i]);
                Var<float> r = nnops::generator_apply(g, cfg.gen_spec, op, g.input(x_sig[i]));
                Var<float> content = lossops::luma_l1(g, b, r);
                content_acc += to_double(content->val[0]);
                items.push_back(content);
                coeffs.push_back(inv_b);
                fake_maps.push_back(nnops::discriminator_apply(g, cfg.disc_spec, gp, r));
                if (masked) {
                    fake_maps.push_back(nnops::discriminator_apply(
                        g, cfg.disc_spec, up, ops::mul_mask(g, r, mu_t[i])));
                    fake_maps.push_back(nnops::discriminator_apply(
                        g, cfg.disc_spec, vp, ops::mul_mask(g, r, mv_t[i])));
                }
            }
            items.push_back(lossops::lsgan_gen_term(g, lossops::batch_mean_score(g, fake_maps)));
            coeffs.push_back(1.0f);
            Var<float> loss = ops::linear_combo(g, items, coeffs);
            gen_loss_v = to_double(loss->val[0]);
            content_v = content_acc * inv_b;
            check_finite(gen_loss_v, "reblur generator loss", st.step);
            g.backward(loss);
            ParamSet grads = collect_grads(st.omega, op);
            if (!grads_finite(grads)) throw NumericError("NaN reblurrer gradient");
            clip_grads(grads, cfg.clip_norm);
            st.opt_omega.step(st.omega, grads);
        }

        rep.add(static_cast<std::int64_t>(st.step), "reb_disc_loss", disc_loss_v);
        rep.add(static_cast<std::int64_t>(st.step), "reb_gen_loss", gen_loss_v);
        rep.add(static_cast<std::int64_t>(st.step), "content", content_v);
    }
    st.omega.set_stage_tag("omega_T");

    if (cfg.holdout > 0) {
        const int n = static_cast<int>(human_ds.pairs.size());
        double rb = 0.0, sb = 0.0, psnr_rb = 0.0, psnr_sb = 0.0;
        for (int i = n - cfg.holdout; i < n; ++i) {
            const BlurPair& pair = human_ds.pairs[static_cast<std::size_t>(i)];
            Image r = reblur_forward(cfg.gen_spec, st.omega, pair.s.to_signed()).to_unit();
            rb += l1_loss(r, pair.b);
            sb += l1_loss(pair.s, pair.b);
            psnr_rb += psnr(r, pair.b);
            psnr_sb += psnr(pair.s, pair.b);
        }
        rep.metrics["holdout_mean_abs_r_b"] = rb / cfg.holdout;
        rep.metrics["holdout_mean_abs_s_b"] = sb / cfg.holdout;
        rep.metrics["holdout_psnr_r_b"] = psnr_rb / cfg.holdout;
        rep.metrics["holdout_psnr_s_b"] = psnr_sb / cfg.holdout;
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Meta-transfer training
// ---------------------------------------------------------------------------

struct MetaConfig {
    GeneratorSpec gen_spec = GeneratorSpec::toy();
    int outer_steps = 300;
    int tasks_train = 4;
    int tasks_test = 4;
    double alpha = 1e-2; // inner gradient-descent rate
    double beta = 1e-4;  // outer ADAM rate
    double clip_norm = 10.0;
    std::uint64_t seed = 3;
    bool second_order = false;
    int holdout = 0;
};

struct MetaState {
    ParamSet theta;
    OptimState opt;
    std::uint64_t step = 0;
};

inline MetaState init_meta_state(const ParamSet& theta_t, const MetaConfig& cfg) {
    MetaState st;
    st.theta = theta_t;
    st.theta.set_stage_tag("theta_M");
    st.opt = OptimState::adam(cfg.beta);
    return st;
}

// Exact Hessian-vector product of the task-training loss at theta along v,
// computed by running the reverse-mode gradient in dual arithmetic.
inline ParamSet hvp_task_loss(const GeneratorSpec& spec, const ParamSet& theta,
                              const ParamSet& omega, const std::vector<Tensor<float>>& b_star,
                              const std::vector<Tensor<float>>& s_star, const ParamSet& v) {
    using D = Dual<double>;
    Graph<D> g;
    BoundParams<D> tp;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const auto& [name, t] = theta.entry(i);
        Tensor<D> dual(t.shape);
        const auto& tangent = v.get(name);
        for (std::size_t j = 0; j < t.data.size(); ++j)
            dual.data[j] = D(static_cast<double>(t.data[j]), static_cast<double>(tangent.data[j]));
        tp.vars.emplace(name, g.input(std::move(dual), true));
    }
    BoundParams<D> op = bind_params<D>(g, omega, false);
    std::vector<Var<D>> targets, d_ins, d_outs;
    for (std::size_t i = 0; i < b_star.size(); ++i) {
        Var<D> b = g.input(tensor_cast<D>(b_star[i]));
        auto seq = train_detail::apply_sequence(g, spec, tp, op, b);
        targets.push_back(g.input(tensor_cast<D>(s_star[i])));
        d_ins.push_back(seq.d_in);
        d_outs.push_back(seq.d_out);
    }
    Var<D> loss = lossops::sequence_loss(g, targets, d_ins, d_outs);
    g.backward(loss);
    ParamSet out(theta.stage_tag());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const auto& name = theta.entry(i).first;
        Tensor<float> hv(theta.entry(i).second.shape);
        const auto& grad = tp[name]->grad;
        for (std::size_t j = 0; j < hv.data.size(); ++j)
            hv.data[j] = static_cast<float>(grad.data[j].t);
        out.add(name, std::move(hv));
    }
    return out;
}

// One task's loss and theta-gradient through the full sequence.
inline std::pair<double, ParamSet> task_loss_grad(const GeneratorSpec& spec, const ParamSet& theta,
                                                  const ParamSet& omega,
                                                  const std::vector<Tensor<float>>& b_star,
                                                  const std::vector<Tensor<float>>& s_star) {
    Graph<float> g;
    auto tp = bind_params(g, theta, true);
    auto op = bind_params(g, omega, false);
    std::vector<Var<float>> targets, d_ins, d_outs;
    for (std::size_t i = 0; i < b_star.size(); ++i) {
        auto seq = train_detail::apply_sequence(g, spec, tp, op, g.input(b_star[i]));
        targets.push_back(g.input(s_star[i]));
        d_ins.push_back(seq.d_in);
        d_outs.push_back(seq.d_out);
    }
    Var<float> loss = lossops::sequence_loss(g, targets, d_ins, d_outs);
    double loss_v = to_double(loss->val[0]);
    g.backward(loss);
    return {loss_v, collect_grads(theta, tp)};
}

inline StageReport meta_transfer_train(MetaState& st, const ParamSet& omega_frozen,
                                       const Dataset& ds, const MetaConfig& cfg) {
    using namespace train_detail;
    const int avail = static_cast<int>(ds.pairs.size()) - cfg.holdout;
    if (avail < cfg.tasks_train + cfg.tasks_test)
        throw std::invalid_argument("dataset too small for the task batch");

    StageReport rep;
    rep.seed = cfg.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const Rng root = Rng(cfg.seed).child("meta");

    for (; st.step < static_cast<std::uint64_t>(cfg.outer_steps); ++st.step) {
        Rng rng = root.child(st.step);
        auto idx = sample_batch_indices(rng, avail, cfg.tasks_train + cfg.tasks_test);

        ParamSet outer_grad(st.theta.stage_tag());
        for (std::size_t i = 0; i < st.theta.size(); ++i)
            outer_grad.add(st.theta.entry(i).first, Tensor<float>(st.theta.entry(i).second.shape, 0.0f));

        double sum_lte = 0.0;
        int used_tasks = 0;
        for (int i = 0; i < cfg.tasks_train && i < cfg.tasks_test; ++i) {
            BlurPair tr = augment_downsample(ds.pairs[static_cast<std::size_t>(idx[i])]);
            BlurPair te = augment_downsample(
                ds.pairs[static_cast<std::size_t>(idx[cfg.tasks_train + i])]);
            std::vector<Tensor<float>> b_tr{to_net(tr.b)}, s_tr{to_net(tr.s)};
            std::vector<Tensor<float>> b_te{to_net(te.b)}, s_te{to_net(te.s)};

            auto [ltr, g_inner] = task_loss_grad(cfg.gen_spec, st.theta, omega_frozen, b_tr, s_tr);
            if (!std::isfinite(ltr) || !grads_finite(g_inner)) {
                rep.notes.push_back("skipped task " + std::to_string(i) + " at outer step " +
                                    std::to_string(st.step) + " (non-finite inner loss)");
                continue;
            }
            clip_grads(g_inner, cfg.clip_norm);
            ParamSet theta_i = st.theta;
            theta_i.set_stage_tag("theta_i");
            sgd_step(theta_i, g_inner, cfg.alpha);

            auto [lte, g_test] = task_loss_grad(cfg.gen_spec, theta_i, omega_frozen, b_te, s_te);
            if (!std::isfinite(lte) || !grads_finite(g_test)) {
                rep.notes.push_back("skipped task " + std::to_string(i) + " at outer step " +
                                    std::to_string(st.step) + " (non-finite test loss)");
                continue;
            }
            if (cfg.second_order) {
                // d/d theta L_te(theta - a*grad L_tr(theta)) =
                //   (I - a*H_tr(theta)) * grad L_te(theta_i)
                ParamSet hv = hvp_task_loss(cfg.gen_spec, st.theta, omega_frozen, b_tr, s_tr, g_test);
                for (std::size_t p = 0; p < g_test.size(); ++p) {
                    auto& gt = g_test.entry(p).second.data;
                    const auto& hvd = hv.entry(p).second.data;
                    for (std::size_t j = 0; j < gt.size(); ++j)
                        gt[j] -= static_cast<float>(cfg.alpha) * hvd[j];
                }
            }
            for (std::size_t p = 0; p < outer_grad.size(); ++p) {
                auto& og = outer_grad.entry(p).second.data;
                const auto& gt = g_test.entry(p).second.data;
                for (std::size_t j = 0; j < og.size(); ++j) og[j] += gt[j];
            }
            sum_lte += lte;
            ++used_tasks;
            rep.add(static_cast<std::int64_t>(st.step), "task_train_loss", ltr);
            rep.add(static_cast<std::int64_t>(st.step), "task_test_loss", lte);
        }

        if (used_tasks == 0) {
            rep.notes.push_back("no usable tasks at outer step " + std::to_string(st.step));
            continue;
        }
        check_finite(sum_lte, "outer loss", st.step);
        if (!grads_finite(outer_grad)) throw NumericError("NaN outer gradient");
        clip_grads(outer_grad, cfg.clip_norm);
        st.opt.step(st.theta, outer_grad);
        rep.add(static_cast<std::int64_t>(st.step), "outer_loss", sum_lte);
    }
    st.theta.set_stage_tag("theta_M");
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Meta-testing (self-adaptation)
// ---------------------------------------------------------------------------

struct AdaptResult {
    Image d_final;
    ParamSet theta_k;
    std::vector<double> trace; // n+1 loss evaluations
    bool padded = false;
};

inline Image pad_reflect_to(const Image& img, int target_h, int target_w) {
    const int h = img.height(), w = img.width();
    auto reflect = [](int i, int n) {
        const int period = 2 * n;
        i %= period;
        if (i < 0) i += period;
        return i < n ? i : period - 1 - i;
    };
    Image out(img.channels(), target_h, target_w, img.range());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < target_h; ++y)
            for (int x = 0; x < target_w; ++x)
                out.at(c, y, x) = img.at(c, reflect(y, h), reflect(x, w));
    return out;
}

// Algorithm-2 adaptation: n gradient-descent updates on the self-supervised
// sequence loss, then a final deblur of the original input with theta_k.
inline AdaptResult meta_test_adapt(const GeneratorSpec& spec, const ParamSet& theta_m,
                                   const ParamSet& omega, const Image& b_input, int n,
                                   double alpha = 1e-2, double clip_norm = 10.0) {
    using namespace train_detail;
    if (n < 0) throw std::invalid_argument("adaptation count must be >= 0");
    const int h = b_input.height(), w = b_input.width();
    const int ph = (h + 31) / 32 * 32, pw = (w + 31) / 32 * 32;
    const bool padded = ph != h || pw != w;
    Image b = padded ? pad_reflect_to(b_input, ph, pw) : b_input;
    if (b.range() != Range::Signed) b = b.to_signed();

    Image d0 = deblur_forward(spec, theta_m, b);
    Tensor<float> b_star = downsample_2x(b).tensor();
    Tensor<float> d_star = downsample_2x(d0).tensor();

    AdaptResult out;
    out.theta_k = theta_m;
    out.padded = padded;

    auto eval_loss = [&](bool with_grad) -> double {
        Graph<float> g;
        auto tp = bind_params(g, out.theta_k, with_grad);
        auto op = bind_params(g, omega, false);
        auto seq = apply_sequence(g, spec, tp, op, g.input(b_star));
        Var<float> target = g.input(d_star);
        Var<float> loss = lossops::sequence_loss(g, std::vector<Var<float>>{target},
                                                 std::vector<Var<float>>{seq.d_in},
                                                 std::vector<Var<float>>{seq.d_out});
        double v = to_double(loss->val[0]);
        if (!std::isfinite(v)) throw NumericError("non-finite adaptation loss");
        if (with_grad) {
            g.backward(loss);
            ParamSet grads = collect_grads(out.theta_k, tp);
            if (!grads_finite(grads)) throw NumericError("non-finite adaptation gradient");
            clip_grads(grads, clip_norm);
            sgd_step(out.theta_k, grads, alpha);
        }
        return v;
    };

    for (int k = 0; k < n; ++k) out.trace.push_back(eval_loss(true));
    out.trace.push_back(eval_loss(false));

    out.theta_k.set_stage_tag(n > 0 ? "theta_k" : theta_m.stage_tag());
    Image d_final = deblur_forward(spec, out.theta_k, b);
    out.d_final = padded ? crop_bbox(d_final, BBox{0, 0, h, w}) : d_final;
    return out;
}

} // namespace pseudoblur
