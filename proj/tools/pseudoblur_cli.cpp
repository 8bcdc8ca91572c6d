// Command-line driver for the blur->deblur->reblur->deblur pipeline:
// dataset synthesis, the three training stages, adaptation/inference, and
// metric reporting. One root seed per command; every run is reproducible
// from (config, seed).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pseudoblur/pseudoblur.hpp"

namespace fs = std::filesystem;
using namespace pseudoblur;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Config load_config(const std::string& path) {
    return path.empty() ? Config() : Config::from_file(path);
}

GeneratorSpec gen_spec_of(const Config& cfg) {
    return {cfg.get_int("model.gen_width"), cfg.get_int("model.res_blocks")};
}

DiscriminatorSpec disc_spec_of(const Config& cfg) {
    return {cfg.get_int("model.disc_width")};
}

PriorConfig prior_of(const Config& cfg) {
    PriorConfig p;
    p.edge_threshold = cfg.get_double("model.edge_tau");
    p.maxpool_kernel = cfg.get_int("model.maxpool_k");
    p.line_thickness = cfg.get_double("model.line_thickness");
    return p;
}

void add_model_scalars(Checkpoint& ck, const Config& cfg) {
    ck.scalars["model.gen_width"] = cfg.get_int("model.gen_width");
    ck.scalars["model.res_blocks"] = cfg.get_int("model.res_blocks");
    ck.scalars["model.disc_width"] = cfg.get_int("model.disc_width");
}

GeneratorSpec gen_spec_of(const Checkpoint& ck) {
    return {static_cast<int>(ck.scalar("model.gen_width", 8)),
            static_cast<int>(ck.scalar("model.res_blocks", 1))};
}

void write_stage_outputs(const std::string& out, const Checkpoint& ck, const StageReport& rep,
                         const Config& cfg) {
    save_checkpoint(out, ck);
    write_report(out + ".report.txt", rep, cfg.echo());
    std::cout << "checkpoint: " << out << "\nreport: " << out << ".report.txt\n";
    for (const auto& [name, value] : rep.metrics) std::cout << name << " = " << value << "\n";
    std::cout << "seed = " << rep.seed << "\n";
}

int cmd_synth_data(int n, std::uint64_t seed, const std::string& out, const Config& cfg) {
    if (n <= 0) throw UsageError("--n must be positive");
    std::string manifest =
        build_dataset(n, seed, out, cfg.get_int("data.height"), cfg.get_int("data.width"),
                      cfg.get_int("data.frames"), cfg.get_int("data.max_translation"));
    std::cout << "manifest: " << manifest << "\n";
    return kExitOk;
}

TrainConfig train_config_of(const Config& cfg) {
    TrainConfig tc;
    tc.gen_spec = gen_spec_of(cfg);
    tc.disc_spec = disc_spec_of(cfg);
    tc.steps = cfg.get_int("train.steps");
    tc.batch = cfg.get_int("train.batch");
    tc.lr = cfg.get_double("train.lr");
    tc.clip_norm = cfg.get_double("train.clip_norm");
    tc.seed = cfg.get_u64("train.seed");
    tc.holdout = cfg.get_int("data.holdout");
    tc.patch = cfg.get_int("train.patch");
    tc.finetune_reblur = cfg.get_bool("train.finetune_reblur");
    return tc;
}

int cmd_train_deblur(const Config& cfg, const std::string& data_dir, const std::string& out,
                     const std::string& resume, const std::string& reblur_ckpt) {
    Dataset ds = load_dataset(data_dir);
    TrainConfig tc = train_config_of(cfg);
    GanState st = init_deblur_state(tc);
    ParamSet omega;
    const ParamSet* omega_ptr = nullptr;
    if (tc.finetune_reblur) {
        if (reblur_ckpt.empty())
            throw UsageError("train.finetune_reblur needs --reblur-ckpt for the frozen reblurrer");
        Checkpoint rck = load_checkpoint(reblur_ckpt);
        omega = init_generator_params(tc.gen_spec, 0, "omega_T");
        restore_params(rck, "omega", omega);
        omega_ptr = &omega;
    }
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        restore_params(ck, "theta", st.gen);
        restore_params(ck, "disc_glo", st.disc);
        st.opt_gen = restore_optimizer(ck, "opt.theta");
        st.opt_disc = restore_optimizer(ck, "opt.disc");
        st.step = ck.step;
    }
    StageReport rep = train_initial_deblur(st, ds, tc, omega_ptr);
    Checkpoint ck;
    ck.stage_tag = st.gen.stage_tag();
    ck.seed = tc.seed;
    ck.step = st.step;
    add_model_scalars(ck, cfg);
    ck.add_section("theta", st.gen);
    ck.add_section("disc_glo", st.disc);
    add_optimizer(ck, "opt.theta", st.opt_gen);
    add_optimizer(ck, "opt.disc", st.opt_disc);
    write_stage_outputs(out, ck, rep, cfg);
    return kExitOk;
}

int cmd_train_reblur(const Config& cfg, const std::string& data_dir, const std::string& human_dir,
                     const std::string& deblur_ckpt, const std::string& out,
                     const std::string& resume) {
    Dataset scene = load_dataset(data_dir);
    Dataset human = human_dir.empty() ? scene : load_dataset(human_dir);
    ReblurConfig rc;
    rc.gen_spec = gen_spec_of(cfg);
    rc.disc_spec = disc_spec_of(cfg);
    rc.steps_phase1 = cfg.get_int("train.reblur_steps_i");
    rc.steps_phase2 = cfg.get_int("train.reblur_steps_ii");
    rc.steps_phase3 = cfg.get_int("train.reblur_steps_iii");
    rc.batch = cfg.get_int("train.batch");
    rc.lr = cfg.get_double("train.lr");
    rc.clip_norm = cfg.get_double("train.clip_norm");
    rc.seed = cfg.get_u64("train.seed");
    rc.holdout = cfg.get_int("data.holdout");
    rc.prior = prior_of(cfg);

    Checkpoint dck = load_checkpoint(deblur_ckpt);
    ParamSet theta = init_generator_params(rc.gen_spec, 0, "theta_T");
    restore_params(dck, "theta", theta);

    ReblurState st = init_reblur_state(rc);
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        restore_params(ck, "omega", st.omega);
        restore_params(ck, "disc_glo", st.disc_glo);
        restore_params(ck, "disc_u", st.disc_u);
        restore_params(ck, "disc_v", st.disc_v);
        st.opt_omega = restore_optimizer(ck, "opt.omega");
        st.opt_glo = restore_optimizer(ck, "opt.glo");
        st.opt_u = restore_optimizer(ck, "opt.u");
        st.opt_v = restore_optimizer(ck, "opt.v");
        st.step = ck.step;
    }
    StageReport rep = train_reblurrer(st, theta, scene, human, rc);
    Checkpoint ck;
    ck.stage_tag = st.omega.stage_tag();
    ck.seed = rc.seed;
    ck.step = st.step;
    add_model_scalars(ck, cfg);
    ck.add_section("omega", st.omega);
    ck.add_section("disc_glo", st.disc_glo);
    ck.add_section("disc_u", st.disc_u);
    ck.add_section("disc_v", st.disc_v);
    add_optimizer(ck, "opt.omega", st.opt_omega);
    add_optimizer(ck, "opt.glo", st.opt_glo);
    add_optimizer(ck, "opt.u", st.opt_u);
    add_optimizer(ck, "opt.v", st.opt_v);
    write_stage_outputs(out, ck, rep, cfg);
    return kExitOk;
}

int cmd_meta_train(const Config& cfg, const std::string& data_dir, const std::string& deblur_ckpt,
                   const std::string& reblur_ckpt, const std::string& out,
                   const std::string& resume) {
    Dataset ds = load_dataset(data_dir);
    MetaConfig mc;
    mc.gen_spec = gen_spec_of(cfg);
    mc.outer_steps = cfg.get_int("meta.outer_steps");
    mc.tasks_train = cfg.get_int("meta.tasks_train");
    mc.tasks_test = cfg.get_int("meta.tasks_test");
    mc.alpha = cfg.get_double("meta.alpha");
    mc.beta = cfg.get_double("meta.beta");
    mc.clip_norm = cfg.get_double("train.clip_norm");
    mc.seed = cfg.get_u64("train.seed");
    mc.second_order = cfg.get_bool("meta.second_order");
    mc.holdout = cfg.get_int("data.holdout");

    Checkpoint dck = load_checkpoint(deblur_ckpt);
    ParamSet theta = init_generator_params(mc.gen_spec, 0, "theta_T");
    restore_params(dck, "theta", theta);
    Checkpoint rck = load_checkpoint(reblur_ckpt);
    ParamSet omega = init_generator_params(mc.gen_spec, 0, "omega_T");
    restore_params(rck, "omega", omega);

    MetaState st = init_meta_state(theta, mc);
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        restore_params(ck, "theta", st.theta);
        st.opt = restore_optimizer(ck, "opt.theta");
        st.step = ck.step;
    }
    StageReport rep = meta_transfer_train(st, omega, ds, mc);
    Checkpoint ck;
    ck.stage_tag = st.theta.stage_tag();
    ck.seed = mc.seed;
    ck.step = st.step;
    add_model_scalars(ck, cfg);
    ck.add_section("theta", st.theta);
    add_optimizer(ck, "opt.theta", st.opt);
    write_stage_outputs(out, ck, rep, cfg);
    return kExitOk;
}

int cmd_deblur(const std::string& ckpt_path, const std::string& in_path,
               const std::string& out_path, int adapt_n, const std::string& reblur_ckpt,
               const std::string& trace_path, const Config& cfg) {
    if (adapt_n < 0) throw UsageError("--adapt must be >= 0");
    Checkpoint ck = load_checkpoint(ckpt_path);
    GeneratorSpec spec = gen_spec_of(ck);
    ParamSet theta = init_generator_params(spec, 0, ck.stage_tag);
    restore_params(ck, "theta", theta);

    ParamSet omega = init_generator_params(spec, 0, "omega_T");
    if (adapt_n > 0) {
        if (reblur_ckpt.empty()) throw UsageError("--adapt > 0 needs --reblur-ckpt");
        Checkpoint rck = load_checkpoint(reblur_ckpt);
        restore_params(rck, "omega", omega);
    }

    Image b = read_png(in_path);
    if (b.channels() != 3) throw UsageError("deblur expects an RGB input image");
    AdaptResult res = meta_test_adapt(spec, theta, omega, b.to_signed(), adapt_n,
                                      cfg.get_double("meta.alpha"), cfg.get_double("train.clip_norm"));
    write_png(out_path, res.d_final);
    std::cout << "wrote " << out_path << (res.padded ? " (reflect-padded to /32 and cropped)" : "")
              << "\n";
    if (adapt_n > 0) {
        std::string tp = trace_path.empty() ? out_path + ".trace.txt" : trace_path;
        std::ofstream tf(tp);
        if (!tf) throw IoError("cannot write " + tp);
        if (res.padded) tf << "# input reflect-padded to a /32 multiple, output cropped back\n";
        char buf[64];
        for (std::size_t i = 0; i < res.trace.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", res.trace[i]);
            tf << i << "\tadapt_loss\t" << buf << "\n";
        }
        std::cout << "adaptation trace: " << tp << "\n";
    }
    return kExitOk;
}

int cmd_reblur(const std::string& ckpt_path, const std::string& in_path,
               const std::string& out_path) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    GeneratorSpec spec = gen_spec_of(ck);
    ParamSet omega = init_generator_params(spec, 0, "omega_T");
    restore_params(ck, "omega", omega); // refuses non-reblurrer checkpoints
    Image s = read_png(in_path);
    if (s.channels() != 3) throw UsageError("reblur expects an RGB input image");
    const int h = s.height(), w = s.width();
    const int ph = (h + 3) / 4 * 4, pw = (w + 3) / 4 * 4;
    Image padded = (ph != h || pw != w) ? pad_reflect_to(s, ph, pw) : s;
    Image r = reblur_forward(spec, omega, padded.to_signed());
    if (ph != h || pw != w) r = crop_bbox(r, BBox{0, 0, h, w});
    write_png(out_path, r);
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

std::vector<std::string> list_pngs(const std::string& dir) {
    std::vector<std::string> names;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir,
             const std::string& records_path) {
    auto preds = list_pngs(pred_dir);
    auto gts = list_pngs(gt_dir);
    if (preds.empty()) throw UsageError("no .png files in " + pred_dir);
    if (preds != gts)
        throw UsageError("prediction/ground-truth file lists differ (" +
                         std::to_string(preds.size()) + " vs " + std::to_string(gts.size()) + ")");
    std::ofstream records(records_path);
    if (!records) throw IoError("cannot write " + records_path);
    std::printf("%-24s %10s %8s\n", "image", "psnr(dB)", "ssim");
    double sum_psnr = 0.0, sum_ssim = 0.0;
    for (const auto& name : preds) {
        Image p = read_png((fs::path(pred_dir) / name).string());
        Image g = read_png((fs::path(gt_dir) / name).string());
        double ps = psnr(p, g);
        double ss = ssim(p, g);
        sum_psnr += ps;
        sum_ssim += ss;
        std::printf("%-24s %10.4f %8.4f\n", name.c_str(), ps, ss);
        records << name << "\tpsnr\t" << ps << "\n" << name << "\tssim\t" << ss << "\n";
    }
    const double n = static_cast<double>(preds.size());
    std::printf("%-24s %10.4f %8.4f\n", "mean", sum_psnr / n, sum_ssim / n);
    records << "mean\tpsnr\t" << sum_psnr / n << "\nmean\tssim\t" << sum_ssim / n << "\n";
    std::cout << "records: " << records_path << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pseudoblur: blur->deblur->reblur->deblur restoration pipeline"};
    app.require_subcommand(1);
    app.footer(Config::help_text());

    std::string config_path, data_dir, human_dir, out, resume, ckpt, in_path, reblur_ckpt,
        trace_path, pred_dir, gt_dir, records_path = "eval_records.txt";
    int n_pairs = 200, adapt_n = 0;
    std::uint64_t seed = 1;

    auto* synth = app.add_subcommand("synth-data", "generate a sharp/blur pair dataset");
    synth->add_option("--n", n_pairs, "number of pairs");
    synth->add_option("--seed", seed, "dataset seed");
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--config", config_path, "config file");

    auto* tdeb = app.add_subcommand("train-deblur", "initial deblurring training (or fine-tune)");
    tdeb->add_option("--config", config_path, "config file");
    tdeb->add_option("--data", data_dir, "dataset directory")->required();
    tdeb->add_option("--out", out, "output checkpoint path")->required();
    tdeb->add_option("--resume", resume, "checkpoint to resume from");
    tdeb->add_option("--reblur-ckpt", reblur_ckpt, "frozen reblurrer (finetune mode)");

    auto* treb = app.add_subcommand("train-reblur", "pseudo-blur synthesizer training");
    treb->add_option("--config", config_path, "config file");
    treb->add_option("--data", data_dir, "scene dataset directory")->required();
    treb->add_option("--human-data", human_dir, "human-centric dataset (default: --data)");
    treb->add_option("--deblur-ckpt", ckpt, "frozen deblurrer checkpoint")->required();
    treb->add_option("--out", out, "output checkpoint path")->required();
    treb->add_option("--resume", resume, "checkpoint to resume from");

    auto* tmeta = app.add_subcommand("meta-train", "meta-transfer deblurring training");
    tmeta->add_option("--config", config_path, "config file");
    tmeta->add_option("--data", data_dir, "dataset directory")->required();
    tmeta->add_option("--deblur-ckpt", ckpt, "theta_T checkpoint")->required();
    tmeta->add_option("--reblur-ckpt", reblur_ckpt, "omega_T checkpoint")->required();
    tmeta->add_option("--out", out, "output checkpoint path")->required();
    tmeta->add_option("--resume", resume, "checkpoint to resume from");

    auto* deb = app.add_subcommand("deblur", "deblur one image (optionally self-adapting)");
    deb->add_option("--ckpt", ckpt, "deblurrer checkpoint")->required();
    deb->add_option("--in", in_path, "input PNG")->required();
    deb->add_option("--out", out, "output PNG")->required();
    deb->add_option("--adapt", adapt_n, "adaptation steps n (0 = plain forward)");
    deb->add_option("--reblur-ckpt", reblur_ckpt, "omega_T checkpoint (needed when --adapt > 0)");
    deb->add_option("--trace", trace_path, "adaptation loss trace output");
    deb->add_option("--config", config_path, "config file");

    auto* reb = app.add_subcommand("reblur", "synthesize a pseudo-blurred version of one image");
    reb->add_option("--ckpt", ckpt, "reblurrer checkpoint")->required();
    reb->add_option("--in", in_path, "input PNG")->required();
    reb->add_option("--out", out, "output PNG")->required();

    auto* ev = app.add_subcommand("eval", "PSNR/SSIM over paired directories");
    ev->add_option("--pred-dir", pred_dir, "predictions directory")->required();
    ev->add_option("--gt-dir", gt_dir, "ground-truth directory")->required();
    ev->add_option("--out", records_path, "record file path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        Config cfg = load_config(config_path);
        if (synth->parsed()) return cmd_synth_data(n_pairs, seed, out, cfg);
        if (tdeb->parsed()) return cmd_train_deblur(cfg, data_dir, out, resume, reblur_ckpt);
        if (treb->parsed()) return cmd_train_reblur(cfg, data_dir, human_dir, ckpt, out, resume);
        if (tmeta->parsed()) return cmd_meta_train(cfg, data_dir, ckpt, reblur_ckpt, out, resume);
        if (deb->parsed()) return cmd_deblur(ckpt, in_path, out, adapt_n, reblur_ckpt, trace_path, cfg);
        if (reb->parsed()) return cmd_reblur(ckpt, in_path, out);
        if (ev->parsed()) return cmd_eval(pred_dir, gt_dir, records_path);
        std::cerr << "no subcommand selected\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
