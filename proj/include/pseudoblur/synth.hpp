#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pseudoblur/image.hpp"
#include "pseudoblur/png_io.hpp"
#include "pseudoblur/prior.hpp"
#include "pseudoblur/rng.hpp"

namespace pseudoblur {

inline constexpr int kLimbAngles = 9; // torso tilt + 8 limb segments

// Fully determines one synthetic scene: a procedurally textured background
// translated by integer pixels per frame, plus an articulated stick figure
// whose limb angles change per frame. The middle frame is the sharp image.
struct SceneParams {
    std::uint64_t texture_seed = 0;
    int bg_dx = 0, bg_dy = 0; // background translation, px/frame
    int frames = 7;
    double center_row = 32.0, center_col = 32.0;
    double scale = 18.0;                          // torso length in px
    std::array<double, kLimbAngles> base_angle{}; // middle-frame pose
    std::array<double, kLimbAngles> angle_vel{};  // rad/frame per joint

    std::string serialize() const {
        std::ostringstream ss;
        ss << texture_seed << " " << bg_dx << " " << bg_dy << " " << frames << " " << center_row
           << " " << center_col << " " << scale;
        for (double a : base_angle) ss << " " << a;
        for (double v : angle_vel) ss << " " << v;
        return ss.str();
    }

    static SceneParams deserialize(const std::string& line) {
        std::istringstream ss(line);
        SceneParams p;
        ss >> p.texture_seed >> p.bg_dx >> p.bg_dy >> p.frames >> p.center_row >> p.center_col >>
            p.scale;
        for (double& a : p.base_angle) ss >> a;
        for (double& v : p.angle_vel) ss >> v;
        if (!ss) throw std::runtime_error("bad SceneParams line");
        return p;
    }
};

struct BlurPair {
    Image b; // frame average (unit range)
    Image s; // middle frame (unit range)
    KeypointSet keypoints;
    bool has_mu = false;
    BinaryMask mu;
};

using Task = std::vector<BlurPair>;

struct TaskBatch {
    std::vector<Task> train_tasks;
    std::vector<Task> test_tasks;
};

struct Dataset {
    std::vector<BlurPair> pairs;
    int height = 0, width = 0;
};

namespace synth_detail {

struct TextureField {
    // band-limited sinusoid mix + one hash-noise octave, sampled at integer
    // lattice offsets so translated frames match shifted originals exactly
    std::array<double, 6> amp{}, fy{}, fx{}, phase{};
    std::array<double, 3> channel_shift{};
    double noise_amp = 0.0;
    std::uint64_t seed = 0;

    static TextureField make(std::uint64_t seed) {
        TextureField t;
        t.seed = seed;
        Rng rng = Rng(seed).child("texture");
        for (std::size_t k = 0; k < t.amp.size(); ++k) {
            t.amp[k] = rng.uniform(0.4, 1.0);
            // spread components from low frequencies into ones that a few
            // pixels of motion visibly smear
            double f = rng.uniform(0.08, 0.30) * (k + 1);
            double ang = rng.uniform(0.0, 6.283185307179586);
            t.fy[k] = f * std::sin(ang);
            t.fx[k] = f * std::cos(ang);
            t.phase[k] = rng.uniform(0.0, 6.283185307179586);
        }
        for (auto& c : t.channel_shift) c = rng.uniform(0.0, 2.0);
        return t;
    }

    double sample(int channel, long long y, long long x) const {
        double s = 0.0, norm = 0.0;
        for (std::size_t k = 0; k < amp.size(); ++k) {
            s += amp[k] * std::sin(fy[k] * y + fx[k] * x + phase[k] + channel_shift[channel]);
            norm += amp[k];
        }
        std::uint64_t h = seed ^ (static_cast<std::uint64_t>(y) * 0x9E3779B97F4A7C15ULL) ^
                          (static_cast<std::uint64_t>(x) * 0xC2B2AE3D27D4EB4FULL) ^
                          (static_cast<std::uint64_t>(channel) * 0x165667B19E3779F9ULL);
        std::uint64_t hs = h;
        double n = (static_cast<double>(splitmix64(hs) >> 11) * 0x1.0p-53 - 0.5) * 2.0;
        return 0.5 + 0.33 * (s / norm) + noise_amp * n;
    }
};

struct FigureShade {
    std::array<double, 3> color{};
    static FigureShade make(std::uint64_t seed) {
        Rng rng = Rng(seed).child("figure");
        FigureShade f;
        bool dark = rng.uniform() < 0.5;
        for (auto& c : f.color) c = dark ? rng.uniform(0.05, 0.25) : rng.uniform(0.75, 0.95);
        return f;
    }
};

// Joint positions for one frame's pose (LSP 14-joint layout).
inline std::array<std::pair<double, double>, kNumKeypoints>
figure_joints(const SceneParams& p, int frame) {
    const double mid = (p.frames - 1) / 2.0;
    std::array<double, kLimbAngles> a{};
    for (int i = 0; i < kLimbAngles; ++i)
        a[i] = p.base_angle[i] + p.angle_vel[i] * (frame - mid);

    const double L = p.scale;
    const double tilt = a[0];
    const double uy = -std::cos(tilt), ux = std::sin(tilt); // torso "up" direction
    const double py = p.center_row + 0.5 * L * -uy;
    const double px = p.center_col + 0.5 * L * -ux; // pelvis midpoint
    const double ny = p.center_row - 0.5 * L * -uy;
    const double nx = p.center_col - 0.5 * L * -ux; // neck

    auto polar = [](double oy, double ox, double len, double ang) {
        // angle measured from straight down, positive toward +col
        return std::pair<double, double>{oy + len * std::cos(ang), ox + len * std::sin(ang)};
    };

    std::array<std::pair<double, double>, kNumKeypoints> j{};
    const double perp_y = ux, perp_x = -uy; // unit vector toward figure-left in image
    j[12] = {ny, nx};                                            // neck
    j[13] = {ny + 0.45 * L * uy, nx + 0.45 * L * ux};            // head top
    j[8] = {ny - 0.30 * L * perp_y, nx - 0.30 * L * perp_x};     // r shoulder
    j[9] = {ny + 0.30 * L * perp_y, nx + 0.30 * L * perp_x};     // l shoulder
    j[2] = {py - 0.22 * L * perp_y, px - 0.22 * L * perp_x};     // r hip
    j[3] = {py + 0.22 * L * perp_y, px + 0.22 * L * perp_x};     // l hip
    j[7] = polar(j[8].first, j[8].second, 0.38 * L, a[1]);       // r elbow
    j[6] = polar(j[7].first, j[7].second, 0.35 * L, a[2]);       // r wrist
    j[10] = polar(j[9].first, j[9].second, 0.38 * L, a[3]);      // l elbow
    j[11] = polar(j[10].first, j[10].second, 0.35 * L, a[4]);    // l wrist
    j[1] = polar(j[2].first, j[2].second, 0.45 * L, a[5]);       // r knee
    j[0] = polar(j[1].first, j[1].second, 0.45 * L, a[6]);       // r ankle
    j[4] = polar(j[3].first, j[3].second, 0.45 * L, a[7]);       // l knee
    j[5] = polar(j[4].first, j[4].second, 0.45 * L, a[8]);       // l ankle
    return j;
}

} // namespace synth_detail

// Middle-frame joints; points outside image bounds are flagged invalid.
inline KeypointSet synthetic_keypoints(const SceneParams& p, int height, int width) {
    auto joints = synth_detail::figure_joints(p, (p.frames - 1) / 2);
    KeypointSet kps;
    for (int i = 0; i < kNumKeypoints; ++i) {
        kps.points[i].row = joints[i].first;
        kps.points[i].col = joints[i].second;
        kps.points[i].valid = joints[i].first >= 0.0 && joints[i].first <= height - 1 &&
                              joints[i].second >= 0.0 && joints[i].second <= width - 1;
    }
    return kps;
}

inline std::vector<Image> render_sequence(const SceneParams& p, int height, int width) {
    if (p.frames < 2) throw std::invalid_argument("render_sequence needs >= 2 frames");
    auto tex = synth_detail::TextureField::make(p.texture_seed);
    auto shade = synth_detail::FigureShade::make(p.texture_seed);
    const int mid = (p.frames - 1) / 2;
    const double bone_r = std::max(1.5, 0.10 * p.scale);
    const double head_r = 0.22 * p.scale;

    std::vector<Image> frames;
    frames.reserve(static_cast<std::size_t>(p.frames));
    for (int f = 0; f < p.frames; ++f) {
        Image img(3, height, width, Range::Unit);
        const long long oy = static_cast<long long>(f - mid) * p.bg_dy;
        const long long ox = static_cast<long long>(f - mid) * p.bg_dx;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x)
                    img.at(c, y, x) = static_cast<float>(tex.sample(c, y + oy, x + ox));

        auto joints = synth_detail::figure_joints(p, f);
        std::vector<std::array<double, 4>> segs;
        for (const auto& [a, b] : skeleton_edges())
            segs.push_back({joints[a].first, joints[a].second, joints[b].first, joints[b].second});
        const double hy = joints[13].first, hx = joints[13].second;

        // conservative figure bounds to keep rasterization cheap
        double lo_y = 1e30, lo_x = 1e30, hi_y = -1e30, hi_x = -1e30;
        for (const auto& j : joints) {
            lo_y = std::min(lo_y, j.first);
            hi_y = std::max(hi_y, j.first);
            lo_x = std::min(lo_x, j.second);
            hi_x = std::max(hi_x, j.second);
        }
        const double pad = std::max(bone_r, head_r) + 1.0;
        const int y0 = std::max(0, static_cast<int>(std::floor(lo_y - pad)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(hi_y + pad)));
        const int x0 = std::max(0, static_cast<int>(std::floor(lo_x - pad)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(hi_x + pad)));

        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                bool hit = std::hypot(y - hy, x - hx) <= head_r;
                std::size_t hit_seg = 0;
                for (std::size_t s = 0; !hit && s < segs.size(); ++s) {
                    if (detail::dist_point_segment(y, x, segs[s][0], segs[s][1], segs[s][2],
                                                   segs[s][3]) <= bone_r) {
                        hit = true;
                        hit_seg = s + 1;
                    }
                }
                if (hit)
                    for (int c = 0; c < 3; ++c)
                        img.at(c, y, x) = static_cast<float>(
                            std::clamp(shade.color[c] + 0.02 * static_cast<double>(hit_seg % 3), 0.0, 1.0));
            }
        }
        img.clamp_all();
        frames.push_back(std::move(img));
    }
    return frames;
}

inline BlurPair make_blur_pair(const SceneParams& p, int height, int width) {
    std::vector<Image> frames = render_sequence(p, height, width);
    BlurPair pair;
    pair.b = average_frames(frames);
    pair.s = frames[static_cast<std::size_t>((p.frames - 1) / 2)];
    pair.keypoints = synthetic_keypoints(p, height, width);
    return pair;
}

inline SceneParams random_scene_params(Rng& rng, int height, int width, int frames = 7,
                                       int max_translation = 4) {
    SceneParams p;
    p.texture_seed = rng.next_u64();
    // near-horizontal panning: the 7-frame average is symmetric in the
    // translation sign, so a bounded axis keeps the blur family learnable
    // from a single image
    const int mag = rng.range_int(2, std::max(2, max_translation));
    p.bg_dx = rng.uniform() < 0.5 ? -mag : mag;
    p.bg_dy = rng.range_int(-1, 1);
    p.frames = frames;
    p.scale = rng.uniform(0.24, 0.30) * std::min(height, width);
    p.center_row = height / 2.0 + rng.uniform(-0.06, 0.06) * height;
    p.center_col = width / 2.0 + rng.uniform(-0.06, 0.06) * width;
    p.base_angle[0] = rng.uniform(-0.12, 0.12); // torso tilt
    const double kPi = 3.14159265358979323846;
    p.base_angle[1] = rng.uniform(0.15, 0.85);  // r upper arm, from straight down
    p.base_angle[2] = p.base_angle[1] + rng.uniform(-0.5, 0.5);
    p.base_angle[3] = -rng.uniform(0.15, 0.85); // l upper arm
    p.base_angle[4] = p.base_angle[3] + rng.uniform(-0.5, 0.5);
    p.base_angle[5] = rng.uniform(0.05, 0.35);
    p.base_angle[6] = p.base_angle[5] + rng.uniform(-0.3, 0.3);
    p.base_angle[7] = -rng.uniform(0.05, 0.35);
    p.base_angle[8] = p.base_angle[7] + rng.uniform(-0.3, 0.3);
    (void)kPi;
    for (int i = 0; i < kLimbAngles; ++i) p.angle_vel[i] = rng.uniform(-0.10, 0.10);
    return p;
}

// In-memory dataset, deterministic from (seed, n).
inline Dataset generate_dataset(int n, std::uint64_t seed, int height, int width, int frames = 7,
                                int max_translation = 4) {
    if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
    Dataset ds;
    ds.height = height;
    ds.width = width;
    ds.pairs.reserve(static_cast<std::size_t>(n));
    Rng root(seed);
    for (int i = 0; i < n; ++i) {
        Rng rng = root.child(static_cast<std::uint64_t>(i));
        SceneParams p = random_scene_params(rng, height, width, frames, max_translation);
        ds.pairs.push_back(make_blur_pair(p, height, width));
    }
    return ds;
}

// Dataset layout: out_dir/{blur,sharp,keypoints}/NNNN.{png,txt} + manifest.txt
// with one "index seed params..." line per pair. Byte-identical for a fixed
// (seed, n).
inline std::string build_dataset(int n, std::uint64_t seed, const std::string& out_dir, int height,
                                 int width, int frames = 7, int max_translation = 4) {
    namespace fs = std::filesystem;
    if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "blur", ec);
    fs::create_directories(fs::path(out_dir) / "sharp", ec);
    fs::create_directories(fs::path(out_dir) / "keypoints", ec);
    const std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
    std::ofstream manifest(manifest_path);
    if (!manifest) throw IoError("cannot write " + manifest_path);
    manifest << "# pseudoblur dataset v1 seed=" << seed << " n=" << n << " h=" << height
             << " w=" << width << "\n";
    Rng root(seed);
    for (int i = 0; i < n; ++i) {
        Rng rng = root.child(static_cast<std::uint64_t>(i));
        SceneParams p = random_scene_params(rng, height, width, frames, max_translation);
        BlurPair pair = make_blur_pair(p, height, width);
        char name[16];
        std::snprintf(name, sizeof(name), "%04d", i);
        write_png((fs::path(out_dir) / "blur" / (std::string(name) + ".png")).string(), pair.b);
        write_png((fs::path(out_dir) / "sharp" / (std::string(name) + ".png")).string(), pair.s);
        write_keypoints((fs::path(out_dir) / "keypoints" / (std::string(name) + ".txt")).string(),
                        pair.keypoints);
        manifest << i << " " << p.serialize() << "\n";
    }
    manifest.close();
    if (!manifest) throw IoError("failed writing " + manifest_path);
    return manifest_path;
}

// Generic paired-folder reader for datasets produced by build_dataset.
inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
    std::ifstream manifest(manifest_path);
    if (!manifest) throw IoError("cannot read " + manifest_path);
    Dataset ds;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        int index = 0;
        ss >> index;
        char name[16];
        std::snprintf(name, sizeof(name), "%04d", index);
        BlurPair pair;
        pair.b = read_png((fs::path(dir) / "blur" / (std::string(name) + ".png")).string());
        pair.s = read_png((fs::path(dir) / "sharp" / (std::string(name) + ".png")).string());
        pair.keypoints =
            read_keypoints((fs::path(dir) / "keypoints" / (std::string(name) + ".txt")).string());
        ds.pairs.push_back(std::move(pair));
    }
    if (ds.pairs.empty()) throw IoError("empty dataset in " + dir);
    ds.height = ds.pairs.front().b.height();
    ds.width = ds.pairs.front().b.width();
    return ds;
}

// Co-located random crop of B and S (and keypoints) at a seeded offset.
inline BlurPair sample_patches(const BlurPair& pair, int size, Rng& rng) {
    const int h = pair.b.height(), w = pair.b.width();
    if (h < size || w < size) throw std::invalid_argument("image smaller than patch size");
    const int max_y = h - size, max_x = w - size;
    const int oy = max_y > 0 ? static_cast<int>(rng.index(static_cast<std::uint64_t>(max_y + 1))) : 0;
    const int ox = max_x > 0 ? static_cast<int>(rng.index(static_cast<std::uint64_t>(max_x + 1))) : 0;
    BBox box{oy, ox, oy + size, ox + size};
    BlurPair out;
    out.b = crop_bbox(pair.b, box);
    out.s = crop_bbox(pair.s, box);
    out.keypoints = pair.keypoints;
    for (auto& p : out.keypoints.points) {
        p.row -= oy;
        p.col -= ox;
        p.valid = p.valid && p.row >= 0.0 && p.row <= size - 1 && p.col >= 0.0 && p.col <= size - 1;
    }
    if (pair.has_mu) {
        out.has_mu = true;
        out.mu = BinaryMask(size, size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) out.mu.at(y, x) = pair.mu.at(oy + y, ox + x);
    }
    return out;
}

// 2x box-downsample of both sides; keypoint coordinates halve.
inline BlurPair augment_downsample(const BlurPair& pair) {
    BlurPair out;
    out.b = downsample_2x(pair.b);
    out.s = downsample_2x(pair.s);
    out.keypoints = pair.keypoints;
    for (auto& p : out.keypoints.points) {
        p.row *= 0.5;
        p.col *= 0.5;
    }
    return out;
}

// Draws n_train + n_test distinct pairs and splits them into task-train and
// task-test singleton batches.
inline TaskBatch sample_task_batch(const Dataset& ds, Rng& rng, int n_train = 4, int n_test = 4) {
    const int need = n_train + n_test;
    if (static_cast<int>(ds.pairs.size()) < need)
        throw std::invalid_argument("dataset smaller than task batch");
    std::vector<int> idx(ds.pairs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    for (int i = 0; i < need; ++i) {
        int j = i + static_cast<int>(rng.index(idx.size() - static_cast<std::size_t>(i)));
        std::swap(idx[i], idx[j]);
    }
    TaskBatch tb;
    for (int i = 0; i < n_train; ++i) tb.train_tasks.push_back({ds.pairs[idx[i]]});
    for (int i = 0; i < n_test; ++i) tb.test_tasks.push_back({ds.pairs[idx[n_train + i]]});
    return tb;
}

} // namespace pseudoblur
