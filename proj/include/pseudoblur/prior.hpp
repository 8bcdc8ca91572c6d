#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pseudoblur/image.hpp"

namespace pseudoblur {

inline constexpr int kNumKeypoints = 14;

// 14-point body joint set, LSP ordering:
// 0 r-ankle 1 r-knee 2 r-hip 3 l-hip 4 l-knee 5 l-ankle 6 r-wrist 7 r-elbow
// 8 r-shoulder 9 l-shoulder 10 l-elbow 11 l-wrist 12 neck 13 head-top
struct Keypoint {
    double row = 0.0, col = 0.0;
    bool valid = false;
};

struct KeypointSet {
    std::array<Keypoint, kNumKeypoints> points{};

    int valid_count() const {
        int n = 0;
        for (const auto& p : points) n += p.valid ? 1 : 0;
        return n;
    }
};

// Fixed 14-joint skeleton topology used for line rasterization.
inline const std::vector<std::pair<int, int>>& skeleton_edges() {
    static const std::vector<std::pair<int, int>> edges = {
        {13, 12}, {12, 8}, {12, 9}, {8, 7}, {7, 6}, {9, 10}, {10, 11},
        {8, 2},   {9, 3},  {2, 3},  {2, 1}, {1, 0}, {3, 4},  {4, 5},
    };
    return edges;
}

// Deterministic per-image keypoint source; desk-scale substitute for a
// pretrained body predictor.
class KeypointProvider {
public:
    virtual ~KeypointProvider() = default;
    virtual KeypointSet keypoints(const Image& img) const = 0;
};

namespace detail {

inline double dist_point_segment(double py, double px, double ay, double ax, double by, double bx) {
    const double dy = by - ay, dx = bx - ax;
    const double len2 = dy * dy + dx * dx;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((py - ay) * dy + (px - ax) * dx) / len2, 0.0, 1.0);
    const double cy = ay + t * dy, cx = ax + t * dx;
    return std::hypot(py - cy, px - cx);
}

// Monotone-chain convex hull over (row, col) points.
inline std::vector<std::pair<double, double>> convex_hull(std::vector<std::pair<double, double>> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    const std::size_t n = pts.size();
    if (n < 3) return pts;
    auto cross = [](const auto& o, const auto& a, const auto& b) {
        return (a.first - o.first) * (b.second - o.second) -
               (a.second - o.second) * (b.first - o.first);
    };
    std::vector<std::pair<double, double>> hull(2 * n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

inline bool inside_convex(const std::vector<std::pair<double, double>>& hull, double y, double x) {
    if (hull.size() < 3) return false;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const auto& a = hull[i];
        const auto& b = hull[(i + 1) % hull.size()];
        double cr = (b.first - a.first) * (x - a.second) - (b.second - a.second) * (y - a.first);
        if (cr < 0.0) return false; // hull is counter-clockwise
    }
    return true;
}

} // namespace detail

// Skeleton segments drawn with thickness t, unioned with the filled convex
// hull of the valid keypoints.
inline BinaryMask body_joint_map(const KeypointSet& kps, int height, int width,
                                 double thickness = 3.0) {
    if (kps.valid_count() < 3) throw std::invalid_argument("body_joint_map needs >= 3 valid keypoints");
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : kps.points)
        if (p.valid) pts.emplace_back(p.row, p.col);
    auto hull = detail::convex_hull(pts);

    std::vector<std::array<double, 4>> segs;
    for (const auto& [a, b] : skeleton_edges())
        if (kps.points[a].valid && kps.points[b].valid)
            segs.push_back({kps.points[a].row, kps.points[a].col, kps.points[b].row, kps.points[b].col});

    const double r = thickness * 0.5;
    BinaryMask out(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double py = y, px = x;
            bool hit = detail::inside_convex(hull, py, px);
            for (std::size_t s = 0; !hit && s < segs.size(); ++s)
                hit = detail::dist_point_segment(py, px, segs[s][0], segs[s][1], segs[s][2], segs[s][3]) <= r;
            out.at(y, x) = hit ? 1 : 0;
        }
    }
    return out;
}

inline BBox keypoint_bbox(const KeypointSet& kps, int height, int width) {
    double top = 1e30, left = 1e30, bottom = -1e30, right = -1e30;
    int n = 0;
    for (const auto& p : kps.points) {
        if (!p.valid) continue;
        top = std::min(top, p.row);
        bottom = std::max(bottom, p.row);
        left = std::min(left, p.col);
        right = std::max(right, p.col);
        ++n;
    }
    if (n == 0) throw std::invalid_argument("keypoint_bbox needs >= 1 valid keypoint");
    BBox box;
    box.top = std::clamp(static_cast<int>(std::floor(top)), 0, height - 1);
    box.left = std::clamp(static_cast<int>(std::floor(left)), 0, width - 1);
    box.bottom = std::clamp(static_cast<int>(std::ceil(bottom)) + 1, box.top + 1, height);
    box.right = std::clamp(static_cast<int>(std::ceil(right)) + 1, box.left + 1, width);
    return box;
}

struct PriorConfig {
    double edge_threshold = 0.05; // tau, on unit-range luma gradients
    int maxpool_kernel = 7;       // k, hole filling
    double line_thickness = 3.0;  // t, skeleton rasterization
};

// |sobel(y(D)) - sobel(y(R))| thresholded, hole-filled, and restricted to
// the keypoint bounding box.
inline BinaryMask difference_map(const Image& d, const Image& r, const KeypointSet& kps,
                                 const PriorConfig& cfg = {}) {
    if (!d.same_shape(r)) throw std::invalid_argument("difference_map shape mismatch");
    Tensor<float> ed = sobel_edges(rgb_to_y(d.to_unit()));
    Tensor<float> er = sobel_edges(rgb_to_y(r.to_unit()));
    BinaryMask raw(d.height(), d.width());
    for (int y = 0; y < d.height(); ++y)
        for (int x = 0; x < d.width(); ++x)
            raw.at(y, x) = std::abs(ed.at(0, y, x) - er.at(0, y, x)) > cfg.edge_threshold ? 1 : 0;
    BinaryMask filled = mask_max_pool(raw, cfg.maxpool_kernel);
    return zero_outside_bbox(filled, keypoint_bbox(kps, d.height(), d.width()));
}

// Mu = body-joint map OR difference map; Mv = 1 - Mu.
inline std::pair<BinaryMask, BinaryMask> human_prior(const Image& d, const Image& r,
                                                     const KeypointSet& kps,
                                                     const PriorConfig& cfg = {}) {
    BinaryMask joint = body_joint_map(kps, d.height(), d.width(), cfg.line_thickness);
    BinaryMask diff = difference_map(d, r, kps, cfg);
    BinaryMask mu = mask_or(joint, diff);
    return {mu, invert(mu)};
}

// Line-oriented keypoint text format: 14 lines of "row col valid".
inline void write_keypoints(const std::string& path, const KeypointSet& kps) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& p : kps.points)
        out << p.row << " " << p.col << " " << (p.valid ? 1 : 0) << "\n";
}

inline KeypointSet read_keypoints(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    KeypointSet kps;
    std::string line;
    for (int i = 0; i < kNumKeypoints; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("keypoint file truncated: " + path);
        std::istringstream ss(line);
        int valid = 0;
        if (!(ss >> kps.points[i].row >> kps.points[i].col >> valid))
            throw std::runtime_error("bad keypoint line in " + path);
        kps.points[i].valid = valid != 0;
    }
    return kps;
}

} // namespace pseudoblur
