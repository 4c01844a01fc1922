#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

// Evaluation metrics over 2D class-index masks: DSC, IoU, HD95, ASD, MAE,
// Recall. Surface metrics use Euclidean pixel distances between boundary
// pixels (mask pixels with at least one non-mask 4-neighbor) and are
// undefined (nullopt) when either mask is empty for the class.
namespace cfc::metrics {

using Mask2D = std::vector<std::uint8_t>;  // row-major H*W

inline void check_pair(const Mask2D& pred, const Mask2D& gt) {
    if (pred.size() != gt.size()) throw ShapeError("metric: mask size mismatch");
}

inline double dsc(const Mask2D& pred, const Mask2D& gt, int cls) {
    check_pair(pred, gt);
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool ip = pred[i] == cls, ig = gt[i] == cls;
        p += ip;
        g += ig;
        both += ip && ig;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

inline double iou(const Mask2D& pred, const Mask2D& gt, int cls) {
    check_pair(pred, gt);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool ip = pred[i] == cls, ig = gt[i] == cls;
        inter += ip && ig;
        uni += ip || ig;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double recall(const Mask2D& pred, const Mask2D& gt, int cls) {
    check_pair(pred, gt);
    std::size_t g = 0, tp = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool ig = gt[i] == cls;
        g += ig;
        tp += ig && pred[i] == cls;
    }
    if (g == 0) return 1.0;
    return static_cast<double>(tp) / static_cast<double>(g);
}

inline double mae(const Mask2D& pred, const Mask2D& gt, int cls) {
    check_pair(pred, gt);
    std::size_t diff = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        diff += (pred[i] == cls) != (gt[i] == cls);
    return static_cast<double>(diff) / static_cast<double>(pred.size());
}

struct Point {
    int y, x;
};

inline std::vector<Point> boundary_pixels(const Mask2D& m, int h, int w, int cls) {
    std::vector<Point> out;
    auto in = [&](int y, int x) { return m[static_cast<std::size_t>(y) * w + x] == cls; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!in(y, x)) continue;
            const bool edge = y == 0 || y == h - 1 || x == 0 || x == w - 1 || !in(y - 1, x) ||
                              !in(y + 1, x) || !in(y, x - 1) || !in(y, x + 1);
            if (edge) out.push_back({y, x});
        }
    return out;
}

// Directed nearest-neighbor distances from every point of a to the set b.
inline std::vector<double> directed_surface_distances(const std::vector<Point>& a,
                                                      const std::vector<Point>& b) {
    std::vector<double> out;
    out.reserve(a.size());
    for (const auto& p : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : b) {
            const double dy = p.y - q.y, dx = p.x - q.x;
            best = std::min(best, dy * dy + dx * dx);
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

// Linear interpolation between order statistics, q in [0, 1].
inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    if (v.empty()) return 0.0;
    const double rank = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

struct SurfaceDistances {
    std::vector<double> all;  // symmetric pool: pred->gt plus gt->pred
};

inline std::optional<SurfaceDistances> surface_distances(const Mask2D& pred, const Mask2D& gt,
                                                         int h, int w, int cls) {
    check_pair(pred, gt);
    auto bp = boundary_pixels(pred, h, w, cls);
    auto bg = boundary_pixels(gt, h, w, cls);
    if (bp.empty() || bg.empty()) return std::nullopt;
    SurfaceDistances sd;
    sd.all = directed_surface_distances(bp, bg);
    auto back = directed_surface_distances(bg, bp);
    sd.all.insert(sd.all.end(), back.begin(), back.end());
    return sd;
}

inline std::optional<double> hd95(const Mask2D& pred, const Mask2D& gt, int h, int w, int cls) {
    auto sd = surface_distances(pred, gt, h, w, cls);
    if (!sd) return std::nullopt;
    return percentile(sd->all, 0.95);
}

inline std::optional<double> asd(const Mask2D& pred, const Mask2D& gt, int h, int w, int cls) {
    auto sd = surface_distances(pred, gt, h, w, cls);
    if (!sd) return std::nullopt;
    double s = 0.0;
    for (double d : sd->all) s += d;
    return s / static_cast<double>(sd->all.size());
}

struct ClassMetrics {
    double dsc = 0, iou = 0, recall = 0, mae = 0;
    std::optional<double> hd95, asd;
};

struct MetricReport {
    std::vector<ClassMetrics> per_class;  // foreground classes 1..n-1
    double mean_dsc = 0, mean_iou = 0, mean_recall = 0, mean_mae = 0;
    std::optional<double> mean_hd95, mean_asd;  // over classes where defined
};

// Per-image report, macro-averaged over foreground classes.
inline MetricReport evaluate_masks(const Mask2D& pred, const Mask2D& gt, int h, int w,
                                   int num_classes) {
    MetricReport r;
    double sh = 0, sa = 0;
    int nh = 0, na = 0;
    for (int c = 1; c < num_classes; ++c) {
        ClassMetrics m;
        m.dsc = dsc(pred, gt, c);
        m.iou = iou(pred, gt, c);
        m.recall = recall(pred, gt, c);
        m.mae = mae(pred, gt, c);
        m.hd95 = hd95(pred, gt, h, w, c);
        m.asd = asd(pred, gt, h, w, c);
        r.mean_dsc += m.dsc;
        r.mean_iou += m.iou;
        r.mean_recall += m.recall;
        r.mean_mae += m.mae;
        if (m.hd95) {
            sh += *m.hd95;
            ++nh;
        }
        if (m.asd) {
            sa += *m.asd;
            ++na;
        }
        r.per_class.push_back(std::move(m));
    }
    const double nf = std::max<std::size_t>(1, r.per_class.size());
    r.mean_dsc /= nf;
    r.mean_iou /= nf;
    r.mean_recall /= nf;
    r.mean_mae /= nf;
    if (nh) r.mean_hd95 = sh / nh;
    if (na) r.mean_asd = sa / na;
    return r;
}

}  // namespace cfc::metrics
