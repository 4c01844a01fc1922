#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "errors.hpp"
#include "freq.hpp"
#include "tensor.hpp"

// UCF-Mix: joint-probability uncertainty estimation, low-uncertainty
// foreground patch selection, and the two cyclic cross-frequency patch
// exchanges. The mix permutes {LF, EF, HF} values per pixel inside selected
// patches and never touches labels.
namespace cfc::mix {

struct PatchGrid {
    int k = 16;  // total patch count, perfect square

    int side() const {
        const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(k))));
        if (s * s != k) throw ConfigError("PatchGrid: k must be a perfect square");
        return s;
    }

    void check_divides(int h, int w) const {
        const int s = side();
        if (h % s != 0 || w % s != 0)
            throw ShapeError("PatchGrid: image " + std::to_string(h) + "x" + std::to_string(w) +
                             " not divisible into " + std::to_string(s) + "x" + std::to_string(s) +
                             " patches");
    }
};

// Per-image list of selected patch indices (raster order over the grid).
using PatchSelection = std::vector<std::vector<int>>;

// P = (softmax(x_sl) + softmax(x_sh) + softmax(x_t)) / 3
inline TensorF joint_probability(const TensorF& x_sl, const TensorF& x_sh, const TensorF& x_t) {
    if (!x_sl.same_shape(x_sh) || !x_sl.same_shape(x_t))
        throw ShapeError("joint_probability: logit shapes differ");
    if (x_sl.shape.size() != 4) throw ShapeError("joint_probability: logits must be (B,n,H,W)");
    const int b = x_sl.shape[0], n = x_sl.shape[1];
    const std::size_t hw = static_cast<std::size_t>(x_sl.shape[2]) * x_sl.shape[3];
    TensorF p(x_sl.shape);
    std::vector<double> buf(n);
    const TensorF* srcs[3] = {&x_sl, &x_sh, &x_t};
    for (const TensorF* src : srcs)
        for (int ib = 0; ib < b; ++ib) {
            const float* z = src->ptr() + static_cast<std::size_t>(ib) * n * hw;
            float* pp = p.ptr() + static_cast<std::size_t>(ib) * n * hw;
            for (std::size_t pix = 0; pix < hw; ++pix) {
                double zmax = z[pix];
                for (int c = 1; c < n; ++c)
                    zmax = std::max(zmax, static_cast<double>(z[c * hw + pix]));
                double denom = 0.0;
                for (int c = 0; c < n; ++c) {
                    buf[c] = std::exp(static_cast<double>(z[c * hw + pix]) - zmax);
                    denom += buf[c];
                }
                for (int c = 0; c < n; ++c)
                    pp[c * hw + pix] += static_cast<float>(buf[c] / denom / 3.0);
            }
        }
    return p;
}

// U = -sum_c P_c * log(P_c + eps), clamped at 0 (the eps stabilizer makes
// one-hot pixels marginally negative otherwise).
inline TensorF uncertainty(const TensorF& p, double epsilon = 1e-8) {
    if (p.shape.size() != 4) throw ShapeError("uncertainty: probabilities must be (B,n,H,W)");
    if (epsilon <= 0.0) throw ConfigError("uncertainty: epsilon must be positive");
    const int b = p.shape[0], n = p.shape[1];
    const int h = p.shape[2], w = p.shape[3];
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    TensorF u({b, h, w});
    for (int ib = 0; ib < b; ++ib) {
        const float* pp = p.ptr() + static_cast<std::size_t>(ib) * n * hw;
        float* up = u.ptr() + static_cast<std::size_t>(ib) * hw;
        for (std::size_t pix = 0; pix < hw; ++pix) {
            double s = 0.0;
            for (int c = 0; c < n; ++c) {
                const double pc = pp[c * hw + pix];
                s -= pc * std::log(pc + epsilon);
            }
            up[pix] = static_cast<float>(std::max(s, 0.0));
        }
    }
    return u;
}

// Foreground predicate: a patch qualifies if argmax(P) is non-background for
// at least one pixel inside it. Qualifying patches are ranked by mean U
// ascending (lowest uncertainty first, raster index breaks ties) and the
// first floor(k/4) are returned. Fallbacks: fewer qualifying -> all of them;
// none qualifying -> the floor(k/4) lowest-mean-U patches overall.
inline PatchSelection select_patches(const TensorF& u, const TensorF& p, const PatchGrid& grid) {
    if (u.shape.size() != 3) throw ShapeError("select_patches: U must be (B,H,W)");
    const int b = u.shape[0], h = u.shape[1], w = u.shape[2];
    if (p.shape.size() != 4 || p.shape[0] != b || p.shape[2] != h || p.shape[3] != w)
        throw ShapeError("select_patches: P/U shape mismatch");
    grid.check_divides(h, w);
    const int s = grid.side();
    const int ph = h / s, pw = w / s;
    const int n = p.shape[1];
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const int want = grid.k / 4;

    PatchSelection sel(b);
    for (int ib = 0; ib < b; ++ib) {
        std::vector<double> mean_u(grid.k, 0.0);
        std::vector<char> has_fg(grid.k, 0);
        const float* up = u.ptr() + static_cast<std::size_t>(ib) * hw;
        const float* pp = p.ptr() + static_cast<std::size_t>(ib) * n * hw;
        for (int gy = 0; gy < s; ++gy)
            for (int gx = 0; gx < s; ++gx) {
                const int pi = gy * s + gx;
                double acc = 0.0;
                for (int y = gy * ph; y < (gy + 1) * ph; ++y)
                    for (int x = gx * pw; x < (gx + 1) * pw; ++x) {
                        const std::size_t pix = static_cast<std::size_t>(y) * w + x;
                        acc += up[pix];
                        if (!has_fg[pi]) {
                            int best = 0;
                            float bv = pp[pix];
                            for (int c = 1; c < n; ++c)
                                if (pp[c * hw + pix] > bv) {
                                    bv = pp[c * hw + pix];
                                    best = c;
                                }
                            if (best != 0) has_fg[pi] = 1;
                        }
                    }
                mean_u[pi] = acc / (static_cast<double>(ph) * pw);
            }
        std::vector<int> order(grid.k);
        for (int i = 0; i < grid.k; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int c) { return mean_u[a] < mean_u[c]; });
        std::vector<int> fg_ranked;
        for (int i : order)
            if (has_fg[i]) fg_ranked.push_back(i);
        std::vector<int>& out = sel[ib];
        if (!fg_ranked.empty()) {
            for (int i = 0; i < static_cast<int>(fg_ranked.size()) && i < want; ++i)
                out.push_back(fg_ranked[i]);
        } else {
            for (int i = 0; i < want; ++i) out.push_back(order[i]);
        }
    }
    return sel;
}

enum class MixRound { forward, reverse };

// forward:  EF1[r]=LF[r], HF1[r]=EF[r], LF1[r]=HF[r]
// reverse:  EF2[r]=HF[r], LF2[r]=EF[r], HF2[r]=LF[r]
// Patches move only to the same spatial location; unselected regions copy
// through unchanged. The two rounds are mutually inverse 3-cycles.
inline freq::FrequencyTriplet cyclic_mix(const freq::FrequencyTriplet& t, const PatchSelection& sel,
                                         const PatchGrid& grid, MixRound round) {
    if (!t.lf.same_shape(t.ef) || !t.lf.same_shape(t.hf))
        throw ShapeError("cyclic_mix: triplet members differ in shape");
    const int b = t.ef.shape[0], c = t.ef.shape[1], h = t.ef.shape[2], w = t.ef.shape[3];
    if (static_cast<int>(sel.size()) != b) throw ShapeError("cyclic_mix: selection batch mismatch");
    grid.check_divides(h, w);
    const int s = grid.side();
    const int ph = h / s, pw = w / s;

    freq::FrequencyTriplet out = t;
    for (int ib = 0; ib < b; ++ib)
        for (int pi : sel[ib]) {
            if (pi < 0 || pi >= grid.k) throw ShapeError("cyclic_mix: patch index out of range");
            const int gy = pi / s, gx = pi % s;
            for (int ic = 0; ic < c; ++ic)
                for (int y = gy * ph; y < (gy + 1) * ph; ++y)
                    for (int x = gx * pw; x < (gx + 1) * pw; ++x) {
                        const float lf = t.lf.at4(ib, ic, y, x);
                        const float ef = t.ef.at4(ib, ic, y, x);
                        const float hf = t.hf.at4(ib, ic, y, x);
                        if (round == MixRound::forward) {
                            out.ef.at4(ib, ic, y, x) = lf;
                            out.hf.at4(ib, ic, y, x) = ef;
                            out.lf.at4(ib, ic, y, x) = hf;
                        } else {
                            out.ef.at4(ib, ic, y, x) = hf;
                            out.lf.at4(ib, ic, y, x) = ef;
                            out.hf.at4(ib, ic, y, x) = lf;
                        }
                    }
        }
    return out;
}

}  // namespace cfc::mix
