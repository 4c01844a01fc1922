#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

// Training objectives: CE + Dice segmentation loss (with analytic logit
// gradients), the Gaussian warm-up ramp, pseudo-labels, and the
// full-frequency / cross-frequency consistency losses.
namespace cfc::losses {

inline constexpr double kDiceSmooth = 1.0;

struct LossWeights {
    double lambda_max = 0.1;
    long t_m = 1;  // total iteration count
};

// lambda(t) = lambda_max * exp(-5 * (1 - t/t_m)^2); strictly increasing,
// lambda(t_m) == lambda_max.
inline double lambda_ramp(long t, const LossWeights& w) {
    if (w.lambda_max <= 0 || w.t_m < 1) throw ConfigError("lambda_ramp: invalid weights");
    if (t < 0 || t > w.t_m) throw ConfigError("lambda_ramp: iteration out of [0, t_m]");
    const double r = 1.0 - static_cast<double>(t) / static_cast<double>(w.t_m);
    return w.lambda_max * std::exp(-5.0 * r * r);
}

struct LossReport {
    double sup1 = 0, unsup1 = 0, sup2 = 0, unsup2 = 0;
    double fcs = 0, ccs = 0;
    double lambda = 0;
    double total = 0;

    void finalize() { total = sup1 + sup2 + lambda * (unsup1 + unsup2); }
};

inline void check_logits_target(const TensorF& logits, const MaskT& target) {
    if (logits.shape.size() != 4) throw ShapeError("seg_loss: logits must be (B,n,H,W)");
    if (target.shape.size() != 3) throw ShapeError("seg_loss: target must be (B,H,W)");
    if (logits.shape[0] != target.shape[0] || logits.shape[2] != target.shape[1] ||
        logits.shape[3] != target.shape[2])
        throw ShapeError("seg_loss: logits " + shape_str(logits.shape) + " vs target " +
                         shape_str(target.shape));
    const int n = logits.shape[1];
    for (auto v : target.data)
        if (v >= n) throw DataError("seg_loss: class index " + std::to_string(int(v)) +
                                    " out of range (num_classes=" + std::to_string(n) + ")");
}

// CE(logits, target) + Dice(softmax(logits), target). CE is the mean over
// batch and pixels; Dice is computed per sample and class over softmax
// probabilities with smoothing 1.0, averaged over classes then batch.
// When dlogits is non-null, coeff * d(loss)/d(logits) is accumulated into it.
inline double seg_loss(const TensorF& logits, const MaskT& target, TensorF* dlogits = nullptr,
                       float coeff = 1.0f) {
    check_logits_target(logits, target);
    const int b = logits.shape[0], n = logits.shape[1], h = logits.shape[2], w = logits.shape[3];
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const double inv_pix = 1.0 / (static_cast<double>(b) * hw);

    TensorF probs(logits.shape);
    std::vector<double> sum_p(static_cast<std::size_t>(b) * n, 0.0);
    std::vector<double> sum_pg(static_cast<std::size_t>(b) * n, 0.0);
    std::vector<double> sum_g(static_cast<std::size_t>(b) * n, 0.0);

    double ce = 0.0;
    for (int ib = 0; ib < b; ++ib) {
        const float* z = logits.ptr() + static_cast<std::size_t>(ib) * n * hw;
        float* p = probs.ptr() + static_cast<std::size_t>(ib) * n * hw;
        const std::uint8_t* t = target.ptr() + static_cast<std::size_t>(ib) * hw;
        for (std::size_t pix = 0; pix < hw; ++pix) {
            double zmax = z[pix];
            for (int c = 1; c < n; ++c) zmax = std::max(zmax, static_cast<double>(z[c * hw + pix]));
            double denom = 0.0;
            for (int c = 0; c < n; ++c) denom += std::exp(static_cast<double>(z[c * hw + pix]) - zmax);
            const double log_denom = std::log(denom);
            const int tc = t[pix];
            ce -= (static_cast<double>(z[tc * hw + pix]) - zmax - log_denom);
            for (int c = 0; c < n; ++c) {
                const double pc = std::exp(static_cast<double>(z[c * hw + pix]) - zmax) / denom;
                p[c * hw + pix] = static_cast<float>(pc);
                sum_p[static_cast<std::size_t>(ib) * n + c] += pc;
                if (c == tc) sum_pg[static_cast<std::size_t>(ib) * n + c] += pc;
            }
            sum_g[static_cast<std::size_t>(ib) * n + tc] += 1.0;
        }
    }
    ce *= inv_pix;

    double dice = 0.0;
    for (int ib = 0; ib < b; ++ib)
        for (int c = 0; c < n; ++c) {
            const std::size_t i = static_cast<std::size_t>(ib) * n + c;
            const double num = 2.0 * sum_pg[i] + kDiceSmooth;
            const double den = sum_p[i] + sum_g[i] + kDiceSmooth;
            dice += 1.0 - num / den;
        }
    dice /= static_cast<double>(b) * n;

    if (dlogits) {
        if (!dlogits->same_shape(logits)) throw ShapeError("seg_loss: dlogits shape mismatch");
        const double inv_bn = 1.0 / (static_cast<double>(b) * n);
        std::vector<double> q(n), dice_dp(static_cast<std::size_t>(b) * n);
        for (int ib = 0; ib < b; ++ib)
            for (int c = 0; c < n; ++c) {
                const std::size_t i = static_cast<std::size_t>(ib) * n + c;
                const double num = 2.0 * sum_pg[i] + kDiceSmooth;
                const double den = sum_p[i] + sum_g[i] + kDiceSmooth;
                // d(1 - num/den)/d p_c(pix) = -(2*g - num/den)/den  (g in {0,1})
                dice_dp[i] = inv_bn / den;  // multiply by (num/den - 2*g) per pixel
            }
        for (int ib = 0; ib < b; ++ib) {
            const float* p = probs.ptr() + static_cast<std::size_t>(ib) * n * hw;
            float* dz = dlogits->ptr() + static_cast<std::size_t>(ib) * n * hw;
            const std::uint8_t* t = target.ptr() + static_cast<std::size_t>(ib) * hw;
            for (std::size_t pix = 0; pix < hw; ++pix) {
                const int tc = t[pix];
                double qdot = 0.0;
                for (int c = 0; c < n; ++c) {
                    const std::size_t i = static_cast<std::size_t>(ib) * n + c;
                    const double num = 2.0 * sum_pg[i] + kDiceSmooth;
                    const double den = sum_p[i] + sum_g[i] + kDiceSmooth;
                    const double g = (c == tc) ? 1.0 : 0.0;
                    q[c] = dice_dp[i] * (num / den - 2.0 * g);
                    qdot += q[c] * p[c * hw + pix];
                }
                for (int c = 0; c < n; ++c) {
                    const double pc = p[c * hw + pix];
                    const double g = (c == tc) ? 1.0 : 0.0;
                    const double dce = inv_pix * (pc - g);
                    const double ddice = pc * (q[c] - qdot);
                    dz[c * hw + pix] += coeff * static_cast<float>(dce + ddice);
                }
            }
        }
    }
    return ce + dice;
}

// Per-pixel argmax; ties resolve to the lowest class index.
inline MaskT pseudo_label(const TensorF& logits) {
    if (logits.shape.size() != 4) throw ShapeError("pseudo_label: logits must be (B,n,H,W)");
    const int b = logits.shape[0], n = logits.shape[1], h = logits.shape[2], w = logits.shape[3];
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    MaskT out({b, h, w});
    for (int ib = 0; ib < b; ++ib) {
        const float* z = logits.ptr() + static_cast<std::size_t>(ib) * n * hw;
        std::uint8_t* m = out.ptr() + static_cast<std::size_t>(ib) * hw;
        for (std::size_t pix = 0; pix < hw; ++pix) {
            int best = 0;
            float bv = z[pix];
            for (int c = 1; c < n; ++c) {
                const float v = z[c * hw + pix];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            m[pix] = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

// First supervised stage: the three outputs against one label.
inline double supervised_loss(const TensorF& out_sl, const TensorF& out_sh, const TensorF& out_t,
                              const MaskT& y) {
    return seg_loss(out_sl, y) + seg_loss(out_sh, y) + seg_loss(out_t, y);
}

// Teacher pseudo-labels supervise both students.
inline double fcs_loss(const TensorF& out_sl, const TensorF& out_sh, const MaskT& y_t) {
    return 0.5 * (seg_loss(out_sl, y_t) + seg_loss(out_sh, y_t));
}

// Mutual student supervision via each other's pseudo-labels.
inline double ccs_loss(const TensorF& out_sl, const TensorF& out_sh) {
    const MaskT y_sl = pseudo_label(out_sl);
    const MaskT y_sh = pseudo_label(out_sh);
    return 0.5 * (seg_loss(out_sh, y_sl) + seg_loss(out_sl, y_sh));
}

inline double unsup_stage_loss(const TensorF& out_sl, const TensorF& out_sh, const TensorF& out_t) {
    return fcs_loss(out_sl, out_sh, pseudo_label(out_t)) + ccs_loss(out_sl, out_sh);
}

}  // namespace cfc::losses
