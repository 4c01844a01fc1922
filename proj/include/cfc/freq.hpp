#pragma once

#include <array>
#include <cmath>

#include "errors.hpp"
#include "tensor.hpp"

// Single-level 2D db2 wavelet analysis/synthesis with symmetric
// (half-sample mirror) boundary extension.
//
// Convention: analysis computes out[k] = sum_j f[j] * ext(2k+1-j) over the
// mirrored signal (decimation keeps odd phases of the full convolution);
// each sub-band along an axis of length N has ceil((N+3)/2 - 1)+... =
// floor((N+3)/2) samples. Synthesis zero-upsamples, convolves with the
// reconstruction filters, drops 2 samples from each end, and crops to the
// recorded source length.
namespace cfc::freq {

// db2 (Daubechies 4-tap) filter banks, from the closed form
// h = [(1+s)/(4*sqrt(2)), (3+s)/(4*sqrt(2)), (3-s)/(4*sqrt(2)), (1-s)/(4*sqrt(2))],
// s = sqrt(3). To 12 decimal places:
//   dec_lo = [-0.129409522551,  0.224143868042,  0.836516303738,  0.482962913145]
//   dec_hi = [-0.482962913145,  0.836516303738, -0.224143868042, -0.129409522551]
//   rec_lo = [ 0.482962913145,  0.836516303738,  0.224143868042, -0.129409522551]
//   rec_hi = [-0.129409522551, -0.224143868042,  0.836516303738, -0.482962913145]
inline constexpr int kFilterLen = 4;
inline constexpr std::array<double, 4> kDecLo = {
    -0.12940952255126037, 0.22414386804201339, 0.83651630373780794, 0.48296291314453416};
inline constexpr std::array<double, 4> kDecHi = {
    -0.48296291314453416, 0.83651630373780794, -0.22414386804201339, -0.12940952255126037};
inline constexpr std::array<double, 4> kRecLo = {
    0.48296291314453416, 0.83651630373780794, 0.22414386804201339, -0.12940952255126037};
inline constexpr std::array<double, 4> kRecHi = {
    -0.12940952255126037, -0.22414386804201339, 0.83651630373780794, -0.48296291314453416};

// Half-sample symmetric reflection: ... x1 x0 | x0 x1 ... xN-1 | xN-1 xN-2 ...
inline int sym_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -1 - i;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

inline int analysis_len(int n) { return (n + kFilterLen - 1) / 2; }

// One analysis pass along a strided line of length n.
inline void dwt_line(const double* x, int n, std::ptrdiff_t stride, double* lo, double* hi,
                     std::ptrdiff_t out_stride) {
    const int len = analysis_len(n);
    for (int k = 0; k < len; ++k) {
        double a = 0.0, d = 0.0;
        for (int j = 0; j < kFilterLen; ++j) {
            const double v = x[stride * sym_index(2 * k + 1 - j, n)];
            a += kDecLo[j] * v;
            d += kDecHi[j] * v;
        }
        lo[out_stride * k] = a;
        hi[out_stride * k] = d;
    }
}

// Synthesis along a line: coefficients of length len reconstruct
// 2*len - 2 samples; the caller crops to the source length.
inline void idwt_line(const double* lo, const double* hi, int len, std::ptrdiff_t in_stride,
                      double* out, int out_n, std::ptrdiff_t out_stride) {
    const int full = 2 * len - kFilterLen + 2;
    for (int m = 0; m < out_n && m < full; ++m) {
        // full-convolution index before cropping kFilterLen-2 leading samples
        const int mm = m + kFilterLen - 2;
        double acc = 0.0;
        // zero-upsampled coefficients: u[2k] = coeff[k]; tap j = mm - 2k in [0, kFilterLen)
        for (int k = std::max(0, (mm - kFilterLen + 2) / 2); k < len; ++k) {
            const int j = mm - 2 * k;
            if (j < 0) break;
            if (j >= kFilterLen) continue;
            acc += kRecLo[j] * lo[in_stride * k] + kRecHi[j] * hi[in_stride * k];
        }
        out[out_stride * m] = acc;
    }
}

struct SubbandSet {
    TensorD ll, lh, hl, hh;  // second letter: highpass along width; first: along height
    int src_h = 0, src_w = 0;

    bool shapes_consistent() const {
        return ll.same_shape(lh) && ll.same_shape(hl) && ll.same_shape(hh);
    }
};

struct FrequencyTriplet {
    TensorF lf, ef, hf;  // all (B, C, H, W); lf + hf == ef
};

inline void check_input_4d(const std::vector<int>& s) {
    if (s.size() != 4) throw ShapeError("dwt2: expected rank-4 (B,C,H,W) input, got " + shape_str(s));
    if (s[2] < kFilterLen || s[3] < kFilterLen)
        throw ShapeError("dwt2: spatial size must be at least 4x4 (db2 filter length), got " +
                         shape_str(s));
}

inline SubbandSet dwt2(const TensorD& img) {
    check_input_4d(img.shape);
    const int b = img.shape[0], c = img.shape[1], h = img.shape[2], w = img.shape[3];
    const int lw = analysis_len(w), lh_n = analysis_len(h);

    SubbandSet sb;
    sb.src_h = h;
    sb.src_w = w;
    const std::vector<int> out_shape = {b, c, lh_n, lw};
    sb.ll = TensorD(out_shape);
    sb.lh = TensorD(out_shape);
    sb.hl = TensorD(out_shape);
    sb.hh = TensorD(out_shape);

    // row pass (along W), then column pass (along H)
    TensorD row_lo({b, c, h, lw}), row_hi({b, c, h, lw});
    for (int ib = 0; ib < b; ++ib)
        for (int ic = 0; ic < c; ++ic) {
            for (int y = 0; y < h; ++y)
                dwt_line(&img.at4(ib, ic, y, 0), w, 1, &row_lo.at4(ib, ic, y, 0),
                         &row_hi.at4(ib, ic, y, 0), 1);
            for (int x = 0; x < lw; ++x) {
                dwt_line(&row_lo.at4(ib, ic, 0, x), h, lw, &sb.ll.at4(ib, ic, 0, x),
                         &sb.hl.at4(ib, ic, 0, x), lw);
                dwt_line(&row_hi.at4(ib, ic, 0, x), h, lw, &sb.lh.at4(ib, ic, 0, x),
                         &sb.hh.at4(ib, ic, 0, x), lw);
            }
        }
    return sb;
}

inline TensorD idwt2(const SubbandSet& sb, int target_h, int target_w) {
    if (!sb.shapes_consistent())
        throw ShapeError("idwt2: sub-band shapes differ");
    const auto& s = sb.ll.shape;
    if (s.size() != 4) throw ShapeError("idwt2: expected rank-4 sub-bands");
    const int b = s[0], c = s[1], lh_n = s[2], lw = s[3];
    if (analysis_len(target_h) != lh_n || analysis_len(target_w) != lw)
        throw ShapeError("idwt2: target shape (" + std::to_string(target_h) + ", " +
                         std::to_string(target_w) + ") inconsistent with sub-band shape " +
                         shape_str(s));

    const int mid_h = 2 * lh_n - kFilterLen + 2;  // >= target_h
    TensorD col_lo({b, c, mid_h, lw}), col_hi({b, c, mid_h, lw});
    TensorD out({b, c, target_h, target_w});
    for (int ib = 0; ib < b; ++ib)
        for (int ic = 0; ic < c; ++ic) {
            for (int x = 0; x < lw; ++x) {
                idwt_line(&sb.ll.at4(ib, ic, 0, x), &sb.hl.at4(ib, ic, 0, x), lh_n, lw,
                          &col_lo.at4(ib, ic, 0, x), mid_h, lw);
                idwt_line(&sb.lh.at4(ib, ic, 0, x), &sb.hh.at4(ib, ic, 0, x), lh_n, lw,
                          &col_hi.at4(ib, ic, 0, x), mid_h, lw);
            }
            for (int y = 0; y < target_h; ++y)
                idwt_line(&col_lo.at4(ib, ic, y, 0), &col_hi.at4(ib, ic, y, 0), lw, 1,
                          &out.at4(ib, ic, y, 0), target_w, 1);
        }
    return out;
}

inline TensorD idwt2(const SubbandSet& sb) { return idwt2(sb, sb.src_h, sb.src_w); }

// lf = inverse of {ll, 0, 0, 0}; hf = inverse of {0, lh, hl, hh}; lf + hf == ef.
inline FrequencyTriplet decompose(const TensorF& ef) {
    TensorD efd = ef.cast<double>();
    SubbandSet sb = dwt2(efd);
    SubbandSet low = sb, high = sb;
    low.lh.fill(0.0);
    low.hl.fill(0.0);
    low.hh.fill(0.0);
    high.ll.fill(0.0);
    FrequencyTriplet out;
    out.ef = ef;
    out.lf = idwt2(low).cast<float>();
    out.hf = idwt2(high).cast<float>();
    return out;
}

}  // namespace cfc::freq
