#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

// Encoder-decoder segmentation network with hand-written backprop, templated
// on the scalar type (float for training, double for finite-difference
// verification). Normalization is per-instance (no statistics shared across
// the batch), so labeled/unlabeled and LF/EF/HF sub-batches never leak into
// each other and evaluation behaves identically to training.
namespace cfc::nn {

struct NetworkConfig {
    int in_channels = 1;
    int num_classes = 2;
    std::vector<int> encoder_channels = {64, 128, 256, 512};

    void validate() const {
        if (in_channels < 1) throw ConfigError("NetworkConfig: in_channels must be >= 1");
        if (num_classes < 2) throw ConfigError("NetworkConfig: num_classes must be >= 2");
        if (encoder_channels.size() < 2)
            throw ConfigError("NetworkConfig: need at least 2 encoder stages");
        for (std::size_t i = 1; i < encoder_channels.size(); ++i)
            if (encoder_channels[i] <= encoder_channels[i - 1])
                throw ConfigError("NetworkConfig: encoder_channels must be strictly increasing");
        if (encoder_channels.front() < 1) throw ConfigError("NetworkConfig: channels must be >= 1");
    }

    // one 2x pool per encoder stage (the bottleneck sits below the last pool)
    int spatial_multiple() const { return 1 << encoder_channels.size(); }

    bool operator==(const NetworkConfig&) const = default;
};

template <class T>
struct ParamRef {
    std::string name;
    Tensor<T>* value;
    Tensor<T>* grad;
};

namespace detail {

inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
                k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
                k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <class T>
void im2col3x3(const T* x, int c, int h, int w, T* col) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ic = 0; ic < c; ++ic)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = col + ((static_cast<std::size_t>(ic) * 9) + ky * 3 + kx) * hw;
                const int dy = ky - 1, dx = kx - 1;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst + static_cast<std::size_t>(y) * w,
                                  dst + static_cast<std::size_t>(y + 1) * w, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<std::size_t>(ic) * h + sy) * w;
                    T* d = dst + static_cast<std::size_t>(y) * w;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + dx;
                        d[xx] = (sx < 0 || sx >= w) ? T(0) : src[sx];
                    }
                }
            }
}

template <class T>
void col2im3x3_add(const T* col, int c, int h, int w, T* x) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ic = 0; ic < c; ++ic)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = col + ((static_cast<std::size_t>(ic) * 9) + ky * 3 + kx) * hw;
                const int dy = ky - 1, dx = kx - 1;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    T* dst = x + (static_cast<std::size_t>(ic) * h + sy) * w;
                    const T* s = src + static_cast<std::size_t>(y) * w;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + dx;
                        if (sx >= 0 && sx < w) dst[sx] += s[xx];
                    }
                }
            }
}

}  // namespace detail

// 3x3 (pad 1) or 1x1 convolution.
template <class T>
struct Conv2d {
    int cin = 0, cout = 0, ksize = 3;
    Tensor<T> weight, bias, dweight, dbias;
    Tensor<T> cached_in;

    void init(int in_c, int out_c, int k, std::mt19937& rng) {
        cin = in_c;
        cout = out_c;
        ksize = k;
        const int fan_in = cin * k * k;
        const T std_dev = std::sqrt(T(2) / static_cast<T>(fan_in));
        weight = Tensor<T>::randn({cout, fan_in}, rng, std_dev);
        bias = Tensor<T>::zeros({cout});
        dweight = Tensor<T>::zeros({cout, fan_in});
        dbias = Tensor<T>::zeros({cout});
    }

    Tensor<T> forward(const Tensor<T>& x, bool keep_cache) {
        const int b = x.shape[0], h = x.shape[2], w = x.shape[3];
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        Tensor<T> y({b, cout, h, w});
        if (ksize == 1) {
            for (int ib = 0; ib < b; ++ib)
                detail::gemm(false, false, cout, static_cast<int>(hw), cin, T(1), weight.ptr(), cin,
                             x.ptr() + static_cast<std::size_t>(ib) * cin * hw, static_cast<int>(hw),
                             T(0), y.ptr() + static_cast<std::size_t>(ib) * cout * hw,
                             static_cast<int>(hw));
        } else {
            std::vector<T> col(static_cast<std::size_t>(cin) * 9 * hw);
            for (int ib = 0; ib < b; ++ib) {
                detail::im2col3x3(x.ptr() + static_cast<std::size_t>(ib) * cin * hw, cin, h, w,
                                  col.data());
                detail::gemm(false, false, cout, static_cast<int>(hw), cin * 9, T(1), weight.ptr(),
                             cin * 9, col.data(), static_cast<int>(hw), T(0),
                             y.ptr() + static_cast<std::size_t>(ib) * cout * hw,
                             static_cast<int>(hw));
            }
        }
        for (int ib = 0; ib < b; ++ib)
            for (int c = 0; c < cout; ++c) {
                T* p = y.ptr() + (static_cast<std::size_t>(ib) * cout + c) * hw;
                const T bv = bias.data[c];
                for (std::size_t i = 0; i < hw; ++i) p[i] += bv;
            }
        if (keep_cache) cached_in = x;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const Tensor<T>& x = cached_in;
        const int b = x.shape[0], h = x.shape[2], w = x.shape[3];
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        Tensor<T> dx(x.shape);
        for (int ib = 0; ib < b; ++ib)
            for (int c = 0; c < cout; ++c) {
                const T* p = dy.ptr() + (static_cast<std::size_t>(ib) * cout + c) * hw;
                double s = 0;
                for (std::size_t i = 0; i < hw; ++i) s += p[i];
                dbias.data[c] += static_cast<T>(s);
            }
        if (ksize == 1) {
            for (int ib = 0; ib < b; ++ib) {
                const T* xp = x.ptr() + static_cast<std::size_t>(ib) * cin * hw;
                const T* dyp = dy.ptr() + static_cast<std::size_t>(ib) * cout * hw;
                detail::gemm(false, true, cout, cin, static_cast<int>(hw), T(1), dyp,
                             static_cast<int>(hw), xp, static_cast<int>(hw), T(1), dweight.ptr(),
                             cin);
                detail::gemm(true, false, cin, static_cast<int>(hw), cout, T(1), weight.ptr(), cin,
                             dyp, static_cast<int>(hw), T(0),
                             dx.ptr() + static_cast<std::size_t>(ib) * cin * hw,
                             static_cast<int>(hw));
            }
        } else {
            std::vector<T> col(static_cast<std::size_t>(cin) * 9 * hw);
            std::vector<T> dcol(static_cast<std::size_t>(cin) * 9 * hw);
            for (int ib = 0; ib < b; ++ib) {
                const T* xp = x.ptr() + static_cast<std::size_t>(ib) * cin * hw;
                const T* dyp = dy.ptr() + static_cast<std::size_t>(ib) * cout * hw;
                detail::im2col3x3(xp, cin, h, w, col.data());
                detail::gemm(false, true, cout, cin * 9, static_cast<int>(hw), T(1), dyp,
                             static_cast<int>(hw), col.data(), static_cast<int>(hw), T(1),
                             dweight.ptr(), cin * 9);
                detail::gemm(true, false, cin * 9, static_cast<int>(hw), cout, T(1), weight.ptr(),
                             cin * 9, dyp, static_cast<int>(hw), T(0), dcol.data(),
                             static_cast<int>(hw));
                detail::col2im3x3_add(dcol.data(), cin, h, w,
                                      dx.ptr() + static_cast<std::size_t>(ib) * cin * hw);
            }
        }
        return dx;
    }
};

// Per-(sample, channel) normalization with affine parameters.
template <class T>
struct InstanceNorm {
    int channels = 0;
    static constexpr T kEps = T(1e-5);
    Tensor<T> gamma, beta, dgamma, dbeta;
    Tensor<T> cached_xhat;
    std::vector<T> cached_invstd;

    void init(int c) {
        channels = c;
        gamma = Tensor<T>::full({c}, T(1));
        beta = Tensor<T>::zeros({c});
        dgamma = Tensor<T>::zeros({c});
        dbeta = Tensor<T>::zeros({c});
    }

    Tensor<T> forward(const Tensor<T>& x, bool keep_cache) {
        const int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        Tensor<T> y(x.shape);
        Tensor<T> xhat(x.shape);
        std::vector<T> invstds(static_cast<std::size_t>(b) * c);
        for (int ib = 0; ib < b; ++ib)
            for (int ic = 0; ic < c; ++ic) {
                const T* xp = x.ptr() + (static_cast<std::size_t>(ib) * c + ic) * hw;
                double mean = 0;
                for (std::size_t i = 0; i < hw; ++i) mean += xp[i];
                mean /= static_cast<double>(hw);
                double var = 0;
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = xp[i] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(hw);
                const T invstd = T(1) / std::sqrt(static_cast<T>(var) + kEps);
                invstds[static_cast<std::size_t>(ib) * c + ic] = invstd;
                T* xh = xhat.ptr() + (static_cast<std::size_t>(ib) * c + ic) * hw;
                T* yp = y.ptr() + (static_cast<std::size_t>(ib) * c + ic) * hw;
                const T g = gamma.data[ic], bb = beta.data[ic], m = static_cast<T>(mean);
                for (std::size_t i = 0; i < hw; ++i) {
                    xh[i] = (xp[i] - m) * invstd;
                    yp[i] = g * xh[i] + bb;
                }
            }
        if (keep_cache) {
            cached_xhat = std::move(xhat);
            cached_invstd = std::move(invstds);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int b = dy.shape[0], c = dy.shape[1], h = dy.shape[2], w = dy.shape[3];
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        Tensor<T> dx(dy.shape);
        for (int ib = 0; ib < b; ++ib)
            for (int ic = 0; ic < c; ++ic) {
                const T* dyp = dy.ptr() + (static_cast<std::size_t>(ib) * c + ic) * hw;
                const T* xh = cached_xhat.ptr() + (static_cast<std::size_t>(ib) * c + ic) * hw;
                double sdy = 0, sdyx = 0;
                for (std::size_t i = 0; i < hw; ++i) {
                    sdy += dyp[i];
                    sdyx += dyp[i] * xh[i];
                }
                dbeta.data[ic] += static_cast<T>(sdy);
                dgamma.data[ic] += static_cast<T>(sdyx);
                const T g = gamma.data[ic];
                const T invstd = cached_invstd[static_cast<std::size_t>(ib) * c + ic];
                const T mdy = static_cast<T>(sdy / static_cast<double>(hw));
                const T mdyx = static_cast<T>(sdyx / static_cast<double>(hw));
                T* dxp = dx.ptr() + (static_cast<std::size_t>(ib) * c + ic) * hw;
                for (std::size_t i = 0; i < hw; ++i)
                    dxp[i] = g * invstd * (dyp[i] - mdy - xh[i] * mdyx);
            }
        return dx;
    }
};

template <class T>
struct ReLU {
    Tensor<T> cached_out;

    Tensor<T> forward(const Tensor<T>& x, bool keep_cache) {
        Tensor<T> y = x;
        for (auto& v : y.data) v = v > T(0) ? v : T(0);
        if (keep_cache) cached_out = y;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (cached_out.data[i] <= T(0)) dx.data[i] = T(0);
        return dx;
    }
};

template <class T>
struct MaxPool2 {
    std::vector<std::int32_t> cached_arg;
    std::vector<int> in_shape;

    Tensor<T> forward(const Tensor<T>& x, bool keep_cache) {
        const int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
        const int oh = h / 2, ow = w / 2;
        Tensor<T> y({b, c, oh, ow});
        std::vector<std::int32_t> arg(y.size());
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        std::size_t oi = 0;
        for (int ib = 0; ib < b; ++ib)
            for (int ic = 0; ic < c; ++ic) {
                const T* xp = x.ptr() + (static_cast<std::size_t>(ib) * c + ic) * hw;
                for (int y0 = 0; y0 < oh; ++y0)
                    for (int x0 = 0; x0 < ow; ++x0, ++oi) {
                        int best = (2 * y0) * w + 2 * x0;
                        T bv = xp[best];
                        const int cand[3] = {(2 * y0) * w + 2 * x0 + 1, (2 * y0 + 1) * w + 2 * x0,
                                             (2 * y0 + 1) * w + 2 * x0 + 1};
                        for (int idx : cand)
                            if (xp[idx] > bv) {
                                bv = xp[idx];
                                best = idx;
                            }
                        y.data[oi] = bv;
                        arg[oi] = best;
                    }
            }
        if (keep_cache) {
            cached_arg = std::move(arg);
            in_shape = x.shape;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(in_shape);
        const int c = in_shape[1];
        const std::size_t hw = static_cast<std::size_t>(in_shape[2]) * in_shape[3];
        const std::size_t ohw = dy.size() / (static_cast<std::size_t>(dy.shape[0]) * c);
        std::size_t oi = 0;
        for (int ib = 0; ib < dy.shape[0]; ++ib)
            for (int ic = 0; ic < c; ++ic) {
                T* dxp = dx.ptr() + (static_cast<std::size_t>(ib) * c + ic) * hw;
                for (std::size_t i = 0; i < ohw; ++i, ++oi) dxp[cached_arg[oi]] += dy.data[oi];
            }
        return dx;
    }
};

template <class T>
Tensor<T> upsample2_nearest(const Tensor<T>& x) {
    const int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    Tensor<T> y({b, c, 2 * h, 2 * w});
    for (int ib = 0; ib < b; ++ib)
        for (int ic = 0; ic < c; ++ic) {
            const T* xp =
                x.ptr() + (static_cast<std::size_t>(ib) * c + ic) * static_cast<std::size_t>(h) * w;
            T* yp = y.ptr() +
                    (static_cast<std::size_t>(ib) * c + ic) * static_cast<std::size_t>(4 * h) * w;
            for (int yy = 0; yy < 2 * h; ++yy)
                for (int xx = 0; xx < 2 * w; ++xx)
                    yp[static_cast<std::size_t>(yy) * 2 * w + xx] =
                        xp[static_cast<std::size_t>(yy / 2) * w + xx / 2];
        }
    return y;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
    const int b = dy.shape[0], c = dy.shape[1], h = dy.shape[2] / 2, w = dy.shape[3] / 2;
    Tensor<T> dx({b, c, h, w});
    for (int ib = 0; ib < b; ++ib)
        for (int ic = 0; ic < c; ++ic) {
            T* dxp = dx.ptr() +
                     (static_cast<std::size_t>(ib) * c + ic) * static_cast<std::size_t>(h) * w;
            const T* dyp = dy.ptr() + (static_cast<std::size_t>(ib) * c + ic) *
                                          static_cast<std::size_t>(4 * h) * w;
            for (int yy = 0; yy < 2 * h; ++yy)
                for (int xx = 0; xx < 2 * w; ++xx)
                    dxp[static_cast<std::size_t>(yy / 2) * w + xx / 2] +=
                        dyp[static_cast<std::size_t>(yy) * 2 * w + xx];
        }
    return dx;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const int bb = a.shape[0], ca = a.shape[1], cb = b.shape[1], h = a.shape[2], w = a.shape[3];
    Tensor<T> y({bb, ca + cb, h, w});
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ib = 0; ib < bb; ++ib) {
        std::copy_n(a.ptr() + static_cast<std::size_t>(ib) * ca * hw, ca * hw,
                    y.ptr() + static_cast<std::size_t>(ib) * (ca + cb) * hw);
        std::copy_n(b.ptr() + static_cast<std::size_t>(ib) * cb * hw, cb * hw,
                    y.ptr() + (static_cast<std::size_t>(ib) * (ca + cb) + ca) * hw);
    }
    return y;
}

template <class T>
void split_channels(const Tensor<T>& dy, Tensor<T>& da, Tensor<T>& db, int ca, int cb) {
    const int b = dy.shape[0], h = dy.shape[2], w = dy.shape[3];
    da = Tensor<T>({b, ca, h, w});
    db = Tensor<T>({b, cb, h, w});
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ib = 0; ib < b; ++ib) {
        std::copy_n(dy.ptr() + static_cast<std::size_t>(ib) * (ca + cb) * hw, ca * hw,
                    da.ptr() + static_cast<std::size_t>(ib) * ca * hw);
        std::copy_n(dy.ptr() + (static_cast<std::size_t>(ib) * (ca + cb) + ca) * hw, cb * hw,
                    db.ptr() + static_cast<std::size_t>(ib) * cb * hw);
    }
}

// conv3x3 -> norm -> relu, twice
template <class T>
struct ConvBlock {
    Conv2d<T> conv1, conv2;
    InstanceNorm<T> norm1, norm2;
    ReLU<T> relu1, relu2;

    void init(int cin, int cout, std::mt19937& rng) {
        conv1.init(cin, cout, 3, rng);
        norm1.init(cout);
        conv2.init(cout, cout, 3, rng);
        norm2.init(cout);
    }

    Tensor<T> forward(const Tensor<T>& x, bool kc) {
        Tensor<T> y = relu1.forward(norm1.forward(conv1.forward(x, kc), kc), kc);
        return relu2.forward(norm2.forward(conv2.forward(y, kc), kc), kc);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> d = conv2.backward(norm2.backward(relu2.backward(dy)));
        return conv1.backward(norm1.backward(relu1.backward(d)));
    }

    void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
        out.push_back({prefix + ".conv1.weight", &conv1.weight, &conv1.dweight});
        out.push_back({prefix + ".conv1.bias", &conv1.bias, &conv1.dbias});
        out.push_back({prefix + ".norm1.gamma", &norm1.gamma, &norm1.dgamma});
        out.push_back({prefix + ".norm1.beta", &norm1.beta, &norm1.dbeta});
        out.push_back({prefix + ".conv2.weight", &conv2.weight, &conv2.dweight});
        out.push_back({prefix + ".conv2.bias", &conv2.bias, &conv2.dbias});
        out.push_back({prefix + ".norm2.gamma", &norm2.gamma, &norm2.dgamma});
        out.push_back({prefix + ".norm2.beta", &norm2.beta, &norm2.dbeta});
    }
};

// up-path stage: nearest x2 -> conv3x3+norm+relu -> concat skip -> ConvBlock
template <class T>
struct UpBlock {
    Conv2d<T> up_conv;
    InstanceNorm<T> up_norm;
    ReLU<T> up_relu;
    ConvBlock<T> block;
    int skip_channels = 0;

    void init(int cin, int cout, std::mt19937& rng) {
        up_conv.init(cin, cout, 3, rng);
        up_norm.init(cout);
        block.init(2 * cout, cout, rng);
        skip_channels = cout;
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& skip, bool kc) {
        Tensor<T> up = upsample2_nearest(x);
        Tensor<T> y = up_relu.forward(up_norm.forward(up_conv.forward(up, kc), kc), kc);
        return block.forward(concat_channels(y, skip), kc);
    }

    // returns {dx, dskip}
    std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy) {
        Tensor<T> dcat = block.backward(dy);
        Tensor<T> dup_out, dskip;
        split_channels(dcat, dup_out, dskip, skip_channels, skip_channels);
        Tensor<T> dup = up_conv.backward(up_norm.backward(up_relu.backward(dup_out)));
        return {upsample2_backward(dup), std::move(dskip)};
    }

    void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
        out.push_back({prefix + ".up_conv.weight", &up_conv.weight, &up_conv.dweight});
        out.push_back({prefix + ".up_conv.bias", &up_conv.bias, &up_conv.dbias});
        out.push_back({prefix + ".up_norm.gamma", &up_norm.gamma, &up_norm.dgamma});
        out.push_back({prefix + ".up_norm.beta", &up_norm.beta, &up_norm.dbeta});
        block.collect(prefix + ".block", out);
    }
};

// U-shaped encoder-decoder; one instance is the NetworkState of the
// checkpoint format: a copyable value type with parameters enumerable by
// stable names.
template <class T>
struct UNet {
    NetworkConfig config;
    std::vector<ConvBlock<T>> enc;
    std::vector<MaxPool2<T>> pools;
    ConvBlock<T> bottleneck;
    std::vector<UpBlock<T>> dec;  // ordered deepest first
    Conv2d<T> head;

    std::vector<Tensor<T>> cached_skips;

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        for (std::size_t i = 0; i < enc.size(); ++i) enc[i].collect("enc" + std::to_string(i), out);
        bottleneck.collect("bottleneck", out);
        for (std::size_t i = 0; i < dec.size(); ++i) dec[i].collect("dec" + std::to_string(i), out);
        out.push_back({"head.weight", &head.weight, &head.dweight});
        out.push_back({"head.bias", &head.bias, &head.dbias});
        return out;
    }

    void zero_grad() {
        for (auto& p : params()) p.grad->fill(T(0));
    }

    void check_spatial(const Tensor<T>& batch) const {
        if (batch.shape.size() != 4) throw ShapeError("forward: batch must be (B,C,H,W)");
        if (batch.shape[1] != config.in_channels)
            throw ShapeError("forward: expected " + std::to_string(config.in_channels) +
                             " input channels, got " + std::to_string(batch.shape[1]));
        const int mult = config.spatial_multiple();
        if (batch.shape[2] % mult != 0 || batch.shape[3] % mult != 0)
            throw ShapeError("forward: spatial size " + std::to_string(batch.shape[2]) + "x" +
                             std::to_string(batch.shape[3]) + " must be divisible by " +
                             std::to_string(mult));
    }

    Tensor<T> forward(const Tensor<T>& batch, bool keep_cache = true) {
        check_spatial(batch);
        cached_skips.assign(enc.size(), Tensor<T>{});
        Tensor<T> x = batch;
        for (std::size_t i = 0; i < enc.size(); ++i) {
            Tensor<T> s = enc[i].forward(x, keep_cache);
            cached_skips[i] = s;
            x = pools[i].forward(s, keep_cache);
        }
        x = bottleneck.forward(x, keep_cache);
        for (std::size_t i = 0; i < dec.size(); ++i)
            x = dec[i].forward(x, cached_skips[enc.size() - 1 - i], keep_cache);
        return head.forward(x, keep_cache);
    }

    // Accumulates parameter gradients; forward(batch, true) must precede.
    void backward(const Tensor<T>& dlogits) {
        Tensor<T> d = head.backward(dlogits);
        std::vector<Tensor<T>> dskips(enc.size());
        for (std::size_t j = dec.size(); j-- > 0;) {
            auto [dx, dskip] = dec[j].backward(d);
            d = std::move(dx);
            dskips[enc.size() - 1 - j] = std::move(dskip);  // dec[j] consumed skip n-1-j
        }
        d = bottleneck.backward(d);
        for (std::size_t i = enc.size(); i-- > 0;) {
            Tensor<T> ds = pools[i].backward(d);
            ds += dskips[i];
            d = enc[i].backward(ds);
        }
    }

    void drop_caches() { cached_skips.clear(); }
};

template <class T>
UNet<T> build_network(const NetworkConfig& config, unsigned seed) {
    config.validate();
    std::mt19937 rng(seed);
    UNet<T> net;
    net.config = config;
    const auto& ch = config.encoder_channels;
    int prev = config.in_channels;
    net.enc.resize(ch.size());
    net.pools.resize(ch.size());
    for (std::size_t i = 0; i < ch.size(); ++i) {
        net.enc[i].init(prev, ch[i], rng);
        prev = ch[i];
    }
    net.bottleneck.init(ch.back(), 2 * ch.back(), rng);
    net.dec.resize(ch.size());
    prev = 2 * ch.back();
    for (std::size_t i = 0; i < ch.size(); ++i) {
        const int cout = ch[ch.size() - 1 - i];
        net.dec[i].init(prev, cout, rng);
        prev = cout;
    }
    net.head.init(ch.front(), config.num_classes, 1, rng);
    return net;
}

using UNetF = UNet<float>;
using UNetD = UNet<double>;

// Adaptive moment optimizer with externally supplied learning rate.
template <class T>
struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step_count = 0;
    std::vector<Tensor<T>> m, v;

    void attach(UNet<T>& net) {
        m.clear();
        v.clear();
        for (auto& p : net.params()) {
            m.push_back(Tensor<T>::zeros(p.value->shape));
            v.push_back(Tensor<T>::zeros(p.value->shape));
        }
    }

    void step(UNet<T>& net, double lr) {
        auto ps = net.params();
        if (ps.size() != m.size()) throw ConfigError("Adam: optimizer not attached to this network");
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, step_count);
        const double bc2 = 1.0 - std::pow(beta2, step_count);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            T* w = ps[i].value->ptr();
            const T* g = ps[i].grad->ptr();
            T* mi = m[i].ptr();
            T* vi = v[i].ptr();
            const std::size_t n = ps[i].value->size();
            for (std::size_t j = 0; j < n; ++j) {
                mi[j] = static_cast<T>(beta1 * mi[j] + (1.0 - beta1) * g[j]);
                vi[j] = static_cast<T>(beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j]);
                const double mh = mi[j] / bc1;
                const double vh = vi[j] / bc2;
                w[j] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps));
            }
        }
    }
};

using AdamF = Adam<float>;

inline double poly_lr(double base_lr, long t, long t_m, double power = 0.9) {
    if (t_m <= 0) return base_lr;
    const double frac = 1.0 - static_cast<double>(t) / static_cast<double>(t_m);
    return base_lr * std::pow(std::max(frac, 0.0), power);
}

}  // namespace cfc::nn
