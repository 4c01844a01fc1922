#pragma once

#include "errors.hpp"
#include "nn.hpp"

// Dual-source EMA: the teacher is pulled toward a convex blend of the two
// students, parameter-wise:
//   theta_t <- alpha*theta_t + beta*(1-alpha)*theta_sl + (1-beta)*(1-alpha)*theta_sh
// The three coefficients sum to 1 exactly.
namespace cfc::teacher {

struct EmaConfig {
    double alpha = 0.99;
    double beta = 0.99;

    void validate() const {
        if (alpha < 0.0 || alpha >= 1.0) throw ConfigError("EmaConfig: alpha must be in [0,1)");
        if (beta < 0.0 || beta > 1.0) throw ConfigError("EmaConfig: beta must be in [0,1]");
    }
};

template <class T>
void check_structural_match(nn::UNet<T>& a, nn::UNet<T>& b) {
    auto pa = a.params();
    auto pb = b.params();
    if (pa.size() != pb.size()) throw ShapeError("ema_update: parameter count mismatch");
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].name != pb[i].name)
            throw ShapeError("ema_update: parameter name mismatch at " + pa[i].name + " vs " +
                             pb[i].name);
        if (pa[i].value->shape != pb[i].value->shape)
            throw ShapeError("ema_update: shape mismatch for " + pa[i].name);
    }
}

// In-place update of the teacher from both students.
template <class T>
void ema_update(nn::UNet<T>& theta_t, nn::UNet<T>& theta_sl, nn::UNet<T>& theta_sh,
                const EmaConfig& cfg) {
    cfg.validate();
    check_structural_match(theta_t, theta_sl);
    check_structural_match(theta_t, theta_sh);
    const double ct = cfg.alpha;
    const double cl = cfg.beta * (1.0 - cfg.alpha);
    const double ch = (1.0 - cfg.beta) * (1.0 - cfg.alpha);
    auto pt = theta_t.params();
    auto pl = theta_sl.params();
    auto ph = theta_sh.params();
    for (std::size_t i = 0; i < pt.size(); ++i) {
        T* w = pt[i].value->ptr();
        const T* wl = pl[i].value->ptr();
        const T* wh = ph[i].value->ptr();
        const std::size_t n = pt[i].value->size();
        for (std::size_t j = 0; j < n; ++j)
            w[j] = static_cast<T>(ct * w[j] + cl * wl[j] + ch * wh[j]);
    }
}

}  // namespace cfc::teacher
