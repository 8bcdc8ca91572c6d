#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "pseudoblur/nn.hpp"

namespace pseudoblur {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
double grad_global_norm(const ParamSetT<T>& grads) {
    double acc = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i)
        for (const auto& v : grads.entry(i).second.data) {
            double d = to_double(v);
            acc += d * d;
        }
    return std::sqrt(acc);
}

template <typename T>
bool grads_finite(const ParamSetT<T>& grads) {
    for (std::size_t i = 0; i < grads.size(); ++i)
        for (const auto& v : grads.entry(i).second.data)
            if (!std::isfinite(to_double(v))) return false;
    return true;
}

// Global-norm clipping; no-op when the norm is within bound.
template <typename T>
void clip_grads(ParamSetT<T>& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    const double norm = grad_global_norm(grads);
    if (norm <= max_norm) return;
    const T scale = T(max_norm / norm);
    for (std::size_t i = 0; i < grads.size(); ++i)
        for (auto& v : grads.entry(i).second.data) v = v * scale;
}

// params' = params - lr * grads
template <typename T>
void sgd_step(ParamSetT<T>& params, const ParamSetT<T>& grads, double lr) {
    if (!params.same_inventory(grads)) throw std::invalid_argument("sgd_step inventory mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.entry(i).second.data;
        const auto& g = grads.entry(i).second.data;
        for (std::size_t j = 0; j < p.size(); ++j) p[j] = p[j] - T(lr) * g[j];
    }
}

template <typename T>
struct AdamBuffers {
    ParamSetT<T> m, v;
    std::uint64_t t = 0;

    void ensure(const ParamSetT<T>& params) {
        if (m.size() == 0) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                m.add(params.entry(i).first, Tensor<T>(params.entry(i).second.shape, T(0)));
                v.add(params.entry(i).first, Tensor<T>(params.entry(i).second.shape, T(0)));
            }
        } else if (!m.same_inventory(params)) {
            throw std::invalid_argument("adam buffers inventory mismatch");
        }
    }
};

// Standard bias-corrected update.
template <typename T>
void adam_step(ParamSetT<T>& params, const ParamSetT<T>& grads, AdamBuffers<T>& buf, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    using std::sqrt;
    if (!params.same_inventory(grads)) throw std::invalid_argument("adam_step inventory mismatch");
    buf.ensure(params);
    buf.t += 1;
    const T b1 = T(beta1), b2 = T(beta2);
    const T bc1 = T(1.0 - std::pow(beta1, static_cast<double>(buf.t)));
    const T bc2 = T(1.0 - std::pow(beta2, static_cast<double>(buf.t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.entry(i).second.data;
        const auto& g = grads.entry(i).second.data;
        auto& m = buf.m.entry(i).second.data;
        auto& v = buf.v.entry(i).second.data;
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            T mhat = m[j] / bc1;
            T vhat = v[j] / bc2;
            p[j] = p[j] - T(lr) * mhat / (sqrt(vhat) + T(eps));
        }
    }
}

enum class OptKind { Sgd, Adam };

// Serializable optimizer state (float production path).
struct OptimState {
    OptKind kind = OptKind::Adam;
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    AdamBuffers<float> buffers;

    static OptimState sgd(double lr) {
        OptimState s;
        s.kind = OptKind::Sgd;
        s.lr = lr;
        return s;
    }
    static OptimState adam(double lr, double b1 = 0.9, double b2 = 0.999, double e = 1e-8) {
        OptimState s;
        s.kind = OptKind::Adam;
        s.lr = lr;
        s.beta1 = b1;
        s.beta2 = b2;
        s.eps = e;
        return s;
    }

    void step(ParamSet& params, const ParamSet& grads) {
        if (lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
        if (kind == OptKind::Sgd)
            sgd_step(params, grads, lr);
        else
            adam_step(params, grads, buffers, lr, beta1, beta2, eps);
    }
};

} // namespace pseudoblur
