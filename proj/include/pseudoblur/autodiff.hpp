#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "pseudoblur/parallel.hpp"
#include "pseudoblur/tensor.hpp"

namespace pseudoblur {

// Forward-mode dual number. Running any templated computation with Dual
// scalars yields exact directional derivatives; running the reverse-mode
// gradient code with Duals yields exact Hessian-vector products.
template <typename T>
struct Dual {
    T v{};
    T t{};

    Dual() = default;
    template <typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
    Dual(U value) : v(static_cast<T>(value)) {}
    Dual(T value, T tangent) : v(value), t(tangent) {}

    Dual& operator+=(const Dual& o) { v += o.v; t += o.t; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; t -= o.t; return *this; }
    Dual& operator*=(const Dual& o) { t = t * o.v + v * o.t; v *= o.v; return *this; }
    Dual& operator/=(const Dual& o) { t = (t * o.v - v * o.t) / (o.v * o.v); v /= o.v; return *this; }
    Dual operator-() const { return Dual(-v, -t); }
};

template <typename T> Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <typename T> Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <typename T> Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <typename T> Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }
template <typename T, typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
Dual<T> operator+(Dual<T> a, U b) { return a += Dual<T>(b); }
template <typename T, typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
Dual<T> operator+(U a, Dual<T> b) { return b += Dual<T>(a); }
template <typename T, typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
Dual<T> operator-(Dual<T> a, U b) { return a -= Dual<T>(b); }
template <typename T, typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
Dual<T> operator-(U a, const Dual<T>& b) { return Dual<T>(a) - b; }
template <typename T, typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
Dual<T> operator*(Dual<T> a, U b) { return a *= Dual<T>(b); }
template <typename T, typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
Dual<T> operator*(U a, Dual<T> b) { return b *= Dual<T>(a); }
template <typename T, typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
Dual<T> operator/(Dual<T> a, U b) { return a /= Dual<T>(b); }
template <typename T, typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
Dual<T> operator/(U a, const Dual<T>& b) { return Dual<T>(a) / b; }

template <typename T> bool operator<(const Dual<T>& a, const Dual<T>& b) { return a.v < b.v; }
template <typename T> bool operator>(const Dual<T>& a, const Dual<T>& b) { return a.v > b.v; }
template <typename T> bool operator<=(const Dual<T>& a, const Dual<T>& b) { return a.v <= b.v; }
template <typename T> bool operator>=(const Dual<T>& a, const Dual<T>& b) { return a.v >= b.v; }
template <typename T, typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
bool operator<(const Dual<T>& a, U b) { return a.v < static_cast<T>(b); }
template <typename T, typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
bool operator>(const Dual<T>& a, U b) { return a.v > static_cast<T>(b); }

template <typename T> Dual<T> sqrt(const Dual<T>& x) {
    using std::sqrt;
    T r = sqrt(x.v);
    return Dual<T>(r, x.t / (T(2) * r));
}
template <typename T> Dual<T> tanh(const Dual<T>& x) {
    using std::tanh;
    T y = tanh(x.v);
    return Dual<T>(y, x.t * (T(1) - y * y));
}
template <typename T> Dual<T> exp(const Dual<T>& x) {
    using std::exp;
    T y = exp(x.v);
    return Dual<T>(y, x.t * y);
}
template <typename T> Dual<T> abs(const Dual<T>& x) {
    return x.v < T(0) ? -x : x;
}

inline double to_double(float x) { return x; }
inline double to_double(double x) { return x; }
template <typename T> double to_double(const Dual<T>& x) { return to_double(x.v); }

// ---------------------------------------------------------------------------
// Reverse-mode tape
// ---------------------------------------------------------------------------

template <typename T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad; // allocated only when needs_grad
    bool needs_grad = false;
    std::function<void()> back; // empty for leaves
};

template <typename T>
using Var = Node<T>*;

template <typename T>
class Graph {
public:
    Var<T> make(Tensor<T> val, bool needs_grad) {
        nodes_.push_back(std::make_unique<Node<T>>());
        Node<T>* n = nodes_.back().get();
        n->val = std::move(val);
        n->needs_grad = needs_grad;
        if (needs_grad) n->grad = Tensor<T>(n->val.shape, T(0));
        return n;
    }

    Var<T> input(Tensor<T> val, bool needs_grad = false) { return make(std::move(val), needs_grad); }

    // Zeroes all gradients, then runs the tape in reverse from `loss`.
    void backward(Var<T> loss) {
        if (!loss->needs_grad) throw std::logic_error("loss does not depend on any parameter");
        if (loss->val.numel() != 1) throw std::logic_error("backward target must be scalar");
        for (auto& n : nodes_)
            if (n->needs_grad) n->grad.fill(T(0));
        loss->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if ((*it)->needs_grad && (*it)->back) (*it)->back();
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<std::unique_ptr<Node<T>>> nodes_;
};

namespace ops {

template <typename T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("add shape mismatch");
    Tensor<T> out = a->val;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->val.data[i];
    Var<T> n = g.make(std::move(out), a->needs_grad || b->needs_grad);
    if (n->needs_grad)
        n->back = [n, a, b] {
            if (a->needs_grad)
                for (std::size_t i = 0; i < n->grad.data.size(); ++i) a->grad.data[i] += n->grad.data[i];
            if (b->needs_grad)
                for (std::size_t i = 0; i < n->grad.data.size(); ++i) b->grad.data[i] += n->grad.data[i];
        };
    return n;
}

template <typename T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("mul shape mismatch");
    Tensor<T> out = a->val;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->val.data[i];
    Var<T> n = g.make(std::move(out), a->needs_grad || b->needs_grad);
    if (n->needs_grad)
        n->back = [n, a, b] {
            if (a->needs_grad)
                for (std::size_t i = 0; i < n->grad.data.size(); ++i)
                    a->grad.data[i] += n->grad.data[i] * b->val.data[i];
            if (b->needs_grad)
                for (std::size_t i = 0; i < n->grad.data.size(); ++i)
                    b->grad.data[i] += n->grad.data[i] * a->val.data[i];
        };
    return n;
}

// Multiply a (C,H,W) tensor by a constant (1,H,W) map, broadcast over C.
template <typename T>
Var<T> mul_mask(Graph<T>& g, Var<T> x, const Tensor<T>& mask) {
    if (x->val.rank() != 3 || mask.rank() != 3 || mask.dim(0) != 1 ||
        mask.dim(1) != x->val.dim(1) || mask.dim(2) != x->val.dim(2))
        throw std::invalid_argument("mul_mask shape mismatch");
    const int C = x->val.dim(0);
    const std::size_t plane = mask.data.size();
    Tensor<T> out = x->val;
    for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < plane; ++i) out.data[c * plane + i] *= mask.data[i];
    Var<T> n = g.make(std::move(out), x->needs_grad);
    if (n->needs_grad) {
        Tensor<T> m = mask;
        n->back = [n, x, m, C, plane] {
            for (int c = 0; c < C; ++c)
                for (std::size_t i = 0; i < plane; ++i)
                    x->grad.data[c * plane + i] += n->grad.data[c * plane + i] * m.data[i];
        };
    }
    return n;
}

template <typename T>
Var<T> affine(Graph<T>& g, Var<T> x, T scale, T shift) {
    Tensor<T> out = x->val;
    for (auto& v : out.data) v = v * scale + shift;
    Var<T> n = g.make(std::move(out), x->needs_grad);
    if (n->needs_grad)
        n->back = [n, x, scale] {
            for (std::size_t i = 0; i < n->grad.data.size(); ++i)
                x->grad.data[i] += n->grad.data[i] * scale;
        };
    return n;
}

template <typename T>
Var<T> square(Graph<T>& g, Var<T> x) {
    Tensor<T> out = x->val;
    for (auto& v : out.data) v = v * v;
    Var<T> n = g.make(std::move(out), x->needs_grad);
    if (n->needs_grad)
        n->back = [n, x] {
            for (std::size_t i = 0; i < n->grad.data.size(); ++i)
                x->grad.data[i] += n->grad.data[i] * T(2) * x->val.data[i];
        };
    return n;
}

template <typename T>
Var<T> relu(Graph<T>& g, Var<T> x) {
    Tensor<T> out = x->val;
    for (auto& v : out.data)
        if (v < T(0)) v = T(0);
    Var<T> n = g.make(std::move(out), x->needs_grad);
    if (n->needs_grad)
        n->back = [n, x] {
            for (std::size_t i = 0; i < n->grad.data.size(); ++i)
                if (x->val.data[i] > T(0)) x->grad.data[i] += n->grad.data[i];
        };
    return n;
}

template <typename T>
Var<T> leaky_relu(Graph<T>& g, Var<T> x, T slope) {
    Tensor<T> out = x->val;
    for (auto& v : out.data)
        if (v < T(0)) v *= slope;
    Var<T> n = g.make(std::move(out), x->needs_grad);
    if (n->needs_grad)
        n->back = [n, x, slope] {
            for (std::size_t i = 0; i < n->grad.data.size(); ++i)
                x->grad.data[i] +=
                    n->grad.data[i] * (x->val.data[i] > T(0) ? T(1) : slope);
        };
    return n;
}

template <typename T>
Var<T> tanh_act(Graph<T>& g, Var<T> x) {
    using std::tanh;
    Tensor<T> out = x->val;
    for (auto& v : out.data) v = tanh(v);
    Var<T> n = g.make(std::move(out), x->needs_grad);
    if (n->needs_grad)
        n->back = [n, x] {
            for (std::size_t i = 0; i < n->grad.data.size(); ++i) {
                T y = n->val.data[i];
                x->grad.data[i] += n->grad.data[i] * (T(1) - y * y);
            }
        };
    return n;
}

template <typename T>
Var<T> sigmoid(Graph<T>& g, Var<T> x) {
    using std::exp;
    Tensor<T> out = x->val;
    for (auto& v : out.data) v = T(1) / (T(1) + exp(-v));
    Var<T> n = g.make(std::move(out), x->needs_grad);
    if (n->needs_grad)
        n->back = [n, x] {
            for (std::size_t i = 0; i < n->grad.data.size(); ++i) {
                T y = n->val.data[i];
                x->grad.data[i] += n->grad.data[i] * y * (T(1) - y);
            }
        };
    return n;
}

// Hard clamp to [-1, 1]; gradient passes only through the interior.
template <typename T>
Var<T> clamp_pm1(Graph<T>& g, Var<T> x) {
    Tensor<T> out = x->val;
    for (auto& v : out.data) {
        if (v < T(-1)) v = T(-1);
        if (v > T(1)) v = T(1);
    }
    Var<T> n = g.make(std::move(out), x->needs_grad);
    if (n->needs_grad)
        n->back = [n, x] {
            for (std::size_t i = 0; i < n->grad.data.size(); ++i) {
                T v = x->val.data[i];
                if (v >= T(-1) && v <= T(1)) x->grad.data[i] += n->grad.data[i];
            }
        };
    return n;
}

namespace detail {

// Zero-padded 2D convolution. x (IC,H,W), w (OC,IC,KH,KW), b (OC).
// Padding is `pad` on top/left and `pad + pad_extra` on bottom/right
// ("same" geometry for even kernels uses pad_extra = 1).
template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                     int pad, int pad_extra) {
    const int IC = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    if (w.dim(1) != IC) throw std::invalid_argument("conv2d channel mismatch");
    const int OH = (H + 2 * pad + pad_extra - KH) / stride + 1;
    const int OW = (W + 2 * pad + pad_extra - KW) / stride + 1;
    if (OH < 1 || OW < 1) throw std::invalid_argument("conv2d output would be empty");
    Tensor<T> out({OC, OH, OW}, T(0));
    const std::size_t work = static_cast<std::size_t>(OC) * OH * OW * IC * KH * KW;
    parallel_for(0, OC, [&](int oc) {
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                T acc = b.data[oc];
                const int iy0 = oy * stride - pad;
                const int ix0 = ox * stride - pad;
                for (int ic = 0; ic < IC; ++ic) {
                    const T* xp = &x.data[static_cast<std::size_t>(ic) * H * W];
                    const T* wp = &w.data[((static_cast<std::size_t>(oc) * IC + ic) * KH) * KW];
                    for (int ky = 0; ky < KH; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < KW; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= W) continue;
                            acc += xp[static_cast<std::size_t>(iy) * W + ix] * wp[ky * KW + kx];
                        }
                    }
                }
                out.at(oc, oy, ox) = acc;
            }
        }
    }, work);
    return out;
}

} // namespace detail

template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b, int stride, int pad, int pad_extra = 0) {
    Tensor<T> out = detail::conv2d_fwd(x->val, w->val, b->val, stride, pad, pad_extra);
    Var<T> n = g.make(std::move(out), x->needs_grad || w->needs_grad || b->needs_grad);
    if (n->needs_grad)
        n->back = [n, x, w, b, stride, pad] {
            const int IC = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
            const int OC = w->val.dim(0), KH = w->val.dim(2), KW = w->val.dim(3);
            const int OH = n->val.dim(1), OW = n->val.dim(2);
            const std::size_t work = static_cast<std::size_t>(OC) * OH * OW * IC * KH * KW;
            if (b->needs_grad) {
                for (int oc = 0; oc < OC; ++oc) {
                    T acc = T(0);
                    const T* gp = &n->grad.data[static_cast<std::size_t>(oc) * OH * OW];
                    for (int i = 0; i < OH * OW; ++i) acc += gp[i];
                    b->grad.data[oc] += acc;
                }
            }
            if (w->needs_grad) {
                parallel_for(0, OC, [&](int oc) {
                    const T* gp = &n->grad.data[static_cast<std::size_t>(oc) * OH * OW];
                    for (int ic = 0; ic < IC; ++ic) {
                        const T* xp = &x->val.data[static_cast<std::size_t>(ic) * H * W];
                        T* wg = &w->grad.data[((static_cast<std::size_t>(oc) * IC + ic) * KH) * KW];
                        for (int ky = 0; ky < KH; ++ky) {
                            for (int kx = 0; kx < KW; ++kx) {
                                T acc = T(0);
                                for (int oy = 0; oy < OH; ++oy) {
                                    const int iy = oy * stride - pad + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int ox = 0; ox < OW; ++ox) {
                                        const int ix = ox * stride - pad + kx;
                                        if (ix < 0 || ix >= W) continue;
                                        acc += xp[static_cast<std::size_t>(iy) * W + ix] *
                                               gp[static_cast<std::size_t>(oy) * OW + ox];
                                    }
                                }
                                wg[ky * KW + kx] += acc;
                            }
                        }
                    }
                }, work);
            }
            if (x->needs_grad) {
                parallel_for(0, IC, [&](int ic) {
                    T* xg = &x->grad.data[static_cast<std::size_t>(ic) * H * W];
                    for (int oc = 0; oc < OC; ++oc) {
                        const T* gp = &n->grad.data[static_cast<std::size_t>(oc) * OH * OW];
                        const T* wp = &w->val.data[((static_cast<std::size_t>(oc) * IC + ic) * KH) * KW];
                        for (int oy = 0; oy < OH; ++oy) {
                            for (int ox = 0; ox < OW; ++ox) {
                                const T gv = gp[static_cast<std::size_t>(oy) * OW + ox];
                                const int iy0 = oy * stride - pad;
                                const int ix0 = ox * stride - pad;
                                for (int ky = 0; ky < KH; ++ky) {
                                    const int iy = iy0 + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int kx = 0; kx < KW; ++kx) {
                                        const int ix = ix0 + kx;
                                        if (ix < 0 || ix >= W) continue;
                                        xg[static_cast<std::size_t>(iy) * W + ix] += gv * wp[ky * KW + kx];
                                    }
                                }
                            }
                        }
                    }
                }, work);
            }
        };
    return n;
}

// Transposed convolution. x (IC,H,W), w (OC,IC,KH,KW), output
// (OC, (H-1)*stride - 2*pad + KH + out_pad, ...). Stride-2/k3/pad-1/out_pad-1
// doubles spatial dims exactly.
template <typename T>
Var<T> conv_transpose2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b, int stride, int pad,
                        int out_pad) {
    const int IC = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    const int OC = w->val.dim(0), KH = w->val.dim(2), KW = w->val.dim(3);
    if (w->val.dim(1) != IC) throw std::invalid_argument("conv_transpose2d channel mismatch");
    const int OH = (H - 1) * stride - 2 * pad + KH + out_pad;
    const int OW = (W - 1) * stride - 2 * pad + KW + out_pad;
    Tensor<T> out({OC, OH, OW}, T(0));
    const std::size_t work = static_cast<std::size_t>(OC) * OH * OW * IC * KH * KW;
    parallel_for(0, OC, [&](int oc) {
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                T acc = b->val.data[oc];
                for (int ky = 0; ky < KH; ++ky) {
                    const int ny = oy + pad - ky;
                    if (ny < 0 || ny % stride != 0) continue;
                    const int iy = ny / stride;
                    if (iy >= H) continue;
                    for (int kx = 0; kx < KW; ++kx) {
                        const int nx = ox + pad - kx;
                        if (nx < 0 || nx % stride != 0) continue;
                        const int ix = nx / stride;
                        if (ix >= W) continue;
                        for (int ic = 0; ic < IC; ++ic)
                            acc += x->val.at(ic, iy, ix) *
                                   w->val.data[((static_cast<std::size_t>(oc) * IC + ic) * KH + ky) * KW + kx];
                    }
                }
                out.at(oc, oy, ox) = acc;
            }
        }
    }, work);
    Var<T> n = g.make(std::move(out), x->needs_grad || w->needs_grad || b->needs_grad);
    if (n->needs_grad)
        n->back = [n, x, w, b, stride, pad] {
            const int IC = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
            const int OC = w->val.dim(0), KH = w->val.dim(2), KW = w->val.dim(3);
            const int OH = n->val.dim(1), OW = n->val.dim(2);
            const std::size_t work = static_cast<std::size_t>(OC) * OH * OW * IC * KH * KW;
            if (b->needs_grad) {
                for (int oc = 0; oc < OC; ++oc) {
                    T acc = T(0);
                    const T* gp = &n->grad.data[static_cast<std::size_t>(oc) * OH * OW];
                    for (int i = 0; i < OH * OW; ++i) acc += gp[i];
                    b->grad.data[oc] += acc;
                }
            }
            // grad wrt input: a plain strided convolution of the output grad
            if (x->needs_grad) {
                parallel_for(0, IC, [&](int ic) {
                    for (int iy = 0; iy < H; ++iy) {
                        for (int ix = 0; ix < W; ++ix) {
                            T acc = T(0);
                            for (int oc = 0; oc < OC; ++oc) {
                                const T* gp = &n->grad.data[static_cast<std::size_t>(oc) * OH * OW];
                                const T* wp =
                                    &w->val.data[((static_cast<std::size_t>(oc) * IC + ic) * KH) * KW];
                                for (int ky = 0; ky < KH; ++ky) {
                                    const int oy = iy * stride - pad + ky;
                                    if (oy < 0 || oy >= OH) continue;
                                    for (int kx = 0; kx < KW; ++kx) {
                                        const int ox = ix * stride - pad + kx;
                                        if (ox < 0 || ox >= OW) continue;
                                        acc += gp[static_cast<std::size_t>(oy) * OW + ox] * wp[ky * KW + kx];
                                    }
                                }
                            }
                            x->grad.at(ic, iy, ix) += acc;
                        }
                    }
                }, work);
            }
            if (w->needs_grad) {
                parallel_for(0, OC, [&](int oc) {
                    const T* gp = &n->grad.data[static_cast<std::size_t>(oc) * OH * OW];
                    for (int ic = 0; ic < IC; ++ic) {
                        const T* xp = &x->val.data[static_cast<std::size_t>(ic) * H * W];
                        T* wg = &w->grad.data[((static_cast<std::size_t>(oc) * IC + ic) * KH) * KW];
                        for (int ky = 0; ky < KH; ++ky) {
                            for (int kx = 0; kx < KW; ++kx) {
                                T acc = T(0);
                                for (int iy = 0; iy < H; ++iy) {
                                    const int oy = iy * stride - pad + ky;
                                    if (oy < 0 || oy >= OH) continue;
                                    for (int ix = 0; ix < W; ++ix) {
                                        const int ox = ix * stride - pad + kx;
                                        if (ox < 0 || ox >= OW) continue;
                                        acc += xp[static_cast<std::size_t>(iy) * W + ix] *
                                               gp[static_cast<std::size_t>(oy) * OW + ox];
                                    }
                                }
                                wg[ky * KW + kx] += acc;
                            }
                        }
                    }
                }, work);
            }
        };
    return n;
}

// Per-channel, per-instance spatial normalization with learned gain/bias.
template <typename T>
Var<T> instance_norm(Graph<T>& g, Var<T> x, Var<T> gain, Var<T> bias, T eps) {
    using std::sqrt;
    const int C = x->val.dim(0);
    const int N = x->val.dim(1) * x->val.dim(2);
    if (gain->val.numel() != static_cast<std::size_t>(C) ||
        bias->val.numel() != static_cast<std::size_t>(C))
        throw std::invalid_argument("instance_norm gain/bias size mismatch");
    Tensor<T> out(x->val.shape);
    Tensor<T> xhat(x->val.shape);
    std::vector<T> inv_sd(C);
    for (int c = 0; c < C; ++c) {
        const T* xp = &x->val.data[static_cast<std::size_t>(c) * N];
        T mu = T(0);
        for (int i = 0; i < N; ++i) mu += xp[i];
        mu = mu / T(N);
        T var = T(0);
        for (int i = 0; i < N; ++i) {
            T d = xp[i] - mu;
            var += d * d;
        }
        var = var / T(N);
        T is = T(1) / sqrt(var + eps);
        inv_sd[c] = is;
        T* hp = &xhat.data[static_cast<std::size_t>(c) * N];
        T* op = &out.data[static_cast<std::size_t>(c) * N];
        for (int i = 0; i < N; ++i) {
            hp[i] = (xp[i] - mu) * is;
            op[i] = hp[i] * gain->val.data[c] + bias->val.data[c];
        }
    }
    Var<T> n = g.make(std::move(out), x->needs_grad || gain->needs_grad || bias->needs_grad);
    if (n->needs_grad) {
        auto xhat_keep = std::make_shared<Tensor<T>>(std::move(xhat));
        auto isd_keep = std::make_shared<std::vector<T>>(std::move(inv_sd));
        n->back = [n, x, gain, bias, xhat_keep, isd_keep, C, N] {
            for (int c = 0; c < C; ++c) {
                const T* gp = &n->grad.data[static_cast<std::size_t>(c) * N];
                const T* hp = &xhat_keep->data[static_cast<std::size_t>(c) * N];
                T sum_g = T(0), sum_gh = T(0);
                for (int i = 0; i < N; ++i) {
                    sum_g += gp[i];
                    sum_gh += gp[i] * hp[i];
                }
                if (gain->needs_grad) gain->grad.data[c] += sum_gh;
                if (bias->needs_grad) bias->grad.data[c] += sum_g;
                if (x->needs_grad) {
                    const T k = gain->val.data[c] * (*isd_keep)[c];
                    const T mg = sum_g / T(N);
                    const T mgh = sum_gh / T(N);
                    T* xg = &x->grad.data[static_cast<std::size_t>(c) * N];
                    for (int i = 0; i < N; ++i) xg[i] += k * (gp[i] - mg - hp[i] * mgh);
                }
            }
        };
    }
    return n;
}

// Mean over all elements -> scalar.
template <typename T>
Var<T> mean_all(Graph<T>& g, Var<T> x) {
    T acc = T(0);
    for (const auto& v : x->val.data) acc += v;
    const std::size_t count = x->val.data.size();
    Tensor<T> out({1});
    out[0] = acc / T(static_cast<double>(count));
    Var<T> n = g.make(std::move(out), x->needs_grad);
    if (n->needs_grad)
        n->back = [n, x, count] {
            const T s = n->grad[0] / T(static_cast<double>(count));
            for (auto& gv : x->grad.data) gv += s;
        };
    return n;
}

// Mean absolute difference -> scalar. Subgradient 0 at ties.
template <typename T>
Var<T> l1(Graph<T>& g, Var<T> a, Var<T> b) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("l1 shape mismatch");
    using std::abs;
    T acc = T(0);
    for (std::size_t i = 0; i < a->val.data.size(); ++i) acc += abs(a->val.data[i] - b->val.data[i]);
    const std::size_t count = a->val.data.size();
    Tensor<T> out({1});
    out[0] = acc / T(static_cast<double>(count));
    Var<T> n = g.make(std::move(out), a->needs_grad || b->needs_grad);
    if (n->needs_grad)
        n->back = [n, a, b, count] {
            const T s = n->grad[0] / T(static_cast<double>(count));
            for (std::size_t i = 0; i < a->val.data.size(); ++i) {
                T d = a->val.data[i] - b->val.data[i];
                T sg = d > T(0) ? s : (d < T(0) ? -s : T(0));
                if (a->needs_grad) a->grad.data[i] += sg;
                if (b->needs_grad) b->grad.data[i] -= sg;
            }
        };
    return n;
}

// BT.601 luma as a channel-weighted sum; input is expected in unit range.
template <typename T>
Var<T> luma(Graph<T>& g, Var<T> x) {
    if (x->val.rank() != 3 || x->val.dim(0) != 3) throw std::invalid_argument("luma expects 3 channels");
    const std::size_t plane = static_cast<std::size_t>(x->val.dim(1)) * x->val.dim(2);
    const T wr = T(0.299), wg = T(0.587), wb = T(0.114);
    Tensor<T> out({1, x->val.dim(1), x->val.dim(2)});
    for (std::size_t i = 0; i < plane; ++i)
        out.data[i] = wr * x->val.data[i] + wg * x->val.data[plane + i] + wb * x->val.data[2 * plane + i];
    Var<T> n = g.make(std::move(out), x->needs_grad);
    if (n->needs_grad)
        n->back = [n, x, plane, wr, wg, wb] {
            for (std::size_t i = 0; i < plane; ++i) {
                const T gv = n->grad.data[i];
                x->grad.data[i] += wr * gv;
                x->grad.data[plane + i] += wg * gv;
                x->grad.data[2 * plane + i] += wb * gv;
            }
        };
    return n;
}

// coeff[0]*v[0] + coeff[1]*v[1] + ... over scalar vars.
template <typename T>
Var<T> linear_combo(Graph<T>& g, const std::vector<Var<T>>& vs, const std::vector<T>& coeff) {
    if (vs.empty() || vs.size() != coeff.size()) throw std::invalid_argument("linear_combo arity");
    bool needs = false;
    T acc = T(0);
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (vs[i]->val.numel() != 1) throw std::invalid_argument("linear_combo expects scalars");
        acc += coeff[i] * vs[i]->val[0];
        needs = needs || vs[i]->needs_grad;
    }
    Tensor<T> out({1});
    out[0] = acc;
    Var<T> n = g.make(std::move(out), needs);
    if (n->needs_grad) {
        auto vs_copy = vs;
        auto c_copy = coeff;
        n->back = [n, vs_copy, c_copy] {
            for (std::size_t i = 0; i < vs_copy.size(); ++i)
                if (vs_copy[i]->needs_grad) vs_copy[i]->grad[0] += c_copy[i] * n->grad[0];
        };
    }
    return n;
}

} // namespace ops

} // namespace pseudoblur
