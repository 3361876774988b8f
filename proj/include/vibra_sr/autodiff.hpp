#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "vibra_sr/common.hpp"
#include "vibra_sr/fft.hpp"
#include "vibra_sr/tensor.hpp"

// Tape-based reverse-mode autodiff over Tensor, double precision throughout.
// Ops compute values eagerly; when a Tape is supplied and an input requires
// gradients they append a backward closure. Passing tape = nullptr gives a
// plain inference path with no recording overhead.
namespace vibra_sr::ad {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first use, same shape as value
    bool needs_grad = false;

    void ensure_grad() {
        if (grad.data.size() != value.data.size()) grad = Tensor::zeros(value.shape);
    }
    void zero_grad() {
        for (double& g : grad.data) g = 0.0;
    }
};

using Var = std::shared_ptr<Node>;

inline Var make_var(Tensor v, bool needs_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->needs_grad = needs_grad;
    return n;
}

inline Var constant(Tensor v) { return make_var(std::move(v), false); }
inline Var param(Tensor v) { return make_var(std::move(v), true); }

class Tape {
public:
    void push(std::function<void()> step) { steps_.push_back(std::move(step)); }

    // Seeds d(loss)/d(loss) = 1 and replays recorded steps in reverse.
    void backward(const Var& loss) {
        if (loss->value.size() != 1) throw ConfigError("backward: loss must be scalar");
        loss->ensure_grad();
        loss->grad[0] = 1.0;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    void clear() { steps_.clear(); }
    size_t size() const { return steps_.size(); }

private:
    std::vector<std::function<void()>> steps_;
};

namespace detail {
inline bool record(Tape* tape, std::initializer_list<const Var*> ins) {
    if (!tape) return false;
    for (const Var* v : ins)
        if ((*v)->needs_grad) return true;
    return false;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline Var add(Tape* tape, const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw ConfigError("add: shape mismatch");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a, &b})) {
        o->needs_grad = true;
        tape->push([a, b, o] {
            o->ensure_grad();
            if (a->needs_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i];
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < o->grad.size(); ++i) b->grad[i] += o->grad[i];
            }
        });
    }
    return o;
}

inline Var sub(Tape* tape, const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw ConfigError("sub: shape mismatch");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a, &b})) {
        o->needs_grad = true;
        tape->push([a, b, o] {
            o->ensure_grad();
            if (a->needs_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i];
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < o->grad.size(); ++i) b->grad[i] -= o->grad[i];
            }
        });
    }
    return o;
}

inline Var mul(Tape* tape, const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw ConfigError("mul: shape mismatch");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a, &b})) {
        o->needs_grad = true;
        tape->push([a, b, o] {
            o->ensure_grad();
            if (a->needs_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i] * b->value[i];
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < o->grad.size(); ++i) b->grad[i] += o->grad[i] * a->value[i];
            }
        });
    }
    return o;
}

inline Var scale(Tape* tape, const Var& a, double c) {
    Tensor out = a->value;
    for (double& v : out.data) v *= c;
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a})) {
        o->needs_grad = true;
        tape->push([a, o, c] {
            o->ensure_grad();
            a->ensure_grad();
            for (int64_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i] * c;
        });
    }
    return o;
}

inline Var square(Tape* tape, const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v *= v;
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a})) {
        o->needs_grad = true;
        tape->push([a, o] {
            o->ensure_grad();
            a->ensure_grad();
            for (int64_t i = 0; i < o->grad.size(); ++i)
                a->grad[i] += o->grad[i] * 2.0 * a->value[i];
        });
    }
    return o;
}

inline Var exp_op(Tape* tape, const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = std::exp(v);
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a})) {
        o->needs_grad = true;
        tape->push([a, o] {
            o->ensure_grad();
            a->ensure_grad();
            for (int64_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i] * o->value[i];
        });
    }
    return o;
}

// log(x + eps); inputs are nonnegative magnitudes.
inline Var log_eps(Tape* tape, const Var& a, double eps) {
    Tensor out = a->value;
    for (double& v : out.data) v = std::log(v + eps);
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a})) {
        o->needs_grad = true;
        tape->push([a, o, eps] {
            o->ensure_grad();
            a->ensure_grad();
            for (int64_t i = 0; i < o->grad.size(); ++i)
                a->grad[i] += o->grad[i] / (a->value[i] + eps);
        });
    }
    return o;
}

inline Var leaky_relu(Tape* tape, const Var& a, double slope) {
    Tensor out = a->value;
    for (double& v : out.data) v = v >= 0.0 ? v : slope * v;
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a})) {
        o->needs_grad = true;
        tape->push([a, o, slope] {
            o->ensure_grad();
            a->ensure_grad();
            for (int64_t i = 0; i < o->grad.size(); ++i)
                a->grad[i] += o->grad[i] * (a->value[i] >= 0.0 ? 1.0 : slope);
        });
    }
    return o;
}

inline Var silu(Tape* tape, const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = v / (1.0 + std::exp(-v));
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a})) {
        o->needs_grad = true;
        tape->push([a, o] {
            o->ensure_grad();
            a->ensure_grad();
            for (int64_t i = 0; i < o->grad.size(); ++i) {
                double x = a->value[i];
                double s = 1.0 / (1.0 + std::exp(-x));
                a->grad[i] += o->grad[i] * (s + x * s * (1.0 - s));
            }
        });
    }
    return o;
}

inline Var softplus(Tape* tape, const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = v > 30.0 ? v : std::log1p(std::exp(v));
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a})) {
        o->needs_grad = true;
        tape->push([a, o] {
            o->ensure_grad();
            a->ensure_grad();
            for (int64_t i = 0; i < o->grad.size(); ++i)
                a->grad[i] += o->grad[i] / (1.0 + std::exp(-a->value[i]));
        });
    }
    return o;
}

// elu(x) + 1: the positive feature map for linear attention.
inline Var elu1p(Tape* tape, const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = v >= 0.0 ? v + 1.0 : std::exp(v);
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a})) {
        o->needs_grad = true;
        tape->push([a, o] {
            o->ensure_grad();
            a->ensure_grad();
            for (int64_t i = 0; i < o->grad.size(); ++i) {
                double x = a->value[i];
                a->grad[i] += o->grad[i] * (x >= 0.0 ? 1.0 : std::exp(x));
            }
        });
    }
    return o;
}

inline Var sum(Tape* tape, const Var& a) {
    double acc = 0.0;
    for (double v : a->value.data) acc += v;
    Var o = make_var(Tensor::scalar(acc), false);
    if (detail::record(tape, {&a})) {
        o->needs_grad = true;
        tape->push([a, o] {
            o->ensure_grad();
            a->ensure_grad();
            double g = o->grad[0];
            for (int64_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
        });
    }
    return o;
}

inline Var mean_abs_diff(Tape* tape, const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw ConfigError("mean_abs_diff: shape mismatch");
    int64_t n = a->value.size();
    if (n == 0) throw ConfigError("mean_abs_diff: empty input");
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += std::abs(a->value[i] - b->value[i]);
    Var o = make_var(Tensor::scalar(acc / static_cast<double>(n)), false);
    if (detail::record(tape, {&a, &b})) {
        o->needs_grad = true;
        tape->push([a, b, o, n] {
            o->ensure_grad();
            double g = o->grad[0] / static_cast<double>(n);
            for (int64_t i = 0; i < n; ++i) {
                double d = a->value[i] - b->value[i];
                double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (a->needs_grad) {
                    a->ensure_grad();
                    a->grad[i] += g * s;
                }
                if (b->needs_grad) {
                    b->ensure_grad();
                    b->grad[i] -= g * s;
                }
            }
        });
    }
    return o;
}

// Scalar sqrt; derivative clamped at zero so perfect reconstructions do not
// produce infinities.
inline Var sqrt_scalar(Tape* tape, const Var& a) {
    if (a->value.size() != 1) throw ConfigError("sqrt_scalar: expects scalar");
    double v = std::sqrt(std::max(0.0, a->value[0]));
    Var o = make_var(Tensor::scalar(v), false);
    if (detail::record(tape, {&a})) {
        o->needs_grad = true;
        tape->push([a, o] {
            o->ensure_grad();
            a->ensure_grad();
            double denom = std::max(o->value[0], 1e-150);
            a->grad[0] += o->grad[0] * 0.5 / denom;
        });
    }
    return o;
}

inline Var div_ss(Tape* tape, const Var& a, const Var& b) {
    if (a->value.size() != 1 || b->value.size() != 1) throw ConfigError("div_ss: expects scalars");
    Var o = make_var(Tensor::scalar(a->value[0] / b->value[0]), false);
    if (detail::record(tape, {&a, &b})) {
        o->needs_grad = true;
        tape->push([a, b, o] {
            o->ensure_grad();
            double g = o->grad[0];
            double bv = b->value[0];
            if (a->needs_grad) {
                a->ensure_grad();
                a->grad[0] += g / bv;
            }
            if (b->needs_grad) {
                b->ensure_grad();
                b->grad[0] -= g * a->value[0] / (bv * bv);
            }
        });
    }
    return o;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Var rows_slice(Tape* tape, const Var& x, int64_t r0, int64_t r1) {
    if (x->value.rank() != 2) throw ConfigError("rows_slice: rank-2 input required");
    int64_t rows = x->value.dim(0), cols = x->value.dim(1);
    if (r0 < 0 || r1 > rows || r0 >= r1) throw ConfigError("rows_slice: bad range");
    Tensor out = Tensor::zeros({r1 - r0, cols});
    for (int64_t i = 0; i < out.size(); ++i) out[i] = x->value[r0 * cols + i];
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&x})) {
        o->needs_grad = true;
        tape->push([x, o, r0, cols] {
            o->ensure_grad();
            x->ensure_grad();
            for (int64_t i = 0; i < o->grad.size(); ++i) x->grad[r0 * cols + i] += o->grad[i];
        });
    }
    return o;
}

inline Var cols_slice(Tape* tape, const Var& x, int64_t c0, int64_t c1) {
    if (x->value.rank() != 2) throw ConfigError("cols_slice: rank-2 input required");
    int64_t rows = x->value.dim(0), cols = x->value.dim(1);
    if (c0 < 0 || c1 > cols || c0 >= c1) throw ConfigError("cols_slice: bad range");
    int64_t w = c1 - c0;
    Tensor out = Tensor::zeros({rows, w});
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < w; ++c) out[r * w + c] = x->value[r * cols + c0 + c];
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&x})) {
        o->needs_grad = true;
        tape->push([x, o, c0, cols, rows, w] {
            o->ensure_grad();
            x->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < w; ++c) x->grad[r * cols + c0 + c] += o->grad[r * w + c];
        });
    }
    return o;
}

inline Var cols_concat(Tape* tape, const std::vector<Var>& parts) {
    if (parts.empty()) throw ConfigError("cols_concat: no inputs");
    int64_t rows = parts[0]->value.dim(0);
    int64_t total = 0;
    for (const Var& p : parts) {
        if (p->value.rank() != 2 || p->value.dim(0) != rows)
            throw ConfigError("cols_concat: row mismatch");
        total += p->value.dim(1);
    }
    Tensor out = Tensor::zeros({rows, total});
    int64_t off = 0;
    for (const Var& p : parts) {
        int64_t w = p->value.dim(1);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < w; ++c) out[r * total + off + c] = p->value[r * w + c];
        off += w;
    }
    Var o = make_var(std::move(out), false);
    bool rec = false;
    for (const Var& p : parts) rec = rec || (tape && p->needs_grad);
    if (rec) {
        o->needs_grad = true;
        std::vector<Var> held = parts;
        tape->push([held, o, rows, total] {
            o->ensure_grad();
            int64_t off = 0;
            for (const Var& p : held) {
                int64_t w = p->value.dim(1);
                if (p->needs_grad) {
                    p->ensure_grad();
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t c = 0; c < w; ++c)
                            p->grad[r * w + c] += o->grad[r * total + off + c];
                }
                off += w;
            }
        });
    }
    return o;
}

// 1-D sub-pixel rearrangement: (C x T) -> (C/r x T*r), channel j of each
// output frame group coming from input channel c*r + j.
inline Var pixelshuffle(Tape* tape, const Var& x, int64_t r) {
    if (x->value.rank() != 2) throw ConfigError("pixelshuffle: rank-2 input required");
    int64_t C = x->value.dim(0), T = x->value.dim(1);
    if (r < 1) throw ConfigError("pixelshuffle: factor must be >= 1");
    if (C % r != 0)
        throw ConfigError("pixelshuffle: channels " + std::to_string(C) +
                          " not divisible by factor " + std::to_string(r));
    int64_t Co = C / r, To = T * r;
    Tensor out = Tensor::zeros({Co, To});
    for (int64_t c = 0; c < Co; ++c)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t j = 0; j < r; ++j)
                out[c * To + t * r + j] = x->value[(c * r + j) * T + t];
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&x})) {
        o->needs_grad = true;
        tape->push([x, o, r, Co, T, To] {
            o->ensure_grad();
            x->ensure_grad();
            for (int64_t c = 0; c < Co; ++c)
                for (int64_t t = 0; t < T; ++t)
                    for (int64_t j = 0; j < r; ++j)
                        x->grad[(c * r + j) * T + t] += o->grad[c * To + t * r + j];
        });
    }
    return o;
}

inline Var transpose2d(Tape* tape, const Var& x) {
    if (x->value.rank() != 2) throw ConfigError("transpose2d: rank-2 input required");
    int64_t R = x->value.dim(0), C = x->value.dim(1);
    Tensor out = Tensor::zeros({C, R});
    for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) out[c * R + r] = x->value[r * C + c];
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&x})) {
        o->needs_grad = true;
        tape->push([x, o, R, C] {
            o->ensure_grad();
            x->ensure_grad();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) x->grad[r * C + c] += o->grad[c * R + r];
        });
    }
    return o;
}

// y[i,j] = x[i,j] / d[i,0]; denominator (n x 1).
inline Var div_rows_by_col(Tape* tape, const Var& x, const Var& d) {
    int64_t n = x->value.dim(0), m = x->value.dim(1);
    if (d->value.dim(0) != n || d->value.dim(1) != 1) throw ConfigError("div_rows_by_col: bad denominator");
    Tensor out = Tensor::zeros({n, m});
    for (int64_t i = 0; i < n; ++i) {
        double inv = 1.0 / d->value[i];
        for (int64_t j = 0; j < m; ++j) out[i * m + j] = x->value[i * m + j] * inv;
    }
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&x, &d})) {
        o->needs_grad = true;
        tape->push([x, d, o, n, m] {
            o->ensure_grad();
            if (x->needs_grad) x->ensure_grad();
            if (d->needs_grad) d->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                double dv = d->value[i];
                double inv = 1.0 / dv;
                double acc = 0.0;
                for (int64_t j = 0; j < m; ++j) {
                    double g = o->grad[i * m + j];
                    if (x->needs_grad) x->grad[i * m + j] += g * inv;
                    acc += g * x->value[i * m + j];
                }
                if (d->needs_grad) d->grad[i] -= acc / (dv * dv);
            }
        });
    }
    return o;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// Token-major linear layer: x (n x in), W (out x in), optional bias (out).
inline Var linear_rows(Tape* tape, const Var& x, const Var& W, const Var& b) {
    if (x->value.rank() != 2 || W->value.rank() != 2) throw ConfigError("linear_rows: rank-2 required");
    int64_t n = x->value.dim(0), in = x->value.dim(1);
    int64_t out_dim = W->value.dim(0);
    if (W->value.dim(1) != in) throw ConfigError("linear_rows: weight shape mismatch");
    if (b && b->value.size() != out_dim) throw ConfigError("linear_rows: bias shape mismatch");
    Tensor out = Tensor::zeros({n, out_dim});
    parallel_for(0, n, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const double* xi = &x->value.data[static_cast<size_t>(i * in)];
            for (int64_t o2 = 0; o2 < out_dim; ++o2) {
                const double* wr = &W->value.data[static_cast<size_t>(o2 * in)];
                double acc = b ? b->value[o2] : 0.0;
                for (int64_t k = 0; k < in; ++k) acc += xi[k] * wr[k];
                out[i * out_dim + o2] = acc;
            }
        }
    });
    Var o = make_var(std::move(out), false);
    bool rec = tape && (x->needs_grad || W->needs_grad || (b && b->needs_grad));
    if (rec) {
        o->needs_grad = true;
        tape->push([x, W, b, o, n, in, out_dim] {
            o->ensure_grad();
            if (x->needs_grad) {
                x->ensure_grad();
                parallel_for(0, n, [&](int64_t lo, int64_t hi) {
                    for (int64_t i = lo; i < hi; ++i)
                        for (int64_t o2 = 0; o2 < out_dim; ++o2) {
                            double g = o->grad[i * out_dim + o2];
                            if (g == 0.0) continue;
                            const double* wr = &W->value.data[static_cast<size_t>(o2 * in)];
                            double* xg = &x->grad.data[static_cast<size_t>(i * in)];
                            for (int64_t k = 0; k < in; ++k) xg[k] += g * wr[k];
                        }
                });
            }
            if (W->needs_grad) {
                W->ensure_grad();
                parallel_for(0, out_dim, [&](int64_t lo, int64_t hi) {
                    for (int64_t o2 = lo; o2 < hi; ++o2) {
                        double* wg = &W->grad.data[static_cast<size_t>(o2 * in)];
                        for (int64_t i = 0; i < n; ++i) {
                            double g = o->grad[i * out_dim + o2];
                            if (g == 0.0) continue;
                            const double* xi = &x->value.data[static_cast<size_t>(i * in)];
                            for (int64_t k = 0; k < in; ++k) wg[k] += g * xi[k];
                        }
                    }
                });
            }
            if (b && b->needs_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t o2 = 0; o2 < out_dim; ++o2) b->grad[o2] += o->grad[i * out_dim + o2];
            }
        });
    }
    return o;
}

// Channel-major projection: x (in x T), W (out x in), optional bias: y = W x.
inline Var proj_cols(Tape* tape, const Var& x, const Var& W, const Var& b) {
    if (x->value.rank() != 2 || W->value.rank() != 2) throw ConfigError("proj_cols: rank-2 required");
    int64_t in = x->value.dim(0), T = x->value.dim(1);
    int64_t out_dim = W->value.dim(0);
    if (W->value.dim(1) != in) throw ConfigError("proj_cols: weight shape mismatch");
    if (b && b->value.size() != out_dim) throw ConfigError("proj_cols: bias shape mismatch");
    Tensor out = Tensor::zeros({out_dim, T});
    parallel_for(0, out_dim, [&](int64_t lo, int64_t hi) {
        for (int64_t o2 = lo; o2 < hi; ++o2) {
            const double* wr = &W->value.data[static_cast<size_t>(o2 * in)];
            double* yr = &out.data[static_cast<size_t>(o2 * T)];
            if (b) {
                double bias = b->value[o2];
                for (int64_t t = 0; t < T; ++t) yr[t] = bias;
            }
            for (int64_t k = 0; k < in; ++k) {
                double w = wr[k];
                if (w == 0.0) continue;
                const double* xr = &x->value.data[static_cast<size_t>(k * T)];
                for (int64_t t = 0; t < T; ++t) yr[t] += w * xr[t];
            }
        }
    });
    Var o = make_var(std::move(out), false);
    bool rec = tape && (x->needs_grad || W->needs_grad || (b && b->needs_grad));
    if (rec) {
        o->needs_grad = true;
        tape->push([x, W, b, o, in, T, out_dim] {
            o->ensure_grad();
            if (x->needs_grad) {
                x->ensure_grad();
                parallel_for(0, in, [&](int64_t lo, int64_t hi) {
                    for (int64_t k = lo; k < hi; ++k) {
                        double* xg = &x->grad.data[static_cast<size_t>(k * T)];
                        for (int64_t o2 = 0; o2 < out_dim; ++o2) {
                            double w = W->value[o2 * in + k];
                            if (w == 0.0) continue;
                            const double* gr = &o->grad.data[static_cast<size_t>(o2 * T)];
                            for (int64_t t = 0; t < T; ++t) xg[t] += w * gr[t];
                        }
                    }
                });
            }
            if (W->needs_grad) {
                W->ensure_grad();
                parallel_for(0, out_dim, [&](int64_t lo, int64_t hi) {
                    for (int64_t o2 = lo; o2 < hi; ++o2) {
                        const double* gr = &o->grad.data[static_cast<size_t>(o2 * T)];
                        double* wg = &W->grad.data[static_cast<size_t>(o2 * in)];
                        for (int64_t k = 0; k < in; ++k) {
                            const double* xr = &x->value.data[static_cast<size_t>(k * T)];
                            double acc = 0.0;
                            for (int64_t t = 0; t < T; ++t) acc += gr[t] * xr[t];
                            wg[k] += acc;
                        }
                    }
                });
            }
            if (b && b->needs_grad) {
                b->ensure_grad();
                for (int64_t o2 = 0; o2 < out_dim; ++o2) {
                    const double* gr = &o->grad.data[static_cast<size_t>(o2 * T)];
                    double acc = 0.0;
                    for (int64_t t = 0; t < T; ++t) acc += gr[t];
                    b->grad[o2] += acc;
                }
            }
        });
    }
    return o;
}

// a (n x k) times b^T where b is (m x k): out (n x m).
inline Var matmul_nt(Tape* tape, const Var& a, const Var& b) {
    int64_t n = a->value.dim(0), k = a->value.dim(1);
    int64_t m = b->value.dim(0);
    if (b->value.dim(1) != k) throw ConfigError("matmul_nt: inner dim mismatch");
    Tensor out = Tensor::zeros({n, m});
    parallel_for(0, n, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i)
            for (int64_t j = 0; j < m; ++j) {
                const double* ar = &a->value.data[static_cast<size_t>(i * k)];
                const double* br = &b->value.data[static_cast<size_t>(j * k)];
                double acc = 0.0;
                for (int64_t z = 0; z < k; ++z) acc += ar[z] * br[z];
                out[i * m + j] = acc;
            }
    });
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a, &b})) {
        o->needs_grad = true;
        tape->push([a, b, o, n, m, k] {
            o->ensure_grad();
            if (a->needs_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j) {
                        double g = o->grad[i * m + j];
                        if (g == 0.0) continue;
                        for (int64_t z = 0; z < k; ++z) a->grad[i * k + z] += g * b->value[j * k + z];
                    }
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j) {
                        double g = o->grad[i * m + j];
                        if (g == 0.0) continue;
                        for (int64_t z = 0; z < k; ++z) b->grad[j * k + z] += g * a->value[i * k + z];
                    }
            }
        });
    }
    return o;
}

// Plain a (n x k) times b (k x m).
inline Var matmul_nn(Tape* tape, const Var& a, const Var& b) {
    int64_t n = a->value.dim(0), k = a->value.dim(1);
    if (b->value.dim(0) != k) throw ConfigError("matmul_nn: inner dim mismatch");
    int64_t m = b->value.dim(1);
    Tensor out = Tensor::zeros({n, m});
    parallel_for(0, n, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            double* orow = &out.data[static_cast<size_t>(i * m)];
            for (int64_t z = 0; z < k; ++z) {
                double av = a->value[i * k + z];
                if (av == 0.0) continue;
                const double* brow = &b->value.data[static_cast<size_t>(z * m)];
                for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
            }
        }
    });
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&a, &b})) {
        o->needs_grad = true;
        tape->push([a, b, o, n, m, k] {
            o->ensure_grad();
            if (a->needs_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t z = 0; z < k; ++z) {
                        const double* brow = &b->value.data[static_cast<size_t>(z * m)];
                        const double* grow = &o->grad.data[static_cast<size_t>(i * m)];
                        double acc = 0.0;
                        for (int64_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                        a->grad[i * k + z] += acc;
                    }
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t z = 0; z < k; ++z) {
                        double av = a->value[i * k + z];
                        if (av == 0.0) continue;
                        const double* grow = &o->grad.data[static_cast<size_t>(i * m)];
                        for (int64_t j = 0; j < m; ++j) b->grad[z * m + j] += av * grow[j];
                    }
            }
        });
    }
    return o;
}

// ---------------------------------------------------------------------------
// Neural net ops
// ---------------------------------------------------------------------------

// 1-D convolution: x (Cin x T), w (Cout x Cin x K), bias (Cout), symmetric
// zero padding. Output length (T + 2 pad - K)/stride + 1.
inline Var conv1d(Tape* tape, const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad) {
    if (x->value.rank() != 2 || w->value.rank() != 3) throw ConfigError("conv1d: bad ranks");
    int64_t Cin = x->value.dim(0), T = x->value.dim(1);
    int64_t Cout = w->value.dim(0), K = w->value.dim(2);
    if (w->value.dim(1) != Cin) throw ConfigError("conv1d: channel mismatch");
    if (stride < 1) throw ConfigError("conv1d: stride must be >= 1");
    int64_t To = (T + 2 * pad - K) / stride + 1;
    if (To < 1)
        throw ConfigError("conv1d: length " + std::to_string(T) + " too short for kernel " +
                          std::to_string(K));
    Tensor out = Tensor::zeros({Cout, To});
    parallel_for(0, Cout, [&](int64_t lo, int64_t hi) {
        for (int64_t co = lo; co < hi; ++co) {
            double* yr = &out.data[static_cast<size_t>(co * To)];
            double bias = b ? b->value[co] : 0.0;
            for (int64_t t = 0; t < To; ++t) yr[t] = bias;
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const double* xr = &x->value.data[static_cast<size_t>(ci * T)];
                const double* wr = &w->value.data[static_cast<size_t>((co * Cin + ci) * K)];
                for (int64_t t = 0; t < To; ++t) {
                    int64_t base = t * stride - pad;
                    int64_t k0 = std::max<int64_t>(0, -base);
                    int64_t k1 = std::min<int64_t>(K, T - base);
                    double acc = 0.0;
                    for (int64_t k = k0; k < k1; ++k) acc += wr[k] * xr[base + k];
                    yr[t] += acc;
                }
            }
        }
    });
    Var o = make_var(std::move(out), false);
    bool rec = tape && (x->needs_grad || w->needs_grad || (b && b->needs_grad));
    if (rec) {
        o->needs_grad = true;
        tape->push([x, w, b, o, Cin, T, Cout, K, To, stride, pad] {
            o->ensure_grad();
            if (x->needs_grad) {
                x->ensure_grad();
                parallel_for(0, Cin, [&](int64_t lo, int64_t hi) {
                    for (int64_t ci = lo; ci < hi; ++ci) {
                        double* xg = &x->grad.data[static_cast<size_t>(ci * T)];
                        for (int64_t co = 0; co < Cout; ++co) {
                            const double* wr = &w->value.data[static_cast<size_t>((co * Cin + ci) * K)];
                            const double* gr = &o->grad.data[static_cast<size_t>(co * To)];
                            for (int64_t t = 0; t < To; ++t) {
                                double g = gr[t];
                                if (g == 0.0) continue;
                                int64_t base = t * stride - pad;
                                int64_t k0 = std::max<int64_t>(0, -base);
                                int64_t k1 = std::min<int64_t>(K, T - base);
                                for (int64_t k = k0; k < k1; ++k) xg[base + k] += g * wr[k];
                            }
                        }
                    }
                });
            }
            if (w->needs_grad) {
                w->ensure_grad();
                parallel_for(0, Cout, [&](int64_t lo, int64_t hi) {
                    for (int64_t co = lo; co < hi; ++co) {
                        const double* gr = &o->grad.data[static_cast<size_t>(co * To)];
                        for (int64_t ci = 0; ci < Cin; ++ci) {
                            const double* xr = &x->value.data[static_cast<size_t>(ci * T)];
                            double* wg = &w->grad.data[static_cast<size_t>((co * Cin + ci) * K)];
                            for (int64_t t = 0; t < To; ++t) {
                                double g = gr[t];
                                if (g == 0.0) continue;
                                int64_t base = t * stride - pad;
                                int64_t k0 = std::max<int64_t>(0, -base);
                                int64_t k1 = std::min<int64_t>(K, T - base);
                                for (int64_t k = k0; k < k1; ++k) wg[k] += g * xr[base + k];
                            }
                        }
                    }
                });
            }
            if (b && b->needs_grad) {
                b->ensure_grad();
                for (int64_t co = 0; co < Cout; ++co) {
                    const double* gr = &o->grad.data[static_cast<size_t>(co * To)];
                    double acc = 0.0;
                    for (int64_t t = 0; t < To; ++t) acc += gr[t];
                    b->grad[co] += acc;
                }
            }
        });
    }
    return o;
}

// Depthwise causal conv (left pad K-1), used by the state-space block.
inline Var dwconv1d_causal(Tape* tape, const Var& x, const Var& w, const Var& b) {
    int64_t C = x->value.dim(0), T = x->value.dim(1);
    if (w->value.dim(0) != C) throw ConfigError("dwconv1d: channel mismatch");
    int64_t K = w->value.dim(1);
    Tensor out = Tensor::zeros({C, T});
    parallel_for(0, C, [&](int64_t lo, int64_t hi) {
        for (int64_t c = lo; c < hi; ++c) {
            const double* xr = &x->value.data[static_cast<size_t>(c * T)];
            const double* wr = &w->value.data[static_cast<size_t>(c * K)];
            double* yr = &out.data[static_cast<size_t>(c * T)];
            double bias = b ? b->value[c] : 0.0;
            for (int64_t t = 0; t < T; ++t) {
                double acc = bias;
                for (int64_t k = 0; k < K; ++k) {
                    int64_t idx = t - (K - 1) + k;
                    if (idx >= 0) acc += wr[k] * xr[idx];
                }
                yr[t] = acc;
            }
        }
    });
    Var o = make_var(std::move(out), false);
    bool rec = tape && (x->needs_grad || w->needs_grad || (b && b->needs_grad));
    if (rec) {
        o->needs_grad = true;
        // All gradients are per-channel disjoint (depthwise), so the channel
        // axis parallelizes without races.
        tape->push([x, w, b, o, C, T, K] {
            o->ensure_grad();
            if (x->needs_grad) x->ensure_grad();
            if (w->needs_grad) w->ensure_grad();
            if (b && b->needs_grad) b->ensure_grad();
            parallel_for(0, C, [&](int64_t lo, int64_t hi) {
                for (int64_t c = lo; c < hi; ++c) {
                    const double* xr = &x->value.data[static_cast<size_t>(c * T)];
                    const double* wr = &w->value.data[static_cast<size_t>(c * K)];
                    const double* gr = &o->grad.data[static_cast<size_t>(c * T)];
                    double* xg = x->needs_grad ? &x->grad.data[static_cast<size_t>(c * T)] : nullptr;
                    double* wg = w->needs_grad ? &w->grad.data[static_cast<size_t>(c * K)] : nullptr;
                    double bacc = 0.0;
                    for (int64_t t = 0; t < T; ++t) {
                        double g = gr[t];
                        if (g == 0.0) continue;
                        bacc += g;
                        for (int64_t k = 0; k < K; ++k) {
                            int64_t idx = t - (K - 1) + k;
                            if (idx < 0) continue;
                            if (xg) xg[idx] += g * wr[k];
                            if (wg) wg[k] += g * xr[idx];
                        }
                    }
                    if (b && b->needs_grad) b->grad[c] += bacc;
                }
            });
        });
    }
    return o;
}

// Row-wise layer norm: x (n x C), gamma/beta (C).
inline Var layer_norm_rows(Tape* tape, const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    int64_t n = x->value.dim(0), C = x->value.dim(1);
    if (gamma->value.size() != C || beta->value.size() != C)
        throw ConfigError("layer_norm: affine shape mismatch");
    Tensor out = Tensor::zeros({n, C});
    Tensor xhat = Tensor::zeros({n, C});
    std::vector<double> istds(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double* xr = &x->value.data[static_cast<size_t>(i * C)];
        double mu = 0.0;
        for (int64_t c = 0; c < C; ++c) mu += xr[c];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= static_cast<double>(C);
        double istd = 1.0 / std::sqrt(var + eps);
        istds[static_cast<size_t>(i)] = istd;
        for (int64_t c = 0; c < C; ++c) {
            double xh = (xr[c] - mu) * istd;
            xhat[i * C + c] = xh;
            out[i * C + c] = gamma->value[c] * xh + beta->value[c];
        }
    }
    Var o = make_var(std::move(out), false);
    bool rec = tape && (x->needs_grad || gamma->needs_grad || beta->needs_grad);
    if (rec) {
        o->needs_grad = true;
        auto xh = std::make_shared<Tensor>(std::move(xhat));
        auto st = std::make_shared<std::vector<double>>(std::move(istds));
        tape->push([x, gamma, beta, o, xh, st, n, C] {
            o->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                const double* gr = &o->grad.data[static_cast<size_t>(i * C)];
                const double* xhr = &xh->data[static_cast<size_t>(i * C)];
                if (gamma->needs_grad) {
                    gamma->ensure_grad();
                    for (int64_t c = 0; c < C; ++c) gamma->grad[c] += gr[c] * xhr[c];
                }
                if (beta->needs_grad) {
                    beta->ensure_grad();
                    for (int64_t c = 0; c < C; ++c) beta->grad[c] += gr[c];
                }
                if (x->needs_grad) {
                    x->ensure_grad();
                    double istd = (*st)[static_cast<size_t>(i)];
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int64_t c = 0; c < C; ++c) {
                        double dxh = gr[c] * gamma->value[c];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhr[c];
                    }
                    double invC = 1.0 / static_cast<double>(C);
                    double* xg = &x->grad.data[static_cast<size_t>(i * C)];
                    for (int64_t c = 0; c < C; ++c) {
                        double dxh = gr[c] * gamma->value[c];
                        xg[c] += istd * (dxh - invC * sum_dxhat - xhr[c] * invC * sum_dxhat_xhat);
                    }
                }
            }
        });
    }
    return o;
}

inline Var softmax_rows(Tape* tape, const Var& x) {
    int64_t n = x->value.dim(0), m = x->value.dim(1);
    Tensor out = Tensor::zeros({n, m});
    for (int64_t i = 0; i < n; ++i) {
        const double* xr = &x->value.data[static_cast<size_t>(i * m)];
        double mx = xr[0];
        for (int64_t j = 1; j < m; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (int64_t j = 0; j < m; ++j) z += std::exp(xr[j] - mx);
        for (int64_t j = 0; j < m; ++j) out[i * m + j] = std::exp(xr[j] - mx) / z;
    }
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&x})) {
        o->needs_grad = true;
        tape->push([x, o, n, m] {
            o->ensure_grad();
            x->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                const double* yr = &o->value.data[static_cast<size_t>(i * m)];
                const double* gr = &o->grad.data[static_cast<size_t>(i * m)];
                double dot = 0.0;
                for (int64_t j = 0; j < m; ++j) dot += yr[j] * gr[j];
                double* xg = &x->grad.data[static_cast<size_t>(i * m)];
                for (int64_t j = 0; j < m; ++j) xg[j] += yr[j] * (gr[j] - dot);
            }
        });
    }
    return o;
}

// Per-block temporal max pooling: x (C x T) -> pooled (B x C). Blocks are
// ceil(T/B) long; a trailing partial block is implicitly zero-padded, so an
// all-negative partial block pools to 0 (gradient routes nowhere).
inline Var block_max_pool(Tape* tape, const Var& x, int64_t B) {
    int64_t C = x->value.dim(0), T = x->value.dim(1);
    if (B < 1 || B > T) throw ConfigError("block_max_pool: need 1 <= B <= T");
    int64_t bl = (T + B - 1) / B;
    Tensor out = Tensor::zeros({B, C});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * C), -1);
    for (int64_t b = 0; b < B; ++b) {
        int64_t t0 = b * bl, t1 = std::min(T, (b + 1) * bl);
        bool padded = (b + 1) * bl > T;
        for (int64_t c = 0; c < C; ++c) {
            double best = padded ? 0.0 : -std::numeric_limits<double>::infinity();
            int64_t best_t = -1;
            for (int64_t t = t0; t < t1; ++t) {
                double v = x->value[c * T + t];
                if (v > best) {
                    best = v;
                    best_t = t;
                }
            }
            out[b * C + c] = best;
            (*argmax)[static_cast<size_t>(b * C + c)] = best_t;
        }
    }
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&x})) {
        o->needs_grad = true;
        tape->push([x, o, argmax, B, C, T] {
            o->ensure_grad();
            x->ensure_grad();
            for (int64_t i = 0; i < B * C; ++i) {
                int64_t t = (*argmax)[static_cast<size_t>(i)];
                if (t < 0) continue;
                int64_t c = i % C;
                x->grad[c * T + t] += o->grad[i];
            }
        });
    }
    return o;
}

// Applies per-block per-channel scaling: y[c,t] = x[c,t] * g[block(t), c].
inline Var block_scale(Tape* tape, const Var& x, const Var& g) {
    int64_t C = x->value.dim(0), T = x->value.dim(1);
    int64_t B = g->value.dim(0);
    if (g->value.dim(1) != C) throw ConfigError("block_scale: channel mismatch");
    int64_t bl = (T + B - 1) / B;
    Tensor out = Tensor::zeros({C, T});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t t = 0; t < T; ++t) {
            int64_t b = std::min(t / bl, B - 1);
            out[c * T + t] = x->value[c * T + t] * g->value[b * C + c];
        }
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&x, &g})) {
        o->needs_grad = true;
        tape->push([x, g, o, C, T, B, bl] {
            o->ensure_grad();
            if (x->needs_grad) x->ensure_grad();
            if (g->needs_grad) g->ensure_grad();
            for (int64_t c = 0; c < C; ++c)
                for (int64_t t = 0; t < T; ++t) {
                    int64_t b = std::min(t / bl, B - 1);
                    double gr = o->grad[c * T + t];
                    if (x->needs_grad) x->grad[c * T + t] += gr * g->value[b * C + c];
                    if (g->needs_grad) g->grad[b * C + c] += gr * x->value[c * T + t];
                }
        });
    }
    return o;
}

// Inverted dropout; draws one uniform per element from the caller's stream.
inline Var dropout(Tape* tape, const Var& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
    if (p == 0.0) return x;
    auto mask = std::make_shared<std::vector<double>>(x->value.data.size());
    double keep_scale = 1.0 / (1.0 - p);
    Tensor out = x->value;
    for (size_t i = 0; i < out.data.size(); ++i) {
        double m = rng.uniform() >= p ? keep_scale : 0.0;
        (*mask)[i] = m;
        out.data[i] *= m;
    }
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&x})) {
        o->needs_grad = true;
        tape->push([x, o, mask] {
            o->ensure_grad();
            x->ensure_grad();
            for (int64_t i = 0; i < o->grad.size(); ++i) x->grad[i] += o->grad[i] * (*mask)[static_cast<size_t>(i)];
        });
    }
    return o;
}

// ---------------------------------------------------------------------------
// Selective state-space scan
// ---------------------------------------------------------------------------

// Zero-order-hold discretized diagonal SSM, one recurrence per (channel,
// state): h_l = exp(dt*A) h_{l-1} + (exp(dt*A)-1)/A * B_l u_l,
// y_l = sum_n C_l h_l + D u_l. delta must be positive everywhere.
//   u, delta: (D x L); A: (D x N); Bm, Cm: (N x L); Dskip: (D)
inline Var ssm_scan(Tape* tape, const Var& u, const Var& delta, const Var& A, const Var& Bm,
                    const Var& Cm, const Var& Dskip) {
    int64_t D = u->value.dim(0), L = u->value.dim(1);
    int64_t N = A->value.dim(1);
    if (delta->value.dim(0) != D || delta->value.dim(1) != L) throw ConfigError("ssm_scan: delta shape");
    if (A->value.dim(0) != D) throw ConfigError("ssm_scan: A shape");
    if (Bm->value.dim(0) != N || Bm->value.dim(1) != L) throw ConfigError("ssm_scan: B shape");
    if (Cm->value.dim(0) != N || Cm->value.dim(1) != L) throw ConfigError("ssm_scan: C shape");
    if (Dskip->value.size() != D) throw ConfigError("ssm_scan: D shape");
    for (double dt : delta->value.data)
        if (!(dt > 0.0)) throw ConfigError("ssm_scan: delta must be positive");

    bool rec = tape && (u->needs_grad || delta->needs_grad || A->needs_grad || Bm->needs_grad ||
                        Cm->needs_grad || Dskip->needs_grad);
    // States kept for backward: h (D x N x L).
    auto hstore = rec ? std::make_shared<std::vector<double>>(static_cast<size_t>(D * N * L), 0.0)
                      : nullptr;

    Tensor out = Tensor::zeros({D, L});
    parallel_for(0, D, [&](int64_t lo, int64_t hi) {
        std::vector<double> h(static_cast<size_t>(N), 0.0);
        for (int64_t d = lo; d < hi; ++d) {
            std::fill(h.begin(), h.end(), 0.0);
            const double* Ar = &A->value.data[static_cast<size_t>(d * N)];
            for (int64_t l = 0; l < L; ++l) {
                double dt = delta->value[d * L + l];
                double ul = u->value[d * L + l];
                double y = Dskip->value[d] * ul;
                for (int64_t n = 0; n < N; ++n) {
                    double xdt = Ar[n] * dt;
                    double abar = std::exp(xdt);
                    double phi = std::abs(xdt) > 1e-5 ? std::expm1(xdt) / xdt
                                                      : 1.0 + xdt * (0.5 + xdt / 6.0);
                    double bbar = dt * phi * Bm->value[n * L + l];
                    h[static_cast<size_t>(n)] = abar * h[static_cast<size_t>(n)] + bbar * ul;
                    y += Cm->value[n * L + l] * h[static_cast<size_t>(n)];
                    if (hstore) (*hstore)[static_cast<size_t>((d * N + n) * L + l)] = h[static_cast<size_t>(n)];
                }
                out[d * L + l] = y;
            }
        }
    });
    Var o = make_var(std::move(out), false);
    if (rec) {
        o->needs_grad = true;
        tape->push([u, delta, A, Bm, Cm, Dskip, o, hstore, D, L, N] {
            o->ensure_grad();
            if (u->needs_grad) u->ensure_grad();
            if (delta->needs_grad) delta->ensure_grad();
            if (A->needs_grad) A->ensure_grad();
            if (Bm->needs_grad) Bm->ensure_grad();
            if (Cm->needs_grad) Cm->ensure_grad();
            if (Dskip->needs_grad) Dskip->ensure_grad();
            std::vector<double> carry(static_cast<size_t>(N));
            for (int64_t d = 0; d < D; ++d) {
                std::fill(carry.begin(), carry.end(), 0.0);
                const double* Ar = &A->value.data[static_cast<size_t>(d * N)];
                for (int64_t l = L - 1; l >= 0; --l) {
                    double g = o->grad[d * L + l];
                    double dt = delta->value[d * L + l];
                    double ul = u->value[d * L + l];
                    if (Dskip->needs_grad) Dskip->grad[d] += g * ul;
                    double du_acc = g * Dskip->value[d];
                    double ddt_acc = 0.0;
                    for (int64_t n = 0; n < N; ++n) {
                        double hl = (*hstore)[static_cast<size_t>((d * N + n) * L + l)];
                        double dh = carry[static_cast<size_t>(n)] + g * Cm->value[n * L + l];
                        if (Cm->needs_grad) Cm->grad[n * L + l] += g * hl;

                        double a = Ar[n];
                        double xdt = a * dt;
                        double abar = std::exp(xdt);
                        double phi = std::abs(xdt) > 1e-5 ? std::expm1(xdt) / xdt
                                                          : 1.0 + xdt * (0.5 + xdt / 6.0);
                        double bval = Bm->value[n * L + l];
                        double bbar = dt * phi * bval;
                        double hprev = l > 0 ? (*hstore)[static_cast<size_t>((d * N + n) * L + (l - 1))] : 0.0;

                        double dabar = dh * hprev;
                        double dbbar = dh * ul;
                        du_acc += dh * bbar;
                        carry[static_cast<size_t>(n)] = dh * abar;

                        if (A->needs_grad || delta->needs_grad) {
                            // d(abar)/dA = dt e^x, d(abar)/ddt = A e^x
                            // d(bbar)/ddt = e^x B, d(bbar)/dA = (dt e^x A - (e^x - 1))/A^2 B
                            double psi = std::abs(xdt) > 1e-4
                                             ? (dt * abar * a - std::expm1(xdt)) / (a * a)
                                             : dt * dt * (0.5 + xdt / 3.0 + xdt * xdt / 8.0);
                            if (A->needs_grad)
                                A->grad[d * N + n] += dabar * dt * abar + dbbar * bval * psi;
                            if (delta->needs_grad)
                                ddt_acc += dabar * a * abar + dbbar * bval * abar;
                        }
                        if (Bm->needs_grad) Bm->grad[n * L + l] += dbbar * dt * phi;
                    }
                    if (u->needs_grad) u->grad[d * L + l] += du_acc;
                    if (delta->needs_grad) delta->grad[d * L + l] += ddt_acc;
                }
            }
        });
    }
    return o;
}

// ---------------------------------------------------------------------------
// Differentiable STFT magnitude
// ---------------------------------------------------------------------------

inline const std::vector<double>& hann_window_cached(int64_t len) {
    static std::mutex mu;
    static std::map<int64_t, std::vector<double>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(len);
    if (it == cache.end()) {
        std::vector<double> w(static_cast<size_t>(len));
        for (int64_t i = 0; i < len; ++i)
            w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(len));
        it = cache.emplace(len, std::move(w)).first;
    }
    return it->second;
}

// Hann-windowed magnitude spectrogram of a 1-D signal: (frames x bins),
// bins = nfft/2 + 1, frames = (L - win)/hop + 1 (no centering).
inline Var stft_mag(Tape* tape, const Var& x, int64_t nfft, int64_t hop, int64_t win) {
    if (x->value.rank() != 1 && !(x->value.rank() == 2 && x->value.dim(0) == 1))
        throw ConfigError("stft_mag: expects 1-D signal");
    int64_t L = x->value.size();
    if (win > nfft) throw ConfigError("stft_mag: window longer than FFT size");
    if (hop < 1 || hop > win) throw ConfigError("stft_mag: need 0 < hop <= window");
    if (L < win)
        throw ConfigError("stft_mag: signal length " + std::to_string(L) +
                          " shorter than window " + std::to_string(win));
    int64_t frames = (L - win) / hop + 1;
    int64_t bins = nfft / 2 + 1;
    const std::vector<double>& hann = hann_window_cached(win);
    const FftPlan& plan = FftPlan::get(static_cast<size_t>(nfft));

    Tensor out = Tensor::zeros({frames, bins});
    parallel_for(0, frames, [&](int64_t lo, int64_t hi) {
        std::vector<std::complex<double>> buf;
        for (int64_t f = lo; f < hi; ++f) {
            buf.assign(static_cast<size_t>(nfft), {0.0, 0.0});
            int64_t off = f * hop;
            for (int64_t i = 0; i < win; ++i)
                buf[static_cast<size_t>(i)] = {x->value[off + i] * hann[static_cast<size_t>(i)], 0.0};
            plan.forward(buf);
            for (int64_t k = 0; k < bins; ++k) out[f * bins + k] = std::abs(buf[static_cast<size_t>(k)]);
        }
    }, /*min_parallel=*/2);
    Var o = make_var(std::move(out), false);
    if (detail::record(tape, {&x})) {
        o->needs_grad = true;
        const std::vector<double>* hw = &hann;  // cache entries are never evicted
        const FftPlan* pl = &plan;
        tape->push([x, o, nfft, hop, win, frames, bins, hw, pl] {
            const std::vector<double>& hann = *hw;
            const FftPlan& plan = *pl;
            o->ensure_grad();
            x->ensure_grad();
            // Per-frame gradients land in scratch rows, then are reduced in
            // frame order so overlapping regions accumulate deterministically.
            std::vector<double> scratch(static_cast<size_t>(frames * win));
            parallel_for(0, frames, [&](int64_t lo, int64_t hi) {
                std::vector<std::complex<double>> buf, gbuf;
                for (int64_t f = lo; f < hi; ++f) {
                    buf.assign(static_cast<size_t>(nfft), {0.0, 0.0});
                    int64_t off = f * hop;
                    for (int64_t i = 0; i < win; ++i)
                        buf[static_cast<size_t>(i)] = {x->value[off + i] * hann[static_cast<size_t>(i)], 0.0};
                    plan.forward(buf);
                    gbuf.assign(static_cast<size_t>(nfft), {0.0, 0.0});
                    for (int64_t k = 0; k < bins; ++k) {
                        double mag = o->value[f * bins + k];
                        double g = o->grad[f * bins + k];
                        if (g == 0.0 || mag < 1e-300) continue;
                        gbuf[static_cast<size_t>(k)] = {g * buf[static_cast<size_t>(k)].real() / mag,
                                                        g * buf[static_cast<size_t>(k)].imag() / mag};
                    }
                    plan.backward_unscaled(gbuf);
                    for (int64_t i = 0; i < win; ++i)
                        scratch[static_cast<size_t>(f * win + i)] =
                            gbuf[static_cast<size_t>(i)].real() * hann[static_cast<size_t>(i)];
                }
            }, /*min_parallel=*/2);
            for (int64_t f = 0; f < frames; ++f) {
                int64_t off = f * hop;
                for (int64_t i = 0; i < win; ++i)
                    x->grad[off + i] += scratch[static_cast<size_t>(f * win + i)];
            }
        });
    }
    return o;
}

}  // namespace vibra_sr::ad
