#include "sas/ops.hpp"

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <string>

namespace sas {

namespace {

template <typename T>
bool needs_grad(const Tensor<T>& a) {
    return a.requires_grad();
}

template <typename T, typename... Rest>
bool needs_grad(const Tensor<T>& a, const Rest&... rest) {
    return a.requires_grad() || needs_grad(rest...);
}

template <typename T>
Tensor<T> make_output(std::vector<int> shape, bool track) {
    Tensor<T> out(std::move(shape));
    if (track) out.set_requires_grad(true);
    return out;
}

}  // namespace

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// ---------------------------------------------------------------------------
// matmul: [..., m, k] x [k, n]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape) {
    if (a.ndim() < 2 || b.ndim() != 2)
        throw ShapeError("matmul: need lhs [..., m, k] and rhs [k, n], got " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const int k = a.dim(a.ndim() - 1);
    if (k != b.dim(0))
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::int64_t rows = a.numel() / k;
    const int n = b.dim(1);

    std::vector<int> out_shape = a.shape();
    out_shape.back() = n;
    const bool track = tape && needs_grad(a, b);
    Tensor<T> out = make_output<T>(out_shape, track);

    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* cp = out.data().data();

#pragma omp parallel for schedule(static) if (rows > 8)
    for (std::int64_t r = 0; r < rows; ++r) {
        T* crow = cp + r * n;
        const T* arow = ap + r * k;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = bp + static_cast<std::int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }

    if (track) {
        Tensor<T> av = a, bv = b, ov = out;
        tape->record(out, [av, bv, ov, rows, k, n]() mutable {
            const T* g = ov.grad().data();
            if (av.requires_grad()) {
                T* da = av.grad().data();
                const T* bp2 = bv.data().data();
#pragma omp parallel for schedule(static) if (rows > 8)
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* grow = g + r * n;
                    T* darow = da + r * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const T* brow = bp2 + static_cast<std::int64_t>(kk) * n;
                        T acc = T(0);
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        darow[kk] += acc;
                    }
                }
            }
            if (bv.requires_grad()) {
                T* db = bv.grad().data();
                const T* ap2 = av.data().data();
#pragma omp parallel for schedule(static) if (k > 2)
                for (int kk = 0; kk < k; ++kk) {
                    T* dbrow = db + static_cast<std::int64_t>(kk) * n;
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const T av2 = ap2[r * k + kk];
                        const T* grow = g + r * n;
                        for (int j = 0; j < n; ++j) dbrow[j] += av2 * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul_bt: [..., m, k] x [n, k]^T
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape) {
    if (a.ndim() < 2 || b.ndim() != 2)
        throw ShapeError("matmul_bt: need lhs [..., m, k] and rhs [n, k], got " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const int k = a.dim(a.ndim() - 1);
    if (k != b.dim(1))
        throw ShapeError("matmul_bt: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::int64_t rows = a.numel() / k;
    const int n = b.dim(0);

    std::vector<int> out_shape = a.shape();
    out_shape.back() = n;
    const bool track = tape && needs_grad(a, b);
    Tensor<T> out = make_output<T>(out_shape, track);

    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* cp = out.data().data();

#pragma omp parallel for schedule(static) if (rows > 8)
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* arow = ap + r * k;
        T* crow = cp + r * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = bp + static_cast<std::int64_t>(j) * k;
            T acc = T(0);
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }

    if (track) {
        Tensor<T> av = a, bv = b, ov = out;
        tape->record(out, [av, bv, ov, rows, k, n]() mutable {
            const T* g = ov.grad().data();
            if (av.requires_grad()) {
                T* da = av.grad().data();
                const T* bp2 = bv.data().data();
#pragma omp parallel for schedule(static) if (rows > 8)
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* grow = g + r * n;
                    T* darow = da + r * k;
                    for (int j = 0; j < n; ++j) {
                        const T gv = grow[j];
                        const T* brow = bp2 + static_cast<std::int64_t>(j) * k;
                        for (int kk = 0; kk < k; ++kk) darow[kk] += gv * brow[kk];
                    }
                }
            }
            if (bv.requires_grad()) {
                T* db = bv.grad().data();
                const T* ap2 = av.data().data();
#pragma omp parallel for schedule(static) if (n > 2)
                for (int j = 0; j < n; ++j) {
                    T* dbrow = db + static_cast<std::int64_t>(j) * k;
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const T gv = g[r * n + j];
                        const T* arow = ap2 + r * k;
                        for (int kk = 0; kk < k; ++kk) dbrow[kk] += gv * arow[kk];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv1d over the head axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv1d_heads(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::type_identity_t<Tape<T>*> tape) {
    if (x.ndim() != 3 || w.ndim() != 3 || bias.ndim() != 1)
        throw ShapeError("conv1d_heads: need x [N,C_in,L], w [C_out,C_in,k], bias [C_out], got " +
                         shape_str(x.shape()) + ", " + shape_str(w.shape()) + ", " + shape_str(bias.shape()));
    const int batch = x.dim(0), c_in = x.dim(1), len = x.dim(2);
    const int c_out = w.dim(0), kernel = w.dim(2);
    if (kernel % 2 == 0) throw ConfigError("conv1d_heads: kernel size must be odd, got " + std::to_string(kernel));
    if (w.dim(1) != c_in || bias.dim(0) != c_out)
        throw ShapeError("conv1d_heads: channel mismatch: x " + shape_str(x.shape()) + ", w " +
                         shape_str(w.shape()) + ", bias " + shape_str(bias.shape()));
    const int pad = (kernel - 1) / 2;

    const bool track = tape && needs_grad(x, w, bias);
    Tensor<T> out = make_output<T>({batch, c_out, len}, track);

    const T* xp = x.data().data();
    const T* wp = w.data().data();
    const T* bp = bias.data().data();
    T* yp = out.data().data();

#pragma omp parallel for schedule(static) if (batch > 8)
    for (std::int64_t n = 0; n < batch; ++n) {
        const T* xn = xp + n * c_in * len;
        T* yn = yp + n * c_out * len;
        for (int co = 0; co < c_out; ++co) {
            const T* wco = wp + static_cast<std::int64_t>(co) * c_in * kernel;
            T* yrow = yn + static_cast<std::int64_t>(co) * len;
            for (int l = 0; l < len; ++l) {
                T acc = bp[co];
                for (int ci = 0; ci < c_in; ++ci) {
                    const T* xrow = xn + static_cast<std::int64_t>(ci) * len;
                    const T* wrow = wco + static_cast<std::int64_t>(ci) * kernel;
                    for (int t = 0; t < kernel; ++t) {
                        const int src = l + t - pad;
                        if (src >= 0 && src < len) acc += xrow[src] * wrow[t];
                    }
                }
                yrow[l] = acc;
            }
        }
    }

    if (track) {
        Tensor<T> xv = x, wv = w, bv = bias, ov = out;
        tape->record(out, [xv, wv, bv, ov, batch, c_in, c_out, len, kernel, pad]() mutable {
            const T* g = ov.grad().data();
            if (xv.requires_grad()) {
                T* dx = xv.grad().data();
                const T* wp2 = wv.data().data();
#pragma omp parallel for schedule(static) if (batch > 8)
                for (std::int64_t n = 0; n < batch; ++n) {
                    const T* gn = g + n * c_out * len;
                    T* dxn = dx + n * c_in * len;
                    for (int ci = 0; ci < c_in; ++ci) {
                        T* dxrow = dxn + static_cast<std::int64_t>(ci) * len;
                        for (int m = 0; m < len; ++m) {
                            T acc = T(0);
                            for (int co = 0; co < c_out; ++co) {
                                const T* grow = gn + static_cast<std::int64_t>(co) * len;
                                const T* wrow = wp2 + (static_cast<std::int64_t>(co) * c_in + ci) * kernel;
                                for (int t = 0; t < kernel; ++t) {
                                    const int l = m - t + pad;
                                    if (l >= 0 && l < len) acc += grow[l] * wrow[t];
                                }
                            }
                            dxrow[m] += acc;
                        }
                    }
                }
            }
            if (wv.requires_grad()) {
                T* dw = wv.grad().data();
                const T* xp2 = xv.data().data();
#pragma omp parallel for schedule(static) if (c_out > 2)
                for (int co = 0; co < c_out; ++co) {
                    for (int ci = 0; ci < c_in; ++ci) {
                        T* dwrow = dw + (static_cast<std::int64_t>(co) * c_in + ci) * kernel;
                        for (int t = 0; t < kernel; ++t) {
                            T acc = T(0);
                            for (std::int64_t n = 0; n < batch; ++n) {
                                const T* grow = g + (n * c_out + co) * len;
                                const T* xrow = xp2 + (n * c_in + ci) * len;
                                for (int l = 0; l < len; ++l) {
                                    const int src = l + t - pad;
                                    if (src >= 0 && src < len) acc += grow[l] * xrow[src];
                                }
                            }
                            dwrow[t] += acc;
                        }
                    }
                }
            }
            if (bv.requires_grad()) {
                T* db = bv.grad().data();
                for (int co = 0; co < c_out; ++co) {
                    T acc = T(0);
                    for (std::int64_t n = 0; n < batch; ++n) {
                        const T* grow = g + (n * c_out + co) * len;
                        for (int l = 0; l < len; ++l) acc += grow[l];
                    }
                    db[co] += acc;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x, std::type_identity_t<Tape<T>*> tape) {
    const bool track = tape && x.requires_grad();
    Tensor<T> out = make_output<T>(x.shape(), track);
    const T* xp = x.data().data();
    T* yp = out.data().data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);

    if (track) {
        Tensor<T> xv = x, ov = out;
        tape->record(out, [xv, ov, n]() mutable {
            const T* g = ov.grad().data();
            const T* xp2 = xv.data().data();
            T* dx = xv.grad().data();
            for (std::int64_t i = 0; i < n; ++i)
                if (xp2[i] > T(0)) dx[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x, std::type_identity_t<Tape<T>*> tape) {
    const bool track = tape && x.requires_grad();
    Tensor<T> out = make_output<T>(x.shape(), track);
    const T* xp = x.data().data();
    T* yp = out.data().data();
    const std::int64_t n = x.numel();
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    const T a = T(0.044715);
    for (std::int64_t i = 0; i < n; ++i) {
        const T v = xp[i];
        const T u = c * (v + a * v * v * v);
        yp[i] = T(0.5) * v * (T(1) + std::tanh(u));
    }

    if (track) {
        Tensor<T> xv = x, ov = out;
        tape->record(out, [xv, ov, n, c, a]() mutable {
            const T* g = ov.grad().data();
            const T* xp2 = xv.data().data();
            T* dx = xv.grad().data();
            for (std::int64_t i = 0; i < n; ++i) {
                const T v = xp2[i];
                const T u = c * (v + a * v * v * v);
                const T th = std::tanh(u);
                const T sech2 = T(1) - th * th;
                const T du = c * (T(1) + T(3) * a * v * v);
                dx[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * sech2 * du);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape) {
    const bool suffix = a.shape() != b.shape();
    if (suffix) {
        if (b.ndim() > a.ndim())
            throw ShapeError("add: shapes disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        for (int i = 0; i < b.ndim(); ++i)
            if (b.dim(i) != a.dim(a.ndim() - b.ndim() + i))
                throw ShapeError("add: " + shape_str(b.shape()) + " is not a suffix of " + shape_str(a.shape()));
    }
    const std::int64_t bn = b.numel();
    const std::int64_t n = a.numel();
    const bool track = tape && needs_grad(a, b);
    Tensor<T> out = make_output<T>(a.shape(), track);
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* yp = out.data().data();
    for (std::int64_t i = 0; i < n; ++i) yp[i] = ap[i] + bp[i % bn];

    if (track) {
        Tensor<T> av = a, bv = b, ov = out;
        tape->record(out, [av, bv, ov, n, bn]() mutable {
            const T* g = ov.grad().data();
            if (av.requires_grad()) {
                T* da = av.grad().data();
                for (std::int64_t i = 0; i < n; ++i) da[i] += g[i];
            }
            if (bv.requires_grad()) {
                T* db = bv.grad().data();
                const std::int64_t reps = n / bn;
                for (std::int64_t s = 0; s < bn; ++s) {
                    T acc = T(0);
                    for (std::int64_t r = 0; r < reps; ++r) acc += g[r * bn + s];
                    db[s] += acc;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s, std::type_identity_t<Tape<T>*> tape) {
    const bool track = tape && a.requires_grad();
    Tensor<T> out = make_output<T>(a.shape(), track);
    const T* ap = a.data().data();
    T* yp = out.data().data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) yp[i] = ap[i] * s;

    if (track) {
        Tensor<T> av = a, ov = out;
        tape->record(out, [av, ov, n, s]() mutable {
            const T* g = ov.grad().data();
            T* da = av.grad().data();
            for (std::int64_t i = 0; i < n; ++i) da[i] += g[i] * s;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis, std::type_identity_t<Tape<T>*> tape) {
    if (axis < 0 || axis >= x.ndim())
        throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    const int len = x.dim(axis);

    std::vector<int> out_shape;
    for (int i = 0; i < x.ndim(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);

    const bool track = tape && x.requires_grad();
    Tensor<T> out = make_output<T>(out_shape, track);
    const T* xp = x.data().data();
    T* yp = out.data().data();
    const T inv = T(1) / T(len);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            T acc = T(0);
            for (int l = 0; l < len; ++l) acc += xp[(o * len + l) * inner + i];
            yp[o * inner + i] = acc * inv;
        }

    if (track) {
        Tensor<T> xv = x, ov = out;
        tape->record(out, [xv, ov, outer, inner, len, inv]() mutable {
            const T* g = ov.grad().data();
            T* dx = xv.grad().data();
            for (std::int64_t o = 0; o < outer; ++o)
                for (int l = 0; l < len; ++l)
                    for (std::int64_t i = 0; i < inner; ++i)
                        dx[(o * len + l) * inner + i] += g[o * inner + i] * inv;
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape) {
    return x.reshape(std::move(new_shape));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int i, int j, std::type_identity_t<Tape<T>*> tape) {
    if (i < 0 || j < 0 || i >= x.ndim() || j >= x.ndim() || i == j)
        throw ShapeError("transpose: bad axes (" + std::to_string(i) + "," + std::to_string(j) + ") for " +
                         shape_str(x.shape()));
    if (i > j) std::swap(i, j);

    // Collapse to five bands: [outer, di, mid, dj, inner].
    std::int64_t outer = 1, mid = 1, inner = 1;
    for (int a = 0; a < i; ++a) outer *= x.dim(a);
    for (int a = i + 1; a < j; ++a) mid *= x.dim(a);
    for (int a = j + 1; a < x.ndim(); ++a) inner *= x.dim(a);
    const std::int64_t di = x.dim(i), dj = x.dim(j);

    std::vector<int> out_shape = x.shape();
    std::swap(out_shape[static_cast<std::size_t>(i)], out_shape[static_cast<std::size_t>(j)]);
    const bool track = tape && x.requires_grad();
    Tensor<T> out = make_output<T>(out_shape, track);

    auto permute = [outer, mid, inner, di, dj](const T* src, T* dst, bool accumulate) {
#pragma omp parallel for schedule(static) if (outer * dj > 16)
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t b = 0; b < dj; ++b)
                for (std::int64_t m = 0; m < mid; ++m)
                    for (std::int64_t a = 0; a < di; ++a) {
                        const T* s = src + (((o * di + a) * mid + m) * dj + b) * inner;
                        T* d = dst + (((o * dj + b) * mid + m) * di + a) * inner;
                        if (accumulate)
                            for (std::int64_t t = 0; t < inner; ++t) d[t] += s[t];
                        else
                            for (std::int64_t t = 0; t < inner; ++t) d[t] = s[t];
                    }
    };
    permute(x.data().data(), out.data().data(), false);

    if (track) {
        Tensor<T> xv = x, ov = out;
        auto unpermute = [outer, mid, inner, di, dj](const T* src, T* dst) {
#pragma omp parallel for schedule(static) if (outer * di > 16)
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t a = 0; a < di; ++a)
                    for (std::int64_t m = 0; m < mid; ++m)
                        for (std::int64_t b = 0; b < dj; ++b) {
                            const T* s = src + (((o * dj + b) * mid + m) * di + a) * inner;
                            T* d = dst + (((o * di + a) * mid + m) * dj + b) * inner;
                            for (std::int64_t t = 0; t < inner; ++t) d[t] += s[t];
                        }
        };
        tape->record(out, [xv, ov, unpermute]() mutable { unpermute(ov.grad().data(), xv.grad().data()); });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layer norm / embedding / cross entropy
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, std::type_identity_t<Tape<T>*> tape) {
    if (x.ndim() < 1 || x.dim(x.ndim() - 1) < 1)
        throw ShapeError("softmax_lastdim: need a non-empty last axis, got " + shape_str(x.shape()));
    const int v = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.numel() / v;
    const T* xp = x.data().data();
    for (std::int64_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(static_cast<double>(xp[i])))
            throw NumericError("softmax_lastdim: non-finite input at flat index " + std::to_string(i));

    const bool track = tape && x.requires_grad();
    Tensor<T> out = make_output<T>(x.shape(), track);
    T* yp = out.data().data();
#pragma omp parallel for schedule(static) if (rows > 32)
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xp + r * v;
        T* yr = yp + r * v;
        T m = xr[0];
        for (int c = 1; c < v; ++c)
            if (xr[c] > m) m = xr[c];
        T sum = T(0);
        for (int c = 0; c < v; ++c) {
            yr[c] = std::exp(xr[c] - m);
            sum += yr[c];
        }
        const T inv = T(1) / sum;
        for (int c = 0; c < v; ++c) yr[c] *= inv;
    }

    if (track) {
        Tensor<T> xv = x, ov = out;
        tape->record(out, [xv, ov, rows, v]() mutable {
            const T* g = ov.grad().data();
            const T* y = ov.data().data();
            T* dx = xv.grad().data();
#pragma omp parallel for schedule(static) if (rows > 32)
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gr = g + r * v;
                const T* yr = y + r * v;
                T* dr = dx + r * v;
                T dot = T(0);
                for (int c = 0; c < v; ++c) dot += gr[c] * yr[c];
                for (int c = 0; c < v; ++c) dr[c] += yr[c] * (gr[c] - dot);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, T eps, std::type_identity_t<Tape<T>*> tape) {
    if (x.ndim() < 1 || gamma.ndim() != 1 || gamma.dim(0) != x.dim(x.ndim() - 1))
        throw ShapeError("layer_norm: scale " + shape_str(gamma.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
    const int c = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.numel() / c;
    const bool track = tape && needs_grad(x, gamma);
    Tensor<T> out = make_output<T>(x.shape(), track);
    Tensor<T> xhat({static_cast<int>(rows), c});
    Tensor<T> invstd({static_cast<int>(rows)});

    const T* xp = x.data().data();
    const T* gp = gamma.data().data();
    T* yp = out.data().data();
    T* hp = xhat.data().data();
    T* sp = invstd.data().data();
#pragma omp parallel for schedule(static) if (rows > 32)
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xp + r * c;
        T mean = T(0);
        for (int k = 0; k < c; ++k) mean += xr[k];
        mean /= T(c);
        T var = T(0);
        for (int k = 0; k < c; ++k) {
            const T d = xr[k] - mean;
            var += d * d;
        }
        var /= T(c);
        const T inv = T(1) / std::sqrt(var + eps);
        sp[r] = inv;
        T* hr = hp + r * c;
        T* yr = yp + r * c;
        for (int k = 0; k < c; ++k) {
            hr[k] = (xr[k] - mean) * inv;
            yr[k] = hr[k] * gp[k];
        }
    }

    if (track) {
        Tensor<T> xv = x, gv = gamma, ov = out;
        tape->record(out, [xv, gv, ov, xhat, invstd, rows, c]() mutable {
            const T* g = ov.grad().data();
            const T* hp2 = xhat.data().data();
            const T* sp2 = invstd.data().data();
            const T* gp2 = gv.data().data();
            if (gv.requires_grad()) {
                T* dg = gv.grad().data();
                for (int k = 0; k < c; ++k) {
                    T acc = T(0);
                    for (std::int64_t r = 0; r < rows; ++r) acc += g[r * c + k] * hp2[r * c + k];
                    dg[k] += acc;
                }
            }
            if (xv.requires_grad()) {
                T* dx = xv.grad().data();
#pragma omp parallel for schedule(static) if (rows > 32)
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* gr = g + r * c;
                    const T* hr = hp2 + r * c;
                    T* dr = dx + r * c;
                    T sum_dh = T(0), sum_dh_h = T(0);
                    for (int k = 0; k < c; ++k) {
                        const T dh = gr[k] * gp2[k];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[k];
                    }
                    const T invc = T(1) / T(c);
                    for (int k = 0; k < c; ++k) {
                        const T dh = gr[k] * gp2[k];
                        dr[k] += sp2[r] * (dh - invc * sum_dh - hr[k] * invc * sum_dh_h);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::int32_t>& ids, int batch, int time,
                    std::type_identity_t<Tape<T>*> tape) {
    if (table.ndim() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_str(table.shape()));
    if (static_cast<std::int64_t>(ids.size()) != static_cast<std::int64_t>(batch) * time)
        throw ShapeError("embedding: ids length " + std::to_string(ids.size()) + " != batch*time");
    const int vocab = table.dim(0), c = table.dim(1);
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] < 0 || ids[i] >= vocab)
            throw UsageError("embedding: token id " + std::to_string(ids[i]) + " out of range [0," +
                             std::to_string(vocab) + ")");

    const bool track = tape && table.requires_grad();
    Tensor<T> out = make_output<T>({batch, time, c}, track);
    const T* tp = table.data().data();
    T* yp = out.data().data();
    for (std::size_t n = 0; n < ids.size(); ++n) {
        const T* src = tp + static_cast<std::int64_t>(ids[n]) * c;
        T* dst = yp + static_cast<std::int64_t>(n) * c;
        for (int k = 0; k < c; ++k) dst[k] = src[k];
    }

    if (track) {
        Tensor<T> tv = table, ov = out;
        tape->record(out, [tv, ov, ids, c]() mutable {
            const T* g = ov.grad().data();
            T* dt = tv.grad().data();
            for (std::size_t n = 0; n < ids.size(); ++n) {
                T* dst = dt + static_cast<std::int64_t>(ids[n]) * c;
                const T* src = g + static_cast<std::int64_t>(n) * c;
                for (int k = 0; k < c; ++k) dst[k] += src[k];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int32_t>& targets, std::type_identity_t<Tape<T>*> tape) {
    if (logits.ndim() < 1) throw ShapeError("cross_entropy: logits must have a class axis");
    const int v = logits.dim(logits.ndim() - 1);
    const std::int64_t rows = logits.numel() / v;
    if (static_cast<std::int64_t>(targets.size()) != rows)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " logit rows");
    for (std::int64_t r = 0; r < rows; ++r)
        if (targets[static_cast<std::size_t>(r)] < 0 || targets[static_cast<std::size_t>(r)] >= v)
            throw UsageError("cross_entropy: target " + std::to_string(targets[static_cast<std::size_t>(r)]) +
                             " out of range [0," + std::to_string(v) + ")");

    const bool track = tape && logits.requires_grad();
    // Probabilities are kept for the backward pass.
    Tensor<T> probs({static_cast<int>(rows), v});
    const T* lp = logits.data().data();
    T* pp = probs.data().data();
    double total = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* lr = lp + r * v;
        T* pr = pp + r * v;
        T m = lr[0];
        for (int k = 1; k < v; ++k)
            if (lr[k] > m) m = lr[k];
        T sum = T(0);
        for (int k = 0; k < v; ++k) {
            pr[k] = std::exp(lr[k] - m);
            sum += pr[k];
        }
        const T inv = T(1) / sum;
        for (int k = 0; k < v; ++k) pr[k] *= inv;
        total += std::log(static_cast<double>(sum)) + static_cast<double>(m) -
                 static_cast<double>(lr[targets[static_cast<std::size_t>(r)]]);
    }

    Tensor<T> out = make_output<T>({1}, track);
    out.data()[0] = static_cast<T>(total / static_cast<double>(rows));

    if (track) {
        Tensor<T> lv = logits, ov = out;
        tape->record(out, [lv, ov, probs, targets, rows, v]() mutable {
            const T gscale = ov.grad()[0] / T(rows);
            const T* pp2 = probs.data().data();
            T* dl = lv.grad().data();
#pragma omp parallel for schedule(static) if (rows > 32)
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* pr = pp2 + r * v;
                T* dr = dl + r * v;
                const int tgt = targets[static_cast<std::size_t>(r)];
                for (int k = 0; k < v; ++k) dr[k] += gscale * (pr[k] - (k == tgt ? T(1) : T(0)));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------

#define SAS_INSTANTIATE_OPS(T)                                                                              \
    template void check_same_shape<T>(const Tensor<T>&, const Tensor<T>&, const char*);                     \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                             \
    template Tensor<T> matmul_bt<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                          \
    template Tensor<T> conv1d_heads<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*);     \
    template Tensor<T> relu<T>(const Tensor<T>&, Tape<T>*);                                                 \
    template Tensor<T> gelu<T>(const Tensor<T>&, Tape<T>*);                                                 \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                                \
    template Tensor<T> mul_scalar<T>(const Tensor<T>&, T, Tape<T>*);                                        \
    template Tensor<T> mean_axis<T>(const Tensor<T>&, int, Tape<T>*);                                       \
    template Tensor<T> reshape<T>(const Tensor<T>&, std::vector<int>);                                      \
    template Tensor<T> transpose<T>(const Tensor<T>&, int, int, Tape<T>*);                                  \
    template Tensor<T> softmax_lastdim<T>(const Tensor<T>&, Tape<T>*);                                      \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, T, Tape<T>*);                      \
    template Tensor<T> embedding<T>(const Tensor<T>&, const std::vector<std::int32_t>&, int, int, Tape<T>*); \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<std::int32_t>&, Tape<T>*);

SAS_INSTANTIATE_OPS(float)
SAS_INSTANTIATE_OPS(double)

#undef SAS_INSTANTIATE_OPS

}  // namespace sas
