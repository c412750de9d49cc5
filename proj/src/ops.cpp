#include "pfa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

namespace pfa {

namespace detail {

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) {
        std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
    }
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        const T* a0 = a + static_cast<std::size_t>(i) * k;
        const T* a1 = a0 + k;
        const T* a2 = a1 + k;
        const T* a3 = a2 + k;
        T* c0 = c + static_cast<std::size_t>(i) * n;
        T* c1 = c0 + n;
        T* c2 = c1 + n;
        T* c3 = c2 + n;
        for (int kk = 0; kk < k; ++kk) {
            const T w0 = a0[kk], w1 = a1[kk], w2 = a2[kk], w3 = a3[kk];
            const T* br = b + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                const T bj = br[j];
                c0[j] += w0 * bj;
                c1[j] += w1 * bj;
                c2[j] += w2 * bj;
                c3[j] += w3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        const T* ar = a + static_cast<std::size_t>(i) * k;
        T* cr = c + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const T w = ar[kk];
            const T* br = b + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                cr[j] += w * br[j];
            }
        }
    }
}

template <typename T>
void transpose(int rows, int cols, const T* src, T* dst) {
    // 32x32 tiles keep both access streams inside L1
    constexpr int kTile = 32;
    for (int rb = 0; rb < rows; rb += kTile) {
        const int re = std::min(rows, rb + kTile);
        for (int cb = 0; cb < cols; cb += kTile) {
            const int ce = std::min(cols, cb + kTile);
            for (int r = rb; r < re; ++r) {
                const T* s = src + static_cast<std::size_t>(r) * cols;
                for (int c = cb; c < ce; ++c) {
                    dst[static_cast<std::size_t>(c) * rows + r] = s[c];
                }
            }
        }
    }
}

template void gemm_nn<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_nn<double>(int, int, int, const double*, const double*, double*, bool);
template void transpose<float>(int, int, const float*, float*);
template void transpose<double>(int, int, const double*, double*);

}  // namespace detail

namespace {

template <typename T>
void acc_if(const Var<T>& parent, const Tensor<T>& g) {
    if (parent->requires_grad) {
        parent->accumulate(g);
    }
}

// Reusable conv workspaces. Multi-megabyte im2col buffers would otherwise
// round-trip through mmap on every call; slots grow monotonically and are
// per-thread, so concurrent forward passes stay independent.
template <typename T>
T* scratch(int slot, std::size_t n) {
    thread_local std::vector<T> bufs[3];
    if (bufs[slot].size() < n) {
        bufs[slot].resize(n);
    }
    return bufs[slot].data();
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct ConvGeom {
    int n, cin, h, w;
    int cout, kh, kw;
    int stride, dil;
    int pad_h, pad_w;
    int oh, ow;
    int col_rows() const { return cin * kh * kw; }
    int pixels() const { return oh * ow; }
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                       int stride, int dilation, Padding padding) {
    if (input.rank() != 4) {
        throw ShapeError("conv2d: input must be [N,Cin,H,W], got " + shape_str(input.shape));
    }
    if (weight.rank() != 4) {
        throw ShapeError("conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(weight.shape));
    }
    ConvGeom g{};
    g.n = input.dim(0);
    g.cin = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.cout = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.stride = stride;
    g.dil = dilation;
    if (weight.dim(1) != g.cin) {
        throw ShapeError("conv2d: input channels " + std::to_string(g.cin) +
                         " do not match weight Cin " + std::to_string(weight.dim(1)));
    }
    if (bias.rank() != 1 || bias.dim(0) != g.cout) {
        throw ShapeError("conv2d: bias must be [Cout=" + std::to_string(g.cout) + "], got " +
                         shape_str(bias.shape));
    }
    if (stride < 1 || dilation < 1) {
        throw Error("conv2d: stride and dilation must be >= 1");
    }
    const int ext_h = g.dil * (g.kh - 1) + 1;
    const int ext_w = g.dil * (g.kw - 1) + 1;
    if (padding == Padding::kSame) {
        if (stride != 1) {
            throw Error("conv2d: same padding is defined for stride 1 only");
        }
        g.pad_h = (ext_h - 1) / 2;
        g.pad_w = (ext_w - 1) / 2;
        g.oh = g.h;
        g.ow = g.w;
    } else {
        g.pad_h = 0;
        g.pad_w = 0;
        g.oh = (g.h - ext_h) / stride + 1;
        g.ow = (g.w - ext_w) / stride + 1;
        if (g.h < ext_h || g.w < ext_w) {
            throw ShapeError("conv2d: valid padding needs input >= effective kernel extent " +
                             std::to_string(ext_h) + "x" + std::to_string(ext_w) + ", got " +
                             std::to_string(g.h) + "x" + std::to_string(g.w));
        }
    }
    return g;
}

// col is (cin*kh*kw) x (oh*ow), row-major; one batch item.
template <typename T>
void im2col(const T* im, const ConvGeom& g, T* col) {
    const std::size_t pixels = static_cast<std::size_t>(g.pixels());
    for (int ci = 0; ci < g.cin; ++ci) {
        for (int kh = 0; kh < g.kh; ++kh) {
            for (int kw = 0; kw < g.kw; ++kw) {
                T* dst = col + ((static_cast<std::size_t>(ci) * g.kh + kh) * g.kw + kw) * pixels;
                const int ih0 = kh * g.dil - g.pad_h;
                const int iw0 = kw * g.dil - g.pad_w;
                for (int oh = 0; oh < g.oh; ++oh) {
                    const int ih = oh * g.stride + ih0;
                    T* drow = dst + static_cast<std::size_t>(oh) * g.ow;
                    if (ih < 0 || ih >= g.h) {
                        std::fill(drow, drow + g.ow, T(0));
                        continue;
                    }
                    const T* srow = im + (static_cast<std::size_t>(ci) * g.h + ih) * g.w;
                    if (g.stride == 1) {
                        const int lo = std::max(0, -iw0);
                        const int hi = std::max(lo, std::min(g.ow, g.w - iw0));
                        if (lo > 0) std::fill(drow, drow + lo, T(0));
                        if (hi > lo) std::copy(srow + iw0 + lo, srow + iw0 + hi, drow + lo);
                        if (hi < g.ow) std::fill(drow + hi, drow + g.ow, T(0));
                    } else {
                        for (int ow = 0; ow < g.ow; ++ow) {
                            const int iw = ow * g.stride + iw0;
                            drow[ow] = (iw >= 0 && iw < g.w) ? srow[iw] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add transpose of im2col.
template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* im) {
    const std::size_t pixels = static_cast<std::size_t>(g.pixels());
    for (int ci = 0; ci < g.cin; ++ci) {
        for (int kh = 0; kh < g.kh; ++kh) {
            for (int kw = 0; kw < g.kw; ++kw) {
                const T* src = col + ((static_cast<std::size_t>(ci) * g.kh + kh) * g.kw + kw) * pixels;
                const int ih0 = kh * g.dil - g.pad_h;
                const int iw0 = kw * g.dil - g.pad_w;
                for (int oh = 0; oh < g.oh; ++oh) {
                    const int ih = oh * g.stride + ih0;
                    if (ih < 0 || ih >= g.h) continue;
                    const T* srow = src + static_cast<std::size_t>(oh) * g.ow;
                    T* drow = im + (static_cast<std::size_t>(ci) * g.h + ih) * g.w;
                    if (g.stride == 1) {
                        const int lo = std::max(0, -iw0);
                        const int hi = std::max(lo, std::min(g.ow, g.w - iw0));
                        for (int ow = lo; ow < hi; ++ow) {
                            drow[iw0 + ow] += srow[ow];
                        }
                    } else {
                        for (int ow = 0; ow < g.ow; ++ow) {
                            const int iw = ow * g.stride + iw0;
                            if (iw >= 0 && iw < g.w) drow[iw] += srow[ow];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride,
              int dilation, Padding padding) {
    const ConvGeom g = conv_geometry(input->value, weight->value, bias->value, stride, dilation,
                                     padding);
    const int k = g.col_rows();
    const int pixels = g.pixels();
    // 1x1 stride-1 kernels read the image planes as the column matrix directly
    const bool direct = g.kh == 1 && g.kw == 1 && g.stride == 1;

    Tensor<T> out({g.n, g.cout, g.oh, g.ow});
    const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
    const std::size_t out_stride = static_cast<std::size_t>(g.cout) * pixels;
    for (int n = 0; n < g.n; ++n) {
        const T* in_n = input->value.data.data() + n * in_stride;
        const T* col = in_n;
        if (!direct) {
            T* buf = scratch<T>(0, static_cast<std::size_t>(k) * pixels);
            im2col(in_n, g, buf);
            col = buf;
        }
        T* out_n = out.data.data() + n * out_stride;
        for (int co = 0; co < g.cout; ++co) {
            std::fill(out_n + static_cast<std::size_t>(co) * pixels,
                      out_n + static_cast<std::size_t>(co + 1) * pixels, bias->value.data[co]);
        }
        detail::gemm_nn(g.cout, pixels, k, weight->value.data.data(), col, out_n, true);
    }

    auto backprop = [input, weight, bias, g, k, pixels, direct, in_stride,
                     out_stride](const Tensor<T>& up) {
        if (bias->requires_grad) {
            Tensor<T> gb(bias->value.shape);
            for (int n = 0; n < g.n; ++n) {
                const T* up_n = up.data.data() + n * out_stride;
                for (int co = 0; co < g.cout; ++co) {
                    double s = 0.0;
                    const T* row = up_n + static_cast<std::size_t>(co) * pixels;
                    for (int p = 0; p < pixels; ++p) s += static_cast<double>(row[p]);
                    gb.data[co] += static_cast<T>(s);
                }
            }
            bias->accumulate(gb);
        }
        if (weight->requires_grad) {
            Tensor<T> gw(weight->value.shape);
            T* col_t = scratch<T>(1, static_cast<std::size_t>(pixels) * k);
            for (int n = 0; n < g.n; ++n) {
                const T* in_n = input->value.data.data() + n * in_stride;
                const T* col = in_n;
                if (!direct) {
                    T* buf = scratch<T>(0, static_cast<std::size_t>(k) * pixels);
                    im2col(in_n, g, buf);
                    col = buf;
                }
                detail::transpose(k, pixels, col, col_t);
                detail::gemm_nn(g.cout, k, pixels, up.data.data() + n * out_stride, col_t,
                                gw.data.data(), true);
            }
            weight->accumulate(gw);
        }
        if (input->requires_grad) {
            Tensor<T> gin(input->value.shape);
            T* w_t = scratch<T>(2, static_cast<std::size_t>(k) * g.cout);
            detail::transpose(g.cout, k, weight->value.data.data(), w_t);
            for (int n = 0; n < g.n; ++n) {
                T* gin_n = gin.data.data() + n * in_stride;
                if (direct) {
                    detail::gemm_nn(k, pixels, g.cout, w_t, up.data.data() + n * out_stride, gin_n,
                                    false);
                } else {
                    T* gcol = scratch<T>(0, static_cast<std::size_t>(k) * pixels);
                    detail::gemm_nn(k, pixels, g.cout, w_t, up.data.data() + n * out_stride, gcol,
                                    false);
                    col2im_add(gcol, g, gin_n);
                }
            }
            input->accumulate(gin);
        }
    };
    return make_op<T>(std::move(out), {input, weight, bias}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// pointwise activations
// ---------------------------------------------------------------------------

namespace {

// Keep sigmoid strictly inside (0,1) and tanh inside (-1,1) even where the
// exact result would round to the boundary.
template <typename T>
T sigmoid_val(T x) {
    const double y = 1.0 / (1.0 + std::exp(-static_cast<double>(x)));
    T r = static_cast<T>(y);
    if (r >= T(1)) r = std::nextafter(T(1), T(0));
    if (r <= T(0)) r = std::nextafter(T(0), T(1));
    return r;
}

template <typename T>
T tanh_val(T x) {
    T r = static_cast<T>(std::tanh(static_cast<double>(x)));
    if (r >= T(1)) r = std::nextafter(T(1), T(0));
    if (r <= T(-1)) r = std::nextafter(T(-1), T(0));
    return r;
}

}  // namespace

template <typename T>
Var<T> pointwise(Unary kind, const Var<T>& x) {
    Tensor<T> out(x->value.shape);
    const auto& in = x->value.data;
    switch (kind) {
        case Unary::kRelu:
            for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in[i] > T(0) ? in[i] : T(0);
            break;
        case Unary::kSigmoid:
            for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = sigmoid_val(in[i]);
            break;
        case Unary::kTanh:
            for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = tanh_val(in[i]);
            break;
        case Unary::kAbs:
            for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in[i] < T(0) ? -in[i] : in[i];
            break;
    }

    std::function<void(const Tensor<T>&)> backprop;
    switch (kind) {
        case Unary::kRelu:
            backprop = [x](const Tensor<T>& up) {
                Tensor<T> g(x->value.shape);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    g.data[i] = x->value.data[i] > T(0) ? up.data[i] : T(0);
                }
                acc_if(x, g);
            };
            break;
        case Unary::kSigmoid: {
            Tensor<T> y = out;  // derivative needs the activation itself
            backprop = [x, y = std::move(y)](const Tensor<T>& up) {
                Tensor<T> g(x->value.shape);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    g.data[i] = up.data[i] * y.data[i] * (T(1) - y.data[i]);
                }
                acc_if(x, g);
            };
            break;
        }
        case Unary::kTanh: {
            Tensor<T> y = out;
            backprop = [x, y = std::move(y)](const Tensor<T>& up) {
                Tensor<T> g(x->value.shape);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    g.data[i] = up.data[i] * (T(1) - y.data[i] * y.data[i]);
                }
                acc_if(x, g);
            };
            break;
        }
        case Unary::kAbs:
            // subgradient 0 at the kink
            backprop = [x](const Tensor<T>& up) {
                Tensor<T> g(x->value.shape);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const T v = x->value.data[i];
                    g.data[i] = v > T(0) ? up.data[i] : (v < T(0) ? -up.data[i] : T(0));
                }
                acc_if(x, g);
            };
            break;
    }
    return make_op<T>(std::move(out), {x}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int window, int stride) {
    const Tensor<T>& v = x->value;
    if (v.rank() != 4) {
        throw ShapeError("max_pool2d: input must be [N,C,H,W], got " + shape_str(v.shape));
    }
    if (window != stride || window < 1) {
        throw Error("max_pool2d: only window == stride >= 1 is supported");
    }
    const int n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
    if (h % window != 0 || w % window != 0) {
        throw ShapeError("max_pool2d: spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by window " + std::to_string(window));
    }
    const int oh = h / window, ow = w / window;
    Tensor<T> out({n, c, oh, ow});
    std::vector<std::int64_t> argmax(out.numel());
    std::size_t oi = 0;
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const std::size_t plane = (static_cast<std::size_t>(ni) * c + ci) * h * w;
            for (int yo = 0; yo < oh; ++yo) {
                for (int xo = 0; xo < ow; ++xo, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_idx = -1;
                    for (int dy = 0; dy < window; ++dy) {
                        const std::size_t row = plane + static_cast<std::size_t>(yo * window + dy) * w;
                        for (int dx = 0; dx < window; ++dx) {
                            const std::int64_t idx = static_cast<std::int64_t>(row) + xo * window + dx;
                            const T val = v.data[static_cast<std::size_t>(idx)];
                            if (val > best) {  // strict: first occurrence wins ties
                                best = val;
                                best_idx = idx;
                            }
                        }
                    }
                    out.data[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    auto backprop = [x, argmax = std::move(argmax)](const Tensor<T>& up) {
        Tensor<T> g(x->value.shape);
        for (std::size_t i = 0; i < up.data.size(); ++i) {
            g.data[static_cast<std::size_t>(argmax[i])] += up.data[i];
        }
        acc_if(x, g);
    };
    return make_op<T>(std::move(out), {x}, std::move(backprop));
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const Tensor<T>& v = x->value;
    if (v.rank() != 4) {
        throw ShapeError("global_avg_pool: input must be [N,C,H,W], got " + shape_str(v.shape));
    }
    const int n = v.dim(0), c = v.dim(1);
    const std::size_t hw = static_cast<std::size_t>(v.dim(2)) * v.dim(3);
    Tensor<T> out({n, c});
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const T* plane = v.data.data() + (static_cast<std::size_t>(ni) * c + ci) * hw;
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += static_cast<double>(plane[i]);
            out.at2(ni, ci) = static_cast<T>(s / static_cast<double>(hw));
        }
    }
    auto backprop = [x, n, c, hw](const Tensor<T>& up) {
        Tensor<T> g(x->value.shape);
        const T inv = static_cast<T>(1.0 / static_cast<double>(hw));
        for (int ni = 0; ni < n; ++ni) {
            for (int ci = 0; ci < c; ++ci) {
                const T gv = up.at2(ni, ci) * inv;
                T* plane = g.data.data() + (static_cast<std::size_t>(ni) * c + ci) * hw;
                for (std::size_t i = 0; i < hw; ++i) plane[i] = gv;
            }
        }
        acc_if(x, g);
    };
    return make_op<T>(std::move(out), {x}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

template <typename T>
Var<T> dense(const Var<T>& v, const Var<T>& weight, const Var<T>& bias) {
    const Tensor<T>& x = v->value;
    const Tensor<T>& w = weight->value;
    if (x.rank() != 2 || w.rank() != 2) {
        throw ShapeError("dense: expected v [N,Cin] and W [Cout,Cin], got " + shape_str(x.shape) +
                         " and " + shape_str(w.shape));
    }
    const int n = x.dim(0), cin = x.dim(1), cout = w.dim(0);
    if (w.dim(1) != cin) {
        throw ShapeError("dense: inner dims mismatch, v Cin " + std::to_string(cin) + " vs W Cin " +
                         std::to_string(w.dim(1)));
    }
    if (bias->value.rank() != 1 || bias->value.dim(0) != cout) {
        throw ShapeError("dense: bias must be [Cout=" + std::to_string(cout) + "], got " +
                         shape_str(bias->value.shape));
    }
    Tensor<T> out({n, cout});
    for (int ni = 0; ni < n; ++ni) {
        for (int co = 0; co < cout; ++co) {
            double s = static_cast<double>(bias->value.data[co]);
            const T* xr = x.data.data() + static_cast<std::size_t>(ni) * cin;
            const T* wr = w.data.data() + static_cast<std::size_t>(co) * cin;
            for (int ci = 0; ci < cin; ++ci) s += static_cast<double>(xr[ci]) * wr[ci];
            out.at2(ni, co) = static_cast<T>(s);
        }
    }
    auto backprop = [v, weight, bias, n, cin, cout](const Tensor<T>& up) {
        if (v->requires_grad) {
            Tensor<T> g(v->value.shape);
            for (int ni = 0; ni < n; ++ni) {
                for (int co = 0; co < cout; ++co) {
                    const T gv = up.at2(ni, co);
                    const T* wr = weight->value.data.data() + static_cast<std::size_t>(co) * cin;
                    T* gr = g.data.data() + static_cast<std::size_t>(ni) * cin;
                    for (int ci = 0; ci < cin; ++ci) gr[ci] += gv * wr[ci];
                }
            }
            v->accumulate(g);
        }
        if (weight->requires_grad) {
            Tensor<T> g(weight->value.shape);
            for (int ni = 0; ni < n; ++ni) {
                for (int co = 0; co < cout; ++co) {
                    const T gv = up.at2(ni, co);
                    const T* xr = v->value.data.data() + static_cast<std::size_t>(ni) * cin;
                    T* gr = g.data.data() + static_cast<std::size_t>(co) * cin;
                    for (int ci = 0; ci < cin; ++ci) gr[ci] += gv * xr[ci];
                }
            }
            weight->accumulate(g);
        }
        if (bias->requires_grad) {
            Tensor<T> g(bias->value.shape);
            for (int ni = 0; ni < n; ++ni) {
                for (int co = 0; co < cout; ++co) g.data[co] += up.at2(ni, co);
            }
            bias->accumulate(g);
        }
    };
    return make_op<T>(std::move(out), {v, weight, bias}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// concat / slice
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c_begin, int c_end) {
    if (x.rank() != 4 || c_begin < 0 || c_end > x.dim(1) || c_begin >= c_end) {
        throw ShapeError("slice_channels: bad range [" + std::to_string(c_begin) + "," +
                         std::to_string(c_end) + ") for " + shape_str(x.shape));
    }
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    Tensor<T> out({n, c_end - c_begin, x.dim(2), x.dim(3)});
    for (int ni = 0; ni < n; ++ni) {
        const T* src = x.data.data() + (static_cast<std::size_t>(ni) * c + c_begin) * hw;
        T* dst = out.data.data() + static_cast<std::size_t>(ni) * (c_end - c_begin) * hw;
        std::copy(src, src + static_cast<std::size_t>(c_end - c_begin) * hw, dst);
    }
    return out;
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    if (xs.empty()) {
        throw Error("concat_channels: empty input list");
    }
    const Tensor<T>& first = xs[0]->value;
    if (first.rank() != 4) {
        throw ShapeError("concat_channels: inputs must be [N,C,H,W], got " + shape_str(first.shape));
    }
    const int n = first.dim(0), h = first.dim(2), w = first.dim(3);
    int total_c = 0;
    for (const auto& x : xs) {
        const Tensor<T>& v = x->value;
        if (v.rank() != 4 || v.dim(0) != n || v.dim(2) != h || v.dim(3) != w) {
            throw ShapeError("concat_channels: shape " + shape_str(v.shape) +
                             " incompatible with " + shape_str(first.shape));
        }
        total_c += v.dim(1);
    }
    Tensor<T> out({n, total_c, h, w});
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ni = 0; ni < n; ++ni) {
        std::size_t c_off = 0;
        for (const auto& x : xs) {
            const int ci = x->value.dim(1);
            const T* src = x->value.data.data() + static_cast<std::size_t>(ni) * ci * hw;
            T* dst = out.data.data() + (static_cast<std::size_t>(ni) * total_c + c_off) * hw;
            std::copy(src, src + static_cast<std::size_t>(ci) * hw, dst);
            c_off += ci;
        }
    }
    auto backprop = [xs](const Tensor<T>& up) {
        int c_off = 0;
        for (const auto& x : xs) {
            const int ci = x->value.dim(1);
            if (x->requires_grad) {
                x->accumulate(slice_channels(up, c_off, c_off + ci));
            }
            c_off += ci;
        }
    };
    return make_op<T>(std::move(out), xs, std::move(backprop));
}

// ---------------------------------------------------------------------------
// bilinear upsample
// ---------------------------------------------------------------------------

namespace {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> t;  // blend toward i1
};

LerpAxis lerp_axis(int in_len, int factor) {
    LerpAxis ax;
    const int out_len = in_len * factor;
    ax.i0.resize(out_len);
    ax.i1.resize(out_len);
    ax.t.resize(out_len);
    for (int o = 0; o < out_len; ++o) {
        double src = (o + 0.5) / factor - 0.5;
        src = std::min(std::max(src, 0.0), static_cast<double>(in_len - 1));
        const int i0 = static_cast<int>(src);
        const int i1 = std::min(i0 + 1, in_len - 1);
        ax.i0[o] = i0;
        ax.i1[o] = i1;
        ax.t[o] = src - i0;
    }
    return ax;
}

}  // namespace

template <typename T>
Var<T> bilinear_upsample(const Var<T>& x, int factor) {
    const Tensor<T>& v = x->value;
    if (v.rank() != 4) {
        throw ShapeError("bilinear_upsample: input must be [N,C,H,W], got " + shape_str(v.shape));
    }
    if (factor < 1) {
        throw Error("bilinear_upsample: factor must be >= 1");
    }
    const int n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
    const int oh = h * factor, ow = w * factor;
    const LerpAxis ay = lerp_axis(h, factor);
    const LerpAxis axw = lerp_axis(w, factor);

    Tensor<T> out({n, c, oh, ow});
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const T* plane = v.data.data() + (static_cast<std::size_t>(ni) * c + ci) *
                                                 (static_cast<std::size_t>(h) * w);
            T* dst = out.data.data() + (static_cast<std::size_t>(ni) * c + ci) *
                                           (static_cast<std::size_t>(oh) * ow);
            for (int yo = 0; yo < oh; ++yo) {
                const T* r0 = plane + static_cast<std::size_t>(ay.i0[yo]) * w;
                const T* r1 = plane + static_cast<std::size_t>(ay.i1[yo]) * w;
                const T ty = static_cast<T>(ay.t[yo]);
                T* drow = dst + static_cast<std::size_t>(yo) * ow;
                for (int xo = 0; xo < ow; ++xo) {
                    const int x0 = axw.i0[xo], x1 = axw.i1[xo];
                    const T tx = static_cast<T>(axw.t[xo]);
                    // lerp form a + t*(b-a): exact on constants
                    const T top = r0[x0] + tx * (r0[x1] - r0[x0]);
                    const T bot = r1[x0] + tx * (r1[x1] - r1[x0]);
                    drow[xo] = top + ty * (bot - top);
                }
            }
        }
    }
    auto backprop = [x, n, c, h, w, oh, ow, ay, axw](const Tensor<T>& up) {
        Tensor<T> g(x->value.shape);
        for (int ni = 0; ni < n; ++ni) {
            for (int ci = 0; ci < c; ++ci) {
                T* gplane = g.data.data() + (static_cast<std::size_t>(ni) * c + ci) *
                                                (static_cast<std::size_t>(h) * w);
                const T* urow = up.data.data() + (static_cast<std::size_t>(ni) * c + ci) *
                                                     (static_cast<std::size_t>(oh) * ow);
                for (int yo = 0; yo < oh; ++yo) {
                    const double ty = ay.t[yo];
                    const std::size_t y0 = static_cast<std::size_t>(ay.i0[yo]) * w;
                    const std::size_t y1 = static_cast<std::size_t>(ay.i1[yo]) * w;
                    for (int xo = 0; xo < ow; ++xo) {
                        const double tx = axw.t[xo];
                        const T gv = urow[static_cast<std::size_t>(yo) * ow + xo];
                        const int x0 = axw.i0[xo], x1 = axw.i1[xo];
                        gplane[y0 + x0] += gv * static_cast<T>((1.0 - ty) * (1.0 - tx));
                        gplane[y0 + x1] += gv * static_cast<T>((1.0 - ty) * tx);
                        gplane[y1 + x0] += gv * static_cast<T>(ty * (1.0 - tx));
                        gplane[y1 + x1] += gv * static_cast<T>(ty * tx);
                    }
                }
            }
        }
        acc_if(x, g);
    };
    return make_op<T>(std::move(out), {x}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// broadcast multiply
// ---------------------------------------------------------------------------

template <typename T>
Var<T> broadcast_mul(const Var<T>& x, const Var<T>& w) {
    const Tensor<T>& xv = x->value;
    const Tensor<T>& wv = w->value;
    if (xv.rank() != 4) {
        throw ShapeError("broadcast_mul: x must be [N,C,H,W], got " + shape_str(xv.shape));
    }
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    const bool channel_gate = wv.rank() == 2 && wv.dim(0) == n && wv.dim(1) == c;
    const bool spatial_gate =
        wv.rank() == 4 && wv.dim(0) == n && wv.dim(1) == 1 && wv.dim(2) == h && wv.dim(3) == wd;
    if (!channel_gate && !spatial_gate) {
        throw ShapeError("broadcast_mul: gate " + shape_str(wv.shape) +
                         " must be [N,C] or [N,1,H,W] for x " + shape_str(xv.shape));
    }
    const std::size_t hw = static_cast<std::size_t>(h) * wd;
    Tensor<T> out(xv.shape);
    if (channel_gate) {
        for (int ni = 0; ni < n; ++ni) {
            for (int ci = 0; ci < c; ++ci) {
                const T gate = wv.at2(ni, ci);
                const T* src = xv.data.data() + (static_cast<std::size_t>(ni) * c + ci) * hw;
                T* dst = out.data.data() + (static_cast<std::size_t>(ni) * c + ci) * hw;
                for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * gate;
            }
        }
    } else {
        for (int ni = 0; ni < n; ++ni) {
            const T* gate = wv.data.data() + static_cast<std::size_t>(ni) * hw;
            for (int ci = 0; ci < c; ++ci) {
                const T* src = xv.data.data() + (static_cast<std::size_t>(ni) * c + ci) * hw;
                T* dst = out.data.data() + (static_cast<std::size_t>(ni) * c + ci) * hw;
                for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * gate[i];
            }
        }
    }
    auto backprop = [x, w, n, c, hw, channel_gate](const Tensor<T>& up) {
        const Tensor<T>& xv = x->value;
        const Tensor<T>& wv = w->value;
        if (x->requires_grad) {
            Tensor<T> g(xv.shape);
            for (int ni = 0; ni < n; ++ni) {
                for (int ci = 0; ci < c; ++ci) {
                    const std::size_t off = (static_cast<std::size_t>(ni) * c + ci) * hw;
                    if (channel_gate) {
                        const T gate = wv.at2(ni, ci);
                        for (std::size_t i = 0; i < hw; ++i) g.data[off + i] = up.data[off + i] * gate;
                    } else {
                        const T* gate = wv.data.data() + static_cast<std::size_t>(ni) * hw;
                        for (std::size_t i = 0; i < hw; ++i)
                            g.data[off + i] = up.data[off + i] * gate[i];
                    }
                }
            }
            x->accumulate(g);
        }
        if (w->requires_grad) {
            Tensor<T> g(wv.shape);
            if (channel_gate) {
                for (int ni = 0; ni < n; ++ni) {
                    for (int ci = 0; ci < c; ++ci) {
                        const std::size_t off = (static_cast<std::size_t>(ni) * c + ci) * hw;
                        double s = 0.0;
                        for (std::size_t i = 0; i < hw; ++i) {
                            s += static_cast<double>(up.data[off + i]) * xv.data[off + i];
                        }
                        g.at2(ni, ci) = static_cast<T>(s);
                    }
                }
            } else {
                std::vector<double> acc(hw);
                for (int ni = 0; ni < n; ++ni) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (int ci = 0; ci < c; ++ci) {
                        const std::size_t off = (static_cast<std::size_t>(ni) * c + ci) * hw;
                        for (std::size_t i = 0; i < hw; ++i) {
                            acc[i] += static_cast<double>(up.data[off + i]) * xv.data[off + i];
                        }
                    }
                    T* dst = g.data.data() + static_cast<std::size_t>(ni) * hw;
                    for (std::size_t i = 0; i < hw; ++i) dst[i] = static_cast<T>(acc[i]);
                }
            }
            w->accumulate(g);
        }
    };
    return make_op<T>(std::move(out), {x, w}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// reductions and scalar arithmetic
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Var<T> reduce_impl(const Var<T>& x, bool mean) {
    double s = 0.0;
    for (const T v : x->value.data) s += static_cast<double>(v);
    const std::size_t count = x->value.numel();
    if (mean) s /= static_cast<double>(count);
    Tensor<T> out({1}, static_cast<T>(s));
    auto backprop = [x, mean, count](const Tensor<T>& up) {
        const T gv = mean ? static_cast<T>(static_cast<double>(up.data[0]) / count) : up.data[0];
        Tensor<T> g(x->value.shape, gv);
        acc_if(x, g);
    };
    return make_op<T>(std::move(out), {x}, std::move(backprop));
}

}  // namespace

template <typename T>
Var<T> reduce_sum(const Var<T>& x) {
    return reduce_impl(x, false);
}

template <typename T>
Var<T> reduce_mean(const Var<T>& x) {
    return reduce_impl(x, true);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape_as(b->value)) {
        throw ShapeError("add: shape mismatch " + shape_str(a->value.shape) + " vs " +
                         shape_str(b->value.shape));
    }
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = a->value.data[i] + b->value.data[i];
    }
    auto backprop = [a, b](const Tensor<T>& up) {
        acc_if(a, up);
        acc_if(b, up);
    };
    return make_op<T>(std::move(out), {a, b}, std::move(backprop));
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> out(x->value.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = x->value.data[i] * factor;
    auto backprop = [x, factor](const Tensor<T>& up) {
        Tensor<T> g(x->value.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = up.data[i] * factor;
        acc_if(x, g);
    };
    return make_op<T>(std::move(out), {x}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define PFA_INSTANTIATE_OPS(T)                                                              \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int, Padding); \
    template Var<T> pointwise<T>(Unary, const Var<T>&);                                     \
    template Var<T> max_pool2d<T>(const Var<T>&, int, int);                                 \
    template Var<T> global_avg_pool<T>(const Var<T>&);                                      \
    template Var<T> dense<T>(const Var<T>&, const Var<T>&, const Var<T>&);                  \
    template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                         \
    template Var<T> bilinear_upsample<T>(const Var<T>&, int);                               \
    template Var<T> broadcast_mul<T>(const Var<T>&, const Var<T>&);                         \
    template Var<T> reduce_sum<T>(const Var<T>&);                                           \
    template Var<T> reduce_mean<T>(const Var<T>&);                                          \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                   \
    template Var<T> scale<T>(const Var<T>&, T);                                             \
    template Tensor<T> slice_channels<T>(const Tensor<T>&, int, int);

PFA_INSTANTIATE_OPS(float)
PFA_INSTANTIATE_OPS(double)

#undef PFA_INSTANTIATE_OPS

}  // namespace pfa
