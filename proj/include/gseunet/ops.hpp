#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gseunet/tensor.hpp"

// Forward operations with recorded backward rules. Every op is a pure
// function of its inputs: a fresh output tensor is allocated, inputs are
// never mutated. When `tape` is non-null and an input requires gradients,
// the op appends a node whose closure propagates output.grad() into the
// inputs' grads.
//
// Accumulation inside convolutions runs in a fixed row-major order over the
// receptive field (channel, then kernel row, then kernel column), with bias
// added last, so results are reproducible bit for bit.

namespace gseunet {

namespace detail {

inline int conv_out_extent(int in, int pad, int k, int stride, const char* axis) {
    const int span = in + 2 * pad - k;
    if (span < 0 || span % stride != 0) {
        throw ShapeError(std::string("conv window does not tile the ") + axis + " axis: (" +
                         std::to_string(in) + " + 2*" + std::to_string(pad) + " - " +
                         std::to_string(k) + ") is not a non-negative multiple of stride " +
                         std::to_string(stride));
    }
    const int out = span / stride + 1;
    if (out <= 0) {
        throw ShapeError(std::string("empty conv output on the ") + axis + " axis");
    }
    return out;
}

// oy range such that iy = oy*stride - pad + k stays inside [0, extent).
inline int conv_lo(int pad, int k, int stride) {
    return pad > k ? (pad - k + stride - 1) / stride : 0;
}
inline int conv_hi(int extent, int pad, int k, int stride, int out_extent) {
    const int hi = (extent - 1 + pad - k) / stride;
    return hi < out_extent - 1 ? hi : out_extent - 1;
}

// 3x3 / stride-1 / pad-1 fast path: one pass per output row applies all nine
// taps. Per output element the taps accumulate in the same order as the
// generic loop (channel, kernel row, kernel column), so results are
// bit-identical; this exists purely because one fused pass beats nine
// read-modify-write sweeps over the plane.
template <class T>
void conv2d_fwd_3x3(const T* __restrict in, const T* __restrict wgt, const T* __restrict bias,
                    T* __restrict out, int n_batch, int c_in, int h, int w, int c_out,
                    int groups) {
    const int gin = c_in / groups;
    const int gout = c_out / groups;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int n = 0; n < n_batch; ++n) {
        for (int co = 0; co < c_out; ++co) {
            T* out_nc = out + (static_cast<std::size_t>(n) * c_out + co) * plane;
            const int g = co / gout;
            for (int cig = 0; cig < gin; ++cig) {
                const T* in_nc =
                    in + (static_cast<std::size_t>(n) * c_in + g * gin + cig) * plane;
                const T* w9 = wgt + (static_cast<std::size_t>(co) * gin + cig) * 9;
                for (int oy = 0; oy < h; ++oy) {
                    const T* r0 = oy > 0 ? in_nc + static_cast<std::size_t>(oy - 1) * w : nullptr;
                    const T* r1 = in_nc + static_cast<std::size_t>(oy) * w;
                    const T* r2 =
                        oy + 1 < h ? in_nc + static_cast<std::size_t>(oy + 1) * w : nullptr;
                    T* orow = out_nc + static_cast<std::size_t>(oy) * w;
                    const T* rows[3] = {r0, r1, r2};
                    const auto edge = [&](int ox) {
                        T acc = orow[ox];
                        for (int ky = 0; ky < 3; ++ky) {
                            const T* r = rows[ky];
                            if (!r) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int ix = ox + kx - 1;
                                if (ix < 0 || ix >= w) continue;
                                acc += w9[ky * 3 + kx] * r[ix];
                            }
                        }
                        orow[ox] = acc;
                    };
                    if (!r0 || !r2) {
                        // Top and bottom rows take the guarded path; the hot
                        // interior loop below then needs no branches at all.
                        for (int ox = 0; ox < w; ++ox) edge(ox);
                        continue;
                    }
                    edge(0);
                    for (int ox = 1; ox <= w - 2; ++ox) {
                        T acc = orow[ox];
                        acc += w9[0] * r0[ox - 1];
                        acc += w9[1] * r0[ox];
                        acc += w9[2] * r0[ox + 1];
                        acc += w9[3] * r1[ox - 1];
                        acc += w9[4] * r1[ox];
                        acc += w9[5] * r1[ox + 1];
                        acc += w9[6] * r2[ox - 1];
                        acc += w9[7] * r2[ox];
                        acc += w9[8] * r2[ox + 1];
                        orow[ox] = acc;
                    }
                    if (w > 1) edge(w - 1);
                }
            }
            if (bias) {
                const T b = bias[co];
                for (std::size_t i = 0; i < plane; ++i) out_nc[i] += b;
            }
        }
    }
}

// Mirror of conv2d_fwd_3x3 for the input gradient: gathers from the three
// relevant dout rows per input row, taps in (co, ky, kx) order like the
// generic scatter, so grads are bit-identical to it.
template <class T>
void conv2d_bwd_input_3x3(T* __restrict din, const T* __restrict wgt, const T* __restrict dout,
                          int n_batch, int c_in, int h, int w, int c_out, int groups) {
    const int gin = c_in / groups;
    const int gout = c_out / groups;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int n = 0; n < n_batch; ++n) {
        for (int ci = 0; ci < c_in; ++ci) {
            T* din_nc = din + (static_cast<std::size_t>(n) * c_in + ci) * plane;
            const int g = ci / gin;
            const int cig = ci % gin;
            for (int co = g * gout; co < (g + 1) * gout; ++co) {
                const T* dout_nc = dout + (static_cast<std::size_t>(n) * c_out + co) * plane;
                const T* w9 = wgt + (static_cast<std::size_t>(co) * gin + cig) * 9;
                for (int iy = 0; iy < h; ++iy) {
                    // kernel row ky maps to dout row iy + 1 - ky
                    const T* a =
                        iy + 1 < h ? dout_nc + static_cast<std::size_t>(iy + 1) * w : nullptr;
                    const T* b = dout_nc + static_cast<std::size_t>(iy) * w;
                    const T* c = iy > 0 ? dout_nc + static_cast<std::size_t>(iy - 1) * w : nullptr;
                    T* drow = din_nc + static_cast<std::size_t>(iy) * w;
                    const T* rows[3] = {a, b, c};
                    const auto edge = [&](int ix) {
                        T acc = drow[ix];
                        for (int ky = 0; ky < 3; ++ky) {
                            const T* r = rows[ky];
                            if (!r) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int ox = ix - kx + 1;
                                if (ox < 0 || ox >= w) continue;
                                acc += w9[ky * 3 + kx] * r[ox];
                            }
                        }
                        drow[ix] = acc;
                    };
                    if (!a || !c) {
                        for (int ix = 0; ix < w; ++ix) edge(ix);
                        continue;
                    }
                    edge(0);
                    for (int ix = 1; ix <= w - 2; ++ix) {
                        T acc = drow[ix];
                        acc += w9[0] * a[ix + 1];
                        acc += w9[1] * a[ix];
                        acc += w9[2] * a[ix - 1];
                        acc += w9[3] * b[ix + 1];
                        acc += w9[4] * b[ix];
                        acc += w9[5] * b[ix - 1];
                        acc += w9[6] * c[ix + 1];
                        acc += w9[7] * c[ix];
                        acc += w9[8] * c[ix - 1];
                        drow[ix] = acc;
                    }
                    if (w > 1) edge(w - 1);
                }
            }
        }
    }
}

template <class T>
void conv2d_fwd(const T* in, const T* wgt, const T* bias, T* out, int n_batch, int c_in, int h,
                int w, int c_out, int kh, int kw, int stride, int pad, int groups, int h_out,
                int w_out) {
    if (kh == 3 && kw == 3 && stride == 1 && pad == 1) {
        conv2d_fwd_3x3(in, wgt, bias, out, n_batch, c_in, h, w, c_out, groups);
        return;
    }
    const int gin = c_in / groups;
    const int gout = c_out / groups;
    for (int n = 0; n < n_batch; ++n) {
        for (int co = 0; co < c_out; ++co) {
            T* out_nc = out + (static_cast<std::size_t>(n) * c_out + co) * h_out * w_out;
            const int g = co / gout;
            for (int cig = 0; cig < gin; ++cig) {
                const T* in_nc =
                    in + (static_cast<std::size_t>(n) * c_in + g * gin + cig) * h * w;
                const T* w_c = wgt + (static_cast<std::size_t>(co) * gin + cig) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const int oy_lo = conv_lo(pad, ky, stride);
                    const int oy_hi = conv_hi(h, pad, ky, stride, h_out);
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wv = w_c[ky * kw + kx];
                        const int ox_lo = conv_lo(pad, kx, stride);
                        const int ox_hi = conv_hi(w, pad, kx, stride, w_out);
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * stride - pad + ky;
                            const T* in_row = in_nc + static_cast<std::size_t>(iy) * w;
                            T* out_row = out_nc + static_cast<std::size_t>(oy) * w_out;
                            if (stride == 1) {
                                const T* src = in_row + ox_lo - pad + kx;
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    out_row[ox] += wv * src[ox - ox_lo];
                                }
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    out_row[ox] += wv * in_row[ox * stride - pad + kx];
                                }
                            }
                        }
                    }
                }
            }
            if (bias) {
                const T b = bias[co];
                for (int i = 0; i < h_out * w_out; ++i) out_nc[i] += b;
            }
        }
    }
}

template <class T>
void conv2d_bwd_input(T* din, const T* wgt, const T* dout, int n_batch, int c_in, int h, int w,
                      int c_out, int kh, int kw, int stride, int pad, int groups, int h_out,
                      int w_out) {
    if (kh == 3 && kw == 3 && stride == 1 && pad == 1) {
        conv2d_bwd_input_3x3(din, wgt, dout, n_batch, c_in, h, w, c_out, groups);
        return;
    }
    const int gin = c_in / groups;
    const int gout = c_out / groups;
    for (int n = 0; n < n_batch; ++n) {
        for (int ci = 0; ci < c_in; ++ci) {
            T* din_nc = din + (static_cast<std::size_t>(n) * c_in + ci) * h * w;
            const int g = ci / gin;
            const int cig = ci % gin;
            for (int co = g * gout; co < (g + 1) * gout; ++co) {
                const T* dout_nc =
                    dout + (static_cast<std::size_t>(n) * c_out + co) * h_out * w_out;
                const T* w_c = wgt + (static_cast<std::size_t>(co) * gin + cig) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const int oy_lo = conv_lo(pad, ky, stride);
                    const int oy_hi = conv_hi(h, pad, ky, stride, h_out);
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wv = w_c[ky * kw + kx];
                        const int ox_lo = conv_lo(pad, kx, stride);
                        const int ox_hi = conv_hi(w, pad, kx, stride, w_out);
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * stride - pad + ky;
                            T* din_row = din_nc + static_cast<std::size_t>(iy) * w;
                            const T* dout_row = dout_nc + static_cast<std::size_t>(oy) * w_out;
                            if (stride == 1) {
                                T* dst = din_row + ox_lo - pad + kx;
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    dst[ox - ox_lo] += wv * dout_row[ox];
                                }
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    din_row[ox * stride - pad + kx] += wv * dout_row[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// Weight gradient counterpart of the fused 3x3 pass: one sweep over the plane
// feeds all nine taps, instead of nine sweeps feeding one tap each. The nine
// tap totals keep sixteen partial-sum lanes apiece over the interior columns
// plus a scalar slot for edges; each fold order is fixed, so the result is
// deterministic.
template <class T>
void conv2d_bwd_weight_3x3(const T* __restrict in, T* __restrict dwgt, const T* __restrict dout,
                           int n_batch, int c_in, int h, int w, int c_out, int groups) {
    const int gin = c_in / groups;
    const int gout = c_out / groups;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int co = 0; co < c_out; ++co) {
        const int g = co / gout;
        for (int cig = 0; cig < gin; ++cig) {
            const int ci = g * gin + cig;
            T edge_acc[9] = {};
            T lane[9][16] = {};
            for (int n = 0; n < n_batch; ++n) {
                const T* in_nc = in + (static_cast<std::size_t>(n) * c_in + ci) * plane;
                const T* dout_nc = dout + (static_cast<std::size_t>(n) * c_out + co) * plane;
                for (int oy = 0; oy < h; ++oy) {
                    const T* r0 = oy > 0 ? in_nc + static_cast<std::size_t>(oy - 1) * w : nullptr;
                    const T* r1 = in_nc + static_cast<std::size_t>(oy) * w;
                    const T* r2 =
                        oy + 1 < h ? in_nc + static_cast<std::size_t>(oy + 1) * w : nullptr;
                    const T* d = dout_nc + static_cast<std::size_t>(oy) * w;
                    const auto edge = [&](int ox) {
                        const T dv = d[ox];
                        if (r0) {
                            if (ox > 0) edge_acc[0] += r0[ox - 1] * dv;
                            edge_acc[1] += r0[ox] * dv;
                            if (ox + 1 < w) edge_acc[2] += r0[ox + 1] * dv;
                        }
                        if (ox > 0) edge_acc[3] += r1[ox - 1] * dv;
                        edge_acc[4] += r1[ox] * dv;
                        if (ox + 1 < w) edge_acc[5] += r1[ox + 1] * dv;
                        if (r2) {
                            if (ox > 0) edge_acc[6] += r2[ox - 1] * dv;
                            edge_acc[7] += r2[ox] * dv;
                            if (ox + 1 < w) edge_acc[8] += r2[ox + 1] * dv;
                        }
                    };
                    if (!r0 || !r2) {
                        for (int ox = 0; ox < w; ++ox) edge(ox);
                        continue;
                    }
                    edge(0);
                    int ox = 1;
                    for (; ox + 16 <= w - 1; ox += 16) {
                        for (int j = 0; j < 16; ++j) {
                            const T dv = d[ox + j];
                            lane[0][j] += r0[ox + j - 1] * dv;
                            lane[1][j] += r0[ox + j] * dv;
                            lane[2][j] += r0[ox + j + 1] * dv;
                            lane[3][j] += r1[ox + j - 1] * dv;
                            lane[4][j] += r1[ox + j] * dv;
                            lane[5][j] += r1[ox + j + 1] * dv;
                            lane[6][j] += r2[ox + j - 1] * dv;
                            lane[7][j] += r2[ox + j] * dv;
                            lane[8][j] += r2[ox + j + 1] * dv;
                        }
                    }
                    for (; ox <= w - 2; ++ox) edge(ox);
                    if (w > 1) edge(w - 1);
                }
            }
            T* dw_c = dwgt + (static_cast<std::size_t>(co) * gin + cig) * 9;
            for (int k = 0; k < 9; ++k) {
                T total = edge_acc[k];
                for (int j = 0; j < 16; ++j) total += lane[k][j];
                dw_c[k] += total;
            }
        }
    }
}

template <class T>
void conv2d_bwd_weight(const T* in, T* dwgt, const T* dout, int n_batch, int c_in, int h, int w,
                       int c_out, int kh, int kw, int stride, int pad, int groups, int h_out,
                       int w_out) {
    if (kh == 3 && kw == 3 && stride == 1 && pad == 1) {
        conv2d_bwd_weight_3x3(in, dwgt, dout, n_batch, c_in, h, w, c_out, groups);
        return;
    }
    const int gin = c_in / groups;
    const int gout = c_out / groups;
    for (int co = 0; co < c_out; ++co) {
        const int g = co / gout;
        for (int cig = 0; cig < gin; ++cig) {
            const int ci = g * gin + cig;
            T* dw_c = dwgt + (static_cast<std::size_t>(co) * gin + cig) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                const int oy_lo = conv_lo(pad, ky, stride);
                const int oy_hi = conv_hi(h, pad, ky, stride, h_out);
                for (int kx = 0; kx < kw; ++kx) {
                    const int ox_lo = conv_lo(pad, kx, stride);
                    const int ox_hi = conv_hi(w, pad, kx, stride, w_out);
                    // Sixteen fixed-order partial sums instead of one running
                    // total: same determinism, but the adds pipeline instead
                    // of serializing on the accumulator.
                    T lane[16] = {};
                    const int len = ox_hi - ox_lo + 1;
                    // When the tap needs no column clipping the valid rows sit
                    // back to back in both planes, so the whole slab reduces as
                    // one long run instead of one short run per row.
                    const bool whole_rows =
                        stride == 1 && pad == kx && ox_lo == 0 && len == w_out && w_out == w;
                    for (int n = 0; n < n_batch; ++n) {
                        const T* in_nc =
                            in + (static_cast<std::size_t>(n) * c_in + ci) * h * w;
                        const T* dout_nc =
                            dout + (static_cast<std::size_t>(n) * c_out + co) * h_out * w_out;
                        if (whole_rows) {
                            const int iy_lo = oy_lo - pad + ky;
                            const T* src = in_nc + static_cast<std::size_t>(iy_lo) * w;
                            const T* dst = dout_nc + static_cast<std::size_t>(oy_lo) * w;
                            const std::size_t run =
                                static_cast<std::size_t>(oy_hi - oy_lo + 1) * w;
                            std::size_t i = 0;
                            for (; i + 16 <= run; i += 16) {
                                for (int j = 0; j < 16; ++j) {
                                    lane[j] += src[i + j] * dst[i + j];
                                }
                            }
                            for (int j = 0; i < run; ++i, ++j) {
                                lane[j] += src[i] * dst[i];
                            }
                            continue;
                        }
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * stride - pad + ky;
                            const T* in_row = in_nc + static_cast<std::size_t>(iy) * w;
                            const T* dout_row = dout_nc + static_cast<std::size_t>(oy) * w_out;
                            if (stride == 1) {
                                const T* src = in_row + ox_lo - pad + kx;
                                const T* dst = dout_row + ox_lo;
                                int i = 0;
                                for (; i + 16 <= len; i += 16) {
                                    for (int j = 0; j < 16; ++j) {
                                        lane[j] += src[i + j] * dst[i + j];
                                    }
                                }
                                for (int j = 0; i < len; ++i, ++j) {
                                    lane[j] += src[i] * dst[i];
                                }
                            } else {
                                for (int i = 0; i < len; ++i) {
                                    const int ox = ox_lo + i;
                                    lane[i & 15] += in_row[ox * stride - pad + kx] * dout_row[ox];
                                }
                            }
                        }
                    }
                    T acc(0);
                    for (int j = 0; j < 16; ++j) acc += lane[j];
                    dw_c[ky * kw + kx] += acc;
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b, TapeT<T>* tape = nullptr) {
    check_same_shape(a, b, "add");
    auto out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record({a, b}, out, [a = a, b = b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b, TapeT<T>* tape = nullptr) {
    check_same_shape(a, b, "mul");
    auto out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record({a, b}, out, [a = a, b = b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                const auto& bv2 = b.data();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                const auto& av2 = a.data();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> sum(const TensorT<T>& x, TapeT<T>* tape = nullptr) {
    T acc(0);
    for (T v : x.data()) acc += v;
    auto out = TensorT<T>::scalar(acc);
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({x}, out, [x = x, out]() mutable {
            const T g = out.grad()[0];
            auto& gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

template <class T>
TensorT<T> relu(const TensorT<T>& x, TapeT<T>* tape = nullptr) {
    auto out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({x}, out, [x = x, out]() mutable {
            const auto& g = out.grad();
            const auto& xv2 = x.data();
            auto& gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xv2[i] > T(0)) gx[i] += g[i];
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x, TapeT<T>* tape = nullptr) {
    auto out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const T v = xv[i];
        if (v >= T(0)) {
            ov[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            ov[i] = e / (T(1) + e);
        }
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({x}, out, [x = x, out]() mutable {
            const auto& g = out.grad();
            const auto& ov2 = out.data();
            auto& gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * ov2[i] * (T(1) - ov2[i]);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b, TapeT<T>* tape = nullptr) {
    if (a.rank() != 4 || b.rank() != 4) {
        throw ShapeError("concat_channels expects rank-4 inputs, got " + a.shape_str() + " and " +
                         b.shape_str());
    }
    for (int d : {0, 2, 3}) {
        if (a.dim(d) != b.dim(d)) {
            throw ShapeError("concat_channels: inputs disagree on dimension " + std::to_string(d) +
                             ": " + a.shape_str() + " vs " + b.shape_str());
        }
    }
    const int n_batch = a.dim(0), c1 = a.dim(1), c2 = b.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto out = TensorT<T>::zeros({n_batch, c1 + c2, h, w});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (int n = 0; n < n_batch; ++n) {
        std::copy(av.begin() + n * c1 * plane, av.begin() + (n + 1) * c1 * plane,
                  ov.begin() + static_cast<std::size_t>(n) * (c1 + c2) * plane);
        std::copy(bv.begin() + n * c2 * plane, bv.begin() + (n + 1) * c2 * plane,
                  ov.begin() + (static_cast<std::size_t>(n) * (c1 + c2) + c1) * plane);
    }
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record({a, b}, out, [a = a, b = b, out, n_batch, c1, c2, plane]() mutable {
            const auto& g = out.grad();
            for (int n = 0; n < n_batch; ++n) {
                const std::size_t base = static_cast<std::size_t>(n) * (c1 + c2) * plane;
                if (a.requires_grad()) {
                    auto& ga = a.grad();
                    for (std::size_t i = 0; i < static_cast<std::size_t>(c1) * plane; ++i) {
                        ga[n * c1 * plane + i] += g[base + i];
                    }
                }
                if (b.requires_grad()) {
                    auto& gb = b.grad();
                    for (std::size_t i = 0; i < static_cast<std::size_t>(c2) * plane; ++i) {
                        gb[n * c2 * plane + i] += g[base + c1 * plane + i];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> max_pool2d(const TensorT<T>& x, TapeT<T>* tape = nullptr) {
    if (x.rank() != 4) {
        throw ShapeError("max_pool2d expects a rank-4 input, got " + x.shape_str());
    }
    const int n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("max_pool2d needs even spatial dims, got " + std::to_string(h) + "x" +
                         std::to_string(w));
    }
    const int ho = h / 2, wo = w / 2;
    auto out = TensorT<T>::zeros({n_batch, c, ho, wo});
    std::vector<std::int64_t> argmax(out.size());
    const auto& xv = x.data();
    auto& ov = out.data();
    std::size_t o = 0;
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * h * w;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox, ++o) {
                    // first maximum in row-major scan keeps the gradient on ties
                    std::size_t best = base + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                    T best_v = xv[best];
                    const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
                    for (std::size_t idx : cand) {
                        if (xv[idx] > best_v) {
                            best_v = xv[idx];
                            best = idx;
                        }
                    }
                    ov[o] = best_v;
                    argmax[o] = static_cast<std::int64_t>(best);
                }
            }
        }
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({x}, out, [x = x, out, argmax = std::move(argmax)]() mutable {
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
        });
    }
    return out;
}

template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& x, TapeT<T>* tape = nullptr) {
    if (x.rank() != 4) {
        throw ShapeError("global_avg_pool expects a rank-4 input, got " + x.shape_str());
    }
    const int n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto out = TensorT<T>::zeros({n_batch, c});
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
            T acc(0);
            for (std::size_t i = 0; i < plane; ++i) acc += xv[base + i];
            ov[static_cast<std::size_t>(n) * c + ch] = acc / static_cast<T>(plane);
        }
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({x}, out, [x = x, out, n_batch, c, plane]() mutable {
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (int n = 0; n < n_batch; ++n) {
                for (int ch = 0; ch < c; ++ch) {
                    const T gv = g[static_cast<std::size_t>(n) * c + ch] / static_cast<T>(plane);
                    const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) gx[base + i] += gv;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride, int padding, int groups, TapeT<T>* tape = nullptr) {
    if (input.rank() != 4) {
        throw ShapeError("conv2d expects a rank-4 input, got " + input.shape_str());
    }
    if (weight.rank() != 4) {
        throw ShapeError("conv2d expects a rank-4 weight, got " + weight.shape_str());
    }
    if (stride < 1) throw ConfigError("conv2d stride must be positive");
    if (padding < 0) throw ConfigError("conv2d padding must be non-negative");
    if (groups < 1) throw ConfigError("conv2d groups must be positive");
    const int n_batch = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (c_in % groups != 0) {
        throw ConfigError("conv2d: input channels " + std::to_string(c_in) +
                          " not divisible by groups " + std::to_string(groups));
    }
    if (c_out % groups != 0) {
        throw ConfigError("conv2d: output channels " + std::to_string(c_out) +
                          " not divisible by groups " + std::to_string(groups));
    }
    if (weight.dim(1) != c_in / groups) {
        throw ShapeError("conv2d: weight dimension 1 is " + std::to_string(weight.dim(1)) +
                         ", expected input channels / groups = " +
                         std::to_string(c_in / groups));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
        throw ShapeError("conv2d: bias must have shape [" + std::to_string(c_out) + "], got " +
                         bias.shape_str());
    }
    const int h_out = detail::conv_out_extent(h, padding, kh, stride, "height");
    const int w_out = detail::conv_out_extent(w, padding, kw, stride, "width");

    auto out = TensorT<T>::zeros({n_batch, c_out, h_out, w_out});
    detail::conv2d_fwd(input.data().data(), weight.data().data(),
                       bias.defined() ? bias.data().data() : nullptr, out.data().data(), n_batch,
                       c_in, h, w, c_out, kh, kw, stride, padding, groups, h_out, w_out);

    const bool needs_grad =
        input.requires_grad() || weight.requires_grad() || (bias.defined() && bias.requires_grad());
    if (tape && needs_grad) {
        out.set_requires_grad(true);
        std::vector<TensorT<T>> ins = {input, weight};
        if (bias.defined()) ins.push_back(bias);
        tape->record(ins, out,
                     [input = input, weight = weight, bias = bias, out, n_batch, c_in, h, w,
                      c_out, kh, kw, stride, padding, groups, h_out, w_out]() mutable {
                         const T* g = out.grad().data();
                         if (input.requires_grad()) {
                             detail::conv2d_bwd_input(input.grad().data(), weight.data().data(), g,
                                                      n_batch, c_in, h, w, c_out, kh, kw, stride,
                                                      padding, groups, h_out, w_out);
                         }
                         if (weight.requires_grad()) {
                             detail::conv2d_bwd_weight(input.data().data(), weight.grad().data(),
                                                       g, n_batch, c_in, h, w, c_out, kh, kw,
                                                       stride, padding, groups, h_out, w_out);
                         }
                         if (bias.defined() && bias.requires_grad()) {
                             auto& gb = bias.grad();
                             const std::size_t plane = static_cast<std::size_t>(h_out) * w_out;
                             for (int n = 0; n < n_batch; ++n) {
                                 for (int co = 0; co < c_out; ++co) {
                                     const std::size_t base =
                                         (static_cast<std::size_t>(n) * c_out + co) * plane;
                                     T acc(0);
                                     for (std::size_t i = 0; i < plane; ++i) acc += g[base + i];
                                     gb[co] += acc;
                                 }
                             }
                         }
                     });
    }
    return out;
}

// 1-D convolution across the channel axis, zero-padded to keep the length.
// Accepts [C] or a batched [N, C]; the kernel length must be odd.
template <class T>
TensorT<T> conv1d_channels(const TensorT<T>& v, const TensorT<T>& weight,
                           TapeT<T>* tape = nullptr) {
    if (v.rank() != 1 && v.rank() != 2) {
        throw ShapeError("conv1d_channels expects rank 1 or 2, got " + v.shape_str());
    }
    if (weight.rank() != 1) {
        throw ShapeError("conv1d_channels expects a rank-1 kernel, got " + weight.shape_str());
    }
    const int k = weight.dim(0);
    if (k % 2 == 0) {
        throw ConfigError("conv1d_channels kernel size must be odd, got " + std::to_string(k));
    }
    const int n_batch = v.rank() == 2 ? v.dim(0) : 1;
    const int c = v.rank() == 2 ? v.dim(1) : v.dim(0);
    if (k > c) {
        throw ConfigError("conv1d_channels kernel size " + std::to_string(k) +
                          " exceeds channel count " + std::to_string(c));
    }
    const int half = k / 2;
    auto out = TensorT<T>::zeros(v.shape());
    const auto& xv = v.data();
    const auto& wv = weight.data();
    auto& ov = out.data();
    for (int n = 0; n < n_batch; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * c;
        for (int ch = 0; ch < c; ++ch) {
            T acc(0);
            for (int j = 0; j < k; ++j) {
                const int src = ch + j - half;
                if (src >= 0 && src < c) acc += xv[base + src] * wv[j];
            }
            ov[base + ch] = acc;
        }
    }
    if (tape && (v.requires_grad() || weight.requires_grad())) {
        out.set_requires_grad(true);
        tape->record({v, weight}, out, [v = v, weight = weight, out, n_batch, c, k, half]() mutable {
            const auto& g = out.grad();
            for (int n = 0; n < n_batch; ++n) {
                const std::size_t base = static_cast<std::size_t>(n) * c;
                if (v.requires_grad()) {
                    auto& gv = v.grad();
                    const auto& wv2 = weight.data();
                    for (int ch = 0; ch < c; ++ch) {
                        for (int j = 0; j < k; ++j) {
                            const int src = ch + j - half;
                            if (src >= 0 && src < c) gv[base + src] += wv2[j] * g[base + ch];
                        }
                    }
                }
                if (weight.requires_grad()) {
                    auto& gw = weight.grad();
                    const auto& xv2 = v.data();
                    for (int j = 0; j < k; ++j) {
                        T acc(0);
                        for (int ch = 0; ch < c; ++ch) {
                            const int src = ch + j - half;
                            if (src >= 0 && src < c) acc += xv2[base + src] * g[base + ch];
                        }
                        gw[j] += acc;
                    }
                }
            }
        });
    }
    return out;
}

// Stride-2 transposed convolution with a fixed 2x2 kernel: the adjoint of a
// stride-2 conv2d sharing the same weight tensor. Weight layout is
// [C_in, C_out, 2, 2]; each output pixel reads exactly one input pixel per
// input channel, so the sum runs over input channels in ascending order.
template <class T>
TensorT<T> transposed_conv2d(const TensorT<T>& input, const TensorT<T>& weight,
                             TapeT<T>* tape = nullptr) {
    if (input.rank() != 4) {
        throw ShapeError("transposed_conv2d expects a rank-4 input, got " + input.shape_str());
    }
    if (weight.rank() != 4 || weight.dim(2) != 2 || weight.dim(3) != 2) {
        throw ShapeError("transposed_conv2d expects a [C_in, C_out, 2, 2] weight, got " +
                         weight.shape_str());
    }
    const int n_batch = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (weight.dim(0) != c_in) {
        throw ShapeError("transposed_conv2d: weight dimension 0 is " +
                         std::to_string(weight.dim(0)) + ", expected input channels " +
                         std::to_string(c_in));
    }
    const int c_out = weight.dim(1);
    const int ho = 2 * h, wo = 2 * w;
    auto out = TensorT<T>::zeros({n_batch, c_out, ho, wo});
    const auto& xv = input.data();
    const auto& wv = weight.data();
    auto& ov = out.data();
    for (int n = 0; n < n_batch; ++n) {
        for (int co = 0; co < c_out; ++co) {
            T* out_nc = ov.data() + (static_cast<std::size_t>(n) * c_out + co) * ho * wo;
            for (int oy = 0; oy < ho; ++oy) {
                const int y = oy / 2, ky = oy % 2;
                for (int ox = 0; ox < wo; ++ox) {
                    const int x = ox / 2, kx = ox % 2;
                    T acc(0);
                    for (int ci = 0; ci < c_in; ++ci) {
                        const T iv =
                            xv[((static_cast<std::size_t>(n) * c_in + ci) * h + y) * w + x];
                        acc += iv * wv[((static_cast<std::size_t>(ci) * c_out + co) * 2 + ky) * 2 +
                                       kx];
                    }
                    out_nc[static_cast<std::size_t>(oy) * wo + ox] = acc;
                }
            }
        }
    }
    if (tape && (input.requires_grad() || weight.requires_grad())) {
        out.set_requires_grad(true);
        tape->record({input, weight}, out,
                     [input = input, weight = weight, out, n_batch, c_in, h, w, c_out, ho, wo]() mutable {
                         const auto& g = out.grad();
                         if (input.requires_grad()) {
                             auto& gx = input.grad();
                             const auto& wv2 = weight.data();
                             for (int n = 0; n < n_batch; ++n) {
                                 for (int ci = 0; ci < c_in; ++ci) {
                                     for (int y = 0; y < h; ++y) {
                                         for (int x = 0; x < w; ++x) {
                                             T acc(0);
                                             for (int co = 0; co < c_out; ++co) {
                                                 const std::size_t gbase =
                                                     (static_cast<std::size_t>(n) * c_out + co) *
                                                     ho * wo;
                                                 const std::size_t wbase =
                                                     (static_cast<std::size_t>(ci) * c_out + co) *
                                                     4;
                                                 for (int ky = 0; ky < 2; ++ky) {
                                                     for (int kx = 0; kx < 2; ++kx) {
                                                         acc += wv2[wbase + 2 * ky + kx] *
                                                                g[gbase +
                                                                  static_cast<std::size_t>(
                                                                      2 * y + ky) *
                                                                      wo +
                                                                  2 * x + kx];
                                                     }
                                                 }
                                             }
                                             gx[((static_cast<std::size_t>(n) * c_in + ci) * h +
                                                 y) *
                                                    w +
                                                x] += acc;
                                         }
                                     }
                                 }
                             }
                         }
                         if (weight.requires_grad()) {
                             auto& gw = weight.grad();
                             const auto& xv2 = input.data();
                             for (int ci = 0; ci < c_in; ++ci) {
                                 for (int co = 0; co < c_out; ++co) {
                                     for (int ky = 0; ky < 2; ++ky) {
                                         for (int kx = 0; kx < 2; ++kx) {
                                             T acc(0);
                                             for (int n = 0; n < n_batch; ++n) {
                                                 const std::size_t ibase =
                                                     (static_cast<std::size_t>(n) * c_in + ci) *
                                                     h * w;
                                                 const std::size_t gbase =
                                                     (static_cast<std::size_t>(n) * c_out + co) *
                                                     ho * wo;
                                                 for (int y = 0; y < h; ++y) {
                                                     for (int x = 0; x < w; ++x) {
                                                         acc +=
                                                             xv2[ibase +
                                                                 static_cast<std::size_t>(y) * w +
                                                                 x] *
                                                             g[gbase +
                                                               static_cast<std::size_t>(2 * y +
                                                                                         ky) *
                                                                   wo +
                                                               2 * x + kx];
                                                     }
                                                 }
                                             }
                                             gw[(static_cast<std::size_t>(ci) * c_out + co) * 4 +
                                                2 * ky + kx] += acc;
                                         }
                                     }
                                 }
                             }
                         }
                     });
    }
    return out;
}

// ---------------------------------------------------------------------------
// channel reweighting and class softmax
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> mul_channelwise(const TensorT<T>& x, const TensorT<T>& w, TapeT<T>* tape = nullptr) {
    if (x.rank() != 4) {
        throw ShapeError("mul_channelwise expects a rank-4 input, got " + x.shape_str());
    }
    if (w.rank() != 2 || w.dim(0) != x.dim(0) || w.dim(1) != x.dim(1)) {
        throw ShapeError("mul_channelwise: weights must have shape [" + std::to_string(x.dim(0)) +
                         "," + std::to_string(x.dim(1)) + "], got " + w.shape_str());
    }
    const int n_batch = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    auto out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    const auto& wv = w.data();
    auto& ov = out.data();
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const T s = wv[static_cast<std::size_t>(n) * c + ch];
            const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) ov[base + i] = xv[base + i] * s;
        }
    }
    if (tape && (x.requires_grad() || w.requires_grad())) {
        out.set_requires_grad(true);
        tape->record({x, w}, out, [x = x, w = w, out, n_batch, c, plane]() mutable {
            const auto& g = out.grad();
            for (int n = 0; n < n_batch; ++n) {
                for (int ch = 0; ch < c; ++ch) {
                    const std::size_t wi = static_cast<std::size_t>(n) * c + ch;
                    const std::size_t base = wi * plane;
                    if (x.requires_grad()) {
                        auto& gx = x.grad();
                        const T s = w.data()[wi];
                        for (std::size_t i = 0; i < plane; ++i) gx[base + i] += g[base + i] * s;
                    }
                    if (w.requires_grad()) {
                        const auto& xv2 = x.data();
                        T acc(0);
                        for (std::size_t i = 0; i < plane; ++i) acc += g[base + i] * xv2[base + i];
                        w.grad()[wi] += acc;
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> softmax_channels(const TensorT<T>& x, TapeT<T>* tape = nullptr) {
    if (x.rank() != 4) {
        throw ShapeError("softmax_channels expects a rank-4 input, got " + x.shape_str());
    }
    const int n_batch = x.dim(0), k = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int n = 0; n < n_batch; ++n) {
        const std::size_t nbase = static_cast<std::size_t>(n) * k * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            T m = xv[nbase + p];
            for (int ch = 1; ch < k; ++ch) m = std::max(m, xv[nbase + ch * plane + p]);
            T z(0);
            for (int ch = 0; ch < k; ++ch) {
                const T e = std::exp(xv[nbase + ch * plane + p] - m);
                ov[nbase + ch * plane + p] = e;
                z += e;
            }
            for (int ch = 0; ch < k; ++ch) ov[nbase + ch * plane + p] /= z;
        }
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({x}, out, [x = x, out, n_batch, k, plane]() mutable {
            const auto& g = out.grad();
            const auto& pv = out.data();
            auto& gx = x.grad();
            for (int n = 0; n < n_batch; ++n) {
                const std::size_t nbase = static_cast<std::size_t>(n) * k * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    T dot(0);
                    for (int ch = 0; ch < k; ++ch) {
                        const std::size_t i = nbase + ch * plane + p;
                        dot += pv[i] * g[i];
                    }
                    for (int ch = 0; ch < k; ++ch) {
                        const std::size_t i = nbase + ch * plane + p;
                        gx[i] += pv[i] * (g[i] - dot);
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace gseunet
