#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "tseg/gemm.hpp"
#include "tseg/tensor.hpp"

namespace tseg {

// Spatial extent of a convolution output. Throws when non-positive.
inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad,
                                    const char* who) {
    if (stride < 1) throw std::invalid_argument(std::string(who) + ": stride must be >= 1");
    if (pad < 0) throw std::invalid_argument(std::string(who) + ": padding must be >= 0");
    if (k > in + 2 * pad)
        throw std::invalid_argument(std::string(who) + ": kernel " + std::to_string(k) +
                                    " exceeds padded input extent " + std::to_string(in + 2 * pad));
    const std::int64_t out = (in + 2 * pad - k) / stride + 1;
    if (out <= 0) throw std::invalid_argument(std::string(who) + ": non-positive output extent");
    return out;
}

inline std::int64_t tconv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad,
                                     const char* who) {
    if (stride < 1) throw std::invalid_argument(std::string(who) + ": stride must be >= 1");
    const std::int64_t out = (in - 1) * stride + k - 2 * pad;
    if (out <= 0) throw std::invalid_argument(std::string(who) + ": non-positive output extent");
    return out;
}

namespace detail {

// Gathers conv patches of one [C,H,W] plane into col [C*k*k, Ho*Wo].
inline void im2col(const real_t* x, std::int64_t c_in, std::int64_t h, std::int64_t w, std::int64_t k,
                   std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo, real_t* col) {
    for (std::int64_t c = 0; c < c_in; ++c) {
        const real_t* xp = x + c * h * w;
        for (std::int64_t ky = 0; ky < k; ++ky) {
            for (std::int64_t kx = 0; kx < k; ++kx) {
                real_t* crow = col + ((c * k + ky) * k + kx) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    real_t* cr = crow + oy * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(cr, cr + wo, real_t(0));
                        continue;
                    }
                    const real_t* xrow = xp + iy * w;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        cr[ox] = (ix >= 0 && ix < w) ? xrow[ix] : real_t(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds col back into the [C,H,W] plane.
inline void col2im_add(const real_t* col, std::int64_t c_in, std::int64_t h, std::int64_t w, std::int64_t k,
                       std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo, real_t* x) {
    for (std::int64_t c = 0; c < c_in; ++c) {
        real_t* xp = x + c * h * w;
        for (std::int64_t ky = 0; ky < k; ++ky) {
            for (std::int64_t kx = 0; kx < k; ++kx) {
                const real_t* crow = col + ((c * k + ky) * k + kx) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const real_t* cr = crow + oy * wo;
                    real_t* xrow = xp + iy * w;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) xrow[ix] += cr[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ------------------------------- conv2d -----------------------------------

inline void conv2d_check(const Tensor& x, const Tensor& w, const Tensor* b) {
    require_4d(x, "conv2d input");
    require_4d(w, "conv2d weight");
    if (w.shape[1] != x.shape[1])
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(w.shape[1]) +
                                    " input channels but input has " + std::to_string(x.shape[1]));
    if (w.shape[2] != w.shape[3]) throw std::invalid_argument("conv2d: only square kernels are supported");
    if (b && b->numel() != w.shape[0])
        throw std::invalid_argument("conv2d: bias length " + std::to_string(b->numel()) +
                                    " != output channels " + std::to_string(w.shape[0]));
}

inline Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, std::int64_t stride,
                             std::int64_t pad, std::vector<real_t>& scratch) {
    conv2d_check(x, w, b);
    const std::int64_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::int64_t co = w.shape[0], k = w.shape[2];
    const std::int64_t ho = conv_out_extent(h, k, stride, pad, "conv2d");
    const std::int64_t wo = conv_out_extent(wd, k, stride, pad, "conv2d");
    Tensor y({n, co, ho, wo});
    const bool unit = (k == 1 && stride == 1 && pad == 0);
    const std::size_t col_rows = static_cast<std::size_t>(ci * k * k);
    const std::size_t col_cols = static_cast<std::size_t>(ho * wo);
    if (!unit) scratch.resize(col_rows * col_cols);
    for (std::int64_t in = 0; in < n; ++in) {
        const real_t* xp = x.data.data() + in * ci * h * wd;
        const real_t* col = xp;
        if (!unit) {
            detail::im2col(xp, ci, h, wd, k, stride, pad, ho, wo, scratch.data());
            col = scratch.data();
        }
        real_t* yp = y.data.data() + in * co * ho * wo;
        gemm(false, false, static_cast<std::size_t>(co), col_cols, col_rows, real_t(1), w.data.data(),
             col_rows, col, col_cols, real_t(0), yp, col_cols);
        if (b) {
            for (std::int64_t c = 0; c < co; ++c) {
                const real_t bv = b->data[static_cast<std::size_t>(c)];
                real_t* row = yp + c * ho * wo;
                for (std::int64_t i = 0; i < ho * wo; ++i) row[i] += bv;
            }
        }
    }
    return y;
}

// Accumulates input/weight/bias gradients. Null pointers skip a term.
inline void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, std::int64_t stride,
                            std::int64_t pad, real_t* dx, Tensor* dw, Tensor* db,
                            std::vector<real_t>& scratch, std::vector<real_t>& scratch2) {
    const std::int64_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::int64_t co = w.shape[0], k = w.shape[2];
    const std::int64_t ho = dy.shape[2], wo = dy.shape[3];
    const bool unit = (k == 1 && stride == 1 && pad == 0);
    const std::size_t col_rows = static_cast<std::size_t>(ci * k * k);
    const std::size_t col_cols = static_cast<std::size_t>(ho * wo);
    if (!unit && dw) scratch.resize(col_rows * col_cols);
    if (dx) scratch2.resize(col_rows * col_cols);
    for (std::int64_t in = 0; in < n; ++in) {
        const real_t* xp = x.data.data() + in * ci * h * wd;
        const real_t* dyp = dy.data.data() + in * co * ho * wo;
        if (db) {
            for (std::int64_t c = 0; c < co; ++c) {
                real_t s = 0;
                const real_t* row = dyp + c * ho * wo;
                for (std::int64_t i = 0; i < ho * wo; ++i) s += row[i];
                db->grad[static_cast<std::size_t>(c)] += s;
            }
        }
        if (dw) {
            const real_t* col = xp;
            if (!unit) {
                detail::im2col(xp, ci, h, wd, k, stride, pad, ho, wo, scratch.data());
                col = scratch.data();
            }
            // dW[co x col_rows] += dy[co x cols] * col^T
            gemm(false, true, static_cast<std::size_t>(co), col_rows, col_cols, real_t(1), dyp, col_cols,
                 col, col_cols, real_t(1), dw->grad.data(), col_rows);
        }
        if (dx) {
            real_t* dxp = dx + in * ci * h * wd;
            if (unit) {
                gemm(true, false, col_rows, col_cols, static_cast<std::size_t>(co), real_t(1),
                     w.data.data(), col_rows, dyp, col_cols, real_t(1), dxp, col_cols);
            } else {
                gemm(true, false, col_rows, col_cols, static_cast<std::size_t>(co), real_t(1),
                     w.data.data(), col_rows, dyp, col_cols, real_t(0), scratch2.data(), col_cols);
                detail::col2im_add(scratch2.data(), ci, h, wd, k, stride, pad, ho, wo, dxp);
            }
        }
    }
}

// -------------------------- transposed conv2d ------------------------------
// Weight layout [A,B,k,k] is the weight of the adjoint convolution mapping
// B-channel images to A-channel images; forward here is that convolution's
// backward-by-input.

inline Tensor transposed_conv2d_forward(const Tensor& x, const Tensor& w, std::int64_t stride,
                                        std::int64_t pad, std::vector<real_t>& scratch) {
    require_4d(x, "transposed_conv2d input");
    require_4d(w, "transposed_conv2d weight");
    if (w.shape[0] != x.shape[1])
        throw std::invalid_argument("transposed_conv2d: weight expects " + std::to_string(w.shape[0]) +
                                    " input channels but input has " + std::to_string(x.shape[1]));
    const std::int64_t n = x.shape[0], a = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::int64_t bch = w.shape[1], k = w.shape[2];
    const std::int64_t ho = tconv_out_extent(h, k, stride, pad, "transposed_conv2d");
    const std::int64_t wo = tconv_out_extent(wd, k, stride, pad, "transposed_conv2d");
    Tensor y({n, bch, ho, wo});
    const std::size_t col_rows = static_cast<std::size_t>(bch * k * k);
    const std::size_t col_cols = static_cast<std::size_t>(h * wd);
    scratch.resize(col_rows * col_cols);
    for (std::int64_t in = 0; in < n; ++in) {
        const real_t* xp = x.data.data() + in * a * h * wd;
        // cols[B*k*k x H*W] = W^T[B*k*k x A] * x[A x H*W]
        gemm(true, false, col_rows, col_cols, static_cast<std::size_t>(a), real_t(1), w.data.data(),
             col_rows, xp, col_cols, real_t(0), scratch.data(), col_cols);
        real_t* yp = y.data.data() + in * bch * ho * wo;
        detail::col2im_add(scratch.data(), bch, ho, wo, k, stride, pad, h, wd, yp);
    }
    return y;
}

inline void transposed_conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                                       std::int64_t stride, std::int64_t pad, real_t* dx, Tensor* dw,
                                       std::vector<real_t>& scratch) {
    const std::int64_t n = x.shape[0], a = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::int64_t bch = w.shape[1], k = w.shape[2];
    const std::int64_t ho = dy.shape[2], wo = dy.shape[3];
    const std::size_t col_rows = static_cast<std::size_t>(bch * k * k);
    const std::size_t col_cols = static_cast<std::size_t>(h * wd);
    scratch.resize(col_rows * col_cols);
    for (std::int64_t in = 0; in < n; ++in) {
        const real_t* dyp = dy.data.data() + in * bch * ho * wo;
        detail::im2col(dyp, bch, ho, wo, k, stride, pad, h, wd, scratch.data());
        if (dx) {
            real_t* dxp = dx + in * a * h * wd;
            gemm(false, false, static_cast<std::size_t>(a), col_cols, col_rows, real_t(1), w.data.data(),
                 col_rows, scratch.data(), col_cols, real_t(1), dxp, col_cols);
        }
        if (dw) {
            const real_t* xp = x.data.data() + in * a * h * wd;
            gemm(false, true, static_cast<std::size_t>(a), col_rows, col_cols, real_t(1), xp, col_cols,
                 scratch.data(), col_cols, real_t(1), dw->grad.data(), col_rows);
        }
    }
}

// ------------------------------ maxpool2d ----------------------------------

inline Tensor maxpool2d_forward(const Tensor& x, std::int64_t window, std::int64_t stride,
                                std::vector<std::int32_t>& argmax) {
    require_4d(x, "maxpool2d input");
    if (window < 1 || stride < 1) throw std::invalid_argument("maxpool2d: window and stride must be >= 1");
    const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    if (window > h || window > w)
        throw std::invalid_argument("maxpool2d: window " + std::to_string(window) +
                                    " larger than input extent " + std::to_string(std::min(h, w)));
    const std::int64_t ho = (h - window) / stride + 1;
    const std::int64_t wo = (w - window) / stride + 1;
    Tensor y({n, c, ho, wo});
    argmax.assign(static_cast<std::size_t>(y.numel()), 0);
    std::int64_t o = 0;
    for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const real_t* xp = x.data.data() + (in * c + ch) * h * w;
            for (std::int64_t oy = 0; oy < ho; ++oy) {
                for (std::int64_t ox = 0; ox < wo; ++ox, ++o) {
                    const std::int64_t y0 = oy * stride, x0 = ox * stride;
                    real_t best = xp[y0 * w + x0];
                    std::int64_t besti = y0 * w + x0;
                    for (std::int64_t ky = 0; ky < window; ++ky) {
                        const real_t* row = xp + (y0 + ky) * w;
                        for (std::int64_t kx = 0; kx < window; ++kx) {
                            // strict > keeps the first occurrence on ties
                            if (row[x0 + kx] > best) {
                                best = row[x0 + kx];
                                besti = (y0 + ky) * w + x0 + kx;
                            }
                        }
                    }
                    y.data[static_cast<std::size_t>(o)] = best;
                    argmax[static_cast<std::size_t>(o)] = static_cast<std::int32_t>(besti);
                }
            }
        }
    }
    return y;
}

inline void maxpool2d_backward(const Tensor& x, const Tensor& dy, const std::vector<std::int32_t>& argmax,
                               real_t* dx) {
    const std::int64_t n = dy.shape[0], c = dy.shape[1], plane = x.shape[2] * x.shape[3];
    const std::int64_t per = dy.shape[2] * dy.shape[3];
    std::int64_t o = 0;
    for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            real_t* dxp = dx + (in * c + ch) * plane;
            for (std::int64_t i = 0; i < per; ++i, ++o)
                dxp[argmax[static_cast<std::size_t>(o)]] += dy.data[static_cast<std::size_t>(o)];
        }
    }
}

// -------------------------------- relu -------------------------------------

inline Tensor relu_forward(const Tensor& x) {
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > 0 ? x.data[i] : real_t(0);
    return y;
}

inline void relu_backward(const Tensor& x, const Tensor& dy, real_t* dx) {
    for (std::size_t i = 0; i < x.data.size(); ++i)
        if (x.data[i] > 0) dx[i] += dy.data[i];
}

// ----------------------------- crop_align ----------------------------------

inline Tensor crop_align_forward(const Tensor& big, std::int64_t target_h, std::int64_t target_w,
                                 std::int64_t offset) {
    require_4d(big, "crop_align input");
    if (offset < 0) throw std::invalid_argument("crop_align: offset must be >= 0");
    if (big.shape[2] < target_h + offset || big.shape[3] < target_w + offset)
        throw std::invalid_argument("crop_align: target " + std::to_string(target_h) + "x" +
                                    std::to_string(target_w) + " at offset " + std::to_string(offset) +
                                    " exceeds source " + std::to_string(big.shape[2]) + "x" +
                                    std::to_string(big.shape[3]));
    const std::int64_t n = big.shape[0], c = big.shape[1], h = big.shape[2], w = big.shape[3];
    Tensor y({n, c, target_h, target_w});
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t yy = 0; yy < target_h; ++yy) {
                const real_t* src = big.data.data() + ((in * c + ch) * h + yy + offset) * w + offset;
                real_t* dst = y.data.data() + ((in * c + ch) * target_h + yy) * target_w;
                std::copy(src, src + target_w, dst);
            }
    return y;
}

inline void crop_align_backward(const Tensor& big, const Tensor& dy, std::int64_t offset, real_t* dbig) {
    const std::int64_t n = big.shape[0], c = big.shape[1], h = big.shape[2], w = big.shape[3];
    const std::int64_t th = dy.shape[2], tw = dy.shape[3];
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t yy = 0; yy < th; ++yy) {
                real_t* dst = dbig + ((in * c + ch) * h + yy + offset) * w + offset;
                const real_t* src = dy.data.data() + ((in * c + ch) * th + yy) * tw;
                for (std::int64_t xx = 0; xx < tw; ++xx) dst[xx] += src[xx];
            }
}

// --------------------------------- fuse ------------------------------------

enum class FuseMode { eltwise_max, concat };

inline Tensor fuse_eltwise_max_forward(const std::vector<const Tensor*>& xs,
                                       std::vector<std::int32_t>& argmax) {
    if (xs.empty()) throw std::invalid_argument("fuse: needs at least one input");
    for (const Tensor* t : xs)
        if (t->shape != xs[0]->shape)
            throw std::invalid_argument("fuse eltwise_max: shape mismatch " + shape_str(t->shape) + " vs " +
                                        shape_str(xs[0]->shape));
    Tensor y(xs[0]->shape);
    argmax.assign(y.data.size(), 0);
    y.data = xs[0]->data;
    for (std::size_t j = 1; j < xs.size(); ++j) {
        const auto& d = xs[j]->data;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (d[i] > y.data[i]) {
                y.data[i] = d[i];
                argmax[i] = static_cast<std::int32_t>(j);
            }
    }
    return y;
}

inline Tensor fuse_concat_forward(const std::vector<const Tensor*>& xs) {
    if (xs.empty()) throw std::invalid_argument("fuse: needs at least one input");
    const auto& s0 = xs[0]->shape;
    std::int64_t ctot = 0;
    for (const Tensor* t : xs) {
        if (t->ndim() != 4 || t->shape[0] != s0[0] || t->shape[2] != s0[2] || t->shape[3] != s0[3])
            throw std::invalid_argument("fuse concat: non-channel extents differ: " + shape_str(t->shape) +
                                        " vs " + shape_str(s0));
        ctot += t->shape[1];
    }
    Tensor y({s0[0], ctot, s0[2], s0[3]});
    const std::int64_t plane = s0[2] * s0[3];
    for (std::int64_t n = 0; n < s0[0]; ++n) {
        std::int64_t coff = 0;
        for (const Tensor* t : xs) {
            const std::int64_t c = t->shape[1];
            std::copy(t->data.begin() + n * c * plane, t->data.begin() + (n + 1) * c * plane,
                      y.data.begin() + (n * ctot + coff) * plane);
            coff += c;
        }
    }
    return y;
}

// --------------------------- softmax / loss --------------------------------

inline Tensor softmax_probabilities(const Tensor& scores) {
    require_4d(scores, "softmax");
    const std::int64_t n = scores.shape[0], k = scores.shape[1], plane = scores.shape[2] * scores.shape[3];
    Tensor p(scores.shape);
    for (std::int64_t in = 0; in < n; ++in) {
        const real_t* s = scores.data.data() + in * k * plane;
        real_t* o = p.data.data() + in * k * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            real_t mx = s[i];
            for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, s[c * plane + i]);
            real_t z = 0;
            for (std::int64_t c = 0; c < k; ++c) {
                const real_t e = std::exp(s[c * plane + i] - mx);
                o[c * plane + i] = e;
                z += e;
            }
            for (std::int64_t c = 0; c < k; ++c) o[c * plane + i] /= z;
        }
    }
    return p;
}

// Mean per-pixel multinomial logistic loss over all N*H*W scored pixels.
// When dscores is non-null the softmax-minus-onehot gradient (already scaled
// by 1/N') is accumulated into it.
inline real_t softmax_multinomial_loss(const Tensor& scores, const std::vector<std::int32_t>& labels,
                                       real_t* dscores) {
    require_4d(scores, "softmax_multinomial_loss");
    const std::int64_t n = scores.shape[0], k = scores.shape[1], plane = scores.shape[2] * scores.shape[3];
    if (k < 2) throw std::invalid_argument("softmax_multinomial_loss: needs at least 2 classes");
    if (static_cast<std::int64_t>(labels.size()) != n * plane)
        throw std::invalid_argument("softmax_multinomial_loss: label count " + std::to_string(labels.size()) +
                                    " != pixel count " + std::to_string(n * plane));
    const real_t inv = real_t(1) / static_cast<real_t>(n * plane);
    real_t loss = 0;
    for (std::int64_t in = 0; in < n; ++in) {
        const real_t* s = scores.data.data() + in * k * plane;
        real_t* g = dscores ? dscores + in * k * plane : nullptr;
        const std::int32_t* lab = labels.data() + in * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            const std::int32_t y = lab[i];
            if (y < 0 || y >= k)
                throw std::invalid_argument("softmax_multinomial_loss: label " + std::to_string(y) +
                                            " outside [0," + std::to_string(k) + ")");
            real_t mx = s[i];
            for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, s[c * plane + i]);
            real_t z = 0;
            for (std::int64_t c = 0; c < k; ++c) z += std::exp(s[c * plane + i] - mx);
            loss += (std::log(z) - (s[y * plane + i] - mx)) * inv;
            if (g) {
                for (std::int64_t c = 0; c < k; ++c) {
                    const real_t p = std::exp(s[c * plane + i] - mx) / z;
                    g[c * plane + i] += (p - (c == y ? real_t(1) : real_t(0))) * inv;
                }
            }
        }
    }
    return loss;
}

}  // namespace tseg
