#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "dntsc/core/autodiff.hpp"
#include "dntsc/core/bvn.hpp"
#include "dntsc/core/normal.hpp"

namespace dntsc {
namespace ad {

// Feature grids are carried as (H*W, C) row-major token matrices; spatial
// dims travel alongside as plain integers.

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
    return (in + 2 * p - k) / s + 1;
}

// x: (H*W, Cin), w: (kh*kw*Cin, Cout) -> (Ho*Wo, Cout)
inline Var conv2d(const Var& x, std::int64_t H, std::int64_t W, const Var& w, std::int64_t kh,
                  std::int64_t kw, std::int64_t stride, std::int64_t pad) {
    const Tensor& X = x->value;
    const Tensor& Wt = w->value;
    const std::int64_t cin = X.dim(1);
    const std::int64_t cout = Wt.dim(1);
    if (X.dim(0) != H * W) throw ShapeError("conv2d token/grid mismatch");
    if (Wt.dim(0) != kh * kw * cin) throw ShapeError("conv2d weight shape mismatch");
    const std::int64_t ho = conv_out_dim(H, kh, stride, pad);
    const std::int64_t wo = conv_out_dim(W, kw, stride, pad);
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d output collapsed");
    Tensor out(Shape{ho * wo, cout});
    {
        const double* px = X.data();
        const double* pw = Wt.data();
        double* po = out.data();
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                double* orow = po + (oy * wo + ox) * cout;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    const std::int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const std::int64_t ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        const double* xrow = px + (iy * W + ix) * cin;
                        const double* wrow = pw + (ky * kw + kx) * cin * cout;
                        for (std::int64_t ci = 0; ci < cin; ++ci) {
                            const double xv = xrow[ci];
                            if (xv == 0.0) continue;
                            const double* wr = wrow + ci * cout;
                            for (std::int64_t co = 0; co < cout; ++co) orow[co] += xv * wr[co];
                        }
                    }
                }
            }
    }
    Node* px_ = x.get();
    Node* pw_ = w.get();
    return make_node(std::move(out), {x, w},
                     [px_, pw_, H, W, kh, kw, stride, pad, cin, cout, ho, wo](Node& node) {
        const double* g = node.grad.data();
        if (px_->requires_grad) px_->ensure_grad();
        if (pw_->requires_grad) pw_->ensure_grad();
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                const double* grow = g + (oy * wo + ox) * cout;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    const std::int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const std::int64_t ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        const std::int64_t xoff = (iy * W + ix) * cin;
                        const std::int64_t woff = (ky * kw + kx) * cin * cout;
                        for (std::int64_t ci = 0; ci < cin; ++ci) {
                            double acc = 0.0;
                            const double* wr = pw_->value.data() + woff + ci * cout;
                            for (std::int64_t co = 0; co < cout; ++co) acc += grow[co] * wr[co];
                            if (px_->requires_grad) px_->grad[xoff + ci] += acc;
                            if (pw_->requires_grad) {
                                const double xv = px_->value[xoff + ci];
                                if (xv != 0.0) {
                                    double* dwr = pw_->grad.data() + woff + ci * cout;
                                    for (std::int64_t co = 0; co < cout; ++co)
                                        dwr[co] += xv * grow[co];
                                }
                            }
                        }
                    }
                }
            }
    });
}

// Transposed convolution with an explicit output size (needed to invert the
// ceil-division of strided convs exactly). w: (kh*kw*Cin, Cout).
inline Var conv_transpose2d(const Var& x, std::int64_t H, std::int64_t W, const Var& w,
                            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                            std::int64_t out_h, std::int64_t out_w) {
    const Tensor& X = x->value;
    const Tensor& Wt = w->value;
    const std::int64_t cin = X.dim(1);
    const std::int64_t cout = Wt.dim(1);
    if (X.dim(0) != H * W) throw ShapeError("conv_transpose2d token/grid mismatch");
    if (Wt.dim(0) != kh * kw * cin) throw ShapeError("conv_transpose2d weight shape mismatch");
    Tensor out(Shape{out_h * out_w, cout});
    {
        const double* px = X.data();
        const double* pw = Wt.data();
        double* po = out.data();
        for (std::int64_t iy = 0; iy < H; ++iy)
            for (std::int64_t ix = 0; ix < W; ++ix) {
                const double* xrow = px + (iy * W + ix) * cin;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    const std::int64_t oy = iy * stride + ky - pad;
                    if (oy < 0 || oy >= out_h) continue;
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const std::int64_t ox = ix * stride + kx - pad;
                        if (ox < 0 || ox >= out_w) continue;
                        double* orow = po + (oy * out_w + ox) * cout;
                        const double* wrow = pw + (ky * kw + kx) * cin * cout;
                        for (std::int64_t ci = 0; ci < cin; ++ci) {
                            const double xv = xrow[ci];
                            if (xv == 0.0) continue;
                            const double* wr = wrow + ci * cout;
                            for (std::int64_t co = 0; co < cout; ++co) orow[co] += xv * wr[co];
                        }
                    }
                }
            }
    }
    Node* px_ = x.get();
    Node* pw_ = w.get();
    return make_node(std::move(out), {x, w},
                     [px_, pw_, H, W, kh, kw, stride, pad, out_h, out_w, cin, cout](Node& node) {
        const double* g = node.grad.data();
        if (px_->requires_grad) px_->ensure_grad();
        if (pw_->requires_grad) pw_->ensure_grad();
        for (std::int64_t iy = 0; iy < H; ++iy)
            for (std::int64_t ix = 0; ix < W; ++ix) {
                const std::int64_t xoff = (iy * W + ix) * cin;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    const std::int64_t oy = iy * stride + ky - pad;
                    if (oy < 0 || oy >= out_h) continue;
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const std::int64_t ox = ix * stride + kx - pad;
                        if (ox < 0 || ox >= out_w) continue;
                        const double* grow = g + (oy * out_w + ox) * cout;
                        const std::int64_t woff = (ky * kw + kx) * cin * cout;
                        for (std::int64_t ci = 0; ci < cin; ++ci) {
                            double acc = 0.0;
                            const double* wr = pw_->value.data() + woff + ci * cout;
                            for (std::int64_t co = 0; co < cout; ++co) acc += grow[co] * wr[co];
                            if (px_->requires_grad) px_->grad[xoff + ci] += acc;
                            if (pw_->requires_grad) {
                                const double xv = px_->value[xoff + ci];
                                if (xv != 0.0) {
                                    double* dwr = pw_->grad.data() + woff + ci * cout;
                                    for (std::int64_t co = 0; co < cout; ++co)
                                        dwr[co] += xv * grow[co];
                                }
                            }
                        }
                    }
                }
            }
    });
}

// Differentiable bilinear sampling of a (H*W, C) grid at real coordinates
// (P,2) given as (x=column, y=row). Out-of-grid samples contribute zero.
inline Var bilinear_sample(const Var& grid, std::int64_t H, std::int64_t W, const Var& coords) {
    const Tensor& G = grid->value;
    const Tensor& Cd = coords->value;
    if (G.dim(0) != H * W) throw ShapeError("bilinear_sample grid/token mismatch");
    if (Cd.ndim() != 2 || Cd.dim(1) != 2) throw ShapeError("bilinear_sample coords must be (P,2)");
    const std::int64_t C = G.dim(1);
    const std::int64_t P = Cd.dim(0);
    Tensor out(Shape{P, C});
    for (std::int64_t p = 0; p < P; ++p) {
        const double xv = Cd[p * 2];
        const double yv = Cd[p * 2 + 1];
        const double xf = std::floor(xv);
        const double yf = std::floor(yv);
        const std::int64_t x0 = static_cast<std::int64_t>(xf);
        const std::int64_t y0 = static_cast<std::int64_t>(yf);
        const double wx = xv - xf;
        const double wy = yv - yf;
        const double wts[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
        const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int n = 0; n < 4; ++n) {
            if (xs[n] < 0 || xs[n] >= W || ys[n] < 0 || ys[n] >= H || wts[n] == 0.0) continue;
            const double* grow = G.data() + (ys[n] * W + xs[n]) * C;
            double* orow = out.data() + p * C;
            for (std::int64_t c = 0; c < C; ++c) orow[c] += wts[n] * grow[c];
        }
    }
    Node* pg = grid.get();
    Node* pc = coords.get();
    return make_node(std::move(out), {grid, coords}, [pg, pc, H, W, C, P](Node& node) {
        if (pg->requires_grad) pg->ensure_grad();
        if (pc->requires_grad) pc->ensure_grad();
        for (std::int64_t p = 0; p < P; ++p) {
            const double xv = pc->value[p * 2];
            const double yv = pc->value[p * 2 + 1];
            const double xf = std::floor(xv);
            const double yf = std::floor(yv);
            const std::int64_t x0 = static_cast<std::int64_t>(xf);
            const std::int64_t y0 = static_cast<std::int64_t>(yf);
            const double wx = xv - xf;
            const double wy = yv - yf;
            const double wts[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
            // d(weight)/dx, d(weight)/dy per corner
            const double dwx[4] = {-(1 - wy), (1 - wy), -wy, wy};
            const double dwy[4] = {-(1 - wx), -wx, (1 - wx), wx};
            const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
            const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
            double gx = 0.0, gy = 0.0;
            for (int n = 0; n < 4; ++n) {
                if (xs[n] < 0 || xs[n] >= W || ys[n] < 0 || ys[n] >= H) continue;
                const std::int64_t off = (ys[n] * W + xs[n]) * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    const double go = node.grad[p * C + c];
                    if (pg->requires_grad) pg->grad[off + c] += wts[n] * go;
                    const double gv = pg->value[off + c];
                    gx += go * dwx[n] * gv;
                    gy += go * dwy[n] * gv;
                }
            }
            if (pc->requires_grad) {
                pc->grad[p * 2] += gx;
                pc->grad[p * 2 + 1] += gy;
            }
        }
    });
}

inline Var normal_cdf_op(const Var& a) {
    return unary_op(a, [](double x) { return norm_cdf(x); },
                    [](double x, double) { return norm_pdf(x); });
}

// Elementwise standard bivariate normal CDF node with analytic partials.
inline Var bvn_cdf_op(const Var& h, const Var& k, const Var& rho) {
    const Tensor& Hs = h->value;
    if (!Hs.same_shape(k->value) || !Hs.same_shape(rho->value))
        throw ShapeError("bvn_cdf_op expects equal shapes");
    Tensor out(Hs.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = bvn_cdf(Hs[i], k->value[i], rho->value[i]);
    Node* ph = h.get();
    Node* pk = k.get();
    Node* pr = rho.get();
    return make_node(std::move(out), {h, k, rho}, [ph, pk, pr](Node& node) {
        for (std::int64_t i = 0; i < node.value.numel(); ++i) {
            double dh, dk, dr;
            bvn_cdf_derivs(ph->value[i], pk->value[i], pr->value[i], &dh, &dk, &dr);
            const double g = node.grad[i];
            if (ph->requires_grad) {
                ph->ensure_grad();
                ph->grad[i] += g * dh;
            }
            if (pk->requires_grad) {
                pk->ensure_grad();
                pk->grad[i] += g * dk;
            }
            if (pr->requires_grad) {
                pr->ensure_grad();
                pr->grad[i] += g * dr;
            }
        }
    });
}

}  // namespace ad
}  // namespace dntsc
