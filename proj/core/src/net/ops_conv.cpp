#include <algorithm>
#include <cmath>
#include <memory>

#include "morphreg/net/ops.hpp"

namespace morphreg::net {

#if defined(MORPHREG_AD_FP64)
inline namespace fp64 {
#else
inline namespace fp32 {
#endif

namespace {

struct ConvDims {
    int Cin, X, Y, Z;
    int Cout, kx, ky, kz;
    int Xo, Yo, Zo;
};

ConvDims conv_dims(const Var& x, const Var& w, std::array<int, 3> stride,
                   std::array<int, 3> pad) {
    if (x->shape.size() != 4 || w->shape.size() != 5 || x->shape[0] != w->shape[1])
        throw std::invalid_argument("net: conv3d shape mismatch");
    for (int a = 0; a < 3; ++a)
        if (stride[a] < 1 || pad[a] < 0)
            throw std::invalid_argument("net: conv3d stride must be >= 1, pad >= 0");
    ConvDims d;
    d.Cin = x->shape[0];
    d.X = x->shape[1];
    d.Y = x->shape[2];
    d.Z = x->shape[3];
    d.Cout = w->shape[0];
    d.kx = w->shape[2];
    d.ky = w->shape[3];
    d.kz = w->shape[4];
    d.Xo = (d.X + 2 * pad[0] - d.kx) / stride[0] + 1;
    d.Yo = (d.Y + 2 * pad[1] - d.ky) / stride[1] + 1;
    d.Zo = (d.Z + 2 * pad[2] - d.kz) / stride[2] + 1;
    if (d.Xo < 1 || d.Yo < 1 || d.Zo < 1)
        throw std::invalid_argument("net: conv3d kernel larger than padded input");
    return d;
}

// Output-index range [lo, hi) on one axis for which in = o*stride + tap - pad
// stays inside [0, n_in).
inline void tap_range(int n_in, int n_out, int stride, int pad, int tap, int& lo, int& hi) {
    int mn = pad - tap;                                    // o*stride >= mn
    lo = mn <= 0 ? 0 : (mn + stride - 1) / stride;
    int mx = n_in - 1 + pad - tap;                         // o*stride <= mx
    hi = mx < 0 ? 0 : std::min(n_out, mx / stride + 1);
    if (lo > hi) lo = hi;
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, std::array<int, 3> stride,
           std::array<int, 3> pad) {
    ConvDims d = conv_dims(x, w, stride, pad);
    if (b && (b->shape.size() != 1 || b->shape[0] != d.Cout))
        throw std::invalid_argument("net: conv3d bias shape mismatch");

    Var out = make_node({d.Cout, d.Xo, d.Yo, d.Zo});
    const std::size_t in_plane = static_cast<std::size_t>(d.X) * d.Y * d.Z;
    const std::size_t out_plane = static_cast<std::size_t>(d.Xo) * d.Yo * d.Zo;

    for (int co = 0; co < d.Cout; ++co) {
        real* op = out->val.data() + co * out_plane;
        if (b) {
            real bias = b->val[co];
            for (std::size_t i = 0; i < out_plane; ++i) op[i] = bias;
        }
        for (int ci = 0; ci < d.Cin; ++ci) {
            const real* ip = x->val.data() + ci * in_plane;
            const real* wk = w->val.data() +
                             (static_cast<std::size_t>(co) * d.Cin + ci) * d.kx * d.ky * d.kz;
            for (int dx = 0; dx < d.kx; ++dx)
                for (int dy = 0; dy < d.ky; ++dy)
                    for (int dz = 0; dz < d.kz; ++dz) {
                        real wv = wk[(dx * d.ky + dy) * d.kz + dz];
                        int xlo, xhi, ylo, yhi, zlo, zhi;
                        tap_range(d.X, d.Xo, stride[0], pad[0], dx, xlo, xhi);
                        tap_range(d.Y, d.Yo, stride[1], pad[1], dy, ylo, yhi);
                        tap_range(d.Z, d.Zo, stride[2], pad[2], dz, zlo, zhi);
                        for (int zo = zlo; zo < zhi; ++zo) {
                            int zi = zo * stride[2] + dz - pad[2];
                            for (int yo = ylo; yo < yhi; ++yo) {
                                int yi = yo * stride[1] + dy - pad[1];
                                const real* irow =
                                    ip + static_cast<std::size_t>(d.X) * (yi + d.Y * zi);
                                real* orow =
                                    op + static_cast<std::size_t>(d.Xo) * (yo + d.Yo * zo);
                                if (stride[0] == 1) {
                                    int shift = dx - pad[0];
                                    for (int xo = xlo; xo < xhi; ++xo)
                                        orow[xo] += wv * irow[xo + shift];
                                } else {
                                    for (int xo = xlo; xo < xhi; ++xo)
                                        orow[xo] += wv * irow[xo * stride[0] + dx - pad[0]];
                                }
                            }
                        }
                    }
        }
    }

    out->parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    out->backprop = [x, w, b, d, stride, pad, in_plane, out_plane](Node& self) {
        if (b && tracked(*b))
            for (int co = 0; co < d.Cout; ++co) {
                const real* gp = self.grad.data() + co * out_plane;
                double acc = 0;
                for (std::size_t i = 0; i < out_plane; ++i) acc += gp[i];
                b->grad[co] += static_cast<real>(acc);
            }
        bool need_x = tracked(*x), need_w = tracked(*w);
        if (!need_x && !need_w) return;
        for (int co = 0; co < d.Cout; ++co) {
            const real* gp = self.grad.data() + co * out_plane;
            for (int ci = 0; ci < d.Cin; ++ci) {
                const real* ip = x->val.data() + ci * in_plane;
                real* gip = need_x ? x->grad.data() + ci * in_plane : nullptr;
                const real* wk = w->val.data() +
                                 (static_cast<std::size_t>(co) * d.Cin + ci) * d.kx * d.ky * d.kz;
                real* gwk = need_w ? w->grad.data() + (static_cast<std::size_t>(co) * d.Cin + ci) *
                                                          d.kx * d.ky * d.kz
                                   : nullptr;
                for (int dx = 0; dx < d.kx; ++dx)
                    for (int dy = 0; dy < d.ky; ++dy)
                        for (int dz = 0; dz < d.kz; ++dz) {
                            real wv = wk[(dx * d.ky + dy) * d.kz + dz];
                            double wacc = 0;
                            int xlo, xhi, ylo, yhi, zlo, zhi;
                            tap_range(d.X, d.Xo, stride[0], pad[0], dx, xlo, xhi);
                            tap_range(d.Y, d.Yo, stride[1], pad[1], dy, ylo, yhi);
                            tap_range(d.Z, d.Zo, stride[2], pad[2], dz, zlo, zhi);
                            for (int zo = zlo; zo < zhi; ++zo) {
                                int zi = zo * stride[2] + dz - pad[2];
                                for (int yo = ylo; yo < yhi; ++yo) {
                                    int yi = yo * stride[1] + dy - pad[1];
                                    const real* irow =
                                        ip + static_cast<std::size_t>(d.X) * (yi + d.Y * zi);
                                    real* girow =
                                        gip ? gip + static_cast<std::size_t>(d.X) * (yi + d.Y * zi)
                                            : nullptr;
                                    const real* grow =
                                        gp + static_cast<std::size_t>(d.Xo) * (yo + d.Yo * zo);
                                    for (int xo = xlo; xo < xhi; ++xo) {
                                        int xi = xo * stride[0] + dx - pad[0];
                                        real g = grow[xo];
                                        if (girow) girow[xi] += wv * g;
                                        if (gwk) wacc += static_cast<double>(g) * irow[xi];
                                    }
                                }
                            }
                            if (gwk) gwk[(dx * d.ky + dy) * d.kz + dz] += static_cast<real>(wacc);
                        }
            }
        }
    };
    return out;
}

Var batch_norm3d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                 bool training, double momentum, double eps) {
    if (x->shape.size() != 4) throw std::invalid_argument("net: batch_norm3d needs (C,X,Y,Z)");
    int C = x->shape[0];
    std::size_t plane = x->size() / C;
    if (gamma->shape != std::vector<int>{C} || beta->shape != std::vector<int>{C})
        throw std::invalid_argument("net: batch_norm3d affine shape mismatch");
    if (state.running_mean.size() != static_cast<std::size_t>(C) ||
        state.running_var.size() != static_cast<std::size_t>(C))
        throw std::invalid_argument("net: batch_norm3d state shape mismatch");

    Var out = make_node(x->shape);
    // per-channel (mean, inv_std) actually used for normalization
    auto stats = std::make_shared<std::vector<double>>(2 * C);
    for (int c = 0; c < C; ++c) {
        const real* in = x->val.data() + c * plane;
        double mu, var;
        if (training) {
            mu = 0;
            for (std::size_t i = 0; i < plane; ++i) mu += in[i];
            mu /= static_cast<double>(plane);
            var = 0;
            for (std::size_t i = 0; i < plane; ++i) var += (in[i] - mu) * (in[i] - mu);
            var /= static_cast<double>(plane);
            state.running_mean[c] =
                static_cast<real>((1.0 - momentum) * state.running_mean[c] + momentum * mu);
            state.running_var[c] =
                static_cast<real>((1.0 - momentum) * state.running_var[c] + momentum * var);
        } else {
            mu = state.running_mean[c];
            var = state.running_var[c];
        }
        double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[2 * c] = mu;
        (*stats)[2 * c + 1] = inv;
        real g = gamma->val[c], bt = beta->val[c];
        real* o = out->val.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i)
            o[i] = static_cast<real>((in[i] - mu) * inv) * g + bt;
    }

    out->parents = {x, gamma, beta};
    out->backprop = [x, gamma, beta, stats, training, C, plane](Node& self) {
        for (int c = 0; c < C; ++c) {
            const real* in = x->val.data() + c * plane;
            const real* g = self.grad.data() + c * plane;
            double mu = (*stats)[2 * c], inv = (*stats)[2 * c + 1];
            double gsum = 0, gxhat = 0;
            for (std::size_t i = 0; i < plane; ++i) {
                gsum += g[i];
                gxhat += static_cast<double>(g[i]) * (in[i] - mu) * inv;
            }
            if (tracked(*gamma)) gamma->grad[c] += static_cast<real>(gxhat);
            if (tracked(*beta)) beta->grad[c] += static_cast<real>(gsum);
            if (!tracked(*x)) continue;
            real* gx = x->grad.data() + c * plane;
            real gam = gamma->val[c];
            if (training) {
                double n = static_cast<double>(plane);
                for (std::size_t i = 0; i < plane; ++i) {
                    double xhat = (in[i] - mu) * inv;
                    gx[i] += static_cast<real>(gam * inv *
                                               (g[i] - gsum / n - xhat * gxhat / n));
                }
            } else {
                for (std::size_t i = 0; i < plane; ++i)
                    gx[i] += static_cast<real>(gam * inv * g[i]);
            }
        }
    };
    return out;
}

Var trilinear_upsample(const Var& x, std::array<int, 3> factor) {
    if (x->shape.size() != 4) throw std::invalid_argument("net: upsample needs (C,X,Y,Z)");
    for (int a = 0; a < 3; ++a)
        if (factor[a] < 1) throw std::invalid_argument("net: upsample factor must be >= 1");
    int C = x->shape[0];
    int in_dims[3] = {x->shape[1], x->shape[2], x->shape[3]};
    int out_dims[3] = {in_dims[0] * factor[0], in_dims[1] * factor[1], in_dims[2] * factor[2]};

    // Per-axis source cell: in = (out + 0.5)/factor - 0.5, clamped to the grid.
    struct Axis {
        std::vector<int> i0, i1;
        std::vector<real> w1;
    };
    auto axes = std::make_shared<std::array<Axis, 3>>();
    for (int a = 0; a < 3; ++a) {
        Axis& ax = (*axes)[a];
        ax.i0.resize(out_dims[a]);
        ax.i1.resize(out_dims[a]);
        ax.w1.resize(out_dims[a]);
        for (int o = 0; o < out_dims[a]; ++o) {
            double p = (o + 0.5) / factor[a] - 0.5;
            p = std::clamp(p, 0.0, static_cast<double>(in_dims[a] - 1));
            int i0 = std::min(static_cast<int>(std::floor(p)), in_dims[a] - 2);
            if (in_dims[a] == 1) i0 = 0;
            ax.i0[o] = i0;
            ax.i1[o] = std::min(i0 + 1, in_dims[a] - 1);
            ax.w1[o] = static_cast<real>(p - i0);
        }
    }

    Var out = make_node({C, out_dims[0], out_dims[1], out_dims[2]});
    std::size_t in_plane = static_cast<std::size_t>(in_dims[0]) * in_dims[1] * in_dims[2];
    std::size_t out_plane = static_cast<std::size_t>(out_dims[0]) * out_dims[1] * out_dims[2];
    auto in_at = [&](const real* p, int ix, int iy, int iz) {
        return p[ix + static_cast<std::size_t>(in_dims[0]) * (iy + static_cast<std::size_t>(in_dims[1]) * iz)];
    };
    for (int c = 0; c < C; ++c) {
        const real* ip = x->val.data() + c * in_plane;
        real* op = out->val.data() + c * out_plane;
        std::size_t oi = 0;
        for (int z = 0; z < out_dims[2]; ++z) {
            int z0 = (*axes)[2].i0[z], z1 = (*axes)[2].i1[z];
            real wz = (*axes)[2].w1[z];
            for (int y = 0; y < out_dims[1]; ++y) {
                int y0 = (*axes)[1].i0[y], y1 = (*axes)[1].i1[y];
                real wy = (*axes)[1].w1[y];
                for (int xo = 0; xo < out_dims[0]; ++xo, ++oi) {
                    int x0 = (*axes)[0].i0[xo], x1 = (*axes)[0].i1[xo];
                    real wx = (*axes)[0].w1[xo];
                    real c00 = in_at(ip, x0, y0, z0) * (1 - wx) + in_at(ip, x1, y0, z0) * wx;
                    real c10 = in_at(ip, x0, y1, z0) * (1 - wx) + in_at(ip, x1, y1, z0) * wx;
                    real c01 = in_at(ip, x0, y0, z1) * (1 - wx) + in_at(ip, x1, y0, z1) * wx;
                    real c11 = in_at(ip, x0, y1, z1) * (1 - wx) + in_at(ip, x1, y1, z1) * wx;
                    op[oi] = (c00 * (1 - wy) + c10 * wy) * (1 - wz) +
                             (c01 * (1 - wy) + c11 * wy) * wz;
                }
            }
        }
    }

    out->parents = {x};
    std::array<int, 3> od{out_dims[0], out_dims[1], out_dims[2]};
    std::array<int, 3> idn{in_dims[0], in_dims[1], in_dims[2]};
    out->backprop = [x, axes, C, od, idn, in_plane, out_plane](Node& self) {
        if (!tracked(*x)) return;
        auto gin_at = [&](real* p, int ix, int iy, int iz) -> real& {
            return p[ix + static_cast<std::size_t>(idn[0]) *
                             (iy + static_cast<std::size_t>(idn[1]) * iz)];
        };
        for (int c = 0; c < C; ++c) {
            real* gp = x->grad.data() + c * in_plane;
            const real* go = self.grad.data() + c * out_plane;
            std::size_t oi = 0;
            for (int z = 0; z < od[2]; ++z) {
                int z0 = (*axes)[2].i0[z], z1 = (*axes)[2].i1[z];
                real wz = (*axes)[2].w1[z];
                for (int y = 0; y < od[1]; ++y) {
                    int y0 = (*axes)[1].i0[y], y1 = (*axes)[1].i1[y];
                    real wy = (*axes)[1].w1[y];
                    for (int xo = 0; xo < od[0]; ++xo, ++oi) {
                        int x0 = (*axes)[0].i0[xo], x1 = (*axes)[0].i1[xo];
                        real wx = (*axes)[0].w1[xo];
                        real g = go[oi];
                        gin_at(gp, x0, y0, z0) += g * (1 - wx) * (1 - wy) * (1 - wz);
                        gin_at(gp, x1, y0, z0) += g * wx * (1 - wy) * (1 - wz);
                        gin_at(gp, x0, y1, z0) += g * (1 - wx) * wy * (1 - wz);
                        gin_at(gp, x1, y1, z0) += g * wx * wy * (1 - wz);
                        gin_at(gp, x0, y0, z1) += g * (1 - wx) * (1 - wy) * wz;
                        gin_at(gp, x1, y0, z1) += g * wx * (1 - wy) * wz;
                        gin_at(gp, x0, y1, z1) += g * (1 - wx) * wy * wz;
                        gin_at(gp, x1, y1, z1) += g * wx * wy * wz;
                    }
                }
            }
        }
    };
    return out;
}

}  // inline namespace
}  // namespace morphreg::net
