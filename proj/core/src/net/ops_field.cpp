#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "morphreg/net/ops.hpp"

namespace morphreg::net {

#if defined(MORPHREG_AD_FP64)
inline namespace fp64 {
#else
inline namespace fp32 {
#endif

namespace {

using Cell = morphreg::detail::TrilinearCell;

inline std::size_t plane_index(const std::array<int, 3>& dims, int x, int y, int z) {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
}

std::array<int, 3> field_dims(const Var& f, const char* what) {
    if (f->shape.size() != 4 || f->shape[0] != 3)
        throw std::invalid_argument(std::string("net: ") + what + " needs a (3,X,Y,Z) field");
    return {f->shape[1], f->shape[2], f->shape[3]};
}

// Trilinear value of one channel plane; identical association order to the
// grid module's samplers so 32-bit results agree bit for bit.
inline double interp_plane(const real* p, const std::array<int, 3>& dims, const Cell& c) {
    auto at = [&](int ix, int iy, int iz) -> double {
        return p[plane_index(dims, ix, iy, iz)];
    };
    const double fx = c.f[0], fy = c.f[1], fz = c.f[2];
    const double c00 = at(c.i0[0], c.i0[1], c.i0[2]) * (1.0 - fx) + at(c.i1[0], c.i0[1], c.i0[2]) * fx;
    const double c10 = at(c.i0[0], c.i1[1], c.i0[2]) * (1.0 - fx) + at(c.i1[0], c.i1[1], c.i0[2]) * fx;
    const double c01 = at(c.i0[0], c.i0[1], c.i1[2]) * (1.0 - fx) + at(c.i1[0], c.i0[1], c.i1[2]) * fx;
    const double c11 = at(c.i0[0], c.i1[1], c.i1[2]) * (1.0 - fx) + at(c.i1[0], c.i1[1], c.i1[2]) * fx;
    const double c0 = c00 * (1.0 - fy) + c10 * fy;
    const double c1 = c01 * (1.0 - fy) + c11 * fy;
    return c0 * (1.0 - fz) + c1 * fz;
}

// Partial derivatives of the interpolant with respect to the fractional
// offsets (fx, fy, fz).
inline void interp_plane_grads(const real* p, const std::array<int, 3>& dims, const Cell& c,
                               double dfd[3]) {
    auto at = [&](int ix, int iy, int iz) -> double {
        return p[plane_index(dims, ix, iy, iz)];
    };
    const double fx = c.f[0], fy = c.f[1], fz = c.f[2];
    const double v000 = at(c.i0[0], c.i0[1], c.i0[2]), v100 = at(c.i1[0], c.i0[1], c.i0[2]);
    const double v010 = at(c.i0[0], c.i1[1], c.i0[2]), v110 = at(c.i1[0], c.i1[1], c.i0[2]);
    const double v001 = at(c.i0[0], c.i0[1], c.i1[2]), v101 = at(c.i1[0], c.i0[1], c.i1[2]);
    const double v011 = at(c.i0[0], c.i1[1], c.i1[2]), v111 = at(c.i1[0], c.i1[1], c.i1[2]);
    dfd[0] = ((v100 - v000) * (1.0 - fy) + (v110 - v010) * fy) * (1.0 - fz) +
             ((v101 - v001) * (1.0 - fy) + (v111 - v011) * fy) * fz;
    dfd[1] = ((v010 - v000) * (1.0 - fx) + (v110 - v100) * fx) * (1.0 - fz) +
             ((v011 - v001) * (1.0 - fx) + (v111 - v101) * fx) * fz;
    dfd[2] = ((v001 - v000) * (1.0 - fx) + (v101 - v100) * fx) * (1.0 - fy) +
             ((v011 - v010) * (1.0 - fx) + (v111 - v110) * fx) * fy;
}

// Corner indices and weights for gradient scatter into the sampled plane.
struct CornerScatter {
    std::size_t idx[8];
    double w[8];
};

inline CornerScatter corner_scatter(const std::array<int, 3>& dims, const Cell& c) {
    CornerScatter s;
    const double fx = c.f[0], fy = c.f[1], fz = c.f[2];
    int k = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++k) {
                s.idx[k] = plane_index(dims, dx ? c.i1[0] : c.i0[0], dy ? c.i1[1] : c.i0[1],
                                       dz ? c.i1[2] : c.i0[2]);
                s.w[k] = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
            }
    return s;
}

// Derivative of the boundary clamp applied before interpolation.
inline bool coord_active(double q, int dim) { return q > 0.0 && q < static_cast<double>(dim - 1); }

}  // namespace

Var compose_disp(const Var& a, const Var& b) {
    auto dims = field_dims(a, "compose_disp");
    if (b->shape != a->shape)
        throw std::invalid_argument("net: compose_disp fields live on different grids");
    const std::size_t plane = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];

    Var out = make_node(a->shape);
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                const std::size_t si = plane_index(dims, x, y, z);
                const Point3 q{x + static_cast<double>(b->val[si]),
                               y + static_cast<double>(b->val[plane + si]),
                               z + static_cast<double>(b->val[2 * plane + si])};
                const Cell cell = morphreg::detail::trilinear_cell(dims, q);
                for (int c = 0; c < 3; ++c)
                    out->val[c * plane + si] = static_cast<real>(
                        static_cast<double>(b->val[c * plane + si]) +
                        interp_plane(a->val.data() + c * plane, dims, cell));
            }

    out->parents = {a, b};
    out->backprop = [a, b, dims, plane](Node& self) {
        const bool need_a = tracked(*a), need_b = tracked(*b);
        if (!need_a && !need_b) return;
        for (int z = 0; z < dims[2]; ++z)
            for (int y = 0; y < dims[1]; ++y)
                for (int x = 0; x < dims[0]; ++x) {
                    const std::size_t si = plane_index(dims, x, y, z);
                    const Point3 q{x + static_cast<double>(b->val[si]),
                                   y + static_cast<double>(b->val[plane + si]),
                                   z + static_cast<double>(b->val[2 * plane + si])};
                    const Cell cell = morphreg::detail::trilinear_cell(dims, q);
                    const double g[3] = {static_cast<double>(self.grad[si]),
                                         static_cast<double>(self.grad[plane + si]),
                                         static_cast<double>(self.grad[2 * plane + si])};
                    if (need_a) {
                        const CornerScatter s = corner_scatter(dims, cell);
                        for (int c = 0; c < 3; ++c) {
                            real* gp = a->grad.data() + c * plane;
                            for (int k = 0; k < 8; ++k)
                                gp[s.idx[k]] += static_cast<real>(g[c] * s.w[k]);
                        }
                    }
                    if (need_b) {
                        // identity part plus the motion of the sample point
                        double coord[3] = {0.0, 0.0, 0.0};
                        for (int c = 0; c < 3; ++c) {
                            double dfd[3];
                            interp_plane_grads(a->val.data() + c * plane, dims, cell, dfd);
                            for (int ax = 0; ax < 3; ++ax) coord[ax] += g[c] * dfd[ax];
                        }
                        for (int ax = 0; ax < 3; ++ax) {
                            double gb = g[ax];
                            if (coord_active(q[ax], dims[ax])) gb += coord[ax];
                            b->grad[ax * plane + si] += static_cast<real>(gb);
                        }
                    }
                }
    };
    return out;
}

Var warp_image(const Var& img, const Var& u) {
    auto dims = field_dims(u, "warp_image");
    if (img->shape != std::vector<int>{dims[0], dims[1], dims[2]})
        throw std::invalid_argument("net: warp_image image and field grids differ");
    const std::size_t plane = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];

    Var out = make_node(img->shape);
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                const std::size_t si = plane_index(dims, x, y, z);
                const Point3 q{x + static_cast<double>(u->val[si]),
                               y + static_cast<double>(u->val[plane + si]),
                               z + static_cast<double>(u->val[2 * plane + si])};
                const Cell cell = morphreg::detail::trilinear_cell(dims, q);
                out->val[si] = static_cast<real>(interp_plane(img->val.data(), dims, cell));
            }

    out->parents = {img, u};
    out->backprop = [img, u, dims, plane](Node& self) {
        const bool need_img = tracked(*img), need_u = tracked(*u);
        if (!need_img && !need_u) return;
        for (int z = 0; z < dims[2]; ++z)
            for (int y = 0; y < dims[1]; ++y)
                for (int x = 0; x < dims[0]; ++x) {
                    const std::size_t si = plane_index(dims, x, y, z);
                    const double g = self.grad[si];
                    if (g == 0.0) continue;
                    const Point3 q{x + static_cast<double>(u->val[si]),
                                   y + static_cast<double>(u->val[plane + si]),
                                   z + static_cast<double>(u->val[2 * plane + si])};
                    const Cell cell = morphreg::detail::trilinear_cell(dims, q);
                    if (need_img) {
                        const CornerScatter s = corner_scatter(dims, cell);
                        for (int k = 0; k < 8; ++k)
                            img->grad[s.idx[k]] += static_cast<real>(g * s.w[k]);
                    }
                    if (need_u) {
                        double dfd[3];
                        interp_plane_grads(img->val.data(), dims, cell, dfd);
                        for (int ax = 0; ax < 3; ++ax)
                            if (coord_active(q[ax], dims[ax]))
                                u->grad[ax * plane + si] += static_cast<real>(g * dfd[ax]);
                    }
                }
    };
    return out;
}

Var integrate_svf_diff(const Var& v, int steps) {
    if (steps < 0 || steps > 12)
        throw std::invalid_argument("net: integration steps must lie in [0, 12]");
    field_dims(v, "integrate_svf_diff");
    Var u = scale(v, std::ldexp(1.0, -steps));
    for (int k = 0; k < steps; ++k) u = compose_disp(u, u);
    return u;
}

// ---------------------------------------------------------------------------
// MIND loss
// ---------------------------------------------------------------------------

namespace {

std::vector<double> mind_patch_weights(int radius) {
    int side = 2 * radius + 1;
    std::vector<double> w(static_cast<std::size_t>(side) * side * side);
    double sigma = radius / 2.0;
    double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    double total = 0.0;
    std::size_t i = 0;
    for (int dz = -radius; dz <= radius; ++dz)
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx, ++i) {
                w[i] = std::exp(-(double(dx) * dx + double(dy) * dy + double(dz) * dz) * inv2s2);
                total += w[i];
            }
    for (auto& x : w) x /= total;
    return w;
}

inline int clampi(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

}  // namespace

Var mind_loss_diff(const Var& warped, const DescriptorField& fixed_desc, const MindConfig& cfg) {
    cfg.validate_or_throw();
    if (warped->shape.size() != 3)
        throw std::invalid_argument("net: mind_loss_diff needs an (X,Y,Z) image");
    const std::array<int, 3> dims{warped->shape[0], warped->shape[1], warped->shape[2]};
    if (fixed_desc.meta.dims != dims)
        throw std::invalid_argument("net: mind_loss_diff descriptor grid differs");
    const int K = static_cast<int>(cfg.neighborhood.size());
    if (fixed_desc.channels != K)
        throw std::invalid_argument("net: mind_loss_diff descriptor channel count differs");

    const int r = cfg.patch_radius;
    const auto weights = mind_patch_weights(r);
    const std::size_t nvox = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];

    // variance floor: explicit override, or the auto rule from the image
    double eps = cfg.variance_floor;
    if (eps <= 0.0) {
        double m = 0.0;
        for (real v : warped->val) m += v;
        m /= static_cast<double>(nvox);
        double var = 0.0;
        for (real v : warped->val) var += (v - m) * (v - m);
        var /= static_cast<double>(nvox);
        eps = std::max(1e-5 * var, 1e-30);
    }

    auto ssd_all = std::make_shared<std::vector<double>>(static_cast<std::size_t>(K) * nvox);
    auto desc = std::make_shared<std::vector<real>>(static_cast<std::size_t>(K) * nvox);
    auto fd = std::make_shared<DescriptorField>(fixed_desc);

    const real* img = warped->val.data();
    double acc = 0.0;
    std::vector<double> ssd(K);
    std::vector<real> raw(K);
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                const std::size_t si = plane_index(dims, x, y, z);
                for (int k = 0; k < K; ++k) {
                    const auto& off = cfg.neighborhood[k];
                    double s = 0.0;
                    std::size_t wi = 0;
                    for (int dz = -r; dz <= r; ++dz)
                        for (int dy = -r; dy <= r; ++dy)
                            for (int dx = -r; dx <= r; ++dx, ++wi) {
                                double a = img[plane_index(dims, clampi(x + dx, dims[0] - 1),
                                                           clampi(y + dy, dims[1] - 1),
                                                           clampi(z + dz, dims[2] - 1))];
                                double b = img[plane_index(dims, clampi(x + off[0] + dx, dims[0] - 1),
                                                           clampi(y + off[1] + dy, dims[1] - 1),
                                                           clampi(z + off[2] + dz, dims[2] - 1))];
                                s += weights[wi] * (a - b) * (a - b);
                            }
                    ssd[k] = s;
                    (*ssd_all)[si * K + k] = s;
                }
                double mean_ssd = 0.0;
                for (double s : ssd) mean_ssd += s;
                mean_ssd /= K;
                double variance = std::max(mean_ssd, eps);

                double peak = 0.0;
                for (int k = 0; k < K; ++k) {
                    double v = std::exp(-ssd[k] / variance);
                    raw[k] = static_cast<real>(v);
                    peak = std::max(peak, v);
                }
                const float* ref = fd->data.data() + si * K;
                for (int k = 0; k < K; ++k) {
                    real dk = static_cast<real>(raw[k] / peak);
                    (*desc)[si * K + k] = dk;
                    double diff = static_cast<double>(dk) - ref[k];
                    acc += diff * diff;
                }
            }

    Var out = make_node({1});
    out->val[0] = static_cast<real>(acc / static_cast<double>(static_cast<std::size_t>(K) * nvox));
    out->parents = {warped};
    auto cfg_copy = std::make_shared<MindConfig>(cfg);
    out->backprop = [warped, ssd_all, desc, fd, cfg_copy, dims, nvox, K, r, weights,
                     eps](Node& self) {
        if (!tracked(*warped)) return;
        const double groot = self.grad[0];
        const double inv_n = 1.0 / static_cast<double>(static_cast<std::size_t>(K) * nvox);
        const real* img = warped->val.data();
        real* gimg = warped->grad.data();
        std::vector<double> gS(K);
        for (int z = 0; z < dims[2]; ++z)
            for (int y = 0; y < dims[1]; ++y)
                for (int x = 0; x < dims[0]; ++x) {
                    const std::size_t si = plane_index(dims, x, y, z);
                    const double* ssd = ssd_all->data() + si * K;
                    double mean_ssd = 0.0;
                    int m = 0;
                    for (int k = 0; k < K; ++k) {
                        mean_ssd += ssd[k];
                        if (ssd[k] < ssd[m]) m = k;
                    }
                    mean_ssd /= K;
                    const bool var_live = mean_ssd > eps;
                    const double V = var_live ? mean_ssd : eps;

                    const float* ref = fd->data.data() + si * K;
                    double common = 0.0, bsum = 0.0;
                    for (int k = 0; k < K; ++k) {
                        double dk = (*desc)[si * K + k];
                        double gD = groot * 2.0 * (dk - ref[k]) * inv_n;
                        double gDd = gD * dk;
                        common += gDd;
                        bsum += gDd * (ssd[k] - ssd[m]);
                        gS[k] = -gDd / V;
                    }
                    gS[m] += common / V;
                    if (var_live) {
                        const double t = bsum / (V * V * K);
                        for (int k = 0; k < K; ++k) gS[k] += t;
                    }

                    for (int k = 0; k < K; ++k) {
                        if (gS[k] == 0.0) continue;
                        const auto& off = cfg_copy->neighborhood[k];
                        std::size_t wi = 0;
                        for (int dz = -r; dz <= r; ++dz)
                            for (int dy = -r; dy <= r; ++dy)
                                for (int dx = -r; dx <= r; ++dx, ++wi) {
                                    std::size_t ia =
                                        plane_index(dims, clampi(x + dx, dims[0] - 1),
                                                    clampi(y + dy, dims[1] - 1),
                                                    clampi(z + dz, dims[2] - 1));
                                    std::size_t ib =
                                        plane_index(dims, clampi(x + off[0] + dx, dims[0] - 1),
                                                    clampi(y + off[1] + dy, dims[1] - 1),
                                                    clampi(z + off[2] + dz, dims[2] - 1));
                                    double diff = static_cast<double>(img[ia]) - img[ib];
                                    double gd = gS[k] * weights[wi] * 2.0 * diff;
                                    gimg[ia] += static_cast<real>(gd);
                                    gimg[ib] -= static_cast<real>(gd);
                                }
                    }
                }
    };
    return out;
}

// ---------------------------------------------------------------------------
// NCC loss
// ---------------------------------------------------------------------------

namespace {

// Separable truncated box sums, identical sweep order to the reference loss.
void boxsum_inplace(std::vector<double>& src, const std::array<int, 3>& d, int h) {
    const std::size_t n = src.size();
    std::vector<double> tmp(n);
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y) {
            std::size_t row = plane_index(d, 0, y, z);
            double run = 0.0;
            for (int x = 0; x < std::min(h, d[0] - 1) + 1; ++x) run += src[row + x];
            for (int x = 0; x < d[0]; ++x) {
                tmp[row + x] = run;
                int add = x + h + 1, drop = x - h;
                if (add < d[0]) run += src[row + add];
                if (drop >= 0) run -= src[row + drop];
            }
        }
    src.swap(tmp);
    for (int z = 0; z < d[2]; ++z)
        for (int x = 0; x < d[0]; ++x) {
            std::size_t col = plane_index(d, x, 0, z);
            std::size_t stride = static_cast<std::size_t>(d[0]);
            double run = 0.0;
            for (int y = 0; y < std::min(h, d[1] - 1) + 1; ++y) run += src[col + y * stride];
            for (int y = 0; y < d[1]; ++y) {
                tmp[col + y * stride] = run;
                int add = y + h + 1, drop = y - h;
                if (add < d[1]) run += src[col + add * stride];
                if (drop >= 0) run -= src[col + drop * stride];
            }
        }
    src.swap(tmp);
    for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x) {
            std::size_t col = plane_index(d, x, y, 0);
            std::size_t stride = static_cast<std::size_t>(d[0]) * d[1];
            double run = 0.0;
            for (int z = 0; z < std::min(h, d[2] - 1) + 1; ++z) run += src[col + z * stride];
            for (int z = 0; z < d[2]; ++z) {
                tmp[col + z * stride] = run;
                int add = z + h + 1, drop = z - h;
                if (add < d[2]) run += src[col + add * stride];
                if (drop >= 0) run -= src[col + drop * stride];
            }
        }
    src.swap(tmp);
}

}  // namespace

Var ncc_loss_diff(const Var& warped, const Var& fixed, int window) {
    if (warped->shape.size() != 3 || fixed->shape != warped->shape)
        throw std::invalid_argument("net: ncc_loss_diff image grids differ");
    if (window < 3 || window % 2 == 0)
        throw std::invalid_argument("net: ncc window must be odd and >= 3");
    const std::array<int, 3> dims{warped->shape[0], warped->shape[1], warped->shape[2]};
    const int h = window / 2;
    const std::size_t n = warped->size();

    auto sa = std::make_shared<std::vector<double>>(n);
    auto sb = std::make_shared<std::vector<double>>(n);
    auto saa = std::make_shared<std::vector<double>>(n);
    auto sbb = std::make_shared<std::vector<double>>(n);
    auto sab = std::make_shared<std::vector<double>>(n);
    auto cnt = std::make_shared<std::vector<double>>(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        double a = warped->val[i], b = fixed->val[i];
        (*sa)[i] = a;
        (*sb)[i] = b;
        (*saa)[i] = a * a;
        (*sbb)[i] = b * b;
        (*sab)[i] = a * b;
    }
    boxsum_inplace(*sa, dims, h);
    boxsum_inplace(*sb, dims, h);
    boxsum_inplace(*saa, dims, h);
    boxsum_inplace(*sbb, dims, h);
    boxsum_inplace(*sab, dims, h);
    boxsum_inplace(*cnt, dims, h);

    const double floor = 1e-5;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double c = (*cnt)[i];
        double ma = (*sa)[i] / c, mb = (*sb)[i] / c;
        double va = std::max((*saa)[i] / c - ma * ma, floor);
        double vb = std::max((*sbb)[i] / c - mb * mb, floor);
        double cov = (*sab)[i] / c - ma * mb;
        total += cov / std::sqrt(va * vb);
    }

    Var out = make_node({1});
    out->val[0] = static_cast<real>(-total / static_cast<double>(n));
    out->parents = {warped, fixed};
    out->backprop = [warped, fixed, sa, sb, saa, sbb, sab, cnt, dims, h, n](Node& self) {
        const bool need_a = tracked(*warped), need_b = tracked(*fixed);
        if (!need_a && !need_b) return;
        const double floor = 1e-5;
        const double groot = self.grad[0];
        const double scale = -groot / static_cast<double>(n);

        // alpha = 1/sqrt(va vb); beta vanishes when the matching variance
        // clamps to the floor. All fields are pre-divided by the window count.
        std::vector<double> fa, fma, fb, fmb;
        std::vector<double> cross_a, cross_b;
        if (need_a) {
            fa.resize(n);
            cross_a.resize(n);
        }
        if (need_b) {
            fb.resize(n);
            cross_b.resize(n);
        }
        std::vector<double> falpha(n);
        for (std::size_t i = 0; i < n; ++i) {
            double c = (*cnt)[i];
            double ma = (*sa)[i] / c, mb = (*sb)[i] / c;
            double va_raw = (*saa)[i] / c - ma * ma;
            double vb_raw = (*sbb)[i] / c - mb * mb;
            double va = std::max(va_raw, floor), vb = std::max(vb_raw, floor);
            double cov = (*sab)[i] / c - ma * mb;
            double alpha = 1.0 / std::sqrt(va * vb);
            double beta_a = va_raw > floor ? -cov / (va * std::sqrt(va * vb)) : 0.0;
            double beta_b = vb_raw > floor ? -cov / (vb * std::sqrt(va * vb)) : 0.0;
            falpha[i] = alpha / c;
            if (need_a) {
                fa[i] = beta_a / c;
                cross_a[i] = (alpha * mb + beta_a * ma) / c;
            }
            if (need_b) {
                fb[i] = beta_b / c;
                cross_b[i] = (alpha * ma + beta_b * mb) / c;
            }
        }
        boxsum_inplace(falpha, dims, h);
        if (need_a) {
            boxsum_inplace(fa, dims, h);
            boxsum_inplace(cross_a, dims, h);
            for (std::size_t i = 0; i < n; ++i) {
                double a = warped->val[i], b = fixed->val[i];
                warped->grad[i] +=
                    static_cast<real>(scale * (b * falpha[i] + a * fa[i] - cross_a[i]));
            }
        }
        if (need_b) {
            boxsum_inplace(fb, dims, h);
            boxsum_inplace(cross_b, dims, h);
            for (std::size_t i = 0; i < n; ++i) {
                double a = warped->val[i], b = fixed->val[i];
                fixed->grad[i] +=
                    static_cast<real>(scale * (a * falpha[i] + b * fb[i] - cross_b[i]));
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// KL prior loss
// ---------------------------------------------------------------------------

namespace {

inline int lattice_degree(const std::array<int, 3>& dims, int x, int y, int z) {
    int deg = 0;
    if (x > 0) ++deg;
    if (x < dims[0] - 1) ++deg;
    if (y > 0) ++deg;
    if (y < dims[1] - 1) ++deg;
    if (z > 0) ++deg;
    if (z < dims[2] - 1) ++deg;
    return deg;
}

}  // namespace

Var kl_loss_diff(const Var& mu, const Var& logvar, double lambda) {
    auto dims = field_dims(mu, "kl_loss_diff");
    if (logvar->shape != mu->shape)
        throw std::invalid_argument("net: kl_loss_diff mean and log-variance grids differ");
    if (!(lambda > 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("net: kl_loss_diff lambda must be positive and finite");
    const std::size_t plane = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];

    double trace = 0.0, logvar_sum = 0.0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                const std::size_t si = plane_index(dims, x, y, z);
                const double deg = lattice_degree(dims, x, y, z);
                for (int c = 0; c < 3; ++c) {
                    double lv = logvar->val[c * plane + si];
                    trace += lambda * deg * std::exp(lv);
                    logvar_sum += lv;
                }
            }
    double quad_acc = 0.0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                const std::size_t si = plane_index(dims, x, y, z);
                if (x + 1 < dims[0]) {
                    const std::size_t sj = si + 1;
                    for (int c = 0; c < 3; ++c) {
                        double d = static_cast<double>(mu->val[c * plane + si]) -
                                   mu->val[c * plane + sj];
                        quad_acc += d * d;
                    }
                }
                if (y + 1 < dims[1]) {
                    const std::size_t sj = si + dims[0];
                    for (int c = 0; c < 3; ++c) {
                        double d = static_cast<double>(mu->val[c * plane + si]) -
                                   mu->val[c * plane + sj];
                        quad_acc += d * d;
                    }
                }
                if (z + 1 < dims[2]) {
                    const std::size_t sj = si + static_cast<std::size_t>(dims[0]) * dims[1];
                    for (int c = 0; c < 3; ++c) {
                        double d = static_cast<double>(mu->val[c * plane + si]) -
                                   mu->val[c * plane + sj];
                        quad_acc += d * d;
                    }
                }
            }
    const double nvox = static_cast<double>(plane);
    Var out = make_node({1});
    out->val[0] =
        static_cast<real>(0.5 * (trace + lambda * quad_acc - logvar_sum) / nvox);
    out->parents = {mu, logvar};
    out->backprop = [mu, logvar, lambda, dims, plane, nvox](Node& self) {
        const double g = self.grad[0];
        const bool need_mu = tracked(*mu), need_lv = tracked(*logvar);
        if (!need_mu && !need_lv) return;
        for (int z = 0; z < dims[2]; ++z)
            for (int y = 0; y < dims[1]; ++y)
                for (int x = 0; x < dims[0]; ++x) {
                    const std::size_t si = plane_index(dims, x, y, z);
                    const int deg = lattice_degree(dims, x, y, z);
                    for (int c = 0; c < 3; ++c) {
                        const std::size_t idx = c * plane + si;
                        if (need_lv) {
                            double lv = logvar->val[idx];
                            logvar->grad[idx] += static_cast<real>(
                                g * 0.5 * (lambda * deg * std::exp(lv) - 1.0) / nvox);
                        }
                        if (need_mu) {
                            double m = mu->val[idx];
                            double neigh = 0.0;
                            if (x > 0) neigh += mu->val[idx - 1];
                            if (x < dims[0] - 1) neigh += mu->val[idx + 1];
                            if (y > 0) neigh += mu->val[idx - dims[0]];
                            if (y < dims[1] - 1) neigh += mu->val[idx + dims[0]];
                            if (z > 0)
                                neigh += mu->val[idx - static_cast<std::size_t>(dims[0]) * dims[1]];
                            if (z < dims[2] - 1)
                                neigh += mu->val[idx + static_cast<std::size_t>(dims[0]) * dims[1]];
                            mu->grad[idx] += static_cast<real>(
                                g * lambda * (deg * m - neigh) / nvox);
                        }
                    }
                }
    };
    return out;
}

// ---------------------------------------------------------------------------
// Chamfer surface loss
// ---------------------------------------------------------------------------

Var surface_loss_diff(const Var& u, const std::vector<Point3>& fixed_surface_voxel,
                      const std::vector<Point3>& moving_surface_world, const GridMeta& meta,
                      ChamferMode mode) {
    auto dims = field_dims(u, "surface_loss_diff");
    if (dims != meta.dims)
        throw std::invalid_argument("net: surface_loss_diff field and meta grids differ");
    if (fixed_surface_voxel.empty() || moving_surface_world.empty())
        throw std::domain_error("net: surface loss needs non-empty point sets");
    const std::size_t plane = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    const std::size_t nw = fixed_surface_voxel.size();
    const std::size_t nt = moving_surface_world.size();

    // carry the fixed-side surface by the field, then to world coordinates
    auto cells = std::make_shared<std::vector<Cell>>(nw);
    auto warped = std::make_shared<std::vector<Point3>>(nw);
    for (std::size_t i = 0; i < nw; ++i) {
        const Point3& p = fixed_surface_voxel[i];
        Cell cp = morphreg::detail::trilinear_cell(dims, p);
        Point3 q;
        for (int c = 0; c < 3; ++c)
            q[c] = p[c] + interp_plane(u->val.data() + c * plane, dims, cp);
        (*cells)[i] = cp;
        (*warped)[i] = voxel_to_world(meta, q);
    }

    auto targets = std::make_shared<std::vector<Point3>>(moving_surface_world);
    auto nn_fwd = std::make_shared<std::vector<std::size_t>>(nw);
    auto nn_rev = std::make_shared<std::vector<std::size_t>>(nt);

    double fwd_total = 0.0;
    for (std::size_t i = 0; i < nw; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bj = 0;
        const Point3& p = (*warped)[i];
        for (std::size_t j = 0; j < nt; ++j) {
            const Point3& q = (*targets)[j];
            double d2 = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                        (p[2] - q[2]) * (p[2] - q[2]);
            if (d2 < best) {
                best = d2;
                bj = j;
            }
        }
        (*nn_fwd)[i] = bj;
        fwd_total += best;
    }
    double loss = fwd_total / static_cast<double>(nw);
    if (mode == ChamferMode::symmetric) {
        double rev_total = 0.0;
        for (std::size_t j = 0; j < nt; ++j) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t bi = 0;
            const Point3& q = (*targets)[j];
            for (std::size_t i = 0; i < nw; ++i) {
                const Point3& p = (*warped)[i];
                double d2 = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                            (p[2] - q[2]) * (p[2] - q[2]);
                if (d2 < best) {
                    best = d2;
                    bi = i;
                }
            }
            (*nn_rev)[j] = bi;
            rev_total += best;
        }
        loss = 0.5 * (loss + rev_total / static_cast<double>(nt));
    }

    Var out = make_node({1});
    out->val[0] = static_cast<real>(loss);
    out->parents = {u};
    std::array<double, 3> spacing = meta.spacing;
    out->backprop = [u, cells, warped, targets, nn_fwd, nn_rev, mode, spacing, plane, nw,
                     nt](Node& self) {
        if (!tracked(*u)) return;
        const double g = self.grad[0];
        const double half = mode == ChamferMode::symmetric ? 0.5 : 1.0;

        // accumulate d loss / d warped-world-point, nearest neighbors frozen
        std::vector<Point3> gw(nw, Point3{0.0, 0.0, 0.0});
        const double wf = half * 2.0 / static_cast<double>(nw);
        for (std::size_t i = 0; i < nw; ++i) {
            const Point3& p = (*warped)[i];
            const Point3& q = (*targets)[(*nn_fwd)[i]];
            for (int c = 0; c < 3; ++c) gw[i][c] += wf * (p[c] - q[c]);
        }
        if (mode == ChamferMode::symmetric) {
            const double wr = half * 2.0 / static_cast<double>(nt);
            for (std::size_t j = 0; j < nt; ++j) {
                std::size_t i = (*nn_rev)[j];
                const Point3& p = (*warped)[i];
                const Point3& q = (*targets)[j];
                for (int c = 0; c < 3; ++c) gw[i][c] += wr * (p[c] - q[c]);
            }
        }
        for (std::size_t i = 0; i < nw; ++i) {
            const CornerScatter s = corner_scatter({u->shape[1], u->shape[2], u->shape[3]},
                                                   (*cells)[i]);
            for (int c = 0; c < 3; ++c) {
                double gq = g * gw[i][c] * spacing[c];
                if (gq == 0.0) continue;
                real* gp = u->grad.data() + c * plane;
                for (int k = 0; k < 8; ++k) gp[s.idx[k]] += static_cast<real>(gq * s.w[k]);
            }
        }
    };
    return out;
}

}  // inline namespace
}  // namespace morphreg::net
