#include "morphreg/diffeo.hpp"

#include <cmath>
#include <stdexcept>

namespace morphreg {

void IntegrationConfig::validate_or_throw() const {
    if (steps < 0 || steps > 12)
        throw std::invalid_argument("integration steps must lie in [0, 12]");
}

VectorField integrate_svf(const VectorField& v, const IntegrationConfig& cfg) {
    cfg.validate_or_throw();
    validate(v);

    VectorField u = v;
    const float scale = std::ldexp(1.0f, -cfg.steps);   // 1 / 2^T
    for (auto& c : u.data) c *= scale;
    for (int k = 0; k < cfg.steps; ++k) u = compose_displacements(u, u);
    return u;
}

VectorField invert_svf(const VectorField& v, const IntegrationConfig& cfg) {
    VectorField neg = v;
    for (auto& c : neg.data) c = -c;
    return integrate_svf(neg, cfg);
}

VectorField invert_displacement(const VectorField& u, int iterations) {
    validate(u);
    if (iterations < 1) throw std::invalid_argument("inversion needs at least one iteration");

    const auto& d = u.meta.dims;
    VectorField w = make_field(u.meta);
    for (int it = 0; it < iterations; ++it) {
        VectorField next = make_field(u.meta);
        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x) {
                    const float* wv = w.vec(x, y, z);
                    Point3 q{x + wv[0], y + wv[1], z + wv[2]};
                    Point3 uq = sample_field(u, q);
                    float* nv = next.vec(x, y, z);
                    for (int c = 0; c < 3; ++c) nv[c] = static_cast<float>(-uq[c]);
                }
        w = std::move(next);
    }
    return w;
}

Volume warp_volume(const Volume& moving, const VectorField& u) {
    validate(moving);
    validate(u);
    if (!(moving.meta == u.meta))
        throw std::invalid_argument("warp_volume: image and field grids differ");

    const auto& d = moving.meta.dims;
    Volume out = make_volume(moving.meta);
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                const float* uv = u.vec(x, y, z);
                Point3 q{x + uv[0], y + uv[1], z + uv[2]};
                out.at(x, y, z) = static_cast<float>(trilinear_sample(moving, q));
            }
    return out;
}

MaskVolume warp_mask(const MaskVolume& moving, const VectorField& u) {
    validate(moving);
    validate(u);
    if (!(moving.meta == u.meta))
        throw std::invalid_argument("warp_mask: mask and field grids differ");

    const auto& d = moving.meta.dims;
    MaskVolume out = make_mask(moving.meta);
    auto clamp_round = [](double v, int dim) {
        int i = static_cast<int>(std::lround(v));
        return i < 0 ? 0 : (i > dim - 1 ? dim - 1 : i);
    };
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                const float* uv = u.vec(x, y, z);
                out.at(x, y, z) = moving.at(clamp_round(x + uv[0], d[0]),
                                            clamp_round(y + uv[1], d[1]),
                                            clamp_round(z + uv[2], d[2]));
            }
    return out;
}

PointSet warp_points(const PointSet& pts, const VectorField& v, const IntegrationConfig& cfg) {
    VectorField u_inv = invert_svf(v, cfg);
    PointSet out;
    out.points.reserve(pts.size());
    for (const auto& world : pts.points) {
        Point3 voxel = world_to_voxel(v.meta, world);
        Point3 shift = sample_field(u_inv, voxel);
        Point3 moved{voxel[0] + shift[0], voxel[1] + shift[1], voxel[2] + shift[2]};
        out.points.push_back(voxel_to_world(v.meta, moved));
    }
    return out;
}

Volume jacobian_determinant(const VectorField& u) {
    validate(u);
    const auto& d = u.meta.dims;
    if (d[0] < 3 || d[1] < 3 || d[2] < 3)
        throw std::invalid_argument("jacobian needs at least 3 voxels per axis");

    Volume out = make_volume(u.meta);
    // J[r][c] = d(p_r + u_r) / d p_c = I[r][c] + du_r/dp_c
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                double J[3][3];
                int p[3] = {x, y, z};
                for (int axis = 0; axis < 3; ++axis) {
                    int lo = p[axis] > 0 ? p[axis] - 1 : p[axis];
                    int hi = p[axis] < d[axis] - 1 ? p[axis] + 1 : p[axis];
                    double inv_h = 1.0 / (hi - lo);
                    int a[3] = {x, y, z}, b[3] = {x, y, z};
                    a[axis] = hi;
                    b[axis] = lo;
                    const float* ua = u.vec(a[0], a[1], a[2]);
                    const float* ub = u.vec(b[0], b[1], b[2]);
                    for (int r = 0; r < 3; ++r)
                        J[r][axis] = (r == axis ? 1.0 : 0.0) +
                                     (static_cast<double>(ua[r]) - ub[r]) * inv_h;
                }
                double det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                             J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                             J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
                out.at(x, y, z) = static_cast<float>(det);
            }
    return out;
}

double positive_jacobian_fraction(const Volume& jac) {
    const auto& d = jac.meta.dims;
    if (d[0] < 3 || d[1] < 3 || d[2] < 3)
        throw std::invalid_argument("interior statistics need at least 3 voxels per axis");
    std::size_t interior = 0, positive = 0;
    for (int z = 1; z < d[2] - 1; ++z)
        for (int y = 1; y < d[1] - 1; ++y)
            for (int x = 1; x < d[0] - 1; ++x) {
                ++interior;
                if (jac.at(x, y, z) > 0.0f) ++positive;
            }
    return static_cast<double>(positive) / static_cast<double>(interior);
}

}  // namespace morphreg
