#include "morphreg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace morphreg {

void validate(const GridMeta& meta) {
    for (int a = 0; a < 3; ++a) {
        if (meta.dims[a] < 2)
            throw std::invalid_argument("GridMeta: dims must be >= 2 per axis, got " +
                                        std::to_string(meta.dims[a]) + " on axis " + std::to_string(a));
        if (!(meta.spacing[a] > 0.0) || !std::isfinite(meta.spacing[a]))
            throw std::invalid_argument("GridMeta: spacing must be positive and finite");
        if (!std::isfinite(meta.origin[a]))
            throw std::invalid_argument("GridMeta: origin must be finite");
    }
}

std::size_t MaskVolume::foreground_count() const {
    std::size_t n = 0;
    for (std::uint8_t v : labels) n += (v != 0);
    return n;
}

Volume make_volume(const GridMeta& meta, float fill) {
    validate(meta);
    return Volume{meta, std::vector<float>(meta.voxel_count(), fill)};
}

MaskVolume make_mask(const GridMeta& meta, std::uint8_t fill) {
    validate(meta);
    return MaskVolume{meta, std::vector<std::uint8_t>(meta.voxel_count(), fill)};
}

VectorField make_field(const GridMeta& meta, float fill) {
    validate(meta);
    return VectorField{meta, std::vector<float>(3 * meta.voxel_count(), fill)};
}

void validate(const Volume& vol) {
    validate(vol.meta);
    if (vol.values.size() != vol.meta.voxel_count())
        throw std::invalid_argument("Volume: value count does not match dims");
    for (float v : vol.values)
        if (!std::isfinite(v)) throw std::domain_error("Volume: non-finite value");
}

void validate(const MaskVolume& mask) {
    validate(mask.meta);
    if (mask.labels.size() != mask.meta.voxel_count())
        throw std::invalid_argument("MaskVolume: label count does not match dims");
    for (std::uint8_t v : mask.labels)
        if (v > 1) throw std::domain_error("MaskVolume: labels must be 0 or 1");
}

void validate(const VectorField& field) {
    validate(field.meta);
    if (field.data.size() != 3 * field.meta.voxel_count())
        throw std::invalid_argument("VectorField: component count does not match dims");
    for (float v : field.data)
        if (!std::isfinite(v)) throw std::domain_error("VectorField: non-finite component");
}

namespace detail {

TrilinearCell trilinear_cell(const std::array<int, 3>& dims, const Point3& p) {
    TrilinearCell c;
    for (int a = 0; a < 3; ++a) {
        double x = std::clamp(p[a], 0.0, static_cast<double>(dims[a] - 1));
        double fl = std::floor(x);
        int i0 = static_cast<int>(fl);
        if (i0 > dims[a] - 2) i0 = dims[a] - 2;   // keep the upper corner in-grid
        c.i0[a] = i0;
        c.i1[a] = i0 + 1;
        c.f[a] = x - static_cast<double>(i0);
    }
    return c;
}

}  // namespace detail

static void require_finite(const Point3& p) {
    for (double v : p)
        if (!std::isfinite(v)) throw std::domain_error("sample coordinate is not finite");
}

double trilinear_sample(const Volume& vol, const Point3& p) {
    require_finite(p);
    const auto c = detail::trilinear_cell(vol.meta.dims, p);
    const double fx = c.f[0], fy = c.f[1], fz = c.f[2];
    const int nx = vol.meta.dims[0];
    const std::size_t plane = static_cast<std::size_t>(nx) * vol.meta.dims[1];
    const float* v = vol.values.data();

    auto val = [&](int ix, int iy, int iz) -> double {
        return v[static_cast<std::size_t>(ix) + static_cast<std::size_t>(nx) * iy + plane * iz];
    };
    const double c00 = val(c.i0[0], c.i0[1], c.i0[2]) * (1.0 - fx) + val(c.i1[0], c.i0[1], c.i0[2]) * fx;
    const double c10 = val(c.i0[0], c.i1[1], c.i0[2]) * (1.0 - fx) + val(c.i1[0], c.i1[1], c.i0[2]) * fx;
    const double c01 = val(c.i0[0], c.i0[1], c.i1[2]) * (1.0 - fx) + val(c.i1[0], c.i0[1], c.i1[2]) * fx;
    const double c11 = val(c.i0[0], c.i1[1], c.i1[2]) * (1.0 - fx) + val(c.i1[0], c.i1[1], c.i1[2]) * fx;
    const double c0 = c00 * (1.0 - fy) + c10 * fy;
    const double c1 = c01 * (1.0 - fy) + c11 * fy;
    return c0 * (1.0 - fz) + c1 * fz;
}

Point3 sample_field(const VectorField& field, const Point3& p) {
    require_finite(p);
    const auto c = detail::trilinear_cell(field.meta.dims, p);
    const double fx = c.f[0], fy = c.f[1], fz = c.f[2];
    const int nx = field.meta.dims[0];
    const std::size_t plane = static_cast<std::size_t>(nx) * field.meta.dims[1];
    const float* d = field.data.data();

    Point3 out{};
    for (int comp = 0; comp < 3; ++comp) {
        auto val = [&](int ix, int iy, int iz) -> double {
            std::size_t idx = static_cast<std::size_t>(ix) + static_cast<std::size_t>(nx) * iy + plane * iz;
            return d[3 * idx + comp];
        };
        const double c00 = val(c.i0[0], c.i0[1], c.i0[2]) * (1.0 - fx) + val(c.i1[0], c.i0[1], c.i0[2]) * fx;
        const double c10 = val(c.i0[0], c.i1[1], c.i0[2]) * (1.0 - fx) + val(c.i1[0], c.i1[1], c.i0[2]) * fx;
        const double c01 = val(c.i0[0], c.i0[1], c.i1[2]) * (1.0 - fx) + val(c.i1[0], c.i0[1], c.i1[2]) * fx;
        const double c11 = val(c.i0[0], c.i1[1], c.i1[2]) * (1.0 - fx) + val(c.i1[0], c.i1[1], c.i1[2]) * fx;
        const double c0 = c00 * (1.0 - fy) + c10 * fy;
        const double c1 = c01 * (1.0 - fy) + c11 * fy;
        out[comp] = c0 * (1.0 - fz) + c1 * fz;
    }
    return out;
}

VectorField compose_displacements(const VectorField& a, const VectorField& b) {
    if (!(a.meta == b.meta))
        throw std::invalid_argument("compose_displacements: fields live on different grids");
    VectorField out = make_field(a.meta);
    const auto& d = a.meta.dims;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                const float* bp = b.vec(x, y, z);
                const Point3 q{x + static_cast<double>(bp[0]),
                               y + static_cast<double>(bp[1]),
                               z + static_cast<double>(bp[2])};
                const Point3 av = sample_field(a, q);
                float* o = out.vec(x, y, z);
                o[0] = static_cast<float>(bp[0] + av[0]);
                o[1] = static_cast<float>(bp[1] + av[1]);
                o[2] = static_cast<float>(bp[2] + av[2]);
            }
    return out;
}

Point3 voxel_to_world(const GridMeta& meta, const Point3& voxel) {
    return {meta.origin[0] + voxel[0] * meta.spacing[0],
            meta.origin[1] + voxel[1] * meta.spacing[1],
            meta.origin[2] + voxel[2] * meta.spacing[2]};
}

Point3 world_to_voxel(const GridMeta& meta, const Point3& world) {
    return {(world[0] - meta.origin[0]) / meta.spacing[0],
            (world[1] - meta.origin[1]) / meta.spacing[1],
            (world[2] - meta.origin[2]) / meta.spacing[2]};
}

}  // namespace morphreg
