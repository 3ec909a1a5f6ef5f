#pragma once
// Core 3D grid containers and interpolation.
//
// Storage conventions used throughout the project:
//   - scalar voxels are 32-bit floats, x-fastest, then y, then z;
//   - vector fields hold three components per voxel, interleaved, in voxel
//     units (conversion to mm happens only at metric boundaries);
//   - continuous voxel coordinates outside [0, dim-1] are clamped to the
//     boundary before interpolation.

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace morphreg {

using Point3 = std::array<double, 3>;

struct GridMeta {
    std::array<int, 3> dims{0, 0, 0};               // voxels per axis
    std::array<double, 3> spacing{1.0, 1.0, 1.0};   // mm per voxel
    std::array<double, 3> origin{0.0, 0.0, 0.0};    // mm of voxel (0,0,0)

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    bool operator==(const GridMeta&) const = default;
};

// Throws std::invalid_argument when dims < 2 per axis or spacing <= 0.
void validate(const GridMeta& meta);

inline std::size_t voxel_index(const GridMeta& meta, int x, int y, int z) {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(meta.dims[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(meta.dims[1]) * static_cast<std::size_t>(z));
}

struct Volume {
    GridMeta meta;
    std::vector<float> values;

    float at(int x, int y, int z) const { return values[voxel_index(meta, x, y, z)]; }
    float& at(int x, int y, int z) { return values[voxel_index(meta, x, y, z)]; }
};

struct MaskVolume {
    GridMeta meta;
    std::vector<std::uint8_t> labels;   // 0 = background, 1 = structure

    std::uint8_t at(int x, int y, int z) const { return labels[voxel_index(meta, x, y, z)]; }
    std::uint8_t& at(int x, int y, int z) { return labels[voxel_index(meta, x, y, z)]; }
    std::size_t foreground_count() const;
};

// Three interleaved components per voxel, voxel units.
struct VectorField {
    GridMeta meta;
    std::vector<float> data;

    const float* vec(int x, int y, int z) const { return data.data() + 3 * voxel_index(meta, x, y, z); }
    float* vec(int x, int y, int z) { return data.data() + 3 * voxel_index(meta, x, y, z); }
};

// World-coordinate points in mm; order is identity-preserving across paired sets.
struct PointSet {
    std::vector<Point3> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

Volume make_volume(const GridMeta& meta, float fill = 0.0f);
MaskVolume make_mask(const GridMeta& meta, std::uint8_t fill = 0);
VectorField make_field(const GridMeta& meta, float fill = 0.0f);

// Throws std::invalid_argument when the payload size does not match the meta,
// std::domain_error on non-finite values.
void validate(const Volume& vol);
void validate(const MaskVolume& mask);
void validate(const VectorField& field);

// Trilinear interpolation at a continuous voxel coordinate, clamped at the
// boundary. Throws std::domain_error for non-finite coordinates.
double trilinear_sample(const Volume& vol, const Point3& p);

// Per-component trilinear interpolation of a vector field.
Point3 sample_field(const VectorField& field, const Point3& p);

// Displacement-form composition of the maps p -> p + a(p) and p -> p + b(p):
// result u satisfies u(p) = b(p) + a(p + b(p)) sampled trilinearly.
// Throws std::invalid_argument when the metas differ.
VectorField compose_displacements(const VectorField& a, const VectorField& b);

Point3 voxel_to_world(const GridMeta& meta, const Point3& voxel);
Point3 world_to_voxel(const GridMeta& meta, const Point3& world);

namespace detail {

// Clamped 8-corner interpolation setup shared by every sampling path so the
// boundary policy cannot drift between modules.
struct TrilinearCell {
    int i0[3];
    int i1[3];
    double f[3];
};

TrilinearCell trilinear_cell(const std::array<int, 3>& dims, const Point3& p);

}  // namespace detail

}  // namespace morphreg
