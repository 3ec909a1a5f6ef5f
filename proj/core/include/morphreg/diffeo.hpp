#pragma once
// Stationary-velocity-field calculus: exponentiation by scaling and
// squaring, inversion, image/mask/point warping, and Jacobian diagnostics.
//
// Conventions: a velocity or displacement field lives on the voxel lattice in
// voxel units. integrate_svf(v) returns the displacement u of the flow map
// p -> p + u(p) ~ exp(v)(p). Images warp by pull-back (the output at p reads
// the moving image at p + u(p)); points are transported with the inverse
// displacement so that structures drawn on the moving image and their
// coordinates travel together.

#include "morphreg/grid.hpp"

namespace morphreg {

struct IntegrationConfig {
    int steps = 7;   // squaring rounds T; u0 = v / 2^T

    void validate_or_throw() const;
};

// Scaling and squaring: u0 = v / 2^T, then u <- u o u exactly T times.
VectorField integrate_svf(const VectorField& v, const IntegrationConfig& cfg = {});

// Displacement of exp(-v); inverts the map of integrate_svf(v).
VectorField invert_svf(const VectorField& v, const IntegrationConfig& cfg = {});

// Fixed-point inversion of a displacement field u (no velocity available):
// seeks w with w(p) = -u(p + w(p)). Converges for small smooth deformations.
VectorField invert_displacement(const VectorField& u, int iterations = 30);

// Pull-back warp: out(p) = trilinear_sample(moving, p + u(p)).
Volume warp_volume(const Volume& moving, const VectorField& u);

// Label pull-back with nearest-neighbor lookup (labels must not blend).
MaskVolume warp_mask(const MaskVolume& moving, const VectorField& u);

// Transport world-space points on the moving image through exp(v)'s inverse:
// x' = x + u_inv(x) in voxel coordinates, converted from/to mm via the grid.
// Out-of-bounds points evaluate against the clamped field.
PointSet warp_points(const PointSet& pts, const VectorField& v, const IntegrationConfig& cfg = {});

// Determinant of the spatial gradient of p -> p + u(p), central differences
// at interior voxels, one-sided at the boundary, in voxel units.
Volume jacobian_determinant(const VectorField& u);

// Share of strictly positive Jacobian determinants over interior voxels.
double positive_jacobian_fraction(const Volume& jac);

}  // namespace morphreg
