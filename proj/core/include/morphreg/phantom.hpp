#pragma once

// Synthetic cross-modality dataset generator. Each sample is a CT-like fixed
// image and an MR-like moving image rendered from the same seeded anatomy,
// related by a known diffeomorphic ground-truth deformation, with organ and
// vessel masks, paired landmarks, and the generating velocity field.

#include <cstdint>
#include <filesystem>

#include "morphreg/grid.hpp"

namespace morphreg {

enum class AnatomyLabel : std::uint8_t {
    background = 0,
    body = 1,
    liver = 2,
    vessel = 3,
    spine = 4,
};

// One label per voxel; values are AnatomyLabel.
using LabelVolume = MaskVolume;

struct PhantomConfig {
    double max_displacement_voxels = 4.0;   // cap on the integrated map, [0, 6]
    double smoothness_sigma_voxels = 8.0;   // Gaussian smoothing of the raw velocity noise
    bool intensity_noise = true;
    bool mr_bias_field = true;

    void validate_or_throw() const;
};

struct PhantomSample {
    Volume fixed_ct;
    Volume moving_mr;
    MaskVolume fixed_mask;     // liver structure (vessel region included)
    MaskVolume moving_mask;
    MaskVolume fixed_vessel;
    MaskVolume moving_vessel;
    PointSet landmarks_fixed;    // world mm, index-paired with landmarks_moving
    PointSet landmarks_moving;
    VectorField gt_velocity;     // integrate(+gt_velocity) registers moving onto fixed
    std::uint64_t seed = 0;
    PhantomConfig config;
};

// Deterministic labeled anatomy: body ellipsoid, lobed liver, curved vessel
// tube inside the liver, spine cylinder.
LabelVolume gen_anatomy(std::uint64_t seed, const GridMeta& meta);

// Clean per-label intensities. mr_lookup already includes the monotone
// intensity curve the MR renderer applies, so a noise- and bias-free render
// matches these values exactly.
double ct_lookup(AnatomyLabel label);
double mr_lookup(AnatomyLabel label);

// Renderers: per-label lookup plus Gaussian noise at 2% of the lookup range.
// The MR renderer additionally applies a smooth multiplicative bias field
// (within ±15%) and a monotone nonlinear intensity curve.
Volume render_ct(const LabelVolume& labels, std::uint64_t seed, bool with_noise = true);
Volume render_mr(const LabelVolume& labels, std::uint64_t seed, bool with_noise = true,
                 bool with_bias = true);

// Gaussian-smoothed random velocity noise, rescaled so the integrated map's
// max displacement stays at or below max_magnitude_voxels and its interior
// Jacobian determinant stays >= 0.2 (amplitude is halved until both hold).
VectorField gen_gt_svf(std::uint64_t seed, const GridMeta& meta, double max_magnitude_voxels,
                       double smoothness_sigma);

// Full sample: fixed = CT render of the anatomy; moving = MR render of the
// anatomy pulled back by the inverse ground-truth map; 15 liver-surface plus
// 5 vessel-centerline landmarks placed on the fixed side and carried to the
// moving side by the forward map. Degenerate anatomy retries with an offset
// seed (reported on stderr).
PhantomSample make_pair(std::uint64_t seed, const GridMeta& meta, const PhantomConfig& config = {});

// Directory round-trip in the documented layout (MetaImage volumes, landmark
// CSVs, sample.json echoing seed and config).
void write_sample(const PhantomSample& sample, const std::filesystem::path& dir);
PhantomSample read_sample(const std::filesystem::path& dir);

}  // namespace morphreg
