#pragma once
// Image similarity losses.
//
// MIND: a per-voxel self-similarity descriptor built from Gaussian-weighted
// patch distances to a small probe neighborhood. Descriptors are comparable
// across imaging modalities, so the squared descriptor difference serves as
// the cross-modality similarity loss.
//
// NCC: locally windowed normalized cross-correlation; invariant to affine
// intensity changes but not to non-affine contrast inversions, which is
// exactly the contrast the ablation study probes.

#include <array>
#include <vector>

#include "morphreg/grid.hpp"

namespace morphreg {

struct MindConfig {
    int patch_radius = 1;
    // Probe displacements r_k; defaults to the six axis unit offsets.
    std::vector<std::array<int, 3>> neighborhood = default_neighborhood();
    // Variance floor epsilon. The default 0 derives it from the volume as
    // 1e-5 x global intensity variance (clamped to a tiny positive value),
    // which keeps descriptors invariant under affine intensity remaps; a
    // positive value is used verbatim.
    double variance_floor = 0.0;

    static std::vector<std::array<int, 3>> default_neighborhood();
    void validate_or_throw() const;
};

// K descriptor channels per voxel, interleaved, each in (0, 1] with the
// per-voxel maximum exactly 1.
struct DescriptorField {
    GridMeta meta;
    int channels = 0;
    std::vector<float> data;

    const float* at(int x, int y, int z) const {
        return data.data() + static_cast<std::size_t>(channels) * voxel_index(meta, x, y, z);
    }
    float* at(int x, int y, int z) {
        return data.data() + static_cast<std::size_t>(channels) * voxel_index(meta, x, y, z);
    }
};

// Effective epsilon for a volume under cfg (the auto rule or the override).
double mind_variance_floor(const Volume& vol, const MindConfig& cfg);

DescriptorField mind_descriptor(const Volume& vol, const MindConfig& cfg = {});

// Mean over voxels and channels of the squared descriptor difference.
double mind_loss(const Volume& a, const Volume& b, const MindConfig& cfg = {});
double descriptor_ssd(const DescriptorField& a, const DescriptorField& b);

// Negative mean local NCC over window^3 neighborhoods (truncated at the
// volume boundary), variance floor 1e-5 per window. Result lies in [-1, 1].
double ncc_loss(const Volume& a, const Volume& b, int window = 9);

}  // namespace morphreg
