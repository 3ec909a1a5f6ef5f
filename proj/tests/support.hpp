#pragma once
// Shared helpers for test binaries: deterministic random volumes/fields and a
// smoothed bounded field generator used wherever a plausible deformation is
// needed without pulling in the phantom generator.

#include <algorithm>
#include <cmath>
#include <random>

#include "morphreg/grid.hpp"
#include "morphreg/rng.hpp"

namespace test_support {

inline morphreg::Volume random_volume(const morphreg::GridMeta& meta, std::uint64_t seed,
                                      double lo = -1.0, double hi = 1.0) {
    auto vol = morphreg::make_volume(meta);
    std::mt19937_64 gen(seed);
    for (auto& v : vol.values) v = static_cast<float>(morphreg::uniform_range(gen, lo, hi));
    return vol;
}

inline morphreg::VectorField random_field(const morphreg::GridMeta& meta, double scale,
                                          std::uint64_t seed) {
    auto field = morphreg::make_field(meta);
    std::mt19937_64 gen(seed);
    for (auto& c : field.data)
        c = static_cast<float>(morphreg::uniform_range(gen, -scale, scale));
    return field;
}

// One pass of a 3x3x3 box blur with clamped borders, scalar volumes.
inline morphreg::Volume box_blur(const morphreg::Volume& f) {
    const auto& d = f.meta.dims;
    auto out = morphreg::make_volume(f.meta);
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                double acc = 0.0;
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx)
                            acc += f.at(std::clamp(x + dx, 0, d[0] - 1),
                                        std::clamp(y + dy, 0, d[1] - 1),
                                        std::clamp(z + dz, 0, d[2] - 1));
                out.at(x, y, z) = static_cast<float>(acc / 27.0);
            }
    return out;
}

// Smooth random texture rescaled to [0, 1].
inline morphreg::Volume smooth_volume(const morphreg::GridMeta& meta, std::uint64_t seed,
                                      int blur_passes = 2) {
    auto vol = random_volume(meta, seed, 0.0, 1.0);
    for (int i = 0; i < blur_passes; ++i) vol = box_blur(vol);
    float lo = vol.values[0], hi = vol.values[0];
    for (float v : vol.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    float span = hi - lo > 0 ? hi - lo : 1.0f;
    for (auto& v : vol.values) v = (v - lo) / span;
    return vol;
}

// Deterministic spatial permutation of the voxel values (same histogram).
inline morphreg::Volume shuffle_volume(const morphreg::Volume& vol, std::uint64_t seed) {
    auto out = vol;
    std::mt19937_64 gen(seed);
    for (std::size_t i = out.values.size() - 1; i > 0; --i) {
        std::size_t j = morphreg::uniform_index(gen, i + 1);
        std::swap(out.values[i], out.values[j]);
    }
    return out;
}

// One pass of a 3x3x3 box blur with clamped borders, applied per component.
inline morphreg::VectorField box_blur(const morphreg::VectorField& f) {
    const auto& d = f.meta.dims;
    auto out = morphreg::make_field(f.meta);
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                double acc[3] = {0, 0, 0};
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int xx = std::clamp(x + dx, 0, d[0] - 1);
                            int yy = std::clamp(y + dy, 0, d[1] - 1);
                            int zz = std::clamp(z + dz, 0, d[2] - 1);
                            const float* v = f.vec(xx, yy, zz);
                            for (int c = 0; c < 3; ++c) acc[c] += v[c];
                        }
                float* o = out.vec(x, y, z);
                for (int c = 0; c < 3; ++c) o[c] = static_cast<float>(acc[c] / 27.0);
            }
    return out;
}

// Smooth random field rescaled so the largest vector magnitude equals max_mag.
inline morphreg::VectorField smooth_field(const morphreg::GridMeta& meta, double max_mag,
                                          std::uint64_t seed, int blur_passes = 6) {
    auto f = random_field(meta, 1.0, seed);
    for (int i = 0; i < blur_passes; ++i) f = box_blur(f);
    double peak = 0.0;
    for (std::size_t i = 0; i < meta.voxel_count(); ++i) {
        double m = 0;
        for (int c = 0; c < 3; ++c) m += double(f.data[3 * i + c]) * f.data[3 * i + c];
        peak = std::max(peak, std::sqrt(m));
    }
    if (peak > 0)
        for (auto& c : f.data) c = static_cast<float>(c * (max_mag / peak));
    return f;
}

}  // namespace test_support
