#include "morphreg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "morphreg/diffeo.hpp"
#include "morphreg/io.hpp"
#include "morphreg/metrics.hpp"
#include "morphreg/rng.hpp"

namespace morphreg {

namespace {

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t salt) {
    return seed ^ (salt * 0x9E3779B97F4A7C15ULL);
}

// Low-frequency scalar noise: an n^3 grid of uniform values in [-amp, amp],
// trilinearly interpolated over the unit cube.
class CoarseNoise {
  public:
    CoarseNoise(std::mt19937_64& gen, int n, double amp) : n_(n), vals_(n * n * n) {
        for (double& v : vals_) v = uniform_range(gen, -amp, amp);
    }

    double at(double u, double v, double w) const {
        auto axis = [this](double t) {
            t = std::clamp(t, 0.0, 1.0) * (n_ - 1);
            int i0 = std::min(static_cast<int>(t), n_ - 2);
            return std::pair<int, double>{i0, t - i0};
        };
        auto [i, fx] = axis(u);
        auto [j, fy] = axis(v);
        auto [k, fz] = axis(w);
        double acc = 0;
        for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    double wgt = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                    acc += wgt * vals_[(i + dx) + n_ * ((j + dy) + n_ * (k + dz))];
                }
        return acc;
    }

  private:
    int n_;
    std::vector<double> vals_;
};

struct Vec3d {
    double x, y, z;
};

Vec3d bezier(const std::array<Vec3d, 4>& k, double t) {
    double s = 1.0 - t;
    double b0 = s * s * s, b1 = 3 * s * s * t, b2 = 3 * s * t * t, b3 = t * t * t;
    return {b0 * k[0].x + b1 * k[1].x + b2 * k[2].x + b3 * k[3].x,
            b0 * k[0].y + b1 * k[1].y + b2 * k[2].y + b3 * k[3].y,
            b0 * k[0].z + b1 * k[1].z + b2 * k[2].z + b3 * k[3].z};
}

double dist2_point_segment(const Vec3d& p, const Vec3d& a, const Vec3d& b) {
    double abx = b.x - a.x, aby = b.y - a.y, abz = b.z - a.z;
    double apx = p.x - a.x, apy = p.y - a.y, apz = p.z - a.z;
    double denom = abx * abx + aby * aby + abz * abz;
    double t = denom > 0 ? std::clamp((apx * abx + apy * aby + apz * abz) / denom, 0.0, 1.0) : 0.0;
    double dx = apx - t * abx, dy = apy - t * aby, dz = apz - t * abz;
    return dx * dx + dy * dy + dz * dz;
}

struct AnatomyModel {
    LabelVolume labels;
    std::vector<Vec3d> vessel_curve;   // densely sampled centerline, voxel coords
};

AnatomyModel build_anatomy(std::uint64_t seed, const GridMeta& meta) {
    validate(meta);
    const int X = meta.dims[0], Y = meta.dims[1], Z = meta.dims[2];
    std::mt19937_64 gen(sub_seed(seed, 11));

    auto jitter = [&gen](double lo, double hi) { return uniform_range(gen, lo, hi); };

    // body ellipsoid
    Vec3d bc{(X - 1) * (0.5 + jitter(-0.02, 0.02)), (Y - 1) * (0.5 + jitter(-0.02, 0.02)),
             (Z - 1) * (0.5 + jitter(-0.02, 0.02))};
    Vec3d bs{0.43 * X * (1 + jitter(-0.04, 0.04)), 0.41 * Y * (1 + jitter(-0.04, 0.04)),
             0.50 * Z * (1 + jitter(-0.04, 0.04))};

    // lobed liver: ellipsoid offset toward one flank, radius perturbed by
    // low-frequency noise
    Vec3d lc{bc.x + 0.15 * X + jitter(-0.03, 0.03) * X, bc.y - 0.08 * Y + jitter(-0.03, 0.03) * Y,
             bc.z + jitter(-0.04, 0.04) * Z};
    Vec3d ls{0.23 * X * (1 + jitter(-0.08, 0.08)), 0.20 * Y * (1 + jitter(-0.08, 0.08)),
             0.30 * Z * (1 + jitter(-0.08, 0.08))};
    CoarseNoise lobes(gen, 5, 0.16);

    // vessel centerline control points, in liver-normalized coordinates
    std::array<Vec3d, 4> ctrl{};
    ctrl[0] = {-0.50, jitter(-0.30, 0.30), jitter(-0.45, -0.20)};
    ctrl[1] = {jitter(-0.25, -0.05), jitter(-0.35, 0.35), jitter(-0.20, 0.20)};
    ctrl[2] = {jitter(0.05, 0.25), jitter(-0.35, 0.35), jitter(-0.20, 0.20)};
    ctrl[3] = {0.50, jitter(-0.30, 0.30), jitter(0.20, 0.45)};
    for (auto& c : ctrl) c = {lc.x + c.x * ls.x, lc.y + c.y * ls.y, lc.z + c.z * ls.z};

    // spine cylinder, posterior of center
    double sx = bc.x + jitter(-0.02, 0.02) * X;
    double sy = (Y - 1) * 0.78 + jitter(-0.02, 0.02) * Y;
    double sr = 0.07 * std::min(X, Y);

    AnatomyModel model;
    model.labels = make_mask(meta, static_cast<std::uint8_t>(AnatomyLabel::background));
    const int curve_samples = 200;
    model.vessel_curve.reserve(curve_samples + 1);
    for (int i = 0; i <= curve_samples; ++i)
        model.vessel_curve.push_back(bezier(ctrl, static_cast<double>(i) / curve_samples));

    auto inside_body = [&](double x, double y, double z, double shrink) {
        double qx = (x - bc.x) / bs.x, qy = (y - bc.y) / bs.y, qz = (z - bc.z) / bs.z;
        return qx * qx + qy * qy + qz * qz <= shrink * shrink;
    };

    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x) {
                if (!inside_body(x, y, z, 1.0)) continue;
                AnatomyLabel label = AnatomyLabel::body;

                double dxs = x - sx, dys = y - sy;
                if (dxs * dxs + dys * dys <= sr * sr) label = AnatomyLabel::spine;

                double qx = (x - lc.x) / ls.x, qy = (y - lc.y) / ls.y, qz = (z - lc.z) / ls.z;
                double r = std::sqrt(qx * qx + qy * qy + qz * qz);
                double bump = lobes.at(static_cast<double>(x) / std::max(1, X - 1),
                                       static_cast<double>(y) / std::max(1, Y - 1),
                                       static_cast<double>(z) / std::max(1, Z - 1));
                if (r <= 1.0 + bump && inside_body(x, y, z, 0.93)) label = AnatomyLabel::liver;
                model.labels.at(x, y, z) = static_cast<std::uint8_t>(label);
            }

    // vessel tube, clipped to the liver so containment holds by construction
    double rv = std::clamp(0.045 * std::min(X, Y), 1.2, 3.0);
    double pad = rv + 1.0;
    Vec3d lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    for (const auto& p : model.vessel_curve) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    int x0 = std::max(0, static_cast<int>(std::floor(lo.x - pad)));
    int y0 = std::max(0, static_cast<int>(std::floor(lo.y - pad)));
    int z0 = std::max(0, static_cast<int>(std::floor(lo.z - pad)));
    int x1 = std::min(X - 1, static_cast<int>(std::ceil(hi.x + pad)));
    int y1 = std::min(Y - 1, static_cast<int>(std::ceil(hi.y + pad)));
    int z1 = std::min(Z - 1, static_cast<int>(std::ceil(hi.z + pad)));
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                if (model.labels.at(x, y, z) != static_cast<std::uint8_t>(AnatomyLabel::liver))
                    continue;
                Vec3d p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
                double best = 1e300;
                for (std::size_t i = 0; i + 1 < model.vessel_curve.size(); ++i) {
                    best = std::min(best, dist2_point_segment(p, model.vessel_curve[i],
                                                              model.vessel_curve[i + 1]));
                    if (best <= rv * rv) break;
                }
                if (best <= rv * rv)
                    model.labels.at(x, y, z) = static_cast<std::uint8_t>(AnatomyLabel::vessel);
            }
    return model;
}

constexpr double kCtTable[5] = {0.02, 0.35, 0.55, 0.65, 0.95};
constexpr double kMrTable[5] = {0.05, 0.45, 0.70, 0.35, 0.15};
constexpr double kMrCurveExponent = 0.7;

double mr_curve(double v) { return std::pow(std::max(v, 0.0), kMrCurveExponent); }

double table_range(const double (&table)[5]) {
    double lo = table[0], hi = table[0];
    for (double v : table) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return hi - lo;
}

// Separable Gaussian smoothing of each component, truncated at 3 sigma with
// per-position renormalization at the boundary.
void gaussian_smooth_in_place(VectorField& field, double sigma) {
    if (sigma <= 0) return;
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    for (int k = -radius; k <= radius; ++k)
        kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));

    const auto& dims = field.meta.dims;
    std::vector<float> scratch(field.data.size());
    for (int axis = 0; axis < 3; ++axis) {
        for (int z = 0; z < dims[2]; ++z)
            for (int y = 0; y < dims[1]; ++y)
                for (int x = 0; x < dims[0]; ++x) {
                    int coord[3] = {x, y, z};
                    double acc[3] = {0, 0, 0};
                    double wsum = 0;
                    for (int k = -radius; k <= radius; ++k) {
                        int c[3] = {coord[0], coord[1], coord[2]};
                        c[axis] += k;
                        if (c[axis] < 0 || c[axis] >= dims[axis]) continue;
                        double w = kernel[k + radius];
                        const float* v = field.vec(c[0], c[1], c[2]);
                        acc[0] += w * v[0];
                        acc[1] += w * v[1];
                        acc[2] += w * v[2];
                        wsum += w;
                    }
                    std::size_t base = 3 * voxel_index(field.meta, x, y, z);
                    for (int c = 0; c < 3; ++c)
                        scratch[base + c] = static_cast<float>(acc[c] / wsum);
                }
        field.data.swap(scratch);
    }
}

// Label volumes reuse MaskVolume storage but carry values 0..4, so they get
// their own validation and nearest-neighbor warp instead of the binary-mask
// paths.
void validate_labels(const LabelVolume& labels) {
    validate(labels.meta);
    std::size_t expected = static_cast<std::size_t>(labels.meta.dims[0]) * labels.meta.dims[1] *
                           labels.meta.dims[2];
    if (labels.labels.size() != expected)
        throw std::invalid_argument("phantom: label volume size does not match its grid");
    for (auto l : labels.labels)
        if (l > 4) throw std::invalid_argument("phantom: label value out of range");
}

LabelVolume nn_warp_labels(const LabelVolume& labels, const VectorField& u) {
    const auto& d = labels.meta.dims;
    LabelVolume out = make_mask(labels.meta);
    auto clamp_round = [](double v, int dim) {
        int i = static_cast<int>(std::lround(v));
        return i < 0 ? 0 : (i > dim - 1 ? dim - 1 : i);
    };
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                const float* uv = u.vec(x, y, z);
                out.at(x, y, z) = labels.at(clamp_round(x + uv[0], d[0]),
                                            clamp_round(y + uv[1], d[1]),
                                            clamp_round(z + uv[2], d[2]));
            }
    return out;
}

double max_displacement_norm(const VectorField& u) {
    double best = 0;
    for (std::size_t i = 0; i + 2 < u.data.size(); i += 3) {
        double n2 = static_cast<double>(u.data[i]) * u.data[i] +
                    static_cast<double>(u.data[i + 1]) * u.data[i + 1] +
                    static_cast<double>(u.data[i + 2]) * u.data[i + 2];
        best = std::max(best, n2);
    }
    return std::sqrt(best);
}

double min_interior_jacobian(const VectorField& u) {
    Volume jac = jacobian_determinant(u);
    const auto& dims = jac.meta.dims;
    double best = 1e300;
    for (int z = 1; z < dims[2] - 1; ++z)
        for (int y = 1; y < dims[1] - 1; ++y)
            for (int x = 1; x < dims[0] - 1; ++x) best = std::min(best, (double)jac.at(x, y, z));
    return best;
}

void scale_field(VectorField& v, double factor) {
    for (float& x : v.data) x = static_cast<float>(x * factor);
}

}  // namespace

void PhantomConfig::validate_or_throw() const {
    if (!(max_displacement_voxels >= 0.0) || max_displacement_voxels > 6.0)
        throw std::invalid_argument("phantom: max_displacement_voxels must be in [0, 6]");
    if (!(smoothness_sigma_voxels >= 0.0) || !std::isfinite(smoothness_sigma_voxels))
        throw std::invalid_argument("phantom: smoothness_sigma_voxels must be finite and >= 0");
}

LabelVolume gen_anatomy(std::uint64_t seed, const GridMeta& meta) {
    return build_anatomy(seed, meta).labels;
}

double ct_lookup(AnatomyLabel label) { return kCtTable[static_cast<int>(label)]; }
double mr_lookup(AnatomyLabel label) { return mr_curve(kMrTable[static_cast<int>(label)]); }

Volume render_ct(const LabelVolume& labels, std::uint64_t seed, bool with_noise) {
    validate_labels(labels);
    Volume out = make_volume(labels.meta);
    NormalSampler normal;
    std::mt19937_64 gen(sub_seed(seed, 21));
    double sigma = 0.02 * table_range(kCtTable);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        double v = kCtTable[labels.labels[i]];
        if (with_noise) v += sigma * normal(gen);
        out.values[i] = static_cast<float>(v);
    }
    return out;
}

Volume render_mr(const LabelVolume& labels, std::uint64_t seed, bool with_noise, bool with_bias) {
    validate_labels(labels);
    Volume out = make_volume(labels.meta);
    std::mt19937_64 gen(sub_seed(seed, 22));
    CoarseNoise bias(gen, 3, 0.15);
    NormalSampler normal;
    double sigma = 0.02 * table_range(kMrTable);
    const auto& dims = labels.meta.dims;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                double v = kMrTable[labels.at(x, y, z)];
                if (with_bias)
                    v *= 1.0 + bias.at(static_cast<double>(x) / std::max(1, dims[0] - 1),
                                       static_cast<double>(y) / std::max(1, dims[1] - 1),
                                       static_cast<double>(z) / std::max(1, dims[2] - 1));
                v = mr_curve(v);
                if (with_noise) v += sigma * normal(gen);
                out.at(x, y, z) = static_cast<float>(v);
            }
    return out;
}

VectorField gen_gt_svf(std::uint64_t seed, const GridMeta& meta, double max_magnitude_voxels,
                       double smoothness_sigma) {
    validate(meta);
    if (!(max_magnitude_voxels >= 0.0) || max_magnitude_voxels > 6.0)
        throw std::invalid_argument("phantom: max_magnitude_voxels must be in [0, 6]");
    if (!(smoothness_sigma >= 0.0) || !std::isfinite(smoothness_sigma))
        throw std::invalid_argument("phantom: smoothness_sigma must be finite and >= 0");

    VectorField v = make_field(meta);
    if (max_magnitude_voxels == 0.0) return v;

    std::mt19937_64 gen(sub_seed(seed, 31));
    NormalSampler normal;
    // Component noise is weighted by physical spacing: the coarsest axis
    // (superior-inferior at the default anisotropy) carries the dominant
    // share of the motion, so the voxel-norm cap translates into a stable
    // millimeter magnitude instead of being spent on thin-spacing axes.
    double max_spacing = std::max({meta.spacing[0], meta.spacing[1], meta.spacing[2]});
    double weight[3] = {meta.spacing[0] / max_spacing, meta.spacing[1] / max_spacing,
                        meta.spacing[2] / max_spacing};
    for (std::size_t i = 0; i < v.data.size(); ++i)
        v.data[i] = static_cast<float>(weight[i % 3] * normal(gen));
    gaussian_smooth_in_place(v, smoothness_sigma);

    // Hann window per axis: the deformation vanishes at the volume faces and
    // peaks over the central anatomy, so the magnitude cap is spent where the
    // structures are instead of at a random boundary lobe
    const auto& dims = meta.dims;
    auto axis_window = [](int i, int dim) {
        double s = std::sin(3.14159265358979323846 * i / (dim - 1));
        return s * s;
    };
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                double w = axis_window(x, dims[0]) * axis_window(y, dims[1]) *
                           axis_window(z, dims[2]);
                float* vec = v.vec(x, y, z);
                for (int c = 0; c < 3; ++c) vec[c] = static_cast<float>(vec[c] * w);
            }

    double raw = max_displacement_norm(v);
    if (raw <= 0) return make_field(meta);
    scale_field(v, max_magnitude_voxels / raw);

    // pull the integrated magnitude onto the target, then halve until both
    // the magnitude cap and the Jacobian floor hold
    for (int iter = 0; iter < 3; ++iter) {
        double m = max_displacement_norm(integrate_svf(v));
        if (m <= 0) break;
        scale_field(v, 0.995 * max_magnitude_voxels / m);
    }
    for (int halving = 0; halving < 60; ++halving) {
        VectorField u = integrate_svf(v);
        if (max_displacement_norm(u) <= max_magnitude_voxels && min_interior_jacobian(u) >= 0.2)
            return v;
        scale_field(v, 0.5);
    }
    return make_field(meta);
}

PhantomSample make_pair(std::uint64_t seed, const GridMeta& meta, const PhantomConfig& config) {
    validate(meta);
    config.validate_or_throw();
    const auto& dims = meta.dims;

    for (int attempt = 0; attempt < 8; ++attempt) {
        std::uint64_t actual = sub_seed(seed, static_cast<std::uint64_t>(attempt) * 0x10001ULL);
        if (attempt > 0)
            std::cerr << "phantom: seed " << seed << " produced degenerate anatomy; retrying ("
                      << attempt << ")\n";

        AnatomyModel model = build_anatomy(actual, meta);
        auto mask_of = [&](const LabelVolume& labels, bool vessel_only) {
            MaskVolume m = make_mask(labels.meta);
            for (std::size_t i = 0; i < labels.labels.size(); ++i) {
                auto l = labels.labels[i];
                bool in = vessel_only ? l == static_cast<std::uint8_t>(AnatomyLabel::vessel)
                                      : (l == static_cast<std::uint8_t>(AnatomyLabel::liver) ||
                                         l == static_cast<std::uint8_t>(AnatomyLabel::vessel));
                m.labels[i] = in ? 1 : 0;
            }
            return m;
        };

        MaskVolume fixed_liver = mask_of(model.labels, false);
        MaskVolume fixed_vessel = mask_of(model.labels, true);
        if (fixed_liver.foreground_count() < 300 || fixed_vessel.foreground_count() < 20) continue;

        // A field realization whose zero-crossing happens to pass through the
        // liver leaves the pair with almost no residual deformation — as
        // useless for this dataset as an empty liver. Redraw from the next
        // sub-stream until the mean surface motion carries a meaningful share
        // of the configured magnitude.
        PointSet fixed_surface = surface_points_from_mask(fixed_liver);
        double floor_mm = 0.6 * config.max_displacement_voxels;
        VectorField v_gt, u_plus;
        for (int field_try = 0; field_try < 12; ++field_try) {
            v_gt = gen_gt_svf(sub_seed(actual, 1 + 8 * static_cast<std::uint64_t>(field_try)),
                              meta, config.max_displacement_voxels,
                              config.smoothness_sigma_voxels);
            u_plus = integrate_svf(v_gt);
            if (config.max_displacement_voxels == 0.0) break;
            double mean_mm = 0;
            for (const auto& world : fixed_surface.points) {
                Point3 d = sample_field(u_plus, world_to_voxel(meta, world));
                double m2 = 0;
                for (int c = 0; c < 3; ++c) {
                    double mm = d[c] * meta.spacing[c];
                    m2 += mm * mm;
                }
                mean_mm += std::sqrt(m2);
            }
            mean_mm /= static_cast<double>(fixed_surface.size());
            if (mean_mm >= floor_mm) break;
        }
        VectorField u_minus = invert_svf(v_gt);

        LabelVolume warped_labels = nn_warp_labels(model.labels, u_minus);
        MaskVolume moving_liver = mask_of(warped_labels, false);
        MaskVolume moving_vessel = mask_of(warped_labels, true);
        if (moving_liver.foreground_count() < 300 || moving_vessel.foreground_count() < 10)
            continue;

        // candidate landmark filter: the carried point must stay clear of the
        // boundary and return to its origin under the inverse map
        auto landmark_ok = [&](const Point3& vox, Point3& carried) {
            Point3 d = sample_field(u_plus, vox);
            carried = {vox[0] + d[0], vox[1] + d[1], vox[2] + d[2]};
            for (int c = 0; c < 3; ++c)
                if (carried[c] < 1.5 || carried[c] > dims[c] - 2.5) return false;
            Point3 back = sample_field(u_minus, carried);
            double r2 = 0;
            for (int c = 0; c < 3; ++c) {
                double rc = carried[c] + back[c] - vox[c];
                r2 += rc * rc;
            }
            return r2 <= 0.25 * 0.25;
        };

        PointSet surface = surface_points_from_mask(fixed_liver);
        std::vector<std::pair<Point3, Point3>> liver_pairs;
        for (const auto& world : surface.points) {
            Point3 vox = world_to_voxel(meta, world);
            Point3 carried;
            if (landmark_ok(vox, carried)) liver_pairs.emplace_back(vox, carried);
        }
        std::mt19937_64 pick(sub_seed(actual, 4));
        for (std::size_t i = liver_pairs.size(); i > 1; --i)
            std::swap(liver_pairs[i - 1], liver_pairs[uniform_index(pick, i)]);
        if (liver_pairs.size() < 15) continue;
        liver_pairs.resize(15);

        std::vector<std::pair<Point3, Point3>> vessel_pairs;
        for (const auto& p : model.vessel_curve) {
            int vx = static_cast<int>(std::lround(p.x));
            int vy = static_cast<int>(std::lround(p.y));
            int vz = static_cast<int>(std::lround(p.z));
            if (vx < 0 || vx >= dims[0] || vy < 0 || vy >= dims[1] || vz < 0 || vz >= dims[2])
                continue;
            if (model.labels.at(vx, vy, vz) != static_cast<std::uint8_t>(AnatomyLabel::vessel))
                continue;
            Point3 vox{p.x, p.y, p.z};
            Point3 carried;
            if (landmark_ok(vox, carried)) vessel_pairs.emplace_back(vox, carried);
        }
        if (vessel_pairs.size() < 5) continue;

        PhantomSample sample;
        sample.seed = seed;
        sample.config = config;
        sample.fixed_mask = std::move(fixed_liver);
        sample.fixed_vessel = std::move(fixed_vessel);
        sample.moving_mask = std::move(moving_liver);
        sample.moving_vessel = std::move(moving_vessel);
        sample.gt_velocity = std::move(v_gt);
        sample.fixed_ct = render_ct(model.labels, sub_seed(actual, 2), config.intensity_noise);
        sample.moving_mr = render_mr(warped_labels, sub_seed(actual, 3), config.intensity_noise,
                                     config.mr_bias_field);
        for (const auto& [vox, carried] : liver_pairs) {
            sample.landmarks_fixed.points.push_back(voxel_to_world(meta, vox));
            sample.landmarks_moving.points.push_back(voxel_to_world(meta, carried));
        }
        std::size_t n = vessel_pairs.size();
        for (int i = 0; i < 5; ++i) {
            std::size_t idx = (n - 1) * static_cast<std::size_t>(i) / 4;
            sample.landmarks_fixed.points.push_back(voxel_to_world(meta, vessel_pairs[idx].first));
            sample.landmarks_moving.points.push_back(
                voxel_to_world(meta, vessel_pairs[idx].second));
        }
        return sample;
    }
    throw std::runtime_error("phantom: anatomy stayed degenerate after 8 seed offsets");
}

void write_sample(const PhantomSample& sample, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_volume(sample.fixed_ct, dir / "fixed_ct.mhd");
    write_volume(sample.moving_mr, dir / "moving_mr.mhd");
    write_mask(sample.fixed_mask, dir / "fixed_mask.mhd");
    write_mask(sample.moving_mask, dir / "moving_mask.mhd");
    write_mask(sample.fixed_vessel, dir / "fixed_vessel.mhd");
    write_mask(sample.moving_vessel, dir / "moving_vessel.mhd");
    write_points(sample.landmarks_fixed, dir / "landmarks_fixed.csv");
    write_points(sample.landmarks_moving, dir / "landmarks_moving.csv");
    write_field(sample.gt_velocity, dir / "gt_velocity.mhd");

    nlohmann::ordered_json j;
    j["seed"] = sample.seed;
    j["size"] = {sample.fixed_ct.meta.dims[0], sample.fixed_ct.meta.dims[1],
                 sample.fixed_ct.meta.dims[2]};
    j["spacing"] = {sample.fixed_ct.meta.spacing[0], sample.fixed_ct.meta.spacing[1],
                    sample.fixed_ct.meta.spacing[2]};
    j["origin"] = {sample.fixed_ct.meta.origin[0], sample.fixed_ct.meta.origin[1],
                   sample.fixed_ct.meta.origin[2]};
    j["max_displacement_voxels"] = sample.config.max_displacement_voxels;
    j["smoothness_sigma_voxels"] = sample.config.smoothness_sigma_voxels;
    j["intensity_noise"] = sample.config.intensity_noise;
    j["mr_bias_field"] = sample.config.mr_bias_field;

    std::ofstream out(dir / "sample.json", std::ios::binary);
    if (!out) throw std::runtime_error("phantom: cannot write " + (dir / "sample.json").string());
    out << j.dump(2) << "\n";
}

PhantomSample read_sample(const std::filesystem::path& dir) {
    PhantomSample sample;
    sample.fixed_ct = read_volume(dir / "fixed_ct.mhd");
    sample.moving_mr = read_volume(dir / "moving_mr.mhd");
    sample.fixed_mask = read_mask(dir / "fixed_mask.mhd");
    sample.moving_mask = read_mask(dir / "moving_mask.mhd");
    sample.fixed_vessel = read_mask(dir / "fixed_vessel.mhd");
    sample.moving_vessel = read_mask(dir / "moving_vessel.mhd");
    sample.landmarks_fixed = read_points(dir / "landmarks_fixed.csv");
    sample.landmarks_moving = read_points(dir / "landmarks_moving.csv");
    sample.gt_velocity = read_field(dir / "gt_velocity.mhd");

    std::ifstream in(dir / "sample.json", std::ios::binary);
    if (!in) throw std::runtime_error("phantom: cannot read " + (dir / "sample.json").string());
    nlohmann::json j = nlohmann::json::parse(in);
    sample.seed = j.at("seed").get<std::uint64_t>();
    sample.config.max_displacement_voxels = j.at("max_displacement_voxels").get<double>();
    sample.config.smoothness_sigma_voxels = j.at("smoothness_sigma_voxels").get<double>();
    sample.config.intensity_noise = j.at("intensity_noise").get<bool>();
    sample.config.mr_bias_field = j.at("mr_bias_field").get<bool>();
    return sample;
}

}  // namespace morphreg
