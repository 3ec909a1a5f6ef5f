#include "morphreg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "morphreg/diffeo.hpp"

namespace morphreg {

double dsc(const MaskVolume& a, const MaskVolume& b) {
    if (!(a.meta == b.meta)) throw std::invalid_argument("dsc: mask grids differ");
    std::size_t na = 0, nb = 0, overlap = 0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        na += a.labels[i] != 0;
        nb += b.labels[i] != 0;
        overlap += (a.labels[i] != 0) && (b.labels[i] != 0);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(overlap) / static_cast<double>(na + nb);
}

PointSet surface_points_from_mask(const MaskVolume& mask) {
    validate(mask);
    if (mask.foreground_count() == 0)
        throw std::domain_error("surface extraction needs a nonempty mask");

    const auto& d = mask.meta.dims;
    auto background = [&](int x, int y, int z) {
        if (x < 0 || x >= d[0] || y < 0 || y >= d[1] || z < 0 || z >= d[2]) return true;
        return mask.at(x, y, z) == 0;
    };
    PointSet out;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                if (!mask.at(x, y, z)) continue;
                if (background(x - 1, y, z) || background(x + 1, y, z) ||
                    background(x, y - 1, z) || background(x, y + 1, z) ||
                    background(x, y, z - 1) || background(x, y, z + 1))
                    out.points.push_back(
                        voxel_to_world(mask.meta, {double(x), double(y), double(z)}));
            }
    return out;
}

namespace {

double directed_mean_distance(const PointSet& from, const PointSet& to) {
    double total = 0.0;
    for (const auto& p : from.points) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to.points) {
            double d2 = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                        (p[2] - q[2]) * (p[2] - q[2]);
            if (d2 < best) best = d2;
        }
        total += std::sqrt(best);
    }
    return total / static_cast<double>(from.size());
}

}  // namespace

double msd(const PointSet& a, const PointSet& b) {
    if (a.empty() || b.empty()) throw std::domain_error("msd needs non-empty point sets");
    return 0.5 * (directed_mean_distance(a, b) + directed_mean_distance(b, a));
}

double tre(const PointSet& a, const PointSet& b) {
    if (a.size() != b.size()) throw std::invalid_argument("tre needs index-paired sets");
    if (a.empty()) throw std::domain_error("tre needs non-empty sets");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& p = a.points[i];
        const auto& q = b.points[i];
        total += std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                           (p[2] - q[2]) * (p[2] - q[2]));
    }
    return total / static_cast<double>(a.size());
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz iteration).
double beta_continued_fraction(double a, double b, double x) {
    const double tiny = 1e-30;
    const double eps = 1e-14;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("beta parameters must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

TTestResult paired_t_test(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("paired t-test needs equal lengths");
    if (x.size() < 2) throw std::invalid_argument("paired t-test needs n >= 2");

    const std::size_t n = x.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i] - y[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = x[i] - y[i] - mean;
        ss += d * d;
    }
    double sd = std::sqrt(ss / static_cast<double>(n - 1));

    TTestResult result;
    if (sd == 0.0) {
        result.degenerate = true;
        if (mean == 0.0) {
            result.t = 0.0;
            result.p = 1.0;
        } else {
            result.t = mean > 0 ? std::numeric_limits<double>::infinity()
                                : -std::numeric_limits<double>::infinity();
            result.p = 0.0;
        }
        return result;
    }
    double df = static_cast<double>(n - 1);
    result.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    result.p = regularized_incomplete_beta(0.5 * df, 0.5, df / (df + result.t * result.t));
    return result;
}

CaseMetrics evaluate_case(const CaseData& data, const VectorField& displacement) {
    CaseMetrics out;

    auto warped_liver = warp_mask(data.moving_liver, displacement);
    auto warped_vessel = warp_mask(data.moving_vessel, displacement);
    out.dsc_liver = dsc(warped_liver, data.fixed_liver);
    out.dsc_vessel = dsc(warped_vessel, data.fixed_vessel);
    out.msd_liver_mm =
        msd(surface_points_from_mask(warped_liver), surface_points_from_mask(data.fixed_liver));

    // Landmarks drawn on the moving image follow the inverse of the pull-back.
    bool zero_field = true;
    for (float c : displacement.data)
        if (c != 0.0f) {
            zero_field = false;
            break;
        }
    PointSet transported;
    if (zero_field) {
        transported = data.moving_landmarks;
    } else {
        auto inverse = invert_displacement(displacement);
        transported.points.reserve(data.moving_landmarks.size());
        for (const auto& world : data.moving_landmarks.points) {
            Point3 voxel = world_to_voxel(displacement.meta, world);
            Point3 shift = sample_field(inverse, voxel);
            transported.points.push_back(voxel_to_world(
                displacement.meta,
                {voxel[0] + shift[0], voxel[1] + shift[1], voxel[2] + shift[2]}));
        }
    }
    out.tre_mm = tre(transported, data.fixed_landmarks);
    out.jacobian_negative_fraction =
        1.0 - positive_jacobian_fraction(jacobian_determinant(displacement));
    return out;
}

AggregateStats aggregate(const std::vector<double>& values) {
    AggregateStats stats;
    if (values.empty()) return stats;
    for (double v : values) stats.mean += v;
    stats.mean /= static_cast<double>(values.size());
    if (values.size() < 2) return stats;
    double ss = 0.0;
    for (double v : values) ss += (v - stats.mean) * (v - stats.mean);
    stats.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return stats;
}

std::string format_mean_std(const AggregateStats& stats, int decimals) {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%.*f ± %.*f", decimals, stats.mean, decimals,
                  stats.stddev);
    return buf;
}

}  // namespace morphreg
