// Evaluation metric tests.
//
// The t-test oracle integrates the Student-t density with Simpson's rule at
// high resolution; the surface/MSD oracles are plain double loops. The
// whole-case test builds a ground-truth deformation pair by hand — pull back
// the fixed anatomy with the inverse flow, carry landmarks with the forward
// flow — and checks that evaluating under the forward field collapses every
// error metric.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "morphreg/diffeo.hpp"
#include "morphreg/grid.hpp"
#include "morphreg/metrics.hpp"
#include "support.hpp"

using namespace morphreg;

namespace {

// Two-tailed p for the Student-t by direct quadrature of the density.
double oracle_t_pvalue(double t, int df) {
    double at = std::abs(t);
    double log_norm = std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) -
                      0.5 * std::log(df * 3.14159265358979323846);
    auto density = [&](double s) {
        return std::exp(log_norm - 0.5 * (df + 1.0) * std::log1p(s * s / df));
    };
    // Simpson over [0, |t|]
    const int panels = 20000;
    double h = at / panels;
    double sum = density(0.0) + density(at);
    for (int i = 1; i < panels; ++i) sum += density(i * h) * (i % 2 ? 4.0 : 2.0);
    double integral = sum * h / 3.0;
    return 2.0 * (0.5 - integral);
}

MaskVolume ball_mask(const GridMeta& meta, Point3 center, double radius) {
    auto mask = make_mask(meta);
    for (int z = 0; z < meta.dims[2]; ++z)
        for (int y = 0; y < meta.dims[1]; ++y)
            for (int x = 0; x < meta.dims[0]; ++x) {
                double r2 = (x - center[0]) * (x - center[0]) +
                            (y - center[1]) * (y - center[1]) +
                            (z - center[2]) * (z - center[2]);
                if (r2 <= radius * radius) mask.at(x, y, z) = 1;
            }
    return mask;
}

}  // namespace

TEST_CASE("dice coefficient hand values") {
    GridMeta meta{{4, 4, 4}, {1, 1, 1}, {0, 0, 0}};
    auto a = make_mask(meta);
    a.at(0, 0, 0) = 1;
    a.at(1, 0, 0) = 1;
    auto b = make_mask(meta);
    b.at(1, 0, 0) = 1;
    b.at(2, 0, 0) = 1;
    CHECK(dsc(a, a) == 1.0);
    CHECK(dsc(a, b) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(dsc(a, b) == doctest::Approx(dsc(b, a)).epsilon(1e-15));

    auto c = make_mask(meta);
    c.at(3, 3, 3) = 1;
    CHECK(dsc(a, c) == 0.0);
    CHECK(dsc(make_mask(meta), make_mask(meta)) == 1.0);   // both empty

    auto other = make_mask(GridMeta{{4, 4, 5}, {1, 1, 1}, {0, 0, 0}});
    CHECK_THROWS_AS(dsc(a, other), std::invalid_argument);
}

TEST_CASE("surface extraction: single voxel, embedded block, boundary rule") {
    GridMeta meta{{5, 5, 5}, {0.97, 0.97, 3.0}, {0, 0, 0}};
    auto single = make_mask(meta);
    single.at(2, 3, 1) = 1;
    auto pts = surface_points_from_mask(single);
    REQUIRE(pts.size() == 1);
    CHECK(pts.points[0][0] == doctest::Approx(2 * 0.97).epsilon(1e-12));
    CHECK(pts.points[0][1] == doctest::Approx(3 * 0.97).epsilon(1e-12));
    CHECK(pts.points[0][2] == doctest::Approx(1 * 3.0).epsilon(1e-12));

    // solid 3x3x3 block away from the boundary: all but the center voxel
    auto block = make_mask(meta);
    for (int z = 1; z <= 3; ++z)
        for (int y = 1; y <= 3; ++y)
            for (int x = 1; x <= 3; ++x) block.at(x, y, z) = 1;
    CHECK(surface_points_from_mask(block).size() == 26);

    // fully filled grid: the boundary counts as background, interior is not surface
    GridMeta small{{3, 3, 3}, {1, 1, 1}, {0, 0, 0}};
    auto full = make_mask(small, 1);
    CHECK(surface_points_from_mask(full).size() == 26);

    CHECK_THROWS_AS(surface_points_from_mask(make_mask(meta)), std::domain_error);
}

TEST_CASE("surface extraction matches a brute-force neighbor scan") {
    GridMeta meta{{10, 10, 10}, {1, 1, 2}, {0, 0, 0}};
    auto blob = ball_mask(meta, {5, 4, 5}, 3.2);
    auto pts = surface_points_from_mask(blob);

    std::vector<Point3> oracle;
    for (int z = 0; z < 10; ++z)
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) {
                if (!blob.at(x, y, z)) continue;
                bool boundary = false;
                const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                       {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                for (const auto& o : off) {
                    int xx = x + o[0], yy = y + o[1], zz = z + o[2];
                    if (xx < 0 || xx > 9 || yy < 0 || yy > 9 || zz < 0 || zz > 9 ||
                        !blob.at(xx, yy, zz)) {
                        boundary = true;
                        break;
                    }
                }
                if (boundary) oracle.push_back({x * 1.0, y * 1.0, z * 2.0});
            }
    REQUIRE(pts.size() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i)
        for (int c = 0; c < 3; ++c)
            CHECK(pts.points[i][c] == doctest::Approx(oracle[i][c]).epsilon(1e-12));
}

TEST_CASE("mean surface distance hand values and oracle") {
    PointSet a, b;
    a.points = {{0, 0, 0}};
    b.points = {{3, 0, 0}};
    CHECK(msd(a, a) == 0.0);
    CHECK(msd(a, b) == doctest::Approx(3.0).epsilon(1e-12));

    std::mt19937_64 gen(808);
    PointSet ra, rb;
    for (int i = 0; i < 40; ++i) {
        ra.points.push_back({uniform_range(gen, -10, 10), uniform_range(gen, -10, 10),
                             uniform_range(gen, -10, 10)});
        rb.points.push_back({uniform_range(gen, -10, 10), uniform_range(gen, -10, 10),
                             uniform_range(gen, -10, 10)});
    }
    auto directed = [](const PointSet& from, const PointSet& to) {
        double total = 0;
        for (const auto& p : from.points) {
            double best = 1e300;
            for (const auto& q : to.points) {
                double d2 = 0;
                for (int c = 0; c < 3; ++c) d2 += (p[c] - q[c]) * (p[c] - q[c]);
                best = std::min(best, d2);
            }
            total += std::sqrt(best);
        }
        return total / from.size();
    };
    CHECK(msd(ra, rb) ==
          doctest::Approx(0.5 * (directed(ra, rb) + directed(rb, ra))).epsilon(1e-9));
    CHECK(msd(ra, rb) == doctest::Approx(msd(rb, ra)).epsilon(1e-12));
    PointSet empty;
    CHECK_THROWS_AS(msd(empty, a), std::domain_error);
}

TEST_CASE("target registration error over index-matched pairs") {
    PointSet a, b;
    a.points = {{0, 0, 0}, {10, 0, 0}};
    b.points = {{0, 0, 5}, {10, 0, 0}};
    CHECK(tre(a, b) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(tre(a, a) == 0.0);

    PointSet shorter;
    shorter.points = {{0, 0, 0}};
    CHECK_THROWS_AS(tre(a, shorter), std::invalid_argument);
}

TEST_CASE("mean/std aggregation and table-cell formatting") {
    std::vector<double> vals{26.0, 23.5, 29.2};
    auto stats = aggregate(vals);
    double mean = (26.0 + 23.5 + 29.2) / 3.0;
    CHECK(stats.mean == doctest::Approx(mean).epsilon(1e-12));
    double ss = 0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    CHECK(stats.stddev == doctest::Approx(std::sqrt(ss / 2.0)).epsilon(1e-12));

    CHECK(format_mean_std({26.238, 2.769}) == "26.238 ± 2.769");
    CHECK(format_mean_std({8.4923, 1.0578}) == "8.492 ± 1.058");
}

TEST_CASE("paired t-test: degenerate, hand value, and quadrature agreement") {
    std::vector<double> x{1, 2, 3}, same{1, 2, 3};
    auto deg = paired_t_test(x, same);
    CHECK(deg.degenerate);
    CHECK(deg.p == 1.0);
    CHECK(deg.t == 0.0);

    // differences (1, 2, 3): t = 2 sqrt(3), df = 2
    std::vector<double> y{0, 0, 0};
    auto res = paired_t_test(x, y);
    CHECK(res.t == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-12));
    CHECK(res.p == doctest::Approx(0.0742).epsilon(2e-3));
    CHECK(res.p == doctest::Approx(oracle_t_pvalue(res.t, 2)).epsilon(1e-6));
    CHECK(!res.degenerate);

    // constant nonzero shift: zero variance, certain difference
    std::vector<double> shifted{2, 3, 4};
    auto sure = paired_t_test(shifted, x);
    CHECK(sure.degenerate);
    CHECK(sure.p == 0.0);

    CHECK_THROWS_AS(paired_t_test({1.0}, {2.0}), std::invalid_argument);
    CHECK_THROWS_AS(paired_t_test({1.0, 2.0}, {2.0}), std::invalid_argument);
}

TEST_CASE("t-test matches the quadrature oracle across sizes") {
    std::mt19937_64 gen(17);
    for (int n : {5, 10, 25, 50}) {
        std::vector<double> x(n), y(n);
        for (int i = 0; i < n; ++i) {
            x[i] = uniform_range(gen, 0, 2) + 0.4;   // genuine shift
            y[i] = uniform_range(gen, 0, 2);
        }
        auto res = paired_t_test(x, y);
        CHECK(res.p > 0.0);
        CHECK(res.p <= 1.0);
        CHECK(res.p == doctest::Approx(oracle_t_pvalue(res.t, n - 1)).epsilon(1e-6));
    }
}

TEST_CASE("incomplete beta respects its reflection identity") {
    for (double x : {0.1, 0.25, 0.5, 0.9}) {
        double lhs = regularized_incomplete_beta(1.0, 0.5, x);
        double rhs = 1.0 - regularized_incomplete_beta(0.5, 1.0, 1.0 - x);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
    CHECK(regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0);
    CHECK(regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0);
}

TEST_CASE("case evaluation: identity field reproduces the pre-registration row") {
    GridMeta meta{{20, 20, 20}, {1, 1, 2}, {0, 0, 0}};
    CaseData data;
    data.fixed_liver = ball_mask(meta, {10, 10, 10}, 6);
    data.fixed_vessel = ball_mask(meta, {8, 10, 10}, 2);
    data.moving_liver = ball_mask(meta, {11, 10, 10}, 6);
    data.moving_vessel = ball_mask(meta, {9, 10, 10}, 2);
    data.fixed_landmarks.points = {{10, 10, 20}, {6, 10, 20}};
    data.moving_landmarks.points = {{11, 10, 20}, {7, 10, 20}};

    auto row = evaluate_case(data, make_field(meta));
    CHECK(row.dsc_liver == doctest::Approx(dsc(data.moving_liver, data.fixed_liver)).epsilon(1e-12));
    CHECK(row.dsc_vessel ==
          doctest::Approx(dsc(data.moving_vessel, data.fixed_vessel)).epsilon(1e-12));
    CHECK(row.tre_mm ==
          doctest::Approx(tre(data.moving_landmarks, data.fixed_landmarks)).epsilon(1e-12));
    CHECK(row.msd_liver_mm == doctest::Approx(msd(surface_points_from_mask(data.moving_liver),
                                                  surface_points_from_mask(data.fixed_liver)))
                                  .epsilon(1e-12));
    CHECK(row.jacobian_negative_fraction == 0.0);
}

TEST_CASE("case evaluation: the ground-truth field collapses every error") {
    GridMeta meta{{24, 24, 24}, {1, 1, 2}, {0, 0, 0}};
    auto v = test_support::smooth_field(meta, 2.0, 2717);
    auto fwd = integrate_svf(v, IntegrationConfig{7});
    auto bwd = invert_svf(v, IntegrationConfig{7});

    CaseData data;
    data.fixed_liver = ball_mask(meta, {12, 12, 12}, 7);
    data.fixed_vessel = ball_mask(meta, {9, 12, 12}, 2.5);
    data.moving_liver = warp_mask(data.fixed_liver, bwd);
    data.moving_vessel = warp_mask(data.fixed_vessel, bwd);

    std::mt19937_64 gen(5);
    for (int i = 0; i < 8; ++i) {
        Point3 vox{uniform_range(gen, 7, 17), uniform_range(gen, 7, 17),
                   uniform_range(gen, 7, 17)};
        Point3 shift = sample_field(fwd, vox);
        data.fixed_landmarks.points.push_back(voxel_to_world(meta, vox));
        data.moving_landmarks.points.push_back(voxel_to_world(
            meta, {vox[0] + shift[0], vox[1] + shift[1], vox[2] + shift[2]}));
    }

    auto pre = evaluate_case(data, make_field(meta));
    auto post = evaluate_case(data, fwd);
    CHECK(post.tre_mm <= 1.0);
    CHECK(post.dsc_liver >= 0.95);
    CHECK(post.tre_mm < pre.tre_mm);
    CHECK(post.dsc_liver > pre.dsc_liver);
    CHECK(post.msd_liver_mm < pre.msd_liver_mm);
    CHECK(post.jacobian_negative_fraction == 0.0);

    // aggregate recomputability over the two rows
    std::vector<double> tre_vals{pre.tre_mm, post.tre_mm};
    auto stats = aggregate(tre_vals);
    double mean = (pre.tre_mm + post.tre_mm) / 2.0;
    CHECK(stats.mean == doctest::Approx(mean).epsilon(1e-9));
}
