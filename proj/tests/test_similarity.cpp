// Similarity loss tests.
//
// The MIND oracle below recomputes descriptors with plain nested loops (own
// Gaussian weights, own clamping) so any indexing or normalization slip in
// the library shows up as a mismatch. The NCC oracle walks every window and
// recomputes mean/variance/correlation directly.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "morphreg/grid.hpp"
#include "morphreg/similarity.hpp"
#include "support.hpp"

using namespace morphreg;

namespace {

// Independent MIND computation for one voxel; eps passed explicitly.
std::vector<double> oracle_mind_voxel(const Volume& vol, int x, int y, int z, int radius,
                                      const std::vector<std::array<int, 3>>& offsets, double eps) {
    const auto& d = vol.meta.dims;
    auto clamp_at = [&](int xx, int yy, int zz) {
        return vol.at(std::clamp(xx, 0, d[0] - 1), std::clamp(yy, 0, d[1] - 1),
                      std::clamp(zz, 0, d[2] - 1));
    };
    double sigma = radius / 2.0;
    std::vector<double> ssd;
    for (const auto& off : offsets) {
        double num = 0.0, wsum = 0.0;
        for (int dz = -radius; dz <= radius; ++dz)
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    double w = std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * sigma * sigma));
                    double diff = clamp_at(x + dx, y + dy, z + dz) -
                                  clamp_at(x + off[0] + dx, y + off[1] + dy, z + off[2] + dz);
                    num += w * diff * diff;
                    wsum += w;
                }
        ssd.push_back(num / wsum);
    }
    double mean = 0.0;
    for (double s : ssd) mean += s;
    mean /= static_cast<double>(ssd.size());
    double variance = std::max(mean, eps);
    std::vector<double> desc;
    double peak = 0.0;
    for (double s : ssd) {
        desc.push_back(std::exp(-s / variance));
        peak = std::max(peak, desc.back());
    }
    for (double& v : desc) v /= peak;
    return desc;
}

// Independent windowed NCC: walk every voxel, gather its truncated window,
// compute moments longhand.
double oracle_ncc_loss(const Volume& a, const Volume& b, int window) {
    const auto& d = a.meta.dims;
    int h = window / 2;
    double total = 0.0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                std::vector<double> wa, wb;
                for (int dz = -h; dz <= h; ++dz)
                    for (int dy = -h; dy <= h; ++dy)
                        for (int dx = -h; dx <= h; ++dx) {
                            int xx = x + dx, yy = y + dy, zz = z + dz;
                            if (xx < 0 || xx >= d[0] || yy < 0 || yy >= d[1] || zz < 0 ||
                                zz >= d[2])
                                continue;
                            wa.push_back(a.at(xx, yy, zz));
                            wb.push_back(b.at(xx, yy, zz));
                        }
                double n = static_cast<double>(wa.size());
                double ma = 0, mb = 0;
                for (std::size_t i = 0; i < wa.size(); ++i) {
                    ma += wa[i];
                    mb += wb[i];
                }
                ma /= n;
                mb /= n;
                double va = 0, vb = 0, cov = 0;
                for (std::size_t i = 0; i < wa.size(); ++i) {
                    va += (wa[i] - ma) * (wa[i] - ma);
                    vb += (wb[i] - mb) * (wb[i] - mb);
                    cov += (wa[i] - ma) * (wb[i] - mb);
                }
                va /= n;
                vb /= n;
                cov /= n;
                total += cov / std::sqrt(std::max(va, 1e-5) * std::max(vb, 1e-5));
            }
    return -total / static_cast<double>(a.meta.voxel_count());
}

}  // namespace

TEST_CASE("mind config validation") {
    MindConfig bad;
    bad.patch_radius = 0;
    CHECK_THROWS_AS(bad.validate_or_throw(), std::invalid_argument);
    MindConfig few;
    few.neighborhood = {{{1, 0, 0}}};
    CHECK_THROWS_AS(few.validate_or_throw(), std::invalid_argument);
    CHECK_NOTHROW(MindConfig{}.validate_or_throw());
}

TEST_CASE("constant volume gives all-ones descriptors") {
    GridMeta meta{{5, 5, 5}, {1, 1, 1}, {0, 0, 0}};
    auto desc = mind_descriptor(make_volume(meta, 0.7f));
    for (float c : desc.data) CHECK(c == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("descriptors match the brute-force oracle") {
    GridMeta meta{{5, 5, 5}, {1, 1, 1}, {0, 0, 0}};
    MindConfig cfg;

    // textured random volume
    auto vol = test_support::random_volume(meta, 71, 0.0, 1.0);
    double eps = mind_variance_floor(vol, cfg);
    auto desc = mind_descriptor(vol, cfg);
    for (int z = 0; z < 5; ++z)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                auto want = oracle_mind_voxel(vol, x, y, z, 1, cfg.neighborhood, eps);
                const float* got = desc.at(x, y, z);
                for (int k = 0; k < 6; ++k)
                    CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-6));
            }

    // single bright voxel on a zero background
    auto spike = make_volume(meta);
    spike.at(2, 2, 2) = 1.0f;
    double eps2 = mind_variance_floor(spike, cfg);
    auto sdesc = mind_descriptor(spike, cfg);
    for (int z = 0; z < 5; ++z)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                auto want = oracle_mind_voxel(spike, x, y, z, 1, cfg.neighborhood, eps2);
                const float* got = sdesc.at(x, y, z);
                for (int k = 0; k < 6; ++k)
                    CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-6));
            }
    // at the spike itself all six probes see the same patch difference
    const float* center = sdesc.at(2, 2, 2);
    for (int k = 0; k < 6; ++k) CHECK(center[k] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("descriptor channels lie in (0,1] with per-voxel max 1") {
    GridMeta meta{{6, 6, 6}, {1, 1, 1}, {0, 0, 0}};
    auto vol = test_support::smooth_volume(meta, 5);
    auto desc = mind_descriptor(vol);
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) {
                const float* c = desc.at(x, y, z);
                float peak = 0.0f;
                for (int k = 0; k < 6; ++k) {
                    CHECK(c[k] > 0.0f);
                    CHECK(c[k] <= 1.0f);
                    peak = std::max(peak, c[k]);
                }
                CHECK(peak == doctest::Approx(1.0).epsilon(1e-7));
            }
}

TEST_CASE("descriptors are invariant to affine intensity remaps") {
    GridMeta meta{{8, 8, 8}, {1, 1, 1}, {0, 0, 0}};
    auto vol = test_support::smooth_volume(meta, 17);

    auto remapped = vol;
    for (auto& v : remapped.values) v = 0.3f + 2.0f * v;
    auto d1 = mind_descriptor(vol);
    auto d2 = mind_descriptor(remapped);
    for (std::size_t i = 0; i < d1.data.size(); ++i)
        CHECK(d2.data[i] == doctest::Approx(d1.data[i]).epsilon(1e-5));

    auto doubled = vol;
    for (auto& v : doubled.values) v = 2.0f * v;
    auto d3 = mind_descriptor(doubled);
    for (std::size_t i = 0; i < d1.data.size(); ++i)
        CHECK(d3.data[i] == doctest::Approx(d1.data[i]).epsilon(1e-5));
}

TEST_CASE("mind loss basics: zero on identical inputs, symmetric, grid-checked") {
    GridMeta meta{{6, 6, 6}, {1, 1, 1}, {0, 0, 0}};
    auto a = test_support::smooth_volume(meta, 40);
    auto b = test_support::smooth_volume(meta, 41);
    CHECK(mind_loss(a, a) == 0.0);
    CHECK(mind_loss(a, b) == doctest::Approx(mind_loss(b, a)).epsilon(1e-12));
    auto other = make_volume(GridMeta{{5, 6, 6}, {1, 1, 1}, {0, 0, 0}});
    CHECK_THROWS_AS(mind_loss(a, other), std::invalid_argument);
}

TEST_CASE("mind loss on a random pair matches descriptor-then-ssd by hand") {
    GridMeta meta{{4, 4, 4}, {1, 1, 1}, {0, 0, 0}};
    MindConfig cfg;
    auto a = test_support::random_volume(meta, 90, 0.0, 1.0);
    auto b = test_support::random_volume(meta, 91, 0.0, 1.0);
    double eps_a = mind_variance_floor(a, cfg);
    double eps_b = mind_variance_floor(b, cfg);
    double acc = 0.0;
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                auto da = oracle_mind_voxel(a, x, y, z, 1, cfg.neighborhood, eps_a);
                auto db = oracle_mind_voxel(b, x, y, z, 1, cfg.neighborhood, eps_b);
                for (int k = 0; k < 6; ++k) acc += (da[k] - db[k]) * (da[k] - db[k]);
            }
    acc /= 4.0 * 4.0 * 4.0 * 6.0;
    CHECK(mind_loss(a, b, cfg) == doctest::Approx(acc).epsilon(1e-6));
}

TEST_CASE("mind loss survives monotone intensity remaps far better than shuffles") {
    GridMeta meta{{12, 12, 12}, {1, 1, 1}, {0, 0, 0}};
    auto vol = test_support::smooth_volume(meta, 300);

    auto gamma = vol;
    for (auto& v : gamma.values) v = v * v;   // increasing remap
    auto inverted = vol;
    for (auto& v : inverted.values) v = 1.0f - v;   // decreasing remap

    double base_up = mind_loss(vol, gamma);
    double base_down = mind_loss(vol, inverted);
    double scrambled = mind_loss(vol, test_support::shuffle_volume(vol, 301));
    CHECK(base_up <= 0.1 * scrambled);
    CHECK(base_down <= 0.1 * scrambled);
}

TEST_CASE("mind prefers a remapped twin over unrelated textures across seeds") {
    GridMeta meta{{10, 10, 10}, {1, 1, 1}, {0, 0, 0}};
    int wins = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        auto vol = test_support::smooth_volume(meta, 1000 + t);
        auto remap = vol;
        if (t % 2 == 0)
            for (auto& v : remap.values) v = std::sqrt(v);
        else
            for (auto& v : remap.values) v = 1.0f - v * v;
        auto stranger = test_support::smooth_volume(meta, 5000 + t);
        if (mind_loss(vol, remap) < mind_loss(vol, stranger)) ++wins;
    }
    CHECK(double(wins) / trials >= 0.95);
}

TEST_CASE("ncc of an image with itself is perfect correlation") {
    GridMeta meta{{9, 9, 9}, {1, 1, 1}, {0, 0, 0}};
    auto vol = test_support::smooth_volume(meta, 61);
    CHECK(ncc_loss(vol, vol, 9) == doctest::Approx(-1.0).epsilon(1e-3));
}

TEST_CASE("ncc is invariant to positive affine intensity remaps") {
    GridMeta meta{{9, 9, 9}, {1, 1, 1}, {0, 0, 0}};
    auto vol = test_support::smooth_volume(meta, 62);
    auto remap = vol;
    for (auto& v : remap.values) v = 1.7f * v + 0.4f;
    CHECK(ncc_loss(vol, remap, 9) == doctest::Approx(ncc_loss(vol, vol, 9)).epsilon(1e-3));
}

TEST_CASE("ncc matches the per-window oracle") {
    GridMeta meta{{5, 5, 5}, {1, 1, 1}, {0, 0, 0}};
    auto a = test_support::random_volume(meta, 81, 0.0, 1.0);
    auto b = test_support::random_volume(meta, 82, 0.0, 1.0);
    CHECK(ncc_loss(a, b, 3) == doctest::Approx(oracle_ncc_loss(a, b, 3)).epsilon(1e-6));
    CHECK(ncc_loss(a, b, 5) == doctest::Approx(oracle_ncc_loss(a, b, 5)).epsilon(1e-6));
    // window larger than the volume: every window truncates
    CHECK(ncc_loss(a, b, 9) == doctest::Approx(oracle_ncc_loss(a, b, 9)).epsilon(1e-6));
}

TEST_CASE("ncc improves monotonically as a shifted copy comes back into alignment") {
    GridMeta meta{{24, 24, 24}, {1, 1, 1}, {0, 0, 0}};
    auto vol = test_support::smooth_volume(meta, 63, 3);
    auto shifted = [&](int s) {
        auto out = make_volume(meta);
        for (int z = 0; z < 24; ++z)
            for (int y = 0; y < 24; ++y)
                for (int x = 0; x < 24; ++x)
                    out.at(x, y, z) = vol.at(std::clamp(x - s, 0, 23), y, z);
        return out;
    };
    double prev = 1e9;
    for (int s : {3, 2, 1, 0}) {
        double loss = ncc_loss(vol, shifted(s), 9);
        CHECK(loss < prev);
        prev = loss;
    }
}

TEST_CASE("ncc validates window and grids") {
    GridMeta meta{{5, 5, 5}, {1, 1, 1}, {0, 0, 0}};
    auto vol = make_volume(meta, 1.0f);
    CHECK_THROWS_AS(ncc_loss(vol, vol, 4), std::invalid_argument);
    CHECK_THROWS_AS(ncc_loss(vol, vol, 1), std::invalid_argument);
    auto other = make_volume(GridMeta{{5, 5, 6}, {1, 1, 1}, {0, 0, 0}});
    CHECK_THROWS_AS(ncc_loss(vol, other, 3), std::invalid_argument);
}
