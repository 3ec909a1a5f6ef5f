#include "morphreg/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace morphreg {

std::vector<std::array<int, 3>> MindConfig::default_neighborhood() {
    return {{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};
}

void MindConfig::validate_or_throw() const {
    if (patch_radius < 1) throw std::invalid_argument("patch radius must be >= 1");
    if (neighborhood.size() < 6) throw std::invalid_argument("neighborhood needs >= 6 offsets");
    if (variance_floor < 0.0) throw std::invalid_argument("variance floor must be >= 0");
}

namespace {

// Normalized Gaussian patch weights with sigma = patch_radius / 2.
std::vector<double> patch_weights(int radius) {
    int side = 2 * radius + 1;
    std::vector<double> w(static_cast<std::size_t>(side) * side * side);
    double sigma = radius / 2.0;
    double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    double total = 0.0;
    std::size_t i = 0;
    for (int dz = -radius; dz <= radius; ++dz)
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx, ++i) {
                w[i] = std::exp(-(double(dx) * dx + double(dy) * dy + double(dz) * dz) * inv2s2);
                total += w[i];
            }
    for (auto& x : w) x /= total;
    return w;
}

inline int clampi(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

}  // namespace

double mind_variance_floor(const Volume& vol, const MindConfig& cfg) {
    if (cfg.variance_floor > 0.0) return cfg.variance_floor;
    double mean = 0.0;
    for (float v : vol.values) mean += v;
    mean /= static_cast<double>(vol.values.size());
    double var = 0.0;
    for (float v : vol.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(vol.values.size());
    return std::max(1e-5 * var, 1e-30);
}

DescriptorField mind_descriptor(const Volume& vol, const MindConfig& cfg) {
    cfg.validate_or_throw();
    validate(vol);

    const auto& d = vol.meta.dims;
    const int K = static_cast<int>(cfg.neighborhood.size());
    const int r = cfg.patch_radius;
    const auto weights = patch_weights(r);
    const double eps = mind_variance_floor(vol, cfg);

    DescriptorField out{vol.meta, K,
                        std::vector<float>(static_cast<std::size_t>(K) * vol.meta.voxel_count())};

    std::vector<double> ssd(K);
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                for (int k = 0; k < K; ++k) {
                    const auto& off = cfg.neighborhood[k];
                    double acc = 0.0;
                    std::size_t wi = 0;
                    for (int dz = -r; dz <= r; ++dz)
                        for (int dy = -r; dy <= r; ++dy)
                            for (int dx = -r; dx <= r; ++dx, ++wi) {
                                double a = vol.at(clampi(x + dx, d[0] - 1), clampi(y + dy, d[1] - 1),
                                                  clampi(z + dz, d[2] - 1));
                                double b = vol.at(clampi(x + off[0] + dx, d[0] - 1),
                                                  clampi(y + off[1] + dy, d[1] - 1),
                                                  clampi(z + off[2] + dz, d[2] - 1));
                                acc += weights[wi] * (a - b) * (a - b);
                            }
                    ssd[k] = acc;
                }
                double mean_ssd = 0.0;
                for (double s : ssd) mean_ssd += s;
                mean_ssd /= K;
                double variance = std::max(mean_ssd, eps);

                float* dst = out.at(x, y, z);
                double peak = 0.0;
                for (int k = 0; k < K; ++k) {
                    double v = std::exp(-ssd[k] / variance);
                    dst[k] = static_cast<float>(v);
                    peak = std::max(peak, v);
                }
                for (int k = 0; k < K; ++k) dst[k] = static_cast<float>(dst[k] / peak);
            }
    return out;
}

double descriptor_ssd(const DescriptorField& a, const DescriptorField& b) {
    if (!(a.meta == b.meta) || a.channels != b.channels)
        throw std::invalid_argument("descriptor fields differ in grid or channel count");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double diff = double(a.data[i]) - b.data[i];
        acc += diff * diff;
    }
    return acc / static_cast<double>(a.data.size());
}

double mind_loss(const Volume& a, const Volume& b, const MindConfig& cfg) {
    if (!(a.meta == b.meta)) throw std::invalid_argument("mind_loss: image grids differ");
    return descriptor_ssd(mind_descriptor(a, cfg), mind_descriptor(b, cfg));
}

double ncc_loss(const Volume& a, const Volume& b, int window) {
    if (!(a.meta == b.meta)) throw std::invalid_argument("ncc_loss: image grids differ");
    if (window < 3 || window % 2 == 0) throw std::invalid_argument("window must be odd and >= 3");
    validate(a);
    validate(b);

    const auto& d = a.meta.dims;
    const int h = window / 2;
    const std::size_t n = a.meta.voxel_count();

    // Separable truncated box sums along x, then y, then z for each moment.
    auto boxsum = [&](std::vector<double> src) {
        std::vector<double> tmp(n);
        // x
        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y) {
                std::size_t row = voxel_index(a.meta, 0, y, z);
                double run = 0.0;
                for (int x = 0; x < std::min(h, d[0] - 1) + 1; ++x) run += src[row + x];
                for (int x = 0; x < d[0]; ++x) {
                    tmp[row + x] = run;
                    int add = x + h + 1, drop = x - h;
                    if (add < d[0]) run += src[row + add];
                    if (drop >= 0) run -= src[row + drop];
                }
            }
        // y
        src.swap(tmp);
        for (int z = 0; z < d[2]; ++z)
            for (int x = 0; x < d[0]; ++x) {
                std::size_t col = voxel_index(a.meta, x, 0, z);
                std::size_t stride = static_cast<std::size_t>(d[0]);
                double run = 0.0;
                for (int y = 0; y < std::min(h, d[1] - 1) + 1; ++y) run += src[col + y * stride];
                for (int y = 0; y < d[1]; ++y) {
                    tmp[col + y * stride] = run;
                    int add = y + h + 1, drop = y - h;
                    if (add < d[1]) run += src[col + add * stride];
                    if (drop >= 0) run -= src[col + drop * stride];
                }
            }
        // z
        src.swap(tmp);
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                std::size_t col = voxel_index(a.meta, x, y, 0);
                std::size_t stride = static_cast<std::size_t>(d[0]) * d[1];
                double run = 0.0;
                for (int z = 0; z < std::min(h, d[2] - 1) + 1; ++z) run += src[col + z * stride];
                for (int z = 0; z < d[2]; ++z) {
                    tmp[col + z * stride] = run;
                    int add = z + h + 1, drop = z - h;
                    if (add < d[2]) run += src[col + add * stride];
                    if (drop >= 0) run -= src[col + drop * stride];
                }
            }
        return tmp;
    };

    std::vector<double> va(n), vb(n), vaa(n), vbb(n), vab(n), ones(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        va[i] = a.values[i];
        vb[i] = b.values[i];
        vaa[i] = double(a.values[i]) * a.values[i];
        vbb[i] = double(b.values[i]) * b.values[i];
        vab[i] = double(a.values[i]) * b.values[i];
    }
    auto sa = boxsum(std::move(va));
    auto sb = boxsum(std::move(vb));
    auto saa = boxsum(std::move(vaa));
    auto sbb = boxsum(std::move(vbb));
    auto sab = boxsum(std::move(vab));
    auto count = boxsum(std::move(ones));

    const double floor = 1e-5;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double cnt = count[i];
        double ma = sa[i] / cnt, mb = sb[i] / cnt;
        double var_a = std::max(saa[i] / cnt - ma * ma, floor);
        double var_b = std::max(sbb[i] / cnt - mb * mb, floor);
        double cov = sab[i] / cnt - ma * mb;
        total += cov / std::sqrt(var_a * var_b);
    }
    return -total / static_cast<double>(n);
}

}  // namespace morphreg
