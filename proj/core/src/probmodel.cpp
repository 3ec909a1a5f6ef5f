#include "morphreg/probmodel.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "morphreg/rng.hpp"

namespace morphreg {

void validate(const PosteriorParams& post) {
    validate(post.mean);
    if (!(post.mean.meta == post.log_variance.meta))
        throw std::invalid_argument("posterior mean and log-variance grids differ");
    if (post.log_variance.data.size() != post.mean.data.size())
        throw std::invalid_argument("posterior component counts differ");
    for (float lv : post.log_variance.data) {
        if (!std::isfinite(lv)) throw std::domain_error("log variance must be finite");
        if (lv > 10.0f) throw std::domain_error("log variance exceeds 10");
    }
}

void PriorConfig::validate_or_throw() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("prior lambda must be positive and finite");
}

void LossWeights::validate_or_throw() const {
    if (!std::isfinite(image) || !std::isfinite(kl) || !std::isfinite(surface))
        throw std::invalid_argument("loss weights must be finite");
    if (!(image > 0.0)) throw std::invalid_argument("image weight must be positive");
    if (kl < 0.0) throw std::invalid_argument("kl weight must be non-negative");
    if (surface < 0.0) throw std::invalid_argument("surface weight must be non-negative");
}

namespace {

inline int degree(const std::array<int, 3>& dims, int x, int y, int z) {
    int deg = 0;
    if (x > 0) ++deg;
    if (x < dims[0] - 1) ++deg;
    if (y > 0) ++deg;
    if (y < dims[1] - 1) ++deg;
    if (z > 0) ++deg;
    if (z < dims[2] - 1) ++deg;
    return deg;
}

}  // namespace

double laplacian_quadratic(const VectorField& mu) {
    validate(mu);
    const auto& d = mu.meta.dims;
    double acc = 0.0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                const float* a = mu.vec(x, y, z);
                if (x + 1 < d[0]) {
                    const float* b = mu.vec(x + 1, y, z);
                    for (int c = 0; c < 3; ++c)
                        acc += (double(a[c]) - b[c]) * (double(a[c]) - b[c]);
                }
                if (y + 1 < d[1]) {
                    const float* b = mu.vec(x, y + 1, z);
                    for (int c = 0; c < 3; ++c)
                        acc += (double(a[c]) - b[c]) * (double(a[c]) - b[c]);
                }
                if (z + 1 < d[2]) {
                    const float* b = mu.vec(x, y, z + 1);
                    for (int c = 0; c < 3; ++c)
                        acc += (double(a[c]) - b[c]) * (double(a[c]) - b[c]);
                }
            }
    return acc;
}

KlTerms kl_prior_terms(const PosteriorParams& post, const PriorConfig& prior,
                       double diag_jitter) {
    validate(post);
    prior.validate_or_throw();
    if (diag_jitter < 0.0) throw std::invalid_argument("diagonal jitter must be >= 0");

    const auto& d = post.mean.meta.dims;
    double trace = 0.0, logvar = 0.0, mu_sq = 0.0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                double deg = degree(d, x, y, z);
                const float* lv = post.log_variance.vec(x, y, z);
                const float* mv = post.mean.vec(x, y, z);
                for (int c = 0; c < 3; ++c) {
                    double sigma2 = std::exp(double(lv[c]));
                    trace += (prior.lambda * deg + diag_jitter) * sigma2;
                    logvar += lv[c];
                    mu_sq += double(mv[c]) * mv[c];
                }
            }
    double quad = prior.lambda * laplacian_quadratic(post.mean) + diag_jitter * mu_sq;
    return {trace, quad, logvar};
}

double kl_prior_loss(const PosteriorParams& post, const PriorConfig& prior) {
    KlTerms t = kl_prior_terms(post, prior, 0.0);
    return 0.5 * (t.trace_term + t.quadratic_term - t.logvar_term) /
           static_cast<double>(post.mean.meta.voxel_count());
}

VectorField sample_velocity(const PosteriorParams& post, std::uint64_t noise_seed) {
    validate(post);
    VectorField out = make_field(post.mean.meta);
    std::mt19937_64 gen(noise_seed);
    NormalSampler normal;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        double sigma = std::exp(0.5 * double(post.log_variance.data[i]));
        out.data[i] = static_cast<float>(double(post.mean.data[i]) + sigma * normal(gen));
    }
    return out;
}

VectorField posterior_mode(const PosteriorParams& post) {
    validate(post);
    return post.mean;
}

double surface_loss(const PointSet& warped, const PointSet& target, ChamferMode mode) {
    if (warped.empty() || target.empty())
        throw std::domain_error("surface loss needs non-empty point sets");

    auto directed = [](const PointSet& from, const PointSet& to) {
        double total = 0.0;
        for (const auto& p : from.points) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to.points) {
                double d2 = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                            (p[2] - q[2]) * (p[2] - q[2]);
                if (d2 < best) best = d2;
            }
            total += best;
        }
        return total / static_cast<double>(from.size());
    };

    double forward = directed(warped, target);
    if (mode == ChamferMode::one_sided) return forward;
    return 0.5 * (forward + directed(target, warped));
}

LossBreakdown total_loss(const Volume& warped, const Volume& fixed_image,
                         const PosteriorParams& post, const PriorConfig& prior,
                         const PointSet& warped_surface, const PointSet& fixed_surface,
                         const LossWeights& weights, const MindConfig& mind_cfg) {
    weights.validate_or_throw();

    LossBreakdown out{};
    out.image = weights.image * mind_loss(warped, fixed_image, mind_cfg);
    out.kl = weights.kl > 0.0 ? weights.kl * kl_prior_loss(post, prior) : 0.0;
    out.surface = weights.surface > 0.0
                      ? weights.surface * surface_loss(warped_surface, fixed_surface)
                      : 0.0;
    out.total = out.image + out.kl + out.surface;
    return out;
}

namespace {

std::string json_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string loss_log_line(long step, const LossBreakdown& loss) {
    std::string out = "{\"step\":";
    out += std::to_string(step);
    out += ",\"total\":";
    out += json_number(loss.total);
    out += ",\"image\":";
    out += json_number(loss.image);
    out += ",\"kl\":";
    out += json_number(loss.kl);
    out += ",\"surface\":";
    out += json_number(loss.surface);
    out += "}";
    return out;
}

}  // namespace morphreg
