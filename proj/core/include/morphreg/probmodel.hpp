#pragma once
// Variational objective: graph-Laplacian Gaussian prior, closed-form KL,
// reparameterized velocity sampling, chamfer surface loss, and total-loss
// assembly with a per-term breakdown.
//
// The prior over each velocity component is N(0, (lambda L_G)^-1) with L_G
// the 6-neighborhood graph Laplacian on the voxel grid; the approximate
// posterior is the diagonal Gaussian N(mu, diag sigma^2). Their KL, constants
// dropped, reduces to
//   0.5 * [ lambda * sum_i deg(i) sigma2_i  +  lambda * mu^T L mu
//           - sum_i log sigma2_i ]
// summed over the three components and normalized by voxel count.

#include <cstdint>
#include <string>

#include "morphreg/grid.hpp"
#include "morphreg/similarity.hpp"

namespace morphreg {

struct PosteriorParams {
    VectorField mean;           // mu, voxel units
    VectorField log_variance;   // log sigma^2 per voxel per component
};

// Shapes must match; log-variance finite and <= 10.
void validate(const PosteriorParams& post);

struct PriorConfig {
    double lambda = 1.0;   // precision scale of the Laplacian prior

    void validate_or_throw() const;
};

struct LossWeights {
    double image = 1.0;     // 1 / sigma_def^2
    double kl = 0.01;
    double surface = 0.1;   // 1 / sigma_s^2, per mm^2; 0 disables the term

    void validate_or_throw() const;
};

// Sum over 6-connected voxel edges (i,j) of |mu_i - mu_j|^2, all components.
double laplacian_quadratic(const VectorField& mu);

// Raw (unnormalized) pieces of the KL with an optional diagonal jitter tau
// added to the prior precision (lambda L_G + tau I). The jitter exists so
// dense-matrix oracles can work with a nonsingular precision; the production
// loss uses tau = 0.
struct KlTerms {
    double trace_term;       // sum_i (lambda deg(i) + tau) sigma2_i
    double quadratic_term;   // lambda mu^T L mu + tau |mu|^2
    double logvar_term;      // sum_i log sigma2_i
};
KlTerms kl_prior_terms(const PosteriorParams& post, const PriorConfig& prior,
                       double diag_jitter = 0.0);

// 0.5 (trace + quadratic - logvar) / voxel_count, jitter-free.
double kl_prior_loss(const PosteriorParams& post, const PriorConfig& prior);

// Reparameterized draw y = mu + exp(0.5 log sigma^2) * n with n standard
// normal from the seeded generator. Deterministic per seed.
VectorField sample_velocity(const PosteriorParams& post, std::uint64_t noise_seed);

// Inference-time field: the distribution's mode, n = 0.
VectorField posterior_mode(const PosteriorParams& post);

enum class ChamferMode {
    symmetric,   // halved sum of both directed mean squared distances
    one_sided,   // warped -> target only
};

// Chamfer surface distance in mm^2. Throws std::domain_error on empty sets.
double surface_loss(const PointSet& warped, const PointSet& target,
                    ChamferMode mode = ChamferMode::symmetric);

struct LossBreakdown {
    double total;
    double image;
    double kl;
    double surface;
};

// image_weight * mind_loss(warped, fixed) + kl_weight * kl_prior_loss
// + surface_weight * surface_loss. Surface sets may be empty only when
// surface weight is 0.
LossBreakdown total_loss(const Volume& warped, const Volume& fixed_image,
                         const PosteriorParams& post, const PriorConfig& prior,
                         const PointSet& warped_surface, const PointSet& fixed_surface,
                         const LossWeights& weights, const MindConfig& mind_cfg = {});

// One training-log record: {"step":N,"total":..,"image":..,"kl":..,"surface":..}
std::string loss_log_line(long step, const LossBreakdown& loss);

}  // namespace morphreg
