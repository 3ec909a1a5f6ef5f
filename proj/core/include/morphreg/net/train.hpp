#pragma once

// Training loop, Adam optimizer, inference entry point, and checkpoint
// serialization for the registration network.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "morphreg/diffeo.hpp"
#include "morphreg/net/model.hpp"
#include "morphreg/phantom.hpp"
#include "morphreg/probmodel.hpp"
#include "morphreg/similarity.hpp"

namespace morphreg::net {

#if defined(MORPHREG_AD_FP64)
inline namespace fp64 {
#else
inline namespace fp32 {
#endif

enum class SimilarityKind {
    mind,   // modality-independent descriptors (cross-modality default)
    ncc,    // windowed normalized cross-correlation (ablation arm)
};

struct TrainConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int batch_size = 1;       // gradient-accumulation count per optimizer step
    int epochs = 20;
    std::uint64_t seed = 1;
    SimilarityKind similarity = SimilarityKind::mind;
    int ncc_window = 9;
    MindConfig mind;
    LossWeights weights;
    PriorConfig prior;
    IntegrationConfig integration;
    long max_steps = 0;       // 0 = run all epochs; otherwise stop early (smoke runs)
    int log_every = 1;        // emit every n-th step record

    void validate_or_throw() const;
};

// One training pair plus the surface sets the loss may consume. Surfaces are
// used only inside the training objective, never at inference.
struct TrainingCase {
    Volume moving_mr;
    Volume fixed_ct;
    std::vector<Point3> fixed_surface_voxel;    // fixed-image surface, voxel coords
    std::vector<Point3> moving_surface_world;   // moving-image surface, mm
};

TrainingCase training_case_from_sample(const PhantomSample& sample);

struct TrainResult {
    long steps = 0;
    LossBreakdown last{};
    std::vector<LossBreakdown> history;   // one entry per optimizer step
};

// Seeded, bit-deterministic optimization of `model` on `cases`. Per step:
// forward, reparameterized velocity draw, differentiable integrate + warp,
// weighted image/KL/surface objective, reverse pass, Adam update. Writes one
// JSON record per logged step to `log` when given. Throws std::runtime_error
// with the step number if the loss turns non-finite.
TrainResult run_training(Model& model, const std::vector<TrainingCase>& cases,
                         const TrainConfig& cfg, std::ostream* log = nullptr);

struct RegistrationResult {
    VectorField velocity;       // posterior mode
    VectorField displacement;   // integrated pull-back field
    Volume warped;              // moving image resampled onto the fixed grid
};

// Inference: forward in inference mode, take the posterior mean as the
// velocity, integrate, warp. Consumes nothing but the two images.
RegistrationResult register_pair(Model& model, const Volume& moving_mr, const Volume& fixed_ct,
                                 const IntegrationConfig& integration = {});

// Single-file checkpoint: magic, manifest length, canonical JSON manifest
// (config echo, training step, tensor table sorted by name), then the raw
// little-endian 32-bit payload in manifest order. Batch-norm running
// statistics are stored alongside the parameters.
void save_checkpoint(const Model& model, long train_step, const std::filesystem::path& path);

struct LoadedCheckpoint {
    Model model;
    long train_step = 0;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // inline namespace
}  // namespace morphreg::net
