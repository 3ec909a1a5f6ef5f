#pragma once

// Registration network: a shifted-window transformer encoder (or a
// parameter-matched convolutional encoder for the ablation arm) over the
// stacked moving-MR / fixed-CT pair, decoded by a convolutional expansion
// path into per-voxel posterior mean and log-variance of the stationary
// velocity field.

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "morphreg/grid.hpp"
#include "morphreg/net/ops.hpp"

namespace morphreg::net {

#if defined(MORPHREG_AD_FP64)
inline namespace fp64 {
#else
inline namespace fp32 {
#endif

enum class EncoderKind {
    attention,     // shifted-window transformer stages
    convolution,   // ablation encoder, parameter-matched
};

struct ModelConfig {
    std::array<int, 3> input_dims{48, 48, 32};
    std::array<int, 3> patch_size{4, 4, 2};
    std::array<int, 3> window_size{4, 4, 2};
    int in_channels = 2;
    int embed_dim = 32;                       // stage s runs at embed_dim * 2^s
    std::vector<int> depths{2, 2, 2};         // transformer blocks per stage
    std::vector<int> num_heads{2, 4, 4};
    std::vector<int> decoder_channels{6, 12, 24, 36};   // full-res first
    double ffn_ratio = 4.0;
    double drop_path_rate = 0.2;
    EncoderKind encoder = EncoderKind::attention;
    // bottleneck width of the deepest ablation-encoder stage, sized so the
    // two encoder arms match in parameter count (attention arm ignores it)
    int conv_encoder_mid = 107;

    int stages() const { return static_cast<int>(depths.size()); }
    // token grid of stage s (s = 0 is the patch grid)
    std::array<int, 3> token_dims(int stage) const;
    int stage_dim(int stage) const { return embed_dim << stage; }

    void validate_or_throw() const;
    static ModelConfig desk_scale() { return {}; }
};

// One batch-norm layer's running statistics (checkpointed).
struct Model {
    ModelConfig config;
    std::map<std::string, Var> params;                   // name-ordered
    std::map<std::string, BatchNormState> bn;            // keyed by layer name
    std::mt19937_64 drop_rng;                            // stochastic-depth stream

    Var param(const std::string& name) const;
};

// Deterministic parameter initialization from the seed. The velocity heads
// start at exactly zero mean and log-variance -10, so the initial network is
// the identity transform with near-deterministic posterior.
Model make_model(const ModelConfig& cfg, std::uint64_t seed);

// Shifted-window tiling of a token grid. The grid is cyclically rolled by
// `shift` (half the window, where the axis is longer than the window), then
// padded on the high side to whole windows. Rows are laid out window-major,
// offset-minor, x fastest.
struct WindowPartition {
    std::array<int, 3> token_dims{};
    std::array<int, 3> window{};    // effective window (clamped to the grid)
    std::array<int, 3> shift{};     // effective cyclic shift
    std::array<int, 3> grid{};      // windows per axis
    int window_volume = 0;
    int window_count = 0;
    int token_count = 0;
    // padded row -> source token row; padding slots map to token_count
    std::vector<int> source;
    // padded row -> contiguity region; tokens wrapped across opposite volume
    // edges get distinct regions, padding gets -1
    std::vector<int> region;
};

WindowPartition make_window_partition(const std::array<int, 3>& token_dims,
                                      const std::array<int, 3>& window, bool shifted);

// Additive attention mask per window, (window_count, window_volume,
// window_volume): 0 within a region, -1e9 across regions (softmax underflows
// those weights to exactly zero).
std::vector<real> window_attention_mask(const WindowPartition& part);

struct PosteriorOutput {
    Var mu;        // (3, X, Y, Z), voxel units
    Var logvar;    // (3, X, Y, Z)
};

// Full forward pass on one image pair. Training mode engages batch-norm
// batch statistics and stochastic depth; inference mode is deterministic.
PosteriorOutput model_forward(Model& m, const Volume& moving_mr, const Volume& fixed_ct,
                              bool training);

std::size_t parameter_count(const Model& m);
void zero_grad(Model& m);

// Planar (3,X,Y,Z) node values -> interleaved vector field on the grid.
VectorField to_vector_field(const Var& field, const GridMeta& meta);

}  // inline namespace
}  // namespace morphreg::net
