#pragma once

// Differentiable primitives. Every op returns a fresh node whose backward
// closure accumulates exact reverse-mode gradients into tracked parents.
//
// Layout conventions: feature volumes are (C, X, Y, Z) stored as C channel
// planes, each plane in grid order (x fastest, then y, then z); token
// matrices are (N, C) with C fastest and token rows in grid order;
// displacement fields are (3, X, Y, Z) planes in voxel units.

#include <array>
#include <random>
#include <vector>

#include "morphreg/grid.hpp"
#include "morphreg/net/tensor.hpp"
#include "morphreg/probmodel.hpp"
#include "morphreg/similarity.hpp"

namespace morphreg::net {

#if defined(MORPHREG_AD_FP64)
inline namespace fp64 {
#else
inline namespace fp32 {
#endif

// ---- elementwise and reductions ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var exp_op(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);

// ---- linear algebra ----
// x: (rows..., Cin) treated as a row matrix; w: (Cin, Cout); b: (Cout) or null
Var linear(const Var& x, const Var& w, const Var& b);
Var matmul(const Var& a, const Var& b);           // (M,K) x (K,N)
Var bmm(const Var& a, const Var& b);              // (B,M,K) x (B,K,N)
Var bmm_nt(const Var& a, const Var& b);           // (B,M,K) x (B,N,K)^T -> (B,M,N)
Var add_bias(const Var& x, const Var& b);         // broadcast over the last axis
Var softmax_lastdim(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- shape plumbing ----
Var concat(const std::vector<Var>& xs, int axis);
Var reshape(const Var& x, std::vector<int> shape);
Var transpose2d(const Var& x);                    // (M,N) -> (N,M)
// Row gather on a (N, C) matrix: out has perm.size() rows with out row
// i = in row perm[i]; rows may repeat or be dropped, and the backward pass
// accumulates. Used for cyclic shifts and window partition/reverse.
Var permute_rows(const Var& x, const std::vector<int>& perm);

// Stochastic depth on the whole residual branch: in training mode the branch
// is dropped with probability `rate` (drawn from `rng`) and scaled by
// 1/(1-rate) otherwise; in inference mode it is the identity.
Var drop_path(const Var& x, double rate, bool training, std::mt19937_64& rng);

// Constant (untracked) 3-axis sinusoidal embedding for a token grid,
// shaped (nx*ny*nz, dim).
Var sinusoidal_position_embedding(const std::array<int, 3>& token_dims, int dim);

// ---- convolutional stack ----
// x: (Cin,X,Y,Z); w: (Cout,Cin,kx,ky,kz); b: (Cout) or null; zero padding.
Var conv3d(const Var& x, const Var& w, const Var& b, std::array<int, 3> stride,
           std::array<int, 3> pad);

struct BatchNormState {
    std::vector<real> running_mean;
    std::vector<real> running_var;
};
// Per-channel normalization over the spatial extent. Training mode uses the
// current statistics and folds them into the running estimates; inference
// mode uses the running estimates only.
Var batch_norm3d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                 bool training, double momentum = 0.1, double eps = 1e-5);

Var trilinear_upsample(const Var& x, std::array<int, 3> factor);

// ---- differentiable field calculus ----
// Forward values match the diffeo module exactly (same clamped trilinear
// rules), with gradients flowing through both sampled values and sampling
// positions.
Var compose_disp(const Var& a, const Var& b);
Var warp_image(const Var& img, const Var& u);
Var integrate_svf_diff(const Var& v, int steps);

// ---- differentiable losses ----
Var mind_loss_diff(const Var& warped, const DescriptorField& fixed_desc, const MindConfig& cfg);
Var ncc_loss_diff(const Var& warped, const Var& fixed, int window);
Var kl_loss_diff(const Var& mu, const Var& logvar, double lambda);
// Chamfer surface term in mm^2: fixed-side surface voxels are carried by the
// field into moving space and matched against the moving surface points.
Var surface_loss_diff(const Var& u, const std::vector<Point3>& fixed_surface_voxel,
                      const std::vector<Point3>& moving_surface_world, const GridMeta& meta,
                      ChamferMode mode);

}  // inline namespace
}  // namespace morphreg::net
