#pragma once

// Minimal reverse-mode differentiation engine. The whole graph is built from
// shared nodes carrying values, trailing gradients, and a backward closure.
//
// The engine compiles in two scalar widths: the product build uses 32-bit
// reals, and a second build defines MORPHREG_AD_FP64 to run the identical
// graph in 64-bit for finite-difference gradient checks. The inline
// namespace keeps the two ABIs distinct so both libraries can coexist.

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace morphreg::net {

#if defined(MORPHREG_AD_FP64)
inline namespace fp64 {
using real = double;
#else
inline namespace fp32 {
using real = float;
#endif

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    std::vector<int> shape;
    std::vector<real> val;
    std::vector<real> grad;          // allocated lazily, same size as val
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;   // reads this->grad, accumulates into parents
    bool requires_grad = false;
    std::uint64_t id = 0;

    std::size_t size() const { return val.size(); }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), real(0));
    }
};

inline std::size_t shape_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("net: tensor dims must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

// Whether gradients should be accumulated into this node: true for tracked
// leaves (parameters) and every interior node; false for constant leaves, so
// expensive scatter passes can skip them.
inline bool tracked(const Node& n) { return n.requires_grad || static_cast<bool>(n.backprop); }

// Fresh node with given shape; id ordering is the topological tie-breaker.
Var make_node(std::vector<int> shape);

// Leaf holding constant data (no gradient tracked).
Var constant(std::vector<int> shape, std::vector<real> values);

// Leaf parameter: tracked, gradient accumulated during backward.
Var parameter(std::vector<int> shape, std::vector<real> values);

// Reverse pass from a scalar root: topological order by node id, root seeded
// with gradient 1. Gradients accumulate into every node with requires_grad
// (parameters keep theirs until zero_grad).
void backward(const Var& root);

}  // inline namespace
}  // namespace morphreg::net
