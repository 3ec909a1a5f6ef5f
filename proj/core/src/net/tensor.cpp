#include "morphreg/net/tensor.hpp"

#include <algorithm>
#include <atomic>

namespace morphreg::net {

#if defined(MORPHREG_AD_FP64)
inline namespace fp64 {
#else
inline namespace fp32 {
#endif

namespace {
std::atomic<std::uint64_t> next_id{1};
}

Var make_node(std::vector<int> shape) {
    auto node = std::make_shared<Node>();
    node->val.resize(shape_count(shape));
    node->shape = std::move(shape);
    node->id = next_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

Var constant(std::vector<int> shape, std::vector<real> values) {
    if (shape_count(shape) != values.size())
        throw std::invalid_argument("net: constant values do not match the shape");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->val = std::move(values);
    node->id = next_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

Var parameter(std::vector<int> shape, std::vector<real> values) {
    Var node = constant(std::move(shape), std::move(values));
    node->requires_grad = true;
    return node;
}

void backward(const Var& root) {
    if (!root) throw std::invalid_argument("net: backward on null node");
    if (root->size() != 1) throw std::invalid_argument("net: backward root must be scalar");

    // iterative depth-first topological sort
    std::vector<Node*> order;
    std::vector<std::pair<Node*, std::size_t>> stack;
    std::vector<std::uint64_t> seen;
    auto visited = [&seen](std::uint64_t id) {
        return std::binary_search(seen.begin(), seen.end(), id);
    };
    auto mark = [&seen](std::uint64_t id) {
        seen.insert(std::lower_bound(seen.begin(), seen.end(), id), id);
    };
    mark(root->id);
    stack.emplace_back(root.get(), 0);
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            Node* parent = node->parents[child++].get();
            if (!visited(parent->id)) {
                mark(parent->id);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order) node->ensure_grad();
    root->grad[0] = real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop) node->backprop(*node);
    }
}

}  // inline namespace
}  // namespace morphreg::net
