#include <algorithm>
#include <cmath>

#include "morphreg/net/ops.hpp"

namespace morphreg::net {

#if defined(MORPHREG_AD_FP64)
inline namespace fp64 {
#else
inline namespace fp32 {
#endif

namespace {

constexpr double inv_sqrt2 = 0.70710678118654752440;
constexpr double inv_sqrt2pi = 0.39894228040143267794;

void check_same_shape(const Var& a, const Var& b, const char* what) {
    if (a->shape != b->shape) throw std::invalid_argument(std::string("net: ") + what +
                                                          ": shapes differ");
}

}  // namespace

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Var out = make_node(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] + b->val[i];
    out->parents = {a, b};
    out->backprop = [a, b](Node& self) {
        if (tracked(*a))
            for (std::size_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i];
        if (tracked(*b))
            for (std::size_t i = 0; i < self.size(); ++i) b->grad[i] += self.grad[i];
    };
    return out;
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Var out = make_node(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] - b->val[i];
    out->parents = {a, b};
    out->backprop = [a, b](Node& self) {
        if (tracked(*a))
            for (std::size_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i];
        if (tracked(*b))
            for (std::size_t i = 0; i < self.size(); ++i) b->grad[i] -= self.grad[i];
    };
    return out;
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Var out = make_node(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] * b->val[i];
    out->parents = {a, b};
    out->backprop = [a, b](Node& self) {
        if (tracked(*a))
            for (std::size_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i] * b->val[i];
        if (tracked(*b))
            for (std::size_t i = 0; i < self.size(); ++i) b->grad[i] += self.grad[i] * a->val[i];
    };
    return out;
}

Var scale(const Var& a, double s) {
    Var out = make_node(a->shape);
    real f = static_cast<real>(s);
    for (std::size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] * f;
    out->parents = {a};
    out->backprop = [a, f](Node& self) {
        if (tracked(*a))
            for (std::size_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i] * f;
    };
    return out;
}

Var exp_op(const Var& a) {
    Var out = make_node(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->val[i] = std::exp(a->val[i]);
    out->parents = {a};
    out->backprop = [a](Node& self) {
        if (tracked(*a))
            for (std::size_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i] * self.val[i];
    };
    return out;
}

Var relu(const Var& a) {
    Var out = make_node(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] > 0 ? a->val[i] : 0;
    out->parents = {a};
    out->backprop = [a](Node& self) {
        if (tracked(*a))
            for (std::size_t i = 0; i < self.size(); ++i)
                if (a->val[i] > 0) a->grad[i] += self.grad[i];
    };
    return out;
}

Var gelu(const Var& a) {
    // exact erf form; derivative = Phi(x) + x*phi(x)
    Var out = make_node(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) {
        double x = a->val[i];
        out->val[i] = static_cast<real>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
    }
    out->parents = {a};
    out->backprop = [a](Node& self) {
        if (!tracked(*a)) return;
        for (std::size_t i = 0; i < self.size(); ++i) {
            double x = a->val[i];
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            a->grad[i] += self.grad[i] * static_cast<real>(cdf + x * pdf);
        }
    };
    return out;
}

Var sum(const Var& a) {
    Var out = make_node({1});
    double acc = 0;
    for (real v : a->val) acc += v;
    out->val[0] = static_cast<real>(acc);
    out->parents = {a};
    out->backprop = [a](Node& self) {
        if (tracked(*a))
            for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += self.grad[0];
    };
    return out;
}

Var mean(const Var& a) {
    Var out = make_node({1});
    double acc = 0;
    for (real v : a->val) acc += v;
    real inv = static_cast<real>(1.0 / static_cast<double>(a->size()));
    out->val[0] = static_cast<real>(acc) * inv;
    out->parents = {a};
    out->backprop = [a, inv](Node& self) {
        if (tracked(*a))
            for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += self.grad[0] * inv;
    };
    return out;
}

Var matmul(const Var& a, const Var& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw std::invalid_argument("net: matmul shape mismatch");
    int M = a->shape[0], K = a->shape[1], N = b->shape[1];
    Var out = make_node({M, N});
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k) {
            real av = a->val[i * K + k];
            const real* brow = b->val.data() + static_cast<std::size_t>(k) * N;
            real* orow = out->val.data() + static_cast<std::size_t>(i) * N;
            for (int j = 0; j < N; ++j) orow[j] += av * brow[j];
        }
    out->parents = {a, b};
    out->backprop = [a, b, M, K, N](Node& self) {
        if (tracked(*a))
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < N; ++j) {
                    real g = self.grad[i * N + j];
                    const real* brow = b->val.data() + 0;
                    for (int k = 0; k < K; ++k) a->grad[i * K + k] += g * brow[k * N + j];
                }
        if (tracked(*b))
            for (int i = 0; i < M; ++i)
                for (int k = 0; k < K; ++k) {
                    real av = a->val[i * K + k];
                    const real* grow = self.grad.data() + static_cast<std::size_t>(i) * N;
                    real* brow = b->grad.data() + static_cast<std::size_t>(k) * N;
                    for (int j = 0; j < N; ++j) brow[j] += av * grow[j];
                }
    };
    return out;
}

Var bmm(const Var& a, const Var& b) {
    if (a->shape.size() != 3 || b->shape.size() != 3 || a->shape[0] != b->shape[0] ||
        a->shape[2] != b->shape[1])
        throw std::invalid_argument("net: bmm shape mismatch");
    int B = a->shape[0], M = a->shape[1], K = a->shape[2], N = b->shape[2];
    Var out = make_node({B, M, N});
    for (int s = 0; s < B; ++s) {
        const real* ab = a->val.data() + static_cast<std::size_t>(s) * M * K;
        const real* bb = b->val.data() + static_cast<std::size_t>(s) * K * N;
        real* ob = out->val.data() + static_cast<std::size_t>(s) * M * N;
        for (int i = 0; i < M; ++i)
            for (int k = 0; k < K; ++k) {
                real av = ab[i * K + k];
                for (int j = 0; j < N; ++j) ob[i * N + j] += av * bb[k * N + j];
            }
    }
    out->parents = {a, b};
    out->backprop = [a, b, B, M, K, N](Node& self) {
        for (int s = 0; s < B; ++s) {
            const real* ab = a->val.data() + static_cast<std::size_t>(s) * M * K;
            const real* bb = b->val.data() + static_cast<std::size_t>(s) * K * N;
            const real* gb = self.grad.data() + static_cast<std::size_t>(s) * M * N;
            if (tracked(*a)) {
                real* gab = a->grad.data() + static_cast<std::size_t>(s) * M * K;
                for (int i = 0; i < M; ++i)
                    for (int j = 0; j < N; ++j) {
                        real g = gb[i * N + j];
                        for (int k = 0; k < K; ++k) gab[i * K + k] += g * bb[k * N + j];
                    }
            }
            if (tracked(*b)) {
                real* gbb = b->grad.data() + static_cast<std::size_t>(s) * K * N;
                for (int i = 0; i < M; ++i)
                    for (int k = 0; k < K; ++k) {
                        real av = ab[i * K + k];
                        for (int j = 0; j < N; ++j) gbb[k * N + j] += av * gb[i * N + j];
                    }
            }
        }
    };
    return out;
}

Var bmm_nt(const Var& a, const Var& b) {
    if (a->shape.size() != 3 || b->shape.size() != 3 || a->shape[0] != b->shape[0] ||
        a->shape[2] != b->shape[2])
        throw std::invalid_argument("net: bmm_nt shape mismatch");
    int B = a->shape[0], M = a->shape[1], K = a->shape[2], N = b->shape[1];
    Var out = make_node({B, M, N});
    for (int s = 0; s < B; ++s) {
        const real* ab = a->val.data() + static_cast<std::size_t>(s) * M * K;
        const real* bb = b->val.data() + static_cast<std::size_t>(s) * N * K;
        real* ob = out->val.data() + static_cast<std::size_t>(s) * M * N;
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) {
                double acc = 0;
                for (int k = 0; k < K; ++k)
                    acc += static_cast<double>(ab[i * K + k]) * bb[j * K + k];
                ob[i * N + j] = static_cast<real>(acc);
            }
    }
    out->parents = {a, b};
    out->backprop = [a, b, B, M, K, N](Node& self) {
        for (int s = 0; s < B; ++s) {
            const real* ab = a->val.data() + static_cast<std::size_t>(s) * M * K;
            const real* bb = b->val.data() + static_cast<std::size_t>(s) * N * K;
            const real* gb = self.grad.data() + static_cast<std::size_t>(s) * M * N;
            if (tracked(*a)) {
                real* gab = a->grad.data() + static_cast<std::size_t>(s) * M * K;
                for (int i = 0; i < M; ++i)
                    for (int j = 0; j < N; ++j) {
                        real g = gb[i * N + j];
                        for (int k = 0; k < K; ++k) gab[i * K + k] += g * bb[j * K + k];
                    }
            }
            if (tracked(*b)) {
                real* gbb = b->grad.data() + static_cast<std::size_t>(s) * N * K;
                for (int i = 0; i < M; ++i)
                    for (int j = 0; j < N; ++j) {
                        real g = gb[i * N + j];
                        for (int k = 0; k < K; ++k) gbb[j * K + k] += g * ab[i * K + k];
                    }
            }
        }
    };
    return out;
}

Var add_bias(const Var& x, const Var& b) {
    if (b->shape.size() != 1 || x->shape.empty() || x->shape.back() != b->shape[0])
        throw std::invalid_argument("net: add_bias shape mismatch");
    int C = b->shape[0];
    Var out = make_node(x->shape);
    std::size_t rows = x->size() / C;
    for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) out->val[r * C + c] = x->val[r * C + c] + b->val[c];
    out->parents = {x, b};
    out->backprop = [x, b, rows, C](Node& self) {
        if (tracked(*x))
            for (std::size_t i = 0; i < self.size(); ++i) x->grad[i] += self.grad[i];
        if (tracked(*b))
            for (std::size_t r = 0; r < rows; ++r)
                for (int c = 0; c < C; ++c) b->grad[c] += self.grad[r * C + c];
    };
    return out;
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (w->shape.size() != 2 || x->shape.empty() || x->shape.back() != w->shape[0])
        throw std::invalid_argument("net: linear shape mismatch");
    int Cin = w->shape[0], Cout = w->shape[1];
    std::size_t rows = x->size() / Cin;
    Var flat = reshape(x, {static_cast<int>(rows), Cin});
    Var y = matmul(flat, w);
    if (b) y = add_bias(y, b);
    std::vector<int> out_shape = x->shape;
    out_shape.back() = Cout;
    return reshape(y, std::move(out_shape));
}

Var softmax_lastdim(const Var& x) {
    if (x->shape.empty()) throw std::invalid_argument("net: softmax needs an axis");
    int C = x->shape.back();
    std::size_t rows = x->size() / C;
    Var out = make_node(x->shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const real* in = x->val.data() + r * C;
        real* o = out->val.data() + r * C;
        real mx = in[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, in[c]);
        double denom = 0;
        for (int c = 0; c < C; ++c) {
            o[c] = std::exp(in[c] - mx);
            denom += o[c];
        }
        real inv = static_cast<real>(1.0 / denom);
        for (int c = 0; c < C; ++c) o[c] *= inv;
    }
    out->parents = {x};
    out->backprop = [x, rows, C](Node& self) {
        if (!tracked(*x)) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const real* y = self.val.data() + r * C;
            const real* g = self.grad.data() + r * C;
            double dot = 0;
            for (int c = 0; c < C; ++c) dot += static_cast<double>(y[c]) * g[c];
            real* gx = x->grad.data() + r * C;
            for (int c = 0; c < C; ++c)
                gx[c] += y[c] * (g[c] - static_cast<real>(dot));
        }
    };
    return out;
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    if (x->shape.empty() || gamma->shape.size() != 1 || beta->shape.size() != 1 ||
        gamma->shape[0] != x->shape.back() || beta->shape[0] != x->shape.back())
        throw std::invalid_argument("net: layer_norm shape mismatch");
    int C = x->shape.back();
    std::size_t rows = x->size() / C;
    Var out = make_node(x->shape);
    // cache per-row mean and inverse stddev for the backward pass
    auto stats = std::make_shared<std::vector<double>>(rows * 2);
    for (std::size_t r = 0; r < rows; ++r) {
        const real* in = x->val.data() + r * C;
        double mu = 0;
        for (int c = 0; c < C; ++c) mu += in[c];
        mu /= C;
        double var = 0;
        for (int c = 0; c < C; ++c) var += (in[c] - mu) * (in[c] - mu);
        var /= C;
        double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[2 * r] = mu;
        (*stats)[2 * r + 1] = inv;
        real* o = out->val.data() + r * C;
        for (int c = 0; c < C; ++c)
            o[c] = static_cast<real>((in[c] - mu) * inv) * gamma->val[c] + beta->val[c];
    }
    out->parents = {x, gamma, beta};
    out->backprop = [x, gamma, beta, stats, rows, C](Node& self) {
        for (std::size_t r = 0; r < rows; ++r) {
            const real* in = x->val.data() + r * C;
            const real* g = self.grad.data() + r * C;
            double mu = (*stats)[2 * r], inv = (*stats)[2 * r + 1];
            if (tracked(*gamma) || tracked(*beta))
                for (int c = 0; c < C; ++c) {
                    double xhat = (in[c] - mu) * inv;
                    if (tracked(*gamma)) gamma->grad[c] += static_cast<real>(g[c] * xhat);
                    if (tracked(*beta)) beta->grad[c] += g[c];
                }
            if (!tracked(*x)) continue;
            // d/dx of (xhat * gamma + beta): project out mean and xhat components
            double gdot = 0, gxhat = 0;
            for (int c = 0; c < C; ++c) {
                double gy = static_cast<double>(g[c]) * gamma->val[c];
                gdot += gy;
                gxhat += gy * (in[c] - mu) * inv;
            }
            real* gx = x->grad.data() + r * C;
            for (int c = 0; c < C; ++c) {
                double xhat = (in[c] - mu) * inv;
                double gy = static_cast<double>(g[c]) * gamma->val[c];
                gx[c] += static_cast<real>(inv * (gy - gdot / C - xhat * gxhat / C));
            }
        }
    };
    return out;
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("net: concat of nothing");
    const auto& base = xs.front()->shape;
    if (axis < 0 || axis >= static_cast<int>(base.size()))
        throw std::invalid_argument("net: concat axis out of range");
    int total_axis = 0;
    for (const auto& x : xs) {
        if (x->shape.size() != base.size())
            throw std::invalid_argument("net: concat rank mismatch");
        for (std::size_t d = 0; d < base.size(); ++d)
            if (static_cast<int>(d) != axis && x->shape[d] != base[d])
                throw std::invalid_argument("net: concat off-axis dims differ");
        total_axis += x->shape[axis];
    }
    std::vector<int> out_shape = base;
    out_shape[axis] = total_axis;

    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= base[d];
    for (std::size_t d = axis + 1; d < base.size(); ++d) inner *= base[d];

    Var out = make_node(out_shape);
    std::size_t out_stride = static_cast<std::size_t>(total_axis) * inner;
    std::size_t offset = 0;
    for (const auto& x : xs) {
        std::size_t x_stride = static_cast<std::size_t>(x->shape[axis]) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x->val.data() + o * x_stride, x_stride,
                        out->val.data() + o * out_stride + offset);
        offset += x_stride;
    }
    out->parents = xs;
    out->backprop = [xs, outer, inner, out_stride](Node& self) {
        std::size_t offset = 0;
        for (const auto& x : xs) {
            std::size_t x_stride = x->size() / outer;
            if (tracked(*x))
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < x_stride; ++i)
                        x->grad[o * x_stride + i] += self.grad[o * out_stride + offset + i];
            offset += x_stride;
        }
    };
    return out;
}

Var reshape(const Var& x, std::vector<int> shape) {
    if (shape_count(shape) != x->size())
        throw std::invalid_argument("net: reshape element count mismatch");
    Var out = make_node(std::move(shape));
    out->val = x->val;
    out->parents = {x};
    out->backprop = [x](Node& self) {
        if (tracked(*x))
            for (std::size_t i = 0; i < self.size(); ++i) x->grad[i] += self.grad[i];
    };
    return out;
}

Var transpose2d(const Var& x) {
    if (x->shape.size() != 2) throw std::invalid_argument("net: transpose2d needs a matrix");
    int M = x->shape[0], N = x->shape[1];
    Var out = make_node({N, M});
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j)
            out->val[static_cast<std::size_t>(j) * M + i] =
                x->val[static_cast<std::size_t>(i) * N + j];
    out->parents = {x};
    out->backprop = [x, M, N](Node& self) {
        if (!tracked(*x)) return;
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j)
                x->grad[static_cast<std::size_t>(i) * N + j] +=
                    self.grad[static_cast<std::size_t>(j) * M + i];
    };
    return out;
}

Var permute_rows(const Var& x, const std::vector<int>& perm) {
    if (x->shape.size() != 2 || perm.empty())
        throw std::invalid_argument("net: permute_rows needs an (N,C) input");
    int C = x->shape[1];
    Var out = make_node({static_cast<int>(perm.size()), C});
    for (std::size_t r = 0; r < perm.size(); ++r) {
        int src = perm[r];
        if (src < 0 || src >= x->shape[0])
            throw std::invalid_argument("net: permute_rows index out of range");
        std::copy_n(x->val.data() + static_cast<std::size_t>(src) * C, C,
                    out->val.data() + r * C);
    }
    auto perm_copy = std::make_shared<std::vector<int>>(perm);
    out->parents = {x};
    out->backprop = [x, perm_copy, C](Node& self) {
        if (!tracked(*x)) return;
        for (std::size_t r = 0; r < perm_copy->size(); ++r) {
            int src = (*perm_copy)[r];
            real* gx = x->grad.data() + static_cast<std::size_t>(src) * C;
            const real* g = self.grad.data() + r * C;
            for (int c = 0; c < C; ++c) gx[c] += g[c];
        }
    };
    return out;
}

Var drop_path(const Var& x, double rate, bool training, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("net: drop_path rate in [0,1)");
    if (!training || rate == 0.0) return x;
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    bool keep = u >= rate;
    return scale(x, keep ? 1.0 / (1.0 - rate) : 0.0);
}

Var sinusoidal_position_embedding(const std::array<int, 3>& token_dims, int dim) {
    if (dim < 6) throw std::invalid_argument("net: sinusoidal embedding dim must be >= 6");
    // one sin/cos bank per spatial axis; channels beyond 3*2*pairs stay zero
    int per_axis = dim / 3;
    int pairs = per_axis / 2;
    int n = token_dims[0] * token_dims[1] * token_dims[2];
    std::vector<real> values(static_cast<std::size_t>(n) * dim);
    std::size_t row = 0;
    for (int z = 0; z < token_dims[2]; ++z)
        for (int y = 0; y < token_dims[1]; ++y)
            for (int x = 0; x < token_dims[0]; ++x, ++row) {
                int pos[3] = {x, y, z};
                for (int axis = 0; axis < 3; ++axis)
                    for (int p = 0; p < pairs; ++p) {
                        double freq = std::pow(10000.0, -2.0 * p / per_axis);
                        double angle = pos[axis] * freq;
                        values[row * dim + axis * per_axis + 2 * p] =
                            static_cast<real>(std::sin(angle));
                        values[row * dim + axis * per_axis + 2 * p + 1] =
                            static_cast<real>(std::cos(angle));
                    }
            }
    return constant({n, dim}, std::move(values));
}

}  // inline namespace
}  // namespace morphreg::net
