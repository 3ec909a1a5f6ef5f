#include "morphreg/net/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "morphreg/rng.hpp"

namespace morphreg::net {

#if defined(MORPHREG_AD_FP64)
inline namespace fp64 {
#else
inline namespace fp32 {
#endif

std::array<int, 3> ModelConfig::token_dims(int stage) const {
    std::array<int, 3> t;
    for (int a = 0; a < 3; ++a) t[a] = (input_dims[a] / patch_size[a]) >> stage;
    return t;
}

void ModelConfig::validate_or_throw() const {
    const int S = stages();
    if (S < 1) throw std::invalid_argument("model: needs at least one encoder stage");
    if (num_heads.size() != depths.size())
        throw std::invalid_argument("model: depths and num_heads length differ");
    if (static_cast<int>(decoder_channels.size()) != S + 1)
        throw std::invalid_argument("model: decoder_channels must have stages+1 entries");
    if (in_channels < 1) throw std::invalid_argument("model: in_channels must be >= 1");
    if (embed_dim < 6) throw std::invalid_argument("model: embed_dim must be >= 6");
    if (!(ffn_ratio > 0.0)) throw std::invalid_argument("model: ffn_ratio must be positive");
    if (drop_path_rate < 0.0 || drop_path_rate >= 1.0)
        throw std::invalid_argument("model: drop_path_rate must lie in [0, 1)");
    if (conv_encoder_mid < 1)
        throw std::invalid_argument("model: conv_encoder_mid must be >= 1");
    for (int a = 0; a < 3; ++a) {
        if (patch_size[a] < 1 || window_size[a] < 1)
            throw std::invalid_argument("model: patch and window sizes must be >= 1");
        if (input_dims[a] < patch_size[a] || input_dims[a] % patch_size[a] != 0)
            throw std::invalid_argument("model: input dims must be positive multiples of the patch size");
    }
    for (int s = 0; s < S; ++s) {
        if (depths[s] < 1) throw std::invalid_argument("model: stage depth must be >= 1");
        if (num_heads[s] < 1 || stage_dim(s) % num_heads[s] != 0)
            throw std::invalid_argument("model: head count must divide the stage width");
        auto t = token_dims(s);
        for (int a = 0; a < 3; ++a) {
            if (t[a] < 1) throw std::invalid_argument("model: token grid vanishes at depth");
            if (s + 1 < S && t[a] % 2 != 0)
                throw std::invalid_argument("model: token dims must be even at each merge");
        }
    }
    for (int c : decoder_channels)
        if (c < 1) throw std::invalid_argument("model: decoder channels must be >= 1");
}

Var Model::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end())
        throw std::runtime_error("model: unknown parameter " + name);
    return it->second;
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

namespace {

struct Initializer {
    std::mt19937_64 gen;
    NormalSampler normal;
    Model* m;

    void tensor(const std::string& name, std::vector<int> shape, double stddev) {
        std::vector<real> vals(shape_count(shape));
        if (stddev > 0.0)
            for (auto& v : vals) v = static_cast<real>(stddev * normal(gen));
        m->params.emplace(name, parameter(std::move(shape), std::move(vals)));
    }
    void filled(const std::string& name, std::vector<int> shape, double value) {
        std::vector<real> vals(shape_count(shape), static_cast<real>(value));
        m->params.emplace(name, parameter(std::move(shape), std::move(vals)));
    }
    void linear(const std::string& pfx, int cin, int cout, bool bias = true) {
        tensor(pfx + ".w", {cin, cout}, 0.02);
        if (bias) filled(pfx + ".b", {cout}, 0.0);
    }
    void norm(const std::string& pfx, int c) {
        filled(pfx + ".g", {c}, 1.0);
        filled(pfx + ".b", {c}, 0.0);
    }
    void conv(const std::string& name, int cout, int cin, std::array<int, 3> k) {
        double fan_in = static_cast<double>(cin) * k[0] * k[1] * k[2];
        tensor(name, {cout, cin, k[0], k[1], k[2]}, std::sqrt(2.0 / fan_in));
    }
    void batchnorm(const std::string& pfx, int c) {
        norm(pfx, c);
        m->bn.emplace(pfx, BatchNormState{std::vector<real>(c, real(0)),
                                          std::vector<real>(c, real(1))});
    }
    void conv_bn(const std::string& pfx, int cout, int cin, std::array<int, 3> k) {
        conv(pfx + ".w", cout, cin, k);
        batchnorm(pfx + ".bn", cout);
    }
    void conv_block(const std::string& pfx, int cin, int cout) {
        conv_bn(pfx + ".c1", cout, cin, {3, 3, 3});
        conv_bn(pfx + ".c2", cout, cout, {3, 3, 3});
    }
};

int ffn_width(const ModelConfig& cfg, int c) {
    int f = static_cast<int>(std::lround(c * cfg.ffn_ratio));
    return std::max(f, 1);
}

}  // namespace

Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate_or_throw();
    Model m;
    m.config = cfg;
    m.drop_rng.seed(seed ^ 0x9E3779B97F4A7C15ULL);

    Initializer init{std::mt19937_64(seed), {}, &m};
    const int S = cfg.stages();

    if (cfg.encoder == EncoderKind::attention) {
        init.conv("patch_embed.w", cfg.embed_dim, cfg.in_channels, cfg.patch_size);
        init.filled("patch_embed.b", {cfg.embed_dim}, 0.0);
        for (int s = 0; s < S; ++s) {
            const int C = cfg.stage_dim(s);
            for (int b = 0; b < cfg.depths[s]; ++b) {
                std::string pfx = "enc.s" + std::to_string(s) + ".b" + std::to_string(b);
                init.norm(pfx + ".ln1", C);
                init.linear(pfx + ".attn.q", C, C);
                init.linear(pfx + ".attn.k", C, C);
                init.linear(pfx + ".attn.v", C, C);
                init.linear(pfx + ".attn.o", C, C);
                init.norm(pfx + ".ln2", C);
                init.linear(pfx + ".ffn.f1", C, ffn_width(cfg, C));
                init.linear(pfx + ".ffn.f2", ffn_width(cfg, C), C);
            }
            if (s + 1 < S) {
                std::string pfx = "enc.merge" + std::to_string(s);
                init.norm(pfx + ".ln", 8 * C);
                init.tensor(pfx + ".w", {8 * C, 2 * C}, 0.02);
            }
        }
    } else {
        init.conv_bn("cenc.stem", cfg.stage_dim(0), cfg.in_channels, cfg.patch_size);
        for (int s = 0; s < S; ++s) {
            const int C = cfg.stage_dim(s);
            std::string pfx = "cenc.s" + std::to_string(s);
            if (s + 1 < S) {
                init.conv_bn(pfx + ".refine", C, C, {3, 3, 3});
                init.conv_bn("cenc.down" + std::to_string(s), cfg.stage_dim(s + 1), C,
                             {2, 2, 2});
            } else {
                init.conv_bn(pfx + ".refine", cfg.conv_encoder_mid, C, {3, 3, 3});
                init.conv_bn(pfx + ".proj", C, cfg.conv_encoder_mid, {1, 1, 1});
            }
        }
    }

    // expansion path, shared by both encoder arms
    init.conv_block("dec.c0", cfg.in_channels, cfg.decoder_channels[0]);
    init.conv_block("dec.bottom", cfg.stage_dim(S - 1), cfg.decoder_channels[S]);
    for (int s = S - 2; s >= 0; --s)
        init.conv_block("dec.up" + std::to_string(s),
                        cfg.decoder_channels[s + 2] + cfg.stage_dim(s),
                        cfg.decoder_channels[s + 1]);
    init.conv_block("dec.full", cfg.decoder_channels[1] + cfg.decoder_channels[0],
                    cfg.decoder_channels[0]);
    // zero-initialized velocity heads: identity transform at step zero
    init.filled("head.mu.w", {3, cfg.decoder_channels[0], 1, 1, 1}, 0.0);
    init.filled("head.mu.b", {3}, 0.0);
    init.filled("head.logvar.w", {3, cfg.decoder_channels[0], 1, 1, 1}, 0.0);
    init.filled("head.logvar.b", {3}, -10.0);
    return m;
}

std::size_t parameter_count(const Model& m) {
    std::size_t n = 0;
    for (const auto& [name, p] : m.params) n += p->size();
    return n;
}

void zero_grad(Model& m) {
    for (auto& [name, p] : m.params) p->grad.assign(p->val.size(), real(0));
}

// ---------------------------------------------------------------------------
// window attention plumbing
// ---------------------------------------------------------------------------

WindowPartition make_window_partition(const std::array<int, 3>& token_dims,
                                      const std::array<int, 3>& window, bool shifted) {
    for (int a = 0; a < 3; ++a)
        if (token_dims[a] < 1 || window[a] < 1)
            throw std::invalid_argument("window partition: dims and window must be >= 1");

    WindowPartition p;
    p.token_dims = token_dims;
    p.window_volume = 1;
    p.window_count = 1;
    p.token_count = 1;
    for (int a = 0; a < 3; ++a) {
        p.window[a] = std::min(window[a], token_dims[a]);
        p.shift[a] = (shifted && token_dims[a] > window[a]) ? window[a] / 2 : 0;
        p.grid[a] = (token_dims[a] + p.window[a] - 1) / p.window[a];
        p.window_volume *= p.window[a];
        p.window_count *= p.grid[a];
        p.token_count *= token_dims[a];
    }

    const auto& t = p.token_dims;
    p.source.resize(static_cast<std::size_t>(p.window_count) * p.window_volume);
    p.region.resize(p.source.size());
    for (int wz = 0; wz < p.grid[2]; ++wz)
        for (int wy = 0; wy < p.grid[1]; ++wy)
            for (int wx = 0; wx < p.grid[0]; ++wx) {
                const int iw = wx + p.grid[0] * (wy + p.grid[1] * wz);
                for (int oz = 0; oz < p.window[2]; ++oz)
                    for (int oy = 0; oy < p.window[1]; ++oy)
                        for (int ox = 0; ox < p.window[0]; ++ox) {
                            const int ow = ox + p.window[0] * (oy + p.window[1] * oz);
                            const int pos = iw * p.window_volume + ow;
                            // coordinate in the rolled (pre-pad) grid
                            const int gx = wx * p.window[0] + ox;
                            const int gy = wy * p.window[1] + oy;
                            const int gz = wz * p.window[2] + oz;
                            if (gx < t[0] && gy < t[1] && gz < t[2]) {
                                const int sx = (gx + p.shift[0]) % t[0];
                                const int sy = (gy + p.shift[1]) % t[1];
                                const int sz = (gz + p.shift[2]) % t[2];
                                p.source[pos] = sx + t[0] * (sy + t[1] * sz);
                                // rolled coordinates past t - shift wrapped
                                // around the volume edge and must not mix
                                // with the rest of the window
                                const int rx = (p.shift[0] > 0 && gx >= t[0] - p.shift[0]) ? 1 : 0;
                                const int ry = (p.shift[1] > 0 && gy >= t[1] - p.shift[1]) ? 1 : 0;
                                const int rz = (p.shift[2] > 0 && gz >= t[2] - p.shift[2]) ? 1 : 0;
                                p.region[pos] = (rx * 2 + ry) * 2 + rz;
                            } else {
                                p.source[pos] = p.token_count;
                                p.region[pos] = -1;
                            }
                        }
            }
    return p;
}

std::vector<real> window_attention_mask(const WindowPartition& part) {
    const int wv = part.window_volume;
    std::vector<real> mask(static_cast<std::size_t>(part.window_count) * wv * wv, real(0));
    for (int iw = 0; iw < part.window_count; ++iw) {
        const int* region = part.region.data() + static_cast<std::size_t>(iw) * wv;
        real* block = mask.data() + static_cast<std::size_t>(iw) * wv * wv;
        for (int i = 0; i < wv; ++i)
            for (int j = 0; j < wv; ++j)
                if (region[i] != region[j]) block[i * wv + j] = real(-1e9);
    }
    return mask;
}

namespace {

// Row maps that extend a partition across attention heads, plus the
// per-head-replicated mask.
struct WindowPlan {
    WindowPartition part;
    std::vector<int> head_split;   // (win,head,offset) row -> (padded pos, head) row
    std::vector<int> gather;       // (token,head) row -> (win,head,offset) row
    std::vector<real> mask;        // (window_count*H, wv, wv) additive
};

WindowPlan make_plan(const std::array<int, 3>& token_dims, const std::array<int, 3>& window,
                     bool shifted, int heads) {
    WindowPlan plan;
    plan.part = make_window_partition(token_dims, window, shifted);
    const WindowPartition& p = plan.part;
    const int wv = p.window_volume;
    const std::size_t n_padded = p.source.size();

    plan.head_split.resize(n_padded * heads);
    plan.gather.resize(static_cast<std::size_t>(p.token_count) * heads);
    for (std::size_t pos = 0; pos < n_padded; ++pos) {
        const int iw = static_cast<int>(pos) / wv;
        const int ow = static_cast<int>(pos) % wv;
        for (int h = 0; h < heads; ++h) {
            plan.head_split[(static_cast<std::size_t>(iw) * heads + h) * wv + ow] =
                static_cast<int>(pos) * heads + h;
            if (p.source[pos] != p.token_count)
                plan.gather[static_cast<std::size_t>(p.source[pos]) * heads + h] =
                    (iw * heads + h) * wv + ow;
        }
    }

    const std::vector<real> base = window_attention_mask(p);
    plan.mask.resize(static_cast<std::size_t>(p.window_count) * heads * wv * wv);
    for (int iw = 0; iw < p.window_count; ++iw)
        for (int h = 0; h < heads; ++h)
            std::copy_n(base.data() + static_cast<std::size_t>(iw) * wv * wv, wv * wv,
                        plan.mask.data() +
                            (static_cast<std::size_t>(iw) * heads + h) * wv * wv);
    return plan;
}

Var attention_block(Model& m, const std::string& pfx, Var x,
                    const std::array<int, 3>& token_dims, const std::array<int, 3>& window,
                    bool shifted, int heads, double dp_rate, bool training) {
    const int C = x->shape[1];
    const int dh = C / heads;
    const WindowPlan plan = make_plan(token_dims, window, shifted, heads);
    const int wv = plan.part.window_volume;
    const int n_padded = plan.part.window_count * wv;

    Var ln1 = layer_norm(x, m.param(pfx + ".ln1.g"), m.param(pfx + ".ln1.b"));
    Var q = linear(ln1, m.param(pfx + ".attn.q.w"), m.param(pfx + ".attn.q.b"));
    Var k = linear(ln1, m.param(pfx + ".attn.k.w"), m.param(pfx + ".attn.k.b"));
    Var v = linear(ln1, m.param(pfx + ".attn.v.w"), m.param(pfx + ".attn.v.b"));

    Var zero_row = constant({1, C}, std::vector<real>(C, real(0)));
    auto to_heads = [&](const Var& tok) {
        Var ext = concat({tok, zero_row}, 0);
        Var part = permute_rows(ext, plan.part.source);
        Var flat = reshape(part, {n_padded * heads, dh});
        Var split = permute_rows(flat, plan.head_split);
        return reshape(split, {plan.part.window_count * heads, wv, dh});
    };
    Var qh = to_heads(q), kh = to_heads(k), vh = to_heads(v);

    Var scores = scale(bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    scores = add(scores, constant({plan.part.window_count * heads, wv, wv},
                                  std::vector<real>(plan.mask)));
    Var probs = softmax_lastdim(scores);
    Var ctx = bmm(probs, vh);

    Var flat = reshape(ctx, {plan.part.window_count * heads * wv, dh});
    Var gathered = permute_rows(flat, plan.gather);
    Var merged = reshape(gathered, {plan.part.token_count, C});
    Var proj = linear(merged, m.param(pfx + ".attn.o.w"), m.param(pfx + ".attn.o.b"));
    x = add(x, drop_path(proj, dp_rate, training, m.drop_rng));

    Var ln2 = layer_norm(x, m.param(pfx + ".ln2.g"), m.param(pfx + ".ln2.b"));
    Var h1 = gelu(linear(ln2, m.param(pfx + ".ffn.f1.w"), m.param(pfx + ".ffn.f1.b")));
    Var h2 = linear(h1, m.param(pfx + ".ffn.f2.w"), m.param(pfx + ".ffn.f2.b"));
    return add(x, drop_path(h2, dp_rate, training, m.drop_rng));
}

}  // namespace

namespace {

Var patch_merge(Model& m, const std::string& pfx, Var x, const std::array<int, 3>& t) {
    const int C = x->shape[1];
    const int n = x->shape[0];
    std::vector<int> perm;
    perm.reserve(n);
    for (int pz = 0; pz < t[2] / 2; ++pz)
        for (int py = 0; py < t[1] / 2; ++py)
            for (int px = 0; px < t[0] / 2; ++px)
                for (int oz = 0; oz < 2; ++oz)
                    for (int oy = 0; oy < 2; ++oy)
                        for (int ox = 0; ox < 2; ++ox)
                            perm.push_back((2 * px + ox) +
                                           t[0] * ((2 * py + oy) + t[1] * (2 * pz + oz)));
    Var grouped = permute_rows(x, perm);
    Var cat = reshape(grouped, {n / 8, 8 * C});
    Var ln = layer_norm(cat, m.param(pfx + ".ln.g"), m.param(pfx + ".ln.b"));
    return linear(ln, m.param(pfx + ".w"), Var{});
}

Var conv_block_fwd(Model& m, const std::string& pfx, Var x, bool training) {
    x = conv3d(x, m.param(pfx + ".c1.w"), Var{}, {1, 1, 1}, {1, 1, 1});
    x = batch_norm3d(x, m.param(pfx + ".c1.bn.g"), m.param(pfx + ".c1.bn.b"),
                     m.bn.at(pfx + ".c1.bn"), training);
    x = relu(x);
    x = conv3d(x, m.param(pfx + ".c2.w"), Var{}, {1, 1, 1}, {1, 1, 1});
    x = batch_norm3d(x, m.param(pfx + ".c2.bn.g"), m.param(pfx + ".c2.bn.b"),
                     m.bn.at(pfx + ".c2.bn"), training);
    return relu(x);
}

Var conv_bn_relu(Model& m, const std::string& pfx, Var x, std::array<int, 3> stride,
                 std::array<int, 3> pad, bool training) {
    x = conv3d(x, m.param(pfx + ".w"), Var{}, stride, pad);
    x = batch_norm3d(x, m.param(pfx + ".bn.g"), m.param(pfx + ".bn.b"), m.bn.at(pfx + ".bn"),
                     training);
    return relu(x);
}

Var tokens_to_volume(const Var& tok, int channels, const std::array<int, 3>& t) {
    return reshape(transpose2d(tok), {channels, t[0], t[1], t[2]});
}

}  // namespace

PosteriorOutput model_forward(Model& m, const Volume& moving_mr, const Volume& fixed_ct,
                              bool training) {
    const ModelConfig& cfg = m.config;
    if (cfg.in_channels != 2)
        throw std::invalid_argument("model: forward expects a two-channel image pair");
    if (moving_mr.meta.dims != cfg.input_dims || !(moving_mr.meta == fixed_ct.meta))
        throw std::invalid_argument("model: image grids do not match the configured input");

    const int S = cfg.stages();
    const std::size_t nvox = moving_mr.meta.voxel_count();
    std::vector<real> stacked(2 * nvox);
    for (std::size_t i = 0; i < nvox; ++i) stacked[i] = static_cast<real>(moving_mr.values[i]);
    for (std::size_t i = 0; i < nvox; ++i)
        stacked[nvox + i] = static_cast<real>(fixed_ct.values[i]);
    Var input = constant({2, cfg.input_dims[0], cfg.input_dims[1], cfg.input_dims[2]},
                         std::move(stacked));

    std::vector<Var> skips(S);
    if (cfg.encoder == EncoderKind::attention) {
        Var pe = conv3d(input, m.param("patch_embed.w"), m.param("patch_embed.b"),
                        cfg.patch_size, {0, 0, 0});
        auto t0 = cfg.token_dims(0);
        const int n0 = t0[0] * t0[1] * t0[2];
        Var tok = transpose2d(reshape(pe, {cfg.embed_dim, n0}));
        tok = add(tok, sinusoidal_position_embedding(t0, cfg.embed_dim));

        int block_index = 0;
        const int total_blocks = std::accumulate(cfg.depths.begin(), cfg.depths.end(), 0);
        for (int s = 0; s < S; ++s) {
            const auto t = cfg.token_dims(s);
            for (int b = 0; b < cfg.depths[s]; ++b, ++block_index) {
                const double rate =
                    total_blocks > 1
                        ? cfg.drop_path_rate * block_index / (total_blocks - 1)
                        : 0.0;
                tok = attention_block(m,
                                      "enc.s" + std::to_string(s) + ".b" + std::to_string(b),
                                      tok, t, cfg.window_size, b % 2 == 1, cfg.num_heads[s],
                                      rate, training);
            }
            skips[s] = tokens_to_volume(tok, cfg.stage_dim(s), t);
            if (s + 1 < S) tok = patch_merge(m, "enc.merge" + std::to_string(s), tok, t);
        }
    } else {
        Var x = conv_bn_relu(m, "cenc.stem", input, cfg.patch_size, {0, 0, 0}, training);
        for (int s = 0; s < S; ++s) {
            std::string pfx = "cenc.s" + std::to_string(s);
            if (s + 1 < S) {
                x = conv_bn_relu(m, pfx + ".refine", x, {1, 1, 1}, {1, 1, 1}, training);
                skips[s] = x;
                x = conv_bn_relu(m, "cenc.down" + std::to_string(s), x, {2, 2, 2}, {0, 0, 0},
                                 training);
            } else {
                x = conv_bn_relu(m, pfx + ".refine", x, {1, 1, 1}, {1, 1, 1}, training);
                x = conv_bn_relu(m, pfx + ".proj", x, {1, 1, 1}, {0, 0, 0}, training);
                skips[s] = x;
            }
        }
    }

    Var x = conv_block_fwd(m, "dec.bottom", skips[S - 1], training);
    for (int s = S - 2; s >= 0; --s) {
        x = trilinear_upsample(x, {2, 2, 2});
        x = concat({x, skips[s]}, 0);
        x = conv_block_fwd(m, "dec.up" + std::to_string(s), x, training);
    }
    x = trilinear_upsample(x, cfg.patch_size);
    Var c0 = conv_block_fwd(m, "dec.c0", input, training);
    x = concat({x, c0}, 0);
    x = conv_block_fwd(m, "dec.full", x, training);

    Var mu = conv3d(x, m.param("head.mu.w"), m.param("head.mu.b"), {1, 1, 1}, {0, 0, 0});
    Var logvar =
        conv3d(x, m.param("head.logvar.w"), m.param("head.logvar.b"), {1, 1, 1}, {0, 0, 0});
    return {mu, logvar};
}

VectorField to_vector_field(const Var& field, const GridMeta& meta) {
    if (field->shape.size() != 4 || field->shape[0] != 3 ||
        field->shape[1] != meta.dims[0] || field->shape[2] != meta.dims[1] ||
        field->shape[3] != meta.dims[2])
        throw std::invalid_argument("net: to_vector_field shape mismatch");
    VectorField out = make_field(meta);
    const std::size_t plane = meta.voxel_count();
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            out.data[3 * i + c] = static_cast<float>(field->val[c * plane + i]);
    return out;
}

}  // inline namespace
}  // namespace morphreg::net
