#include "morphreg/net/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "morphreg/metrics.hpp"
#include "morphreg/rng.hpp"

namespace morphreg::net {

#if defined(MORPHREG_AD_FP64)
inline namespace fp64 {
#else
inline namespace fp32 {
#endif

void TrainConfig::validate_or_throw() const {
    if (!(learning_rate > 0.0))
        throw std::invalid_argument("train: learning rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw std::invalid_argument("train: Adam betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0))
        throw std::invalid_argument("train: Adam epsilon must be positive");
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (ncc_window < 1) throw std::invalid_argument("train: NCC window must be >= 1");
    if (max_steps < 0) throw std::invalid_argument("train: max_steps must be >= 0");
    if (log_every < 1) throw std::invalid_argument("train: log_every must be >= 1");
    mind.validate_or_throw();
    weights.validate_or_throw();
    prior.validate_or_throw();
    integration.validate_or_throw();
}

TrainingCase training_case_from_sample(const PhantomSample& sample) {
    TrainingCase c;
    c.moving_mr = sample.moving_mr;
    c.fixed_ct = sample.fixed_ct;
    const PointSet fixed_surface = surface_points_from_mask(sample.fixed_mask);
    c.fixed_surface_voxel.reserve(fixed_surface.size());
    for (const Point3& p : fixed_surface.points)
        c.fixed_surface_voxel.push_back(world_to_voxel(sample.fixed_ct.meta, p));
    c.moving_surface_world = surface_points_from_mask(sample.moving_mask).points;
    return c;
}

namespace {

Var volume_constant(const Volume& vol) {
    std::vector<real> vals(vol.values.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<real>(vol.values[i]);
    return constant({vol.meta.dims[0], vol.meta.dims[1], vol.meta.dims[2]}, std::move(vals));
}

struct CaseGraphData {
    Var moving;                 // (X,Y,Z) constant
    Var fixed;                  // (X,Y,Z) constant, NCC arm only
    DescriptorField fixed_desc; // MIND arm only
};

}  // namespace

TrainResult run_training(Model& model, const std::vector<TrainingCase>& cases,
                         const TrainConfig& cfg, std::ostream* log) {
    cfg.validate_or_throw();
    if (cases.empty()) throw std::invalid_argument("train: dataset is empty");

    const GridMeta meta = cases.front().moving_mr.meta;
    if (meta.dims != model.config.input_dims)
        throw std::invalid_argument("train: dataset grid does not match the model input dims");
    for (const TrainingCase& c : cases) {
        if (!(c.moving_mr.meta == meta) || !(c.fixed_ct.meta == meta))
            throw std::invalid_argument("train: all cases must share one grid");
        if (cfg.weights.surface > 0.0 &&
            (c.fixed_surface_voxel.empty() || c.moving_surface_world.empty()))
            throw std::invalid_argument(
                "train: surface weight is positive but a case has no surface points");
    }

    std::vector<CaseGraphData> graph_data(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        graph_data[i].moving = volume_constant(cases[i].moving_mr);
        if (cfg.similarity == SimilarityKind::ncc)
            graph_data[i].fixed = volume_constant(cases[i].fixed_ct);
        else
            graph_data[i].fixed_desc = mind_descriptor(cases[i].fixed_ct, cfg.mind);
    }

    // Independent deterministic streams: case ordering and posterior noise.
    std::mt19937_64 order_rng(cfg.seed ^ 0xD6E8FEB86659FD93ULL);
    std::mt19937_64 noise_rng(cfg.seed ^ 0x2545F4914F6CDD1DULL);
    NormalSampler noise_normal;

    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> adam;
    for (const auto& [name, p] : model.params)
        adam[name] = Moments{std::vector<double>(p->size(), 0.0),
                             std::vector<double>(p->size(), 0.0)};

    TrainResult result;
    long adam_t = 0;
    bool stop = false;
    const std::size_t nvox = meta.voxel_count();

    for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        std::vector<std::size_t> order(cases.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[uniform_index(order_rng, i)]);

        std::size_t pos = 0;
        while (pos < order.size() && !stop) {
            const int batch =
                static_cast<int>(std::min<std::size_t>(cfg.batch_size, order.size() - pos));
            const long step = result.steps + 1;
            zero_grad(model);
            LossBreakdown acc{};

            for (int b = 0; b < batch; ++b, ++pos) {
                const TrainingCase& tc = cases[order[pos]];
                const CaseGraphData& gd = graph_data[order[pos]];

                PosteriorOutput post = model_forward(model, tc.moving_mr, tc.fixed_ct, true);
                std::vector<real> noise(3 * nvox);
                for (real& n : noise) n = static_cast<real>(noise_normal(noise_rng));
                Var eps = constant(post.mu->shape, std::move(noise));
                Var vel = add(post.mu, mul(exp_op(scale(post.logvar, 0.5)), eps));
                // a non-finite velocity would feed NaN coordinates into the
                // resampler's cell lookup, which cannot clamp them; abort here
                // with the same step-numbered message as the loss check below
                for (real c : vel->val)
                    if (!std::isfinite(static_cast<double>(c)))
                        throw std::runtime_error("train: non-finite loss at step " +
                                                 std::to_string(step));
                Var u = integrate_svf_diff(vel, cfg.integration.steps);
                Var warped = warp_image(gd.moving, u);

                Var image = cfg.similarity == SimilarityKind::mind
                                ? mind_loss_diff(warped, gd.fixed_desc, cfg.mind)
                                : ncc_loss_diff(warped, gd.fixed, cfg.ncc_window);
                Var total = scale(image, cfg.weights.image);
                double kl_val = 0.0, surface_val = 0.0;
                if (cfg.weights.kl > 0.0) {
                    Var kl = kl_loss_diff(post.mu, post.logvar, cfg.prior.lambda);
                    kl_val = cfg.weights.kl * static_cast<double>(kl->val[0]);
                    total = add(total, scale(kl, cfg.weights.kl));
                }
                if (cfg.weights.surface > 0.0) {
                    Var surf = surface_loss_diff(u, tc.fixed_surface_voxel,
                                                 tc.moving_surface_world, meta,
                                                 ChamferMode::symmetric);
                    surface_val = cfg.weights.surface * static_cast<double>(surf->val[0]);
                    total = add(total, scale(surf, cfg.weights.surface));
                }

                const double total_val = static_cast<double>(total->val[0]);
                if (!std::isfinite(total_val))
                    throw std::runtime_error("train: non-finite loss at step " +
                                             std::to_string(step));
                acc.total += total_val;
                acc.image += cfg.weights.image * static_cast<double>(image->val[0]);
                acc.kl += kl_val;
                acc.surface += surface_val;
                backward(total);
            }

            ++adam_t;
            const double inv_batch = 1.0 / batch;
            const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t));
            const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t));
            for (auto& [name, p] : model.params) {
                Moments& mo = adam[name];
                for (std::size_t i = 0; i < p->size(); ++i) {
                    const double g = static_cast<double>(p->grad[i]) * inv_batch;
                    mo.m[i] = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * g;
                    mo.v[i] = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * g * g;
                    const double update = cfg.learning_rate * (mo.m[i] / c1) /
                                          (std::sqrt(mo.v[i] / c2) + cfg.adam_epsilon);
                    p->val[i] = static_cast<real>(static_cast<double>(p->val[i]) - update);
                }
            }

            result.steps = step;
            result.last = LossBreakdown{acc.total * inv_batch, acc.image * inv_batch,
                                        acc.kl * inv_batch, acc.surface * inv_batch};
            result.history.push_back(result.last);
            if (log && (step % cfg.log_every == 0))
                *log << loss_log_line(step, result.last) << '\n';
            if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) stop = true;
        }
    }
    return result;
}

RegistrationResult register_pair(Model& model, const Volume& moving_mr, const Volume& fixed_ct,
                                 const IntegrationConfig& integration) {
    integration.validate_or_throw();
    PosteriorOutput post = model_forward(model, moving_mr, fixed_ct, false);
    RegistrationResult out;
    out.velocity = to_vector_field(post.mu, moving_mr.meta);
    out.displacement = integrate_svf(out.velocity, integration);
    out.warped = warp_volume(moving_mr, out.displacement);
    return out;
}

// ---------------------------------------------------------------------------
// configuration serialization
// ---------------------------------------------------------------------------

namespace {

nlohmann::json config_to_tree(const ModelConfig& cfg) {
    nlohmann::json j;
    j["input_dims"] = cfg.input_dims;
    j["patch_size"] = cfg.patch_size;
    j["window_size"] = cfg.window_size;
    j["in_channels"] = cfg.in_channels;
    j["embed_dim"] = cfg.embed_dim;
    j["depths"] = cfg.depths;
    j["num_heads"] = cfg.num_heads;
    j["decoder_channels"] = cfg.decoder_channels;
    j["ffn_ratio"] = cfg.ffn_ratio;
    j["drop_path_rate"] = cfg.drop_path_rate;
    j["encoder"] = cfg.encoder == EncoderKind::attention ? "attention" : "conv-only";
    j["conv_encoder_mid"] = cfg.conv_encoder_mid;
    return j;
}

ModelConfig config_from_tree(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("model config: expected a JSON object");
    ModelConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "input_dims") value.get_to(cfg.input_dims);
        else if (key == "patch_size") value.get_to(cfg.patch_size);
        else if (key == "window_size") value.get_to(cfg.window_size);
        else if (key == "in_channels") value.get_to(cfg.in_channels);
        else if (key == "embed_dim") value.get_to(cfg.embed_dim);
        else if (key == "depths") value.get_to(cfg.depths);
        else if (key == "num_heads") value.get_to(cfg.num_heads);
        else if (key == "decoder_channels") value.get_to(cfg.decoder_channels);
        else if (key == "ffn_ratio") value.get_to(cfg.ffn_ratio);
        else if (key == "drop_path_rate") value.get_to(cfg.drop_path_rate);
        else if (key == "conv_encoder_mid") value.get_to(cfg.conv_encoder_mid);
        else if (key == "encoder") {
            const std::string name = value.get<std::string>();
            if (name == "attention") cfg.encoder = EncoderKind::attention;
            else if (name == "conv-only") cfg.encoder = EncoderKind::convolution;
            else throw std::invalid_argument("model config: unknown encoder '" + name + "'");
        } else {
            throw std::invalid_argument("model config: unknown key '" + key + "'");
        }
    }
    cfg.validate_or_throw();
    return cfg;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_to_tree(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("model config: parse failure: ") + e.what());
    }
    return config_from_tree(j);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'R', 'E', 'G', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& data, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[at + i])) << (8 * i);
    return v;
}

float get_f32(const std::string& data, std::size_t at) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[at + i])) << (8 * i);
    return std::bit_cast<float>(bits);
}

// Every serialized tensor, in the sorted-name order the blob uses.
struct TensorEntry {
    std::string name;
    std::vector<int> shape;
    const real* values;
    std::size_t count;
};

std::vector<TensorEntry> tensor_table(const Model& model) {
    std::vector<TensorEntry> table;
    for (const auto& [name, p] : model.params)
        table.push_back({name, p->shape, p->val.data(), p->size()});
    for (const auto& [name, state] : model.bn) {
        table.push_back({name + ".running_mean",
                         {static_cast<int>(state.running_mean.size())},
                         state.running_mean.data(), state.running_mean.size()});
        table.push_back({name + ".running_var",
                         {static_cast<int>(state.running_var.size())},
                         state.running_var.data(), state.running_var.size()});
    }
    std::sort(table.begin(), table.end(),
              [](const TensorEntry& a, const TensorEntry& b) { return a.name < b.name; });
    return table;
}

}  // namespace

void save_checkpoint(const Model& model, long train_step, const std::filesystem::path& path) {
    const std::vector<TensorEntry> table = tensor_table(model);

    nlohmann::json manifest;
    manifest["format"] = "morphreg-checkpoint-1";
    manifest["train_step"] = train_step;
    manifest["config"] = config_to_tree(model.config);
    nlohmann::json tensors = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const TensorEntry& e : table) {
        tensors[e.name] = {{"shape", e.shape}, {"offset", offset}, {"bytes", 4 * e.count}};
        offset += 4 * e.count;
    }
    manifest["tensors"] = tensors;
    const std::string manifest_text = manifest.dump();

    std::string out;
    out.reserve(16 + manifest_text.size() + offset);
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u64(out, manifest_text.size());
    out += manifest_text;
    for (const TensorEntry& e : table)
        for (std::size_t i = 0; i < e.count; ++i) put_f32(out, static_cast<float>(e.values[i]));

    std::ofstream stream(path, std::ios::binary | std::ios::trunc);
    if (!stream) throw std::runtime_error("checkpoint: cannot open " + path.string());
    stream.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!stream) throw std::runtime_error("checkpoint: write failure on " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream stream(path, std::ios::binary);
    if (!stream) throw std::runtime_error("checkpoint: cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(stream)),
                     std::istreambuf_iterator<char>());

    if (data.size() < 16 || std::memcmp(data.data(), kCheckpointMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    const std::uint64_t manifest_len = get_u64(data, 8);
    if (16 + manifest_len > data.size())
        throw std::runtime_error("checkpoint: truncated manifest in " + path.string());

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(data.substr(16, manifest_len));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: manifest parse failure: ") + e.what());
    }
    if (manifest.value("format", std::string()) != "morphreg-checkpoint-1")
        throw std::runtime_error("checkpoint: unsupported format in " + path.string());

    LoadedCheckpoint out{make_model(config_from_tree(manifest.at("config")), 0),
                         manifest.at("train_step").get<long>()};

    const std::size_t blob_at = 16 + manifest_len;
    std::size_t expected_bytes = 0;
    for (const auto& [name, entry] : manifest.at("tensors").items()) {
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        const std::uint64_t bytes = entry.at("bytes").get<std::uint64_t>();
        expected_bytes += bytes;
        if (blob_at + offset + bytes > data.size())
            throw std::runtime_error("checkpoint: truncated payload in " + path.string());

        real* dst = nullptr;
        std::size_t count = 0;
        if (auto it = out.model.params.find(name); it != out.model.params.end()) {
            if (it->second->shape != entry.at("shape").get<std::vector<int>>())
                throw std::runtime_error("checkpoint: shape mismatch for " + name);
            dst = it->second->val.data();
            count = it->second->size();
        } else {
            for (auto& [bn_name, state] : out.model.bn) {
                if (name == bn_name + ".running_mean") {
                    dst = state.running_mean.data();
                    count = state.running_mean.size();
                } else if (name == bn_name + ".running_var") {
                    dst = state.running_var.data();
                    count = state.running_var.size();
                }
                if (dst) break;
            }
        }
        if (!dst) throw std::runtime_error("checkpoint: unknown tensor " + name);
        if (bytes != 4 * count)
            throw std::runtime_error("checkpoint: size mismatch for " + name);
        for (std::size_t i = 0; i < count; ++i)
            dst[i] = static_cast<real>(get_f32(data, blob_at + offset + 4 * i));
    }
    const std::size_t tensor_count = manifest.at("tensors").size();
    if (tensor_count != out.model.params.size() + 2 * out.model.bn.size())
        throw std::runtime_error("checkpoint: tensor table incomplete in " + path.string());
    if (blob_at + expected_bytes != data.size())
        throw std::runtime_error("checkpoint: payload size mismatch in " + path.string());
    return out;
}

}  // inline namespace
}  // namespace morphreg::net
