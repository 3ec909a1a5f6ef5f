#include "experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "morphreg/rng.hpp"

namespace morphreg::cli {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void bad_config(const std::string& message) {
    throw std::invalid_argument("config: " + message);
}

void expect_keys(const json& j, std::initializer_list<const char*> allowed,
                 const char* where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* k) { return key == k; }) == allowed.end())
            bad_config(std::string("unknown key \"") + key + "\" in " + where);
    }
}

net::SimilarityKind similarity_from_string(const std::string& name) {
    if (name == "mind") return net::SimilarityKind::mind;
    if (name == "ncc") return net::SimilarityKind::ncc;
    bad_config("similarity must be \"mind\" or \"ncc\", got \"" + name + "\"");
}

std::string similarity_to_string(net::SimilarityKind kind) {
    return kind == net::SimilarityKind::mind ? "mind" : "ncc";
}

void parse_train(const json& j, net::TrainConfig& train) {
    expect_keys(j,
                {"learning_rate", "beta1", "beta2", "adam_epsilon", "batch_size", "epochs",
                 "seed", "similarity", "ncc_window", "mind", "weights", "prior",
                 "integration", "max_steps", "log_every"},
                "train");
    if (j.contains("learning_rate")) train.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("beta1")) train.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) train.beta2 = j.at("beta2").get<double>();
    if (j.contains("adam_epsilon")) train.adam_epsilon = j.at("adam_epsilon").get<double>();
    if (j.contains("batch_size")) train.batch_size = j.at("batch_size").get<int>();
    if (j.contains("epochs")) train.epochs = j.at("epochs").get<int>();
    if (j.contains("seed")) train.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("similarity"))
        train.similarity = similarity_from_string(j.at("similarity").get<std::string>());
    if (j.contains("ncc_window")) train.ncc_window = j.at("ncc_window").get<int>();
    if (j.contains("mind")) {
        const json& m = j.at("mind");
        expect_keys(m, {"patch_radius", "variance_floor"}, "train.mind");
        if (m.contains("patch_radius")) train.mind.patch_radius = m.at("patch_radius").get<int>();
        if (m.contains("variance_floor"))
            train.mind.variance_floor = m.at("variance_floor").get<double>();
    }
    if (j.contains("weights")) {
        const json& w = j.at("weights");
        expect_keys(w, {"image", "kl", "surface"}, "train.weights");
        if (w.contains("image")) train.weights.image = w.at("image").get<double>();
        if (w.contains("kl")) train.weights.kl = w.at("kl").get<double>();
        if (w.contains("surface")) train.weights.surface = w.at("surface").get<double>();
    }
    if (j.contains("prior")) {
        const json& p = j.at("prior");
        expect_keys(p, {"lambda"}, "train.prior");
        if (p.contains("lambda")) train.prior.lambda = p.at("lambda").get<double>();
    }
    if (j.contains("integration")) {
        const json& i = j.at("integration");
        expect_keys(i, {"steps"}, "train.integration");
        if (i.contains("steps")) train.integration.steps = i.at("steps").get<int>();
    }
    if (j.contains("max_steps")) train.max_steps = j.at("max_steps").get<long>();
    if (j.contains("log_every")) train.log_every = j.at("log_every").get<int>();
}

}  // namespace

void ExperimentConfig::validate_or_throw() const {
    if (folds < 2) bad_config("folds must be >= 2");
    model.validate_or_throw();
    train.validate_or_throw();
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        bad_config(std::string("cannot parse experiment config: ") + e.what());
    }
    if (!j.is_object()) bad_config("experiment config must be a JSON object");
    expect_keys(j, {"model", "train", "folds", "seed"}, "experiment config");

    ExperimentConfig cfg;
    if (j.contains("model")) {
        // reuse the model-config parser, including its unknown-key rejection
        cfg.model = net::model_config_from_json(j.at("model").dump());
        cfg.explicit_input_dims = j.at("model").contains("input_dims");
    }
    if (j.contains("train")) parse_train(j.at("train"), cfg.train);
    if (j.contains("folds")) cfg.folds = j.at("folds").get<int>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    if (path.empty()) return ExperimentConfig{};
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io: cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return experiment_config_from_json(ss.str());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["model"] = json::parse(net::model_config_to_json(cfg.model));
    ordered_json t;
    t["learning_rate"] = cfg.train.learning_rate;
    t["beta1"] = cfg.train.beta1;
    t["beta2"] = cfg.train.beta2;
    t["adam_epsilon"] = cfg.train.adam_epsilon;
    t["batch_size"] = cfg.train.batch_size;
    t["epochs"] = cfg.train.epochs;
    t["seed"] = cfg.train.seed;
    t["similarity"] = similarity_to_string(cfg.train.similarity);
    t["ncc_window"] = cfg.train.ncc_window;
    t["mind"] = {{"patch_radius", cfg.train.mind.patch_radius},
                 {"variance_floor", cfg.train.mind.variance_floor}};
    t["weights"] = {{"image", cfg.train.weights.image},
                    {"kl", cfg.train.weights.kl},
                    {"surface", cfg.train.weights.surface}};
    t["prior"] = {{"lambda", cfg.train.prior.lambda}};
    t["integration"] = {{"steps", cfg.train.integration.steps}};
    t["max_steps"] = cfg.train.max_steps;
    t["log_every"] = cfg.train.log_every;
    j["train"] = std::move(t);
    j["folds"] = cfg.folds;
    j["seed"] = cfg.seed;
    return j.dump(2) + "\n";
}

std::vector<DatasetEntry> load_dataset(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root))
        throw std::runtime_error("data: dataset directory not found: " + root.string());
    std::vector<std::filesystem::path> dirs;
    for (const auto& entry : std::filesystem::directory_iterator(root))
        if (entry.is_directory() && entry.path().filename().string().rfind("sample_", 0) == 0)
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty())
        throw std::runtime_error("data: no sample_* directories under " + root.string());

    std::vector<DatasetEntry> entries;
    entries.reserve(dirs.size());
    for (const auto& dir : dirs)
        entries.push_back(DatasetEntry{dir.filename().string(), read_sample(dir)});
    return entries;
}

std::vector<std::vector<std::size_t>> fold_split(std::size_t count, int folds,
                                                 std::uint64_t seed) {
    if (folds < 2) bad_config("folds must be >= 2");
    if (static_cast<std::size_t>(folds) > count)
        throw std::runtime_error("data: fold count " + std::to_string(folds) +
                                 " exceeds dataset size " + std::to_string(count));
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    std::mt19937_64 gen(seed);
    for (std::size_t i = count; i > 1; --i)
        std::swap(order[i - 1], order[uniform_index(gen, i)]);

    std::vector<std::vector<std::size_t>> split(static_cast<std::size_t>(folds));
    for (std::size_t i = 0; i < count; ++i)
        split[i % static_cast<std::size_t>(folds)].push_back(order[i]);
    return split;
}

}  // namespace morphreg::cli
