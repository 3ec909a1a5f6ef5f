#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "commands.hpp"
#include "experiment.hpp"
#include "morphreg/net/model.hpp"
#include "morphreg/net/train.hpp"

namespace morphreg::cli {

namespace {

net::SimilarityKind parse_similarity_flag(const std::string& name) {
    if (name == "mind") return net::SimilarityKind::mind;
    if (name == "ncc") return net::SimilarityKind::ncc;
    throw std::invalid_argument("config: --similarity must be mind or ncc, got \"" + name +
                                "\"");
}

net::EncoderKind parse_encoder_flag(const std::string& name) {
    if (name == "attention") return net::EncoderKind::attention;
    if (name == "conv-only") return net::EncoderKind::convolution;
    throw std::invalid_argument("config: --encoder must be attention or conv-only, got \"" +
                                name + "\"");
}

void apply_train_overrides(ExperimentConfig& cfg, const TrainOptions& opt) {
    if (opt.epochs) cfg.train.epochs = *opt.epochs;
    if (opt.steps) cfg.train.max_steps = *opt.steps;
    if (opt.seed) {
        cfg.seed = *opt.seed;
        cfg.train.seed = *opt.seed;
    }
    if (opt.similarity) cfg.train.similarity = parse_similarity_flag(*opt.similarity);
    if (opt.encoder) cfg.model.encoder = parse_encoder_flag(*opt.encoder);
}

}  // namespace

int run_train(const TrainOptions& opt) {
    if (opt.data.empty()) throw std::invalid_argument("config: --data is required");
    if (opt.out.empty()) throw std::invalid_argument("config: --out is required");

    ExperimentConfig cfg = load_experiment_config(opt.config);
    apply_train_overrides(cfg, opt);

    std::vector<DatasetEntry> dataset = load_dataset(opt.data);
    resolve_input_dims(cfg, dataset);
    cfg.validate_or_throw();

    std::vector<net::TrainingCase> cases;
    cases.reserve(dataset.size());
    for (const DatasetEntry& entry : dataset)
        cases.push_back(net::training_case_from_sample(entry.sample));

    std::filesystem::create_directories(opt.out);
    {
        std::ofstream echo(opt.out / "config.json", std::ios::binary);
        if (!echo)
            throw std::runtime_error("io: cannot write " + (opt.out / "config.json").string());
        echo << experiment_config_to_json(cfg);
    }

    net::Model model = net::make_model(cfg.model, cfg.train.seed);
    std::printf("training on %zu samples (%zu parameters)\n", cases.size(),
                net::parameter_count(model));

    net::TrainResult result;
    {
        std::ofstream log(opt.out / "loss_log.jsonl", std::ios::binary);
        if (!log)
            throw std::runtime_error("io: cannot write " +
                                     (opt.out / "loss_log.jsonl").string());
        result = net::run_training(model, cases, cfg.train, &log);
    }

    const std::filesystem::path ckpt = opt.out / "checkpoint.bin";
    net::save_checkpoint(model, result.steps, ckpt);
    std::printf("trained %ld steps, final loss %.6f\n", result.steps, result.last.total);
    std::printf("checkpoint %s\n", ckpt.string().c_str());
    return 0;
}

}  // namespace morphreg::cli
