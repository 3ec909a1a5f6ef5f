#pragma once

// Experiment-level configuration shared by the train and crossval commands:
// a JSON document holding the model and training configurations plus the
// cross-validation parameters, with command-line flag overrides and a
// canonical echo for provenance.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "morphreg/net/train.hpp"
#include "morphreg/phantom.hpp"

namespace morphreg::cli {

struct ExperimentConfig {
    net::ModelConfig model;
    net::TrainConfig train;
    int folds = 5;
    std::uint64_t seed = 1;
    // set when the config document pinned input_dims explicitly; otherwise
    // the dims are adopted from the dataset
    bool explicit_input_dims = false;

    void validate_or_throw() const;
};

// Parse the experiment JSON document (unknown keys rejected). An empty path
// yields the defaults.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig experiment_config_from_json(const std::string& text);

// Canonical serialization of the effective configuration.
std::string experiment_config_to_json(const ExperimentConfig& cfg);

// One dataset sample: directory name (identifier) plus its loaded contents.
struct DatasetEntry {
    std::string id;
    PhantomSample sample;
};

// Load every sample_* directory under root, sorted by name. Throws when none
// are found.
std::vector<DatasetEntry> load_dataset(const std::filesystem::path& root);

// The model's grid either comes from the config document (then every sample
// must match it) or is adopted from the dataset; mixed-grid datasets are
// rejected.
void resolve_input_dims(ExperimentConfig& cfg, const std::vector<DatasetEntry>& dataset);

// Deterministic shuffled split: ids are shuffled by the seed and dealt
// round-robin, so folds are disjoint, exhaustive, and balanced within one.
// Returns fold -> indices into the dataset ordering.
std::vector<std::vector<std::size_t>> fold_split(std::size_t count, int folds,
                                                 std::uint64_t seed);

}  // namespace morphreg::cli
