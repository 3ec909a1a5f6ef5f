#pragma once
// Subcommand entry points. Options arrive pre-parsed in plain structs so the
// command logic stays independent of the argument parser and directly
// callable from tests. Every function returns a process exit code (0 on
// success) and throws on failure; main maps exception types to exit codes
// and one-line error categories.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace morphreg::cli {

struct PhantomGenOptions {
    std::uint64_t seed = 1;
    int count = 1;
    std::array<int, 3> size{48, 48, 32};
    std::array<double, 3> spacing{1.5, 1.5, 3.0};
    double max_def = 4.0;   // voxels, cap on the integrated ground-truth map
    std::filesystem::path out;
};
int run_phantom_gen(const PhantomGenOptions& opt);

struct TrainOptions {
    std::filesystem::path data;
    std::filesystem::path config;   // optional JSON experiment config
    std::filesystem::path out;
    // flag overrides; unset values defer to the config file / defaults
    std::optional<int> epochs;
    std::optional<long> steps;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> similarity;   // "mind" | "ncc"
    std::optional<std::string> encoder;      // "attention" | "conv-only"
};
int run_train(const TrainOptions& opt);

struct RegisterOptions {
    std::filesystem::path moving;
    std::filesystem::path fixed;
    std::filesystem::path ckpt;
    std::filesystem::path out_field;
    std::filesystem::path out_warped;
};
int run_register(const RegisterOptions& opt);

struct EvaluateOptions {
    std::filesystem::path sample;
    std::filesystem::path field;
    std::filesystem::path report;
};
int run_evaluate(const EvaluateOptions& opt);

struct CrossvalOptions {
    std::filesystem::path data;
    std::filesystem::path config;   // optional JSON experiment config
    std::filesystem::path report;
    std::optional<int> folds;
    std::optional<std::uint64_t> seed;
    // method arms to run; subset of {mind-attention, ncc-attention, mind-conv}
    std::vector<std::string> variants{"mind-attention", "ncc-attention", "mind-conv"};
    int max_folds = 0;       // 0 = all folds; n = first n folds only (quick mode)
    int parallel_folds = 1;  // folds trained concurrently (they share no state)
};
int run_crossval(const CrossvalOptions& opt);

}  // namespace morphreg::cli
