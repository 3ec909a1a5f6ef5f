// morphreg command-line entry point.
//
// Subcommands: phantom-gen, train, register, evaluate, crossval.
// Exit code 0 on success; nonzero with a one-line `error_category: message`
// on stderr otherwise.

#include <cstdio>
#include <exception>
#include <string>

namespace morphreg::cli {
int run(int argc, char** argv);
}

int main(int argc, char** argv) {
    try {
        return morphreg::cli::run(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal: %s\n", e.what());
        return 70;
    }
}

namespace morphreg::cli {

// Placeholder dispatcher; subcommands land together with the engine modules.
int run(int argc, char** argv) {
    (void)argv;
    if (argc < 2) {
        std::fprintf(stderr, "usage: morphreg <phantom-gen|train|register|evaluate|crossval> [options]\n");
        return 2;
    }
    std::fprintf(stderr, "usage: subcommands not wired up yet\n");
    return 2;
}

}  // namespace morphreg::cli
