#include <nsde/cli.hpp>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return nsde::cli::run_cli(args);
}
