#include <vector>

#include "cefm/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cefm::cli::run(args);
}
