#include <string>
#include <vector>

#include "treegpt/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return treegpt::cli::run(args);
}
