#include <string>
#include <vector>

#include "skmae/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return skmae::cli_main(args);
}
