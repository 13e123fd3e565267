#include <iostream>
#include <string>
#include <vector>

#include "cqifb/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return cqifb::cli::run(args, std::cout, std::cerr);
}
