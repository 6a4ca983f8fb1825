#include <iostream>
#include <string>
#include <vector>

#include "d3hr/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return d3hr::cli::run(args, std::cout, std::cerr);
}
