#include <iostream>

#include "lopf/cli.hpp"

int main(int argc, char** argv) { return lopf::cli::run(argc, argv, std::cout, std::cerr); }
