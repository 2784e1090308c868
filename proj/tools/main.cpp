#include <iostream>

#include "tsclab/cli.hpp"

int main(int argc, char** argv) { return tsclab::cli::run(argc, argv, std::cout, std::cerr); }
