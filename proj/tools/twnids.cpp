#include <iostream>

#include "twnids/cli.hpp"

int main(int argc, char** argv) { return twnids::cli::run_cli(argc, argv, std::cout, std::cerr); }
