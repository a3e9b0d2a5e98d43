#include <iostream>

#include "tips/cli.hpp"

int main(int argc, char** argv) { return tips::cli::run(argc, argv, std::cout, std::cerr); }
