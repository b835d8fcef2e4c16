#include <iostream>

#include "catn/cli.hpp"

int main(int argc, char** argv) { return catn::cli::run(argc, argv, std::cout, std::cerr); }
