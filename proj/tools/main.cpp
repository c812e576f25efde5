#include <iostream>

#include "siggate/cli.hpp"

int main(int argc, char** argv) { return siggate::cli::run(argc, argv, std::cout, std::cerr); }
