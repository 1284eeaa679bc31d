#include <iostream>

#include "kinegraph/cli.hpp"

int main(int argc, char** argv) { return kinegraph::cli::run(argc, argv, std::cout, std::cerr); }
