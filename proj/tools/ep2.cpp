#include <iostream>

#include "ep2/cli.hpp"

int main(int argc, char** argv) { return ep2::cli::run(argc, argv, std::cout, std::cerr); }
