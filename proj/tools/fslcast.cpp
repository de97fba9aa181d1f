#include <iostream>

#include "fslcast/cli.hpp"

int main(int argc, char** argv) { return fslcast::cli::run(argc, argv, std::cout, std::cerr); }
