#include "odeforge/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return odeforge::cli::run(argc, argv, std::cout, std::cerr); }
