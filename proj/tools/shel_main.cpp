#include "shel/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return shel::run_cli(argc, argv, std::cout, std::cerr); }
