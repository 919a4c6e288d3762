#include <iostream>

#include "vinlab/cli.hpp"

int main(int argc, char** argv) { return vinlab::run_cli(argc, argv, std::cout, std::cerr); }
