#include <iostream>

#include "htad/cli.hpp"

int main(int argc, char** argv) { return htad::run_cli(argc, argv, std::cout, std::cerr); }
