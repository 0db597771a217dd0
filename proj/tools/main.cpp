#include "qprobe/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return qprobe::run_cli(argc, argv, std::cout, std::cerr); }
