#include <iostream>

#include "xtalk/cli.hpp"

int main(int argc, char** argv) { return xtalk::run_cli(argc, argv, std::cout, std::cerr); }
