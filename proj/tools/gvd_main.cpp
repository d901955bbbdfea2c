#include <iostream>

#include "gvd/cli.hpp"

int main(int argc, char** argv) { return gvd::run_cli(argc, argv, std::cout, std::cerr); }
