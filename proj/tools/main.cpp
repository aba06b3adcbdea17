#include <iostream>

#include "cfsm/cli.hpp"

int main(int argc, char** argv) { return cfsm::run_cli(argc, argv, std::cout, std::cerr); }
