#include "counsel/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return counsel::cli_dispatch(argc, argv, std::cout, std::cerr, std::cin); }
