#include <iostream>

#include "hetcate/cli.hpp"

int main(int argc, char** argv) { return hetcate::cli::run(argc, argv, std::cout, std::cerr); }
