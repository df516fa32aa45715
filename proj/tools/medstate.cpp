#include "medstate/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return medstate::cli::run(argc, argv, std::cerr); }
