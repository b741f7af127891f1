#include <iostream>

#include "relm/cli.hpp"

int main(int argc, char** argv) { return relm::cli::run(argc, argv, std::cout, std::cerr); }
