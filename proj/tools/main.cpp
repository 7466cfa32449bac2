#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return wr2l::cli::run(argc, argv, std::cout, std::cerr);
}
