#include <iostream>

#include "hasseg/cli.hpp"

int main(int argc, char** argv) {
  return hasseg::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
