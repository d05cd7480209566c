#include <iostream>

#include "scd/cli/cli.hpp"

int main(int argc, char** argv) {
  return scd::cli::run_cli({argv, argv + argc}, std::cout, std::cerr);
}
