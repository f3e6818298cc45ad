#include <iostream>

#include "tycoon/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tycoon::cli::run_cli(args, std::cout, std::cerr, std::cin);
}
