#include <iostream>
#include <string>
#include <vector>

#include "fggb/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fggb::run_cli(args, std::cout, std::cerr);
}
