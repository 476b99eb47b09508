#include <iostream>

#include "sidforge/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sidforge::run(args, std::cout, std::cerr);
}
