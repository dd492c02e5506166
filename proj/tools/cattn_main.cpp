#include <vector>

#include "cattn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cattn::run_cli(args);
}
