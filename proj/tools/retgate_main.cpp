#include <string>
#include <vector>

#include "retgate/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return retgate::run_cli(args);
}
