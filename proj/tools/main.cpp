#include <string>
#include <vector>

#include "latentdyn/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return latentdyn::run_cli(args);
}
