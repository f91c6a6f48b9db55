#include <vector>

#include "aerolabel/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return aerolabel::cli::run(args);
}
