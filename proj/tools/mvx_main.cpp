#include <string>
#include <vector>

#include "mvx/cli.hpp"

int main(int argc, char** argv) {
  return mvx::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
