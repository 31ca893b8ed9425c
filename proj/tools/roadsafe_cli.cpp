#include "roadsafe/cli.hpp"

int main(int argc, char** argv) {
  return roadsafe::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
