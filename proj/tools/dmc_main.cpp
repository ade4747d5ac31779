#include <string>
#include <vector>

#include "dmc/cli.hpp"

int main(int argc, char** argv) {
  return dmc::cli::run_command(std::vector<std::string>(argv, argv + argc));
}
