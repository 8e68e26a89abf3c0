#include <iostream>

#include "drw/cli.hpp"

int main(int argc, char** argv) {
  return drw::run_cli(argc, argv, std::cout, std::cerr);
}
