#include "irtvi/cli.hpp"
#include "irtvi/runtime.hpp"

int main(int argc, char** argv) {
  irtvi::tune_allocator();
  return irtvi::cli::run(argc, argv);
}
