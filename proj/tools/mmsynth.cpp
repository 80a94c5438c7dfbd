#include <csignal>
#include <iostream>

#include "mmsynth/cli.hpp"

namespace {

extern "C" void on_sigint(int) { mmsynth::interrupt_flag().store(true); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_sigint);
  std::vector<std::string> args(argv + 1, argv + argc);
  return mmsynth::run_cli(args, std::cout, std::cerr);
}
