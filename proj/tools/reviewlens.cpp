#include <spdlog/sinks/stdout_color_sinks.h>

#include "reviewlens/cli/app.hpp"

int main(int argc, char** argv) {
  // stdout carries command output; diagnostics go to stderr.
  spdlog::set_default_logger(spdlog::stderr_color_mt("reviewlens"));
  return reviewlens::cli::run(argc, argv);
}
