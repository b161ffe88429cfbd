#include <cstring>
#include <iostream>
#include <string>

#include "agediff/cli.hpp"

namespace {

void usage(const char* prog) {
  std::cerr << "usage: " << prog << " <config> [--strict] [--output <dir>] [--threads <n>]\n"
            << "\n"
            << "Runs the command configured in the [run] section of <config>:\n"
            << "  simulate | equilibrium | spectrum | verdict | verify | sweep\n"
            << "\n"
            << "  --strict       exit with status 3 on an inconclusive verdict\n"
            << "  --output <dir> write outputs under <dir> (overrides the config)\n"
            << "  --threads <n>  parallel column propagation in spectral assembly\n";
}

}  // namespace

int main(int argc, char** argv) {
  std::string config_path;
  agediff::CliOptions options;

  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--strict") {
      options.strict = true;
    } else if (arg == "--output") {
      if (i + 1 >= argc) {
        std::cerr << "--output requires a directory argument\n";
        return 1;
      }
      options.output_dir = argv[++i];
    } else if (arg == "--threads") {
      if (i + 1 >= argc) {
        std::cerr << "--threads requires a count\n";
        return 1;
      }
      try {
        options.threads = std::stoi(argv[++i]);
      } catch (const std::exception&) {
        std::cerr << "--threads: not an integer\n";
        return 1;
      }
      if (options.threads < 1) {
        std::cerr << "--threads must be >= 1\n";
        return 1;
      }
    } else if (arg == "--help" || arg == "-h") {
      usage(argv[0]);
      return 0;
    } else if (!arg.empty() && arg[0] == '-') {
      std::cerr << "unknown flag: " << arg << "\n";
      usage(argv[0]);
      return 1;
    } else if (config_path.empty()) {
      config_path = arg;
    } else {
      std::cerr << "unexpected extra argument: " << arg << "\n";
      return 1;
    }
  }

  if (config_path.empty()) {
    usage(argv[0]);
    return 1;
  }
  return agediff::run(config_path, options);
}
