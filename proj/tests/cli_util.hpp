#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace cli {

struct Outcome {
  int status = -1;
  std::string err;
};

// Runs the CLI with `args`; stderr is captured through a temp file.
inline Outcome run(const std::string& args) {
  const auto log = std::filesystem::temp_directory_path() / ("voxnas_cli_" + std::to_string(::getpid()) + ".err");
  const std::string cmd = std::string(VOXNAS_CLI) + " " + args + " >/dev/null 2>" + log.string();
  const int raw = std::system(cmd.c_str());
  Outcome o;
  o.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log);
  std::stringstream s;
  s << in.rdbuf();
  o.err = s.str();
  std::filesystem::remove(log);
  return o;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Relative path -> bytes for every regular file under `root`.
inline std::map<std::string, std::string> tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

}  // namespace cli
