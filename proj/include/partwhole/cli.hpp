#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace partwhole::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

/// Provenance record written to `run.json` in every output directory: once at
/// start (status "running") and again at exit with the artifact list.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::string status = "running";
  std::vector<std::string> artifacts;  // relative to the output directory

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& out_dir) const;
};

nlohmann::json platform_fingerprint();

/// Parses argv and runs one command; returns the process exit code.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

/// Markdown summary of every analysis JSON under `run_dir`; returns its path.
std::filesystem::path write_report(const std::filesystem::path& run_dir);

}  // namespace partwhole::cli
