#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "partwhole/trainer.hpp"
#include "partwhole/transfer.hpp"
#include "partwhole/zeroshot.hpp"

namespace partwhole {

/// Strict reader over a JSON object: every key must be consumed, so typos
/// surface as errors naming the full key path.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& object, std::string path);

  bool has(const std::string& key) const { return object_.contains(key); }
  const nlohmann::json& raw(const std::string& key);
  ConfigReader section(const std::string& key);

  template <class T>
  void read(const std::string& key, T& out) {
    if (!object_.contains(key)) return;
    consumed_.push_back(key);
    try {
      out = object_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw_type(key);
    }
  }

  /// Throws on any key that was never read.
  void finish() const;
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  [[noreturn]] void throw_type(const std::string& key) const;

  const nlohmann::json& object_;
  std::string path_;
  std::vector<std::string> consumed_;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
/// Starts from the preset named by "preset" (desk by default) and applies the
/// remaining keys. `path` prefixes field names in error messages.
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "pretrain");

struct LocalizeOptions {
  int patch_size = 64;
  std::vector<int> levels{1, 2};
};

struct MatchOptions {
  int window = 96;
  int stride = 16;
  int pairs = 10;
};

struct EvalConfig {
  std::uint64_t seed = 0;
  int max_images = 0;  // 0: every image in the corpus
  LocalizeOptions localize;
  CompositionOptions compose;
  InterpolationOptions interp;
  MatchOptions match;

  void validate() const;
};

nlohmann::json eval_config_to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j, const std::string& path = "eval");

/// Contents of a transfer task file.
struct TaskSpec {
  TaskKind kind = TaskKind::segmentation;
  std::filesystem::path corpus;  // relative paths resolve against the task file
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;
  FinetuneConfig finetune;
};

nlohmann::json task_spec_to_json(const TaskSpec& t);
TaskSpec task_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
TaskSpec load_task_spec(const std::filesystem::path& file);

/// Parses a config file. A document with any of the sections "pretrain",
/// "eval" or "transfer" is sectioned (and may hold "schema"); any other
/// document is taken as the pretrain section itself. Returns the requested
/// section, or an empty object when absent.
nlohmann::json load_config_section(const std::filesystem::path& file, const std::string& section);

}  // namespace partwhole
