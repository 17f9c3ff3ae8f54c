#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "partwhole/model.hpp"
#include "partwhole/optim.hpp"

namespace partwhole {

/// Single-file archive: 8-byte magic "PWCKPT01", u64 little-endian header
/// length, JSON header, then the arrays as little-endian float32 in header
/// order. The header carries the caller's metadata under "meta" and an
/// "arrays" table of {name, count, offset}.
struct Archive {
  nlohmann::json meta;
  std::vector<std::pair<std::string, std::vector<float>>> arrays;

  const std::vector<float>& array(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Appends student, teacher and center arrays plus model metadata.
void pack_model(const ModelState& state, Archive& archive);
ModelState unpack_model(const Archive& archive);

void pack_optimizer(const AdamW& opt, const std::vector<ParamRef>& params, Archive& archive);
void unpack_optimizer(const Archive& archive, const std::vector<ParamRef>& params, AdamW& opt);

/// Model-only convenience loader used by the evaluation and transfer tools.
ModelState load_model(const std::filesystem::path& path);

}  // namespace partwhole
