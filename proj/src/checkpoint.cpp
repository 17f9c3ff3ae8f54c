#include "partwhole/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "partwhole/error.hpp"

namespace partwhole {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'W', 'C', 'K', 'P', 'T', '0', '1'};

template <class Refs>
void copy_in(const Archive& a, Refs& refs) {
  for (auto& r : refs) {
    const auto& src = a.array(r.name);
    require(src.size() == r.values.size(), r.name,
            "checkpoint has " + std::to_string(src.size()) + " values, model expects " +
                std::to_string(r.values.size()));
    std::copy(src.begin(), src.end(), r.values.begin());
  }
}

}  // namespace

const std::vector<float>& Archive::array(const std::string& name) const {
  for (const auto& [n, v] : arrays)
    if (n == name) return v;
  throw PreconditionError(name, "array missing from checkpoint");
}

bool Archive::has(const std::string& name) const {
  for (const auto& [n, v] : arrays)
    if (n == name) return true;
  return false;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header;
  header["meta"] = archive.meta;
  auto& table = header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, values] : archive.arrays) {
    table.push_back({{"name", name}, {"count", values.size()}, {"offset", offset}});
    offset += values.size() * sizeof(float);
  }
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, values] : archive.arrays)
      os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PreconditionError("ckpt", "cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw PreconditionError("ckpt", path.string() + " is not a checkpoint archive");
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);
  Archive a;
  a.meta = header.at("meta");
  for (const auto& entry : header.at("arrays")) {
    std::vector<float> values(entry.at("count").get<std::size_t>());
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!is) throw PreconditionError("ckpt", path.string() + " is truncated");
    a.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(values));
  }
  return a;
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"encoder",
           {{"kind", to_string(c.encoder.kind)},
            {"feature_dim", c.encoder.feature_dim},
            {"input_size", c.encoder.input_size},
            {"in_channels", c.encoder.in_channels},
            {"stage_widths", c.encoder.stage_widths},
            {"convs_per_stage", c.encoder.convs_per_stage},
            {"batch_norm", c.encoder.batch_norm}}},
          {"loc_hidden", c.loc_hidden},
          {"loc_bottleneck", c.loc_bottleneck},
          {"loc_out", c.loc_out},
          {"head_hidden", c.head_hidden},
          {"n_parts", c.n_parts}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& e = j.at("encoder");
  c.encoder.kind = encoder_kind_from_string(e.at("kind").get<std::string>());
  c.encoder.feature_dim = e.at("feature_dim").get<int>();
  c.encoder.input_size = e.at("input_size").get<int>();
  c.encoder.in_channels = e.at("in_channels").get<int>();
  c.encoder.stage_widths = e.at("stage_widths").get<std::vector<int>>();
  c.encoder.convs_per_stage = e.at("convs_per_stage").get<int>();
  c.encoder.batch_norm = e.at("batch_norm").get<bool>();
  c.loc_hidden = j.at("loc_hidden").get<int>();
  c.loc_bottleneck = j.at("loc_bottleneck").get<int>();
  c.loc_out = j.at("loc_out").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.n_parts = j.at("n_parts").get<int>();
  c.validate();
  return c;
}

void pack_model(const ModelState& state, Archive& archive) {
  archive.meta["model"] = model_config_to_json(state.config);
  archive.meta["step"] = state.step;
  archive.meta["total_steps"] = state.total_steps;
  std::vector<ConstParamRef> refs;
  state.student.params("student.", refs);
  state.teacher.params("teacher.", refs);
  state.student.buffers("student.", refs);
  state.teacher.buffers("teacher.", refs);
  for (const auto& r : refs) archive.arrays.emplace_back(r.name, std::vector<float>(r.values.begin(), r.values.end()));
  archive.arrays.emplace_back("center", state.center);
}

ModelState unpack_model(const Archive& archive) {
  const ModelConfig config = model_config_from_json(archive.meta.at("model"));
  ModelState state = ModelState::create(config, 0);
  std::vector<ParamRef> refs;
  state.student.params("student.", refs);
  state.teacher.params("teacher.", refs);
  state.student.buffers("student.", refs);
  state.teacher.buffers("teacher.", refs);
  copy_in(archive, refs);
  const auto& center = archive.array("center");
  require(center.size() == state.center.size(), "center", "length mismatch");
  state.center = center;
  state.step = archive.meta.at("step").get<std::int64_t>();
  state.total_steps = archive.meta.at("total_steps").get<std::int64_t>();
  return state;
}

void pack_optimizer(const AdamW& opt, const std::vector<ParamRef>& params, Archive& archive) {
  archive.meta["optimizer"] = {{"t", opt.t}};
  for (std::size_t i = 0; i < params.size(); ++i) {
    archive.arrays.emplace_back("adam.m." + params[i].name, opt.m[i]);
    archive.arrays.emplace_back("adam.v." + params[i].name, opt.v[i]);
  }
}

void unpack_optimizer(const Archive& archive, const std::vector<ParamRef>& params, AdamW& opt) {
  opt = AdamW(params);
  opt.t = archive.meta.at("optimizer").at("t").get<std::int64_t>();
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.m[i] = archive.array("adam.m." + params[i].name);
    opt.v[i] = archive.array("adam.v." + params[i].name);
  }
}

ModelState load_model(const std::filesystem::path& path) { return unpack_model(read_archive(path)); }

}  // namespace partwhole
