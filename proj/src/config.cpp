#include "partwhole/config.hpp"

#include <algorithm>

#include "partwhole/checkpoint.hpp"
#include "partwhole/error.hpp"
#include "partwhole/io.hpp"

namespace partwhole {

using nlohmann::json;

ConfigReader::ConfigReader(const json& object, std::string path) : object_(object), path_(std::move(path)) {
  require(object_.is_object(), path_.empty() ? "config" : path_, "must be a JSON object");
}

const json& ConfigReader::raw(const std::string& key) {
  consumed_.push_back(key);
  return object_.at(key);
}

ConfigReader ConfigReader::section(const std::string& key) {
  consumed_.push_back(key);
  return ConfigReader(object_.at(key), field(key));
}

void ConfigReader::finish() const {
  for (const auto& [key, value] : object_.items())
    if (std::find(consumed_.begin(), consumed_.end(), key) == consumed_.end())
      throw PreconditionError(field(key), "unknown configuration key");
}

void ConfigReader::throw_type(const std::string& key) const {
  throw PreconditionError(field(key), "wrong type (" + std::string(object_.at(key).type_name()) + ")");
}

namespace {

const json kEmpty = json::object();

json phases_to_json(const std::vector<CurriculumPhase>& phases) {
  json out = json::array();
  for (const auto& p : phases)
    out.push_back({{"level", p.level}, {"mode", to_string(p.mode)}, {"epochs", p.epochs}, {"batch_size", p.batch_size}});
  return out;
}

std::vector<CurriculumPhase> phases_from_json(const json& j, const std::string& path) {
  require(j.is_array(), path, "must be an array");
  std::vector<CurriculumPhase> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    ConfigReader r(j[i], path + "[" + std::to_string(i) + "]");
    CurriculumPhase p;
    std::string mode = "joint";
    r.read("level", p.level);
    r.read("mode", mode);
    r.read("epochs", p.epochs);
    r.read("batch_size", p.batch_size);
    r.finish();
    try {
      p.mode = phase_mode_from_string(mode);
    } catch (const PreconditionError& e) {
      throw PreconditionError(r.field("mode"), e.what());
    }
    out.push_back(p);
  }
  return out;
}

void read_model(ConfigReader r, ModelConfig& m) {
  if (r.has("encoder")) {
    auto e = r.section("encoder");
    std::string kind = to_string(m.encoder.kind);
    e.read("kind", kind);
    e.read("feature_dim", m.encoder.feature_dim);
    e.read("input_size", m.encoder.input_size);
    e.read("in_channels", m.encoder.in_channels);
    e.read("stage_widths", m.encoder.stage_widths);
    e.read("convs_per_stage", m.encoder.convs_per_stage);
    e.read("batch_norm", m.encoder.batch_norm);
    e.finish();
    try {
      m.encoder.kind = encoder_kind_from_string(kind);
    } catch (const std::exception& ex) {
      throw PreconditionError(e.field("kind"), ex.what());
    }
  }
  r.read("loc_hidden", m.loc_hidden);
  r.read("loc_bottleneck", m.loc_bottleneck);
  r.read("loc_out", m.loc_out);
  r.read("head_hidden", m.head_hidden);
  r.read("n_parts", m.n_parts);
  r.finish();
}

/// Re-raises validation failures with the section path prefixed.
template <class F>
void validated(const std::string& path, F&& f) {
  try {
    f();
  } catch (const PreconditionError& e) {
    throw PreconditionError(path + "." + e.field(), std::string(e.what()).substr(e.field().size() + 2));
  }
}

}  // namespace

json train_config_to_json(const TrainConfig& c) {
  return {
      {"model", model_config_to_json(c.model)},
      {"sampler",
       {{"crop_size", c.sampler.crop_size},
        {"crops_per_anchor", c.sampler.crops_per_anchor},
        {"center_jitter", c.sampler.center_jitter},
        {"part_jitter", c.sampler.part_jitter}}},
      {"augment",
       {{"jitter_strength", c.augment.jitter_strength},
        {"blur_sigma_min", c.augment.blur_sigma_min},
        {"blur_sigma_max", c.augment.blur_sigma_max},
        {"rotation_range", c.augment.rotation_range}}},
      {"schedule",
       {{"levels", c.levels},
        {"warmup_epochs", c.warmup_epochs},
        {"joint_epochs", c.joint_epochs},
        {"batch_size", c.batch_size},
        {"phases", phases_to_json(c.phases)}}},
      {"optim",
       {{"lr", c.lr},
        {"min_lr", c.min_lr},
        {"lr_warmup_fraction", c.lr_warmup_fraction},
        {"weight_decay", c.weight_decay},
        {"clip_norm", c.clip_norm}}},
      {"ema", {{"start", c.ema_start}, {"end", c.ema_end}, {"enabled", c.ema_enabled}}},
      {"loss",
       {{"lambda_loc", c.weights.localizability},
        {"lambda_comp", c.weights.composability},
        {"lambda_decomp", c.weights.decomposability},
        {"tau_student", c.temps.student},
        {"tau_teacher_start", c.temps.teacher_start},
        {"tau_teacher_end", c.temps.teacher_end},
        {"tau_teacher_warmup_epochs", c.temps.teacher_warmup_epochs},
        {"center_momentum", c.center_momentum},
        {"centering", c.centering}}},
      {"seed", c.seed},
      {"checkpoint_every_epochs", c.checkpoint_every_epochs},
  };
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  ConfigReader r(j, path);
  std::string preset = "desk";
  r.read("preset", preset);
  TrainConfig c;
  if (preset == "desk") {
    c = TrainConfig::desk();
  } else if (preset == "full") {
    c = TrainConfig::full_scale();
  } else {
    throw PreconditionError(r.field("preset"), "expected desk or full, got '" + preset + "'");
  }
  if (r.has("model")) read_model(r.section("model"), c.model);
  c.sampler.global_size = c.model.encoder.input_size;
  c.sampler.n_parts = c.model.n_parts;
  if (r.has("sampler")) {
    auto s = r.section("sampler");
    s.read("crop_size", c.sampler.crop_size);
    s.read("crops_per_anchor", c.sampler.crops_per_anchor);
    s.read("center_jitter", c.sampler.center_jitter);
    s.read("part_jitter", c.sampler.part_jitter);
    s.finish();
  }
  if (r.has("augment")) {
    auto a = r.section("augment");
    a.read("jitter_strength", c.augment.jitter_strength);
    a.read("blur_sigma_min", c.augment.blur_sigma_min);
    a.read("blur_sigma_max", c.augment.blur_sigma_max);
    a.read("rotation_range", c.augment.rotation_range);
    a.finish();
  }
  if (r.has("schedule")) {
    auto s = r.section("schedule");
    s.read("levels", c.levels);
    s.read("warmup_epochs", c.warmup_epochs);
    s.read("joint_epochs", c.joint_epochs);
    s.read("batch_size", c.batch_size);
    if (s.has("phases")) c.phases = phases_from_json(s.raw("phases"), s.field("phases"));
    s.finish();
  }
  if (r.has("optim")) {
    auto o = r.section("optim");
    o.read("lr", c.lr);
    o.read("min_lr", c.min_lr);
    o.read("lr_warmup_fraction", c.lr_warmup_fraction);
    o.read("weight_decay", c.weight_decay);
    o.read("clip_norm", c.clip_norm);
    o.finish();
  }
  if (r.has("ema")) {
    auto e = r.section("ema");
    e.read("start", c.ema_start);
    e.read("end", c.ema_end);
    e.read("enabled", c.ema_enabled);
    e.finish();
  }
  if (r.has("loss")) {
    auto l = r.section("loss");
    l.read("lambda_loc", c.weights.localizability);
    l.read("lambda_comp", c.weights.composability);
    l.read("lambda_decomp", c.weights.decomposability);
    l.read("tau_student", c.temps.student);
    l.read("tau_teacher_start", c.temps.teacher_start);
    l.read("tau_teacher_end", c.temps.teacher_end);
    l.read("tau_teacher_warmup_epochs", c.temps.teacher_warmup_epochs);
    l.read("center_momentum", c.center_momentum);
    l.read("centering", c.centering);
    l.finish();
  }
  r.read("seed", c.seed);
  r.read("checkpoint_every_epochs", c.checkpoint_every_epochs);
  r.finish();
  validated(path, [&] { c.validate(); });
  return c;
}

void EvalConfig::validate() const {
  require(max_images >= 0, "max_images", "must be >= 0");
  require(localize.patch_size >= 2, "localize.patch_size", "must be >= 2");
  require(!localize.levels.empty(), "localize.levels", "must be non-empty");
  for (int l : localize.levels) require(l >= 1, "localize.levels", "levels start at 1");
  require(compose.trials >= 1, "compose.trials", "must be >= 1");
  require(!compose.parts_options.empty(), "compose.parts_options", "must be non-empty");
  require(compose.min_whole_fraction > 0.0 && compose.min_whole_fraction <= 1.0, "compose.min_whole_fraction",
          "must lie in (0, 1]");
  require(interp.trials >= 1, "interp.trials", "must be >= 1");
  require(!interp.t_values.empty(), "interp.t_values", "must be non-empty");
  require(interp.patch_size >= 2, "interp.patch_size", "must be >= 2");
  require(match.window >= 1, "match.window", "must be >= 1");
  require(match.stride >= 1, "match.stride", "must be >= 1");
  require(match.pairs >= 1, "match.pairs", "must be >= 1");
}

json eval_config_to_json(const EvalConfig& c) {
  return {{"seed", c.seed},
          {"max_images", c.max_images},
          {"localize", {{"patch_size", c.localize.patch_size}, {"levels", c.localize.levels}}},
          {"compose",
           {{"parts_options", c.compose.parts_options},
            {"trials", c.compose.trials},
            {"part_jitter", c.compose.part_jitter},
            {"min_whole_fraction", c.compose.min_whole_fraction}}},
          {"interp", {{"t_values", c.interp.t_values}, {"trials", c.interp.trials}, {"patch_size", c.interp.patch_size}}},
          {"match", {{"window", c.match.window}, {"stride", c.match.stride}, {"pairs", c.match.pairs}}}};
}

EvalConfig eval_config_from_json(const json& j, const std::string& path) {
  ConfigReader r(j, path);
  EvalConfig c;
  r.read("seed", c.seed);
  r.read("max_images", c.max_images);
  if (r.has("localize")) {
    auto s = r.section("localize");
    s.read("patch_size", c.localize.patch_size);
    s.read("levels", c.localize.levels);
    s.finish();
  }
  if (r.has("compose")) {
    auto s = r.section("compose");
    s.read("parts_options", c.compose.parts_options);
    s.read("trials", c.compose.trials);
    s.read("part_jitter", c.compose.part_jitter);
    s.read("min_whole_fraction", c.compose.min_whole_fraction);
    s.finish();
  }
  if (r.has("interp")) {
    auto s = r.section("interp");
    s.read("t_values", c.interp.t_values);
    s.read("trials", c.interp.trials);
    s.read("patch_size", c.interp.patch_size);
    s.finish();
  }
  if (r.has("match")) {
    auto s = r.section("match");
    s.read("window", c.match.window);
    s.read("stride", c.match.stride);
    s.read("pairs", c.match.pairs);
    s.finish();
  }
  r.finish();
  c.compose.seed = c.seed;
  c.interp.seed = c.seed;
  validated(path, [&] { c.validate(); });
  return c;
}

json task_spec_to_json(const TaskSpec& t) {
  return {{"schema", 1},
          {"kind", to_string(t.kind)},
          {"corpus", t.corpus.string()},
          {"split_seed", t.split_seed},
          {"train_fraction", t.train_fraction},
          {"steps", t.finetune.steps},
          {"batch_size", t.finetune.batch_size},
          {"lr", t.finetune.lr},
          {"weight_decay", t.finetune.weight_decay},
          {"clip_norm", t.finetune.clip_norm}};
}

TaskSpec task_spec_from_json(const json& j, const std::filesystem::path& base_dir) {
  ConfigReader r(j, "task");
  TaskSpec t;
  int schema = 1;
  std::string kind = to_string(t.kind);
  std::string corpus;
  r.read("schema", schema);
  require(schema == 1, "task.schema", "unsupported schema version " + std::to_string(schema));
  r.read("kind", kind);
  r.read("corpus", corpus);
  r.read("split_seed", t.split_seed);
  r.read("train_fraction", t.train_fraction);
  r.read("steps", t.finetune.steps);
  r.read("batch_size", t.finetune.batch_size);
  r.read("lr", t.finetune.lr);
  r.read("weight_decay", t.finetune.weight_decay);
  r.read("clip_norm", t.finetune.clip_norm);
  r.finish();
  try {
    t.kind = task_kind_from_string(kind);
  } catch (const PreconditionError& e) {
    throw PreconditionError("task.kind", e.what());
  }
  require(!corpus.empty(), "task.corpus", "is required");
  t.corpus = std::filesystem::path(corpus).is_absolute() ? std::filesystem::path(corpus) : base_dir / corpus;
  require(t.train_fraction > 0.0 && t.train_fraction < 1.0, "task.train_fraction", "must lie in (0, 1)");
  validated("task", [&] { t.finetune.validate(); });
  return t;
}

TaskSpec load_task_spec(const std::filesystem::path& file) {
  json j;
  try {
    j = json::parse(read_text(file));
  } catch (const json::parse_error& e) {
    throw PreconditionError(file.string(), std::string("invalid JSON: ") + e.what());
  }
  return task_spec_from_json(j, file.parent_path());
}

json load_config_section(const std::filesystem::path& file, const std::string& section) {
  json doc;
  try {
    doc = json::parse(read_text(file));
  } catch (const json::parse_error& e) {
    throw PreconditionError(file.string(), std::string("invalid JSON: ") + e.what());
  }
  require(doc.is_object(), file.string(), "config must be a JSON object");
  const bool sectioned = doc.contains("pretrain") || doc.contains("eval") || doc.contains("transfer");
  if (!sectioned) {
    if (section != "pretrain") return json::object();
    doc.erase("schema");
    return doc;
  }
  for (const auto& [key, value] : doc.items()) {
    if (key == "schema") {
      require(value == 1, "schema", "unsupported schema version");
      continue;
    }
    require(key == "pretrain" || key == "eval" || key == "transfer", key, "unknown configuration key");
  }
  return doc.contains(section) ? doc.at(section) : json::object();
}

}  // namespace partwhole
