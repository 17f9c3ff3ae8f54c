#include "partwhole/cli.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "partwhole/checkpoint.hpp"
#include "partwhole/config.hpp"
#include "partwhole/error.hpp"
#include "partwhole/io.hpp"
#include "partwhole/plot.hpp"
#include "partwhole/stats.hpp"
#include "partwhole/synthgen.hpp"
#include "partwhole/trainer.hpp"
#include "partwhole/transfer.hpp"
#include "partwhole/zeroshot.hpp"

namespace partwhole::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

}  // namespace

json platform_fingerprint() {
  utsname u{};
  uname(&u);
  return {{"os", u.sysname},
          {"release", u.release},
          {"machine", u.machine},
          {"compiler", __VERSION__},
#ifdef __AVX512F__
          {"simd", "avx512"},
#elif defined(__AVX2__)
          {"simd", "avx2"},
#else
          {"simd", "baseline"},
#endif
          {"cpp", static_cast<long>(__cplusplus)}};
}

json RunManifest::to_json() const {
  return {{"schema", 1},
          {"command", command},
          {"argv", argv},
          {"config", config},
          {"seed", seed},
          {"version", PARTWHOLE_VERSION},
          {"platform", platform_fingerprint()},
          {"started_at", started_at},
          {"finished_at", finished_at},
          {"status", status},
          {"artifacts", artifacts}};
}

void RunManifest::write(const fs::path& out_dir) const {
  fs::create_directories(out_dir);
  write_json(out_dir / "run.json", to_json());
}

namespace {

/// Tracks the run manifest of one command and the artifacts it produced.
class Run {
 public:
  Run(std::string command, std::vector<std::string> argv, fs::path out_dir, json config, std::uint64_t seed)
      : out_dir_(std::move(out_dir)) {
    manifest_.command = std::move(command);
    manifest_.argv = std::move(argv);
    manifest_.config = std::move(config);
    manifest_.seed = seed;
    manifest_.started_at = utc_now();
    manifest_.write(out_dir_);
  }

  const fs::path& dir() const { return out_dir_; }

  fs::path artifact(const std::string& name) {
    if (std::find(manifest_.artifacts.begin(), manifest_.artifacts.end(), name) == manifest_.artifacts.end())
      manifest_.artifacts.push_back(name);
    return out_dir_ / name;
  }

  void finish() {
    for (const auto& a : manifest_.artifacts)
      if (!fs::exists(out_dir_ / a)) throw std::runtime_error("artifact missing at exit: " + a);
    manifest_.status = "ok";
    manifest_.finished_at = utc_now();
    manifest_.write(out_dir_);
  }

 private:
  fs::path out_dir_;
  RunManifest manifest_;
};

std::vector<std::string> as_args(int argc, const char* const* argv) { return {argv, argv + argc}; }

// ---------------------------------------------------------------- synthgen

struct SynthgenArgs {
  fs::path out;
  int count = 64;
  std::uint64_t seed = 0;
  int size = 224;
  int classes = 10;
  int depth = 3;
  double noise = 0.02;
};

int run_synthgen(const SynthgenArgs& a, const std::vector<std::string>& argv) {
  SceneSpec spec;
  spec.image_size = a.size;
  spec.n_landmark_classes = a.classes;
  spec.structure_depth = a.depth;
  spec.noise_level = a.noise;
  spec.seed = a.seed;
  spec.validate();
  require(a.count >= 1, "count", "must be >= 1");
  const json config = {{"count", a.count}, {"size", a.size},       {"classes", a.classes},
                       {"depth", a.depth}, {"noise", a.noise}};
  Run run("synthgen", argv, a.out, config, a.seed);
  write_corpus(a.out, spec, generate_corpus(spec, a.count));
  run.artifact("manifest.json");
  run.finish();
  std::cout << "wrote " << a.count << " images to " << a.out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
  fs::path corpus;
  fs::path config;
  fs::path out;
  fs::path resume;
  std::optional<std::uint64_t> seed;
  bool print_config = false;
  int stop_after_epochs = -1;
  bool quiet = false;
};

TrainConfig resolve_train_config(const PretrainArgs& a) {
  const json section = a.config.empty() ? json::object() : load_config_section(a.config, "pretrain");
  TrainConfig c = train_config_from_json(section);
  if (a.seed) c.seed = *a.seed;
  return c;
}

/// Loss trend over the joint steps recorded in metrics.jsonl.
json training_summary(const fs::path& metrics_path, int loc_out) {
  std::ifstream is(metrics_path);
  std::string line;
  std::vector<double> joint;
  double min_entropy = std::numeric_limits<double>::infinity();
  std::int64_t steps = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    ++steps;
    min_entropy = std::min(min_entropy, j.at("teacher_entropy").get<double>());
    if (j.at("mode") == "joint") joint.push_back(j.at("total").get<double>());
  }
  json s = {{"steps", steps},
            {"min_teacher_entropy", min_entropy},
            {"collapse_threshold", 0.1 * std::log(static_cast<double>(loc_out))},
            {"joint_steps", joint.size()}};
  if (joint.size() >= 5) {
    const std::size_t k = std::max<std::size_t>(1, joint.size() / 5);
    const std::vector<double> head(joint.begin(), joint.begin() + static_cast<std::ptrdiff_t>(k));
    const std::vector<double> tail(joint.end() - static_cast<std::ptrdiff_t>(k), joint.end());
    s["joint_loss_first20_median"] = quantile(head, 0.5);
    s["joint_loss_last20_median"] = quantile(tail, 0.5);
  }
  return s;
}

int run_pretrain(const PretrainArgs& a, const std::vector<std::string>& argv) {
  const TrainConfig config = resolve_train_config(a);
  const json config_json = train_config_to_json(config);
  if (a.print_config) {
    std::cout << json{{"schema", 1}, {"pretrain", config_json}}.dump(2) << "\n";
    return kExitOk;
  }
  require(!a.corpus.empty(), "--corpus", "is required");
  require(!a.out.empty(), "--out", "is required");
  const Corpus corpus = load_corpus(a.corpus);
  Run run("pretrain", argv, a.out, config_json, config.seed);
  PretrainOptions options;
  options.out_dir = a.out;
  if (!a.resume.empty()) options.resume = a.resume;
  options.stop_after_epochs = a.stop_after_epochs;
  options.quiet = a.quiet;
  const PretrainResult result = pretrain(corpus, config, options);
  run.artifact("metrics.jsonl");
  for (const auto& c : result.checkpoints) run.artifact(fs::relative(c, a.out).string());
  json summary = training_summary(a.out / "metrics.jsonl", config.model.loc_out);
  summary["schema"] = 1;
  summary["analysis"] = "pretrain";
  summary["seed"] = config.seed;
  summary["complete"] = !result.final_checkpoint.empty();
  if (!result.final_checkpoint.empty()) summary["final_checkpoint"] = run.artifact("final.pwc").filename().string();
  write_json(run.artifact("summary.json"), summary);
  run.finish();
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path ckpt;
  fs::path corpus;
  fs::path out;
  fs::path config;
  std::optional<std::uint64_t> seed;
  bool random_init = false;
};

struct EvalContext {
  ModelState model;
  std::vector<LabeledImage> images;
  EvalConfig config;
  json provenance;
};

EvalContext load_eval(const EvalArgs& a) {
  EvalContext ctx;
  const json section = a.config.empty() ? json::object() : load_config_section(a.config, "eval");
  ctx.config = eval_config_from_json(section);
  if (a.seed) {
    ctx.config.seed = *a.seed;
    ctx.config.compose.seed = *a.seed;
    ctx.config.interp.seed = *a.seed;
  }
  ctx.model = load_model(a.ckpt);
  if (a.random_init) ctx.model = ModelState::create(ctx.model.config, ctx.config.seed);
  Corpus corpus = load_corpus(a.corpus);
  require(!corpus.images.empty() && corpus.images.front().pixels.channels == ctx.model.config.encoder.in_channels,
          "--corpus", "images do not match the checkpoint's input channels");
  ctx.images = std::move(corpus.images);
  if (ctx.config.max_images > 0 && static_cast<int>(ctx.images.size()) > ctx.config.max_images)
    ctx.images.resize(static_cast<std::size_t>(ctx.config.max_images));
  ctx.provenance = {{"checkpoint", a.ckpt.string()}, {"corpus", a.corpus.string()}, {"random_init", a.random_init},
                    {"seed", ctx.config.seed},       {"images", ctx.images.size()}};
  return ctx;
}

std::vector<BoxGroup> box_groups(const std::vector<SimilarityDistribution>& dists, const std::string& prefix = "") {
  std::vector<BoxGroup> out;
  for (const auto& d : dists) out.push_back({prefix + d.grouping, d.values});
  return out;
}

json eval_localize(EvalContext& ctx, Run& run) {
  const auto& opt = ctx.config.localize;
  const auto set = extract_landmark_embeddings(ctx.model.teacher.encoder, ctx.images, opt.patch_size, opt.levels);
  json levels = json::object();
  std::vector<BoxGroup> groups;
  for (int level : opt.levels) {
    LandmarkEmbeddingSet subset;
    for (const auto& e : set.entries)
      if (e.level == level) subset.entries.push_back(e);
    const auto stats = intra_cluster_stats(subset);
    levels[std::to_string(level)] = stats.to_json();
    if (level == opt.levels.front())
      for (const auto& [c, d] : stats.distances) groups.push_back({"c" + std::to_string(c), d});
  }
  json out = {{"schema", 1}, {"analysis", "localize"}, {"source", ctx.provenance},
              {"config", {{"patch_size", opt.patch_size}, {"levels", opt.levels}}}, {"levels", levels}};
  const auto first = std::to_string(opt.levels.front());
  out["silhouette"] = levels[first]["silhouette"];
  if (std::count(opt.levels.begin(), opt.levels.end(), 1) && std::count(opt.levels.begin(), opt.levels.end(), 2))
    out["cross_level_distance_1_2"] = cross_level_distance(set, 1, 2);

  write_text_atomic(run.artifact("localize_boxplot.svg"),
                    boxplot_svg("Intra-class embedding distance (level " + first + ")", groups, "L2 distance"));
  std::vector<std::vector<float>> rows;
  std::vector<int> labels;
  for (const auto& e : set.entries)
    if (e.level == opt.levels.front()) {
      rows.push_back(e.embedding);
      labels.push_back(e.class_id);
    }
  write_text_atomic(run.artifact("localize_projection.svg"),
                    scatter_svg("Landmark embeddings (PCA)", pca_2d(rows), labels));
  out["plots"] = {"localize_boxplot.svg", "localize_projection.svg"};
  return out;
}

json eval_compose(EvalContext& ctx, Run& run) {
  const auto dists = composition_similarity(ctx.model, ctx.images, ctx.config.compose);
  json groups = json::array();
  for (const auto& d : dists) groups.push_back(d.to_json());
  write_text_atomic(run.artifact("compose_boxplot.svg"),
                    boxplot_svg("Whole vs. composed parts", box_groups(dists), "cosine similarity"));
  const auto& c = ctx.config.compose;
  return {{"schema", 1},
          {"analysis", "compose"},
          {"source", ctx.provenance},
          {"config", {{"parts_options", c.parts_options}, {"trials", c.trials}, {"part_jitter", c.part_jitter},
                      {"min_whole_fraction", c.min_whole_fraction}}},
          {"distributions", groups},
          {"plots", {"compose_boxplot.svg"}}};
}

json eval_interp(EvalContext& ctx, Run& run) {
  const auto r = interpolate_extrapolate(ctx.model.teacher.encoder, ctx.images, ctx.config.interp);
  json interp = json::array(), extrap = json::array();
  for (const auto& d : r.interpolation) interp.push_back(d.to_json());
  for (const auto& d : r.extrapolation) extrap.push_back(d.to_json());
  auto groups = box_groups(r.interpolation, "interp ");
  for (auto& g : box_groups(r.extrapolation, "extrap ")) groups.push_back(std::move(g));
  write_text_atomic(run.artifact("interp_boxplot.svg"),
                    boxplot_svg("Interpolated / extrapolated embeddings", groups, "cosine similarity"));
  const auto& c = ctx.config.interp;
  return {{"schema", 1},
          {"analysis", "interp"},
          {"source", ctx.provenance},
          {"config", {{"t_values", c.t_values}, {"trials", c.trials}, {"patch_size", c.patch_size}}},
          {"interpolation", interp},
          {"extrapolation", extrap},
          {"plots", {"interp_boxplot.svg"}}};
}

json eval_match(EvalContext& ctx, Run& run) {
  const auto& m = ctx.config.match;
  const auto& enc = ctx.model.teacher.encoder;
  Rng rng(Rng::mix(ctx.config.seed ^ 0xA11CE5ULL));
  const int n = static_cast<int>(ctx.images.size());
  const double bound = m.window / 2.0 + m.stride;
  std::vector<double> cross_errors, self_errors;
  json pairs = json::array();
  for (int p = 0; p < m.pairs; ++p) {
    const int qi = rng.uniform_int(0, n - 1);
    int ki = rng.uniform_int(0, n - 1);
    if (n > 1)
      while (ki == qi) ki = rng.uniform_int(0, n - 1);
    const auto& query = ctx.images[static_cast<std::size_t>(qi)];
    const auto& key = ctx.images[static_cast<std::size_t>(ki)];
    const auto matches = match_landmarks(enc, query, key.pixels, m.window, m.stride);
    const auto self = match_landmarks(enc, query, query.pixels, m.window, m.stride);
    json points = json::array();
    for (std::size_t i = 0; i < matches.size(); ++i) {
      const auto& truth = key.landmark(matches[i].class_id);
      const auto& self_truth = query.landmark(self[i].class_id);
      const double err = std::hypot(matches[i].x - truth.x, matches[i].y - truth.y);
      const double self_err = std::hypot(self[i].x - self_truth.x, self[i].y - self_truth.y);
      cross_errors.push_back(err);
      self_errors.push_back(self_err);
      points.push_back({{"class", matches[i].class_id}, {"x", matches[i].x}, {"y", matches[i].y}, {"error", err},
                        {"self_x", self[i].x}, {"self_y", self[i].y}, {"self_error", self_err}});
    }
    pairs.push_back({{"query", qi}, {"key", ki}, {"points", points}});
  }
  auto within = [&](const std::vector<double>& e) {
    return static_cast<double>(std::count_if(e.begin(), e.end(), [&](double v) { return v <= bound; })) /
           static_cast<double>(e.size());
  };
  write_text_atomic(run.artifact("match_boxplot.svg"),
                    boxplot_svg("Landmark matching error", {{"key = query", self_errors}, {"cross-subject", cross_errors}},
                                "distance to ground truth (px)"));
  return {{"schema", 1},
          {"analysis", "match"},
          {"source", ctx.provenance},
          {"config", {{"window", m.window}, {"stride", m.stride}, {"pairs", m.pairs}}},
          {"bound", bound},
          {"self", {{"summary", summarize(self_errors).to_json()}, {"within_bound", within(self_errors)}}},
          {"cross", {{"summary", summarize(cross_errors).to_json()}, {"within_bound", within(cross_errors)}}},
          {"pairs", pairs},
          {"plots", {"match_boxplot.svg"}}};
}

int run_eval(const std::string& analysis, const EvalArgs& a, const std::vector<std::string>& argv) {
  EvalContext ctx = load_eval(a);
  Run run("eval " + analysis, argv, a.out, eval_config_to_json(ctx.config), ctx.config.seed);
  json result;
  if (analysis == "localize") result = eval_localize(ctx, run);
  else if (analysis == "compose") result = eval_compose(ctx, run);
  else if (analysis == "interp") result = eval_interp(ctx, run);
  else result = eval_match(ctx, run);
  write_json(run.artifact(analysis + ".json"), result);
  run.finish();
  std::cout << "wrote " << (a.out / (analysis + ".json")).string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- transfer

struct TransferArgs {
  fs::path ckpt;
  fs::path task;
  fs::path out;
  fs::path baseline_ckpt;
  fs::path config;
  int shots = 0;
  std::string seeds = "0,1,2";
};

std::vector<int> parse_seeds(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      require(used == item.size(), "--seeds", "'" + item + "' is not an integer");
    } catch (const std::logic_error&) {
      throw PreconditionError("--seeds", "'" + item + "' is not an integer");
    }
  }
  require(!out.empty(), "--seeds", "must list at least one seed");
  return out;
}

json group_json(const std::vector<double>& v) {
  return {{"values", v}, {"mean", mean(v)}, {"std", sample_stddev(v)}};
}

int run_transfer(const TransferArgs& a, const std::vector<std::string>& argv) {
  TaskSpec spec = load_task_spec(a.task);
  if (!a.config.empty()) {
    json section = load_config_section(a.config, "transfer");
    ConfigReader r(section, "transfer");
    r.read("steps", spec.finetune.steps);
    r.read("batch_size", spec.finetune.batch_size);
    r.read("lr", spec.finetune.lr);
    r.read("weight_decay", spec.finetune.weight_decay);
    r.read("clip_norm", spec.finetune.clip_norm);
    r.finish();
    spec.finetune.validate();
  }
  const auto seeds = parse_seeds(a.seeds);
  const ModelState model = load_model(a.ckpt);
  const Corpus corpus = load_corpus(spec.corpus);
  const auto tasks = make_synthetic_tasks(corpus.images, spec.split_seed, spec.train_fraction);
  TransferTask task = spec.kind == TaskKind::classification ? tasks.classification : tasks.segmentation;
  task.shots = a.shots;
  task.validate(corpus.images);
  require(corpus.images.front().pixels.channels == model.config.encoder.in_channels, "--ckpt",
          "encoder channels do not match the corpus");

  std::optional<ModelState> baseline;
  if (!a.baseline_ckpt.empty()) baseline = load_model(a.baseline_ckpt);

  json config = task_spec_to_json(spec);
  config["shots"] = a.shots;
  config["seeds"] = seeds;
  Run run("transfer", argv, a.out, config, static_cast<std::uint64_t>(seeds.front()));
  std::vector<double> pre, base;
  for (int seed : seeds) {
    const auto r = finetune(model.teacher.encoder, corpus.images, task, spec.finetune, seed);
    // Without a baseline checkpoint the comparison is a freshly initialized
    // encoder of the same shape.
    const Encoder base_encoder =
        baseline ? baseline->teacher.encoder
                 : ModelState::create(model.config, static_cast<std::uint64_t>(seed) + 1000).teacher.encoder;
    const auto b = finetune(base_encoder, corpus.images, task, spec.finetune, seed);
    pre.push_back(r.metric);
    base.push_back(b.metric);
    write_json(run.artifact("seed_" + std::to_string(seed) + ".json"),
               {{"schema", 1}, {"seed", seed}, {"metric", task.metric()}, {"pretrained", r.to_json()},
                {"baseline", b.to_json()}});
    std::cerr << "[transfer] seed " << seed << " " << task.metric() << " pretrained " << r.metric << " baseline "
              << b.metric << "\n";
  }
  json summary = {{"schema", 1},
                  {"analysis", "transfer"},
                  {"task", to_string(task.kind)},
                  {"metric", task.metric()},
                  {"shots", a.shots},
                  {"seeds", seeds},
                  {"train_size", task.train.size()},
                  {"test_size", task.test.size()},
                  {"pretrained", group_json(pre)},
                  {"baseline", group_json(base)},
                  {"baseline_source", baseline ? a.baseline_ckpt.string() : std::string("random-init")}};
  summary["pretrained"]["checkpoint"] = a.ckpt.string();
  if (seeds.size() >= 2) {
    const auto t = two_sample_ttest(pre, base);
    summary["ttest"] = {{"t", t.t}, {"dof", t.dof}, {"p_value", t.p_value}, {"alpha", 0.05},
                        {"significant", t.p_value < 0.05}};
  }
  write_text_atomic(run.artifact("transfer_boxplot.svg"),
                    boxplot_svg(to_string(task.kind) + ", " + std::to_string(a.shots) + " shots",
                                {{"pretrained", pre}, {"baseline", base}}, task.metric()));
  summary["plots"] = {"transfer_boxplot.svg"};
  write_json(run.artifact("summary.json"), summary);
  run.finish();
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- report

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string summary_row(const std::string& label, const json& s) {
  return "| " + label + " | " + std::to_string(s.at("count").get<std::size_t>()) + " | " +
         fixed(s.at("median").get<double>()) + " | " + fixed(s.at("q1").get<double>()) + " | " +
         fixed(s.at("q3").get<double>()) + " | " + fixed(s.at("mean").get<double>()) + " |\n";
}

const char* const kSummaryHeader = "| group | n | median | q1 | q3 | mean |\n|---|---|---|---|---|---|\n";

std::string report_section(const json& j, const fs::path& rel_dir) {
  const std::string analysis = j.at("analysis").get<std::string>();
  std::ostringstream md;
  md << "## " << analysis << " (" << (rel_dir.empty() ? "." : rel_dir.string()) << ")\n\n";
  if (analysis == "localize") {
    md << "Silhouette: " << fixed(j.at("silhouette").get<double>()) << "\n\n";
    if (j.contains("cross_level_distance_1_2"))
      md << "Mean level-1 / level-2 distance: " << fixed(j.at("cross_level_distance_1_2").get<double>()) << "\n\n";
  } else if (analysis == "compose") {
    md << kSummaryHeader;
    for (const auto& d : j.at("distributions")) md << summary_row(d.at("grouping"), d.at("summary"));
    md << "\n";
  } else if (analysis == "interp") {
    md << kSummaryHeader;
    for (const auto& d : j.at("interpolation")) md << summary_row("interp " + d.at("grouping").get<std::string>(), d.at("summary"));
    for (const auto& d : j.at("extrapolation")) md << summary_row("extrap " + d.at("grouping").get<std::string>(), d.at("summary"));
    md << "\n";
  } else if (analysis == "match") {
    md << "Within bound (" << fixed(j.at("bound").get<double>(), 1)
       << " px): key = query " << fixed(j.at("self").at("within_bound").get<double>(), 3) << ", cross-subject "
       << fixed(j.at("cross").at("within_bound").get<double>(), 3) << "\n\n";
  } else if (analysis == "transfer") {
    md << "| encoder | mean " << j.at("metric").get<std::string>() << " | std |\n|---|---|---|\n"
       << "| pretrained | " << fixed(j.at("pretrained").at("mean").get<double>()) << " | "
       << fixed(j.at("pretrained").at("std").get<double>()) << " |\n"
       << "| " << j.at("baseline_source").get<std::string>() << " | "
       << fixed(j.at("baseline").at("mean").get<double>()) << " | " << fixed(j.at("baseline").at("std").get<double>())
       << " |\n\n";
    if (j.contains("ttest")) md << "Two-sample t-test p-value: " << fixed(j.at("ttest").at("p_value").get<double>()) << "\n\n";
  } else if (analysis == "pretrain") {
    md << "Steps: " << j.at("steps").get<std::int64_t>() << ", minimum teacher entropy "
       << fixed(j.at("min_teacher_entropy").get<double>()) << " (threshold "
       << fixed(j.at("collapse_threshold").get<double>()) << ")\n\n";
    if (j.contains("joint_loss_first20_median"))
      md << "Joint loss median, first 20%: " << fixed(j.at("joint_loss_first20_median").get<double>())
         << ", last 20%: " << fixed(j.at("joint_loss_last20_median").get<double>()) << "\n\n";
  }
  if (j.contains("plots"))
    for (const auto& p : j.at("plots")) {
      const auto path = (rel_dir / p.get<std::string>()).generic_string();
      md << "![" << analysis << "](" << path << ")\n\n";
    }
  return md.str();
}

}  // namespace

fs::path write_report(const fs::path& run_dir) {
  require(fs::is_directory(run_dir), "--run", "'" + run_dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (auto it = fs::recursive_directory_iterator(run_dir); it != fs::recursive_directory_iterator(); ++it) {
    if (it.depth() > 2) {
      it.disable_recursion_pending();
      continue;
    }
    if (it->is_regular_file() && it->path().extension() == ".json") files.push_back(it->path());
  }
  std::sort(files.begin(), files.end());
  std::ostringstream md;
  md << "# Run report\n\n";
  int sections = 0;
  for (const auto& f : files) {
    json j;
    try {
      j = json::parse(read_text(f));
    } catch (const json::parse_error&) {
      continue;
    }
    if (!j.is_object() || !j.contains("analysis") || j.value("schema", 0) != 1) continue;
    md << report_section(j, fs::relative(f.parent_path(), run_dir));
    ++sections;
  }
  require(sections > 0, "--run", "no analysis results under '" + run_dir.string() + "'");
  const fs::path out = run_dir / "report.md";
  write_text_atomic(out, md.str());
  return out;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Part-whole hierarchy pretraining, zero-shot evaluation and transfer on synthetic images."};
  app.name(args.empty() ? "partwhole" : fs::path(args.front()).filename().string());
  app.require_subcommand(1);
  app.set_version_flag("--version", PARTWHOLE_VERSION);

  SynthgenArgs sg;
  auto* synth = app.add_subcommand("synthgen", "Render a synthetic landmark corpus");
  synth->add_option("--out", sg.out, "Output directory")->required();
  synth->add_option("--count", sg.count, "Number of images")->capture_default_str();
  synth->add_option("--seed", sg.seed, "Corpus seed")->capture_default_str();
  synth->add_option("--size", sg.size, "Image side in pixels")->capture_default_str();
  synth->add_option("--classes", sg.classes, "Number of landmark classes")->capture_default_str();
  synth->add_option("--depth", sg.depth, "Structure depth")->capture_default_str();
  synth->add_option("--noise", sg.noise, "Noise level in [0, 1]")->capture_default_str();

  PretrainArgs pt;
  std::uint64_t pt_seed = 0;
  auto* pre = app.add_subcommand("pretrain", "Self-supervised pretraining with the coarse-to-fine curriculum");
  pre->add_option("--corpus", pt.corpus, "Corpus directory written by synthgen");
  pre->add_option("--config", pt.config, "JSON config (flat, or with a \"pretrain\" section)");
  pre->add_option("--out", pt.out, "Run directory");
  pre->add_option("--resume", pt.resume, "Checkpoint to resume from");
  auto* seed_opt = pre->add_option("--seed", pt_seed, "Override the config seed");
  pre->add_flag("--print-config", pt.print_config, "Print the resolved config and exit");
  pre->add_option("--stop-after-epochs", pt.stop_after_epochs, "Stop after this many epochs (testing)");
  pre->add_flag("--quiet", pt.quiet, "No per-epoch progress on stderr");

  EvalArgs ev;
  std::uint64_t ev_seed = 0;
  auto* eval = app.add_subcommand("eval", "Zero-shot analyses on a frozen checkpoint");
  eval->require_subcommand(1);
  std::vector<std::pair<std::string, CLI::App*>> analyses;
  CLI::Option* ev_seed_opt = nullptr;
  for (const char* name : {"localize", "compose", "interp", "match"}) {
    auto* sub = eval->add_subcommand(name);
    sub->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
    sub->add_option("--corpus", ev.corpus, "Corpus directory")->required();
    sub->add_option("--out", ev.out, "Output directory")->required();
    sub->add_option("--config", ev.config, "JSON config with an \"eval\" section");
    auto* o = sub->add_option("--seed", ev_seed, "Override the eval seed");
    sub->add_flag("--random-init", ev.random_init, "Replace the weights with a fresh initialization");
    analyses.emplace_back(name, sub);
    (void)o;
  }
  eval->get_subcommand("localize")->description("Landmark cluster statistics and silhouette");
  eval->get_subcommand("compose")->description("Whole vs. composed-parts cosine similarity");
  eval->get_subcommand("interp")->description("Embedding interpolation and extrapolation fidelity");
  eval->get_subcommand("match")->description("Sliding-window landmark matching");

  TransferArgs tr;
  auto* transfer = app.add_subcommand("transfer", "Few-shot fine-tuning against a baseline encoder");
  transfer->add_option("--ckpt", tr.ckpt, "Pretrained checkpoint")->required();
  transfer->add_option("--task", tr.task, "Task JSON file")->required();
  transfer->add_option("--shots", tr.shots, "Labeled training images (0: all)")->capture_default_str();
  transfer->add_option("--seeds", tr.seeds, "Comma-separated fine-tuning seeds")->capture_default_str();
  transfer->add_option("--out", tr.out, "Output directory")->required();
  transfer->add_option("--baseline-ckpt", tr.baseline_ckpt, "Baseline checkpoint (default: random init)");
  transfer->add_option("--config", tr.config, "JSON config with a \"transfer\" section");

  fs::path report_dir;
  auto* report = app.add_subcommand("report", "Aggregate eval/transfer results into report.md");
  report->add_option("--run", report_dir, "Run directory")->required();

  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) return run_synthgen(sg, args);
    if (*pre) {
      if (seed_opt->count()) pt.seed = pt_seed;
      return run_pretrain(pt, args);
    }
    if (*eval) {
      for (const auto& [name, sub] : analyses)
        if (*sub) {
          ev_seed_opt = sub->get_option("--seed");
          if (ev_seed_opt->count()) ev.seed = ev_seed;
          return run_eval(name, ev, args);
        }
    }
    if (*transfer) return run_transfer(tr, args);
    if (*report) {
      const auto path = write_report(report_dir);
      std::cout << "wrote " << path.string() << "\n";
      return kExitOk;
    }
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  std::cerr << app.help();
  return kExitUsage;
}

int dispatch(int argc, const char* const* argv) { return dispatch(as_args(argc, argv)); }

}  // namespace partwhole::cli
