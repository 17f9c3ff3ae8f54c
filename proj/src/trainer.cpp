#include "partwhole/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "partwhole/checkpoint.hpp"
#include "partwhole/config.hpp"
#include "partwhole/error.hpp"
#include "partwhole/io.hpp"

namespace partwhole {

std::string to_string(PhaseMode mode) { return mode == PhaseMode::warmup ? "warmup" : "joint"; }

PhaseMode phase_mode_from_string(const std::string& s) {
  if (s == "warmup") return PhaseMode::warmup;
  if (s == "joint") return PhaseMode::joint;
  throw PreconditionError("mode", "unknown phase mode '" + s + "'");
}

void TrainConfig::validate() const {
  model.validate();
  sampler.validate();
  augment.validate();
  weights.validate();
  temps.validate();
  require(sampler.global_size == model.encoder.input_size, "global_size", "must equal encoder input_size");
  require(sampler.n_parts == model.n_parts, "n_parts", "sampler and model part counts differ");
  require(phases.empty() ? levels >= 1 : true, "levels", "must be >= 1");
  require(warmup_epochs >= 0 && joint_epochs >= 0, "epochs", "must be non-negative");
  require(!phases.empty() || warmup_epochs + joint_epochs > 0, "phases", "schedule would be empty");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(lr >= 0.0 && min_lr >= 0.0, "lr", "must be non-negative");
  require(lr_warmup_fraction >= 0.0 && lr_warmup_fraction < 1.0, "lr_warmup_fraction", "must be in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(clip_norm >= 0.0, "clip_norm", "must be non-negative");
  require(ema_start >= 0.0 && ema_start <= ema_end && ema_end <= 1.0, "ema", "need 0 <= start <= end <= 1");
  require(center_momentum >= 0.0 && center_momentum <= 1.0, "center_momentum", "must be in [0, 1]");
  require(checkpoint_every_epochs >= 0, "checkpoint_every_epochs", "must be non-negative");
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const auto& p = phases[i];
    const std::string field = "phases[" + std::to_string(i) + "]";
    require(p.epochs >= 1, field + ".epochs", "must be >= 1");
    require(p.batch_size >= 1, field + ".batch_size", "must be >= 1");
    require(p.level >= 0, field + ".level", "must be >= 0");
    if (i > 0) {
      const auto& q = phases[i - 1];
      require(p.level >= q.level, field + ".level", "levels must be nondecreasing");
      require(!(p.level == q.level && q.mode == PhaseMode::joint && p.mode == PhaseMode::warmup), field + ".mode",
              "warmup must precede joint within a level");
    }
  }
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.model.encoder.input_size = 64;
  c.model.encoder.feature_dim = 128;
  c.sampler.global_size = 64;
  c.sampler.crop_size = 28;
  c.augment.blur_sigma_max = 0.6;
  return c;
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.model = ModelConfig::full_scale();
  c.sampler.global_size = 224;
  c.sampler.crop_size = 96;
  c.augment.blur_sigma_max = 2.0;
  c.batch_size = 512;
  c.phases = {{0, PhaseMode::warmup, 200, 512}, {0, PhaseMode::joint, 10, 512},
              {1, PhaseMode::warmup, 200, 512}, {1, PhaseMode::joint, 90, 512},
              {2, PhaseMode::warmup, 100, 512}, {2, PhaseMode::joint, 165, 512}};
  c.temps.teacher_warmup_epochs = 30;
  return c;
}

std::vector<ScheduledPhase> build_schedule(const TrainConfig& config, int corpus_size) {
  config.validate();
  require(corpus_size >= 1, "corpus", "must be non-empty");
  std::vector<CurriculumPhase> phases = config.phases;
  if (phases.empty()) {
    for (int m = 0; m < config.levels; ++m) {
      if (config.warmup_epochs > 0) phases.push_back({m, PhaseMode::warmup, config.warmup_epochs, config.batch_size});
      if (config.joint_epochs > 0) phases.push_back({m, PhaseMode::joint, config.joint_epochs, config.batch_size});
    }
  }
  require(!phases.empty(), "phases", "schedule is empty");
  std::vector<ScheduledPhase> out;
  std::int64_t step = 0;
  int epoch = 0;
  for (const auto& p : phases) {
    ScheduledPhase s;
    s.phase = p;
    s.weights = p.mode == PhaseMode::warmup ? LossWeights::warmup() : config.weights;
    s.steps_per_epoch = (corpus_size + p.batch_size - 1) / p.batch_size;
    s.first_step = step;
    s.steps = static_cast<std::int64_t>(s.steps_per_epoch) * p.epochs;
    s.first_epoch = epoch;
    step += s.steps;
    epoch += p.epochs;
    out.push_back(s);
  }
  return out;
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"schema", 1},
          {"step", step},
          {"phase", phase},
          {"mode", to_string(mode)},
          {"level", level},
          {"l_loc", l_loc},
          {"l_comp", l_comp},
          {"l_decomp", l_decomp},
          {"total", total},
          {"lambda", {weights.localizability, weights.composability, weights.decomposability}},
          {"tau_t", tau_t},
          {"ema_lambda", ema_lambda},
          {"lr", lr},
          {"teacher_entropy", teacher_entropy},
          {"grad_norm", grad_norm}};
}

namespace {

void scale(std::vector<float>& v, double s) {
  for (auto& x : v) x = static_cast<float>(x * s);
}

bool all_finite(const std::vector<float>& v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

LossBreakdown train_step(ModelState& state, AdamW& optimizer, const std::vector<AnchorSample>& batch,
                         const ScheduledPhase& phase, const TrainConfig& config, const StepSchedule& schedule) {
  require(!batch.empty(), "batch", "must be non-empty");
  const int G = config.sampler.global_size;
  const int n = config.model.n_parts;
  const bool joint = phase.phase.mode == PhaseMode::joint;
  const LossWeights& w = phase.weights;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const auto tau_t = static_cast<float>(schedule.tau_t);
  const auto tau_s = static_cast<float>(config.temps.student);
  const std::span<const float> center =
      config.centering ? std::span<const float>(state.center) : std::span<const float>();

  StudentNet grad = zeros_like(state.student);
  std::vector<std::vector<float>> teacher_logits;
  LossBreakdown out;
  out.step = state.step;
  out.phase = schedule.phase_index;
  out.mode = phase.phase.mode;
  out.level = phase.phase.level;
  out.weights = w;
  out.tau_t = schedule.tau_t;
  out.lr = schedule.lr;
  out.ema_lambda = schedule.ema_lambda;

  // Augmented views, drawn per anchor in a fixed order from its own stream.
  const std::size_t B = batch.size();
  std::vector<Image> teacher_globals, crop_views, student_parts, teacher_part_views, student_wholes;
  for (const AnchorSample& a : batch) {
    require(a.level == phase.phase.level, "batch", "anchor level differs from the phase level");
    require(a.crops.size() == batch.front().crops.size(), "batch", "anchors differ in crop count");
    Rng rng(a.aug_seed);
    const Image global = resize_bilinear(a.whole, G, G);
    teacher_globals.push_back(augment(global, config.augment, rng));
    for (const auto& c : a.crops) crop_views.push_back(augment(c.image, config.augment, rng));
    if (!joint) continue;
    require(static_cast<int>(a.parts.size()) == n, "batch", "anchor has the wrong number of parts");
    for (const auto& p : a.parts) {
      student_parts.push_back(augment(p.image, config.augment, rng));
      teacher_part_views.push_back(augment(p.image, config.augment, rng));
    }
    student_wholes.push_back(augment(global, config.augment, rng));
  }
  const std::size_t C = batch.front().crops.size();

  // Teacher on the augmented wholes: logits for localizability and the whole
  // embeddings for composability. No gradient flows into the teacher.
  const auto y_t = encode_batch(state.teacher.encoder, teacher_globals, nullptr);
  for (std::size_t b = 0; b < B; ++b) {
    teacher_logits.push_back(loc_project(state.teacher.loc_head, y_t[b]));
    out.teacher_entropy += entropy<float>(teacher_distribution<float>(teacher_logits[b], center, tau_t)) * inv_b;
  }

  // Localizability: student crops against the teacher's whole distribution.
  EncoderTape crop_tape;
  const auto crop_features = encode_batch(state.student.encoder, crop_views, &crop_tape);
  std::vector<std::vector<float>> crop_dfeat(crop_features.size());
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<ProjectionTape> tapes(C);
    std::vector<std::vector<float>> z_s;
    for (std::size_t c = 0; c < C; ++c) z_s.push_back(loc_project(state.student.loc_head, crop_features[b * C + c], &tapes[c]));
    const auto loc = localizability_loss<float>(teacher_logits[b], z_s, tau_t, tau_s, center);
    if (!std::isfinite(loc.loss))
      throw NumericError("non-finite localizability loss at step " + std::to_string(state.step) + ", batch index " +
                         std::to_string(b) + " (source " + std::to_string(batch[b].source_id) + ")");
    out.l_loc += loc.loss * inv_b;
    if (w.localizability > 0.0)
      for (std::size_t c = 0; c < C; ++c) {
        auto g = loc.grads[c];
        scale(g, w.localizability * inv_b);
        crop_dfeat[b * C + c] = loc_backward(state.student.loc_head, tapes[c], g, grad.loc_head);
      }
  }
  if (w.localizability > 0.0) encoder_backward(state.student.encoder, crop_tape, crop_dfeat, grad.encoder);

  if (joint) {
    const auto teacher_part_features = encode_batch(state.teacher.encoder, teacher_part_views, nullptr);
    EncoderTape part_tape, whole_tape;
    const auto part_features = encode_batch(state.student.encoder, student_parts, &part_tape);
    const auto whole_features = encode_batch(state.student.encoder, student_wholes, &whole_tape);
    std::vector<std::vector<float>> part_dfeat(part_features.size()), whole_dfeat(B);
    const auto N = static_cast<std::size_t>(n);
    for (std::size_t b = 0; b < B; ++b) {
      // Composability: student parts -> composed embedding vs teacher whole.
      const std::vector<std::vector<float>> parts_b(part_features.begin() + static_cast<std::ptrdiff_t>(b * N),
                                                    part_features.begin() + static_cast<std::ptrdiff_t>((b + 1) * N));
      MlpTape comp_tape;
      const auto z_ps = compose(state.student.comp_head, parts_b, &comp_tape);
      const auto comp = composability_loss<float>(y_t[b], z_ps);

      // Decomposability: student whole -> decomposed parts vs teacher parts.
      const std::vector<std::vector<float>> teacher_parts(
          teacher_part_features.begin() + static_cast<std::ptrdiff_t>(b * N),
          teacher_part_features.begin() + static_cast<std::ptrdiff_t>((b + 1) * N));
      MlpTape decomp_tape;
      const auto decomposed = decompose(state.student.decomp_head, whole_features[b], n, &decomp_tape);
      const auto decomp = decomposability_loss<float>(teacher_parts, decomposed);

      if (!std::isfinite(comp.loss) || !std::isfinite(decomp.loss))
        throw NumericError("non-finite part-whole loss at step " + std::to_string(state.step) + ", batch index " +
                           std::to_string(b) + " (source " + std::to_string(batch[b].source_id) + ")");
      out.l_comp += comp.loss * inv_b;
      out.l_decomp += decomp.loss * inv_b;

      if (w.composability > 0.0) {
        auto g = comp.grads[0];
        scale(g, w.composability * inv_b);
        const auto dconcat = mlp_backward(state.student.comp_head, comp_tape, g, grad.comp_head);
        const std::size_t d = parts_b.front().size();
        for (std::size_t i = 0; i < N; ++i)
          part_dfeat[b * N + i].assign(dconcat.begin() + static_cast<std::ptrdiff_t>(i * d),
                                       dconcat.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
      }
      if (w.decomposability > 0.0) {
        std::vector<float> g;
        for (const auto& block : decomp.grads) g.insert(g.end(), block.begin(), block.end());
        scale(g, w.decomposability * inv_b);
        whole_dfeat[b] = mlp_backward(state.student.decomp_head, decomp_tape, g, grad.decomp_head);
      }
    }
    if (w.composability > 0.0) encoder_backward(state.student.encoder, part_tape, part_dfeat, grad.encoder);
    if (w.decomposability > 0.0) encoder_backward(state.student.encoder, whole_tape, whole_dfeat, grad.encoder);
  }

  out.total = total_loss(out.l_loc, out.l_comp, out.l_decomp, w);
  if (!std::isfinite(out.total)) throw NumericError("non-finite total loss at step " + std::to_string(state.step));

  std::vector<ParamRef> params;
  state.student.params("", params);
  std::vector<ParamRef> grads;
  grad.params("", grads);
  for (const auto& g : grads)
    for (float x : g.values)
      if (!std::isfinite(x)) throw NumericError("non-finite gradient in " + g.name + " at step " + std::to_string(state.step));
  out.grad_norm = clip_grad_norm(grads, config.clip_norm);
  optimizer.weight_decay = config.weight_decay;
  optimizer.step(params, grads, schedule.lr);

  if (config.ema_enabled) ema_update(state.teacher, state.student, schedule.ema_lambda);
  center_update(state.center, teacher_logits, config.center_momentum);
  if (!all_finite(state.center)) throw NumericError("non-finite center at step " + std::to_string(state.step));
  ++state.step;
  return out;
}

void check_corpus_compatible(const Corpus& corpus, const TrainConfig& config) {
  require(!corpus.images.empty(), "corpus", "must be non-empty");
  const auto schedule = build_schedule(config, static_cast<int>(corpus.images.size()));
  int max_level = 0;
  for (const auto& p : schedule) max_level = std::max(max_level, p.phase.level);
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    const auto& im = corpus.images[i].pixels;
    require(im.channels == config.model.encoder.in_channels, "corpus",
            "image " + std::to_string(i) + " has " + std::to_string(im.channels) + " channels, encoder expects " +
                std::to_string(config.model.encoder.in_channels));
    const int side = std::min(im.height, im.width) >> max_level;
    require(side >= std::max(config.model.n_parts, 2), "corpus",
            "image " + std::to_string(i) + " of side " + std::to_string(std::min(im.height, im.width)) +
                " is too small for level " + std::to_string(max_level));
  }
}

namespace {

struct Position {
  int phase = 0;
  int epoch = 0;  // epoch within phase
  int global_epoch = 0;
};

std::filesystem::path save_checkpoint(const std::filesystem::path& dir, ModelState& state, AdamW& opt,
                                      const Rng& rng, const Position& pos, const TrainConfig& config,
                                      const nlohmann::json& config_json) {
  Archive a;
  pack_model(state, a);
  std::vector<ParamRef> params;
  state.student.params("", params);
  pack_optimizer(opt, params, a);
  a.meta["schema"] = 1;
  a.meta["config"] = config_json;
  a.meta["seed"] = config.seed;
  a.meta["rng"] = rng.state();
  a.meta["position"] = {{"phase", pos.phase}, {"epoch", pos.epoch}, {"global_epoch", pos.global_epoch}};
  char name[64];
  std::snprintf(name, sizeof name, "ckpt_step%08lld.pwc", static_cast<long long>(state.step));
  const auto path = dir / "checkpoints" / name;
  write_archive(path, a);
  return path;
}

}  // namespace


PretrainResult pretrain(const Corpus& corpus, const TrainConfig& config, const PretrainOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  check_corpus_compatible(corpus, config);
  const auto schedule = build_schedule(config, static_cast<int>(corpus.images.size()));
  const std::int64_t total_steps = schedule.back().first_step + schedule.back().steps;
  const nlohmann::json config_json = train_config_to_json(config);

  PretrainResult result;
  ModelState state = ModelState::create(config.model, config.seed);
  state.total_steps = total_steps;
  std::vector<ParamRef> params;
  state.student.params("", params);
  AdamW opt(params);
  Rng rng(Rng::mix(config.seed ^ 0x5eedULL));
  Position pos;

  if (options.resume) {
    const Archive a = read_archive(*options.resume);
    require(a.meta.at("config") == config_json, "resume", "checkpoint was written with a different config");
    state = unpack_model(a);
    params.clear();
    state.student.params("", params);
    unpack_optimizer(a, params, opt);
    rng.set_state(a.meta.at("rng").get<std::string>());
    const auto& p = a.meta.at("position");
    pos = {p.at("phase").get<int>(), p.at("epoch").get<int>(), p.at("global_epoch").get<int>()};
  }

  std::filesystem::create_directories(options.out_dir);
  const auto metrics_path = options.out_dir / "metrics.jsonl";
  {
    // Keep only lines from before the resume point.
    std::vector<std::string> kept;
    if (options.resume && std::filesystem::exists(metrics_path)) {
      std::ifstream is(metrics_path);
      std::string line;
      while (std::getline(is, line))
        if (!line.empty() && nlohmann::json::parse(line).at("step").get<std::int64_t>() < state.step) kept.push_back(line);
    }
    std::ofstream os(metrics_path, std::ios::trunc);
    for (const auto& l : kept) os << l << "\n";
  }
  std::ofstream metrics(metrics_path, std::ios::app);

  const std::int64_t warmup_steps = static_cast<std::int64_t>(config.lr_warmup_fraction * static_cast<double>(total_steps));
  double min_entropy = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
  bool stopped = false;

  for (; pos.phase < static_cast<int>(schedule.size()) && !stopped; ++pos.phase, pos.epoch = 0) {
    const ScheduledPhase& sp = schedule[static_cast<std::size_t>(pos.phase)];
    for (; pos.epoch < sp.phase.epochs; ) {
      BatchIterator it(corpus.images, sp.phase.level, sp.phase.batch_size, config.sampler, rng,
                       sp.phase.mode == PhaseMode::joint);
      std::vector<AnchorSample> batch;
      int b = 0;
      while (it.next(batch)) {
        StepSchedule sched;
        sched.phase_index = pos.phase;
        sched.tau_t = config.temps.teacher_at(pos.global_epoch + static_cast<double>(b) / sp.steps_per_epoch);
        sched.lr = cosine_lr(state.step, total_steps, config.lr, config.min_lr, warmup_steps);
        sched.ema_lambda = ema_coefficient(state.step, total_steps, config.ema_start, config.ema_end);
        const LossBreakdown lb = train_step(state, opt, batch, sp, config, sched);
        metrics << lb.to_json().dump() << "\n";
        min_entropy = std::min(min_entropy, lb.teacher_entropy);
        result.log.push_back(lb);
        ++b;
      }
      metrics.flush();
      ++pos.epoch;
      ++pos.global_epoch;
      ++epochs_run;
      const bool phase_end = pos.epoch == sp.phase.epochs;
      const bool periodic = config.checkpoint_every_epochs > 0 && pos.global_epoch % config.checkpoint_every_epochs == 0;
      if (phase_end || periodic) {
        Position save = pos;
        if (phase_end) {
          save.phase += 1;
          save.epoch = 0;
        }
        result.checkpoints.push_back(save_checkpoint(options.out_dir, state, opt, rng, save, config, config_json));
      }
      if (!options.quiet)
        std::cerr << "[pretrain] phase " << pos.phase << " (" << to_string(sp.phase.mode) << ", level "
                  << sp.phase.level << ") epoch " << pos.epoch << "/" << sp.phase.epochs << " step " << state.step
                  << "/" << total_steps << " loss " << (result.log.empty() ? 0.0 : result.log.back().total) << "\n";
      if (options.stop_after_epochs >= 0 && epochs_run >= options.stop_after_epochs) {
        stopped = true;
        break;
      }
    }
  }

  if (!stopped) {
    Archive a;
    pack_model(state, a);
    a.meta["schema"] = 1;
    a.meta["config"] = config_json;
    a.meta["seed"] = config.seed;
    result.final_checkpoint = options.out_dir / "final.pwc";
    write_archive(result.final_checkpoint, a);
  }
  result.state = std::move(state);
  result.min_teacher_entropy = min_entropy;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace partwhole
