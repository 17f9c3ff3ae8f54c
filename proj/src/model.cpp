#include "partwhole/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "partwhole/error.hpp"

namespace partwhole {

std::string to_string(EncoderKind kind) { return kind == EncoderKind::small_conv ? "small_conv" : "pluggable"; }

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "small_conv") return EncoderKind::small_conv;
  if (s == "pluggable") return EncoderKind::pluggable;
  throw PreconditionError("encoder.kind", "unknown encoder kind '" + s + "'");
}

void EncoderConfig::validate() const {
  require(feature_dim >= 8, "feature_dim", "must be >= 8");
  require(input_size >= 16, "input_size", "must be >= 16");
  require(in_channels >= 1, "in_channels", "must be >= 1");
  require(convs_per_stage >= 1, "convs_per_stage", "must be >= 1");
  if (kind == EncoderKind::pluggable) {
    require(!stage_widths.empty(), "stage_widths", "pluggable encoder needs stage widths");
    require(stage_widths.back() == feature_dim, "stage_widths", "last stage width must equal feature_dim");
    for (int w : stage_widths) require(w >= 1, "stage_widths", "widths must be positive");
  } else {
    require(feature_dim % 8 == 0, "feature_dim", "small_conv needs feature_dim divisible by 8");
  }
}

std::vector<int> EncoderConfig::widths() const {
  if (kind == EncoderKind::pluggable) return stage_widths;
  return {feature_dim / 8, feature_dim / 4, feature_dim / 2, feature_dim};
}

void ModelConfig::validate() const {
  encoder.validate();
  require(loc_hidden >= 1, "loc_hidden", "must be >= 1");
  require(loc_out >= 2, "loc_out", "must be >= 2");
  require(loc_bottleneck >= 1, "loc_bottleneck", "must be >= 1");
  require(head_hidden >= 1, "head_hidden", "must be >= 1");
  require(n_parts >= 1 && n_parts <= 16, "n_parts", "must be in [1, 16]");
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.encoder.input_size = 224;
  c.loc_hidden = 2048;
  c.loc_bottleneck = 256;
  c.loc_out = 65536;
  c.head_hidden = 2048;
  return c;
}

Encoder Encoder::create(const EncoderConfig& config, Rng& rng) {
  config.validate();
  Encoder e;
  e.config = config;
  int in = config.in_channels;
  for (int w : config.widths()) {
    std::vector<Conv2d> stage;
    std::vector<BatchNorm2d> norms;
    for (int k = 0; k < (config.kind == EncoderKind::small_conv ? 1 : config.convs_per_stage); ++k) {
      stage.push_back(Conv2d::create(in, w, k == 0 ? 2 : 1, rng));
      if (config.batch_norm) norms.push_back(BatchNorm2d::create(w));
      in = w;
    }
    e.stages.push_back(std::move(stage));
    e.norms.push_back(std::move(norms));
  }
  return e;
}

int Encoder::layers() const {
  int n = 0;
  for (const auto& s : stages) n += static_cast<int>(s.size());
  return n;
}

namespace {

std::string layer_prefix(const std::string& prefix, std::size_t s, std::size_t k) {
  return prefix + "stage" + std::to_string(s) + "." + std::to_string(k) + ".";
}

void check_view(const Encoder& encoder, const Image& view) {
  require(view.height == view.width, "view", "must be square");
  require(view.channels == encoder.config.in_channels, "view",
          "expected " + std::to_string(encoder.config.in_channels) + " channels, got " +
              std::to_string(view.channels));
  require(view.height >= (1 << encoder.stages.size()), "view", "too small for the encoder depth");
}

std::vector<float> global_average(const FeatureMap& x) {
  std::vector<float> feature(static_cast<std::size_t>(x.channels), 0.0f);
  const int P = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    double acc = 0.0;
    const float* src = x.data.data() + static_cast<std::size_t>(c) * P;
    for (int i = 0; i < P; ++i) acc += src[i];
    feature[static_cast<std::size_t>(c)] = static_cast<float>(acc / P);
  }
  return feature;
}

}  // namespace

void Encoder::params(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t s = 0; s < stages.size(); ++s)
    for (std::size_t k = 0; k < stages[s].size(); ++k) {
      stages[s][k].params(layer_prefix(prefix, s, k), out);
      if (!norms[s].empty()) norms[s][k].params(layer_prefix(prefix, s, k) + "bn.", out);
    }
}

void Encoder::params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  for (std::size_t s = 0; s < stages.size(); ++s)
    for (std::size_t k = 0; k < stages[s].size(); ++k) {
      stages[s][k].params(layer_prefix(prefix, s, k), out);
      if (!norms[s].empty()) norms[s][k].params(layer_prefix(prefix, s, k) + "bn.", out);
    }
}

void Encoder::buffers(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t s = 0; s < norms.size(); ++s)
    for (std::size_t k = 0; k < norms[s].size(); ++k) norms[s][k].buffers(layer_prefix(prefix, s, k) + "bn.", out);
}

void Encoder::buffers(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  for (std::size_t s = 0; s < norms.size(); ++s)
    for (std::size_t k = 0; k < norms[s].size(); ++k) norms[s][k].buffers(layer_prefix(prefix, s, k) + "bn.", out);
}

std::vector<FeatureMap> encode_stages(const Encoder& encoder, const Image& view) {
  check_view(encoder, view);
  FeatureMap x = to_feature_map(view);
  std::vector<FeatureMap> out;
  for (std::size_t s = 0; s < encoder.stages.size(); ++s) {
    for (std::size_t k = 0; k < encoder.stages[s].size(); ++k) {
      x = conv_forward(encoder.stages[s][k], x, nullptr);
      if (!encoder.norms[s].empty()) x = bn_forward_eval(encoder.norms[s][k], x);
      relu_inplace(x);
    }
    out.push_back(x);
  }
  return out;
}

std::vector<float> encode(const Encoder& encoder, const Image& view) {
  return global_average(encode_stages(encoder, view).back());
}

std::vector<std::vector<float>> encode_batch(Encoder& encoder, const std::vector<Image>& views, EncoderTape* tape,
                                             bool update_running) {
  require(!views.empty(), "views", "must be non-empty");
  std::vector<FeatureMap> xs;
  for (const auto& v : views) {
    check_view(encoder, v);
    require(v.height == views.front().height, "views", "all views in a batch must share one size");
    xs.push_back(to_feature_map(v));
  }
  if (tape) {
    tape->layers.clear();
    tape->stage_end.clear();
  }
  for (std::size_t s = 0; s < encoder.stages.size(); ++s) {
    for (std::size_t k = 0; k < encoder.stages[s].size(); ++k) {
      EncoderLayerTape lt;
      std::vector<FeatureMap> ys;
      ys.reserve(xs.size());
      for (const auto& x : xs) {
        ConvTape ct;
        ys.push_back(conv_forward(encoder.stages[s][k], x, tape ? &ct : nullptr));
        if (tape) lt.convs.push_back(std::move(ct));
      }
      if (!encoder.norms[s].empty())
        ys = bn_forward_train(encoder.norms[s][k], ys, tape ? &lt.norm : nullptr, update_running);
      for (auto& y : ys) relu_inplace(y);
      if (tape) {
        lt.outputs = ys;
        tape->layers.push_back(std::move(lt));
      }
      xs = std::move(ys);
    }
    if (tape) tape->stage_end.push_back(static_cast<int>(tape->layers.size()) - 1);
  }
  std::vector<std::vector<float>> features;
  features.reserve(xs.size());
  for (const auto& x : xs) features.push_back(global_average(x));
  return features;
}

void encoder_backward(const Encoder& encoder, const EncoderTape& tape,
                      const std::vector<std::vector<float>>& dfeatures, Encoder& grad,
                      const std::vector<std::vector<FeatureMap>>* stage_grads) {
  const auto& last_outputs = tape.layers.back().outputs;
  const std::size_t batch = last_outputs.size();
  require(dfeatures.size() == batch, "dfeatures", "one entry per sample");
  std::vector<FeatureMap> g;
  for (std::size_t n = 0; n < batch; ++n) {
    const FeatureMap& last = last_outputs[n];
    FeatureMap gn(last.channels, last.height, last.width);
    if (!dfeatures[n].empty()) {
      require(static_cast<int>(dfeatures[n].size()) == last.channels, "dfeature", "length mismatch");
      const float inv = 1.0f / static_cast<float>(last.plane());
      for (int c = 0; c < last.channels; ++c)
        std::fill_n(gn.data.begin() + static_cast<std::ptrdiff_t>(c) * last.plane(), last.plane(),
                    dfeatures[n][static_cast<std::size_t>(c)] * inv);
    }
    g.push_back(std::move(gn));
  }
  int layer = static_cast<int>(tape.layers.size()) - 1;
  for (int s = static_cast<int>(encoder.stages.size()) - 1; s >= 0; --s) {
    if (stage_grads) {
      const auto& sg = (*stage_grads)[static_cast<std::size_t>(s)];
      for (std::size_t n = 0; n < sg.size() && n < batch; ++n)
        if (!sg[n].data.empty())
          for (std::size_t i = 0; i < g[n].data.size(); ++i) g[n].data[i] += sg[n].data[i];
    }
    for (int k = static_cast<int>(encoder.stages[static_cast<std::size_t>(s)].size()) - 1; k >= 0; --k, --layer) {
      const auto& lt = tape.layers[static_cast<std::size_t>(layer)];
      for (std::size_t n = 0; n < batch; ++n) relu_backward_inplace(lt.outputs[n], g[n]);
      const auto su = static_cast<std::size_t>(s);
      const auto ku = static_cast<std::size_t>(k);
      if (!encoder.norms[su].empty()) g = bn_backward(encoder.norms[su][ku], lt.norm, g, grad.norms[su][ku]);
      for (std::size_t n = 0; n < batch; ++n)
        g[n] = conv_backward(encoder.stages[su][ku], lt.convs[n], g[n], grad.stages[su][ku]);
    }
  }
}

void StudentNet::params(const std::string& prefix, std::vector<ParamRef>& out) {
  encoder.params(prefix + "encoder.", out);
  loc_head.params(prefix + "loc_head.", out);
  comp_head.params(prefix + "comp_head.", out);
  decomp_head.params(prefix + "decomp_head.", out);
}

void StudentNet::params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  encoder.params(prefix + "encoder.", out);
  loc_head.params(prefix + "loc_head.", out);
  comp_head.params(prefix + "comp_head.", out);
  decomp_head.params(prefix + "decomp_head.", out);
}

void TeacherNet::params(const std::string& prefix, std::vector<ParamRef>& out) {
  encoder.params(prefix + "encoder.", out);
  loc_head.params(prefix + "loc_head.", out);
}

void TeacherNet::params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  encoder.params(prefix + "encoder.", out);
  loc_head.params(prefix + "loc_head.", out);
}

TeacherNet teacher_from(const StudentNet& student) { return TeacherNet{student.encoder, student.loc_head}; }

ModelState ModelState::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(Rng::mix(seed));
  ModelState s;
  s.config = config;
  const int d = config.encoder.feature_dim;
  const int n = config.n_parts;
  s.student.encoder = Encoder::create(config.encoder, rng);
  s.student.loc_head.mlp = Mlp::create({d, config.loc_hidden, config.loc_hidden, config.loc_bottleneck}, 0.02, rng);
  s.student.loc_head.prototypes.resize(static_cast<std::size_t>(config.loc_out) * config.loc_bottleneck);
  for (auto& v : s.student.loc_head.prototypes) v = static_cast<float>(rng.normal());
  s.student.comp_head = Mlp::create({n * d, config.head_hidden, d}, 0.0, rng);
  s.student.decomp_head = Mlp::create({d, config.head_hidden, n * d}, 0.0, rng);
  s.teacher = teacher_from(s.student);
  s.center.assign(static_cast<std::size_t>(config.loc_out), 0.0f);
  return s;
}

void ProjectionHead::params(const std::string& prefix, std::vector<ParamRef>& out) {
  mlp.params(prefix + "mlp.", out);
  // Scale-invariant after row normalization, so decay would only inflate the
  // effective step size.
  out.push_back({prefix + "prototypes", prototypes, false});
}

void ProjectionHead::params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  mlp.params(prefix + "mlp.", out);
  out.push_back({prefix + "prototypes", prototypes});
}

std::vector<float> loc_project(const ProjectionHead& head, std::span<const float> feature, ProjectionTape* tape) {
  auto y = mlp_forward(head.mlp, feature, tape ? &tape->mlp : nullptr);
  const int b = head.mlp.out_features();
  const int k = head.out_features();
  double ss = 0.0;
  for (float v : y) ss += static_cast<double>(v) * v;
  const float inv = static_cast<float>(1.0 / std::max(std::sqrt(ss), 1e-12));
  std::vector<float> unit(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) unit[i] = y[i] * inv;
  std::vector<float> logits(static_cast<std::size_t>(k));
  std::vector<float> norms(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r) {
    const float* row = head.prototypes.data() + static_cast<std::size_t>(r) * b;
    double dot = 0.0, rr = 0.0;
    for (int i = 0; i < b; ++i) {
      dot += static_cast<double>(row[i]) * unit[static_cast<std::size_t>(i)];
      rr += static_cast<double>(row[i]) * row[i];
    }
    norms[static_cast<std::size_t>(r)] = static_cast<float>(std::max(std::sqrt(rr), 1e-12));
    logits[static_cast<std::size_t>(r)] = static_cast<float>(dot / norms[static_cast<std::size_t>(r)]);
  }
  if (tape) {
    tape->bottleneck = std::move(y);
    tape->unit = std::move(unit);
    tape->row_norms = std::move(norms);
  }
  return logits;
}

std::vector<float> loc_backward(const ProjectionHead& head, const ProjectionTape& tape, std::span<const float> dlogits,
                                ProjectionHead& grad) {
  const int b = head.mlp.out_features();
  const int k = head.out_features();
  require(static_cast<int>(dlogits.size()) == k, "dlogits", "length mismatch");
  std::vector<double> dunit(static_cast<std::size_t>(b), 0.0);
  for (int r = 0; r < k; ++r) {
    const float g = dlogits[static_cast<std::size_t>(r)];
    if (g == 0.0f) continue;
    const float* row = head.prototypes.data() + static_cast<std::size_t>(r) * b;
    float* grow = grad.prototypes.data() + static_cast<std::size_t>(r) * b;
    const double inv = 1.0 / tape.row_norms[static_cast<std::size_t>(r)];
    double logit = 0.0;
    for (int i = 0; i < b; ++i) logit += row[i] * inv * tape.unit[static_cast<std::size_t>(i)];
    for (int i = 0; i < b; ++i) {
      const double vhat = row[i] * inv;
      dunit[static_cast<std::size_t>(i)] += g * vhat;
      grow[i] += static_cast<float>(g * inv * (tape.unit[static_cast<std::size_t>(i)] - logit * vhat));
    }
  }
  double ss = 0.0, proj = 0.0;
  for (std::size_t i = 0; i < tape.bottleneck.size(); ++i) {
    ss += static_cast<double>(tape.bottleneck[i]) * tape.bottleneck[i];
    proj += dunit[i] * tape.unit[i];
  }
  const double inv_norm = 1.0 / std::max(std::sqrt(ss), 1e-12);
  std::vector<float> dy(tape.bottleneck.size());
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = static_cast<float>((dunit[i] - proj * tape.unit[i]) * inv_norm);
  return mlp_backward(head.mlp, tape.mlp, dy, grad.mlp);
}

std::vector<float> compose(const Mlp& head, const std::vector<std::vector<float>>& part_features, MlpTape* tape) {
  require(!part_features.empty(), "part_features", "must be non-empty");
  const std::size_t d = part_features.front().size();
  require(static_cast<int>(part_features.size() * d) == head.in_features(), "part_features",
          "count x length must equal the composability head width " + std::to_string(head.in_features()));
  std::vector<float> concat;
  concat.reserve(part_features.size() * d);
  for (const auto& f : part_features) {
    require(f.size() == d, "part_features", "all parts must have equal length");
    concat.insert(concat.end(), f.begin(), f.end());
  }
  return mlp_forward(head, concat, tape);
}

std::vector<float> compose_padded(const Mlp& head, const std::vector<std::vector<float>>& part_features,
                                  int feature_dim) {
  const int slots = head.in_features() / feature_dim;
  require(!part_features.empty() && static_cast<int>(part_features.size()) <= slots, "part_features",
          "count must be in [1, " + std::to_string(slots) + "]");
  std::vector<std::vector<float>> padded = part_features;
  padded.resize(static_cast<std::size_t>(slots), std::vector<float>(static_cast<std::size_t>(feature_dim), 0.0f));
  return compose(head, padded);
}

std::vector<std::vector<float>> decompose(const Mlp& head, std::span<const float> whole_embedding, int n,
                                          MlpTape* tape) {
  require(n >= 1 && head.out_features() % n == 0, "n", "does not divide the decomposability head width");
  const int d = head.out_features() / n;
  require(static_cast<int>(whole_embedding.size()) == head.in_features() && d == head.in_features(), "n",
          "head maps " + std::to_string(head.in_features()) + " -> " + std::to_string(head.out_features()) +
              ", incompatible with n = " + std::to_string(n));
  const auto out = mlp_forward(head, whole_embedding, tape);
  std::vector<std::vector<float>> blocks;
  for (int i = 0; i < n; ++i) blocks.emplace_back(out.begin() + i * d, out.begin() + (i + 1) * d);
  return blocks;
}

double ema_coefficient(std::int64_t step, std::int64_t total_steps, double start, double end) {
  require(total_steps > 0, "total_steps", "must be positive");
  require(step >= 0 && step <= total_steps, "step", "must be in [0, total_steps]");
  require(start >= 0.0 && start <= end && end <= 1.0, "ema", "need 0 <= start <= end <= 1");
  const double progress = std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps));
  return start + (end - start) * (1.0 - progress) / 2.0;
}

void ema_update(TeacherNet& teacher, const StudentNet& student, double lambda) {
  require(lambda >= 0.0 && lambda <= 1.0, "lambda", "must be in [0, 1]");
  std::vector<ParamRef> t;
  teacher.params("", t);
  std::vector<ConstParamRef> s;
  student.encoder.params("encoder.", s);
  student.loc_head.params("loc_head.", s);
  require(t.size() == s.size(), "teacher", "structure differs from student");
  for (std::size_t i = 0; i < t.size(); ++i) {
    require(t[i].name == s[i].name && t[i].values.size() == s[i].values.size(), "teacher",
            "parameter " + t[i].name + " does not match student " + s[i].name);
    auto tv = t[i].values;
    auto sv = s[i].values;
    for (std::size_t k = 0; k < tv.size(); ++k)
      tv[k] = static_cast<float>(lambda * static_cast<double>(tv[k]) + (1.0 - lambda) * static_cast<double>(sv[k]));
  }
}

}  // namespace partwhole
