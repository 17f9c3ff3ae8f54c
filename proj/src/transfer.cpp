#include "partwhole/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "partwhole/error.hpp"
#include "partwhole/optim.hpp"

namespace partwhole {

std::string to_string(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "segmentation";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "segmentation") return TaskKind::segmentation;
  throw PreconditionError("kind", "expected classification or segmentation, got '" + s + "'");
}

void TransferTask::validate(const std::vector<LabeledImage>& images) const {
  require(!train.empty() && !test.empty(), "split", "train and test must be non-empty");
  std::set<int> train_subjects;
  for (int i : train) {
    require(i >= 0 && i < static_cast<int>(images.size()), "train", "index out of range");
    train_subjects.insert(images[static_cast<std::size_t>(i)].subject_id);
  }
  for (int i : test) {
    require(i >= 0 && i < static_cast<int>(images.size()), "test", "index out of range");
    require(!train_subjects.count(images[static_cast<std::size_t>(i)].subject_id), "split",
            "subject " + std::to_string(images[static_cast<std::size_t>(i)].subject_id) + " is in both train and test");
  }
  require(shots >= 0, "shots", "must be >= 0");
  require(shots <= static_cast<int>(train.size()), "shots",
          std::to_string(shots) + " exceeds the " + std::to_string(train.size()) + " labeled training images");
  if (kind == TaskKind::classification) {
    bool pos = false, neg = false;
    for (int i : test) (images[static_cast<std::size_t>(i)].variant ? pos : neg) = true;
    require(pos && neg, "test", "classification test split needs both labels");
  }
}

SyntheticTasks make_synthetic_tasks(const std::vector<LabeledImage>& images, std::uint64_t split_seed,
                                    double train_fraction) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction", "must lie in (0, 1)");
  std::vector<int> subjects;
  for (const auto& im : images) subjects.push_back(im.subject_id);
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  require(subjects.size() >= 2, "corpus", "needs at least two subjects for a disjoint split");
  Rng rng(Rng::mix(split_seed ^ 0x7A11D5EEDULL));
  for (std::size_t i = subjects.size() - 1; i > 0; --i)
    std::swap(subjects[i], subjects[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
  auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(subjects.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, subjects.size() - 1);
  const std::set<int> train_subjects(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_train));

  SyntheticTasks tasks;
  tasks.classification.kind = TaskKind::classification;
  for (int i = 0; i < static_cast<int>(images.size()); ++i) {
    auto& side = train_subjects.count(images[static_cast<std::size_t>(i)].subject_id) ? tasks.classification.train
                                                                                     : tasks.classification.test;
    side.push_back(i);
  }
  tasks.segmentation = tasks.classification;
  tasks.segmentation.kind = TaskKind::segmentation;
  return tasks;
}

void FinetuneConfig::validate() const {
  require(steps >= 1, "steps", "must be >= 1");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(lr > 0.0, "lr", "must be > 0");
  require(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  require(clip_norm > 0.0, "clip_norm", "must be > 0");
}

Decoder Decoder::create(const EncoderConfig& encoder, Rng& rng) {
  const auto widths = encoder.widths();
  Decoder d;
  for (int s = static_cast<int>(widths.size()) - 1; s >= 0; --s) {
    const int out = s > 0 ? widths[static_cast<std::size_t>(s - 1)] : std::max(4, widths.front() / 2);
    d.ups.push_back(ConvTranspose2x2::create(widths[static_cast<std::size_t>(s)], out, rng));
  }
  d.head = Conv2d::create(d.ups.back().out_channels, 1, 1, rng);
  return d;
}

void Decoder::params(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < ups.size(); ++i) ups[i].params(prefix + "up" + std::to_string(i) + ".", out);
  head.params(prefix + "head.", out);
}

void SegmentationNet::params(std::vector<ParamRef>& out) {
  encoder.params("encoder.", out);
  decoder.params("decoder.", out);
}

namespace {

struct SegTape {
  EncoderTape encoder;
  std::vector<std::vector<FeatureMap>> up_inputs;   // [up stage][sample]
  std::vector<std::vector<FeatureMap>> up_outputs;  // post-ReLU, after the skip addition
  std::vector<ConvTape> head;                       // per sample
};

/// Decoder on per-stage encoder outputs ([stage][sample]).
std::vector<FeatureMap> decode(const Decoder& decoder, const std::vector<std::vector<FeatureMap>>& stage_outputs,
                               SegTape* tape) {
  const int stages = static_cast<int>(stage_outputs.size());
  std::vector<FeatureMap> xs = stage_outputs.back();
  for (int i = 0; i < stages; ++i) {
    if (tape) tape->up_inputs.push_back(xs);
    const int skip_stage = stages - 2 - i;
    for (std::size_t n = 0; n < xs.size(); ++n) {
      FeatureMap y = upconv_forward(decoder.ups[static_cast<std::size_t>(i)], xs[n]);
      if (skip_stage >= 0) {
        const auto& skip = stage_outputs[static_cast<std::size_t>(skip_stage)][n];
        for (std::size_t k = 0; k < y.data.size(); ++k) y.data[k] += skip.data[k];
      }
      relu_inplace(y);
      xs[n] = std::move(y);
    }
    if (tape) tape->up_outputs.push_back(xs);
  }
  std::vector<FeatureMap> logits;
  for (const auto& x : xs) {
    ConvTape ct;
    logits.push_back(conv_forward(decoder.head, x, tape ? &ct : nullptr));
    if (tape) tape->head.push_back(std::move(ct));
  }
  return logits;
}

std::vector<FeatureMap> segment_train(SegmentationNet& net, const std::vector<Image>& inputs, SegTape& tape) {
  encode_batch(net.encoder, inputs, &tape.encoder);
  std::vector<std::vector<FeatureMap>> stage_outputs;
  for (int idx : tape.encoder.stage_end) stage_outputs.push_back(tape.encoder.layers[static_cast<std::size_t>(idx)].outputs);
  return decode(net.decoder, stage_outputs, &tape);
}

void segment_backward(const SegmentationNet& net, const SegTape& tape, const std::vector<FeatureMap>& dlogits,
                      SegmentationNet& grad) {
  const std::size_t batch = dlogits.size();
  std::vector<FeatureMap> g;
  for (std::size_t n = 0; n < batch; ++n) g.push_back(conv_backward(net.decoder.head, tape.head[n], dlogits[n], grad.decoder.head));
  const int stages = static_cast<int>(tape.encoder.stage_end.size());
  std::vector<std::vector<FeatureMap>> stage_grads(static_cast<std::size_t>(stages));
  for (int i = stages - 1; i >= 0; --i) {
    const auto iu = static_cast<std::size_t>(i);
    for (std::size_t n = 0; n < batch; ++n) relu_backward_inplace(tape.up_outputs[iu][n], g[n]);
    const int skip_stage = stages - 2 - i;
    if (skip_stage >= 0) stage_grads[static_cast<std::size_t>(skip_stage)] = g;
    for (std::size_t n = 0; n < batch; ++n)
      g[n] = upconv_backward(net.decoder.ups[iu], tape.up_inputs[iu][n], g[n], grad.decoder.ups[iu]);
  }
  // g is now the gradient at the deepest encoder stage output.
  stage_grads.back() = std::move(g);
  encoder_backward(net.encoder, tape.encoder, std::vector<std::vector<float>>(batch), grad.encoder, &stage_grads);
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

/// Mean binary cross-entropy with logits; writes dL/dlogit into `grad`.
double bce_with_logits(std::span<const float> logits, std::span<const float> targets, std::span<float> grad,
                       double scale) {
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double t = targets[i];
    loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    grad[i] = static_cast<float>((sigmoid(logits[i]) - t) * scale);
  }
  return loss * scale;
}

std::vector<int> few_shot_subset(const TransferTask& task, Rng& rng) {
  std::vector<int> pool = task.train;
  const int shots = task.shots == 0 ? static_cast<int>(pool.size()) : task.shots;
  for (std::size_t i = pool.size() - 1; i > 0; --i)
    std::swap(pool[i], pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
  pool.resize(static_cast<std::size_t>(shots));
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<int> next_batch(const std::vector<int>& subset, int batch_size, Rng& rng) {
  if (batch_size >= static_cast<int>(subset.size())) return subset;
  std::vector<int> batch;
  for (int i = 0; i < batch_size; ++i)
    batch.push_back(subset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(subset.size()) - 1))]);
  return batch;
}

}  // namespace

Image to_input(const Image& img, int size) {
  if (img.height == size && img.width == size) return img;
  return resize_bilinear(img, size, size);
}

Image to_mask(const Image& mask, int size) {
  Image m = to_input(mask, size);
  for (auto& v : m.pixels) v = v >= 0.5f ? 1.0f : 0.0f;
  return m;
}

FeatureMap segment(const SegmentationNet& net, const Image& input) {
  std::vector<std::vector<FeatureMap>> stage_outputs;
  for (auto& m : encode_stages(net.encoder, input)) stage_outputs.push_back({std::move(m)});
  return decode(net.decoder, stage_outputs, nullptr).front();
}

nlohmann::json FinetuneResult::to_json() const {
  return {{"seed", seed}, {"metric", metric}, {"loss_curve", loss_curve}};
}

FinetuneResult finetune(const Encoder& encoder, const std::vector<LabeledImage>& images, const TransferTask& task,
                        const FinetuneConfig& config, int seed) {
  config.validate();
  task.validate(images);
  const int g = encoder.config.input_size;
  for (const auto& im : images)
    require(im.pixels.channels == encoder.config.in_channels, "channels", "corpus does not match the encoder input");

  Rng rng(Rng::mix(static_cast<std::uint64_t>(seed) * 0x2545F4914F6CDD1DULL + 17));
  const auto subset = few_shot_subset(task, rng);
  std::map<int, Image> inputs, masks;
  auto input_of = [&](int i) -> const Image& {
    auto it = inputs.find(i);
    if (it == inputs.end()) it = inputs.emplace(i, to_input(images[static_cast<std::size_t>(i)].pixels, g)).first;
    return it->second;
  };
  auto mask_of = [&](int i) -> const Image& {
    auto it = masks.find(i);
    if (it == masks.end()) it = masks.emplace(i, to_mask(images[static_cast<std::size_t>(i)].organ_mask, g)).first;
    return it->second;
  };

  FinetuneResult result;
  result.seed = seed;
  const double scale_batch = 1.0 / static_cast<double>(std::min<int>(config.batch_size, static_cast<int>(subset.size())));

  if (task.kind == TaskKind::segmentation) {
    SegmentationNet net{encoder, Decoder::create(encoder.config, rng)};
    std::vector<ParamRef> params;
    net.params(params);
    AdamW opt(params);
    opt.weight_decay = config.weight_decay;
    for (int step = 0; step < config.steps; ++step) {
      SegmentationNet grad = net;
      std::vector<ParamRef> grads;
      grad.params(grads);
      for (auto& r : grads) std::fill(r.values.begin(), r.values.end(), 0.0f);
      double loss = 0.0;
      const auto ids = next_batch(subset, config.batch_size, rng);
      std::vector<Image> batch;
      for (int i : ids) batch.push_back(input_of(i));
      SegTape tape;
      const auto logits = segment_train(net, batch, tape);
      std::vector<FeatureMap> dl;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        dl.emplace_back(1, logits[k].height, logits[k].width);
        loss += bce_with_logits(logits[k].data, mask_of(ids[k]).pixels, dl.back().data,
                                scale_batch / static_cast<double>(logits[k].data.size()));
      }
      segment_backward(net, tape, dl, grad);
      require(std::isfinite(loss), "loss", "non-finite fine-tuning loss at step " + std::to_string(step));
      clip_grad_norm(grads, config.clip_norm);
      opt.step(params, grads, cosine_lr(step, config.steps, config.lr, 0.0, 0));
      result.loss_curve.push_back(loss);
    }
    std::vector<double> scores;
    for (int i : task.test) {
      const FeatureMap logits = segment(net, input_of(i));
      std::vector<float> prob(logits.data.size());
      for (std::size_t k = 0; k < prob.size(); ++k) prob[k] = sigmoid(logits.data[k]);
      scores.push_back(dice(prob, mask_of(i).pixels));
    }
    result.metric = mean(scores);
    return result;
  }

  Encoder enc = encoder;
  Linear head = Linear::create(encoder.config.feature_dim, 1, 0.01, rng);
  std::vector<ParamRef> params;
  enc.params("encoder.", params);
  head.params("head.", params);
  AdamW opt(params);
  opt.weight_decay = config.weight_decay;
  for (int step = 0; step < config.steps; ++step) {
    Encoder genc = zeros_like(enc);
    Linear ghead = head;
    std::fill(ghead.weight.begin(), ghead.weight.end(), 0.0f);
    std::fill(ghead.bias.begin(), ghead.bias.end(), 0.0f);
    std::vector<ParamRef> grads;
    genc.params("encoder.", grads);
    ghead.params("head.", grads);
    double loss = 0.0;
    const auto ids = next_batch(subset, config.batch_size, rng);
    std::vector<Image> batch;
    for (int i : ids) batch.push_back(input_of(i));
    EncoderTape tape;
    const auto features = encode_batch(enc, batch, &tape);
    std::vector<std::vector<float>> dfeatures;
    for (std::size_t s = 0; s < ids.size(); ++s) {
      const int i = ids[s];
      const auto& f = features[s];
      float z = head.bias[0];
      for (std::size_t k = 0; k < f.size(); ++k) z += head.weight[k] * f[k];
      const float t = images[static_cast<std::size_t>(i)].variant ? 1.0f : 0.0f;
      float dz = 0.0f;
      loss += bce_with_logits(std::span<const float>(&z, 1), std::span<const float>(&t, 1), std::span<float>(&dz, 1),
                              scale_batch);
      std::vector<float> df(f.size());
      for (std::size_t k = 0; k < f.size(); ++k) {
        ghead.weight[k] += dz * f[k];
        df[k] = dz * head.weight[k];
      }
      ghead.bias[0] += dz;
      dfeatures.push_back(std::move(df));
    }
    encoder_backward(enc, tape, dfeatures, genc);
    require(std::isfinite(loss), "loss", "non-finite fine-tuning loss at step " + std::to_string(step));
    clip_grad_norm(grads, config.clip_norm);
    opt.step(params, grads, cosine_lr(step, config.steps, config.lr, 0.0, 0));
    result.loss_curve.push_back(loss);
  }
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i : task.test) {
    const auto f = encode(enc, input_of(i));
    double z = head.bias[0];
    for (std::size_t k = 0; k < f.size(); ++k) z += static_cast<double>(head.weight[k]) * f[k];
    scores.push_back(z);
    labels.push_back(images[static_cast<std::size_t>(i)].variant ? 1 : 0);
  }
  result.metric = roc_auc(scores, labels);
  return result;
}

}  // namespace partwhole
