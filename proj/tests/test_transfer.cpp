#include <gtest/gtest.h>

#include <set>

#include "partwhole/error.hpp"
#include "partwhole/transfer.hpp"

using namespace partwhole;

namespace {

std::vector<LabeledImage> corpus(int n) {
  SceneSpec spec;
  spec.image_size = 64;
  spec.seed = 21;
  return generate_corpus(spec, n);
}

Encoder tiny_encoder() {
  EncoderConfig c;
  c.input_size = 32;
  c.feature_dim = 16;
  Rng rng(1);
  return Encoder::create(c, rng);
}

}  // namespace

TEST(Tasks, SplitIsSubjectDisjointAndComplete) {
  const auto imgs = corpus(40);
  const auto t = make_synthetic_tasks(imgs, 3);
  std::set<int> train_subjects, seen;
  for (int i : t.segmentation.train) {
    train_subjects.insert(imgs[i].subject_id);
    seen.insert(i);
  }
  for (int i : t.segmentation.test) {
    EXPECT_FALSE(train_subjects.count(imgs[i].subject_id));
    seen.insert(i);
  }
  EXPECT_EQ(seen.size(), imgs.size());
  EXPECT_EQ(t.segmentation.train.size(), 32u);
  EXPECT_EQ(t.classification.train, t.segmentation.train);
  EXPECT_EQ(t.classification.metric(), "auc");
  EXPECT_EQ(t.segmentation.metric(), "dice");
  EXPECT_NE(make_synthetic_tasks(imgs, 4).segmentation.test, t.segmentation.test);
}

TEST(Tasks, LabelsAreBalanced) {
  const auto imgs = corpus(200);
  int positives = 0;
  for (const auto& im : imgs) positives += im.variant;
  EXPECT_GE(positives, 60);
  EXPECT_LE(positives, 140);
}

TEST(Tasks, ShotsBeyondTrainingSplitRejected) {
  const auto imgs = corpus(10);
  auto t = make_synthetic_tasks(imgs).segmentation;
  t.shots = static_cast<int>(t.train.size()) + 1;
  try {
    t.validate(imgs);
    FAIL() << "accepted too many shots";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("shots"), std::string::npos);
  }
  t.shots = static_cast<int>(t.train.size());
  EXPECT_NO_THROW(t.validate(imgs));
}

TEST(Tasks, OverlappingSubjectsRejected) {
  const auto imgs = corpus(10);
  auto t = make_synthetic_tasks(imgs).segmentation;
  t.test.push_back(t.train.front());
  EXPECT_THROW(t.validate(imgs), PreconditionError);
}

TEST(Finetune, SegmentationSmoke) {
  const auto imgs = corpus(12);
  auto t = make_synthetic_tasks(imgs).segmentation;
  t.shots = 4;
  FinetuneConfig f;
  f.steps = 5;
  f.batch_size = 2;
  const auto enc = tiny_encoder();
  const auto a = finetune(enc, imgs, t, f, 0);
  const auto b = finetune(enc, imgs, t, f, 0);
  EXPECT_EQ(a.metric, b.metric);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(a.loss_curve.size(), 5u);
  EXPECT_GE(a.metric, 0.0);
  EXPECT_LE(a.metric, 1.0);
  EXPECT_EQ(a.to_json()["seed"], 0);
}

TEST(Finetune, ClassificationSmoke) {
  const auto imgs = corpus(20);
  auto t = make_synthetic_tasks(imgs).classification;
  FinetuneConfig f;
  f.steps = 3;
  f.batch_size = 4;
  const auto r = finetune(tiny_encoder(), imgs, t, f, 1);
  EXPECT_GE(r.metric, 0.0);
  EXPECT_LE(r.metric, 1.0);
}

TEST(Masks, ResampledAndBinary) {
  Image m(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 4; x < 8; ++x) m.at(y, x) = 1.0f;
  const auto r = to_mask(m, 4);
  for (float v : r.pixels) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  EXPECT_EQ(r.at(0, 0), 0.0f);
  EXPECT_EQ(r.at(3, 3), 1.0f);
}
