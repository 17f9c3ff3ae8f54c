#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "partwhole/error.hpp"
#include "partwhole/synthgen.hpp"

using namespace partwhole;

namespace {

double correlation(const Image& a, const Image& b) {
  const double n = static_cast<double>(a.pixels.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    ma += a.pixels[i];
    mb += b.pixels[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double da = a.pixels[i] - ma, db = b.pixels[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

}  // namespace

TEST(Synthgen, Deterministic) {
  SceneSpec spec;
  spec.seed = 7;
  const auto a = generate_corpus(spec, 1);
  const auto b = generate_corpus(spec, 1);
  EXPECT_EQ(a[0].pixels, b[0].pixels);
  EXPECT_EQ(a[0].landmarks, b[0].landmarks);
  // A prefix of a larger corpus is the smaller corpus.
  const auto c = generate_corpus(spec, 3);
  EXPECT_EQ(c[0].pixels, a[0].pixels);
}

TEST(Synthgen, LandmarkInvariants) {
  SceneSpec spec;
  const auto corpus = generate_corpus(spec, 100);
  for (const auto& img : corpus) {
    ASSERT_EQ(img.landmarks.size(), 10u);
    for (int c = 0; c < 10; ++c) {
      const auto& lm = img.landmarks[static_cast<std::size_t>(c)];
      EXPECT_EQ(lm.class_id, c);
      EXPECT_GT(lm.x, 0);
      EXPECT_GT(lm.y, 0);
      EXPECT_LT(lm.x, spec.image_size - 1);
      EXPECT_LT(lm.y, spec.image_size - 1);
    }
    for (float p : img.pixels.pixels) {
      ASSERT_GE(p, 0.0f);
      ASSERT_LE(p, 1.0f);
    }
  }
}

TEST(Synthgen, SubjectJitterIsSmall) {
  SceneSpec spec;
  spec.noise_level = 0.0;
  const auto corpus = generate_corpus(spec, 2);
  bool any_moved = false;
  for (int c = 0; c < spec.n_landmark_classes; ++c) {
    const auto& a = corpus[0].landmark(c);
    const auto& b = corpus[1].landmark(c);
    const double d = std::hypot(a.x - b.x, a.y - b.y);
    EXPECT_LT(d, 0.1 * spec.image_size);
    any_moved = any_moved || d > 0;
  }
  EXPECT_TRUE(any_moved);
}

TEST(Synthgen, LandmarkPatchesCorrelateWithinClass) {
  SceneSpec spec;
  const auto corpus = generate_corpus(spec, 12);
  const int k = spec.n_landmark_classes;
  for (int c = 0; c < k; ++c) {
    std::vector<double> mean_corr(static_cast<std::size_t>(k), 0.0);
    for (int o = 0; o < k; ++o) {
      int pairs = 0;
      for (std::size_t i = 0; i < corpus.size(); ++i)
        for (std::size_t j = 0; j < corpus.size(); ++j) {
          if (i == j) continue;
          const auto& li = corpus[i].landmark(c);
          const auto& lj = corpus[j].landmark(o);
          mean_corr[static_cast<std::size_t>(o)] +=
              correlation(render_patch(corpus[i].pixels, li.x, li.y, 96).image,
                          render_patch(corpus[j].pixels, lj.x, lj.y, 96).image);
          ++pairs;
        }
      mean_corr[static_cast<std::size_t>(o)] /= pairs;
    }
    for (int o = 0; o < k; ++o)
      if (o != c) EXPECT_GT(mean_corr[static_cast<std::size_t>(c)], mean_corr[static_cast<std::size_t>(o)]) << c << " vs " << o;
  }
}

TEST(Synthgen, SpecValidation) {
  SceneSpec s;
  s.image_size = 32;
  EXPECT_THROW(s.validate(), PreconditionError);
  s = SceneSpec{};
  s.image_size = 100;  // not divisible by 2^3
  EXPECT_THROW(s.validate(), PreconditionError);
  s = SceneSpec{};
  s.n_landmark_classes = 1;
  try {
    s.validate();
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_EQ(e.field(), "n_landmark_classes");
  }
  EXPECT_THROW(generate_corpus(SceneSpec{}, 0), PreconditionError);
}

TEST(RenderPatch, IdentityAndCentering) {
  const auto img = generate_corpus(SceneSpec{}, 1)[0];
  EXPECT_EQ(render_patch(img.pixels, 112, 112, 224).image, img.pixels);
  const auto& lm = img.landmark(3);
  const auto p = render_patch(img.pixels, lm.x, lm.y, 96);
  EXPECT_EQ(p.image.height, 96);
  EXPECT_EQ(p.image.at(48, 48), img.pixels.at(lm.y, lm.x));
  EXPECT_THROW(render_patch(img.pixels, 10, 10, 0), PreconditionError);
}

TEST(RenderPatch, CornerPaddingMatchesBruteForce) {
  Image img(224, 224);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) img.at(y, x) = static_cast<float>(x + y) / 448.0f;
  const auto p = render_patch(img, 0, 0, 96);
  EXPECT_EQ(p.padding.top, 48);
  EXPECT_EQ(p.padding.left, 48);
  EXPECT_EQ(p.padding.bottom, 0);
  EXPECT_EQ(p.padding.right, 0);
  EXPECT_EQ(p.padding.policy, "replicate");
  long outside = 0;
  for (int y = -48; y < 48; ++y)
    for (int x = -48; x < 48; ++x)
      if (x < 0 || y < 0) ++outside;
  EXPECT_EQ(p.padding.padded_pixels(96), outside);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x)
      EXPECT_EQ(p.image.at(y, x), img.at(std::max(0, y - 48), std::max(0, x - 48)));
}

TEST(Corpus, WriteLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "pw_corpus_roundtrip";
  std::filesystem::remove_all(dir);
  SceneSpec spec;
  spec.image_size = 64;
  const auto images = generate_corpus(spec, 3);
  write_corpus(dir, spec, images);
  const Corpus c = load_corpus(dir);
  ASSERT_EQ(c.images.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(c.images[i].landmarks, images[i].landmarks);
    EXPECT_EQ(c.images[i].subject_id, images[i].subject_id);
    EXPECT_EQ(c.images[i].variant, images[i].variant);
    EXPECT_EQ(c.images[i].pixels.height, 64);
  }
  std::filesystem::remove_all(dir);
}
