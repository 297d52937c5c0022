#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hbmcn/augment.hpp"
#include "hbmcn/model.hpp"

using namespace hbmcn;

namespace {

Tensor<float> random_image(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Tensor<float> img(Shape{3, h, w});
  for (int64_t i = 0; i < img.numel(); ++i) img.data()[i] = dist(rng);
  return img;
}

}  // namespace

TEST_CASE("apply_augment: centered crop with no flip and no erase is the identity") {
  std::mt19937_64 rng(1);
  Tensor<float> img = random_image(rng, 32, 16);
  AugmentConfig cfg;
  AugmentPlan plan;
  plan.crop_dy = cfg.crop_pad;
  plan.crop_dx = cfg.crop_pad;
  plan.flip = false;
  plan.erase = false;
  Tensor<float> out = apply_augment(img, plan, cfg);
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(out.data()[i] == img.data()[i]);
}

TEST_CASE("apply_augment: flip twice returns the original") {
  std::mt19937_64 rng(2);
  Tensor<float> img = random_image(rng, 16, 12);
  Tensor<float> twice = flip_horizontal(flip_horizontal(img));
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(twice.data()[i] == img.data()[i]);

  AugmentConfig cfg;
  AugmentPlan plan;
  plan.crop_dy = cfg.crop_pad;
  plan.crop_dx = cfg.crop_pad;
  plan.flip = true;
  Tensor<float> f1 = apply_augment(img, plan, cfg);
  Tensor<float> f2 = apply_augment(f1, plan, cfg);
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(f2.data()[i] == img.data()[i]);
}

TEST_CASE("apply_augment: off-center crop shifts content and zero-fills the border") {
  Tensor<float> img = Tensor<float>::full({3, 8, 8}, 1.0f);
  AugmentConfig cfg;
  cfg.crop_pad = 2;
  AugmentPlan plan;
  plan.crop_dy = 0;  // shift content down/right by pad
  plan.crop_dx = 0;
  Tensor<float> out = apply_augment(img, plan, cfg);
  CHECK(out.data()[0] == 0.0f);                  // top-left now border fill
  CHECK(out.data()[2 * 8 + 2] == 1.0f);          // shifted content
}

TEST_CASE("sample_augment_plan: erase frequency 0.5 +/- 0.02 and areas inside [0.02, 0.4]") {
  std::mt19937_64 rng(42);
  Tensor<float> img = Tensor<float>::zeros({3, 128, 64});
  AugmentConfig cfg;
  const int trials = 10000;
  int erased = 0;
  for (int t = 0; t < trials; ++t) {
    const AugmentPlan plan = sample_augment_plan(img, rng, cfg);
    if (!plan.erase) continue;
    ++erased;
    const double frac = static_cast<double>(plan.rect.h * plan.rect.w) / (128.0 * 64.0);
    CHECK(frac >= 0.02);
    CHECK(frac <= 0.4);
    CHECK(plan.rect.y >= 0);
    CHECK(plan.rect.x >= 0);
    CHECK(plan.rect.y + plan.rect.h <= 128);
    CHECK(plan.rect.x + plan.rect.w <= 64);
    const double aspect = static_cast<double>(plan.rect.h) / plan.rect.w;
    CHECK(aspect >= 0.25);       // 0.3 nominal, rounding slack
    CHECK(aspect <= 3.6);        // 10/3 nominal
  }
  const double freq = static_cast<double>(erased) / trials;
  CHECK(freq >= 0.48);
  CHECK(freq <= 0.52);
}

TEST_CASE("sample_augment_plan: crop offsets stay within the padded window") {
  std::mt19937_64 rng(3);
  Tensor<float> img = Tensor<float>::zeros({3, 32, 16});
  AugmentConfig cfg;
  for (int t = 0; t < 500; ++t) {
    const AugmentPlan plan = sample_augment_plan(img, rng, cfg);
    CHECK(plan.crop_dy >= 0);
    CHECK(plan.crop_dy <= 2 * cfg.crop_pad);
    CHECK(plan.crop_dx >= 0);
    CHECK(plan.crop_dx <= 2 * cfg.crop_pad);
  }
}

TEST_CASE("augment: deterministic under an identical rng stream") {
  std::mt19937_64 rng_img(4);
  Tensor<float> img = random_image(rng_img, 64, 32);
  std::mt19937_64 a(777), b(777);
  Tensor<float> x = augment(img, a);
  Tensor<float> y = augment(img, b);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.data()[i] == y.data()[i]);
}

TEST_CASE("derive_stream: stable and sensitive to every part") {
  const uint64_t a = derive_stream({1, 2, 3});
  CHECK(a == derive_stream({1, 2, 3}));
  CHECK(a != derive_stream({1, 2, 4}));
  CHECK(a != derive_stream({2, 2, 3}));
  CHECK(derive_stream({0}) != derive_stream({0, 0}));
}

TEST_CASE("erased region is uniform noise within the configured fill range") {
  Tensor<float> img = Tensor<float>::zeros({3, 64, 32});
  AugmentConfig cfg;
  AugmentPlan plan;
  plan.crop_dy = cfg.crop_pad;
  plan.crop_dx = cfg.crop_pad;
  plan.erase = true;
  plan.rect = {10, 5, 16, 12};
  plan.fill_seed = 99;
  Tensor<float> out = apply_augment(img, plan, cfg);
  int nonzero = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = plan.rect.y; y < plan.rect.y + plan.rect.h; ++y) {
      for (int x = plan.rect.x; x < plan.rect.x + plan.rect.w; ++x) {
        const float v = out.data()[(c * 64 + y) * 32 + x];
        CHECK(v >= cfg.fill_lo);
        CHECK(v <= cfg.fill_hi);
        if (v != 0.0f) ++nonzero;
      }
    }
  }
  CHECK(nonzero > 0);
  // outside the rectangle nothing changed
  CHECK(out.data()[0] == 0.0f);
}
