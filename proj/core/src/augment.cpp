#include "hbmcn/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hbmcn/model.hpp"

namespace hbmcn {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t derive_stream(std::initializer_list<uint64_t> parts) {
  uint64_t state = 0x5eed0fdeadbeef01ull;
  for (uint64_t p : parts) state = splitmix64(state ^ p);
  return state;
}

AugmentPlan sample_augment_plan(const Tensor<float>& image, std::mt19937_64& rng,
                                const AugmentConfig& cfg) {
  if (image.rank() != 3) throw std::invalid_argument("augment: image must be C x H x W");
  const int h = static_cast<int>(image.extent(1));
  const int w = static_cast<int>(image.extent(2));
  AugmentPlan plan;
  plan.crop_dy = cfg.crop_pad;
  plan.crop_dx = cfg.crop_pad;
  if (cfg.crop && cfg.crop_pad > 0) {
    std::uniform_int_distribution<int> off(0, 2 * cfg.crop_pad);
    plan.crop_dy = off(rng);
    plan.crop_dx = off(rng);
  }
  if (cfg.flip) {
    plan.flip = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng) < cfg.flip_prob;
  }
  if (cfg.erase &&
      std::uniform_real_distribution<float>(0.0f, 1.0f)(rng) < cfg.erase_prob) {
    const float total = static_cast<float>(h) * static_cast<float>(w);
    for (int attempt = 0; attempt < 100; ++attempt) {
      const float frac =
          std::uniform_real_distribution<float>(cfg.erase_area_lo, cfg.erase_area_hi)(rng);
      const float aspect =
          std::uniform_real_distribution<float>(cfg.erase_aspect_lo, cfg.erase_aspect_hi)(rng);
      const float area = frac * total;
      const int eh = static_cast<int>(std::lround(std::sqrt(area * aspect)));
      const int ew = static_cast<int>(std::lround(std::sqrt(area / aspect)));
      if (eh < 1 || ew < 1 || eh > h || ew > w) continue;
      const float realized = static_cast<float>(eh * ew) / total;
      if (realized < cfg.erase_area_lo || realized > cfg.erase_area_hi) continue;
      plan.erase = true;
      plan.rect.h = eh;
      plan.rect.w = ew;
      plan.rect.y = std::uniform_int_distribution<int>(0, h - eh)(rng);
      plan.rect.x = std::uniform_int_distribution<int>(0, w - ew)(rng);
      plan.fill_seed = rng();
      break;
    }
  }
  return plan;
}

Tensor<float> apply_augment(const Tensor<float>& image, const AugmentPlan& plan,
                            const AugmentConfig& cfg) {
  if (image.rank() != 3) throw std::invalid_argument("augment: image must be C x H x W");
  const int64_t c = image.extent(0);
  const int h = static_cast<int>(image.extent(1));
  const int w = static_cast<int>(image.extent(2));
  const int pad = cfg.crop_pad;

  Tensor<float> out(image.shape());
  // Crop of the zero-padded image: source pixel (y,x) of the output window is
  // padded (plan.crop_dy + y, plan.crop_dx + x), i.e. original minus pad.
  for (int64_t ch = 0; ch < c; ++ch) {
    const float* src = image.data() + ch * h * w;
    float* dst = out.data() + ch * h * w;
    for (int y = 0; y < h; ++y) {
      const int sy = y + plan.crop_dy - pad;
      for (int x = 0; x < w; ++x) {
        const int sx = x + plan.crop_dx - pad;
        dst[static_cast<int64_t>(y) * w + x] =
            (sy >= 0 && sy < h && sx >= 0 && sx < w) ? src[static_cast<int64_t>(sy) * w + sx]
                                                     : 0.0f;
      }
    }
  }
  if (plan.flip) out = flip_horizontal(out);
  if (plan.erase) {
    std::mt19937_64 fill_rng(plan.fill_seed);
    std::uniform_real_distribution<float> fill(cfg.fill_lo, cfg.fill_hi);
    // One random value per pixel location, shared across channels row-major,
    // then per channel: fill order fixed for determinism.
    for (int64_t ch = 0; ch < c; ++ch) {
      float* dst = out.data() + ch * h * w;
      for (int y = plan.rect.y; y < plan.rect.y + plan.rect.h; ++y) {
        for (int x = plan.rect.x; x < plan.rect.x + plan.rect.w; ++x) {
          dst[static_cast<int64_t>(y) * w + x] = fill(fill_rng);
        }
      }
    }
  }
  return out;
}

Tensor<float> augment(const Tensor<float>& image, std::mt19937_64& rng,
                      const AugmentConfig& cfg) {
  return apply_augment(image, sample_augment_plan(image, rng, cfg), cfg);
}

}  // namespace hbmcn
