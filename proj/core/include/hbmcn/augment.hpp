#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "hbmcn/tensor.hpp"

namespace hbmcn {

/// Deterministic stream derivation so per-sample augmentation depends only on
/// (seed, epoch, sample index), never on scheduling.
uint64_t derive_stream(std::initializer_list<uint64_t> parts);

struct AugmentConfig {
  bool crop = true;
  bool flip = true;
  bool erase = true;
  int crop_pad = 10;          // zero-fill border before re-cropping
  float flip_prob = 0.5f;
  float erase_prob = 0.5f;
  float erase_area_lo = 0.02f;
  float erase_area_hi = 0.4f;
  float erase_aspect_lo = 0.3f;
  float erase_aspect_hi = 10.0f / 3.0f;
  // Erased pixels get uniform noise over the (normalized) pixel value range.
  float fill_lo = -1.0f;
  float fill_hi = 1.0f;
};

struct EraseRect {
  int y = 0, x = 0, h = 0, w = 0;
};

/// One sampled realization of the pipeline. crop_dy/crop_dx are the crop
/// window offsets in the padded image; (pad, pad) reproduces the original.
struct AugmentPlan {
  int crop_dy = 0;
  int crop_dx = 0;
  bool flip = false;
  bool erase = false;
  EraseRect rect;
  uint64_t fill_seed = 0;
};

AugmentPlan sample_augment_plan(const Tensor<float>& image, std::mt19937_64& rng,
                                const AugmentConfig& cfg = {});
Tensor<float> apply_augment(const Tensor<float>& image, const AugmentPlan& plan,
                            const AugmentConfig& cfg = {});

/// Pad-and-crop, horizontal flip, random erasing, in that order.
Tensor<float> augment(const Tensor<float>& image, std::mt19937_64& rng,
                      const AugmentConfig& cfg = {});

}  // namespace hbmcn
