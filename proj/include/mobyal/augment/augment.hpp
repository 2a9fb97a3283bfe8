#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "mobyal/rng.hpp"

namespace mobyal::augment {

// Planar (channel-major) image with values in [0, 1]. 1 or 3 channels.
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), values(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return values[(c * height + y) * width + x]; }
  std::size_t plane() const { return height * width; }

  bool operator==(const Image&) const = default;
};

// Transform probabilities and magnitudes. Defaults follow the BYOL/MoCo-v2
// lineage: flip 0.5, 4-pixel padded crop, jitter 0.8 per dimension with
// strengths 0.4/0.4/0.4/0.1, grayscale 0.2, 3x3 blur 0.5 with sigma in
// [0.1, 2], solarize 0.2 at threshold 0.5.
struct AugmentPolicy {
  double flip_prob = 0.5;
  std::size_t crop_padding = 4;
  double jitter_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double solarize_prob = 0.2;
  double solarize_threshold = 0.5;
  // When false, the "strong" view is an independent weak view.
  bool use_strong = true;
};

void validate(const AugmentPolicy& policy);

// Primitive transforms. All return a new image with values in [0, 1].
Image hflip(const Image& img);
// Crop of the image zero-padded by `pad` on every side, window origin (top, left)
// in padded coordinates; (pad, pad) returns the original.
Image crop_padded(const Image& img, std::size_t pad, std::size_t top, std::size_t left);
Image adjust_brightness(const Image& img, double factor);
Image adjust_contrast(const Image& img, double factor);
Image adjust_saturation(const Image& img, double factor);
// shift is a fraction of the hue circle.
Image adjust_hue(const Image& img, double shift);
Image to_grayscale(const Image& img);
Image solarize(const Image& img, double threshold);
// Separable 3x3 Gaussian with replicated borders.
Image gaussian_blur(const Image& img, double sigma);
// Normalized 1-D taps {w(-1), w(0), w(1)}.
std::array<double, 3> gaussian_taps(double sigma);

// Draw order for weak_augment: flip coin, crop top, crop left.
Image weak_augment(const Image& img, Rng& rng, const AugmentPolicy& policy = {});

// Draw order for strong_augment: the weak draws, then for each of
// brightness, contrast, saturation, hue an apply coin and a magnitude, then
// grayscale coin, blur coin and sigma, solarize coin. Every draw is consumed
// whether or not the transform applies, so the stream position after a call
// is fixed.
Image strong_augment(const Image& img, Rng& rng, const AugmentPolicy& policy = {});

// The second view used for contrastive pairs: strong_augment, or a fresh
// weak_augment when policy.use_strong is off.
Image contrast_view(const Image& img, Rng& rng, const AugmentPolicy& policy = {});

}  // namespace mobyal::augment
