#include "mobyal/augment/augment.hpp"

#include <algorithm>
#include <cmath>

#include "mobyal/errors.hpp"

namespace mobyal::augment {

namespace {

constexpr float kLumaR = 0.299f;
constexpr float kLumaG = 0.587f;
constexpr float kLumaB = 0.114f;

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void clamp_all(Image& img) {
  for (float& v : img.values) v = std::clamp(v, 0.0f, 1.0f);
}

float luma(const Image& img, std::size_t i) {
  const std::size_t p = img.plane();
  return kLumaR * img.values[i] + kLumaG * img.values[p + i] + kLumaB * img.values[2 * p + i];
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.0f + (b - r) / d;
  } else {
    h = 4.0f + (r - g) / d;
  }
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float h6 = h * 6.0f;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const float f = h6 - std::floor(h6);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

}  // namespace

void validate(const AugmentPolicy& p) {
  auto prob = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("augment: ") + name + " must be in [0, 1]");
  };
  prob(p.flip_prob, "flip_prob");
  prob(p.jitter_prob, "jitter_prob");
  prob(p.grayscale_prob, "grayscale_prob");
  prob(p.blur_prob, "blur_prob");
  prob(p.solarize_prob, "solarize_prob");
  prob(p.solarize_threshold, "solarize_threshold");
  if (p.brightness < 0 || p.contrast < 0 || p.saturation < 0 || p.brightness > 1 || p.contrast > 1 ||
      p.saturation > 1) {
    throw ConfigError("augment: jitter strengths must be in [0, 1]");
  }
  if (p.hue < 0 || p.hue > 0.5) throw ConfigError("augment: hue must be in [0, 0.5]");
  if (!(p.blur_sigma_min > 0) || p.blur_sigma_max < p.blur_sigma_min) {
    throw ConfigError("augment: blur sigma range must satisfy 0 < min <= max");
  }
}

Image hflip(const Image& img) {
  Image out(img.channels, img.height, img.width);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    }
  }
  return out;
}

Image crop_padded(const Image& img, std::size_t pad, std::size_t top, std::size_t left) {
  if (top > 2 * pad || left > 2 * pad) throw ContractError("crop_padded: window outside the padded image");
  Image out(img.channels, img.height, img.width);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      const std::size_t sy = y + top;  // padded coordinate
      if (sy < pad || sy - pad >= img.height) continue;
      for (std::size_t x = 0; x < img.width; ++x) {
        const std::size_t sx = x + left;
        if (sx < pad || sx - pad >= img.width) continue;
        out.at(c, y, x) = img.at(c, sy - pad, sx - pad);
      }
    }
  }
  return out;
}

Image adjust_brightness(const Image& img, double factor) {
  Image out = img;
  for (float& v : out.values) v = clamp01(v * factor);
  return out;
}

Image adjust_contrast(const Image& img, double factor) {
  Image out = img;
  double mean = 0.0;
  if (img.channels == 3) {
    for (std::size_t i = 0; i < img.plane(); ++i) mean += luma(img, i);
  } else {
    for (float v : img.values) mean += v;
  }
  mean /= static_cast<double>(img.plane() * (img.channels == 3 ? 1 : img.channels));
  for (float& v : out.values) v = clamp01(factor * v + (1.0 - factor) * mean);
  return out;
}

Image adjust_saturation(const Image& img, double factor) {
  if (img.channels != 3) return img;
  Image out = img;
  const std::size_t p = img.plane();
  for (std::size_t i = 0; i < p; ++i) {
    const double gray = luma(img, i);
    for (std::size_t c = 0; c < 3; ++c) {
      out.values[c * p + i] = clamp01(factor * img.values[c * p + i] + (1.0 - factor) * gray);
    }
  }
  return out;
}

Image adjust_hue(const Image& img, double shift) {
  if (img.channels != 3) return img;
  Image out = img;
  const std::size_t p = img.plane();
  for (std::size_t i = 0; i < p; ++i) {
    float h, s, v;
    rgb_to_hsv(img.values[i], img.values[p + i], img.values[2 * p + i], h, s, v);
    h += static_cast<float>(shift);
    h -= std::floor(h);
    float r, g, b;
    hsv_to_rgb(h, s, v, r, g, b);
    out.values[i] = clamp01(r);
    out.values[p + i] = clamp01(g);
    out.values[2 * p + i] = clamp01(b);
  }
  return out;
}

Image to_grayscale(const Image& img) {
  if (img.channels != 3) return img;
  Image out = img;
  const std::size_t p = img.plane();
  for (std::size_t i = 0; i < p; ++i) {
    const float r = img.values[i], g = img.values[p + i], b = img.values[2 * p + i];
    // Already-gray pixels are left bit-identical.
    const float gray = (r == g && g == b) ? r : clamp01(luma(img, i));
    out.values[i] = out.values[p + i] = out.values[2 * p + i] = gray;
  }
  return out;
}

Image solarize(const Image& img, double threshold) {
  Image out = img;
  for (float& v : out.values) {
    if (v >= threshold) v = 1.0f - v;
  }
  return out;
}

std::array<double, 3> gaussian_taps(double sigma) {
  const double side = std::exp(-1.0 / (2.0 * sigma * sigma));
  const double total = 1.0 + 2.0 * side;
  return {side / total, 1.0 / total, side / total};
}

Image gaussian_blur(const Image& img, double sigma) {
  const auto taps = gaussian_taps(sigma);
  const std::size_t h = img.height, w = img.width;
  Image tmp(img.channels, h, w), out(img.channels, h, w);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t xl = x == 0 ? 0 : x - 1;
        const std::size_t xr = x + 1 == w ? x : x + 1;
        tmp.at(c, y, x) = static_cast<float>(taps[0] * img.at(c, y, xl) + taps[1] * img.at(c, y, x) +
                                             taps[2] * img.at(c, y, xr));
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t yu = y == 0 ? 0 : y - 1;
      const std::size_t yd = y + 1 == h ? y : y + 1;
      for (std::size_t x = 0; x < w; ++x) {
        out.at(c, y, x) =
            clamp01(taps[0] * tmp.at(c, yu, x) + taps[1] * tmp.at(c, y, x) + taps[2] * tmp.at(c, yd, x));
      }
    }
  }
  return out;
}

Image weak_augment(const Image& img, Rng& rng, const AugmentPolicy& policy) {
  const bool flip = rng.bernoulli(policy.flip_prob);
  const std::size_t span = 2 * policy.crop_padding + 1;
  const auto top = static_cast<std::size_t>(rng.uniform_index(span));
  const auto left = static_cast<std::size_t>(rng.uniform_index(span));
  Image out = flip ? hflip(img) : img;
  out = crop_padded(out, policy.crop_padding, top, left);
  clamp_all(out);
  return out;
}

Image strong_augment(const Image& img, Rng& rng, const AugmentPolicy& policy) {
  Image out = weak_augment(img, rng, policy);

  const bool do_brightness = rng.bernoulli(policy.jitter_prob);
  const double brightness = rng.uniform(1.0 - policy.brightness, 1.0 + policy.brightness);
  const bool do_contrast = rng.bernoulli(policy.jitter_prob);
  const double contrast = rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast);
  const bool do_saturation = rng.bernoulli(policy.jitter_prob);
  const double saturation = rng.uniform(1.0 - policy.saturation, 1.0 + policy.saturation);
  const bool do_hue = rng.bernoulli(policy.jitter_prob);
  const double hue = rng.uniform(-policy.hue, policy.hue);
  const bool do_gray = rng.bernoulli(policy.grayscale_prob);
  const bool do_blur = rng.bernoulli(policy.blur_prob);
  const double sigma = rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max);
  const bool do_solarize = rng.bernoulli(policy.solarize_prob);

  if (do_brightness) out = adjust_brightness(out, brightness);
  if (do_contrast) out = adjust_contrast(out, contrast);
  if (do_saturation) out = adjust_saturation(out, saturation);
  if (do_hue) out = adjust_hue(out, hue);
  if (do_gray) out = to_grayscale(out);
  if (do_blur) out = gaussian_blur(out, sigma);
  if (do_solarize) out = solarize(out, policy.solarize_threshold);
  clamp_all(out);
  return out;
}

Image contrast_view(const Image& img, Rng& rng, const AugmentPolicy& policy) {
  return policy.use_strong ? strong_augment(img, rng, policy) : weak_augment(img, rng, policy);
}

}  // namespace mobyal::augment
