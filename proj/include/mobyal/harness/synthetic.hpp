#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mobyal/alloop/alloop.hpp"

namespace mobyal::harness {

// Oriented sinusoidal stripes, one signature per class.
struct ClassSignature {
  double orientation = 0.0;  // radians; 0 = vertical stripes
  double frequency = 0.125;  // cycles per pixel
  double hue = 0.0;          // [0, 1)
  bool operator==(const ClassSignature&) const = default;
};

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t train_per_class = 600;
  std::size_t test_per_class = 200;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::uint64_t seed = 0;
  int max_shift = 3;       // translation drawn uniformly from [-max_shift, max_shift] per axis
  double noise = 0.7;      // uniform noise in [-noise, noise], then clamped to [0, 1]
  // Per-image hue offset drawn uniformly from [-hue_jitter, hue_jitter].
  double hue_jitter = 0.2;
  // Hue range the default signatures spread over: class c gets
  // hue_spread * c / classes.
  double hue_spread = 0.2;
  // Empty means default_signatures(classes, hue_spread).
  std::vector<ClassSignature> signatures;
  // Per-class fraction of train_per_class kept in the train split (rounded);
  // empty means balanced. The test split stays balanced.
  std::vector<double> imbalance;
  bool operator==(const SyntheticSpec&) const = default;
};

// Orientation alternates 0 / pi/2 (both survive a horizontal flip),
// frequency cycles 1/8, 1/4, 1/6, hue is hue_spread * c / classes.
std::vector<ClassSignature> default_signatures(std::size_t classes, double hue_spread = 1.0);

// Throws ConfigError.
void validate(const SyntheticSpec& spec);

// Noise-free pattern of class c translated by (dx, dy), hue moved by hue_shift.
augment::Image render_signature(const SyntheticSpec& spec, std::size_t c, int dx, int dy, double hue_shift = 0.0);

// Each split is shuffled, so ids are not grouped by class.
alloop::Dataset generate_synthetic(const SyntheticSpec& spec);

// Majority vote of the k nearest training images by squared pixel distance.
// A tied vote goes to the class of the nearer neighbour.
double knn_accuracy(const alloop::Dataset& data, std::size_t k);

}  // namespace mobyal::harness
