#include "mobyal/harness/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <string>

#include "mobyal/errors.hpp"
#include "mobyal/rng.hpp"

namespace mobyal::harness {

namespace {

// HSV with full saturation and value.
std::array<double, 3> hue_rgb(double h) {
  const double x = h * 6.0;
  std::array<double, 3> rgb{};
  for (int i = 0; i < 3; ++i) {
    // Distance to the channel's peak on the hue circle.
    double d = std::fmod(std::abs(x - 2.0 * i) + 6.0, 6.0);
    d = std::min(d, 6.0 - d);
    rgb[i] = std::clamp(2.0 - d, 0.0, 1.0);
  }
  return rgb;
}

void make_split(const SyntheticSpec& spec, const std::vector<std::size_t>& counts, Rng& rng,
                std::vector<augment::Image>& images, std::vector<int>& labels) {
  const std::size_t plane = spec.height * spec.width;
  std::vector<std::pair<augment::Image, int>> items;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      const int span = 2 * spec.max_shift + 1;
      const int dx = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(span))) - spec.max_shift;
      const int dy = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(span))) - spec.max_shift;
      const double shift = spec.hue_jitter > 0.0 ? spec.hue_jitter * (2.0 * rng.uniform() - 1.0) : 0.0;
      auto img = render_signature(spec, c, dx, dy, shift);
      for (std::size_t j = 0; j < spec.channels * plane; ++j) {
        const double v = img.values[j] + spec.noise * (2.0 * rng.uniform() - 1.0);
        img.values[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      items.emplace_back(std::move(img), static_cast<int>(c));
    }
  }
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  for (auto i : order) {
    images.push_back(std::move(items[i].first));
    labels.push_back(items[i].second);
  }
}

}  // namespace

std::vector<ClassSignature> default_signatures(std::size_t classes, double hue_spread) {
  constexpr double freqs[] = {0.125, 0.25, 1.0 / 6.0};
  std::vector<ClassSignature> out;
  for (std::size_t c = 0; c < classes; ++c) {
    out.push_back({(c % 2) * std::numbers::pi / 2.0, freqs[(c / 2) % 3],
                   hue_spread * static_cast<double>(c) / static_cast<double>(classes)});
  }
  return out;
}

void validate(const SyntheticSpec& s) {
  if (s.classes < 2 || s.classes > 256) throw ConfigError("synthetic: classes must be in 2..256");
  if (s.channels != 1 && s.channels != 3) throw ConfigError("synthetic: channels must be 1 or 3");
  if (s.height < 4 || s.width < 4) throw ConfigError("synthetic: images must be at least 4x4");
  if (s.train_per_class == 0 || s.test_per_class == 0) throw ConfigError("synthetic: empty split");
  if (s.max_shift < 0) throw ConfigError("synthetic: max_shift must be >= 0");
  if (!(s.noise >= 0.0 && s.noise <= 1.0)) throw ConfigError("synthetic: noise must be in [0, 1]");
  if (!(s.hue_jitter >= 0.0 && s.hue_jitter <= 0.5)) throw ConfigError("synthetic: hue_jitter must be in [0, 0.5]");
  if (!(s.hue_spread > 0.0 && s.hue_spread <= 1.0)) throw ConfigError("synthetic: hue_spread must be in (0, 1]");
  const auto sig = s.signatures.empty() ? default_signatures(s.classes, s.hue_spread) : s.signatures;
  if (sig.size() != s.classes) throw ConfigError("synthetic: need one signature per class");
  for (std::size_t a = 0; a < sig.size(); ++a) {
    if (!(sig[a].frequency > 0.0) || !(sig[a].hue >= 0.0 && sig[a].hue < 1.0) || !std::isfinite(sig[a].orientation)) {
      throw ConfigError("synthetic: signature " + std::to_string(a) + " out of range");
    }
    for (std::size_t b = 0; b < a; ++b) {
      if (sig[a] == sig[b]) throw ConfigError("synthetic: class signatures must be pairwise distinct");
      // Without colour the hue is invisible.
      if (s.channels == 1 && sig[a].orientation == sig[b].orientation && sig[a].frequency == sig[b].frequency) {
        throw ConfigError("synthetic: 1-channel signatures must differ in orientation or frequency");
      }
    }
  }
  if (!s.imbalance.empty()) {
    if (s.imbalance.size() != s.classes) throw ConfigError("synthetic: imbalance needs one entry per class");
    for (double f : s.imbalance) {
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("synthetic: imbalance fractions must be in (0, 1]");
    }
  }
}

augment::Image render_signature(const SyntheticSpec& spec, std::size_t c, int dx, int dy, double hue_shift) {
  const auto sig =
      spec.signatures.empty() ? default_signatures(spec.classes, spec.hue_spread).at(c) : spec.signatures.at(c);
  const auto rgb = hue_rgb(sig.hue + hue_shift - std::floor(sig.hue + hue_shift));
  const double ct = std::cos(sig.orientation), st = std::sin(sig.orientation);
  augment::Image img(spec.channels, spec.height, spec.width);
  for (std::size_t y = 0; y < spec.height; ++y) {
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double u = (static_cast<double>(x) - dx) * ct + (static_cast<double>(y) - dy) * st;
      const double s = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * sig.frequency * u);
      for (std::size_t ch = 0; ch < spec.channels; ++ch) {
        const double tint = spec.channels == 3 ? rgb[ch] : 1.0;
        img.at(ch, y, x) = static_cast<float>(0.15 + 0.7 * s * tint);
      }
    }
  }
  return img;
}

alloop::Dataset generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  alloop::Dataset d;
  d.num_classes = spec.classes;
  std::vector<std::size_t> train_counts(spec.classes, spec.train_per_class);
  for (std::size_t c = 0; c < spec.imbalance.size(); ++c) {
    train_counts[c] = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(spec.imbalance[c] * static_cast<double>(spec.train_per_class))));
  }
  Rng train_rng(derive_seed(spec.seed, {0x7472}));
  Rng test_rng(derive_seed(spec.seed, {0x7465}));
  make_split(spec, train_counts, train_rng, d.train_images, d.train_labels);
  make_split(spec, std::vector<std::size_t>(spec.classes, spec.test_per_class), test_rng, d.test_images, d.test_labels);
  return d;
}

double knn_accuracy(const alloop::Dataset& data, std::size_t k) {
  alloop::validate(data);
  if (k == 0 || k > data.train_images.size()) throw ContractError("knn_accuracy: k outside 1..train size");
  std::size_t correct = 0;
  const auto n = data.test_images.size();
#pragma omp parallel for reduction(+ : correct) schedule(static)
  for (std::size_t t = 0; t < n; ++t) {
    const auto& q = data.test_images[t].values;
    std::vector<std::pair<double, std::size_t>> dist(data.train_images.size());
    for (std::size_t i = 0; i < dist.size(); ++i) {
      const auto& v = data.train_images[i].values;
      double s = 0.0;
      for (std::size_t j = 0; j < v.size(); ++j) {
        const double e = static_cast<double>(q[j]) - v[j];
        s += e * e;
      }
      dist[i] = {s, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::vector<std::size_t> votes(data.num_classes, 0);
    for (std::size_t i = 0; i < k; ++i) ++votes[static_cast<std::size_t>(data.train_labels[dist[i].second])];
    // Most votes; among tied classes the one whose first vote came earliest.
    std::size_t best_votes = 0;
    int best = -1;
    for (std::size_t i = 0; i < k; ++i) {
      const int l = data.train_labels[dist[i].second];
      if (votes[static_cast<std::size_t>(l)] > best_votes) {
        best_votes = votes[static_cast<std::size_t>(l)];
        best = l;
      }
    }
    if (best == data.test_labels[t]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace mobyal::harness
