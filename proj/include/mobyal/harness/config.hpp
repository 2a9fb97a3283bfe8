#pragma once

#include <string>

#include "mobyal/alloop/alloop.hpp"
#include "mobyal/harness/synthetic.hpp"

namespace mobyal::harness {

enum class DataSource { Synthetic, Idx };

struct IdxPaths {
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  bool operator==(const IdxPaths&) const = default;
};

// Everything one `run` needs. The key list, defaults and their origin are in
// docs/config.md. model.in_channels and model.num_classes are not keys: they
// follow the dataset.
struct ExperimentConfig {
  std::string output_dir = "runs/default";
  DataSource source = DataSource::Synthetic;
  SyntheticSpec synthetic{};
  IdxPaths idx{};
  alloop::ALConfig al{};
};

// The desk-scale protocol: 4-class synthetic 2400/800, initial 200, b = 100,
// N = 3, 5 seeds, 40 epochs, batch 64, queue 256, widths 16/32/32.
ExperimentConfig default_config();

// JSON text. Keys that are absent keep their default; unknown keys, wrong
// types and values that fail validation raise ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Every key, pretty-printed; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const ExperimentConfig& c);

// Reads or generates the dataset and fills model.in_channels/num_classes.
alloop::Dataset load_dataset(ExperimentConfig& c);

}  // namespace mobyal::harness
