#pragma once

#include <stdexcept>
#include <string>

namespace mobyal {

// Shapes that do not compose (matmul inner dims, channel counts, ...).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Train-mode batchnorm over a single sample.
class DegenerateBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NormalizationError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A caller broke a documented precondition (label out of range, tau <= 0, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LabelAccessError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mobyal
