#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mobyal/augment/augment.hpp"

namespace mobyal::harness {

// IDX container: 00 00 <type> <ndims>, ndims big-endian u32 sizes, payload.
// Only type 0x08 (unsigned byte) is supported.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t count() const;  // product of dims
  bool operator==(const IdxArray&) const = default;
};

// Throws IdxError on bad magic, unsupported type, truncated or oversized payload.
IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxArray& a);

IdxArray read_idx(const std::string& path);
void write_idx(const IdxArray& a, const std::string& path);

// N x H x W (1 channel) or N x 3 x H x W; bytes map to [0, 1] by /255.
std::vector<augment::Image> images_from_idx(const IdxArray& a);
// Pixels are rounded to the nearest of the 256 levels.
IdxArray images_to_idx(std::span<const augment::Image> images);

std::vector<int> labels_from_idx(const IdxArray& a);
IdxArray labels_to_idx(std::span<const int> labels);

}  // namespace mobyal::harness
