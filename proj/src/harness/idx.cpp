#include "mobyal/harness/idx.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "mobyal/errors.hpp"

namespace mobyal::harness {

namespace {

constexpr std::uint8_t kUnsignedByte = 0x08;

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

std::size_t IdxArray::count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw IdxError("idx: truncated header");
  if (bytes[0] != 0 || bytes[1] != 0) throw IdxError("idx: bad magic");
  if (bytes[2] != kUnsignedByte) throw IdxError("idx: unsupported type code " + std::to_string(bytes[2]));
  const std::size_t ndims = bytes[3];
  if (ndims == 0) throw IdxError("idx: bad magic (zero dimensions)");
  if (bytes.size() < 4 + 4 * ndims) throw IdxError("idx: truncated header");
  IdxArray a;
  // Guard the product against overflow before trusting it.
  unsigned __int128 total = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    a.dims.push_back(read_be32(bytes.data() + 4 + 4 * i));
    total *= a.dims.back();
    if (total > bytes.size()) break;
  }
  const std::size_t header = 4 + 4 * ndims;
  if (total > bytes.size() - header) {
    throw IdxError("idx: truncated payload, header promises more bytes than the file holds");
  }
  if (total < bytes.size() - header) throw IdxError("idx: trailing bytes after payload");
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return a;
}

std::vector<std::uint8_t> serialize_idx(const IdxArray& a) {
  if (a.dims.empty() || a.dims.size() > 255) throw IdxError("idx: need 1..255 dimensions");
  if (a.count() != a.data.size()) throw IdxError("idx: payload does not match dims");
  std::vector<std::uint8_t> out{0, 0, kUnsignedByte, static_cast<std::uint8_t>(a.dims.size())};
  for (auto d : a.dims) put_be32(out, d);
  out.insert(out.end(), a.data.begin(), a.data.end());
  return out;
}

IdxArray read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("idx: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_idx(bytes);
  } catch (const IdxError& e) {
    throw IdxError(std::string(e.what()) + " (" + path + ")");
  }
}

void write_idx(const IdxArray& a, const std::string& path) {
  const auto bytes = serialize_idx(a);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxError("idx: cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IdxError("idx: write failed for " + path);
}

std::vector<augment::Image> images_from_idx(const IdxArray& a) {
  std::size_t c = 0, h = 0, w = 0;
  if (a.dims.size() == 3) {
    c = 1, h = a.dims[1], w = a.dims[2];
  } else if (a.dims.size() == 4 && a.dims[1] == 3) {
    c = 3, h = a.dims[2], w = a.dims[3];
  } else {
    throw IdxError("idx: images must be N x H x W or N x 3 x H x W");
  }
  const std::size_t n = a.dims[0], size = c * h * w;
  std::vector<augment::Image> out(n, augment::Image(c, h, w));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < size; ++j) out[i].values[j] = static_cast<float>(a.data[i * size + j]) / 255.0f;
  }
  return out;
}

IdxArray images_to_idx(std::span<const augment::Image> images) {
  if (images.empty()) throw IdxError("idx: no images");
  const auto& f = images.front();
  IdxArray a;
  a.dims.push_back(static_cast<std::uint32_t>(images.size()));
  if (f.channels == 3) a.dims.push_back(3);
  else if (f.channels != 1) throw IdxError("idx: images need 1 or 3 channels");
  a.dims.push_back(static_cast<std::uint32_t>(f.height));
  a.dims.push_back(static_cast<std::uint32_t>(f.width));
  a.data.reserve(a.count());
  for (const auto& img : images) {
    if (img.channels != f.channels || img.height != f.height || img.width != f.width) {
      throw IdxError("idx: images differ in shape");
    }
    for (float v : img.values) {
      const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
      a.data.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
    }
  }
  return a;
}

std::vector<int> labels_from_idx(const IdxArray& a) {
  if (a.dims.size() != 1) throw IdxError("idx: labels must be 1-dimensional");
  return {a.data.begin(), a.data.end()};
}

IdxArray labels_to_idx(std::span<const int> labels) {
  IdxArray a;
  a.dims = {static_cast<std::uint32_t>(labels.size())};
  for (int l : labels) {
    if (l < 0 || l > 255) throw IdxError("idx: label outside 0..255");
    a.data.push_back(static_cast<std::uint8_t>(l));
  }
  return a;
}

}  // namespace mobyal::harness
