#include "mobyal/model/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "mobyal/errors.hpp"
#include "mobyal/rng.hpp"

namespace mobyal::model {

using numcore::batchnorm;
using numcore::conv2d;
using numcore::global_avg_pool;
using numcore::l2_normalize;
using numcore::linear;
using numcore::relu;

void validate(const ModelConfig& c) {
  if (c.in_channels != 1 && c.in_channels != 3) throw ConfigError("model: in_channels must be 1 or 3");
  if (c.num_classes < 2) throw ConfigError("model: num_classes must be at least 2");
  for (std::size_t w : c.widths) {
    if (w == 0) throw ConfigError("model: widths must be positive");
  }
  if (c.projection_dim == 0) throw ConfigError("model: projection_dim must be positive");
}

namespace {

template <class T>
Tensor<T> he_normal(Rng& rng, Shape shape, std::size_t fan_in, double gain = 2.0) {
  Tensor<T> t(std::move(shape), T{0}, true);
  const double sd = std::sqrt(gain / static_cast<double>(fan_in));
  for (T& v : t.data()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

template <class T>
ConvBlock<T> make_conv(Rng& rng, std::size_t in, std::size_t out, std::size_t stride) {
  ConvBlock<T> b;
  b.weight = he_normal<T>(rng, {out, in, 3, 3}, in * 9);
  b.gamma = Tensor<T>({out}, T{1}, true);
  b.beta = Tensor<T>({out}, T{0}, true);
  b.stats = BatchNormStats<T>(out);
  b.stride = stride;
  return b;
}

template <class T>
Dense<T> make_dense(Rng& rng, std::size_t in, std::size_t out, bool with_bn, bool with_bias, double gain = 2.0) {
  Dense<T> d;
  d.weight = he_normal<T>(rng, {out, in}, in, gain);
  d.has_bn = with_bn;
  if (with_bias) d.bias = Tensor<T>({out}, T{0}, true);
  if (with_bn) {
    d.gamma = Tensor<T>({out}, T{1}, true);
    d.beta = Tensor<T>({out}, T{0}, true);
    d.stats = BatchNormStats<T>(out);
  }
  return d;
}

template <class T>
Tensor<T> copy_of(const Tensor<T>& t, bool requires_grad) {
  if (!t.defined()) return t;
  auto c = t.clone();
  c.set_requires_grad(requires_grad);
  return c;
}

template <class T>
ConvBlock<T> copy_block(const ConvBlock<T>& b, bool requires_grad) {
  return {copy_of(b.weight, requires_grad), copy_of(b.gamma, requires_grad), copy_of(b.beta, requires_grad),
          b.stats, b.stride};
}

template <class T>
Encoder<T> copy_encoder(const Encoder<T>& e, bool requires_grad) {
  Encoder<T> out;
  for (const auto& b : e.blocks) out.blocks.push_back(copy_block(b, requires_grad));
  return out;
}

template <class T>
Dense<T> copy_dense(const Dense<T>& d, bool requires_grad) {
  Dense<T> out = d;
  out.weight = copy_of(d.weight, requires_grad);
  out.bias = copy_of(d.bias, requires_grad);
  out.gamma = copy_of(d.gamma, requires_grad);
  out.beta = copy_of(d.beta, requires_grad);
  return out;
}

template <class T>
Tensor<T> encoder_forward(Tape<T>* tape, Encoder<T>& enc, const Tensor<T>& x, BnMode mode, bool update_running) {
  Tensor<T> h = x;
  for (auto& b : enc.blocks) {
    h = conv2d(tape, h, b.weight, b.stride);
    h = batchnorm(tape, h, b.gamma, b.beta, b.stats, mode, update_running);
    h = relu(tape, h);
  }
  return global_avg_pool(tape, h);
}

template <class T>
Tensor<T> dense_forward(Tape<T>* tape, Dense<T>& d, const Tensor<T>& x, BnMode mode, bool update_running) {
  const Tensor<T> bias = d.bias.defined() ? d.bias : Tensor<T>({d.weight.dim(0)});
  auto h = linear(tape, x, d.weight, bias);
  if (d.has_bn) {
    h = batchnorm(tape, h, d.gamma, d.beta, d.stats, mode, update_running);
    h = relu(tape, h);
  }
  return h;
}

void check_input(const ModelConfig& c, const Shape& s) {
  if (s.size() != 4 || s[1] != c.in_channels) {
    throw DimensionError("model input must be [N x " + std::to_string(c.in_channels) + " x H x W], got " +
                         numcore::shape_string(s));
  }
}

template <class T>
void add_dense_entries(std::vector<StateEntry<T>>& out, const std::string& prefix, Dense<T>& d) {
  if (!d.defined()) return;
  out.push_back({prefix + ".weight", d.weight.shape(), d.weight.data()});
  if (d.bias.defined()) out.push_back({prefix + ".bias", d.bias.shape(), d.bias.data()});
  if (d.has_bn) {
    const Shape s{d.gamma.numel()};
    out.push_back({prefix + ".gamma", s, d.gamma.data()});
    out.push_back({prefix + ".beta", s, d.beta.data()});
    out.push_back({prefix + ".running_mean", s, std::span<T>(d.stats.running_mean)});
    out.push_back({prefix + ".running_var", s, std::span<T>(d.stats.running_var)});
  }
}

template <class T>
void add_encoder_entries(std::vector<StateEntry<T>>& out, const std::string& prefix, Encoder<T>& e) {
  for (std::size_t i = 0; i < e.blocks.size(); ++i) {
    auto& b = e.blocks[i];
    const std::string p = prefix + "." + std::to_string(i);
    const Shape s{b.gamma.numel()};
    out.push_back({p + ".weight", b.weight.shape(), b.weight.data()});
    out.push_back({p + ".gamma", s, b.gamma.data()});
    out.push_back({p + ".beta", s, b.beta.data()});
    out.push_back({p + ".running_mean", s, std::span<T>(b.stats.running_mean)});
    out.push_back({p + ".running_var", s, std::span<T>(b.stats.running_var)});
  }
}

template <class T>
void push_dense_params(std::vector<Tensor<T>>& out, Dense<T>& d) {
  if (!d.defined()) return;
  out.push_back(d.weight);
  if (d.bias.defined()) out.push_back(d.bias);
  if (d.has_bn) {
    out.push_back(d.gamma);
    out.push_back(d.beta);
  }
}

template <class T>
void push_encoder_params(std::vector<Tensor<T>>& out, Encoder<T>& e) {
  for (auto& b : e.blocks) {
    out.push_back(b.weight);
    out.push_back(b.gamma);
    out.push_back(b.beta);
  }
}

}  // namespace

template <class T>
DualModel<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  Rng rng(seed);
  DualModel<T> m;
  m.config = config;
  const auto& w = config.widths;
  m.query_encoder.blocks.push_back(make_conv<T>(rng, config.in_channels, w[0], 1));
  m.query_encoder.blocks.push_back(make_conv<T>(rng, w[0], w[1], 2));
  m.query_encoder.blocks.push_back(make_conv<T>(rng, w[1], w[2], 1));
  const std::size_t df = config.feature_dim();
  const std::size_t dp = config.projection_dim;
  if (config.use_projector) {
    m.query_projector = make_dense<T>(rng, df, dp, true, false);
  } else if (df != dp) {
    m.query_projector = make_dense<T>(rng, df, dp, false, false, 1.0);
  }
  if (config.use_predictor) m.predictor = make_dense<T>(rng, dp, dp, true, false);
  m.classifier = make_dense<T>(rng, df, config.num_classes, false, true, 1.0);
  m.key_encoder = copy_encoder(m.query_encoder, false);
  if (m.query_projector.defined()) m.key_projector = copy_dense(m.query_projector, false);
  return m;
}

template <class T>
DualModel<T> clone_model(const DualModel<T>& src) {
  DualModel<T> m;
  m.config = src.config;
  m.query_encoder = copy_encoder(src.query_encoder, true);
  m.query_projector = copy_dense(src.query_projector, true);
  m.predictor = copy_dense(src.predictor, true);
  m.classifier = copy_dense(src.classifier, true);
  m.key_encoder = copy_encoder(src.key_encoder, false);
  m.key_projector = copy_dense(src.key_projector, false);
  return m;
}

template <class T>
Tensor<T> images_to_tensor(std::span<const augment::Image> images) {
  if (images.empty()) throw DimensionError("images_to_tensor: empty batch");
  const auto& first = images.front();
  const std::size_t per = first.values.size();
  Tensor<T> out({images.size(), first.channels, first.height, first.width});
  auto data = out.data();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    if (img.channels != first.channels || img.height != first.height || img.width != first.width) {
      throw DimensionError("images_to_tensor: images differ in shape");
    }
    for (std::size_t j = 0; j < per; ++j) data[i * per + j] = static_cast<T>(img.values[j]);
  }
  return out;
}

template <class T>
Tensor<T> forward_features(Tape<T>* tape, DualModel<T>& model, const Tensor<T>& x, BnMode mode) {
  check_input(model.config, x.shape());
  return encoder_forward(tape, model.query_encoder, x, mode, mode == BnMode::Train);
}

template <class T>
Tensor<T> query_embedding_from_features(Tape<T>* tape, DualModel<T>& model, const Tensor<T>& features,
                                        BnMode mode) {
  const bool update = mode == BnMode::Train;
  Tensor<T> h = features;
  if (model.query_projector.defined()) h = dense_forward(tape, model.query_projector, h, mode, update);
  if (model.predictor.defined()) h = dense_forward(tape, model.predictor, h, mode, update);
  return l2_normalize(tape, h);
}

template <class T>
Tensor<T> forward_query_embedding(Tape<T>* tape, DualModel<T>& model, const Tensor<T>& x, BnMode mode) {
  return query_embedding_from_features(tape, model, forward_features(tape, model, x, mode), mode);
}

template <class T>
Tensor<T> forward_key_embedding(DualModel<T>& model, const Tensor<T>& x, BnMode mode) {
  check_input(model.config, x.shape());
  auto h = encoder_forward<T>(nullptr, model.key_encoder, x, mode, false);
  if (model.key_projector.defined()) h = dense_forward<T>(nullptr, model.key_projector, h, mode, false);
  return l2_normalize<T>(nullptr, h);
}

template <class T>
Tensor<T> classify(Tape<T>* tape, DualModel<T>& model, const Tensor<T>& features) {
  if (features.rank() != 2 || features.dim(1) != model.config.feature_dim()) {
    throw DimensionError("classify expects [N x " + std::to_string(model.config.feature_dim()) + "], got " +
                         numcore::shape_string(features.shape()));
  }
  return linear(tape, features, model.classifier.weight, model.classifier.bias);
}

template <class T>
void ema_update(DualModel<T>& model, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ContractError("ema_update: momentum must be in [0, 1]");
  if (m == 1.0) return;
  auto all = state_entries(model);
  // Query entries precede key entries; pair each key entry with the query
  // entry of the same suffix.
  std::vector<StateEntry<T>*> query;
  for (auto& e : all) {
    if (e.name.starts_with("query.encoder") || e.name.starts_with("query.projector")) query.push_back(&e);
  }
  std::size_t qi = 0;
  for (auto& e : all) {
    if (!e.name.starts_with("key.")) continue;
    auto& q = *query.at(qi++);
    if (q.name.substr(6) != e.name.substr(4) || q.values.size() != e.values.size()) {
      throw ContractError("ema_update: unpaired parameter " + e.name);
    }
    if (m == 0.0) {
      std::copy(q.values.begin(), q.values.end(), e.values.begin());
    } else {
      for (std::size_t i = 0; i < e.values.size(); ++i) {
        e.values[i] = static_cast<T>(m * static_cast<double>(e.values[i]) +
                                     (1.0 - m) * static_cast<double>(q.values[i]));
      }
    }
  }
}

double momentum_at(long step, long total_steps, double base, double end) {
  if (total_steps < 1 || step < 0 || step > total_steps) {
    throw ContractError("momentum_at: need 0 <= step <= total_steps and total_steps >= 1");
  }
  return base + (end - base) * (static_cast<double>(step) / static_cast<double>(total_steps));
}

template <class T>
std::vector<Tensor<T>> query_parameters(DualModel<T>& model, bool with_classifier) {
  std::vector<Tensor<T>> out;
  push_encoder_params(out, model.query_encoder);
  push_dense_params(out, model.query_projector);
  push_dense_params(out, model.predictor);
  if (with_classifier) push_dense_params(out, model.classifier);
  return out;
}

template <class T>
std::vector<Tensor<T>> encoder_classifier_parameters(DualModel<T>& model) {
  std::vector<Tensor<T>> out;
  push_encoder_params(out, model.query_encoder);
  push_dense_params(out, model.classifier);
  return out;
}

template <class T>
std::vector<Tensor<T>> key_parameters(DualModel<T>& model) {
  std::vector<Tensor<T>> out;
  push_encoder_params(out, model.key_encoder);
  push_dense_params(out, model.key_projector);
  return out;
}

template <class T>
std::vector<StateEntry<T>> state_entries(DualModel<T>& model) {
  std::vector<StateEntry<T>> out;
  add_encoder_entries(out, "query.encoder", model.query_encoder);
  add_dense_entries(out, "query.projector", model.query_projector);
  add_dense_entries(out, "query.predictor", model.predictor);
  add_dense_entries(out, "query.classifier", model.classifier);
  add_encoder_entries(out, "key.encoder", model.key_encoder);
  add_dense_entries(out, "key.projector", model.key_projector);
  return out;
}

namespace {

constexpr char kMagic[8] = {'M', 'O', 'B', 'Y', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint32_t narrow(std::size_t v) {
  if (v > 0xffffffffULL) throw CheckpointError("checkpoint field exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_checkpoint(const std::string& path, DualModel<float>& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  const auto& c = model.config;
  os.write(kMagic, 8);
  put_u32(os, kVersion);
  for (std::size_t v : {c.in_channels, c.num_classes, c.widths[0], c.widths[1], c.widths[2], c.projection_dim,
                        std::size_t{c.use_predictor}, std::size_t{c.use_projector}}) {
    put_u32(os, narrow(v));
  }
  auto entries = state_entries(model);
  put_u32(os, narrow(entries.size()));
  for (const auto& e : entries) {
    put_u32(os, narrow(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, narrow(e.shape.size()));
    for (std::size_t d : e.shape) put_u32(os, narrow(d));
    for (float v : e.values) put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw CheckpointError("write failed: " + path);
}

DualModel<float> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError("bad checkpoint magic");
  if (const auto v = get_u32(is); v != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
  }
  ModelConfig c;
  c.in_channels = get_u32(is);
  c.num_classes = get_u32(is);
  for (auto& w : c.widths) w = get_u32(is);
  c.projection_dim = get_u32(is);
  c.use_predictor = get_u32(is) != 0;
  c.use_projector = get_u32(is) != 0;
  DualModel<float> model;
  try {
    model = init_model<float>(c, 0);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint architecture invalid: ") + e.what());
  }
  auto entries = state_entries(model);
  if (get_u32(is) != entries.size()) throw CheckpointError("checkpoint entry count does not match architecture");
  for (auto& e : entries) {
    const auto len = get_u32(is);
    if (len > 4096) throw CheckpointError("checkpoint name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError("checkpoint truncated");
    if (name != e.name) throw CheckpointError("checkpoint entry " + name + " where " + e.name + " expected");
    Shape shape(get_u32(is));
    for (auto& d : shape) d = get_u32(is);
    if (shape != e.shape) throw CheckpointError("checkpoint entry " + name + " has wrong shape");
    for (float& v : e.values) v = std::bit_cast<float>(get_u32(is));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in checkpoint");
  return model;
}

#define MOBYAL_INSTANTIATE(T)                                                                                   \
  template DualModel<T> init_model<T>(const ModelConfig&, std::uint64_t);                                      \
  template DualModel<T> clone_model<T>(const DualModel<T>&);                                                   \
  template Tensor<T> images_to_tensor<T>(std::span<const augment::Image>);                                     \
  template Tensor<T> forward_features<T>(Tape<T>*, DualModel<T>&, const Tensor<T>&, BnMode);                   \
  template Tensor<T> query_embedding_from_features<T>(Tape<T>*, DualModel<T>&, const Tensor<T>&, BnMode);      \
  template Tensor<T> forward_query_embedding<T>(Tape<T>*, DualModel<T>&, const Tensor<T>&, BnMode);            \
  template Tensor<T> forward_key_embedding<T>(DualModel<T>&, const Tensor<T>&, BnMode);                        \
  template Tensor<T> classify<T>(Tape<T>*, DualModel<T>&, const Tensor<T>&);                                   \
  template void ema_update<T>(DualModel<T>&, double);                                                          \
  template std::vector<Tensor<T>> query_parameters<T>(DualModel<T>&, bool);                                    \
  template std::vector<Tensor<T>> encoder_classifier_parameters<T>(DualModel<T>&);                             \
  template std::vector<Tensor<T>> key_parameters<T>(DualModel<T>&);                                            \
  template std::vector<StateEntry<T>> state_entries<T>(DualModel<T>&);

MOBYAL_INSTANTIATE(float)
MOBYAL_INSTANTIATE(double)

}  // namespace mobyal::model
