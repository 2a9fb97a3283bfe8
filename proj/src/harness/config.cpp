#include "mobyal/harness/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mobyal/errors.hpp"
#include "mobyal/harness/idx.hpp"

namespace mobyal::harness {

using nlohmann::json;

namespace {

// Walks one JSON object, reading known keys and rejecting the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + join(k) + "'");
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("key '" + join(key) + "' has the wrong type");
    }
  }
  template <class T>
  void get_unsigned(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError("key '" + join(key) + "' must be a non-negative integer");
    out = v.get<T>();
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string join(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> names, const std::string& key) {
  for (const auto& [n, e] : names) {
    if (s == n) return e;
  }
  throw ConfigError("key '" + key + "' has unknown value '" + s + "'");
}

const char* mode_name(train::TrainMode m) { return m == train::TrainMode::Joint ? "joint" : "multi_stage"; }
const char* subset_name(train::SubsetMode m) { return m == train::SubsetMode::LowestLoss ? "lowest_loss" : "random"; }

void read_synthetic(const json& j, SyntheticSpec& s) {
  Section sec(j, "dataset.synthetic");
  sec.get_unsigned("classes", s.classes);
  sec.get_unsigned("train_per_class", s.train_per_class);
  sec.get_unsigned("test_per_class", s.test_per_class);
  sec.get_unsigned("channels", s.channels);
  sec.get_unsigned("height", s.height);
  sec.get_unsigned("width", s.width);
  sec.get_unsigned("seed", s.seed);
  sec.get("max_shift", s.max_shift);
  sec.get("noise", s.noise);
  sec.get("hue_jitter", s.hue_jitter);
  sec.get("hue_spread", s.hue_spread);
  sec.get("imbalance", s.imbalance);
  if (const json* sig = sec.child("signatures")) {
    if (!sig->is_array()) throw ConfigError("key 'dataset.synthetic.signatures' must be an array");
    s.signatures.clear();
    for (const auto& e : *sig) {
      ClassSignature c;
      Section ss(e, "dataset.synthetic.signatures[]");
      ss.get("orientation", c.orientation);
      ss.get("frequency", c.frequency);
      ss.get("hue", c.hue);
      s.signatures.push_back(c);
    }
  }
}

void read_augment(const json& j, augment::AugmentPolicy& a) {
  Section s(j, "augment");
  s.get("flip_prob", a.flip_prob);
  s.get_unsigned("crop_padding", a.crop_padding);
  s.get("jitter_prob", a.jitter_prob);
  s.get("brightness", a.brightness);
  s.get("contrast", a.contrast);
  s.get("saturation", a.saturation);
  s.get("hue", a.hue);
  s.get("grayscale_prob", a.grayscale_prob);
  s.get("blur_prob", a.blur_prob);
  s.get("blur_sigma_min", a.blur_sigma_min);
  s.get("blur_sigma_max", a.blur_sigma_max);
  s.get("solarize_prob", a.solarize_prob);
  s.get("solarize_threshold", a.solarize_threshold);
  s.get("use_strong", a.use_strong);
}

void read_train(const json& j, train::TrainConfig& t) {
  Section s(j, "train");
  std::string mode = mode_name(t.mode);
  s.get("mode", mode);
  t.mode = enum_from<train::TrainMode>(mode, {{"joint", train::TrainMode::Joint}, {"multi_stage", train::TrainMode::MultiStage}},
                     "train.mode");
  s.get("epochs", t.epochs);
  s.get_unsigned("batch_size", t.batch_size);
  s.get("learning_rate", t.lr.base_lr);
  s.get("lr_milestones", t.lr.milestones);
  s.get("lr_decay", t.lr.decay_factor);
  s.get("sgd_momentum", t.sgd_momentum);
  s.get("weight_decay", t.weight_decay);
  s.get_unsigned("queue_capacity", t.queue_capacity);
  s.get("ema_momentum_base", t.momentum_base);
  s.get("ema_momentum_end", t.momentum_end);
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.synthetic = SyntheticSpec{};
  auto& m = c.al.model;
  m.in_channels = c.synthetic.channels;
  m.num_classes = c.synthetic.classes;
  m.widths = {16, 32, 32};
  m.projection_dim = 32;
  auto& t = c.al.train;
  t.epochs = 40;
  t.batch_size = 64;
  t.queue_capacity = 256;
  t.lr.base_lr = 0.05;
  t.augment.crop_padding = 2;
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c = default_config();
  {
    Section root(j, "");
    root.get("output_dir", c.output_dir);
    if (const json* d = root.child("dataset")) {
      Section ds(*d, "dataset");
      std::string src = c.source == DataSource::Synthetic ? "synthetic" : "idx";
      ds.get("source", src);
      c.source = enum_from<DataSource>(src, {{"synthetic", DataSource::Synthetic}, {"idx", DataSource::Idx}}, "dataset.source");
      if (const json* s = ds.child("synthetic")) read_synthetic(*s, c.synthetic);
      if (const json* i = ds.child("idx")) {
        Section is(*i, "dataset.idx");
        is.get("train_images", c.idx.train_images);
        is.get("train_labels", c.idx.train_labels);
        is.get("test_images", c.idx.test_images);
        is.get("test_labels", c.idx.test_labels);
      }
    }
    if (const json* m = root.child("model")) {
      Section ms(*m, "model");
      ms.get("widths", c.al.model.widths);
      ms.get_unsigned("projection_dim", c.al.model.projection_dim);
      ms.get("use_predictor", c.al.model.use_predictor);
      ms.get("use_projector", c.al.model.use_projector);
    }
    if (const json* a = root.child("augment")) read_augment(*a, c.al.train.augment);
    if (const json* k = root.child("contrastive")) {
      Section ks(*k, "contrastive");
      ks.get("temperature", c.al.train.loss.temperature);
      ks.get("lambda_c", c.al.train.loss.lambda_c);
      ks.get("include_positive", c.al.train.loss.include_positive);
    }
    if (const json* t = root.child("train")) read_train(*t, c.al.train);
    if (const json* a = root.child("active_learning")) {
      Section as(*a, "active_learning");
      auto& al = c.al;
      as.get_unsigned("initial_labelled", al.initial_labelled);
      as.get_unsigned("budget", al.budget);
      as.get("cycles", al.cycles);
      std::string sel = alloop::to_string(al.selector);
      as.get("selector", sel);
      try {
        al.selector = alloop::selector_from_string(sel);
      } catch (const ConfigError&) {
        throw ConfigError("key 'active_learning.selector' has unknown value '" + sel + "'");
      }
      std::string sub = subset_name(al.subset_mode);
      as.get("unlabelled_subset_mode", sub);
      al.subset_mode = enum_from<train::SubsetMode>(sub, {{"lowest_loss", train::SubsetMode::LowestLoss},
                                       {"random", train::SubsetMode::Random}},
                                 "active_learning.unlabelled_subset_mode");
      if (const json* s = as.child("seeds")) {
        if (!s->is_array()) throw ConfigError("key 'active_learning.seeds' must be an array");
        al.seeds.clear();
        for (const auto& e : *s) {
          if (!e.is_number_unsigned()) throw ConfigError("key 'active_learning.seeds' must hold non-negative integers");
          al.seeds.push_back(e.get<std::uint64_t>());
        }
      }
      as.get("reinitialize", al.reinitialize);
      as.get_unsigned("eval_batch", al.eval_batch);
      as.get("record_seconds", al.record_seconds);
    }
  }
  c.al.model.in_channels = c.synthetic.channels;
  c.al.model.num_classes = c.synthetic.classes;
  if (c.source == DataSource::Synthetic) validate(c.synthetic);
  if (c.source == DataSource::Idx &&
      (c.idx.train_images.empty() || c.idx.train_labels.empty() || c.idx.test_images.empty() ||
       c.idx.test_labels.empty())) {
    throw ConfigError("dataset.source is idx but dataset.idx paths are incomplete");
  }
  try {
    model::validate(c.al.model);
    train::validate(c.al.train);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (c.al.seeds.empty()) throw ConfigError("active_learning.seeds is empty");
  if (c.al.cycles < 0) throw ConfigError("active_learning.cycles must be >= 0");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  const auto& s = c.synthetic;
  json sig = json::array();
  for (const auto& g : s.signatures) sig.push_back({{"orientation", g.orientation}, {"frequency", g.frequency}, {"hue", g.hue}});
  const auto& a = c.al.train.augment;
  const auto& t = c.al.train;
  const auto& al = c.al;
  json j = {
      {"output_dir", c.output_dir},
      {"dataset",
       {{"source", c.source == DataSource::Synthetic ? "synthetic" : "idx"},
        {"synthetic",
         {{"classes", s.classes},
          {"train_per_class", s.train_per_class},
          {"test_per_class", s.test_per_class},
          {"channels", s.channels},
          {"height", s.height},
          {"width", s.width},
          {"seed", s.seed},
          {"max_shift", s.max_shift},
          {"noise", s.noise},
          {"hue_jitter", s.hue_jitter},
          {"hue_spread", s.hue_spread},
          {"signatures", sig},
          {"imbalance", s.imbalance}}},
        {"idx",
         {{"train_images", c.idx.train_images},
          {"train_labels", c.idx.train_labels},
          {"test_images", c.idx.test_images},
          {"test_labels", c.idx.test_labels}}}}},
      {"model",
       {{"widths", al.model.widths},
        {"projection_dim", al.model.projection_dim},
        {"use_predictor", al.model.use_predictor},
        {"use_projector", al.model.use_projector}}},
      {"augment",
       {{"flip_prob", a.flip_prob},
        {"crop_padding", a.crop_padding},
        {"jitter_prob", a.jitter_prob},
        {"brightness", a.brightness},
        {"contrast", a.contrast},
        {"saturation", a.saturation},
        {"hue", a.hue},
        {"grayscale_prob", a.grayscale_prob},
        {"blur_prob", a.blur_prob},
        {"blur_sigma_min", a.blur_sigma_min},
        {"blur_sigma_max", a.blur_sigma_max},
        {"solarize_prob", a.solarize_prob},
        {"solarize_threshold", a.solarize_threshold},
        {"use_strong", a.use_strong}}},
      {"contrastive",
       {{"temperature", t.loss.temperature},
        {"lambda_c", t.loss.lambda_c},
        {"include_positive", t.loss.include_positive}}},
      {"train",
       {{"mode", mode_name(t.mode)},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.lr.base_lr},
        {"lr_milestones", t.lr.milestones},
        {"lr_decay", t.lr.decay_factor},
        {"sgd_momentum", t.sgd_momentum},
        {"weight_decay", t.weight_decay},
        {"queue_capacity", t.queue_capacity},
        {"ema_momentum_base", t.momentum_base},
        {"ema_momentum_end", t.momentum_end}}},
      {"active_learning",
       {{"initial_labelled", al.initial_labelled},
        {"budget", al.budget},
        {"cycles", al.cycles},
        {"selector", alloop::to_string(al.selector)},
        {"unlabelled_subset_mode", subset_name(al.subset_mode)},
        {"seeds", al.seeds},
        {"reinitialize", al.reinitialize},
        {"eval_batch", al.eval_batch},
        {"record_seconds", al.record_seconds}}},
  };
  return j.dump(2) + "\n";
}

alloop::Dataset load_dataset(ExperimentConfig& c) {
  alloop::Dataset d;
  if (c.source == DataSource::Synthetic) {
    d = generate_synthetic(c.synthetic);
  } else {
    d.train_images = images_from_idx(read_idx(c.idx.train_images));
    d.train_labels = labels_from_idx(read_idx(c.idx.train_labels));
    d.test_images = images_from_idx(read_idx(c.idx.test_images));
    d.test_labels = labels_from_idx(read_idx(c.idx.test_labels));
    if (d.train_images.size() != d.train_labels.size() || d.test_images.size() != d.test_labels.size()) {
      throw IdxError("idx: image count differs from label count");
    }
    int top = 0;
    for (int l : d.train_labels) top = std::max(top, l);
    for (int l : d.test_labels) top = std::max(top, l);
    d.num_classes = static_cast<std::size_t>(top) + 1;
  }
  if (!d.train_images.empty()) c.al.model.in_channels = d.train_images.front().channels;
  c.al.model.num_classes = d.num_classes;
  alloop::validate(d);
  return d;
}

}  // namespace mobyal::harness
