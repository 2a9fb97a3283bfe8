// mobyal: command-line front end. Exit codes: 0 ok, 1 config or runtime
// failure, 2 usage error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "mobyal/alloop/alloop.hpp"
#include "mobyal/errors.hpp"
#include "mobyal/harness/config.hpp"
#include "mobyal/harness/gradsuite.hpp"
#include "mobyal/harness/idx.hpp"
#include "mobyal/harness/metrics_csv.hpp"

using namespace mobyal;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

harness::ExperimentConfig load(const Globals& g) {
  auto c = g.config.empty() ? harness::default_config() : harness::load_config(g.config);
  if (!g.out.empty()) c.output_dir = g.out;
  return c;
}

fs::path out_dir(const harness::ExperimentConfig& c) {
  fs::path p(c.output_dir);
  fs::create_directories(p);
  return p;
}

void write_ids(const fs::path& path, std::span<const std::uint64_t> ids) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (auto id : ids) os << id << '\n';
}

std::vector<std::uint64_t> read_ids(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::vector<std::uint64_t> ids;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoull(line, &used);
    if (used != line.size()) throw std::runtime_error("bad id line '" + line + "' in " + path);
    ids.push_back(v);
  }
  return ids;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

model::DualModel<float> load_model(const std::string& path, const harness::ExperimentConfig& c) {
  auto m = model::read_checkpoint(path);
  if (m.config.in_channels != c.al.model.in_channels || m.config.num_classes != c.al.model.num_classes) {
    throw ConfigError("checkpoint " + path + " does not match the dataset's channels or classes");
  }
  return m;
}

int cmd_gen_data(const Globals& g) {
  auto c = load(g);
  if (g.seed) c.synthetic.seed = *g.seed;
  const auto d = harness::generate_synthetic(c.synthetic);
  const auto dir = out_dir(c);
  harness::write_idx(harness::images_to_idx(d.train_images), (dir / "train-images.idx").string());
  harness::write_idx(harness::labels_to_idx(d.train_labels), (dir / "train-labels.idx").string());
  harness::write_idx(harness::images_to_idx(d.test_images), (dir / "test-images.idx").string());
  harness::write_idx(harness::labels_to_idx(d.test_labels), (dir / "test-labels.idx").string());
  std::cout << "wrote " << d.train_images.size() << " train and " << d.test_images.size() << " test images to "
            << dir.string() << "\n";
  return 0;
}

int cmd_run(const Globals& g, bool deterministic) {
  auto c = load(g);
  if (g.seed) c.al.seeds = {*g.seed};
  if (deterministic) c.al.record_seconds = false;
  const auto data = harness::load_dataset(c);
  alloop::validate(c.al, data.train_images.size());
  const auto dir = out_dir(c);
  {
    std::ofstream os(dir / "config.json");
    os << harness::serialize_config(c);
  }
  auto observer = [&](const alloop::CycleEvent& e) {
    const auto& m = e.metrics;
    const std::string tag = "t" + std::to_string(m.trial) + "_c" + std::to_string(m.cycle);
    model::write_checkpoint((dir / ("model_" + tag + ".ckpt")).string(), e.model);
    // Selections arrive in pick order.
    std::vector<std::uint64_t> sel(e.selected.begin(), e.selected.end()), trained_on;
    std::sort(sel.begin(), sel.end());
    std::set_difference(e.pool.labelled.begin(), e.pool.labelled.end(), sel.begin(), sel.end(),
                        std::back_inserter(trained_on));
    write_ids(dir / ("labelled_" + tag + ".txt"), trained_on);
    if (!e.selected.empty()) write_ids(dir / ("selected_" + tag + ".txt"), e.selected);
    std::cerr << "trial " << m.trial << " (seed " << m.seed << ") cycle " << m.cycle << ": " << m.labelled
              << " labelled, accuracy " << percent(m.accuracy) << "\n";
  };
  const auto trials = alloop::run_active_learning(data, c.al, observer);
  harness::write_metrics_csv(harness::flatten(trials), (dir / "metrics.csv").string());
  std::cout << "cycle,labelled,trials,mean,std\n";
  for (const auto& s : alloop::aggregate_trials(trials)) {
    std::printf("%d,%zu,%zu,%.6f,%.6f\n", s.cycle, s.labelled, s.trials, s.mean, s.std);
  }
  return 0;
}

int cmd_train(const Globals& g) {
  auto c = load(g);
  if (g.seed) c.al.seeds = {*g.seed};
  c.al.seeds.resize(1);
  c.al.cycles = 0;
  const auto data = harness::load_dataset(c);
  alloop::validate(c.al, data.train_images.size());
  const auto dir = out_dir(c);
  auto observer = [&](const alloop::CycleEvent& e) {
    model::write_checkpoint((dir / "model.ckpt").string(), e.model);
    write_ids(dir / "labelled.txt", e.pool.labelled);
    for (const auto& r : e.reports) {
      const auto& last = r.epochs.back();
      std::printf("%s: %zu epochs, %llu inferences, final cls %.4f con_l %.4f con_u %.4f\n", r.stage.c_str(),
                  r.epochs.size(), static_cast<unsigned long long>(r.inferences), last.classification_loss,
                  last.contrastive_labelled, last.contrastive_unlabelled);
    }
  };
  const auto rows = alloop::run_trial(data, c.al, 0, observer);
  std::cout << "accuracy " << std::fixed << std::setprecision(6) << rows.front().accuracy << "\n";
  std::cout << "checkpoint " << (dir / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_select(const Globals& g, const std::string& checkpoint, const std::string& labelled_path,
               std::optional<std::size_t> budget, const std::string& selector) {
  auto c = load(g);
  if (budget) c.al.budget = *budget;
  if (!selector.empty()) c.al.selector = alloop::selector_from_string(selector);
  const auto data = harness::load_dataset(c);
  auto m = load_model(checkpoint, c);
  auto labelled = read_ids(labelled_path);
  std::sort(labelled.begin(), labelled.end());
  for (auto id : labelled) {
    if (id >= data.train_images.size()) throw ConfigError("labelled id " + std::to_string(id) + " outside the pool");
  }
  const auto pool = alloop::make_pool(data.train_images.size(), labelled);
  if (c.al.budget > pool.unlabelled.size()) throw ConfigError("budget exceeds the unlabelled pool");
  // Checkpoints carry no queues: refill both from eval-mode keys of the
  // labelled images, newest ids last.
  contrastive::KeyQueuePair<float> queues(c.al.train.queue_capacity, m.config.projection_dim);
  if (!labelled.empty()) {
    const std::size_t take = std::min(labelled.size(), c.al.train.queue_capacity);
    std::vector<augment::Image> imgs;
    for (std::size_t i = labelled.size() - take; i < labelled.size(); ++i) imgs.push_back(data.train_images[labelled[i]]);
    const auto keys = model::forward_key_embedding(m, model::images_to_tensor<float>(imgs), model::BnMode::Eval);
    queues.weak.enqueue(keys);
    queues.strong.enqueue(keys);
  }
  const std::uint64_t seed = g.seed.value_or(c.al.seeds.front());
  for (auto id : alloop::select_batch(c.al, data.train_images, m, queues, pool, seed)) std::cout << id << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint) {
  auto c = load(g);
  const auto data = harness::load_dataset(c);
  auto m = load_model(checkpoint, c);
  const auto ev = alloop::evaluate(m, data.test_images, data.test_labels, c.al.eval_batch);
  std::printf("accuracy %.6f\n", ev.accuracy);
  for (std::size_t k = 0; k < ev.per_class.size(); ++k) {
    std::printf("class %zu: %.6f (%zu images)\n", k, ev.per_class[k], ev.class_counts[k]);
  }
  return 0;
}

int cmd_grad_check(int seeds) {
  bool ok = true;
  for (const auto& c : harness::run_full_gradient_suite(seeds)) {
    std::printf("%-4s %-34s seeds %d  worst %.3e  (tol %.0e, redrawn %d)\n", c.passed() ? "ok" : "FAIL",
                c.name.c_str(), c.seeds, c.worst_error, c.tolerance, c.redrawn);
    ok = ok && c.passed();
  }
  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient check FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mobyal: self-supervised active learning with MoBY-style joint training"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "JSON experiment config (defaults to the desk protocol)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed override (u64)");
  app.add_option("--out", g.out, "Output directory (overrides output_dir)");

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset as IDX files");
  auto* run = app.add_subcommand("run", "Full active-learning experiment; writes metrics.csv and checkpoints");
  bool deterministic = false;
  run->add_flag("--deterministic", deterministic, "Write 0 for wall-clock seconds so output is byte-reproducible");
  auto* train = app.add_subcommand("train", "One training stage on a random initial labelled set");
  auto* sel = app.add_subcommand("select", "Choose ids to label next; prints one id per line");
  std::string checkpoint, labelled, selector;
  std::size_t budget = 0;
  sel->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  sel->add_option("--labelled", labelled, "File of labelled ids, one per line")->required();
  auto* budget_opt = sel->add_option("--budget", budget, "Number of ids (default: config budget)");
  sel->add_option("--selector", selector, "coreset | entropy | random | high_contrastive");
  auto* ev = app.add_subcommand("eval", "Test-set accuracy of a checkpoint");
  std::string eval_ckpt;
  ev->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  auto* gc = app.add_subcommand("grad-check", "Finite-difference verification of every gradient");
  int gc_seeds = 20;
  gc->add_option("--seeds", gc_seeds, "Instances per case")->check(CLI::Range(1, 1000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (*gen) return cmd_gen_data(g);
    if (*run) return cmd_run(g, deterministic);
    if (*train) return cmd_train(g);
    if (*sel) {
      std::optional<std::size_t> b;
      if (budget_opt->count() > 0) b = budget;
      return cmd_select(g, checkpoint, labelled, b, selector);
    }
    if (*ev) return cmd_eval(g, eval_ckpt);
    if (*gc) return cmd_grad_check(gc_seeds);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
