// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   acceptance --cli <path to mobyal> [--only <substring>] [--workdir <dir>]
//
// The learning-trend, joint/multi-stage and ablation criteria run the full
// desk protocol several times (about an hour on one core).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mobyal/alloop/alloop.hpp"
#include "mobyal/contrastive/contrastive.hpp"
#include "mobyal/errors.hpp"
#include "mobyal/harness/config.hpp"
#include "mobyal/numcore/ops.hpp"
#include "mobyal/select/select.hpp"
#include "mobyal/train/trainer.hpp"

using namespace mobyal;
namespace fs = std::filesystem;
using numcore::Tensor;

namespace {

// Frozen after the random-selector calibration run (see README).
constexpr double kFinalAccuracyThreshold = 0.80;
constexpr double kRuntimeLimitSeconds = 15 * 60;

// Copy of every result and progress line, since ctest hides the output of
// passing tests.
std::ofstream report;

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt("%.4f", v[i]);
  return s + "]";
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Unit rows with normal entries.
Tensor<double> unit_rows(Rng& rng, std::size_t n, std::size_t d) {
  Tensor<double> t({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      t[i * d + j] = rng.normal();
      ss += t[i * d + j] * t[i * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) t[i * d + j] /= std::sqrt(ss);
  }
  return t;
}

// ---------------------------------------------------------------- gradients

Outcome gradient_correctness(const std::string& cli) {
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = std::system((cli + " grad-check > grad_check.log 2>&1").c_str());
  const double secs = seconds_since(t0);
  const bool exited_zero = rc != -1 && WIFEXITED(rc) && WEXITSTATUS(rc) == 0;
  const auto log = read_file("grad_check.log");
  std::size_t cases = 0;
  for (std::size_t p = 0; (p = log.find("seeds 20", p)) != std::string::npos; ++p) ++cases;
  Outcome o;
  o.pass = exited_zero && secs < 60.0 && cases >= 20;
  o.detail = std::string("grad-check exit ") + (exited_zero ? "0" : "nonzero") + ", " + std::to_string(cases) +
             " cases x 20 seeds, " + fmt("%.1f s", secs) + " (limit 60 s)";
  return o;
}

// ------------------------------------------------------------- closed forms

Outcome closed_form_losses() {
  Outcome o;
  std::string d;
  for (std::size_t n : {0u, 1u, 3u, 255u}) {
    // Every logit equal: queue rows are copies of the positive key.
    const std::size_t dim = 8;
    Tensor<double> q({2, dim}), k({2, dim});
    for (std::size_t r = 0; r < 2; ++r) {
      q[r * dim + r] = 1.0;
      k[r * dim + 2] = 1.0;
    }
    contrastive::KeyQueue<double> queue(std::max<std::size_t>(n, 1), dim);
    if (n > 0) {
      Tensor<double> rows({n, dim});
      for (std::size_t r = 0; r < n; ++r) rows[r * dim + 2] = 1.0;
      queue.enqueue(rows);
    }
    const double v = contrastive::info_nce<double>(nullptr, q, k, queue, 0.2).item();
    const double err = std::abs(v - std::log(static_cast<double>(n) + 1.0));
    o.pass = o.pass && err <= 1e-6;
    d += "ln(" + std::to_string(n + 1) + ") err " + fmt("%.1e", err) + "; ";
  }
  for (std::size_t c : {2u, 4u, 10u}) {
    Tensor<double> logits({3, c});
    const std::vector<int> labels{0, static_cast<int>(c - 1), 1};
    const double v = numcore::softmax_cross_entropy<double>(nullptr, logits, labels).item();
    const double err = std::abs(v - std::log(static_cast<double>(c)));
    o.pass = o.pass && err <= 1e-6;
    d += "lnC(" + std::to_string(c) + ") err " + fmt("%.1e", err) + "; ";
  }
  const double comb = contrastive::combined_loss(1.0, 2.0, 0.5);
  o.pass = o.pass && comb == 2.0;
  d += "combined_loss(1,2,0.5) = " + fmt("%.17g", comb);
  o.detail = d;
  return o;
}

// ------------------------------------------------------------ InfoNCE oracle

// -log(e^{q.p/t} / (e^{q.p/t} + sum_j e^{q.n_j/t})), averaged over rows, in
// long double straight from the definition.
long double direct_info_nce(const Tensor<double>& q, const Tensor<double>& pos, const std::vector<double>& negs,
                            std::size_t dim, double t) {
  const std::size_t b = q.dim(0), nneg = negs.size() / dim;
  if (nneg == 0) return 0.0L;
  long double total = 0.0L;
  for (std::size_t i = 0; i < b; ++i) {
    long double lp = 0.0L;
    for (std::size_t j = 0; j < dim; ++j) lp += static_cast<long double>(q[i * dim + j]) * pos[i * dim + j];
    long double den = std::exp(lp / t);
    for (std::size_t r = 0; r < nneg; ++r) {
      long double ln = 0.0L;
      for (std::size_t j = 0; j < dim; ++j) ln += static_cast<long double>(q[i * dim + j]) * negs[r * dim + j];
      den += std::exp(ln / t);
    }
    total += -(lp / t - std::log(den));
  }
  return total / static_cast<long double>(b);
}

Outcome infonce_oracle() {
  Outcome o;
  double worst = 0.0;
  Rng rng(20240601);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t b = 1 + rng.uniform_index(6), dim = 2 + rng.uniform_index(15), cap = 1 + rng.uniform_index(12);
    const double t = 0.05 + 0.95 * rng.uniform();
    auto q = unit_rows(rng, b, dim), qs = unit_rows(rng, b, dim), k = unit_rows(rng, b, dim),
         ks = unit_rows(rng, b, dim);
    contrastive::KeyQueuePair<double> queues(cap, dim);
    // Fill levels cover empty, partial, full and wrapped queues.
    const std::size_t nw = rng.uniform_index(cap + 4), ns = rng.uniform_index(cap + 4);
    if (nw) queues.weak.enqueue(unit_rows(rng, nw, dim));
    if (ns) queues.strong.enqueue(unit_rows(rng, ns, dim));
    const double got = contrastive::contrastive_pair_loss<double>(nullptr, q, qs, k, ks, queues, t).item();
    const long double want = direct_info_nce(q, ks, queues.strong.contents(), dim, t) +
                             direct_info_nce(qs, k, queues.weak.contents(), dim, t);
    worst = std::max(worst, static_cast<double>(std::abs(static_cast<long double>(got) - want)));
  }
  o.pass = worst <= 1e-6;
  o.detail = "50 instances, max |library - direct formula| = " + fmt("%.2e", worst) + " (tol 1e-6)";
  return o;
}

// ------------------------------------------------------------ EMA and queue

std::vector<float> flat(model::DualModel<float>& m, const char* prefix) {
  std::vector<float> out;
  for (auto& e : model::state_entries(m)) {
    if (e.name.starts_with(prefix)) out.insert(out.end(), e.values.begin(), e.values.end());
  }
  return out;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](float x, float y) {
           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
         });
}

double worst_norm_error(const contrastive::KeyQueue<float>& q) {
  double worst = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    double ss = 0.0;
    for (float v : q.row(i)) ss += static_cast<double>(v) * v;
    worst = std::max(worst, std::abs(std::sqrt(ss) - 1.0));
  }
  return worst;
}

Outcome ema_queue_invariants() {
  Outcome o;
  std::string d;
  // A short real stage on a small synthetic set.
  harness::SyntheticSpec spec;
  spec.train_per_class = 12;
  spec.test_per_class = 2;
  const auto data = harness::generate_synthetic(spec);
  std::vector<augment::Image> lab(data.train_images.begin(), data.train_images.begin() + 24),
      unl(data.train_images.begin() + 24, data.train_images.end());
  std::vector<int> labels(data.train_labels.begin(), data.train_labels.begin() + 24);
  model::ModelConfig mc;
  mc.num_classes = 4;
  mc.widths = {4, 8, 8};
  mc.projection_dim = 16;
  train::TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.queue_capacity = 20;

  double norm_worst = 0.0;
  {
    auto m = model::init_model<float>(mc, 1);
    const auto before = flat(m, "key."), qbefore = flat(m, "query.");
    contrastive::KeyQueuePair<float> queues(tc.queue_capacity, mc.projection_dim);
    auto cfg = tc;
    cfg.momentum_base = cfg.momentum_end = 1.0;
    const auto rep = train::train_stage(m, queues, {lab, labels}, unl, cfg, 2);
    const bool frozen = bit_equal(flat(m, "key."), before);
    const bool moved = !bit_equal(flat(m, "query."), qbefore);
    o.pass = o.pass && frozen && moved;
    d += std::string("m=1: key side ") + (frozen ? "bit-identical" : "CHANGED") + " after " +
         std::to_string(rep.inferences) + " inferences; ";
    norm_worst = std::max({norm_worst, worst_norm_error(queues.weak), worst_norm_error(queues.strong)});
  }
  {
    auto m = model::init_model<float>(mc, 3);
    contrastive::KeyQueuePair<float> queues(tc.queue_capacity, mc.projection_dim);
    auto cfg = tc;
    cfg.momentum_base = cfg.momentum_end = 0.0;
    train::train_stage(m, queues, {lab, labels}, unl, cfg, 4);
    bool copied = true;
    std::map<std::string, std::vector<float>> entries;
    for (auto& e : model::state_entries(m)) entries[e.name].assign(e.values.begin(), e.values.end());
    for (const auto& [name, values] : entries) {
      if (!name.starts_with("key.")) continue;
      const auto twin = entries.find("query." + name.substr(4));
      copied = copied && twin != entries.end() && bit_equal(values, twin->second);
    }
    o.pass = o.pass && copied;
    d += std::string("m=0: key side ") + (copied ? "equals" : "DIFFERS FROM") + " query side; ";
    norm_worst = std::max({norm_worst, worst_norm_error(queues.weak), worst_norm_error(queues.strong)});
  }

  // Exhaustive FIFO check: every split of n <= 12 rows into enqueue calls,
  // capacity 1..4, against a deque of row ids.
  const std::size_t dim = 3;
  auto row_of = [&](std::size_t id) {
    const double a = 0.1 + 0.37 * static_cast<double>(id);
    return std::vector<float>{static_cast<float>(std::cos(a)), static_cast<float>(std::sin(a)), 0.0f};
  };
  std::size_t sequences = 0, mismatches = 0;
  for (std::size_t cap = 1; cap <= 4; ++cap) {
    for (std::size_t n = 0; n <= 12; ++n) {
      const std::size_t splits = n == 0 ? 1 : (std::size_t{1} << (n - 1));
      for (std::size_t mask = 0; mask < splits; ++mask) {
        ++sequences;
        contrastive::KeyQueue<float> queue(cap, dim);
        std::deque<std::size_t> ref;
        std::size_t next = 0, start = 0;
        bool ok = true;
        for (std::size_t i = 0; i < n; ++i) {
          // Bit i of mask ends a call after row i; the last row always does.
          if (i + 1 < n && !((mask >> i) & 1)) continue;
          const std::size_t len = i + 1 - start;
          Tensor<float> batch({len, dim});
          for (std::size_t r = 0; r < len; ++r) {
            const auto v = row_of(next);
            std::copy(v.begin(), v.end(), batch.data().begin() + static_cast<std::ptrdiff_t>(r * dim));
            ref.push_back(next++);
            if (ref.size() > cap) ref.pop_front();
          }
          queue.enqueue(batch);
          start = i + 1;
          ok = ok && queue.size() == ref.size() && queue.total_enqueued() == next;
          for (std::size_t r = 0; ok && r < ref.size(); ++r) {
            const auto want = row_of(ref[r]);
            const auto got = queue.row(r);
            ok = std::equal(got.begin(), got.end(), want.begin());
          }
          norm_worst = std::max(norm_worst, worst_norm_error(queue));
        }
        if (!ok) ++mismatches;
      }
    }
  }
  o.pass = o.pass && mismatches == 0 && norm_worst <= 1e-6;
  d += std::to_string(sequences) + " enqueue sequences, " + std::to_string(mismatches) +
       " FIFO mismatches; max | |key| - 1 | = " + fmt("%.1e", norm_worst);
  o.detail = d;
  return o;
}

// ------------------------------------------------------------------ k-center

select::FeatureMatrix matrix(std::size_t dim, std::vector<double> values, std::uint64_t first_id) {
  select::FeatureMatrix m;
  m.dim = dim;
  m.values = std::move(values);
  for (std::size_t i = 0; i < m.values.size() / dim; ++i) m.ids.push_back(first_id + i);
  return m;
}

Outcome kcenter_approximation() {
  Outcome o;
  Rng rng(777);
  double worst_ratio = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 4 + rng.uniform_index(9), b = 1 + rng.uniform_index(4), dim = 1 + rng.uniform_index(3),
                      nl = rng.uniform_index(3);
    std::vector<double> pv(n * dim), lv(nl * dim);
    for (auto& v : pv) v = rng.normal();
    for (auto& v : lv) v = rng.normal();
    const auto points = matrix(dim, pv, 100), labelled = matrix(dim, lv, 0);
    const auto greedy = select::coreset_select(labelled, points, b);
    auto centers = labelled;
    const auto chosen = select::gather(points, greedy.chosen);
    centers.values.insert(centers.values.end(), chosen.values.begin(), chosen.values.end());
    centers.ids.insert(centers.ids.end(), chosen.ids.begin(), chosen.ids.end());
    const double r = select::covering_radius(points, centers);
    const double opt = select::brute_force_kcenter(points, labelled, b).radius;
    const double ratio = opt > 0.0 ? r / opt : (r == 0.0 ? 0.0 : INFINITY);
    worst_ratio = std::max(worst_ratio, ratio);
    o.pass = o.pass && r <= 2.0 * opt + 1e-12;
  }
  // Hand traces: centers {0}, candidates {1, 2, 10} with ids 1, 2, 3.
  const auto lab = matrix(1, {0.0}, 0), cand = matrix(1, {1.0, 2.0, 10.0}, 1);
  const auto b1 = select::coreset_select(lab, cand, 1).chosen;
  const auto b2 = select::coreset_select(lab, cand, 2).chosen;
  const bool trace1 = b1 == std::vector<std::uint64_t>{3};
  const bool trace2 = b2 == std::vector<std::uint64_t>{3, 2};
  const auto bf1 = select::brute_force_kcenter(cand, lab, 1).subset;
  const bool bf_agrees = bf1 == std::vector<std::size_t>{2};
  o.pass = o.pass && trace1 && trace2 && bf_agrees;
  o.detail = "100 instances, worst greedy/optimal radius " + fmt("%.3f", worst_ratio) + " (bound 2); 1-D b=1 -> " +
             (trace1 ? "{10}" : "WRONG") + ", b=2 -> " + (trace2 ? "10 then 2" : "WRONG") +
             ", brute force b=1 " + (bf_agrees ? "agrees" : "DISAGREES");
  return o;
}

// ------------------------------------------------------------ AL correctness

harness::ExperimentConfig small_config() {
  auto c = harness::default_config();
  c.synthetic.train_per_class = 30;
  c.synthetic.test_per_class = 10;
  c.al.initial_labelled = 20;
  c.al.budget = 10;
  c.al.cycles = 2;
  c.al.seeds = {0, 1};
  c.al.train.epochs = 2;
  c.al.train.batch_size = 16;
  c.al.train.queue_capacity = 32;
  c.al.model.widths = {4, 8, 8};
  c.al.model.projection_dim = 16;
  c.al.record_seconds = false;
  return c;
}

Outcome al_correctness(const std::string& cli) {
  Outcome o;
  std::string d;
  std::uint64_t unrevealed = 0, partition_failures = 0, size_failures = 0, repeats = 0, cycles = 0;
  for (auto kind : {alloop::SelectorKind::Coreset, alloop::SelectorKind::Entropy, alloop::SelectorKind::Random,
                    alloop::SelectorKind::HighContrastive}) {
    auto c = small_config();
    c.al.selector = kind;
    const auto data = harness::load_dataset(c);
    std::set<std::uint64_t> seen_selected;
    std::size_t trial = 0;
    auto obs = [&](const alloop::CycleEvent& e) {
      ++cycles;
      if (e.metrics.trial != trial) {
        trial = e.metrics.trial;
        seen_selected.clear();
      }
      unrevealed += e.guard.unrevealed_reads();
      try {
        alloop::check_partition(e.pool, data.train_images.size());
      } catch (const ContractError&) {
        ++partition_failures;
      }
      const std::size_t expect = c.al.initial_labelled + static_cast<std::size_t>(e.metrics.cycle) * c.al.budget;
      if (e.metrics.labelled != expect) ++size_failures;
      for (auto id : e.selected) {
        if (!seen_selected.insert(id).second) ++repeats;
      }
    };
    alloop::run_active_learning(data, c.al, obs);
  }
  d += std::to_string(cycles) + " cycles over 4 selectors: " + std::to_string(unrevealed) +
       " unlabelled-label reads, " + std::to_string(partition_failures) + " partition failures, " +
       std::to_string(size_failures) + " |S_L| mismatches, " + std::to_string(repeats) + " repeated selections; ";
  o.pass = unrevealed == 0 && partition_failures == 0 && size_failures == 0 && repeats == 0;

  // Two CLI runs of the same config and seeds.
  const auto cfg = small_config();
  {
    std::ofstream os("al_small.json");
    os << harness::serialize_config(cfg);
  }
  std::vector<std::string> csv;
  for (const char* dir : {"run_a", "run_b"}) {
    fs::remove_all(dir);
    const int rc = std::system((cli + " run --config al_small.json --deterministic --out " + dir + " > " + dir +
                                ".log 2>&1")
                                   .c_str());
    if (rc != 0) {
      o.pass = false;
      d += std::string("run in ") + dir + " failed; ";
    }
    csv.push_back(read_file(fs::path(dir) / "metrics.csv"));
  }
  // config.json records output_dir, the one intended difference.
  std::size_t compared = 0;
  std::string differing;
  for (const auto& e : fs::directory_iterator("run_a")) {
    if (e.path().filename() == "config.json") continue;
    ++compared;
    if (read_file(e.path()) != read_file(fs::path("run_b") / e.path().filename()))
      differing += " " + e.path().filename().string();
  }
  const bool same = !csv[0].empty() && csv[0] == csv[1];
  o.pass = o.pass && same && differing.empty();
  d += std::string("metrics.csv ") + (same ? "byte-identical" : "DIFFERS") + " across two runs (" +
       std::to_string(csv[0].size()) + " bytes); " + std::to_string(compared) + " output files compared, " +
       (differing.empty() ? std::string("all identical") : "differing:" + differing);
  o.detail = d;
  return o;
}

// ------------------------------------------------------- desk-scale protocol

struct ProtocolRun {
  std::vector<std::vector<alloop::CycleMetrics>> trials;
  double seconds = 0.0;

  std::vector<double> at_cycle(int c) const {
    std::vector<double> v;
    for (const auto& t : trials) v.push_back(t.at(static_cast<std::size_t>(c)).accuracy);
    return v;
  }
  std::vector<double> final_acc() const { return at_cycle(static_cast<int>(trials.front().size()) - 1); }
};

class Protocol {
 public:
  const ProtocolRun& get(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    auto c = harness::default_config();
    c.al.record_seconds = false;
    if (name == "random") c.al.selector = alloop::SelectorKind::Random;
    if (name == "multi_stage_c0") {
      c.al.train.mode = train::TrainMode::MultiStage;
      c.al.cycles = 0;
    }
    if (name == "no_strong") c.al.train.augment.use_strong = false;
    if (name == "no_predictor") c.al.model.use_predictor = false;
    if (name == "no_projector") c.al.model.use_projector = false;
    const auto data = harness::load_dataset(c);
    std::cerr << "[protocol " << name << "] " << c.al.seeds.size() << " seeds, " << c.al.cycles << " cycles\n";
    report << "[protocol " << name << "]" << std::endl;
    ProtocolRun r;
    const auto t0 = std::chrono::steady_clock::now();
    r.trials = alloop::run_active_learning(data, c.al, [&](const alloop::CycleEvent& e) {
      const std::string line = "  seed " + std::to_string(e.metrics.seed) + " cycle " +
                               std::to_string(e.metrics.cycle) + " acc " + fmt("%.4f", e.metrics.accuracy) + " (" +
                               fmt("%.0f s", seconds_since(t0)) + ")";
      std::cerr << line << "\n";
      report << line << std::endl;
    });
    r.seconds = seconds_since(t0);
    return cache_.emplace(name, std::move(r)).first->second;
  }

 private:
  std::map<std::string, ProtocolRun> cache_;
};

Outcome learning_trend(Protocol& p) {
  const auto& cs = p.get("coreset");
  const auto& rnd = p.get("random");
  Outcome o;
  std::vector<double> medians;
  for (int c = 0; c < static_cast<int>(cs.trials.front().size()); ++c) medians.push_back(median(cs.at_cycle(c)));
  bool monotone = true;
  for (std::size_t i = 1; i < medians.size(); ++i) monotone = monotone && medians[i] >= medians[i - 1];
  const double med_final = medians.back();
  const double cs_mean = mean(cs.final_acc()), rnd_mean = mean(rnd.final_acc());
  o.pass = med_final >= kFinalAccuracyThreshold && monotone && cs_mean >= rnd_mean - 0.02 &&
           cs.seconds < kRuntimeLimitSeconds;
  o.detail = "median accuracy by cycle " + list(medians) + (monotone ? " (non-decreasing)" : " (DECREASES)") +
             "; median final " + fmt("%.4f", med_final) + " vs threshold " + fmt("%.2f", kFinalAccuracyThreshold) +
             "; CoreSet mean final " + fmt("%.4f", cs_mean) + " vs random " + fmt("%.4f", rnd_mean) +
             " - 0.02; CoreSet protocol runtime " + fmt("%.0f s", cs.seconds) + " (limit 900 s)";
  return o;
}

Outcome joint_vs_multistage(Protocol& p) {
  const auto joint = p.get("coreset").at_cycle(0);
  const auto multi = p.get("multi_stage_c0").at_cycle(0);
  Outcome o;
  o.pass = mean(joint) >= mean(multi);
  o.detail = "cycle 0 over 5 paired seeds: joint mean " + fmt("%.4f", mean(joint)) + " " + list(joint) +
             ", multi-stage mean " + fmt("%.4f", mean(multi)) + " " + list(multi);
  return o;
}

Outcome ablation_direction(Protocol& p) {
  const double full = mean(p.get("coreset").final_acc());
  const double no_strong = mean(p.get("no_strong").final_acc());
  const double no_pred = mean(p.get("no_predictor").final_acc());
  const double no_proj = mean(p.get("no_projector").final_acc());
  Outcome o;
  o.pass = no_strong <= full;
  o.detail = "mean final: full " + fmt("%.4f", full) + ", without strong augmentation " + fmt("%.4f", no_strong) +
             " (delta " + fmt("%+.4f", no_strong - full) + "); reported only: no predictor delta " +
             fmt("%+.4f", no_pred - full) + ", no projector delta " + fmt("%+.4f", no_proj - full);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli, only, workdir;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string a = argv[i];
    if (a == "--cli") cli = fs::absolute(argv[i + 1]).string();
    else if (a == "--only") only = argv[i + 1];
    else if (a == "--workdir") workdir = argv[i + 1];
    else {
      std::cerr << "usage: acceptance --cli <mobyal> [--only <substring>] [--workdir <dir>]\n";
      return 2;
    }
  }
  if (cli.empty()) {
    std::cerr << "acceptance: --cli is required\n";
    return 2;
  }
  const fs::path dir = workdir.empty() ? fs::temp_directory_path() / "mobyal_acceptance" : fs::path(workdir);
  fs::create_directories(dir);
  fs::current_path(dir);
  report.open("acceptance_report.txt");

  Protocol protocol;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", [&] { return gradient_correctness(cli); }},
      {"closed-form losses", closed_form_losses},
      {"InfoNCE oracle equivalence", infonce_oracle},
      {"EMA/queue invariants", ema_queue_invariants},
      {"k-Center approximation", kcenter_approximation},
      {"AL loop correctness", [&] { return al_correctness(cli); }},
      {"desk-scale learning trend", [&] { return learning_trend(protocol); }},
      {"joint vs multi-stage", [&] { return joint_vs_multistage(protocol); }},
      {"ablation direction", [&] { return ablation_direction(protocol); }},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && name.find(only) == std::string::npos) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    const std::string line = (o.pass ? "PASS " : "FAIL ") + name + ": " + o.detail;
    std::cout << line << std::endl;
    report << line << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
