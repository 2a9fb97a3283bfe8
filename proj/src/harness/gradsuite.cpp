#include "mobyal/harness/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <string>

#include "mobyal/contrastive/contrastive.hpp"
#include "mobyal/model/model.hpp"
#include "mobyal/numcore/ops.hpp"

namespace mobyal::harness {

namespace {

using numcore::Tape;
using numcore::Tensor;
using TD = Tensor<double>;

TD normal(Rng& rng, numcore::Shape shape) {
  TD t(std::move(shape));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

TD unit_rows(Rng& rng, std::size_t n, std::size_t d) {
  TD t = normal(rng, {n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += t[i * d + j] * t[i * d + j];
    for (std::size_t j = 0; j < d; ++j) t[i * d + j] /= std::sqrt(s);
  }
  return t;
}

model::ModelConfig tiny(bool predictor, bool projector) {
  model::ModelConfig c;
  c.in_channels = 1;
  c.num_classes = 3;
  c.widths = {3, 4, 4};
  c.projection_dim = 16;
  c.use_predictor = predictor;
  c.use_projector = projector;
  return c;
}

// Generic gamma/beta so their gradients are not degenerate.
model::DualModel<double> tiny_model(const model::ModelConfig& c, Rng& rng) {
  auto m = model::init_model<double>(c, rng.uniform_index(1u << 30));
  for (auto& p : model::query_parameters(m)) {
    if (p.rank() == 1) {
      for (double& v : p.data()) v += rng.normal(0.0, 0.3);
    }
  }
  // Keeps pooled features away from the all-zero row, where l2_normalize is
  // undefined.
  for (auto& b : m.query_encoder.blocks) {
    for (double& v : b.beta.data()) v += 0.5;
  }
  return m;
}

TD images(Rng& rng, std::size_t n) {
  TD t({n, 1, 6, 6});
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

numcore::GradCheckResult elementwise(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto a = normal(rng, {3, 4}), b = normal(rng, {3, 4});
  return numcore::gradient_check(
             [&](Tape<double>& t) { return numcore::sum(&t, numcore::mul(&t, numcore::add(&t, a, numcore::scale(&t, b, -0.7)), a)); },
             {a, b}, eps);
}

numcore::GradCheckResult encoder(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto m = tiny_model(tiny(true, true), rng);
  auto x = images(rng, 3);
  auto r = normal(rng, {3, 4});
  std::vector<TD> in{x};
  for (auto& b : m.query_encoder.blocks) in.insert(in.end(), {b.weight, b.gamma, b.beta});
  return numcore::gradient_check(
             [&](Tape<double>& t) {
               return numcore::sum(&t, numcore::mul(&t, model::forward_features(&t, m, x, model::BnMode::Train), r));
             },
             in, eps);
}

numcore::GradCheckResult classifier(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto m = tiny_model(tiny(true, true), rng);
  auto x = images(rng, 4);
  const std::vector<int> labels{0, 2, 1, 2};
  auto in = model::encoder_classifier_parameters(m);
  in.push_back(x);
  return numcore::gradient_check(
             [&](Tape<double>& t) {
               auto f = model::forward_features(&t, m, x, model::BnMode::Train);
               return numcore::softmax_cross_entropy(&t, model::classify(&t, m, f), labels);
             },
             in, eps);
}

std::function<numcore::GradCheckResult(std::uint64_t, double)> query_embedding(bool predictor, bool projector) {
  return [=](std::uint64_t seed, double eps) {
    Rng rng(seed);
    auto m = tiny_model(tiny(predictor, projector), rng);
    auto x = images(rng, 4);
    auto r = normal(rng, {4, 16});
    auto in = model::query_parameters(m, false);
    in.push_back(x);
    return numcore::gradient_check(
               [&](Tape<double>& t) {
                 return numcore::sum(&t,
                                     numcore::mul(&t, model::forward_query_embedding(&t, m, x, model::BnMode::Train), r));
               },
               in, eps)
;
  };
}

std::function<numcore::GradCheckResult(std::uint64_t, double)> info_nce(bool include_positive) {
  return [=](std::uint64_t seed, double eps) {
    Rng rng(seed);
    auto raw = normal(rng, {4, 6});
    auto k = unit_rows(rng, 4, 6);
    contrastive::KeyQueue<double> queue(8, 6);
    queue.enqueue(unit_rows(rng, 7, 6));
    return numcore::gradient_check(
               [&](Tape<double>& t) {
                 return contrastive::info_nce(&t, numcore::l2_normalize(&t, raw), k, queue, 0.2, include_positive);
               },
               {raw}, eps)
;
  };
}

// Pair loss on embeddings from the model, combined with cross-entropy.
numcore::GradCheckResult full_objective(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto m = tiny_model(tiny(true, true), rng);
  auto x = images(rng, 4), xs = images(rng, 4);
  const std::vector<int> labels{1, 0, 2, 2};
  contrastive::KeyQueuePair<double> queues(6, 16);
  queues.weak.enqueue(unit_rows(rng, 5, 16));
  queues.strong.enqueue(unit_rows(rng, 6, 16));
  auto k = unit_rows(rng, 4, 16), ks = unit_rows(rng, 4, 16);
  auto in = model::query_parameters(m, true);
  return numcore::gradient_check(
             [&](Tape<double>& t) {
               auto f = model::forward_features(&t, m, x, model::BnMode::Train);
               auto q = model::query_embedding_from_features(&t, m, f, model::BnMode::Train);
               auto qs = model::forward_query_embedding(&t, m, xs, model::BnMode::Train);
               auto lc = contrastive::contrastive_pair_loss(&t, q, qs, k, ks, queues, 0.2);
               auto ce = numcore::softmax_cross_entropy(&t, model::classify(&t, m, f), labels);
               return contrastive::combined_loss(&t, ce, lc, 0.5);
             },
             in, eps);
}

}  // namespace

std::vector<numcore::GradCheckCase> run_full_gradient_suite(int seeds, double eps, double tolerance) {
  auto out = numcore::run_gradient_suite(seeds, eps, tolerance);
  const std::vector<std::pair<std::string, std::function<numcore::GradCheckResult(std::uint64_t, double)>>> cases{
      {"add_scale_mul_sum", elementwise},
      {"encoder_features", encoder},
      {"encoder_classifier_xent", classifier},
      {"query_embedding", query_embedding(true, true)},
      {"query_embedding_no_predictor", query_embedding(false, true)},
      {"query_embedding_no_projector", query_embedding(true, false)},
      {"query_embedding_bare", query_embedding(false, false)},
      {"info_nce", info_nce(true)},
      {"info_nce_negatives_only", info_nce(false)},
      {"pair_loss_plus_xent_full_model", full_objective},
  };
  for (const auto& [name, fn] : cases) out.push_back(numcore::run_case(name, fn, 0x66756c6cULL, seeds, eps, tolerance));
  return out;
}

}  // namespace mobyal::harness
