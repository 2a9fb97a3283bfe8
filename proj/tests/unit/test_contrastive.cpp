#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "mobyal/contrastive/contrastive.hpp"
#include "mobyal/numcore/gradcheck.hpp"

using namespace mobyal;
using namespace mobyal::contrastive;
using numcore::Shape;

namespace {

Tensor<double> unit_rows(Rng& rng, std::size_t n, std::size_t d) {
  Tensor<double> t({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0;
    for (std::size_t j = 0; j < d; ++j) {
      t[i * d + j] = rng.normal();
      ss += t[i * d + j] * t[i * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) t[i * d + j] /= std::sqrt(ss);
  }
  return t;
}

// Direct evaluation of the loss for one row, written independently of the
// library: -log(e^{pos/t} / (e^{pos/t} + sum_j e^{neg_j/t})), long double.
long double oracle_row(const double* q, const double* k, const std::vector<std::vector<double>>& queue,
                       std::size_t d, double t) {
  if (queue.empty()) return 0.0L;
  auto dot = [&](const double* a, const double* b) {
    long double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<long double>(a[c]) * b[c];
    return s;
  };
  const long double num = std::exp(dot(q, k) / t);
  long double den = num;
  for (const auto& n : queue) den += std::exp(dot(q, n.data()) / t);
  return -std::log(num / den);
}

long double oracle_mean(const Tensor<double>& q, const Tensor<double>& k, const std::vector<std::vector<double>>& queue,
                        double t) {
  const std::size_t n = q.dim(0), d = q.dim(1);
  long double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += oracle_row(&q.data()[i * d], &k.data()[i * d], queue, d, t);
  return s / static_cast<long double>(n);
}

std::vector<std::vector<double>> as_rows(const Tensor<double>& t) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    out.emplace_back(t.data().begin() + static_cast<std::ptrdiff_t>(i * t.dim(1)),
                     t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * t.dim(1)));
  }
  return out;
}

Tensor<double> single_row(const std::vector<double>& v) { return Tensor<double>({1, v.size()}, v); }

}  // namespace

TEST_CASE("info_nce: empty queue is exactly zero") {
  Rng rng(1);
  auto q = unit_rows(rng, 5, 8);
  auto k = unit_rows(rng, 5, 8);
  KeyQueue<double> queue(16, 8);
  CHECK(info_nce<double>(nullptr, q, k, queue, 0.2).item() == 0.0);
  CHECK(info_nce<double>(nullptr, q, k, queue, 0.2, false).item() == 0.0);
}

TEST_CASE("info_nce: uniform logits give ln(n + 1)") {
  // q = k = e0 and every queue row has the same similarity (1) to q.
  Tensor<double> q({1, 3}, std::vector<double>{1, 0, 0});
  KeyQueue<double> queue(8, 3);
  queue.enqueue(Tensor<double>({3, 3}, std::vector<double>{1, 0, 0, 1, 0, 0, 1, 0, 0}));
  CHECK(info_nce<double>(nullptr, q, q, queue, 0.2).item() == doctest::Approx(1.386294).epsilon(1e-6));
  CHECK(info_nce<double>(nullptr, q, q, queue, 0.2).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  // Negatives-only denominator: -log(e^{s}/(3 e^{s})) = ln 3.
  CHECK(info_nce<double>(nullptr, q, q, queue, 0.2, false).item() == doctest::Approx(std::log(3.0)));
}

TEST_CASE("info_nce matches the direct-formula oracle on random instances") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(derive_seed(7, {s}));
    const std::size_t n = 1 + rng.uniform_index(6), d = 2 + rng.uniform_index(14);
    const double tau = rng.uniform(0.05, 1.0);
    auto q = unit_rows(rng, n, d);
    auto k = unit_rows(rng, n, d);
    auto negs = unit_rows(rng, 8, d);
    KeyQueue<double> queue(8, d);
    queue.enqueue(negs);
    const auto got = info_nce<double>(nullptr, q, k, queue, tau).item();
    const auto want = static_cast<double>(oracle_mean(q, k, as_rows(negs), tau));
    CHECK(std::abs(got - want) <= 1e-6 * std::max(1.0, std::abs(want)));
    const auto rows = info_nce_rows(q, k, queue, tau);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(rows[i] - static_cast<double>(oracle_row(&q.data()[i * d], &k.data()[i * d], as_rows(negs),
                                                              d, tau))) <= 1e-6);
    }
    // Float path agrees within float precision.
    Tensor<float> qf({n, d}), kf({n, d}), nf({8, d});
    for (std::size_t i = 0; i < q.numel(); ++i) qf[i] = static_cast<float>(q[i]), kf[i] = static_cast<float>(k[i]);
    for (std::size_t i = 0; i < negs.numel(); ++i) nf[i] = static_cast<float>(negs[i]);
    KeyQueue<float> qfq(8, d);
    qfq.enqueue(nf);
    CHECK(info_nce<float>(nullptr, qf, kf, qfq, tau).item() == doctest::Approx(want).epsilon(1e-4));
  }
}

TEST_CASE("info_nce properties: non-negative, monotone") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(derive_seed(8, {s}));
    auto q = unit_rows(rng, 1, 6);
    auto k = unit_rows(rng, 1, 6);
    auto negs = unit_rows(rng, 5, 6);
    KeyQueue<double> queue(5, 6);
    queue.enqueue(negs);
    const double base = info_nce<double>(nullptr, q, k, queue, 0.2).item();
    CHECK(base > 0.0);

    // Move k towards q: q.k rises, loss falls.
    Tensor<double> k2({1, 6});
    double ss = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      k2[j] = k[j] + 0.5 * q[j];
      ss += k2[j] * k2[j];
    }
    for (std::size_t j = 0; j < 6; ++j) k2[j] /= std::sqrt(ss);
    CHECK(info_nce<double>(nullptr, q, k2, queue, 0.2).item() < base);

    // Move one negative towards q: its similarity rises, loss rises.
    auto rows = as_rows(negs);
    ss = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      rows[2][j] += 0.5 * q[j];
      ss += rows[2][j] * rows[2][j];
    }
    for (double& v : rows[2]) v /= std::sqrt(ss);
    KeyQueue<double> moved(5, 6);
    for (const auto& r : rows) moved.enqueue(single_row(r));
    CHECK(info_nce<double>(nullptr, q, k, moved, 0.2).item() > base);
  }
}

TEST_CASE("info_nce gradient matches finite differences") {
  for (bool include_positive : {true, false}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      Rng rng(derive_seed(9, {s}));
      Tensor<double> raw({4, 6});
      for (double& v : raw.data()) v = rng.normal();
      auto k = unit_rows(rng, 4, 6);
      KeyQueue<double> queue(8, 6);
      queue.enqueue(unit_rows(rng, 7, 6));
      // Through l2_normalize as in training, and on q directly.
      const double e1 = numcore::finite_difference_check(
          [&](numcore::Tape<double>& t) {
            return info_nce(&t, numcore::l2_normalize(&t, raw), k, queue, 0.2, include_positive);
          },
          raw);
      CHECK(e1 < 1e-3);
      auto q = unit_rows(rng, 4, 6);
      const double e2 = numcore::finite_difference_check(
          [&](numcore::Tape<double>& t) { return info_nce(&t, q, k, queue, 0.5, include_positive); }, q);
      CHECK(e2 < 1e-3);
    }
  }
}

TEST_CASE("info_nce errors") {
  Rng rng(2);
  auto q = unit_rows(rng, 2, 4);
  KeyQueue<double> queue(4, 4);
  CHECK_THROWS_AS(info_nce<double>(nullptr, q, q, queue, 0.0), ContractError);
  CHECK_THROWS_AS(info_nce<double>(nullptr, q, q, queue, -1.0), ContractError);
  auto other = unit_rows(rng, 3, 4);
  CHECK_THROWS_AS(info_nce<double>(nullptr, q, other, queue, 0.2), DimensionError);
  KeyQueue<double> wide(4, 5);
  CHECK_THROWS_AS(info_nce<double>(nullptr, q, q, wide, 0.2), DimensionError);
  LossWeights w;
  CHECK_NOTHROW(validate(w));
  w.temperature = 0;
  CHECK_THROWS_AS(validate(w), ConfigError);
  w = {};
  w.lambda_c = -0.1;
  CHECK_THROWS_AS(validate(w), ConfigError);
}

TEST_CASE("contrastive_pair_loss") {
  Rng rng(3);
  auto q = unit_rows(rng, 4, 5);
  auto q2 = unit_rows(rng, 4, 5);
  auto k = unit_rows(rng, 4, 5);
  auto k2 = unit_rows(rng, 4, 5);
  KeyQueuePair<double> empty(8, 5);
  CHECK(contrastive_pair_loss<double>(nullptr, q, q2, k, k2, empty, 0.2).item() == 0.0);

  Tensor<double> e({1, 3}, std::vector<double>{0, 1, 0});
  KeyQueuePair<double> sym(8, 3);
  auto three = Tensor<double>({3, 3}, std::vector<double>{0, 1, 0, 0, 1, 0, 0, 1, 0});
  enqueue_keys(sym, three, three);
  CHECK(contrastive_pair_loss<double>(nullptr, e, e, e, e, sym, 0.2).item() ==
        doctest::Approx(2.772589).epsilon(1e-6));

  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng r(derive_seed(10, {s}));
    auto a = unit_rows(r, 3, 7), b = unit_rows(r, 3, 7), c = unit_rows(r, 3, 7), d = unit_rows(r, 3, 7);
    auto nw = unit_rows(r, 6, 7), ns = unit_rows(r, 8, 7);
    KeyQueuePair<double> qp(8, 7);
    qp.weak.enqueue(nw);
    qp.strong.enqueue(ns);
    const double got = contrastive_pair_loss<double>(nullptr, a, b, c, d, qp, 0.2).item();
    // (q, k') against the strong queue, (q', k) against the weak queue.
    const long double want = oracle_mean(a, d, as_rows(ns), 0.2) + oracle_mean(b, c, as_rows(nw), 0.2);
    CHECK(std::abs(got - static_cast<double>(want)) <= 1e-6);
  }
}

TEST_CASE("combined_loss") {
  CHECK(combined_loss(1.0, 2.0, 0.5) == 2.0);
  CHECK(combined_loss(1.3, 2.0, 0.0) == 1.3);
  CHECK(combined_loss(0.0, 0.7, 1.0) == 0.7);
  auto c = Tensor<double>::scalar(1.0, true);
  auto l = Tensor<double>::scalar(2.0, true);
  numcore::Tape<double> tape;
  auto total = combined_loss(&tape, c, l, 0.5);
  CHECK(total.item() == 2.0);
  tape.backward(total);
  CHECK(c.grad()[0] == 1.0);
  CHECK(l.grad()[0] == 0.5);
}

TEST_CASE("key queue FIFO") {
  auto batch = [](std::initializer_list<int> ids) {
    // Row for id i is the unit vector (cos i, sin i), so rows are identifiable.
    std::vector<double> v;
    for (int i : ids) {
      v.push_back(std::cos(i));
      v.push_back(std::sin(i));
    }
    return Tensor<double>({ids.size(), 2}, v);
  };
  auto ids_of = [](const KeyQueue<double>& q) {
    std::vector<int> out;
    for (std::size_t i = 0; i < q.size(); ++i) {
      out.push_back(static_cast<int>(std::lround(std::atan2(q.row(i)[1], q.row(i)[0]) * 1000)));
    }
    return out;
  };
  auto expect = [](std::initializer_list<int> ids) {
    std::vector<int> out;
    for (int i : ids) out.push_back(static_cast<int>(std::lround(std::atan2(std::sin(i), std::cos(i)) * 1000)));
    return out;
  };
  KeyQueue<double> q(4, 2);
  q.enqueue(batch({1, 2, 3}));
  CHECK(q.size() == 3);
  q.enqueue(batch({4, 5, 6}));
  CHECK(q.size() == 4);
  CHECK(ids_of(q) == expect({3, 4, 5, 6}));
  KeyQueue<double> big(4, 2);
  big.enqueue(batch({1, 2, 3, 4, 5, 6}));
  CHECK(ids_of(big) == expect({3, 4, 5, 6}));
  CHECK(big.total_enqueued() == 6);

  CHECK_THROWS_AS(q.enqueue(Tensor<double>({1, 2}, std::vector<double>{1.0, 0.1})), ContractError);
  CHECK_THROWS_AS(q.enqueue(Tensor<double>({1, 3}, std::vector<double>{1, 0, 0})), DimensionError);
  CHECK_THROWS_AS(KeyQueue<double>(0, 2), ContractError);
}

TEST_CASE("queue equals the last min(m, total) keys for every enqueue sequence") {
  // Exhaustive over capacities 1..4 and all sequences of up to 4 batches of
  // sizes 1..3.
  for (std::size_t cap = 1; cap <= 4; ++cap) {
    std::vector<std::vector<std::size_t>> seqs{{}};
    for (int depth = 0; depth < 4; ++depth) {
      auto prev = seqs;
      for (const auto& s : prev) {
        if (static_cast<int>(s.size()) != depth) continue;
        for (std::size_t b = 1; b <= 3; ++b) {
          auto t = s;
          t.push_back(b);
          seqs.push_back(t);
        }
      }
    }
    for (const auto& seq : seqs) {
      KeyQueue<double> q(cap, 2);
      std::vector<double> arrivals;
      int next = 0;
      for (std::size_t b : seq) {
        std::vector<double> v;
        for (std::size_t i = 0; i < b; ++i, ++next) {
          const double a = 0.01 * next;
          v.push_back(std::cos(a));
          v.push_back(std::sin(a));
          arrivals.push_back(a);
        }
        q.enqueue(Tensor<double>({b, 2}, v));
      }
      const std::size_t keep = std::min(cap, arrivals.size());
      REQUIRE(q.size() == keep);
      for (std::size_t i = 0; i < keep; ++i) {
        const double a = arrivals[arrivals.size() - keep + i];
        CHECK(q.row(i)[0] == std::cos(a));
        CHECK(q.row(i)[1] == std::sin(a));
      }
      for (std::size_t i = 0; i < q.size(); ++i) {
        CHECK(std::abs(std::hypot(q.row(i)[0], q.row(i)[1]) - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("per-sample contrastive scores") {
  model::ModelConfig mc;
  mc.widths = {8, 8, 8};
  mc.projection_dim = 16;
  auto m = model::init_model<float>(mc, 4);
  Rng rng(5);
  std::vector<augment::Image> images;
  std::vector<std::uint64_t> ids;
  for (std::uint64_t i = 0; i < 9; ++i) {
    augment::Image img(3, 8, 8);
    for (float& v : img.values) v = static_cast<float>(rng.uniform());
    images.push_back(img);
    ids.push_back(100 + i);
  }
  ScoreOptions opts;
  opts.batch_size = 4;
  KeyQueuePair<float> queues(32, 16);
  auto zero = per_sample_contrastive_scores(m, queues, images, ids, 77, opts);
  for (double s : zero) CHECK(s == 0.0);

  // Populate with key embeddings of random images.
  for (int b = 0; b < 3; ++b) {
    std::vector<augment::Image> batch;
    for (int i = 0; i < 6; ++i) {
      augment::Image img(3, 8, 8);
      for (float& v : img.values) v = static_cast<float>(rng.uniform());
      batch.push_back(img);
    }
    auto x = model::images_to_tensor<float>(batch);
    enqueue_keys(queues, model::forward_key_embedding(m, x), model::forward_key_embedding(m, x));
  }
  const auto scores = per_sample_contrastive_scores(m, queues, images, ids, 77, opts);
  CHECK(scores == per_sample_contrastive_scores(m, queues, images, ids, 77, opts));
  for (std::size_t i = 0; i < images.size(); ++i) {
    CHECK(scores[i] > 0.0);
    Rng r(derive_seed(77, {ids[i]}));
    CHECK(per_sample_contrastive_score(m, queues, images[i], r, opts) == doctest::Approx(scores[i]).epsilon(1e-9));
  }

  // Oracle: recompute the views and embeddings, evaluate the formula directly.
  std::vector<double> want;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng r(derive_seed(77, {ids[i]}));
    std::vector<augment::Image> w{augment::weak_augment(images[i], r)};
    std::vector<augment::Image> st{augment::contrast_view(images[i], r)};
    auto xw = model::images_to_tensor<float>(w), xs = model::images_to_tensor<float>(st);
    auto to_d = [](const Tensor<float>& t) {
      Tensor<double> out(t.shape());
      for (std::size_t j = 0; j < t.numel(); ++j) out[j] = t[j];
      return out;
    };
    auto q = to_d(model::forward_query_embedding<float>(nullptr, m, xw, numcore::BnMode::Eval));
    auto q2 = to_d(model::forward_query_embedding<float>(nullptr, m, xs, numcore::BnMode::Eval));
    auto k = to_d(model::forward_key_embedding(m, xw, numcore::BnMode::Eval));
    auto k2 = to_d(model::forward_key_embedding(m, xs, numcore::BnMode::Eval));
    auto rows = [](const KeyQueue<float>& kq) {
      std::vector<std::vector<double>> out;
      for (std::size_t j = 0; j < kq.size(); ++j) out.emplace_back(kq.row(j).begin(), kq.row(j).end());
      return out;
    };
    want.push_back(static_cast<double>(oracle_row(q.data().data(), k2.data().data(), rows(queues.strong), 16, 0.2) +
                                       oracle_row(q2.data().data(), k.data().data(), rows(queues.weak), 16, 0.2)));
  }
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(scores[i] == doctest::Approx(want[i]).epsilon(1e-6));
  std::vector<std::size_t> by_score(images.size()), by_oracle(images.size());
  std::iota(by_score.begin(), by_score.end(), 0);
  std::iota(by_oracle.begin(), by_oracle.end(), 0);
  std::stable_sort(by_score.begin(), by_score.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::stable_sort(by_oracle.begin(), by_oracle.end(), [&](auto a, auto b) { return want[a] < want[b]; });
  CHECK(by_score == by_oracle);
}
