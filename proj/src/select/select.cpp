#include "mobyal/select/select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>

#include "mobyal/errors.hpp"
#include "mobyal/numcore/kernels.hpp"

namespace mobyal::select {

namespace {

void check_budget(std::size_t budget, std::size_t pool) {
  if (budget > pool) {
    throw ContractError("selection budget " + std::to_string(budget) + " exceeds pool of " + std::to_string(pool));
  }
}

void check_distinct(std::span<const std::uint64_t> ids) {
  std::vector<std::uint64_t> s(ids.begin(), ids.end());
  std::sort(s.begin(), s.end());
  if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw ContractError("selection: duplicate dataset id");
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Indices ordered by descending key, ties by ascending id.
std::vector<std::size_t> rank_descending(std::span<const double> key, std::span<const std::uint64_t> ids) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (key[a] != key[b]) return key[a] > key[b];
    return ids[a] < ids[b];
  });
  return order;
}

SelectionResult top(std::span<const double> key, std::span<const std::uint64_t> ids, std::size_t budget) {
  const auto order = rank_descending(key, ids);
  SelectionResult r;
  for (std::size_t i = 0; i < budget; ++i) {
    r.chosen.push_back(ids[order[i]]);
    r.trace.push_back(key[order[i]]);
  }
  return r;
}

void check_dims(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.rows() > 0 && b.rows() > 0 && a.dim != b.dim) throw DimensionError("feature matrices differ in dimension");
}

}  // namespace

void validate(const FeatureMatrix& m) {
  if (m.values.size() != m.rows() * m.dim) throw DimensionError("feature matrix: values do not match rows x dim");
  for (double v : m.values) {
    if (!std::isfinite(v)) throw ContractError("feature matrix: non-finite entry");
  }
}

SelectionResult coreset_select(const FeatureMatrix& labelled, const FeatureMatrix& unlabelled, std::size_t budget) {
  validate(labelled);
  validate(unlabelled);
  check_dims(labelled, unlabelled);
  check_budget(budget, unlabelled.rows());
  check_distinct(unlabelled.ids);
  const std::size_t n = unlabelled.rows(), dim = unlabelled.dim;
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < labelled.rows(); ++c) {
    numcore::kernels::min_sq_distance_update(unlabelled.values, dim, labelled.row(c), dist);
  }
  std::vector<char> taken(n, 0);
  SelectionResult r;
  std::size_t start = 0;
  if (labelled.rows() == 0 && budget > 0) {
    // 1-center bootstrap: the row minimizing its largest distance.
    std::size_t best = 0;
    double best_r = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      double worst = 0.0;
      for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, sq_dist(unlabelled.row(i), unlabelled.row(j)));
      if (worst < best_r || (worst == best_r && unlabelled.ids[i] < unlabelled.ids[best])) {
        best = i;
        best_r = worst;
      }
    }
    taken[best] = 1;
    r.chosen.push_back(unlabelled.ids[best]);
    r.trace.push_back(std::sqrt(best_r));
    numcore::kernels::min_sq_distance_update(unlabelled.values, dim, unlabelled.row(best), dist);
    start = 1;
  }
  for (std::size_t round = start; round < budget; ++round) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      if (best == n || dist[i] > dist[best] || (dist[i] == dist[best] && unlabelled.ids[i] < unlabelled.ids[best])) {
        best = i;
      }
    }
    taken[best] = 1;
    r.chosen.push_back(unlabelled.ids[best]);
    r.trace.push_back(std::sqrt(dist[best]));
    numcore::kernels::min_sq_distance_update(unlabelled.values, dim, unlabelled.row(best), dist);
  }
  return r;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

SelectionResult entropy_select(std::span<const double> probs, std::size_t classes, std::span<const std::uint64_t> ids,
                               std::size_t budget) {
  if (classes == 0 || probs.size() != ids.size() * classes) {
    throw DimensionError("entropy_select: probabilities do not match ids x classes");
  }
  check_budget(budget, ids.size());
  check_distinct(ids);
  std::vector<double> h(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = probs.subspan(i * classes, classes);
    double s = 0.0;
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0)) throw NormalizationError("entropy_select: probability outside [0, 1]");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-5) {
      throw NormalizationError("entropy_select: distribution of id " + std::to_string(ids[i]) + " sums to " +
                               std::to_string(s));
    }
    h[i] = entropy(row);
  }
  return top(h, ids, budget);
}

SelectionResult random_select(std::span<const std::uint64_t> ids, std::size_t budget, Rng& rng) {
  check_budget(budget, ids.size());
  check_distinct(ids);
  std::vector<std::uint64_t> pool(ids.begin(), ids.end());
  SelectionResult r;
  // Partial Fisher-Yates: the first `budget` slots are the sample.
  for (std::size_t i = 0; i < budget; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(pool.size() - i));
    std::swap(pool[i], pool[j]);
    r.chosen.push_back(pool[i]);
    r.trace.push_back(0.0);
  }
  return r;
}

SelectionResult high_contrastive_select(std::span<const double> scores, std::span<const std::uint64_t> ids,
                                        std::size_t budget) {
  if (scores.size() != ids.size()) throw DimensionError("high_contrastive_select: scores and ids differ in count");
  check_budget(budget, ids.size());
  check_distinct(ids);
  for (double s : scores) {
    if (!std::isfinite(s)) throw ContractError("high_contrastive_select: non-finite score");
  }
  return top(scores, ids, budget);
}

double covering_radius(const FeatureMatrix& points, const FeatureMatrix& centers) {
  check_dims(points, centers);
  if (points.rows() == 0) return 0.0;
  if (centers.rows() == 0) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.rows(); ++c) nearest = std::min(nearest, sq_dist(points.row(i), centers.row(c)));
    worst = std::max(worst, nearest);
  }
  return std::sqrt(worst);
}

KCenterSolution brute_force_kcenter(const FeatureMatrix& points, const FeatureMatrix& existing, std::size_t budget) {
  validate(points);
  validate(existing);
  check_dims(points, existing);
  const std::size_t n = points.rows();
  check_budget(budget, n);
  // C(n, b) without overflow: stop once the bound is passed.
  double combos = 1.0;
  for (std::size_t i = 0; i < budget; ++i) combos = combos * static_cast<double>(n - i) / static_cast<double>(i + 1);
  if (combos > 1e6) throw ContractError("brute_force_kcenter: more than 10^6 subsets");

  std::vector<double> base(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < existing.rows(); ++c) base[i] = std::min(base[i], sq_dist(points.row(i), existing.row(c)));
  }
  std::vector<double> pair(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) pair[i * n + j] = sq_dist(points.row(i), points.row(j));
  }

  KCenterSolution best;
  double best_sq = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> pick(budget);
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  while (true) {
    double worst = 0.0;
    for (std::size_t i = 0; i < n && worst < best_sq; ++i) {
      double nearest = base[i];
      for (std::size_t c : pick) nearest = std::min(nearest, pair[i * n + c]);
      worst = std::max(worst, nearest);
    }
    if (worst < best_sq) {
      best_sq = worst;
      best.subset = pick;
    }
    // Next combination in lexicographic order.
    std::size_t k = budget;
    while (k > 0 && pick[k - 1] == n - budget + k - 1) --k;
    if (k == 0) break;
    ++pick[k - 1];
    for (std::size_t j = k; j < budget; ++j) pick[j] = pick[j - 1] + 1;
  }
  best.radius = n == 0 ? 0.0 : std::sqrt(best_sq);
  return best;
}

FeatureMatrix gather(const FeatureMatrix& m, std::span<const std::uint64_t> ids) {
  std::unordered_map<std::uint64_t, std::size_t> where;
  for (std::size_t i = 0; i < m.rows(); ++i) where.emplace(m.ids[i], i);
  FeatureMatrix out;
  out.dim = m.dim;
  for (std::uint64_t id : ids) {
    const auto it = where.find(id);
    if (it == where.end()) throw ContractError("gather: unknown id " + std::to_string(id));
    const auto row = m.row(it->second);
    out.values.insert(out.values.end(), row.begin(), row.end());
    out.ids.push_back(id);
  }
  return out;
}

}  // namespace mobyal::select
