#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mobyal/rng.hpp"

namespace mobyal::select {

// One feature row per pool member, row-major, plus the dataset id of each row.
struct FeatureMatrix {
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<std::uint64_t> ids;

  std::size_t rows() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

// Throws DimensionError when values and ids disagree, ContractError on a
// non-finite entry.
void validate(const FeatureMatrix& m);

struct SelectionResult {
  std::vector<std::uint64_t> chosen;  // in pick order
  std::vector<double> trace;          // score of each pick, same order
};

// k-Center greedy. Centers start at the labelled rows; each round picks the
// unlabelled row farthest from its nearest center (ties: smallest id). The
// trace holds that distance. With no labelled rows the first pick is the row
// whose farthest neighbour is nearest (1-center), traced with that radius.
SelectionResult coreset_select(const FeatureMatrix& labelled, const FeatureMatrix& unlabelled, std::size_t budget);

// Shannon entropy in nats; 0 log 0 = 0.
double entropy(std::span<const double> p);

// probs is [ids.size() x classes]; every row must sum to 1 within 1e-5.
// Picks the highest-entropy rows, ties by smallest id.
SelectionResult entropy_select(std::span<const double> probs, std::size_t classes,
                               std::span<const std::uint64_t> ids, std::size_t budget);

// Uniform without replacement.
SelectionResult random_select(std::span<const std::uint64_t> ids, std::size_t budget, Rng& rng);

// Highest scores first, ties by smallest id.
SelectionResult high_contrastive_select(std::span<const double> scores, std::span<const std::uint64_t> ids,
                                        std::size_t budget);

// max over points of the distance to the nearest center.
double covering_radius(const FeatureMatrix& points, const FeatureMatrix& centers);

struct KCenterSolution {
  double radius = 0.0;
  std::vector<std::size_t> subset;  // row indices into points, ascending
};

// Exhaustive k-center over subsets of points of size budget, with existing
// centers always present. Lexicographically first optimal subset. Throws
// ContractError when C(rows, budget) exceeds 10^6.
KCenterSolution brute_force_kcenter(const FeatureMatrix& points, const FeatureMatrix& existing, std::size_t budget);

// Rows of m at the given ids, in that order.
FeatureMatrix gather(const FeatureMatrix& m, std::span<const std::uint64_t> ids);

}  // namespace mobyal::select
