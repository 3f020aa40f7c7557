#pragma once

// Data-parallel inner loops. Each kernel has a serial path (the reference
// used by tests and --deterministic runs) and an OpenMP path. Both paths
// produce bit-identical results: parallel loops write per-item partials and
// the reduction happens afterwards in index order.

#include <cstdint>
#include <span>
#include <vector>

#include "cecl/types.hpp"

namespace cecl {

enum class Execution { serial, parallel };

void set_default_execution(Execution execution);
Execution default_execution();

// Per-anchor pieces of the supervised contrastive loss over a pool.
//
// Anchor i sits at pool row anchor_rows[i] and is excluded from its own
// contrast set. Row a is a positive for anchor i when it is included,
// eligible, and pool_labels[a] == anchor_labels[i]. For each anchor the
// kernel returns
//   loss[i]      = -(1/|P|) sum_{p in P} log softmax_p(q_i . v / t)
//   coeff(i, a)  = d loss[i] / d logit_a = softmax_a - [a in P] / |P|
// with loss 0 and a zero row when P is empty. Excluded rows have zero
// coefficients.
struct ContrastiveRows {
  std::vector<double> loss;
  std::vector<int> positive_count;
  Matrix coeff;
};

ContrastiveRows contrastive_rows(const Matrix& pool, std::span<const int> anchor_rows,
                                 std::span<const int> anchor_labels,
                                 std::span<const int> pool_labels,
                                 std::span<const std::uint8_t> eligible,
                                 std::span<const std::uint8_t> included, double temperature,
                                 Execution execution = default_execution());

// Sums of squared distances from each anchor to its positives (same
// non-negative label, different row) and to everything else.
struct PairSums {
  double positive_sum = 0.0;
  double negative_sum = 0.0;
  std::int64_t positive_pairs = 0;
  std::int64_t negative_pairs = 0;
};

// labels[a] < 0 means the row is never a positive (delimiter).
PairSums pair_sums(const Matrix& embeddings, std::span<const int> labels,
                   std::span<const std::uint8_t> is_anchor,
                   Execution execution = default_execution());

// Same sums over an explicit list of (anchor, other) pairs.
PairSums pair_sums_sampled(const Matrix& embeddings, std::span<const int> labels,
                           std::span<const std::pair<int, int>> pairs,
                           Execution execution = default_execution());

}  // namespace cecl
