#include "cecl/kernels.hpp"

#include <atomic>
#include <cmath>
#include <limits>

#include "cecl/errors.hpp"

namespace cecl {

namespace {

std::atomic<Execution> g_execution{Execution::parallel};

struct AnchorResult {
  double loss = 0.0;
  int positives = 0;
};

AnchorResult contrastive_row(const Matrix& pool, int anchor_row, int anchor_label,
                             std::span<const int> pool_labels,
                             std::span<const std::uint8_t> eligible,
                             std::span<const std::uint8_t> included, double inv_t,
                             Eigen::Ref<RowVector> coeff) {
  const Eigen::Index rows = pool.rows();
  coeff.setZero();
  const auto anchor = pool.row(anchor_row);

  double max_logit = -std::numeric_limits<double>::infinity();
  int positives = 0;
  for (Eigen::Index a = 0; a < rows; ++a) {
    if (a == anchor_row || !included[static_cast<std::size_t>(a)]) continue;
    const double logit = anchor.dot(pool.row(a)) * inv_t;
    coeff(a) = logit;
    max_logit = std::max(max_logit, logit);
    if (eligible[static_cast<std::size_t>(a)] && pool_labels[static_cast<std::size_t>(a)] == anchor_label) {
      ++positives;
    }
  }
  if (positives == 0) {
    coeff.setZero();
    return {};
  }
  double denom = 0.0;
  for (Eigen::Index a = 0; a < rows; ++a) {
    if (a == anchor_row || !included[static_cast<std::size_t>(a)]) continue;
    denom += std::exp(coeff(a) - max_logit);
  }
  const double log_denom = max_logit + std::log(denom);
  const double inv_p = 1.0 / positives;
  double positive_logits = 0.0;
  for (Eigen::Index a = 0; a < rows; ++a) {
    if (a == anchor_row || !included[static_cast<std::size_t>(a)]) continue;
    const double logit = coeff(a);
    double g = std::exp(logit - log_denom);
    if (eligible[static_cast<std::size_t>(a)] && pool_labels[static_cast<std::size_t>(a)] == anchor_label) {
      positive_logits += logit;
      g -= inv_p;
    }
    coeff(a) = g;
  }
  return {log_denom - positive_logits * inv_p, positives};
}

void anchor_pair_sums(const Matrix& embeddings, std::span<const int> labels, Eigen::Index m,
                      double& pos, double& neg, std::int64_t& n_pos, std::int64_t& n_neg) {
  const auto anchor = embeddings.row(m);
  const int label = labels[static_cast<std::size_t>(m)];
  for (Eigen::Index t = 0; t < embeddings.rows(); ++t) {
    if (t == m) continue;
    const double d2 = (anchor - embeddings.row(t)).squaredNorm();
    if (label >= 0 && labels[static_cast<std::size_t>(t)] == label) {
      pos += d2;
      ++n_pos;
    } else {
      neg += d2;
      ++n_neg;
    }
  }
}

}  // namespace

void set_default_execution(Execution execution) { g_execution = execution; }
Execution default_execution() { return g_execution; }

ContrastiveRows contrastive_rows(const Matrix& pool, std::span<const int> anchor_rows,
                                 std::span<const int> anchor_labels,
                                 std::span<const int> pool_labels,
                                 std::span<const std::uint8_t> eligible,
                                 std::span<const std::uint8_t> included, double temperature,
                                 Execution execution) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  const auto rows = static_cast<std::size_t>(pool.rows());
  if (pool_labels.size() != rows || eligible.size() != rows || included.size() != rows ||
      anchor_rows.size() != anchor_labels.size()) {
    throw InternalError("contrastive_rows: inconsistent pool metadata");
  }
  const auto n = static_cast<Eigen::Index>(anchor_rows.size());
  ContrastiveRows out;
  out.loss.assign(anchor_rows.size(), 0.0);
  out.positive_count.assign(anchor_rows.size(), 0);
  out.coeff = Matrix::Zero(n, pool.rows());
  const double inv_t = 1.0 / temperature;

  auto run = [&](Eigen::Index i) {
    const auto k = static_cast<std::size_t>(i);
    AnchorResult r = contrastive_row(pool, anchor_rows[k], anchor_labels[k], pool_labels, eligible,
                                     included, inv_t, out.coeff.row(i));
    out.loss[k] = r.loss;
    out.positive_count[k] = r.positives;
  };
  if (execution == Execution::parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) run(i);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) run(i);
  }
  return out;
}

PairSums pair_sums(const Matrix& embeddings, std::span<const int> labels,
                   std::span<const std::uint8_t> is_anchor, Execution execution) {
  const Eigen::Index n = embeddings.rows();
  std::vector<double> pos(static_cast<std::size_t>(n), 0.0), neg(static_cast<std::size_t>(n), 0.0);
  std::vector<std::int64_t> n_pos(static_cast<std::size_t>(n), 0), n_neg(static_cast<std::size_t>(n), 0);
  auto run = [&](Eigen::Index m) {
    const auto k = static_cast<std::size_t>(m);
    if (!is_anchor[k]) return;
    anchor_pair_sums(embeddings, labels, m, pos[k], neg[k], n_pos[k], n_neg[k]);
  };
  if (execution == Execution::parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index m = 0; m < n; ++m) run(m);
  } else {
    for (Eigen::Index m = 0; m < n; ++m) run(m);
  }
  PairSums sums;
  for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
    sums.positive_sum += pos[k];
    sums.negative_sum += neg[k];
    sums.positive_pairs += n_pos[k];
    sums.negative_pairs += n_neg[k];
  }
  return sums;
}

PairSums pair_sums_sampled(const Matrix& embeddings, std::span<const int> labels,
                           std::span<const std::pair<int, int>> pairs, Execution execution) {
  const auto n = static_cast<std::ptrdiff_t>(pairs.size());
  std::vector<double> d2(pairs.size());
  auto run = [&](std::ptrdiff_t p) {
    const auto& [m, t] = pairs[static_cast<std::size_t>(p)];
    d2[static_cast<std::size_t>(p)] = (embeddings.row(m) - embeddings.row(t)).squaredNorm();
  };
  if (execution == Execution::parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < n; ++p) run(p);
  } else {
    for (std::ptrdiff_t p = 0; p < n; ++p) run(p);
  }
  PairSums sums;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& [m, t] = pairs[p];
    const int label = labels[static_cast<std::size_t>(m)];
    if (label >= 0 && labels[static_cast<std::size_t>(t)] == label) {
      sums.positive_sum += d2[p];
      ++sums.positive_pairs;
    } else {
      sums.negative_sum += d2[p];
      ++sums.negative_pairs;
    }
  }
  return sums;
}

}  // namespace cecl
