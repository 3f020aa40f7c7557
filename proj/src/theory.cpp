#include "cecl/theory.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <tuple>

#include <json.hpp>

#include "cecl/errors.hpp"
#include "cecl/rng.hpp"

namespace cecl {

namespace {

std::vector<std::uint8_t> anchors_or_all(const PairStructure& s, Eigen::Index n) {
  if (static_cast<Eigen::Index>(s.labels.size()) != n) throw InputError("one label per embedding required");
  if (s.is_anchor.empty()) return std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1);
  if (static_cast<Eigen::Index>(s.is_anchor.size()) != n) throw InputError("one anchor flag per embedding required");
  return s.is_anchor;
}

double finish_alignment(const PairSums& sums) {
  if (sums.positive_pairs == 0) throw InputError("alignment needs at least one positive pair");
  return sums.positive_sum / static_cast<double>(sums.positive_pairs);
}

double finish_uniformity(const PairSums& sums) {
  if (sums.negative_pairs == 0) throw InputError("uniformity needs at least one non-positive pair");
  return -sums.negative_sum / static_cast<double>(sums.negative_pairs);
}

}  // namespace

double alignment_loss(const Matrix& embeddings, const PairStructure& structure, Execution execution) {
  const auto anchors = anchors_or_all(structure, embeddings.rows());
  return finish_alignment(pair_sums(embeddings, structure.labels, anchors, execution));
}

double uniformity_loss(const Matrix& embeddings, const PairStructure& structure, Execution execution) {
  const auto anchors = anchors_or_all(structure, embeddings.rows());
  return finish_uniformity(pair_sums(embeddings, structure.labels, anchors, execution));
}

AlignUniform align_uniform(const Matrix& embeddings, const PairStructure& structure, std::uint64_t seed,
                           Execution execution) {
  const auto anchors = anchors_or_all(structure, embeddings.rows());
  const auto n = static_cast<int>(embeddings.rows());
  AlignUniform out;
  PairSums sums;
  if (n <= kFullEnumerationLimit) {
    sums = pair_sums(embeddings, structure.labels, anchors, execution);
  } else {
    std::vector<int> anchor_ids;
    for (int i = 0; i < n; ++i) {
      if (anchors[static_cast<std::size_t>(i)]) anchor_ids.push_back(i);
    }
    if (anchor_ids.empty()) throw InputError("no anchor rows");
    Rng rng(seed);
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(kSampledPairs);
    for (int p = 0; p < kSampledPairs; ++p) {
      const int m = anchor_ids[rng.uniform_index(anchor_ids.size())];
      int t = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n - 1)));
      if (t >= m) ++t;
      pairs.emplace_back(m, t);
    }
    sums = pair_sums_sampled(embeddings, structure.labels, pairs, execution);
    out.sampled = true;
  }
  out.align = sums.positive_pairs > 0 ? finish_alignment(sums) : 0.0;
  out.uniform = finish_uniformity(sums);
  return out;
}

ClusterStats cluster_stats(const Matrix& embeddings, std::span<const int> labels, int classes) {
  if (static_cast<Eigen::Index>(labels.size()) != embeddings.rows()) {
    throw InputError("cluster_stats: one label per embedding required");
  }
  ClusterStats s;
  s.centroids = Matrix::Zero(classes, embeddings.cols());
  s.counts.assign(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i];
    if (k < 0 || k >= classes) throw InputError("cluster_stats: label out of range");
    s.centroids.row(k) += embeddings.row(static_cast<Eigen::Index>(i));
    ++s.counts[static_cast<std::size_t>(k)];
    s.radius = std::max(s.radius, embeddings.row(static_cast<Eigen::Index>(i)).norm());
  }
  s.priors.assign(static_cast<std::size_t>(classes), 0.0);
  for (int k = 0; k < classes; ++k) {
    const int count = s.counts[static_cast<std::size_t>(k)];
    if (count > 0) {
      s.centroids.row(k) /= count;
      s.priors[static_cast<std::size_t>(k)] = static_cast<double>(count) / static_cast<double>(labels.size());
    }
  }
  s.inner_products = s.centroids * s.centroids.transpose();
  return s;
}

Matrix augmentation_distances(const Matrix& x, const AugmentSpec& augment, int views, std::uint64_t seed) {
  if (views < 1) throw InputError("need at least one view");
  std::vector<int> ids(static_cast<std::size_t>(x.rows()));
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<Matrix> v;
  for (int a = 0; a < views; ++a) v.push_back(augment_batch(x, ids, augment, seed, static_cast<std::uint64_t>(a)));
  const Eigen::Index n = x.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (int a = 0; a < views; ++a) {
        for (int b = 0; b < views; ++b) {
          best = std::min(best, (v[static_cast<std::size_t>(a)].row(i) - v[static_cast<std::size_t>(b)].row(j)).norm());
        }
      }
      d(i, j) = d(j, i) = best;
    }
  }
  return d;
}

std::vector<int> main_part(const Matrix& distances, double delta) {
  const auto n = static_cast<int>(distances.rows());
  std::vector<int> best;
  double best_diameter = 0.0;
  for (int s = 0; s < n; ++s) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return distances(s, a) < distances(s, b); });
    std::vector<int> members{s};
    double diameter = 0.0;
    for (int c : order) {
      if (c == s) continue;
      double far = 0.0;
      for (int m : members) far = std::max(far, distances(c, m));
      if (far <= delta) {
        members.push_back(c);
        diameter = std::max(diameter, far);
      }
    }
    if (members.size() > best.size() || (members.size() == best.size() && diameter < best_diameter)) {
      best = members;
      best_diameter = diameter;
    }
  }
  std::sort(best.begin(), best.end());
  return best;
}

AugmentationStats estimate_augmentation_stats(const Model& encoder, const Matrix& x, std::span<const int> labels,
                                              int classes, const AugmentSpec& augment, int views, double epsilon,
                                              double delta, std::uint64_t seed) {
  if (views < 2) throw InputError("augmentation statistics need at least 2 views per example");
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw InputError("one label per example required");
  AugmentationStats stats;
  stats.epsilon = epsilon;
  for (int k = 0; k < classes; ++k) {
    std::vector<int> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == k) rows.push_back(static_cast<int>(i));
    }
    if (rows.empty()) {
      stats.sigma.push_back(0.0);
      stats.delta.push_back(0.0);
      continue;
    }
    Matrix xs(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) xs.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
    const Matrix d = augmentation_distances(xs, augment, views, derive_seed(seed, {static_cast<std::uint64_t>(k)}));
    const std::vector<int> part = main_part(d, delta);
    double diameter = 0.0;
    for (int a : part) {
      for (int b : part) diameter = std::max(diameter, d(a, b));
    }
    stats.sigma.push_back(static_cast<double>(part.size()) / static_cast<double>(rows.size()));
    stats.delta.push_back(diameter);
  }
  stats.sigma_min = 1.0;
  for (std::size_t k = 0; k < stats.sigma.size(); ++k) {
    if (stats.sigma[k] > 0.0) stats.sigma_min = std::min(stats.sigma_min, stats.sigma[k]);
    stats.delta_max = std::max(stats.delta_max, stats.delta[k]);
  }

  std::vector<int> ids(static_cast<std::size_t>(x.rows()));
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<Matrix> embedded;
  for (int a = 0; a < views; ++a) {
    embedded.push_back(encoder.embed(augment_batch(x, ids, augment, derive_seed(seed, {1000}), static_cast<std::uint64_t>(a))));
  }
  int outside = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double spread = 0.0;
    for (int a = 0; a < views; ++a) {
      for (int b = a + 1; b < views; ++b) {
        spread = std::max(spread, (embedded[static_cast<std::size_t>(a)].row(i) - embedded[static_cast<std::size_t>(b)].row(i)).norm());
      }
    }
    outside += spread > epsilon;
  }
  stats.r_epsilon = x.rows() > 0 ? static_cast<double>(outside) / static_cast<double>(x.rows()) : 0.0;
  return stats;
}

std::pair<double, double> off_diagonal_max_mean(const ClusterStats& stats) {
  std::vector<int> present;
  for (std::size_t k = 0; k < stats.counts.size(); ++k) {
    if (stats.counts[k] > 0) present.push_back(static_cast<int>(k));
  }
  if (present.size() < 2) throw DomainError("centroid separation needs at least 2 classes");
  double max_inner = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  int pairs = 0;
  for (int k : present) {
    for (int l : present) {
      if (k == l) continue;
      max_inner = std::max(max_inner, stats.inner_products(k, l));
      sum += stats.inner_products(k, l);
      ++pairs;
    }
  }
  return {max_inner, sum / pairs};
}

SeparationReport centroid_separation_report(const ClusterStats& with_delimiters, double uniform_with,
                                            const ClusterStats& without_delimiters, double uniform_without) {
  SeparationReport r;
  std::tie(r.max_inner_with, r.mean_inner_with) = off_diagonal_max_mean(with_delimiters);
  std::tie(r.max_inner_without, r.mean_inner_without) = off_diagonal_max_mean(without_delimiters);
  r.uniform_with = uniform_with;
  r.uniform_without = uniform_without;
  r.max_inner_difference = r.max_inner_without - r.max_inner_with;
  r.delimiters_reduced_max = r.max_inner_with < r.max_inner_without;
  r.separation_bound_raised = -uniform_with > -uniform_without;
  return r;
}

void write_separation_report(const SeparationReport& report, const ClusterStats& with_delimiters,
                             const ClusterStats& without_delimiters, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const nlohmann::json j = {
      {"format", "cecl-separation"},
      {"version", 1},
      {"max_inner_with", report.max_inner_with},
      {"mean_inner_with", report.mean_inner_with},
      {"max_inner_without", report.max_inner_without},
      {"mean_inner_without", report.mean_inner_without},
      {"uniform_with", report.uniform_with},
      {"uniform_without", report.uniform_without},
      {"max_inner_difference", report.max_inner_difference},
      {"delimiters_reduced_max", report.delimiters_reduced_max},
      {"separation_bound_raised", report.separation_bound_raised},
  };
  std::ofstream(dir / "report.json") << j.dump(1) << '\n';
  std::ofstream csv(dir / "centroid_products.csv");
  csv.precision(17);
  csv << "condition,k,l,inner_product\n";
  auto rows = [&](const char* name, const ClusterStats& s) {
    for (Eigen::Index k = 0; k < s.inner_products.rows(); ++k) {
      for (Eigen::Index l = 0; l < s.inner_products.cols(); ++l) {
        csv << name << ',' << k << ',' << l << ',' << s.inner_products(k, l) << '\n';
      }
    }
  };
  rows("with", with_delimiters);
  rows("without", without_delimiters);
}

}  // namespace cecl
