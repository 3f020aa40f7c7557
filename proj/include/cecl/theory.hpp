#pragma once

// Alignment / uniformity of an embedding set, class centroid statistics,
// (sigma, delta) augmentation estimates and the centroid separation report.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cecl/encoder.hpp"
#include "cecl/kernels.hpp"

namespace cecl {

// Pools up to this size are enumerated; larger ones use sampled pairs.
inline constexpr int kFullEnumerationLimit = 64;
inline constexpr int kSampledPairs = 10000;

// Pair structure shared by both losses. labels[i] >= 0 is a class; -1 marks
// a delimiter, which is never a positive. is_anchor selects the rows whose
// pairs are averaged (all rows when empty).
struct PairStructure {
  std::vector<int> labels;
  std::vector<std::uint8_t> is_anchor;
};

// Mean squared distance over positive pairs (same label, distinct rows).
// Throws InputError when there is no positive pair.
double alignment_loss(const Matrix& embeddings, const PairStructure& structure,
                      Execution execution = default_execution());
// Minus the mean squared distance over non-positive pairs. Throws
// InputError when there is no such pair.
double uniformity_loss(const Matrix& embeddings, const PairStructure& structure,
                       Execution execution = default_execution());
// Both, with the sampled estimator beyond kFullEnumerationLimit rows.
struct AlignUniform {
  double align = 0.0;
  double uniform = 0.0;
  bool sampled = false;
};
AlignUniform align_uniform(const Matrix& embeddings, const PairStructure& structure, std::uint64_t seed,
                           Execution execution = default_execution());

struct ClusterStats {
  Matrix centroids;       // row k = mean embedding of class k
  std::vector<double> priors;
  Matrix inner_products;  // centroids * centroids^T
  double radius = 0.0;    // largest embedding norm
  std::vector<int> counts;
};

// Classes with no example get a zero centroid and prior 0.
ClusterStats cluster_stats(const Matrix& embeddings, std::span<const int> labels, int classes);

struct AugmentationStats {
  std::vector<double> sigma;  // per class: main-part fraction
  std::vector<double> delta;  // per class: main-part diameter under d_A
  double sigma_min = 0.0;
  double delta_max = 0.0;
  double epsilon = 0.0;
  double r_epsilon = 0.0;  // fraction of examples outside S_epsilon
};

// d_A(x_i, x_j) = min over sampled augmented views of |x_i' - x_j'|,
// returned as a dense matrix. Views are drawn per example from
// (seed, example index).
Matrix augmentation_distances(const Matrix& x, const AugmentSpec& augment, int views, std::uint64_t seed);

// Largest subset whose pairwise distances are all <= delta, grown greedily
// from every starting point. Returns member indices.
std::vector<int> main_part(const Matrix& distances, double delta);

// sigma/delta per class from d_A with the given target diameter, and
// S_epsilon membership from the largest pairwise embedding distance among
// each example's views. views must be at least 2.
AugmentationStats estimate_augmentation_stats(const Model& encoder, const Matrix& x, std::span<const int> labels,
                                              int classes, const AugmentSpec& augment, int views, double epsilon,
                                              double delta, std::uint64_t seed);

struct SeparationReport {
  double max_inner_with = 0.0;
  double mean_inner_with = 0.0;
  double max_inner_without = 0.0;
  double mean_inner_without = 0.0;
  double uniform_with = 0.0;
  double uniform_without = 0.0;
  double max_inner_difference = 0.0;  // without - with
  bool delimiters_reduced_max = false;
  bool separation_bound_raised = false;  // -L_uniform larger with delimiters
};

// Off-diagonal maximum and mean of a centroid inner-product matrix over
// classes that have examples. Throws DomainError for fewer than 2 classes.
std::pair<double, double> off_diagonal_max_mean(const ClusterStats& stats);

SeparationReport centroid_separation_report(const ClusterStats& with_delimiters, double uniform_with,
                                            const ClusterStats& without_delimiters, double uniform_without);

// report.json plus centroid_products.csv (condition, k, l, inner product).
void write_separation_report(const SeparationReport& report, const ClusterStats& with_delimiters,
                             const ClusterStats& without_delimiters, const std::filesystem::path& dir);

}  // namespace cecl
