#pragma once

// Desk-scale open-set noisy datasets: clean source corpora, known/unknown
// class splits, and closed-set plus open-set label corruption.
//
// Labels are stored as class indices; an index k stands for the one-hot
// vector with a single 1 at position k. Given labels live in [0, c), truth
// labels in [0, c] where c is the open-set sentinel.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cecl/types.hpp"

namespace cecl {

enum class Split : std::uint8_t { train = 0, test = 1 };

struct CleanCorpus {
  Matrix features;          // one example per row
  std::vector<int> labels;  // true class in [0, class_count)
  std::vector<Split> split;
  int class_count = 0;
  ImageShape image;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(features.cols()); }
  // Throws InputError when rows, labels and split tags disagree or a label
  // is out of range.
  void validate() const;
};

enum class NoiseKind { symmetric, asymmetric };

std::string to_string(NoiseKind kind);
NoiseKind noise_kind_from_string(const std::string& name);

struct NoiseSpec {
  int known_class_count = 2;
  NoiseKind kind = NoiseKind::symmetric;
  double noise_rate = 0.0;
  // Fraction of the training set drawn from unknown classes.
  double open_set_fraction = 0.0;
  std::uint64_t seed = 0;
  // Corpus class ids to treat as unknown. Empty means a random split.
  std::vector<int> unknown_classes;
  // Asymmetric closed-set map over known indices. Empty means k -> (k+1) mod c.
  std::vector<int> pair_map;
  // Asymmetric label for the i-th unknown class. Empty means i mod c.
  std::vector<int> open_set_map;

  void validate(int total_classes) const;
};

struct ClassSplit {
  std::vector<int> known;    // sorted corpus ids; position = known index
  std::vector<int> unknown;  // sorted corpus ids
};

struct NoisyExample {
  Vector feature;
  int given = 0;  // in [0, c)
  int truth = 0;  // in [0, c]; c = open set
  int example_id = 0;
};

struct NoisyDataset {
  Matrix features;
  std::vector<int> given;
  std::vector<int> truth;
  std::vector<int> source_class;  // corpus class id before remapping
  Matrix test_features;
  std::vector<int> test_labels;  // known indices only
  int c = 0;
  int total_classes = 0;
  ClassSplit classes;
  NoiseSpec provenance;
  ImageShape image;

  int size() const { return static_cast<int>(given.size()); }
  int dim() const { return static_cast<int>(features.cols()); }
  int open_set_index() const { return c; }
  bool is_open_set(int i) const { return truth[static_cast<std::size_t>(i)] == c; }
  NoisyExample example(int i) const;
  // Throws InputError when an invariant is broken.
  void validate() const;
};

// Randomly selects c known classes out of total; deterministic in seed.
ClassSplit split_known_unknown(int total_classes, int c, std::uint64_t seed);
ClassSplit split_known_unknown(const CleanCorpus& corpus, int c, std::uint64_t seed);

// Exactly round(rate * n) examples are selected and moved to a uniformly
// drawn different known class.
std::vector<int> inject_symmetric_noise(std::span<const int> labels, double rate,
                                        int c, std::uint64_t seed);

// Exactly round(rate * n) examples are selected and mapped through
// pair_map. pair_map must be in range and have no fixed point.
std::vector<int> inject_asymmetric_noise(std::span<const int> labels, double rate,
                                         std::span<const int> pair_map,
                                         std::uint64_t seed);

std::vector<int> cyclic_pair_map(int c);

NoisyDataset build_open_set_noise(const CleanCorpus& corpus, const NoiseSpec& spec);

struct OverlapPair {
  int unknown_class = 0;
  int known_class = 0;
  // Distance between the two class centers; 0 puts them on top of each other.
  double level = 0.0;
};

struct BlobSpec {
  int total_classes = 6;
  int n_per_class = 100;
  int n_test_per_class = 0;
  int dim = 2;
  // Only the first informative_dims coordinates carry class signal; the rest
  // are pure noise. 0 means all coordinates.
  int informative_dims = 0;
  double center_spread = 5.0;
  double stddev = 1.0;
  std::vector<OverlapPair> overlap_pairs;
  std::uint64_t seed = 0;
};

// Gaussian clusters. Each overlap pair places the unknown-class center at
// distance `level` from the known-class center in a random direction.
CleanCorpus make_synthetic_blobs(const BlobSpec& spec);

struct ImageCorpusSpec {
  int total_classes = 6;
  int n_per_class = 100;
  int n_test_per_class = 0;
  int channels = 1;
  int size = 12;  // square images
  double pixel_noise = 0.3;
  std::vector<OverlapPair> overlap_pairs;  // level in [0, 1]: template mixing
  std::uint64_t seed = 0;
};

// Small textured images: each class is a random mixture of oriented
// gratings, examples are randomly shifted noisy copies of the template.
CleanCorpus make_synthetic_images(const ImageCorpusSpec& spec);

}  // namespace cecl
