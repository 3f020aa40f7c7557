#include "cecl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cecl/errors.hpp"
#include "cecl/rng.hpp"

namespace cecl {

namespace {

enum SeedStream : std::uint64_t {
  kSplitStream = 1,
  kClosedSetStream = 2,
  kOpenSelectStream = 3,
  kOpenLabelStream = 4,
};

std::size_t selected_count(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
}

void check_rate(double rate, const char* what) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ConfigError(std::string(what) + " must lie in [0, 1]");
  }
}

void check_pair_map(std::span<const int> pair_map) {
  const int c = static_cast<int>(pair_map.size());
  for (int k = 0; k < c; ++k) {
    const int target = pair_map[static_cast<std::size_t>(k)];
    if (target < 0 || target >= c) {
      throw ConfigError("pair_map target out of range for class " + std::to_string(k));
    }
    if (target == k) {
      throw ConfigError("pair_map has a fixed point at class " + std::to_string(k));
    }
  }
}

}  // namespace

void CleanCorpus::validate() const {
  if (class_count < 1) throw InputError("corpus has no classes");
  if (features.rows() != size() || split.size() != labels.size()) {
    throw InputError("corpus rows, labels and split tags disagree");
  }
  for (int label : labels) {
    if (label < 0 || label >= class_count) throw InputError("corpus label out of range");
  }
  if (image.is_image() && image.size() != dim()) {
    throw InputError("image shape does not match feature dimension");
  }
}

std::string to_string(NoiseKind kind) {
  return kind == NoiseKind::symmetric ? "symmetric" : "asymmetric";
}

NoiseKind noise_kind_from_string(const std::string& name) {
  if (name == "symmetric" || name == "sym") return NoiseKind::symmetric;
  if (name == "asymmetric" || name == "asym") return NoiseKind::asymmetric;
  throw ConfigError("unknown noise kind '" + name + "'");
}

void NoiseSpec::validate(int total_classes) const {
  if (known_class_count < 2) throw ConfigError("known class count must be at least 2");
  if (known_class_count > total_classes) {
    throw ConfigError("known class count exceeds corpus class count");
  }
  check_rate(noise_rate, "noise_rate");
  check_rate(open_set_fraction, "open_set_fraction");
  if (!unknown_classes.empty()) {
    if (static_cast<int>(unknown_classes.size()) != total_classes - known_class_count) {
      throw ConfigError("explicit unknown class list has the wrong size");
    }
    std::vector<int> sorted = unknown_classes;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("explicit unknown class list has duplicates");
    }
    for (int id : sorted) {
      if (id < 0 || id >= total_classes) throw ConfigError("unknown class id out of range");
    }
  }
  if (!pair_map.empty()) {
    if (static_cast<int>(pair_map.size()) != known_class_count) {
      throw ConfigError("pair_map must have one entry per known class");
    }
    check_pair_map(pair_map);
  }
  for (int target : open_set_map) {
    if (target < 0 || target >= known_class_count) {
      throw ConfigError("open_set_map target out of range");
    }
  }
}

NoisyExample NoisyDataset::example(int i) const {
  const auto row = static_cast<Eigen::Index>(i);
  return NoisyExample{features.row(row).transpose(), given[static_cast<std::size_t>(i)],
                      truth[static_cast<std::size_t>(i)], i};
}

void NoisyDataset::validate() const {
  const auto n = static_cast<std::size_t>(features.rows());
  if (given.size() != n || truth.size() != n || source_class.size() != n) {
    throw InputError("dataset columns have different lengths");
  }
  if (test_features.rows() != static_cast<Eigen::Index>(test_labels.size())) {
    throw InputError("test features and labels disagree");
  }
  if (n > 0 && test_features.rows() > 0 && test_features.cols() != features.cols()) {
    throw InputError("train and test feature dimensions disagree");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (given[i] < 0 || given[i] >= c) throw InputError("given label outside known classes");
    if (truth[i] < 0 || truth[i] > c) throw InputError("truth label out of range");
    const bool unknown_source =
        std::binary_search(classes.unknown.begin(), classes.unknown.end(), source_class[i]);
    if ((truth[i] == c) != unknown_source) {
      throw InputError("open-set truth disagrees with the class split");
    }
  }
  for (int label : test_labels) {
    if (label < 0 || label >= c) throw InputError("test label outside known classes");
  }
}

ClassSplit split_known_unknown(int total_classes, int c, std::uint64_t seed) {
  if (c < 2 || c >= total_classes) {
    throw ConfigError("known class count must satisfy 2 <= c < total classes");
  }
  Rng rng(derive_seed(seed, {kSplitStream}));
  std::vector<std::size_t> order = rng.permutation(static_cast<std::size_t>(total_classes));
  ClassSplit result;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (static_cast<int>(i) < c ? result.known : result.unknown).push_back(static_cast<int>(order[i]));
  }
  std::sort(result.known.begin(), result.known.end());
  std::sort(result.unknown.begin(), result.unknown.end());
  return result;
}

ClassSplit split_known_unknown(const CleanCorpus& corpus, int c, std::uint64_t seed) {
  return split_known_unknown(corpus.class_count, c, seed);
}

std::vector<int> inject_symmetric_noise(std::span<const int> labels, double rate, int c,
                                        std::uint64_t seed) {
  check_rate(rate, "noise_rate");
  if (c < 2) throw ConfigError("symmetric noise needs at least 2 classes");
  std::vector<int> noisy(labels.begin(), labels.end());
  for (int label : noisy) {
    if (label < 0 || label >= c) throw InputError("label outside known classes");
  }
  Rng rng(seed);
  const std::vector<std::size_t> order = rng.permutation(noisy.size());
  const std::size_t flips = selected_count(rate, noisy.size());
  for (std::size_t i = 0; i < flips; ++i) {
    int& label = noisy[order[i]];
    int target = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(c - 1)));
    if (target >= label) ++target;
    label = target;
  }
  return noisy;
}

std::vector<int> inject_asymmetric_noise(std::span<const int> labels, double rate,
                                         std::span<const int> pair_map, std::uint64_t seed) {
  check_rate(rate, "noise_rate");
  check_pair_map(pair_map);
  const int c = static_cast<int>(pair_map.size());
  std::vector<int> noisy(labels.begin(), labels.end());
  for (int label : noisy) {
    if (label < 0 || label >= c) throw InputError("label outside pair_map domain");
  }
  Rng rng(seed);
  const std::vector<std::size_t> order = rng.permutation(noisy.size());
  const std::size_t flips = selected_count(rate, noisy.size());
  for (std::size_t i = 0; i < flips; ++i) {
    int& label = noisy[order[i]];
    label = pair_map[static_cast<std::size_t>(label)];
  }
  return noisy;
}

std::vector<int> cyclic_pair_map(int c) {
  std::vector<int> map(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) map[static_cast<std::size_t>(k)] = (k + 1) % c;
  return map;
}

NoisyDataset build_open_set_noise(const CleanCorpus& corpus, const NoiseSpec& spec) {
  corpus.validate();
  spec.validate(corpus.class_count);
  const int c = spec.known_class_count;

  ClassSplit classes;
  if (spec.unknown_classes.empty()) {
    if (c == corpus.class_count) {
      for (int k = 0; k < c; ++k) classes.known.push_back(k);
    } else {
      classes = split_known_unknown(corpus, c, spec.seed);
    }
  } else {
    classes.unknown = spec.unknown_classes;
    std::sort(classes.unknown.begin(), classes.unknown.end());
    for (int k = 0; k < corpus.class_count; ++k) {
      if (!std::binary_search(classes.unknown.begin(), classes.unknown.end(), k)) {
        classes.known.push_back(k);
      }
    }
  }
  if (spec.open_set_fraction > 0.0 && classes.unknown.empty()) {
    throw ConfigError("open_set_fraction > 0 but there are no unknown classes");
  }

  std::vector<int> known_index(static_cast<std::size_t>(corpus.class_count), -1);
  std::vector<int> unknown_position(static_cast<std::size_t>(corpus.class_count), -1);
  for (std::size_t i = 0; i < classes.known.size(); ++i) {
    known_index[static_cast<std::size_t>(classes.known[i])] = static_cast<int>(i);
  }
  for (std::size_t i = 0; i < classes.unknown.size(); ++i) {
    unknown_position[static_cast<std::size_t>(classes.unknown[i])] = static_cast<int>(i);
  }

  std::vector<int> known_rows, unknown_rows, test_rows;
  for (int row = 0; row < corpus.size(); ++row) {
    const int label = corpus.labels[static_cast<std::size_t>(row)];
    const bool known = known_index[static_cast<std::size_t>(label)] >= 0;
    if (corpus.split[static_cast<std::size_t>(row)] == Split::test) {
      if (known) test_rows.push_back(row);
    } else {
      (known ? known_rows : unknown_rows).push_back(row);
    }
  }

  // Closed-set corruption of the known-class training labels.
  std::vector<int> clean_known;
  clean_known.reserve(known_rows.size());
  for (int row : known_rows) {
    clean_known.push_back(known_index[static_cast<std::size_t>(corpus.labels[static_cast<std::size_t>(row)])]);
  }
  const std::uint64_t closed_seed = derive_seed(spec.seed, {kClosedSetStream});
  std::vector<int> pair_map = spec.pair_map.empty() ? cyclic_pair_map(c) : spec.pair_map;
  const std::vector<int> noisy_known =
      spec.kind == NoiseKind::symmetric
          ? inject_symmetric_noise(clean_known, spec.noise_rate, c, closed_seed)
          : inject_asymmetric_noise(clean_known, spec.noise_rate, pair_map, closed_seed);

  // Open-set examples: pick enough unknown-class rows to reach the requested
  // fraction of the final training set.
  std::vector<int> chosen_unknown;
  if (spec.open_set_fraction > 0.0) {
    const double n_known = static_cast<double>(known_rows.size());
    std::size_t wanted;
    if (spec.open_set_fraction >= 1.0) {
      if (!known_rows.empty()) {
        throw ConfigError("open_set_fraction = 1 requires a corpus without known-class rows");
      }
      wanted = unknown_rows.size();
    } else {
      wanted = static_cast<std::size_t>(
          std::llround(spec.open_set_fraction * n_known / (1.0 - spec.open_set_fraction)));
    }
    if (wanted > unknown_rows.size()) {
      throw ConfigError("corpus has " + std::to_string(unknown_rows.size()) +
                        " unknown-class rows, open_set_fraction needs " + std::to_string(wanted));
    }
    Rng select(derive_seed(spec.seed, {kOpenSelectStream}));
    std::vector<std::size_t> order = select.permutation(unknown_rows.size());
    order.resize(wanted);
    std::sort(order.begin(), order.end());
    for (std::size_t pos : order) chosen_unknown.push_back(unknown_rows[pos]);
  }
  Rng open_labels(derive_seed(spec.seed, {kOpenLabelStream}));
  std::vector<int> open_given;
  open_given.reserve(chosen_unknown.size());
  for (int row : chosen_unknown) {
    if (spec.kind == NoiseKind::symmetric) {
      open_given.push_back(static_cast<int>(open_labels.uniform_index(static_cast<std::uint64_t>(c))));
    } else {
      const int position = unknown_position[static_cast<std::size_t>(corpus.labels[static_cast<std::size_t>(row)])];
      open_given.push_back(spec.open_set_map.empty()
                               ? position % c
                               : spec.open_set_map[static_cast<std::size_t>(position) % spec.open_set_map.size()]);
    }
  }

  // Merge back into corpus order.
  struct Pending {
    int row, given, truth;
  };
  std::vector<Pending> rows;
  rows.reserve(known_rows.size() + chosen_unknown.size());
  for (std::size_t i = 0; i < known_rows.size(); ++i) {
    rows.push_back({known_rows[i], noisy_known[i], clean_known[i]});
  }
  for (std::size_t i = 0; i < chosen_unknown.size(); ++i) {
    rows.push_back({chosen_unknown[i], open_given[i], c});
  }
  std::sort(rows.begin(), rows.end(), [](const Pending& a, const Pending& b) { return a.row < b.row; });

  NoisyDataset dataset;
  dataset.c = c;
  dataset.total_classes = corpus.class_count;
  dataset.classes = classes;
  dataset.provenance = spec;
  if (spec.kind == NoiseKind::asymmetric && dataset.provenance.pair_map.empty()) {
    dataset.provenance.pair_map = pair_map;
  }
  dataset.image = corpus.image;
  dataset.features.resize(static_cast<Eigen::Index>(rows.size()), corpus.features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    dataset.features.row(static_cast<Eigen::Index>(i)) = corpus.features.row(rows[i].row);
    dataset.given.push_back(rows[i].given);
    dataset.truth.push_back(rows[i].truth);
    dataset.source_class.push_back(corpus.labels[static_cast<std::size_t>(rows[i].row)]);
  }
  dataset.test_features.resize(static_cast<Eigen::Index>(test_rows.size()), corpus.features.cols());
  for (std::size_t i = 0; i < test_rows.size(); ++i) {
    dataset.test_features.row(static_cast<Eigen::Index>(i)) = corpus.features.row(test_rows[i]);
    dataset.test_labels.push_back(known_index[static_cast<std::size_t>(corpus.labels[static_cast<std::size_t>(test_rows[i])])]);
  }
  return dataset;
}

namespace {

void append_examples(CleanCorpus& corpus, const Matrix& block, int label, Split split) {
  const Eigen::Index start = corpus.features.rows();
  corpus.features.conservativeResize(start + block.rows(), block.cols());
  corpus.features.bottomRows(block.rows()) = block;
  for (Eigen::Index i = 0; i < block.rows(); ++i) {
    corpus.labels.push_back(label);
    corpus.split.push_back(split);
  }
}

}  // namespace

CleanCorpus make_synthetic_blobs(const BlobSpec& spec) {
  if (spec.dim < 2) throw ConfigError("blob dimension must be at least 2");
  if (spec.total_classes < 2) throw ConfigError("blobs need at least 2 classes");
  if (spec.n_per_class < 0 || spec.n_test_per_class < 0) throw ConfigError("negative example count");
  const int informative = spec.informative_dims > 0 ? std::min(spec.informative_dims, spec.dim) : spec.dim;
  Rng rng(spec.seed);

  const double center_scale = spec.center_spread / std::sqrt(static_cast<double>(informative));
  Matrix centers = Matrix::Zero(spec.total_classes, spec.dim);
  for (int k = 0; k < spec.total_classes; ++k) {
    for (int j = 0; j < informative; ++j) centers(k, j) = rng.normal(0.0, center_scale);
  }
  for (const OverlapPair& pair : spec.overlap_pairs) {
    if (pair.unknown_class < 0 || pair.unknown_class >= spec.total_classes ||
        pair.known_class < 0 || pair.known_class >= spec.total_classes ||
        pair.unknown_class == pair.known_class) {
      throw ConfigError("overlap pair refers to an invalid class");
    }
    RowVector direction = RowVector::Zero(spec.dim);
    for (int j = 0; j < informative; ++j) direction(j) = rng.normal();
    direction /= direction.norm();
    centers.row(pair.unknown_class) = centers.row(pair.known_class) + pair.level * direction;
  }

  CleanCorpus corpus;
  corpus.class_count = spec.total_classes;
  corpus.features.resize(0, spec.dim);
  for (Split split : {Split::train, Split::test}) {
    const int count = split == Split::train ? spec.n_per_class : spec.n_test_per_class;
    for (int k = 0; k < spec.total_classes; ++k) {
      Matrix block(count, spec.dim);
      for (int i = 0; i < count; ++i) {
        for (int j = 0; j < spec.dim; ++j) block(i, j) = centers(k, j) + rng.normal(0.0, spec.stddev);
      }
      append_examples(corpus, block, k, split);
    }
  }
  return corpus;
}

CleanCorpus make_synthetic_images(const ImageCorpusSpec& spec) {
  if (spec.size < 4 || spec.channels < 1) throw ConfigError("image size must be >= 4 with >= 1 channel");
  if (spec.total_classes < 2) throw ConfigError("image corpus needs at least 2 classes");
  const int side = spec.size;
  const int pixels = spec.channels * side * side;
  Rng rng(spec.seed);

  auto random_template = [&]() {
    RowVector image = RowVector::Zero(pixels);
    for (int grating = 0; grating < 2; ++grating) {
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double frequency = rng.uniform(0.5, 2.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (int ch = 0; ch < spec.channels; ++ch) {
        const double amplitude = rng.uniform(0.5, 1.0);
        for (int y = 0; y < side; ++y) {
          for (int x = 0; x < side; ++x) {
            const double u = (x * std::cos(angle) + y * std::sin(angle)) / side;
            image((ch * side + y) * side + x) +=
                amplitude * std::sin(2.0 * std::numbers::pi * frequency * u + phase);
          }
        }
      }
    }
    return image;
  };

  std::vector<RowVector> templates;
  for (int k = 0; k < spec.total_classes; ++k) templates.push_back(random_template());
  for (const OverlapPair& pair : spec.overlap_pairs) {
    if (pair.unknown_class < 0 || pair.unknown_class >= spec.total_classes ||
        pair.known_class < 0 || pair.known_class >= spec.total_classes ||
        pair.unknown_class == pair.known_class) {
      throw ConfigError("overlap pair refers to an invalid class");
    }
    const double mix = std::clamp(pair.level, 0.0, 1.0);
    templates[static_cast<std::size_t>(pair.unknown_class)] =
        (1.0 - mix) * templates[static_cast<std::size_t>(pair.known_class)] +
        mix * templates[static_cast<std::size_t>(pair.unknown_class)];
  }

  CleanCorpus corpus;
  corpus.class_count = spec.total_classes;
  corpus.image = ImageShape{spec.channels, side, side};
  corpus.features.resize(0, pixels);
  for (Split split : {Split::train, Split::test}) {
    const int count = split == Split::train ? spec.n_per_class : spec.n_test_per_class;
    for (int k = 0; k < spec.total_classes; ++k) {
      const RowVector& base = templates[static_cast<std::size_t>(k)];
      Matrix block(count, pixels);
      for (int i = 0; i < count; ++i) {
        const int dy = static_cast<int>(rng.uniform_index(3)) - 1;
        const int dx = static_cast<int>(rng.uniform_index(3)) - 1;
        for (int ch = 0; ch < spec.channels; ++ch) {
          for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
              const int sy = (y + dy + side) % side;
              const int sx = (x + dx + side) % side;
              block(i, (ch * side + y) * side + x) =
                  base((ch * side + sy) * side + sx) + rng.normal(0.0, spec.pixel_noise);
            }
          }
        }
      }
      append_examples(corpus, block, k, split);
    }
  }
  return corpus;
}

}  // namespace cecl
