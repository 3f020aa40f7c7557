#pragma once

// Prototype-guided contrastive training with open-set decisions.
//
// Every batch: both views are embedded, each noisy example is compared
// with the prototype of its coarse label (open-set decision F), anchors are
// the clean examples plus the noisy ones with F = 1, and the noisy ones
// with F = 0 stay in every contrast set as negatives only (delimiters).
// The loss is L = L_CLS + beta * L_CONT.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cecl/datagen.hpp"
#include "cecl/encoder.hpp"
#include "cecl/errors.hpp"
#include "cecl/kernels.hpp"
#include "cecl/optim.hpp"
#include "cecl/step1.hpp"

namespace cecl {

// 1 - a.b / (|a||b|), in [0, 2].
template <typename A, typename B>
double cosine_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw DomainError("cosine distance of a zero vector");
  const double cosine = a.reshaped().dot(b.reshaped()) / (na * nb);
  return 1.0 - std::clamp(cosine, -1.0, 1.0);
}

// One unit-norm centroid per known class, maintained by
// Q_i <- normalize(gamma * Q_i + (1 - gamma) * q).
class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(Matrix prototypes, std::vector<int> init_counts, double gamma);

  int classes() const { return static_cast<int>(prototypes_.rows()); }
  int dim() const { return static_cast<int>(prototypes_.cols()); }
  double gamma() const { return gamma_; }
  const Matrix& prototypes() const { return prototypes_; }
  auto prototype(int k) const { return prototypes_.row(k); }
  const std::vector<int>& init_counts() const { return init_counts_; }

  void update(const RowVector& q, int label);

 private:
  Matrix prototypes_;
  std::vector<int> init_counts_;
  double gamma_ = 0.99;
};

// Normalized class means of the given (clean) embeddings. Throws
// InitializationError for a class with no example and
// DegeneratePrototypeError when a class mean is numerically zero.
PrototypeBank init_prototypes(const Matrix& embeddings, std::span<const int> labels, int classes,
                              double gamma);

// F = 1 iff cosine_distance(q, Q_label) < tau.
bool open_set_decision(const RowVector& q, int coarse_label, const PrototypeBank& bank, double tau);

enum class OsdMode {
  enabled,            // F decided against the prototypes
  disabled,           // every noisy example treated as F = 1
  remove_delimiters,  // F decided, F = 0 examples dropped from the pool
};

// Per-row view of the pool after open-set decisions.
struct PoolDecisions {
  std::vector<std::uint8_t> flag;      // F (0 for clean rows)
  std::vector<std::uint8_t> eligible;  // may be a positive: clean or F = 1
  std::vector<std::uint8_t> included;  // part of A at all
};

// Batch rows take the decision of their example (made on its query
// embedding); queue rows are decided on their stored key.
PoolDecisions decisions_from_flags(const Pool& pool, std::span<const std::uint8_t> batch_flags,
                                   std::span<const std::uint8_t> queue_flags, OsdMode mode);
std::vector<std::uint8_t> decide_batch(const Pool& pool, const PrototypeBank& bank, double tau);
std::vector<std::uint8_t> decide_queue(const Pool& pool, const PrototypeBank& bank, double tau);
PoolDecisions decide_pool(const Pool& pool, const PrototypeBank& bank, double tau,
                          OsdMode mode = OsdMode::enabled);

// P(x) for batch anchor `anchor`: pool rows of the same coarse label that
// are clean, or noisy and within tau of their class prototype.
std::vector<int> select_positives(const Pool& pool, int anchor, const PrototypeBank& bank, double tau,
                                  OsdMode mode = OsdMode::enabled);

// Batch rows acting as anchors: clean, or noisy with F = 1.
std::vector<int> anchor_rows(const Pool& pool, const PoolDecisions& decisions);

// Single-anchor supervised contrastive loss over explicit positive and
// contrast sets (rows are embeddings). 0 when positives is empty.
double contrastive_loss(const RowVector& q, const Matrix& positives, const Matrix& contrast,
                        double temperature);

struct ClassificationTerm {
  double value = 0.0;
  int clean_count = 0;
  int incorporated_count = 0;
  bool empty = false;  // both denominators zero
  Matrix dlogits;      // filled by classification_loss_from_logits
};

// Cross-entropy averaged over clean examples (with their labels) plus
// cross-entropy averaged over noisy F = 1 examples (with Y'). F = 0
// examples contribute nothing. `posteriors` rows lie on the simplex.
ClassificationTerm classification_loss(const Matrix& posteriors, std::span<const Partition> partition,
                                       std::span<const int> labels, std::span<const std::uint8_t> flags);
ClassificationTerm classification_loss_from_logits(const Matrix& logits, std::span<const Partition> partition,
                                                   std::span<const int> labels,
                                                   std::span<const std::uint8_t> flags);

struct ContrastiveTerm {
  double value = 0.0;
  int clean_anchors = 0;
  int incorporated_anchors = 0;
  std::vector<int> anchors;             // batch rows
  std::vector<double> per_anchor_loss;  // aligned with anchors
  Matrix query_grad;                    // d value / d batch query rows
};

// Average per-anchor loss over clean anchors plus average over F = 1
// anchors. Gradients flow into the batch query rows only (as anchors and
// as pool members); keys and queue rows are constants.
ContrastiveTerm contrastive_objective(const Pool& pool, const PoolDecisions& decisions, double temperature,
                                      bool want_grad = false, Execution execution = default_execution());

struct LossBreakdown {
  double cls = 0.0;
  double cont = 0.0;
  double total = 0.0;
  double beta = 1.0;
  double temperature = 0.1;
  bool cls_empty = false;
};

double total_loss(double cls, double cont, double beta);

struct Step2Config {
  double tau = 0.3;
  double gamma = 0.99;
  double beta = 1.0;
  double temperature = 0.1;
  double key_momentum = 0.99;
  int queue_size = 512;
  int epochs = 30;
  int batch_size = 64;
  double lr = 0.05;
  double min_lr = 0.0;
  double sgd_momentum = 0.9;
  double weight_decay = 5e-4;
  bool contrastive = true;
  OsdMode osd = OsdMode::enabled;
  AugmentSpec augment;
  std::uint64_t seed = 0;

  void validate() const;
};

// One fully specified training step with frozen decisions; evaluating it
// twice at the same parameters gives the same loss.
struct StepProblem {
  Matrix query_input;  // augmented query views
  Matrix keys;         // key embeddings (constants)
  BatchMeta meta;
  MomentumQueue queue;
  std::vector<std::uint8_t> batch_flags;
  std::vector<std::uint8_t> queue_flags;
  OsdMode mode = OsdMode::enabled;
  bool contrastive = true;
  double beta = 1.0;
  double temperature = 0.1;
};

struct StepEvaluation {
  LossBreakdown losses;
  std::vector<double> grad;  // empty unless requested
  Model::Pass pass;
  Pool pool;
  PoolDecisions decisions;
  ContrastiveTerm contrastive;
  ClassificationTerm classification;
};

StepEvaluation evaluate_step(const Model& query, const StepProblem& problem, bool want_grad,
                             const Model::Pass* precomputed = nullptr);

struct TrainState {
  Model query;
  Model key;
  Sgd optimizer;
  MomentumQueue queue;
  PrototypeBank bank;
  int epoch = 0;  // completed epochs
};

// Step 2 starting point: query = key = `initial`, prototypes from the clean
// examples' un-augmented query embeddings grouped by Y'.
TrainState init_train_state(const NoisyDataset& dataset, const CoarseLabeledDataset& coarse,
                            const Model& initial, const Step2Config& config);

struct StepStats {
  LossBreakdown losses;
  int clean_anchors = 0;
  int incorporated = 0;  // noisy, F = 1
  int delimiters = 0;    // noisy, F = 0
};

StepStats train_step(TrainState& state, const NoisyDataset& dataset, const CoarseLabeledDataset& coarse,
                     std::span<const int> batch, const Step2Config& config, double lr, std::uint64_t step_seed);

struct EpochStats {
  int epoch = 0;  // 1-based index of the finished epoch
  double lr = 0.0;
  double loss_cls = 0.0;
  double loss_cont = 0.0;
  double loss_total = 0.0;
  int clean_count = 0;      // |D_clean|
  int incorporated = 0;     // sum of F over D_noisy at epoch end
  int delimiters = 0;       // noisy with F = 0 at epoch end
  double drift_max = 0.0;   // largest per-class prototype movement
  double drift_mean = 0.0;
  double test_accuracy = 0.0;
  // Open-set detection quality against ground truth (diagnostic only).
  double osd_delimiter_precision = 0.0;
  double osd_open_set_recall = 0.0;
  std::vector<StepStats> steps;
};

EpochStats train_epoch(TrainState& state, const NoisyDataset& dataset, const CoarseLabeledDataset& coarse,
                       const Step2Config& config);

double accuracy(const Model& model, const Matrix& features, std::span<const int> labels);

}  // namespace cecl
