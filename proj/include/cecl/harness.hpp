#pragma once

// Experiment runner: datagen -> step 1 -> step 2 with ablation switches,
// run directories, the class-expansion probe, the closed-set vs
// closed+open-set comparison, tau sweeps and the centroid separation study.
//
// Run directory layout (schema version kRunSchemaVersion):
//   config.cfg       exact config of the run
//   step1.json       step 1 artifact
//   epochs.jsonl     one JSON object per finished epoch
//   summary.json     last-k mean/std, recomputable from epochs.jsonl
//   summary.csv      same numbers as key,value rows
//   transition.csv   probe of the final model on open-set training examples
//   embeddings.csv   test-set query embeddings with their labels
//   checkpoint.json  latest step 2 state

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cecl/cecl_core.hpp"
#include "cecl/config.hpp"
#include "cecl/step1.hpp"
#include "cecl/theory.hpp"

namespace cecl {

inline constexpr int kRunSchemaVersion = 1;

struct LastK {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  int count = 0;
};

// Mean and std of the last min(k, size) values. Throws InputError when
// values is empty.
LastK last_k_stats(std::span<const double> values, int k);

// Applies the config's deterministic switch to the kernel execution mode.
void apply_execution_mode(const ExperimentConfig& config);

CleanCorpus make_corpus(const ExperimentConfig& config);
// Generated from the config, or loaded from data.path when set.
NoisyDataset make_dataset(const ExperimentConfig& config);
Step1Artifact make_step1(const ExperimentConfig& config, const NoisyDataset& dataset);

// One JSON-lines record, keys in fixed order.
std::string epoch_record(const EpochStats& stats);
EpochStats parse_epoch_record(const std::string& line);

struct Step2Result {
  std::vector<EpochStats> epochs;
  TrainState state;
  LastK summary;

  std::vector<double> accuracy() const;
};

using EpochCallback = std::function<void(const EpochStats&, const TrainState&)>;

// Runs (or resumes) step 2. `resume` continues from a saved state; its
// epoch counter decides how many epochs remain.
Step2Result run_step2(const ExperimentConfig& config, const NoisyDataset& dataset, const Step1Artifact& step1,
                      const EpochCallback& on_epoch = {}, std::optional<TrainState> resume = std::nullopt);

// Full pipeline into config.out. With `resume`, continues from the run
// directory's checkpoint.json; the stored config must match. Stage
// failures raise StageError after the partial logs are flushed.
std::filesystem::path run_experiment(const ExperimentConfig& config, bool resume = false);

struct TransitionMatrix {
  std::vector<int> source_classes;  // row order
  int columns = 0;
  Matrix fractions;                 // rows sum to 1
  std::vector<int> counts;
  std::vector<double> concentration;  // max entry per row
  std::vector<int> dominant_column;   // argmax per row
};

TransitionMatrix transition_from_predictions(std::span<const int> predicted, std::span<const int> source_class,
                                             int columns);
// Pseudo-labels every example by classifier argmax. Throws DomainError on
// an empty pool.
TransitionMatrix class_expansion_probe(const Model& model, const Matrix& features,
                                       std::span<const int> source_class);
void write_transition_csv(const TransitionMatrix& matrix, const std::filesystem::path& path);

struct ClassifierSchedule {
  int epochs = 10;
  int batch_size = 64;
  double lr = 0.05;
  double min_lr = 0.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  AugmentSpec augment;
  std::uint64_t seed = 0;
};

ClassifierSchedule classifier_schedule(const ExperimentConfig& config, const NoisyDataset& dataset);

// Plain cross-entropy training of the classifier head and trunk. Returns
// test accuracy after every epoch.
std::vector<double> train_classifier(Model& model, const Matrix& x, std::span<const int> y,
                                     const ClassifierSchedule& schedule, const Matrix& test_x,
                                     std::span<const int> test_y);

struct ProbeResult {
  TransitionMatrix matrix;
  std::vector<double> accuracy;
  Model model;
};

// Trains on the known-class training rows only (true labels), then probes
// the open-set training rows.
ProbeResult probe_experiment(const ExperimentConfig& config, const NoisyDataset& dataset);

struct CsVsCsosResult {
  std::vector<double> cs;
  std::vector<double> csos;
  int admitted = 0;
  TransitionMatrix probe;
  LastK cs_final;
  LastK csos_final;
};

// Trains twice from one initialization: closed-set rows only, then closed-set
// rows plus open-set rows whose top softmax score under the first model is at
// least probe.threshold, labeled with its argmax.
CsVsCsosResult cs_vs_csos_experiment(const ExperimentConfig& config, const NoisyDataset& dataset);
void write_cs_vs_csos(const CsVsCsosResult& result, const std::filesystem::path& dir);

struct TauPoint {
  double tau = 0.0;
  LastK accuracy;
  int incorporated = 0;  // sum of F at the last epoch
  int delimiters = 0;
};

// One step 2 run per tau with a shared seed and step 1 artifact. Throws
// ConfigError for fewer than 2 values.
std::vector<TauPoint> tau_sweep(const ExperimentConfig& config, const NoisyDataset& dataset,
                                const Step1Artifact& step1, std::span<const double> taus);
void write_tau_sweep(std::span<const TauPoint> points, const std::filesystem::path& path);

// The ablation rows: full method, without the contrastive term, without
// open-set decisions, with delimiters removed, and without both.
struct AblationVariant {
  std::string name;
  bool cont = true;
  bool osd = true;
  bool rdos = false;
};
std::vector<AblationVariant> ablation_variants();
ExperimentConfig with_variant(ExperimentConfig config, const AblationVariant& variant);

// Train-set pair structure of a final state: clean and F = 1 rows labeled
// with Y', F = 0 rows as delimiters (-1), or dropped when keep_delimiters
// is false.
struct PoolSnapshot {
  Matrix embeddings;
  PairStructure structure;
  int delimiters = 0;
};
PoolSnapshot pool_snapshot(const TrainState& state, const NoisyDataset& dataset, const CoarseLabeledDataset& coarse,
                           double tau, bool keep_delimiters);

struct SeparationStudy {
  ClusterStats with_delimiters;
  ClusterStats without_delimiters;
  SeparationReport report;
};

// Trains the full method and the delimiter-free variant from the same
// step 1 artifact; centroids come from test-set embeddings by true class,
// L_uniform from each run's own final pool.
SeparationStudy separation_study(const ExperimentConfig& config, const NoisyDataset& dataset,
                                 const Step1Artifact& step1);

}  // namespace cecl
