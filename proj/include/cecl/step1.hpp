#pragma once

// Clean-example identification: two networks trained co-teaching style
// (each learns from the small-loss examples picked by its peer), a
// per-epoch record of whether the confident prediction matches the given
// label, the sticky correction record T built from it, and the resulting
// clean/noisy partition with coarse labels Y'.
//
// T(i) = 1 means example i is flagged as possibly mislabeled; T(i) = 0
// means it is believed clean.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cecl/datagen.hpp"
#include "cecl/encoder.hpp"

namespace cecl {

struct Step1Config {
  int epochs = 20;
  int batch_size = 64;
  double lr = 0.05;
  double min_lr = 0.0;
  double sgd_momentum = 0.9;
  double weight_decay = 5e-4;
  // Fraction of each batch dropped (largest losses) once fully ramped.
  double forget_rate = 0.2;
  int ramp_epochs = 5;
  // Predictions with top posterior below this count as neutral, neither
  // agreeing nor disagreeing. 0 compares every argmax with the label.
  double confidence = 0.0;
  // Leading fraction of epochs ignored by the correction record.
  double burn_in_fraction = 0.2;
  ModelSpec model;
  AugmentSpec augment;
  std::uint64_t seed = 0;
};

// Per-epoch predictions of the ensemble on the un-augmented training set.
struct PredictionHistory {
  std::vector<int> given;
  std::vector<std::vector<int>> predicted;      // epoch x example
  std::vector<std::vector<double>> confidence;  // epoch x example

  int epochs() const { return static_cast<int>(predicted.size()); }
  int size() const { return static_cast<int>(given.size()); }
};

struct DualNetworks {
  Model first;
  Model second;

  // Average of the two softmax outputs.
  Matrix posterior(const Matrix& x) const;
};

struct WarmupResult {
  DualNetworks nets;
  PredictionHistory history;
};

WarmupResult warmup_train(const NoisyDataset& dataset, const Step1Config& config);

enum class Agreement : std::int8_t { disagree = 0, agree = 1, neutral = -1 };

struct CorrectionRecord {
  std::vector<std::uint8_t> flagged;  // T
  std::vector<int> first_flag_epoch;  // -1 when never flagged
  std::vector<std::vector<Agreement>> agreement;  // epoch x example
  int burn_in_epochs = 0;

  // T as it stood after `epoch`; non-decreasing in epoch.
  std::uint8_t flagged_at(int example, int epoch) const;
};

int burn_in_epochs(int epochs, double burn_in_fraction);

CorrectionRecord update_correction_record(const PredictionHistory& history, double confidence,
                                          double burn_in_fraction = 0.2);

struct CoarseLabeledDataset {
  std::vector<Partition> partition;
  std::vector<int> coarse;  // Y'

  int size() const { return static_cast<int>(coarse.size()); }
  int clean_count() const;
  int noisy_count() const { return size() - clean_count(); }
};

CoarseLabeledDataset partition_and_relabel(const NoisyDataset& dataset, const CorrectionRecord& record,
                                           const DualNetworks& nets);

struct Step1Artifact {
  CoarseLabeledDataset coarse;
  CorrectionRecord record;
  double confidence = 0.0;
  ModelSpec model_spec;
  std::vector<double> model_params;  // first network, used to start step 2

  Model model() const;
};

Step1Artifact run_step1(const NoisyDataset& dataset, const Step1Config& config);

// step1.json: {"format": "cecl-step1", "version": 1, "n", "burn_in_epochs",
// "confidence", "partition": "CCN..." (C clean, N noisy), "coarse_labels",
// "T", "first_flag_epoch", "agreement": one string per epoch with '+' agree,
// '-' disagree, '.' not confident, "model": {spec..., "params"}}.
inline constexpr int kStep1FormatVersion = 1;
void save_step1(const Step1Artifact& artifact, const std::filesystem::path& path);
Step1Artifact load_step1(const std::filesystem::path& path);

}  // namespace cecl
