#pragma once

// Experiment configuration and its flat text form.
//
// One `key = value` per line; `#` starts a comment. Lists are comma
// separated, overlap pairs are `unknown:known:level` joined by commas.
// Every key has a fixed type and unknown keys are rejected, so a run
// directory's config.cfg reproduces the run exactly.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cecl/cecl_core.hpp"
#include "cecl/datagen.hpp"
#include "cecl/encoder.hpp"
#include "cecl/step1.hpp"

namespace cecl {

enum class CorpusKind { blobs, images };

struct ExperimentConfig {
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string out = "runs/default";

  // Load a saved dataset directory instead of generating one.
  std::string data_path;
  CorpusKind corpus = CorpusKind::blobs;
  BlobSpec blobs;
  ImageCorpusSpec images;
  NoiseSpec noise;

  ModelSpec model;
  AugmentSpec augment;

  // Load a saved step1.json instead of running Step 1.
  std::string step1_path;
  Step1Config step1;
  // Negative: use the nominal mislabeled fraction of the noise spec.
  double step1_forget_rate = -1.0;

  Step2Config step2;
  bool ablation_cont = true;
  bool ablation_osd = true;
  bool ablation_rdos = false;

  double probe_threshold = 0.9;
  int last_k = 10;
  std::vector<double> sweep_tau;
  int checkpoint_every = 1;

  void validate() const;
};

// The default desk-scale open-set blob benchmark.
ExperimentConfig default_config();

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = default_config());
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = default_config());
// Applies one `key=value` override.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string format_config(const ExperimentConfig& config);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);
std::vector<std::string> config_keys();

// Resolved stage configurations. Stage seeds are derived from the
// experiment seed.
NoiseSpec resolved_noise(const ExperimentConfig& config);
Step1Config resolved_step1(const ExperimentConfig& config, const NoisyDataset& dataset);
Step2Config resolved_step2(const ExperimentConfig& config, const NoisyDataset& dataset);
ModelSpec resolved_model(const ExperimentConfig& config, const NoisyDataset& dataset);
OsdMode osd_mode(bool osd, bool rdos);

}  // namespace cecl
