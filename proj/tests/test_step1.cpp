#include <doctest.h>

#include <filesystem>

#include "cecl/datagen.hpp"
#include "cecl/errors.hpp"
#include "cecl/step1.hpp"

using namespace cecl;

namespace {

PredictionHistory history_of(std::vector<int> given, std::vector<std::vector<int>> predicted,
                             double confidence = 0.9) {
  PredictionHistory h;
  h.given = std::move(given);
  h.predicted = std::move(predicted);
  for (const auto& row : h.predicted) h.confidence.emplace_back(row.size(), confidence);
  return h;
}

NoisyDataset separable_blobs(int classes, int n_per_class, std::uint64_t seed) {
  BlobSpec spec;
  spec.total_classes = classes;
  spec.n_per_class = n_per_class;
  spec.n_test_per_class = 10;
  spec.dim = 4;
  spec.center_spread = 8.0;
  spec.stddev = 0.1;
  spec.seed = seed;
  NoiseSpec noise;
  noise.known_class_count = classes;
  noise.seed = seed;
  return build_open_set_noise(make_synthetic_blobs(spec), noise);
}

Step1Config small_config(const NoisyDataset& d) {
  Step1Config config;
  config.epochs = 10;
  config.batch_size = 32;
  config.forget_rate = 0.0;
  config.model.input_dim = d.dim();
  config.model.hidden = 32;
  config.model.projection_hidden = 16;
  config.model.embedding_dim = 8;
  config.model.classes = d.c;
  config.augment.jitter = 0.05;
  config.seed = 3;
  return config;
}

}  // namespace

TEST_CASE("correction record rule") {
  // Five epochs, burn-in floor(0.2 * 5) = 1.
  auto h = history_of({0, 1, 2},
                      {{0, 0, 2},    // example 1 disagrees during burn-in only
                       {0, 1, 2},
                       {0, 1, 1},    // example 2 disagrees after burn-in
                       {0, 1, 2},
                       {0, 1, 2}});
  CorrectionRecord r = update_correction_record(h, 0.5);
  CHECK(r.burn_in_epochs == 1);
  CHECK(r.flagged == std::vector<std::uint8_t>{0, 0, 1});
  CHECK(r.first_flag_epoch == std::vector<int>{-1, -1, 2});
  // Sticky: once flagged it stays flagged even though later epochs agree.
  CHECK(r.flagged_at(2, 1) == 0);
  CHECK(r.flagged_at(2, 2) == 1);
  CHECK(r.flagged_at(2, 4) == 1);

  auto agree = history_of({1, 0}, {{1, 0}, {1, 0}});
  CHECK(update_correction_record(agree, 0.5).flagged == std::vector<std::uint8_t>{0, 0});

  // Below the confidence threshold a disagreement is neutral.
  auto unsure = history_of({1, 0}, {{0, 1}, {0, 1}}, 0.3);
  CorrectionRecord u = update_correction_record(unsure, 0.5);
  CHECK(u.flagged == std::vector<std::uint8_t>{0, 0});
  CHECK(u.agreement[0][0] == Agreement::neutral);
  CHECK(update_correction_record(unsure, 0.0).flagged == std::vector<std::uint8_t>{1, 1});

  CHECK_THROWS_AS(update_correction_record(PredictionHistory{}, 0.5), DomainError);
  CHECK(burn_in_epochs(10, 0.2) == 2);
  CHECK(burn_in_epochs(4, 0.2) == 0);
}

TEST_CASE("warmup on clean separable blobs agrees everywhere") {
  NoisyDataset d = separable_blobs(3, 60, 1);
  Step1Config config = small_config(d);
  WarmupResult warm = warmup_train(d, config);
  CHECK(warm.history.epochs() == 10);
  for (int i = 0; i < d.size(); ++i) CHECK(warm.history.predicted.back()[static_cast<std::size_t>(i)] == d.given[static_cast<std::size_t>(i)]);

  Step1Artifact artifact = run_step1(d, config);
  CHECK(artifact.coarse.noisy_count() <= d.size() / 20);

  config.epochs = 0;
  CHECK_THROWS_AS(warmup_train(d, config), ConfigError);
}

TEST_CASE("a single flipped label is caught") {
  NoisyDataset d = separable_blobs(2, 60, 2);
  const int flipped = 17;
  d.given[flipped] = 1 - d.given[flipped];
  Step1Config config = small_config(d);
  Step1Artifact artifact = run_step1(d, config);
  CHECK(artifact.record.flagged[flipped] == 1);
  CHECK(artifact.coarse.partition[flipped] == Partition::noisy);
  CHECK(artifact.coarse.coarse[flipped] == d.truth[flipped]);
}

TEST_CASE("partition and relabel") {
  NoisyDataset d = separable_blobs(3, 30, 4);
  Step1Config config = small_config(d);
  WarmupResult warm = warmup_train(d, config);

  CorrectionRecord none;
  none.flagged.assign(static_cast<std::size_t>(d.size()), 0);
  CoarseLabeledDataset all_clean = partition_and_relabel(d, none, warm.nets);
  CHECK(all_clean.noisy_count() == 0);
  CHECK(all_clean.coarse == d.given);

  CorrectionRecord all = none;
  std::fill(all.flagged.begin(), all.flagged.end(), 1);
  CHECK(partition_and_relabel(d, all, warm.nets).clean_count() == 0);

  CorrectionRecord mixed = none;
  for (std::size_t i = 0; i < mixed.flagged.size(); i += 3) mixed.flagged[i] = 1;
  CoarseLabeledDataset coarse = partition_and_relabel(d, mixed, warm.nets);
  CHECK(coarse.clean_count() + coarse.noisy_count() == d.size());
  for (int i = 0; i < d.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (mixed.flagged[k]) {
      CHECK(coarse.partition[k] == Partition::noisy);
      // Independent forward pass through both networks.
      Matrix x = d.features.row(i);
      Matrix p = (softmax_rows(warm.nets.first.logits(x)) + softmax_rows(warm.nets.second.logits(x))) / 2.0;
      Eigen::Index best;
      p.row(0).maxCoeff(&best);
      CHECK(coarse.coarse[k] == static_cast<int>(best));
    } else {
      CHECK(coarse.partition[k] == Partition::clean);
      CHECK(coarse.coarse[k] == d.given[k]);
    }
  }

  CorrectionRecord short_record;
  short_record.flagged.assign(3, 0);
  CHECK_THROWS_AS(partition_and_relabel(d, short_record, warm.nets), InputError);
}

TEST_CASE("step1 artifact round trip") {
  NoisyDataset d = separable_blobs(3, 20, 5);
  Step1Config config = small_config(d);
  config.epochs = 3;
  Step1Artifact a = run_step1(d, config);
  const auto path = std::filesystem::temp_directory_path() / "cecl_test_step1.json";
  save_step1(a, path);
  Step1Artifact b = load_step1(path);
  CHECK(b.coarse.partition == a.coarse.partition);
  CHECK(b.coarse.coarse == a.coarse.coarse);
  CHECK(b.record.flagged == a.record.flagged);
  CHECK(b.record.first_flag_epoch == a.record.first_flag_epoch);
  CHECK(b.record.agreement == a.record.agreement);
  CHECK(b.record.burn_in_epochs == a.record.burn_in_epochs);
  CHECK(b.model_params == a.model_params);
  CHECK(b.confidence == a.confidence);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_step1(path), InputError);
}
