#include "cecl/step1.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cecl/errors.hpp"
#include "cecl/json_io.hpp"
#include "cecl/optim.hpp"

namespace cecl {

namespace {

// Indices of the keep lowest losses, ties broken by position.
std::vector<int> small_loss_selection(const std::vector<double>& loss, std::size_t keep) {
  std::vector<int> order(loss.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return loss[static_cast<std::size_t>(a)] < loss[static_cast<std::size_t>(b)];
  });
  order.resize(std::min(keep, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

// Mean cross-entropy gradient over the selected rows of a batch.
void train_on_selection(Model& model, Sgd& optimizer, const Matrix& inputs, std::span<const int> labels,
                        std::span<const int> selection, double lr) {
  if (selection.empty()) return;
  const Matrix x = gather_rows(inputs, selection);
  const Model::Pass pass = model.forward(x, true, false);
  Matrix dlogits = softmax_rows(pass.logits);
  const double scale = 1.0 / static_cast<double>(selection.size());
  for (std::size_t i = 0; i < selection.size(); ++i) {
    dlogits(static_cast<Eigen::Index>(i), labels[static_cast<std::size_t>(selection[i])]) -= 1.0;
  }
  dlogits *= scale;
  std::vector<double> grad(model.param_count(), 0.0);
  model.backward(pass, &dlogits, nullptr, grad);
  optimizer.step(model.params, grad, lr);
}

}  // namespace

Matrix DualNetworks::posterior(const Matrix& x) const {
  return 0.5 * (softmax_rows(first.logits(x)) + softmax_rows(second.logits(x)));
}

WarmupResult warmup_train(const NoisyDataset& dataset, const Step1Config& config) {
  if (config.epochs < 1) throw ConfigError("step1 warmup needs at least one epoch");
  if (config.batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(config.forget_rate >= 0.0 && config.forget_rate < 1.0)) {
    throw ConfigError("forget rate must lie in [0, 1)");
  }
  const int n = dataset.size();
  if (n == 0) throw InputError("empty training set");

  WarmupResult result{DualNetworks{Model(config.model, derive_seed(config.seed, {11})),
                                   Model(config.model, derive_seed(config.seed, {12}))},
                      PredictionHistory{}};
  result.history.given = dataset.given;
  Sgd opt_first(result.nets.first.param_count(), config.sgd_momentum, config.weight_decay);
  Sgd opt_second(result.nets.second.param_count(), config.sgd_momentum, config.weight_decay);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(config.lr, config.min_lr, epoch, config.epochs);
    const double ramp = config.ramp_epochs > 0 ? std::min(1.0, static_cast<double>(epoch) / config.ramp_epochs) : 1.0;
    const double keep_fraction = 1.0 - config.forget_rate * ramp;

    Rng shuffle(derive_seed(config.seed, {13, static_cast<std::uint64_t>(epoch)}));
    const std::vector<std::size_t> order = shuffle.permutation(static_cast<std::size_t>(n));
    for (int start = 0, batch = 0; start < n; start += config.batch_size, ++batch) {
      const int end = std::min(n, start + config.batch_size);
      std::vector<int> ids;
      for (int i = start; i < end; ++i) ids.push_back(static_cast<int>(order[static_cast<std::size_t>(i)]));
      std::vector<int> labels;
      for (int id : ids) labels.push_back(dataset.given[static_cast<std::size_t>(id)]);
      const Matrix inputs = augment_batch(
          gather_rows(dataset.features, ids), ids, config.augment,
          derive_seed(config.seed, {14, static_cast<std::uint64_t>(epoch)}), 0);

      const std::vector<double> loss_first = cross_entropy_rows(result.nets.first.logits(inputs), labels);
      const std::vector<double> loss_second = cross_entropy_rows(result.nets.second.logits(inputs), labels);
      const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(ids.size())));
      const std::vector<int> picked_by_first = small_loss_selection(loss_first, keep);
      const std::vector<int> picked_by_second = small_loss_selection(loss_second, keep);
      // Exchange: each network learns from its peer's selection.
      train_on_selection(result.nets.first, opt_first, inputs, labels, picked_by_second, lr);
      train_on_selection(result.nets.second, opt_second, inputs, labels, picked_by_first, lr);
    }

    const Matrix posterior = result.nets.posterior(dataset.features);
    std::vector<int> predicted(static_cast<std::size_t>(n));
    std::vector<double> confidence(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Eigen::Index best;
      confidence[static_cast<std::size_t>(i)] = posterior.row(i).maxCoeff(&best);
      predicted[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    result.history.predicted.push_back(std::move(predicted));
    result.history.confidence.push_back(std::move(confidence));
  }
  return result;
}

std::uint8_t CorrectionRecord::flagged_at(int example, int epoch) const {
  const int first = first_flag_epoch[static_cast<std::size_t>(example)];
  return static_cast<std::uint8_t>(first >= 0 && first <= epoch);
}

int burn_in_epochs(int epochs, double burn_in_fraction) {
  return static_cast<int>(std::floor(burn_in_fraction * epochs));
}

CorrectionRecord update_correction_record(const PredictionHistory& history, double confidence,
                                          double burn_in_fraction) {
  if (history.epochs() == 0) throw DomainError("correction record needs a non-empty history");
  const int n = history.size();
  CorrectionRecord record;
  record.burn_in_epochs = burn_in_epochs(history.epochs(), burn_in_fraction);
  record.flagged.assign(static_cast<std::size_t>(n), 0);
  record.first_flag_epoch.assign(static_cast<std::size_t>(n), -1);
  for (int e = 0; e < history.epochs(); ++e) {
    const auto epoch = static_cast<std::size_t>(e);
    if (history.predicted[epoch].size() != static_cast<std::size_t>(n)) {
      throw InputError("history epoch has the wrong number of examples");
    }
    std::vector<Agreement> row(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (history.confidence[epoch][k] < confidence) {
        row[k] = Agreement::neutral;
      } else {
        row[k] = history.predicted[epoch][k] == history.given[k] ? Agreement::agree : Agreement::disagree;
      }
      if (e >= record.burn_in_epochs && row[k] == Agreement::disagree && !record.flagged[k]) {
        record.flagged[k] = 1;
        record.first_flag_epoch[k] = e;
      }
    }
    record.agreement.push_back(std::move(row));
  }
  return record;
}

int CoarseLabeledDataset::clean_count() const {
  return static_cast<int>(std::count(partition.begin(), partition.end(), Partition::clean));
}

CoarseLabeledDataset partition_and_relabel(const NoisyDataset& dataset, const CorrectionRecord& record,
                                           const DualNetworks& nets) {
  const int n = dataset.size();
  if (static_cast<int>(record.flagged.size()) != n) {
    throw InputError("correction record does not cover the dataset");
  }
  CoarseLabeledDataset coarse;
  coarse.partition.resize(static_cast<std::size_t>(n));
  coarse.coarse.resize(static_cast<std::size_t>(n));
  std::vector<int> noisy_rows;
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (record.flagged[k]) {
      coarse.partition[k] = Partition::noisy;
      noisy_rows.push_back(i);
    } else {
      coarse.partition[k] = Partition::clean;
      coarse.coarse[k] = dataset.given[k];
    }
  }
  if (!noisy_rows.empty()) {
    const std::vector<int> relabeled = argmax_rows(nets.posterior(gather_rows(dataset.features, noisy_rows)));
    for (std::size_t j = 0; j < noisy_rows.size(); ++j) {
      coarse.coarse[static_cast<std::size_t>(noisy_rows[j])] = relabeled[j];
    }
  }
  return coarse;
}

Model Step1Artifact::model() const {
  Model m(model_spec, 0);
  if (m.params.size() != model_params.size()) throw InputError("step1 model parameters do not match spec");
  m.params = model_params;
  return m;
}

Step1Artifact run_step1(const NoisyDataset& dataset, const Step1Config& config) {
  WarmupResult warm = warmup_train(dataset, config);
  Step1Artifact artifact;
  artifact.record = update_correction_record(warm.history, config.confidence, config.burn_in_fraction);
  artifact.coarse = partition_and_relabel(dataset, artifact.record, warm.nets);
  artifact.confidence = config.confidence;
  artifact.model_spec = config.model;
  artifact.model_params = warm.nets.first.params;
  return artifact;
}

void save_step1(const Step1Artifact& artifact, const std::filesystem::path& path) {
  const int n = artifact.coarse.size();
  std::string partition(static_cast<std::size_t>(n), 'C');
  for (int i = 0; i < n; ++i) {
    if (artifact.coarse.partition[static_cast<std::size_t>(i)] == Partition::noisy) partition[static_cast<std::size_t>(i)] = 'N';
  }
  nlohmann::json agreement = nlohmann::json::array();
  for (const auto& row : artifact.record.agreement) {
    std::string line(row.size(), '.');
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i] == Agreement::agree) line[i] = '+';
      if (row[i] == Agreement::disagree) line[i] = '-';
    }
    agreement.push_back(line);
  }
  nlohmann::json j = {
      {"format", "cecl-step1"},
      {"version", kStep1FormatVersion},
      {"n", n},
      {"burn_in_epochs", artifact.record.burn_in_epochs},
      {"confidence", artifact.confidence},
      {"partition", partition},
      {"coarse_labels", artifact.coarse.coarse},
      {"T", artifact.record.flagged},
      {"first_flag_epoch", artifact.record.first_flag_epoch},
      {"agreement", agreement},
      {"model", {{"spec", model_spec_to_json(artifact.model_spec)}, {"params", artifact.model_params}}},
  };
  write_json_file(j, path);
}

Step1Artifact load_step1(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  if (j.value("format", "") != "cecl-step1" || j.value("version", 0) != kStep1FormatVersion) {
    throw InputError(path.string() + " is not a supported step1 artifact");
  }
  Step1Artifact artifact;
  try {
    const int n = j.at("n").get<int>();
    const std::string partition = j.at("partition").get<std::string>();
    artifact.coarse.coarse = j.at("coarse_labels").get<std::vector<int>>();
    artifact.record.flagged = j.at("T").get<std::vector<std::uint8_t>>();
    artifact.record.first_flag_epoch = j.at("first_flag_epoch").get<std::vector<int>>();
    artifact.record.burn_in_epochs = j.at("burn_in_epochs").get<int>();
    artifact.confidence = j.at("confidence").get<double>();
    if (static_cast<int>(partition.size()) != n || artifact.coarse.size() != n ||
        static_cast<int>(artifact.record.flagged.size()) != n) {
      throw InputError("step1 artifact arrays disagree with n");
    }
    for (char tag : partition) {
      if (tag != 'C' && tag != 'N') throw InputError("bad partition tag in step1 artifact");
      artifact.coarse.partition.push_back(tag == 'C' ? Partition::clean : Partition::noisy);
    }
    for (const auto& line : j.at("agreement")) {
      const std::string s = line.get<std::string>();
      std::vector<Agreement> row;
      for (char ch : s) row.push_back(ch == '+' ? Agreement::agree : ch == '-' ? Agreement::disagree : Agreement::neutral);
      artifact.record.agreement.push_back(std::move(row));
    }
    artifact.model_spec = model_spec_from_json(j.at("model").at("spec"));
    artifact.model_params = j.at("model").at("params").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("incomplete step1 artifact: ") + e.what());
  }
  return artifact;
}

}  // namespace cecl
