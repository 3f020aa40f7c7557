#include "cecl/cecl_core.hpp"

#include <algorithm>
#include <cmath>

namespace cecl {

namespace {

constexpr double kDegenerateNorm = 1e-8;

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("prototype gamma must lie in [0, 1]");
}

std::uint8_t effective_flag(Partition partition, std::uint8_t decided, OsdMode mode) {
  if (partition == Partition::clean) return 0;
  return mode == OsdMode::disabled ? 1 : decided;
}

}  // namespace

PrototypeBank::PrototypeBank(Matrix prototypes, std::vector<int> init_counts, double gamma)
    : prototypes_(std::move(prototypes)), init_counts_(std::move(init_counts)), gamma_(gamma) {
  check_gamma(gamma);
}

void PrototypeBank::update(const RowVector& q, int label) {
  check_gamma(gamma_);
  if (label < 0 || label >= classes()) throw InputError("prototype update for an unknown class");
  RowVector mixed = gamma_ * prototypes_.row(label) + (1.0 - gamma_) * q;
  const double norm = mixed.norm();
  // Antipodal cancellation leaves the prototype where it was.
  if (norm > kDegenerateNorm) prototypes_.row(label) = mixed / norm;
}

PrototypeBank init_prototypes(const Matrix& embeddings, std::span<const int> labels, int classes, double gamma) {
  check_gamma(gamma);
  if (static_cast<Eigen::Index>(labels.size()) != embeddings.rows()) {
    throw InputError("init_prototypes: one label per embedding required");
  }
  Matrix sums = Matrix::Zero(classes, embeddings.cols());
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i];
    if (k < 0 || k >= classes) throw InputError("init_prototypes: label out of range");
    sums.row(k) += embeddings.row(static_cast<Eigen::Index>(i));
    ++counts[static_cast<std::size_t>(k)];
  }
  for (int k = 0; k < classes; ++k) {
    const int count = counts[static_cast<std::size_t>(k)];
    if (count == 0) {
      throw InitializationError("class " + std::to_string(k) + " has no clean example to build a prototype");
    }
    RowVector mean = sums.row(k) / count;
    const double norm = mean.norm();
    if (norm < kDegenerateNorm) {
      throw DegeneratePrototypeError("class " + std::to_string(k) + " has a numerically zero mean embedding");
    }
    sums.row(k) = mean / norm;
  }
  return PrototypeBank(std::move(sums), std::move(counts), gamma);
}

bool open_set_decision(const RowVector& q, int coarse_label, const PrototypeBank& bank, double tau) {
  return cosine_distance(q, bank.prototype(coarse_label)) < tau;
}

PoolDecisions decisions_from_flags(const Pool& pool, std::span<const std::uint8_t> batch_flags,
                                   std::span<const std::uint8_t> queue_flags, OsdMode mode) {
  const int b = pool.batch_size;
  if (static_cast<int>(batch_flags.size()) != b ||
      static_cast<int>(queue_flags.size()) != pool.size() - 2 * b) {
    throw InternalError("decisions_from_flags: flag count mismatch");
  }
  PoolDecisions d;
  const auto rows = static_cast<std::size_t>(pool.size());
  d.flag.resize(rows);
  d.eligible.resize(rows);
  d.included.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t decided = pool.source[r] == PoolSource::queue
                                     ? queue_flags[r - 2 * static_cast<std::size_t>(b)]
                                     : batch_flags[static_cast<std::size_t>(pool.batch_row[r])];
    if (pool.partition[r] == Partition::clean) {
      d.flag[r] = 0;
      d.eligible[r] = 1;
      d.included[r] = 1;
    } else {
      const std::uint8_t f = effective_flag(Partition::noisy, decided, mode);
      d.flag[r] = f;
      d.eligible[r] = f;
      d.included[r] = mode == OsdMode::remove_delimiters ? f : 1;
    }
  }
  return d;
}

std::vector<std::uint8_t> decide_batch(const Pool& pool, const PrototypeBank& bank, double tau) {
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(pool.batch_size), 0);
  for (int j = 0; j < pool.batch_size; ++j) {
    const auto k = static_cast<std::size_t>(j);
    if (pool.partition[k] == Partition::noisy) {
      flags[k] = open_set_decision(pool.vectors.row(j), pool.labels[k], bank, tau);
    }
  }
  return flags;
}

std::vector<std::uint8_t> decide_queue(const Pool& pool, const PrototypeBank& bank, double tau) {
  const int b = pool.batch_size;
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(pool.size() - 2 * b), 0);
  for (int r = 2 * b; r < pool.size(); ++r) {
    const auto k = static_cast<std::size_t>(r);
    if (pool.partition[k] == Partition::noisy) {
      flags[k - 2 * static_cast<std::size_t>(b)] = open_set_decision(pool.vectors.row(r), pool.labels[k], bank, tau);
    }
  }
  return flags;
}

PoolDecisions decide_pool(const Pool& pool, const PrototypeBank& bank, double tau, OsdMode mode) {
  return decisions_from_flags(pool, decide_batch(pool, bank, tau), decide_queue(pool, bank, tau), mode);
}

std::vector<int> select_positives(const Pool& pool, int anchor, const PrototypeBank& bank, double tau,
                                  OsdMode mode) {
  if (anchor < 0 || anchor >= pool.batch_size) throw InputError("select_positives: anchor is not a batch row");
  const PoolDecisions d = decide_pool(pool, bank, tau, mode);
  const int label = pool.labels[static_cast<std::size_t>(anchor)];
  std::vector<int> positives;
  for (int a = 0; a < pool.size(); ++a) {
    const auto k = static_cast<std::size_t>(a);
    if (a != anchor && d.included[k] && d.eligible[k] && pool.labels[k] == label) positives.push_back(a);
  }
  return positives;
}

std::vector<int> anchor_rows(const Pool& pool, const PoolDecisions& decisions) {
  std::vector<int> anchors;
  for (int j = 0; j < pool.batch_size; ++j) {
    const auto k = static_cast<std::size_t>(j);
    if (decisions.included[k] && (pool.partition[k] == Partition::clean || decisions.flag[k])) {
      anchors.push_back(j);
    }
  }
  return anchors;
}

double contrastive_loss(const RowVector& q, const Matrix& positives, const Matrix& contrast, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (positives.rows() == 0) return 0.0;
  const Vector logits = contrast * q.transpose() / temperature;
  const double top = logits.maxCoeff();
  const double log_denom = top + std::log((logits.array() - top).exp().sum());
  const double positive_mean = (positives * q.transpose()).mean() / temperature;
  return log_denom - positive_mean;
}

ClassificationTerm classification_loss(const Matrix& posteriors, std::span<const Partition> partition,
                                       std::span<const int> labels, std::span<const std::uint8_t> flags) {
  const auto n = static_cast<std::size_t>(posteriors.rows());
  if (partition.size() != n || labels.size() != n || flags.size() != n) {
    throw InternalError("classification_loss: batch metadata mismatch");
  }
  ClassificationTerm term;
  double clean_sum = 0.0, noisy_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double nll = -std::log(posteriors(static_cast<Eigen::Index>(i), labels[i]));
    if (partition[i] == Partition::clean) {
      clean_sum += nll;
      ++term.clean_count;
    } else if (flags[i]) {
      noisy_sum += nll;
      ++term.incorporated_count;
    }
  }
  term.empty = term.clean_count == 0 && term.incorporated_count == 0;
  if (term.clean_count > 0) term.value += clean_sum / term.clean_count;
  if (term.incorporated_count > 0) term.value += noisy_sum / term.incorporated_count;
  return term;
}

ClassificationTerm classification_loss_from_logits(const Matrix& logits, std::span<const Partition> partition,
                                                   std::span<const int> labels,
                                                   std::span<const std::uint8_t> flags) {
  const auto n = static_cast<std::size_t>(logits.rows());
  if (partition.size() != n || labels.size() != n || flags.size() != n) {
    throw InternalError("classification_loss: batch metadata mismatch");
  }
  ClassificationTerm term;
  for (std::size_t i = 0; i < n; ++i) {
    if (partition[i] == Partition::clean) {
      ++term.clean_count;
    } else if (flags[i]) {
      ++term.incorporated_count;
    }
  }
  term.empty = term.clean_count == 0 && term.incorporated_count == 0;
  const std::vector<double> nll = cross_entropy_rows(logits, labels);
  const Matrix p = softmax_rows(logits);
  term.dlogits = Matrix::Zero(logits.rows(), logits.cols());
  double clean_sum = 0.0, noisy_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double weight = 0.0;
    if (partition[i] == Partition::clean) {
      clean_sum += nll[i];
      weight = 1.0 / term.clean_count;
    } else if (flags[i]) {
      noisy_sum += nll[i];
      weight = 1.0 / term.incorporated_count;
    } else {
      continue;
    }
    const auto row = static_cast<Eigen::Index>(i);
    term.dlogits.row(row) = weight * p.row(row);
    term.dlogits(row, labels[i]) -= weight;
  }
  if (term.clean_count > 0) term.value += clean_sum / term.clean_count;
  if (term.incorporated_count > 0) term.value += noisy_sum / term.incorporated_count;
  return term;
}

ContrastiveTerm contrastive_objective(const Pool& pool, const PoolDecisions& decisions, double temperature,
                                      bool want_grad, Execution execution) {
  ContrastiveTerm term;
  term.anchors = anchor_rows(pool, decisions);
  std::vector<int> anchor_labels;
  for (int row : term.anchors) {
    anchor_labels.push_back(pool.labels[static_cast<std::size_t>(row)]);
    if (pool.partition[static_cast<std::size_t>(row)] == Partition::clean) {
      ++term.clean_anchors;
    } else {
      ++term.incorporated_anchors;
    }
  }
  const ContrastiveRows rows = contrastive_rows(pool.vectors, term.anchors, anchor_labels, pool.labels,
                                                decisions.eligible, decisions.included, temperature, execution);
  term.per_anchor_loss = rows.loss;
  std::vector<double> weight(term.anchors.size());
  double clean_sum = 0.0, noisy_sum = 0.0;
  for (std::size_t i = 0; i < term.anchors.size(); ++i) {
    if (pool.partition[static_cast<std::size_t>(term.anchors[i])] == Partition::clean) {
      clean_sum += rows.loss[i];
      weight[i] = 1.0 / term.clean_anchors;
    } else {
      noisy_sum += rows.loss[i];
      weight[i] = 1.0 / term.incorporated_anchors;
    }
  }
  if (term.clean_anchors > 0) term.value += clean_sum / term.clean_anchors;
  if (term.incorporated_anchors > 0) term.value += noisy_sum / term.incorporated_anchors;

  if (want_grad) {
    const int b = pool.batch_size;
    term.query_grad = Matrix::Zero(b, pool.vectors.cols());
    if (!term.anchors.empty()) {
      const Eigen::Map<const Vector> w(weight.data(), static_cast<Eigen::Index>(weight.size()));
      const Matrix weighted = w.asDiagonal() * rows.coeff;
      const Matrix anchor_vectors = gather_rows(pool.vectors, term.anchors);
      // Anchor role: d/dq_i = sum_a coeff_ia v_a / t.
      const Matrix anchor_grad = weighted * pool.vectors / temperature;
      for (std::size_t i = 0; i < term.anchors.size(); ++i) {
        term.query_grad.row(term.anchors[i]) += anchor_grad.row(static_cast<Eigen::Index>(i));
      }
      // Pool-member role of the batch queries: d/dv_a = sum_i coeff_ia q_i / t.
      term.query_grad += weighted.leftCols(b).transpose() * anchor_vectors / temperature;
    }
  }
  return term;
}

double total_loss(double cls, double cont, double beta) {
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  return cls + beta * cont;
}

void Step2Config::validate() const {
  if (!(tau >= 0.0)) throw ConfigError("tau must be non-negative");
  check_gamma(gamma);
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(key_momentum >= 0.0 && key_momentum < 1.0)) throw ConfigError("key momentum must lie in [0, 1)");
  if (queue_size < 0) throw ConfigError("queue size must be non-negative");
  if (epochs < 1) throw ConfigError("step2 needs at least one epoch");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
}

StepEvaluation evaluate_step(const Model& query, const StepProblem& problem, bool want_grad,
                             const Model::Pass* precomputed) {
  StepEvaluation eval;
  eval.pass = precomputed ? *precomputed : query.forward(problem.query_input, true, true);
  eval.pool = build_pool(eval.pass.embedding, problem.keys, problem.meta, problem.queue);
  eval.decisions = decisions_from_flags(eval.pool, problem.batch_flags, problem.queue_flags, problem.mode);

  const int b = eval.pool.batch_size;
  const std::span<const std::uint8_t> batch_flags(eval.decisions.flag.data(), static_cast<std::size_t>(b));
  eval.classification =
      classification_loss_from_logits(eval.pass.logits, problem.meta.partition, problem.meta.labels, batch_flags);
  if (problem.contrastive) {
    eval.contrastive = contrastive_objective(eval.pool, eval.decisions, problem.temperature, want_grad);
  }
  eval.losses.cls = eval.classification.value;
  eval.losses.cont = eval.contrastive.value;
  eval.losses.beta = problem.beta;
  eval.losses.temperature = problem.temperature;
  eval.losses.total = total_loss(eval.losses.cls, eval.losses.cont, problem.beta);
  eval.losses.cls_empty = eval.classification.empty;

  if (want_grad) {
    eval.grad.assign(query.param_count(), 0.0);
    if (problem.contrastive && problem.beta != 0.0) {
      const Matrix dembedding = problem.beta * eval.contrastive.query_grad;
      query.backward(eval.pass, &eval.classification.dlogits, &dembedding, eval.grad);
    } else {
      query.backward(eval.pass, &eval.classification.dlogits, nullptr, eval.grad);
    }
  }
  return eval;
}

TrainState init_train_state(const NoisyDataset& dataset, const CoarseLabeledDataset& coarse, const Model& initial,
                            const Step2Config& config) {
  config.validate();
  if (coarse.size() != dataset.size()) throw InputError("step1 artifact does not match the dataset");
  if (initial.spec().classes != dataset.c) throw InputError("model head does not match the known class count");
  TrainState state;
  state.query = initial;
  state.key = initial;
  state.optimizer = Sgd(initial.param_count(), config.sgd_momentum, config.weight_decay);
  state.queue = MomentumQueue(static_cast<std::size_t>(config.queue_size));
  std::vector<int> clean_rows, clean_labels;
  for (int i = 0; i < dataset.size(); ++i) {
    if (coarse.partition[static_cast<std::size_t>(i)] == Partition::clean) {
      clean_rows.push_back(i);
      clean_labels.push_back(coarse.coarse[static_cast<std::size_t>(i)]);
    }
  }
  const Matrix embeddings = state.query.embed(gather_rows(dataset.features, clean_rows));
  state.bank = init_prototypes(embeddings, clean_labels, dataset.c, config.gamma);
  return state;
}

StepStats train_step(TrainState& state, const NoisyDataset& dataset, const CoarseLabeledDataset& coarse,
                     std::span<const int> batch, const Step2Config& config, double lr, std::uint64_t step_seed) {
  StepProblem problem;
  for (int id : batch) {
    const auto k = static_cast<std::size_t>(id);
    problem.meta.labels.push_back(coarse.coarse[k]);
    problem.meta.partition.push_back(coarse.partition[k]);
    problem.meta.example_ids.push_back(id);
  }
  ViewBatch views = forward_views(state.query, state.key, gather_rows(dataset.features, batch), batch,
                                  config.augment, step_seed);

  // Open-set decisions against the prototypes as they stand at step start.
  StepStats stats;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    std::uint8_t f = 0;
    if (problem.meta.partition[j] == Partition::noisy) {
      f = open_set_decision(views.query.embedding.row(static_cast<Eigen::Index>(j)), problem.meta.labels[j],
                            state.bank, config.tau);
    }
    problem.batch_flags.push_back(f);
  }
  for (const QueueEntry& entry : state.queue.entries()) {
    problem.queue_flags.push_back(entry.partition == Partition::noisy &&
                                  open_set_decision(entry.key.transpose(), entry.label, state.bank, config.tau));
  }
  problem.keys = views.keys;
  problem.query_input = std::move(views.query_input);
  problem.queue = std::move(state.queue);
  problem.mode = config.osd;
  problem.contrastive = config.contrastive;
  problem.beta = config.beta;
  problem.temperature = config.temperature;

  StepEvaluation eval = evaluate_step(state.query, problem, true, &views.query);
  state.queue = std::move(problem.queue);

  stats.losses = eval.losses;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (problem.meta.partition[j] == Partition::clean) {
      ++stats.clean_anchors;
    } else if (eval.decisions.flag[j]) {
      ++stats.incorporated;
    } else {
      ++stats.delimiters;
    }
  }

  state.optimizer.step(state.query.params, eval.grad, lr);
  momentum_update(state.key, state.query, config.key_momentum);

  std::vector<QueueEntry> pushed;
  pushed.reserve(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    pushed.push_back(QueueEntry{problem.keys.row(static_cast<Eigen::Index>(j)).transpose(), problem.meta.labels[j],
                                problem.meta.partition[j], eval.decisions.flag[j] != 0, problem.meta.example_ids[j]});
  }
  state.queue.push(pushed);

  for (int row : anchor_rows(eval.pool, eval.decisions)) {
    state.bank.update(views.query.embedding.row(row), problem.meta.labels[static_cast<std::size_t>(row)]);
  }
  return stats;
}

double accuracy(const Model& model, const Matrix& features, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const std::vector<int> predicted = argmax_rows(model.logits(features));
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

EpochStats train_epoch(TrainState& state, const NoisyDataset& dataset, const CoarseLabeledDataset& coarse,
                       const Step2Config& config) {
  config.validate();
  const int n = dataset.size();
  EpochStats stats;
  stats.lr = cosine_lr(config.lr, config.min_lr, state.epoch, config.epochs);
  const Matrix start_prototypes = state.bank.prototypes();

  const auto epoch_tag = static_cast<std::uint64_t>(state.epoch);
  Rng shuffle(derive_seed(config.seed, {21, epoch_tag}));
  const std::vector<std::size_t> order = shuffle.permutation(static_cast<std::size_t>(n));
  int batches = 0;
  for (int start = 0; start < n; start += config.batch_size, ++batches) {
    const int end = std::min(n, start + config.batch_size);
    std::vector<int> batch;
    for (int i = start; i < end; ++i) batch.push_back(static_cast<int>(order[static_cast<std::size_t>(i)]));
    StepStats step = train_step(state, dataset, coarse, batch, config, stats.lr,
                                derive_seed(config.seed, {22, epoch_tag, static_cast<std::uint64_t>(batches)}));
    stats.loss_cls += step.losses.cls;
    stats.loss_cont += step.losses.cont;
    stats.loss_total += step.losses.total;
    stats.steps.push_back(step);
  }
  if (batches > 0) {
    stats.loss_cls /= batches;
    stats.loss_cont /= batches;
    stats.loss_total /= batches;
  }
  ++state.epoch;
  stats.epoch = state.epoch;

  for (int k = 0; k < state.bank.classes(); ++k) {
    const double drift = (state.bank.prototype(k) - start_prototypes.row(k)).norm();
    stats.drift_max = std::max(stats.drift_max, drift);
    stats.drift_mean += drift / state.bank.classes();
  }

  stats.clean_count = coarse.clean_count();
  const Matrix embeddings = state.query.embed(dataset.features);
  int true_open_delimiters = 0, open_noisy = 0;
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (coarse.partition[k] != Partition::noisy) continue;
    const std::uint8_t f = effective_flag(
        Partition::noisy, open_set_decision(embeddings.row(i), coarse.coarse[k], state.bank, config.tau), config.osd);
    const bool open = dataset.is_open_set(i);
    open_noisy += open;
    if (f) {
      ++stats.incorporated;
    } else {
      ++stats.delimiters;
      true_open_delimiters += open;
    }
  }
  stats.osd_delimiter_precision = stats.delimiters > 0 ? static_cast<double>(true_open_delimiters) / stats.delimiters : 0.0;
  stats.osd_open_set_recall = open_noisy > 0 ? static_cast<double>(true_open_delimiters) / open_noisy : 0.0;
  stats.test_accuracy = accuracy(state.query, dataset.test_features, dataset.test_labels);
  return stats;
}

}  // namespace cecl
