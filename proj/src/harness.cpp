#include "cecl/harness.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <omp.h>

#include <json.hpp>

#include "cecl/checkpoint.hpp"
#include "cecl/dataset_io.hpp"
#include "cecl/errors.hpp"
#include "cecl/json_io.hpp"
#include "cecl/nn.hpp"
#include "cecl/optim.hpp"

namespace cecl {

namespace {

template <typename F>
auto stage(const char* name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<int> rows_where(const NoisyDataset& dataset, bool open_set) {
  std::vector<int> rows;
  for (int i = 0; i < dataset.size(); ++i) {
    if (dataset.is_open_set(i) == open_set) rows.push_back(i);
  }
  return rows;
}

std::vector<int> pick(std::span<const int> values, std::span<const int> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(values[static_cast<std::size_t>(r)]);
  return out;
}

void write_summary(const std::filesystem::path& dir, const ExperimentConfig& config,
                   const std::vector<double>& accuracy) {
  const LastK last = last_k_stats(accuracy, config.last_k);
  nlohmann::ordered_json j;
  j["schema_version"] = kRunSchemaVersion;
  j["epochs"] = accuracy.size();
  j["last_k"] = last.count;
  j["accuracy_mean"] = last.mean;
  j["accuracy_std"] = last.std;
  j["final_accuracy"] = accuracy.back();
  std::ofstream(dir / "summary.json") << j.dump(1) << '\n';
  std::ofstream csv(dir / "summary.csv");
  csv.precision(17);
  csv << "key,value\n"
      << "schema_version," << kRunSchemaVersion << '\n'
      << "epochs," << accuracy.size() << '\n'
      << "last_k," << last.count << '\n'
      << "accuracy_mean," << last.mean << '\n'
      << "accuracy_std," << last.std << '\n'
      << "final_accuracy," << accuracy.back() << '\n';
}

void write_embeddings(const Model& model, const NoisyDataset& dataset, const std::filesystem::path& path) {
  const Matrix e = model.embed(dataset.test_features);
  std::ofstream out(path);
  out.precision(17);
  out << "label";
  for (Eigen::Index d = 0; d < e.cols(); ++d) out << ",e" << d;
  out << '\n';
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    out << dataset.test_labels[static_cast<std::size_t>(i)];
    for (Eigen::Index d = 0; d < e.cols(); ++d) out << ',' << e(i, d);
    out << '\n';
  }
}

}  // namespace

LastK last_k_stats(std::span<const double> values, int k) {
  if (values.empty()) throw InputError("no values to aggregate");
  if (k < 1) throw ConfigError("last-k window must be positive");
  const std::size_t n = std::min(values.size(), static_cast<std::size_t>(k));
  const auto tail = values.subspan(values.size() - n);
  LastK out;
  out.count = static_cast<int>(n);
  out.mean = std::accumulate(tail.begin(), tail.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : tail) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(n));
  return out;
}

void apply_execution_mode(const ExperimentConfig& config) {
  if (config.deterministic) {
    set_default_execution(Execution::serial);
    omp_set_num_threads(1);
  } else {
    set_default_execution(Execution::parallel);
  }
}

CleanCorpus make_corpus(const ExperimentConfig& config) {
  if (config.corpus == CorpusKind::images) {
    ImageCorpusSpec spec = config.images;
    spec.seed = derive_seed(config.seed, {1});
    return make_synthetic_images(spec);
  }
  BlobSpec spec = config.blobs;
  spec.seed = derive_seed(config.seed, {1});
  return make_synthetic_blobs(spec);
}

NoisyDataset make_dataset(const ExperimentConfig& config) {
  if (!config.data_path.empty()) return load_dataset(config.data_path);
  return build_open_set_noise(make_corpus(config), resolved_noise(config));
}

Step1Artifact make_step1(const ExperimentConfig& config, const NoisyDataset& dataset) {
  if (!config.step1_path.empty()) return load_step1(config.step1_path);
  return run_step1(dataset, resolved_step1(config, dataset));
}

std::string epoch_record(const EpochStats& s) {
  nlohmann::ordered_json j;
  j["v"] = kRunSchemaVersion;
  j["epoch"] = s.epoch;
  j["lr"] = s.lr;
  j["loss_cls"] = s.loss_cls;
  j["loss_cont"] = s.loss_cont;
  j["loss_total"] = s.loss_total;
  j["clean"] = s.clean_count;
  j["incorporated"] = s.incorporated;
  j["delimiters"] = s.delimiters;
  j["drift_max"] = s.drift_max;
  j["drift_mean"] = s.drift_mean;
  j["test_accuracy"] = s.test_accuracy;
  j["osd_precision"] = s.osd_delimiter_precision;
  j["osd_recall"] = s.osd_open_set_recall;
  return j.dump();
}

EpochStats parse_epoch_record(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    EpochStats s;
    s.epoch = j.at("epoch").get<int>();
    s.lr = j.at("lr").get<double>();
    s.loss_cls = j.at("loss_cls").get<double>();
    s.loss_cont = j.at("loss_cont").get<double>();
    s.loss_total = j.at("loss_total").get<double>();
    s.clean_count = j.at("clean").get<int>();
    s.incorporated = j.at("incorporated").get<int>();
    s.delimiters = j.at("delimiters").get<int>();
    s.drift_max = j.at("drift_max").get<double>();
    s.drift_mean = j.at("drift_mean").get<double>();
    s.test_accuracy = j.at("test_accuracy").get<double>();
    s.osd_delimiter_precision = j.at("osd_precision").get<double>();
    s.osd_open_set_recall = j.at("osd_recall").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed epoch record: ") + e.what());
  }
}

std::vector<double> Step2Result::accuracy() const {
  std::vector<double> out;
  for (const EpochStats& e : epochs) out.push_back(e.test_accuracy);
  return out;
}

Step2Result run_step2(const ExperimentConfig& config, const NoisyDataset& dataset, const Step1Artifact& step1,
                      const EpochCallback& on_epoch, std::optional<TrainState> resume) {
  const Step2Config s2 = resolved_step2(config, dataset);
  Step2Result result;
  result.state = resume ? std::move(*resume) : init_train_state(dataset, step1.coarse, step1.model(), s2);
  while (result.state.epoch < s2.epochs) {
    EpochStats stats = train_epoch(result.state, dataset, step1.coarse, s2);
    stats.steps.clear();
    if (on_epoch) on_epoch(stats, result.state);
    result.epochs.push_back(std::move(stats));
  }
  if (!result.epochs.empty()) result.summary = last_k_stats(result.accuracy(), config.last_k);
  return result;
}

std::filesystem::path run_experiment(const ExperimentConfig& config, bool resume) {
  config.validate();
  apply_execution_mode(config);
  const std::filesystem::path dir = config.out;
  std::filesystem::create_directories(dir);
  const std::string config_text = format_config(config);

  std::optional<TrainState> resume_state;
  std::vector<std::string> previous;
  if (resume) {
    Checkpoint ck = load_checkpoint(dir / "checkpoint.json");
    if (ck.config_text != config_text) throw ConfigError("config differs from the checkpointed run");
    previous = read_lines(dir / "epochs.jsonl");
    if (static_cast<int>(previous.size()) < ck.state.epoch) throw InputError("epoch log is shorter than the checkpoint");
    previous.resize(static_cast<std::size_t>(ck.state.epoch));
    resume_state = std::move(ck.state);
  } else {
    save_config(config, dir / "config.cfg");
  }

  const NoisyDataset dataset = stage("datagen", [&] { return make_dataset(config); });
  const Step1Artifact step1 = stage("step1", [&] {
    if (resume) return load_step1(dir / "step1.json");
    Step1Artifact a = make_step1(config, dataset);
    save_step1(a, dir / "step1.json");
    return a;
  });

  std::vector<double> accuracy;
  {
    std::ofstream log(dir / "epochs.jsonl", std::ios::trunc);
    for (const std::string& line : previous) {
      log << line << '\n';
      accuracy.push_back(parse_epoch_record(line).test_accuracy);
    }
    log.flush();
    const Step2Result r = stage("step2", [&] {
      return run_step2(
          config, dataset, step1,
          [&](const EpochStats& stats, const TrainState& state) {
            log << epoch_record(stats) << '\n';
            log.flush();
            const bool last = state.epoch >= config.step2.epochs;
            if (last || (config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0)) {
              save_checkpoint(state, config_text, dir / "checkpoint.json");
            }
          },
          std::move(resume_state));
    });
    for (const EpochStats& e : r.epochs) accuracy.push_back(e.test_accuracy);

    stage("summary", [&] {
      write_summary(dir, config, accuracy);
      const std::vector<int> open_rows = rows_where(dataset, true);
      if (open_rows.empty()) {
        write_transition_csv(TransitionMatrix{{}, dataset.c, Matrix(0, dataset.c), {}, {}, {}}, dir / "transition.csv");
      } else {
        write_transition_csv(class_expansion_probe(r.state.query, gather_rows(dataset.features, open_rows),
                                                   pick(dataset.source_class, open_rows)),
                             dir / "transition.csv");
      }
      write_embeddings(r.state.query, dataset, dir / "embeddings.csv");
      return 0;
    });
  }
  return dir;
}

TransitionMatrix transition_from_predictions(std::span<const int> predicted, std::span<const int> source_class,
                                             int columns) {
  if (predicted.empty()) throw DomainError("empty open-set pool");
  if (predicted.size() != source_class.size()) throw InputError("one source class per prediction required");
  TransitionMatrix m;
  m.columns = columns;
  m.source_classes.assign(source_class.begin(), source_class.end());
  std::sort(m.source_classes.begin(), m.source_classes.end());
  m.source_classes.erase(std::unique(m.source_classes.begin(), m.source_classes.end()), m.source_classes.end());
  const auto rows = static_cast<Eigen::Index>(m.source_classes.size());
  m.fractions = Matrix::Zero(rows, columns);
  m.counts.assign(m.source_classes.size(), 0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto row = std::lower_bound(m.source_classes.begin(), m.source_classes.end(), source_class[i]) -
                     m.source_classes.begin();
    if (predicted[i] < 0 || predicted[i] >= columns) throw InputError("prediction out of range");
    m.fractions(row, predicted[i]) += 1.0;
    ++m.counts[static_cast<std::size_t>(row)];
  }
  for (Eigen::Index r = 0; r < rows; ++r) {
    m.fractions.row(r) /= m.counts[static_cast<std::size_t>(r)];
    Eigen::Index best = 0;
    m.concentration.push_back(m.fractions.row(r).maxCoeff(&best));
    m.dominant_column.push_back(static_cast<int>(best));
  }
  return m;
}

TransitionMatrix class_expansion_probe(const Model& model, const Matrix& features, std::span<const int> source_class) {
  if (features.rows() == 0) throw DomainError("empty open-set pool");
  return transition_from_predictions(argmax_rows(model.logits(features)), source_class, model.spec().classes);
}

void write_transition_csv(const TransitionMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  out << "source_class,count,concentration,dominant";
  for (int k = 0; k < matrix.columns; ++k) out << ",c" << k;
  out << '\n';
  for (std::size_t r = 0; r < matrix.source_classes.size(); ++r) {
    out << matrix.source_classes[r] << ',' << matrix.counts[r] << ',' << matrix.concentration[r] << ','
        << matrix.dominant_column[r];
    for (int k = 0; k < matrix.columns; ++k) out << ',' << matrix.fractions(static_cast<Eigen::Index>(r), k);
    out << '\n';
  }
}

ClassifierSchedule classifier_schedule(const ExperimentConfig& config, const NoisyDataset& dataset) {
  ClassifierSchedule s;
  s.epochs = config.step1.epochs;
  s.batch_size = config.step1.batch_size;
  s.lr = config.step1.lr;
  s.min_lr = config.step1.min_lr;
  s.momentum = config.step1.sgd_momentum;
  s.weight_decay = config.step1.weight_decay;
  s.augment = config.augment;
  s.augment.image = dataset.image;
  s.seed = derive_seed(config.seed, {5});
  return s;
}

std::vector<double> train_classifier(Model& model, const Matrix& x, std::span<const int> y,
                                     const ClassifierSchedule& schedule, const Matrix& test_x,
                                     std::span<const int> test_y) {
  if (static_cast<Eigen::Index>(y.size()) != x.rows()) throw InputError("one label per training row required");
  if (schedule.epochs < 1 || schedule.batch_size < 1) throw ConfigError("classifier schedule needs positive sizes");
  Sgd optimizer(model.param_count(), schedule.momentum, schedule.weight_decay);
  std::vector<double> accuracy_per_epoch;
  const auto n = static_cast<int>(y.size());
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = cosine_lr(schedule.lr, schedule.min_lr, epoch, schedule.epochs);
    const auto tag = static_cast<std::uint64_t>(epoch);
    Rng rng(derive_seed(schedule.seed, {tag}));
    const std::vector<std::size_t> order = rng.permutation(static_cast<std::size_t>(n));
    int batch = 0;
    for (int start = 0; start < n; start += schedule.batch_size, ++batch) {
      const int end = std::min(n, start + schedule.batch_size);
      std::vector<int> ids, labels;
      for (int i = start; i < end; ++i) {
        ids.push_back(static_cast<int>(order[static_cast<std::size_t>(i)]));
        labels.push_back(y[order[static_cast<std::size_t>(i)]]);
      }
      const Matrix inputs = augment_batch(gather_rows(x, ids), ids, schedule.augment,
                                          derive_seed(schedule.seed, {tag, static_cast<std::uint64_t>(batch)}), 0);
      const Model::Pass pass = model.forward(inputs, true, false);
      Matrix dlogits = softmax_rows(pass.logits);
      for (std::size_t i = 0; i < labels.size(); ++i) dlogits(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
      dlogits /= static_cast<double>(labels.size());
      std::vector<double> grad(model.param_count(), 0.0);
      model.backward(pass, &dlogits, nullptr, grad);
      optimizer.step(model.params, grad, lr);
    }
    accuracy_per_epoch.push_back(accuracy(model, test_x, test_y));
  }
  return accuracy_per_epoch;
}

ProbeResult probe_experiment(const ExperimentConfig& config, const NoisyDataset& dataset) {
  const std::vector<int> known = rows_where(dataset, false);
  const std::vector<int> open = rows_where(dataset, true);
  if (open.empty()) throw DomainError("empty open-set pool");
  ProbeResult r;
  r.model = Model(resolved_model(config, dataset), derive_seed(config.seed, {6}));
  r.accuracy = train_classifier(r.model, gather_rows(dataset.features, known), pick(dataset.truth, known),
                                classifier_schedule(config, dataset), dataset.test_features, dataset.test_labels);
  r.matrix = class_expansion_probe(r.model, gather_rows(dataset.features, open), pick(dataset.source_class, open));
  return r;
}

CsVsCsosResult cs_vs_csos_experiment(const ExperimentConfig& config, const NoisyDataset& dataset) {
  const std::vector<int> known = rows_where(dataset, false);
  const std::vector<int> open = rows_where(dataset, true);
  const ClassifierSchedule schedule = classifier_schedule(config, dataset);
  const Model initial(resolved_model(config, dataset), derive_seed(config.seed, {6}));

  CsVsCsosResult r;
  Model cs = initial;
  const Matrix x_known = gather_rows(dataset.features, known);
  const std::vector<int> y_known = pick(dataset.truth, known);
  r.cs = train_classifier(cs, x_known, y_known, schedule, dataset.test_features, dataset.test_labels);

  std::vector<int> rows = known;
  std::vector<int> labels = y_known;
  if (!open.empty()) {
    const Matrix x_open = gather_rows(dataset.features, open);
    r.probe = class_expansion_probe(cs, x_open, pick(dataset.source_class, open));
    const Matrix posterior = softmax_rows(cs.logits(x_open));
    for (Eigen::Index i = 0; i < posterior.rows(); ++i) {
      Eigen::Index best = 0;
      if (posterior.row(i).maxCoeff(&best) >= config.probe_threshold) {
        rows.push_back(open[static_cast<std::size_t>(i)]);
        labels.push_back(static_cast<int>(best));
        ++r.admitted;
      }
    }
  }
  Model csos = initial;
  r.csos = train_classifier(csos, gather_rows(dataset.features, rows), labels, schedule, dataset.test_features,
                            dataset.test_labels);
  r.cs_final = last_k_stats(r.cs, config.last_k);
  r.csos_final = last_k_stats(r.csos, config.last_k);
  return r;
}

void write_cs_vs_csos(const CsVsCsosResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "cs_vs_csos.csv");
  csv.precision(17);
  csv << "epoch,cs,csos\n";
  for (std::size_t e = 0; e < result.cs.size(); ++e) {
    csv << e + 1 << ',' << result.cs[e] << ',' << result.csos[e] << '\n';
  }
  nlohmann::ordered_json j;
  j["schema_version"] = kRunSchemaVersion;
  j["admitted"] = result.admitted;
  j["cs_mean"] = result.cs_final.mean;
  j["cs_std"] = result.cs_final.std;
  j["csos_mean"] = result.csos_final.mean;
  j["csos_std"] = result.csos_final.std;
  j["last_k"] = result.cs_final.count;
  std::ofstream(dir / "cs_vs_csos.json") << j.dump(1) << '\n';
  if (!result.probe.source_classes.empty()) write_transition_csv(result.probe, dir / "transition.csv");
}

std::vector<TauPoint> tau_sweep(const ExperimentConfig& config, const NoisyDataset& dataset,
                                const Step1Artifact& step1, std::span<const double> taus) {
  if (taus.size() < 2) throw ConfigError("a tau sweep needs at least 2 values");
  std::vector<TauPoint> points;
  for (double tau : taus) {
    ExperimentConfig c = config;
    c.step2.tau = tau;
    const Step2Result r = run_step2(c, dataset, step1);
    points.push_back(TauPoint{tau, r.summary, r.epochs.back().incorporated, r.epochs.back().delimiters});
  }
  return points;
}

void write_tau_sweep(std::span<const TauPoint> points, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  out << "tau,accuracy_mean,accuracy_std,last_k,incorporated,delimiters\n";
  for (const TauPoint& p : points) {
    out << p.tau << ',' << p.accuracy.mean << ',' << p.accuracy.std << ',' << p.accuracy.count << ','
        << p.incorporated << ',' << p.delimiters << '\n';
  }
}

std::vector<AblationVariant> ablation_variants() {
  return {
      {"cecl", true, true, false},
      {"no_cont", false, true, false},
      {"no_osd", true, false, false},
      {"rdos", true, true, true},
      {"no_cont_osd", false, false, false},
  };
}

ExperimentConfig with_variant(ExperimentConfig config, const AblationVariant& variant) {
  config.ablation_cont = variant.cont;
  config.ablation_osd = variant.osd;
  config.ablation_rdos = variant.rdos;
  return config;
}

PoolSnapshot pool_snapshot(const TrainState& state, const NoisyDataset& dataset, const CoarseLabeledDataset& coarse,
                           double tau, bool keep_delimiters) {
  const Matrix all = state.query.embed(dataset.features);
  PoolSnapshot snap;
  std::vector<int> rows;
  for (int i = 0; i < dataset.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const int label = coarse.coarse[k];
    const bool delimiter =
        coarse.partition[k] == Partition::noisy && !open_set_decision(all.row(i), label, state.bank, tau);
    if (delimiter) {
      ++snap.delimiters;
      if (!keep_delimiters) continue;
    }
    rows.push_back(i);
    snap.structure.labels.push_back(delimiter ? -1 : label);
    snap.structure.is_anchor.push_back(!delimiter);
  }
  snap.embeddings = gather_rows(all, rows);
  return snap;
}

SeparationStudy separation_study(const ExperimentConfig& config, const NoisyDataset& dataset,
                                 const Step1Artifact& step1) {
  const auto variants = ablation_variants();
  const ExperimentConfig with_cfg = with_variant(config, variants[0]);
  const ExperimentConfig without_cfg = with_variant(config, variants[3]);
  const Step2Result with_run = run_step2(with_cfg, dataset, step1);
  const Step2Result without_run = run_step2(without_cfg, dataset, step1);

  SeparationStudy study;
  study.with_delimiters =
      cluster_stats(with_run.state.query.embed(dataset.test_features), dataset.test_labels, dataset.c);
  study.without_delimiters =
      cluster_stats(without_run.state.query.embed(dataset.test_features), dataset.test_labels, dataset.c);
  const std::uint64_t pair_seed = derive_seed(config.seed, {7});
  const PoolSnapshot with_pool = pool_snapshot(with_run.state, dataset, step1.coarse, config.step2.tau, true);
  const PoolSnapshot without_pool = pool_snapshot(without_run.state, dataset, step1.coarse, config.step2.tau, false);
  const double u_with = align_uniform(with_pool.embeddings, with_pool.structure, pair_seed).uniform;
  const double u_without = align_uniform(without_pool.embeddings, without_pool.structure, pair_seed).uniform;
  study.report = centroid_separation_report(study.with_delimiters, u_with, study.without_delimiters, u_without);
  return study;
}

}  // namespace cecl
