#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "cecl/checkpoint.hpp"
#include "cecl/config.hpp"
#include "cecl/errors.hpp"
#include "cecl/harness.hpp"
#include "cecl/report.hpp"

using namespace cecl;
namespace fs = std::filesystem;

namespace {

ExperimentConfig quick_config(const fs::path& out) {
  ExperimentConfig c = default_config();
  c.seed = 3;
  c.deterministic = true;
  c.out = out.string();
  c.blobs.n_per_class = 60;
  c.blobs.n_test_per_class = 10;
  c.model.hidden = 16;
  c.model.projection_hidden = 16;
  c.model.embedding_dim = 8;
  c.step1.epochs = 10;
  c.step2.epochs = 4;
  c.step2.queue_size = 64;
  c.last_k = 3;
  return c;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cecl_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("last-k aggregation") {
  const std::vector<double> series = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.5, 0.6};
  // Last 10: 0.3 .. 1.0, 0.5, 0.6; sum 6.3, mean 0.63.
  LastK s = last_k_stats(series, 10);
  CHECK(s.count == 10);
  CHECK(s.mean == doctest::Approx(0.63));
  double ss = 0.0;
  for (double v : {0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.5, 0.6}) ss += (v - 0.63) * (v - 0.63);
  CHECK(s.std == doctest::Approx(std::sqrt(ss / 10.0)));

  LastK short_run = last_k_stats(std::vector<double>{0.5, 0.7}, 10);
  CHECK(short_run.count == 2);
  CHECK(short_run.mean == doctest::Approx(0.6));
  CHECK_THROWS_AS(last_k_stats(std::vector<double>{}, 10), InputError);
}

TEST_CASE("transition matrix") {
  std::vector<int> zeros(50, 0), sources(50);
  for (int i = 0; i < 50; ++i) sources[static_cast<std::size_t>(i)] = 8 + i % 2;
  TransitionMatrix m = transition_from_predictions(zeros, sources, 4);
  CHECK(m.source_classes == std::vector<int>{8, 9});
  for (int r = 0; r < 2; ++r) {
    CHECK(m.fractions(r, 0) == 1.0);
    CHECK(m.dominant_column[static_cast<std::size_t>(r)] == 0);
    CHECK(m.concentration[static_cast<std::size_t>(r)] == 1.0);
  }

  // Uniform random predictions: chi-square with 7 degrees of freedom stays
  // below its 0.1% critical value 24.32.
  Rng rng(17);
  const int n = 10000, c = 8;
  std::vector<int> predicted(n), one_source(n, 9);
  for (int& p : predicted) p = static_cast<int>(rng.uniform_index(c));
  TransitionMatrix u = transition_from_predictions(predicted, one_source, c);
  double chi2 = 0.0;
  for (int k = 0; k < c; ++k) {
    const double observed = u.fractions(0, k) * n;
    chi2 += (observed - n / 8.0) * (observed - n / 8.0) / (n / 8.0);
  }
  CHECK(chi2 < 24.32);

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> p(200), s(200);
    for (int i = 0; i < 200; ++i) {
      p[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_index(5));
      s[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_index(3));
    }
    TransitionMatrix t = transition_from_predictions(p, s, 5);
    for (Eigen::Index r = 0; r < t.fractions.rows(); ++r) {
      CHECK(std::abs(t.fractions.row(r).sum() - 1.0) <= 1e-9);
      CHECK(t.fractions.row(r).minCoeff() >= 0.0);
    }
  }

  CHECK_THROWS_AS(transition_from_predictions(std::vector<int>{}, std::vector<int>{}, 3), DomainError);
}

TEST_CASE("config text round trip and strictness") {
  ExperimentConfig c = default_config();
  c.seed = 77;
  c.step2.tau = 0.123456789;
  c.blobs.overlap_pairs = {{8, 2, 0.5}};
  c.sweep_tau = {0.1, 0.2};
  c.ablation_osd = false;
  const std::string text = format_config(c);
  ExperimentConfig back = parse_config(text);
  CHECK(format_config(back) == text);
  CHECK(back.step2.tau == c.step2.tau);
  CHECK(back.blobs.overlap_pairs.size() == 1);
  CHECK(back.blobs.overlap_pairs[0].known_class == 2);

  CHECK_THROWS_AS(parse_config("no.such.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("step2.tau = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("step2.tau\n"), ConfigError);
  CHECK(parse_config("# comment\nstep2.tau = 0.5  # trailing\n").step2.tau == 0.5);

  ExperimentConfig bad = default_config();
  set_config_value(bad, "step2.temperature", "0");
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  for (const std::string& key : config_keys()) CHECK(text.find(key + " = ") != std::string::npos);
}

TEST_CASE("ablation switches") {
  const auto variants = ablation_variants();
  CHECK(variants.size() == 5);
  ExperimentConfig base = default_config();
  ExperimentConfig none = with_variant(base, variants.back());
  CHECK_FALSE(none.ablation_cont);
  CHECK_FALSE(none.ablation_osd);
  CHECK(osd_mode(true, false) == OsdMode::enabled);
  CHECK(osd_mode(false, false) == OsdMode::disabled);
  CHECK(osd_mode(true, true) == OsdMode::remove_delimiters);
  CHECK(osd_mode(false, true) == OsdMode::disabled);
}

TEST_CASE("epoch record round trip") {
  EpochStats s;
  s.epoch = 3;
  s.lr = 0.0123;
  s.loss_cls = 1.0 / 3.0;
  s.loss_cont = 2.5;
  s.loss_total = s.loss_cls + s.loss_cont;
  s.clean_count = 10;
  s.incorporated = 4;
  s.delimiters = 2;
  s.test_accuracy = 0.875;
  const std::string line = epoch_record(s);
  const EpochStats back = parse_epoch_record(line);
  CHECK(back.loss_cls == s.loss_cls);
  CHECK(back.incorporated == 4);
  CHECK(epoch_record(back) == line);
  CHECK(nlohmann::json::parse(line).at("v") == kRunSchemaVersion);
  CHECK_THROWS_AS(parse_epoch_record("{}"), InputError);
}

TEST_CASE("tau sweep needs two values") {
  ExperimentConfig c = quick_config(scratch("sweep"));
  const NoisyDataset d = make_dataset(c);
  const Step1Artifact s1 = make_step1(c, d);
  const std::vector<double> one = {0.2};
  CHECK_THROWS_AS(tau_sweep(c, d, s1, one), ConfigError);
  c.step2.epochs = 1;
  const std::vector<double> two = {0.0, 0.3};
  const auto points = tau_sweep(c, d, s1, two);
  CHECK(points.size() == 2);
  // tau = 0: no noisy example is ever incorporated.
  CHECK(points[0].incorporated == 0);
}

TEST_CASE("probe and class expansion") {
  ExperimentConfig c = quick_config(scratch("probe"));
  c.blobs.overlap_pairs = {{9, 2, 0.0}};
  c.noise.unknown_classes = {8, 9};
  c.step1.epochs = 5;
  const NoisyDataset d = make_dataset(c);
  const ProbeResult probe = probe_experiment(c, d);
  CHECK(probe.matrix.source_classes == std::vector<int>{8, 9});
  for (Eigen::Index r = 0; r < probe.matrix.fractions.rows(); ++r) {
    CHECK(std::abs(probe.matrix.fractions.row(r).sum() - 1.0) <= 1e-9);
  }
  CHECK(probe.matrix.dominant_column[1] == 2);

  // Threshold above every softmax score admits nothing: identical curves.
  c.probe_threshold = 1.0 + 1e-9;
  const CsVsCsosResult none = cs_vs_csos_experiment(c, d);
  CHECK(none.admitted == 0);
  CHECK(none.cs == none.csos);
}

TEST_CASE("run directory, resume and reports") {
  const fs::path dir = scratch("run");
  ExperimentConfig c = quick_config(dir);
  run_experiment(c);
  for (const std::string& name : required_run_artifacts()) CHECK(fs::exists(dir / name));
  CHECK(fs::exists(dir / "config.cfg"));
  CHECK(fs::exists(dir / "step1.json"));
  CHECK(format_config(load_config(dir / "config.cfg")) == format_config(c));
  const std::string full_log = slurp(dir / "epochs.jsonl");

  // Summary numbers are recomputable from the epoch log.
  std::vector<double> accuracy;
  std::istringstream lines(full_log);
  std::string line;
  while (std::getline(lines, line)) accuracy.push_back(parse_epoch_record(line).test_accuracy);
  CHECK(accuracy.size() == 4);
  const LastK last = last_k_stats(accuracy, c.last_k);
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(summary.at("accuracy_mean").get<double>() == last.mean);
  CHECK(summary.at("accuracy_std").get<double>() == last.std);

  // Same config, serial kernels: the log repeats byte for byte.
  const fs::path again = scratch("run_again");
  ExperimentConfig c2 = c;
  c2.out = again.string();
  run_experiment(c2);
  CHECK(slurp(again / "epochs.jsonl") == full_log);

  // Interrupt after epoch 2 and resume.
  const NoisyDataset d = make_dataset(c);
  const Step1Artifact s1 = load_step1(dir / "step1.json");
  const std::string text = format_config(c);
  run_step2(c, d, s1, [&](const EpochStats&, const TrainState& state) {
    if (state.epoch == 2) save_checkpoint(state, text, dir / "checkpoint.json");
  });
  Checkpoint ck = load_checkpoint(dir / "checkpoint.json");
  CHECK(ck.state.epoch == 2);
  run_experiment(c, true);
  CHECK(slurp(dir / "epochs.jsonl") == full_log);

  ExperimentConfig other = c;
  other.step2.beta = 0.75;
  CHECK_THROWS_AS(run_experiment(other, true), ConfigError);

  const auto written = emit_reports(dir);
  for (const char* name : {"accuracy_curve.svg", "transition_heatmap.svg", "embedding_pca.svg", "osd_counts.svg"}) {
    CHECK(fs::exists(dir / "report" / name));
  }
  CHECK(written.size() >= 8);

  // Plotted points equal the CSV cells.
  const auto pca = csv_rows(dir / "report" / "embedding_pca.csv");
  const std::string svg = slurp(dir / "report" / "embedding_pca.svg");
  std::regex point(R"re(class="point"[^>]*data-x="([^"]+)" data-y="([^"]+)")re");
  std::vector<std::pair<std::string, std::string>> plotted;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), point); it != std::sregex_iterator(); ++it) {
    plotted.emplace_back((*it)[1].str(), (*it)[2].str());
  }
  REQUIRE(plotted.size() == pca.size());
  std::vector<std::pair<std::string, std::string>> from_csv;
  for (const auto& row : pca) from_csv.emplace_back(row[1], row[2]);
  std::sort(plotted.begin(), plotted.end());
  std::sort(from_csv.begin(), from_csv.end());
  CHECK(plotted == from_csv);

  const auto curve = csv_rows(dir / "report" / "accuracy_curve.csv");
  REQUIRE(curve.size() == accuracy.size());
  for (std::size_t i = 0; i < curve.size(); ++i) CHECK(std::stod(curve[i][1]) == accuracy[i]);

  const auto cells = csv_rows(dir / "report" / "transition_heatmap.csv");
  const std::string heat = slurp(dir / "report" / "transition_heatmap.svg");
  std::regex cell(R"re(class="cell"[^>]*data-x="([^"]+)" data-y="([^"]+)" data-value="([^"]+)")re");
  std::vector<std::vector<std::string>> drawn;
  for (auto it = std::sregex_iterator(heat.begin(), heat.end(), cell); it != std::sregex_iterator(); ++it) {
    drawn.push_back({(*it)[2].str(), (*it)[1].str(), (*it)[3].str()});
  }
  CHECK(drawn == cells);

  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST_CASE("reports on an empty directory") {
  const fs::path dir = scratch("empty");
  fs::create_directories(dir);
  try {
    emit_reports(dir);
    FAIL("expected MissingArtifactsError");
  } catch (const MissingArtifactsError& e) {
    CHECK(e.missing().size() == required_run_artifacts().size());
  }
  fs::remove_all(dir);
}

TEST_CASE("stage failures name the stage") {
  const fs::path dir = scratch("stage");
  ExperimentConfig c = quick_config(dir);
  c.data_path = (dir / "missing").string();
  try {
    run_experiment(c);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "datagen");
  }
  CHECK(fs::exists(dir / "config.cfg"));
  fs::remove_all(dir);
}
