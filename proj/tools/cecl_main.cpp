// Command-line front end: one subcommand per pipeline stage or study.

#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "cecl/config.hpp"
#include "cecl/dataset_io.hpp"
#include "cecl/errors.hpp"
#include "cecl/harness.hpp"
#include "cecl/report.hpp"

namespace {

struct Globals {
  std::string config_file;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  bool deterministic = false;
  std::vector<std::string> overrides;
};

cecl::ExperimentConfig resolve(const Globals& g) {
  cecl::ExperimentConfig config =
      g.config_file.empty() ? cecl::default_config() : cecl::load_config(g.config_file);
  for (const std::string& item : g.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw cecl::ConfigError("--set expects key=value, got '" + item + "'");
    cecl::set_config_value(config, item.substr(0, eq), item.substr(eq + 1));
  }
  if (g.seed_given) config.seed = g.seed;
  if (!g.out.empty()) config.out = g.out;
  if (g.deterministic) config.deterministic = true;
  config.validate();
  cecl::apply_execution_mode(config);
  return config;
}

void print_last_k(const char* name, const cecl::LastK& k) {
  std::cout << name << ": " << k.mean << " +- " << k.std << " (last " << k.count << " epochs)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-expansion contrastive learning for open-set noisy labels"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_file, "flat key = value config file")->check(CLI::ExistingFile);
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_given = true; }, "experiment seed");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--deterministic", g.deterministic, "serial kernels, single thread");
  app.add_option("--set", g.overrides, "config override key=value (repeatable)");

  auto* datagen = app.add_subcommand("datagen", "generate a noisy dataset directory");
  auto* step1 = app.add_subcommand("step1", "run clean-example identification");
  auto* train = app.add_subcommand("train", "run the full pipeline into a run directory");
  bool resume = false;
  train->add_flag("--resume", resume, "continue from the run directory's checkpoint");
  auto* probe = app.add_subcommand("probe", "class-expansion probe of a closed-set classifier");
  auto* csvs = app.add_subcommand("cs-vs-csos", "closed-set vs closed+open-set training");
  auto* sweep = app.add_subcommand("sweep-tau", "one run per tau value");
  std::vector<double> taus;
  sweep->add_option("--taus", taus, "tau values (default: sweep.tau)")->delimiter(',');
  auto* report = app.add_subcommand("report", "render figures for a run directory");
  std::string run_dir;
  report->add_option("--run", run_dir, "run directory (default: --out)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      const std::string dir = !run_dir.empty() ? run_dir : !g.out.empty() ? g.out : resolve(g).out;
      for (const auto& path : cecl::emit_reports(dir)) std::cout << path.string() << '\n';
      return 0;
    }
    const cecl::ExperimentConfig config = resolve(g);
    const std::filesystem::path out = config.out;
    if (datagen->parsed()) {
      const cecl::NoisyDataset dataset = cecl::make_dataset(config);
      cecl::save_dataset(dataset, out);
      cecl::save_config(config, out / "config.cfg");
      std::cout << "wrote " << dataset.size() << " training and " << dataset.test_labels.size()
                << " test examples to " << out.string() << '\n';
    } else if (step1->parsed()) {
      const cecl::NoisyDataset dataset = cecl::make_dataset(config);
      const cecl::Step1Artifact artifact = cecl::make_step1(config, dataset);
      std::filesystem::create_directories(out);
      cecl::save_step1(artifact, out / "step1.json");
      cecl::save_config(config, out / "config.cfg");
      std::cout << "clean " << artifact.coarse.clean_count() << ", noisy " << artifact.coarse.noisy_count() << '\n';
    } else if (train->parsed()) {
      const auto dir = cecl::run_experiment(config, resume);
      std::cout << std::ifstream(dir / "summary.csv").rdbuf();
    } else if (probe->parsed()) {
      const cecl::NoisyDataset dataset = cecl::make_dataset(config);
      const cecl::ProbeResult r = cecl::probe_experiment(config, dataset);
      std::filesystem::create_directories(out);
      cecl::write_transition_csv(r.matrix, out / "transition.csv");
      cecl::save_config(config, out / "config.cfg");
      for (std::size_t i = 0; i < r.matrix.source_classes.size(); ++i) {
        std::cout << "unknown class " << r.matrix.source_classes[i] << ": " << r.matrix.concentration[i]
                  << " of " << r.matrix.counts[i] << " examples on known class " << r.matrix.dominant_column[i]
                  << '\n';
      }
    } else if (csvs->parsed()) {
      const cecl::NoisyDataset dataset = cecl::make_dataset(config);
      const cecl::CsVsCsosResult r = cecl::cs_vs_csos_experiment(config, dataset);
      cecl::write_cs_vs_csos(r, out);
      cecl::save_config(config, out / "config.cfg");
      std::cout << "admitted " << r.admitted << " open-set examples\n";
      print_last_k("CS", r.cs_final);
      print_last_k("CS+OS", r.csos_final);
    } else if (sweep->parsed()) {
      if (taus.empty()) taus = config.sweep_tau;
      const cecl::NoisyDataset dataset = cecl::make_dataset(config);
      const cecl::Step1Artifact artifact = cecl::make_step1(config, dataset);
      const auto points = cecl::tau_sweep(config, dataset, artifact, taus);
      std::filesystem::create_directories(out);
      cecl::write_tau_sweep(points, out / "tau_sweep.csv");
      cecl::save_config(config, out / "config.cfg");
      for (const auto& p : points) {
        std::cout << "tau " << p.tau << ": " << p.accuracy.mean << " +- " << p.accuracy.std << '\n';
      }
    }
  } catch (const cecl::MissingArtifactsError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  } catch (const cecl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const cecl::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 3;
  } catch (const cecl::StageError& e) {
    std::cerr << "stage '" << e.stage() << "' failed: " << e.what() << '\n';
    return 4;
  } catch (const cecl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
