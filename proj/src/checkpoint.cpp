#include "cecl/checkpoint.hpp"

#include "cecl/json_io.hpp"

namespace cecl {

namespace {

std::vector<double> row_values(const Matrix& m, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] = m(r, j);
  return out;
}

Model model_with_params(const ModelSpec& spec, std::vector<double> params) {
  Model model(spec, 0);
  if (params.size() != model.param_count()) throw InputError("checkpoint parameters do not match the model spec");
  model.params = std::move(params);
  return model;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& config_text, const std::filesystem::path& path) {
  nlohmann::json queue = nlohmann::json::array();
  for (const QueueEntry& e : state.queue.entries()) {
    queue.push_back({{"key", std::vector<double>(e.key.data(), e.key.data() + e.key.size())},
                     {"label", e.label},
                     {"noisy", e.partition == Partition::noisy},
                     {"flag", e.flag},
                     {"id", e.example_id}});
  }
  nlohmann::json prototypes = nlohmann::json::array();
  for (Eigen::Index k = 0; k < state.bank.prototypes().rows(); ++k) {
    prototypes.push_back(row_values(state.bank.prototypes(), k));
  }
  const nlohmann::json j = {
      {"format", "cecl-checkpoint"},
      {"version", kCheckpointFormatVersion},
      {"epoch", state.epoch},
      {"model", model_spec_to_json(state.query.spec())},
      {"query", state.query.params},
      {"key", state.key.params},
      {"optimizer",
       {{"momentum", state.optimizer.momentum()},
        {"weight_decay", state.optimizer.weight_decay()},
        {"velocity", state.optimizer.velocity()}}},
      {"queue_capacity", state.queue.capacity()},
      {"queue", queue},
      {"prototypes", prototypes},
      {"init_counts", state.bank.init_counts()},
      {"gamma", state.bank.gamma()},
      {"config", config_text},
  };
  write_json_file(j, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  try {
    if (j.at("format") != "cecl-checkpoint") throw InputError(path.string() + " is not a checkpoint");
    if (j.at("version").get<int>() != kCheckpointFormatVersion) {
      throw InputError("unsupported checkpoint version in " + path.string());
    }
    Checkpoint ck;
    const ModelSpec spec = model_spec_from_json(j.at("model"));
    ck.state.query = model_with_params(spec, j.at("query").get<std::vector<double>>());
    ck.state.key = model_with_params(spec, j.at("key").get<std::vector<double>>());
    const auto& opt = j.at("optimizer");
    ck.state.optimizer = Sgd(ck.state.query.param_count(), opt.at("momentum").get<double>(),
                             opt.at("weight_decay").get<double>());
    ck.state.optimizer.velocity() = opt.at("velocity").get<std::vector<double>>();
    if (ck.state.optimizer.velocity().size() != ck.state.query.param_count()) {
      throw InputError("checkpoint velocity does not match the model");
    }
    ck.state.queue = MomentumQueue(j.at("queue_capacity").get<std::size_t>());
    std::vector<QueueEntry> entries;
    for (const auto& e : j.at("queue")) {
      const auto key = e.at("key").get<std::vector<double>>();
      entries.push_back(QueueEntry{Eigen::Map<const Vector>(key.data(), static_cast<Eigen::Index>(key.size())),
                                   e.at("label").get<int>(),
                                   e.at("noisy").get<bool>() ? Partition::noisy : Partition::clean,
                                   e.at("flag").get<bool>(), e.at("id").get<int>()});
    }
    ck.state.queue.push(entries);
    const auto rows = j.at("prototypes").get<std::vector<std::vector<double>>>();
    Matrix prototypes(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (static_cast<Eigen::Index>(rows[k].size()) != prototypes.cols()) throw InputError("ragged prototype matrix");
      for (std::size_t d = 0; d < rows[k].size(); ++d) {
        prototypes(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)) = rows[k][d];
      }
    }
    ck.state.bank = PrototypeBank(std::move(prototypes), j.at("init_counts").get<std::vector<int>>(),
                                  j.at("gamma").get<double>());
    ck.state.epoch = j.at("epoch").get<int>();
    ck.config_text = j.at("config").get<std::string>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("incomplete checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace cecl
