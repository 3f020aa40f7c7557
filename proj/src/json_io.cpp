#include "cecl/json_io.hpp"

#include <fstream>

#include "cecl/errors.hpp"

namespace cecl {

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
  return {{"architecture", spec.architecture == Architecture::mlp ? "mlp" : "cnn"},
          {"input_dim", spec.input_dim},
          {"image", {spec.image.channels, spec.image.height, spec.image.width}},
          {"hidden", spec.hidden},
          {"hidden_layers", spec.hidden_layers},
          {"conv_channels", spec.conv_channels},
          {"projection_hidden", spec.projection_hidden},
          {"embedding_dim", spec.embedding_dim},
          {"classes", spec.classes}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  const std::string arch = j.at("architecture").get<std::string>();
  if (arch == "mlp") {
    spec.architecture = Architecture::mlp;
  } else if (arch == "cnn") {
    spec.architecture = Architecture::cnn;
  } else {
    throw InputError("unknown architecture '" + arch + "'");
  }
  spec.input_dim = j.at("input_dim").get<int>();
  const auto& image = j.at("image");
  spec.image = ImageShape{image.at(0).get<int>(), image.at(1).get<int>(), image.at(2).get<int>()};
  spec.hidden = j.at("hidden").get<int>();
  spec.hidden_layers = j.at("hidden_layers").get<int>();
  spec.conv_channels = j.at("conv_channels").get<int>();
  spec.projection_hidden = j.at("projection_hidden").get<int>();
  spec.embedding_dim = j.at("embedding_dim").get<int>();
  spec.classes = j.at("classes").get<int>();
  return spec;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace cecl
