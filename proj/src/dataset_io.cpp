#include "cecl/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cecl/errors.hpp"

namespace cecl {

namespace {

constexpr char kMagic[8] = {'C', 'E', 'C', 'L', 'D', 'A', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; add byte swapping for this target");

template <typename T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw InputError("truncated dataset file");
  return value;
}

void write_table(const std::filesystem::path& path, const Matrix& features,
                 const std::vector<int>& given, const std::vector<int>& truth,
                 const std::vector<int>& source) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(features.rows()));
  write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(features.cols()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out.write(reinterpret_cast<const char*>(features.row(i).data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(features.cols())));
    const auto row = static_cast<std::size_t>(i);
    write_raw<std::int32_t>(out, given[row]);
    write_raw<std::int32_t>(out, truth[row]);
    write_raw<std::int32_t>(out, source[row]);
  }
  if (!out) throw InputError("failed writing " + path.string());
}

void read_table(const std::filesystem::path& path, Matrix& features, std::vector<int>& given,
                std::vector<int>& truth, std::vector<int>& source) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw InputError(path.string() + " is not a dataset table");
  }
  const auto rows = read_raw<std::uint64_t>(in);
  const auto cols = read_raw<std::uint64_t>(in);
  features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  given.resize(rows);
  truth.resize(rows);
  source.resize(rows);
  for (std::uint64_t i = 0; i < rows; ++i) {
    in.read(reinterpret_cast<char*>(features.row(static_cast<Eigen::Index>(i)).data()),
            static_cast<std::streamsize>(sizeof(double) * cols));
    given[i] = read_raw<std::int32_t>(in);
    truth[i] = read_raw<std::int32_t>(in);
    source[i] = read_raw<std::int32_t>(in);
  }
}

}  // namespace

void save_dataset(const NoisyDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const NoiseSpec& spec = dataset.provenance;
  nlohmann::json meta = {
      {"format", "cecl-dataset"},
      {"version", kDatasetFormatVersion},
      {"known_class_count", dataset.c},
      {"total_classes", dataset.total_classes},
      {"open_set_index", dataset.c},
      {"known_classes", dataset.classes.known},
      {"unknown_classes", dataset.classes.unknown},
      {"train_rows", dataset.size()},
      {"test_rows", dataset.test_labels.size()},
      {"feature_dim", dataset.dim()},
      {"image", {{"channels", dataset.image.channels},
                 {"height", dataset.image.height},
                 {"width", dataset.image.width}}},
      {"noise",
       {{"known_class_count", spec.known_class_count},
        {"kind", to_string(spec.kind)},
        {"noise_rate", spec.noise_rate},
        {"open_set_fraction", spec.open_set_fraction},
        {"seed", spec.seed},
        {"unknown_classes", spec.unknown_classes},
        {"pair_map", spec.pair_map},
        {"open_set_map", spec.open_set_map},
        {"open_set_labeling", spec.kind == NoiseKind::symmetric ? "uniform over known classes"
                                                                 : "open_set_map (default i mod c)"}}},
      {"files", {{"train", "train.bin"}, {"test", "test.bin"}}},
  };
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  write_table(dir / "train.bin", dataset.features, dataset.given, dataset.truth, dataset.source_class);
  std::vector<int> test_source;
  for (int label : dataset.test_labels) test_source.push_back(dataset.classes.known[static_cast<std::size_t>(label)]);
  write_table(dir / "test.bin", dataset.test_features, dataset.test_labels, dataset.test_labels, test_source);
}

NoisyDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta_file(dir / "meta.json");
  if (!meta_file) throw InputError("missing " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_file);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed meta.json: ") + e.what());
  }
  if (meta.value("format", "") != "cecl-dataset" || meta.value("version", 0) != kDatasetFormatVersion) {
    throw InputError("unsupported dataset format in " + dir.string());
  }
  NoisyDataset dataset;
  try {
    dataset.c = meta.at("known_class_count").get<int>();
    dataset.total_classes = meta.at("total_classes").get<int>();
    dataset.classes.known = meta.at("known_classes").get<std::vector<int>>();
    dataset.classes.unknown = meta.at("unknown_classes").get<std::vector<int>>();
    const auto& image = meta.at("image");
    dataset.image = ImageShape{image.at("channels").get<int>(), image.at("height").get<int>(),
                               image.at("width").get<int>()};
    const auto& noise = meta.at("noise");
    NoiseSpec& spec = dataset.provenance;
    spec.known_class_count = noise.at("known_class_count").get<int>();
    spec.kind = noise_kind_from_string(noise.at("kind").get<std::string>());
    spec.noise_rate = noise.at("noise_rate").get<double>();
    spec.open_set_fraction = noise.at("open_set_fraction").get<double>();
    spec.seed = noise.at("seed").get<std::uint64_t>();
    spec.unknown_classes = noise.at("unknown_classes").get<std::vector<int>>();
    spec.pair_map = noise.at("pair_map").get<std::vector<int>>();
    spec.open_set_map = noise.at("open_set_map").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("incomplete meta.json: ") + e.what());
  }
  read_table(dir / "train.bin", dataset.features, dataset.given, dataset.truth, dataset.source_class);
  std::vector<int> test_truth, test_source;
  read_table(dir / "test.bin", dataset.test_features, dataset.test_labels, test_truth, test_source);
  dataset.validate();
  return dataset;
}

}  // namespace cecl
