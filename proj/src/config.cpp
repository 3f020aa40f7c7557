#include "cecl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "cecl/errors.hpp"
#include "cecl/rng.hpp"

namespace cecl {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  if (trim(s).empty()) return parts;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, sep)) parts.push_back(trim(part));
  return parts;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const std::string t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "on") return true;
  if (t == "false" || t == "0" || t == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(items[i]);
    } else {
      out += std::to_string(items[i]);
    }
  }
  return out;
}

std::vector<OverlapPair> parse_overlaps(const std::string& key, const std::string& text) {
  std::vector<OverlapPair> pairs;
  for (const std::string& item : split(text, ',')) {
    const auto fields = split(item, ':');
    if (fields.size() != 3) throw ConfigError("config key '" + key + "': overlap pairs are unknown:known:level");
    pairs.push_back(OverlapPair{parse_number<int>(key, fields[0]), parse_number<int>(key, fields[1]),
                                parse_number<double>(key, fields[2])});
  }
  return pairs;
}

std::string format_overlaps(const std::vector<OverlapPair>& pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(pairs[i].unknown_class) + ":" + std::to_string(pairs[i].known_class) + ":" +
           format_double(pairs[i].level);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> parse;
  std::function<std::string(const ExperimentConfig&)> format;
};

template <typename T, typename Get>
Field nested(std::string key, Get get) {
  return {key,
          [key, get](ExperimentConfig& c, const std::string& v) {
            T& ref = get(c);
            if constexpr (std::is_same_v<T, bool>) {
              ref = parse_bool(key, v);
            } else if constexpr (std::is_same_v<T, std::string>) {
              ref = trim(v);
            } else if constexpr (std::is_same_v<T, std::vector<int>>) {
              ref.clear();
              for (const auto& item : split(v, ',')) ref.push_back(parse_number<int>(key, item));
            } else if constexpr (std::is_same_v<T, std::vector<double>>) {
              ref.clear();
              for (const auto& item : split(v, ',')) ref.push_back(parse_number<double>(key, item));
            } else if constexpr (std::is_same_v<T, std::vector<OverlapPair>>) {
              ref = parse_overlaps(key, v);
            } else {
              ref = parse_number<T>(key, v);
            }
          },
          [get](const ExperimentConfig& c) {
            T& ref = get(const_cast<ExperimentConfig&>(c));
            if constexpr (std::is_same_v<T, bool>) {
              return std::string(ref ? "true" : "false");
            } else if constexpr (std::is_same_v<T, std::string>) {
              return ref;
            } else if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<double>>) {
              return join(ref);
            } else if constexpr (std::is_same_v<T, std::vector<OverlapPair>>) {
              return format_overlaps(ref);
            } else if constexpr (std::is_floating_point_v<T>) {
              return format_double(ref);
            } else {
              return std::to_string(ref);
            }
          }};
}

#define CECL_FIELD(T, key, expr) nested<T>(key, [](ExperimentConfig& c) -> T& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      CECL_FIELD(std::uint64_t, "seed", c.seed),
      CECL_FIELD(bool, "deterministic", c.deterministic),
      CECL_FIELD(std::string, "output.dir", c.out),
      CECL_FIELD(std::string, "data.path", c.data_path),
      {"data.corpus",
       [](ExperimentConfig& c, const std::string& v) {
         const std::string t = trim(v);
         if (t == "blobs") {
           c.corpus = CorpusKind::blobs;
         } else if (t == "images") {
           c.corpus = CorpusKind::images;
         } else {
           throw ConfigError("config key 'data.corpus': expected blobs or images");
         }
       },
       [](const ExperimentConfig& c) { return std::string(c.corpus == CorpusKind::blobs ? "blobs" : "images"); }},
      CECL_FIELD(int, "blobs.total_classes", c.blobs.total_classes),
      CECL_FIELD(int, "blobs.n_per_class", c.blobs.n_per_class),
      CECL_FIELD(int, "blobs.n_test_per_class", c.blobs.n_test_per_class),
      CECL_FIELD(int, "blobs.dim", c.blobs.dim),
      CECL_FIELD(int, "blobs.informative_dims", c.blobs.informative_dims),
      CECL_FIELD(double, "blobs.center_spread", c.blobs.center_spread),
      CECL_FIELD(double, "blobs.stddev", c.blobs.stddev),
      CECL_FIELD(std::vector<OverlapPair>, "blobs.overlap", c.blobs.overlap_pairs),
      CECL_FIELD(int, "images.total_classes", c.images.total_classes),
      CECL_FIELD(int, "images.n_per_class", c.images.n_per_class),
      CECL_FIELD(int, "images.n_test_per_class", c.images.n_test_per_class),
      CECL_FIELD(int, "images.channels", c.images.channels),
      CECL_FIELD(int, "images.size", c.images.size),
      CECL_FIELD(double, "images.pixel_noise", c.images.pixel_noise),
      CECL_FIELD(std::vector<OverlapPair>, "images.overlap", c.images.overlap_pairs),
      CECL_FIELD(int, "noise.known_classes", c.noise.known_class_count),
      {"noise.kind", [](ExperimentConfig& c, const std::string& v) { c.noise.kind = noise_kind_from_string(trim(v)); },
       [](const ExperimentConfig& c) { return to_string(c.noise.kind); }},
      CECL_FIELD(double, "noise.rate", c.noise.noise_rate),
      CECL_FIELD(double, "noise.open_fraction", c.noise.open_set_fraction),
      CECL_FIELD(std::vector<int>, "noise.unknown_classes", c.noise.unknown_classes),
      CECL_FIELD(std::vector<int>, "noise.pair_map", c.noise.pair_map),
      CECL_FIELD(std::vector<int>, "noise.open_set_map", c.noise.open_set_map),
      {"model.architecture",
       [](ExperimentConfig& c, const std::string& v) {
         const std::string t = trim(v);
         if (t == "mlp") {
           c.model.architecture = Architecture::mlp;
         } else if (t == "cnn") {
           c.model.architecture = Architecture::cnn;
         } else {
           throw ConfigError("config key 'model.architecture': expected mlp or cnn");
         }
       },
       [](const ExperimentConfig& c) {
         return std::string(c.model.architecture == Architecture::mlp ? "mlp" : "cnn");
       }},
      CECL_FIELD(int, "model.hidden", c.model.hidden),
      CECL_FIELD(int, "model.hidden_layers", c.model.hidden_layers),
      CECL_FIELD(int, "model.conv_channels", c.model.conv_channels),
      CECL_FIELD(int, "model.projection_hidden", c.model.projection_hidden),
      CECL_FIELD(int, "model.embedding_dim", c.model.embedding_dim),
      CECL_FIELD(bool, "augment.enabled", c.augment.enabled),
      CECL_FIELD(double, "augment.jitter", c.augment.jitter),
      CECL_FIELD(int, "augment.crop_pad", c.augment.crop_pad),
      CECL_FIELD(bool, "augment.flip", c.augment.flip),
      CECL_FIELD(std::string, "step1.path", c.step1_path),
      CECL_FIELD(int, "step1.epochs", c.step1.epochs),
      CECL_FIELD(int, "step1.batch_size", c.step1.batch_size),
      CECL_FIELD(double, "step1.lr", c.step1.lr),
      CECL_FIELD(double, "step1.min_lr", c.step1.min_lr),
      CECL_FIELD(double, "step1.momentum", c.step1.sgd_momentum),
      CECL_FIELD(double, "step1.weight_decay", c.step1.weight_decay),
      CECL_FIELD(double, "step1.forget_rate", c.step1_forget_rate),
      CECL_FIELD(int, "step1.ramp_epochs", c.step1.ramp_epochs),
      CECL_FIELD(double, "step1.confidence", c.step1.confidence),
      CECL_FIELD(double, "step1.burn_in_fraction", c.step1.burn_in_fraction),
      CECL_FIELD(double, "step2.tau", c.step2.tau),
      CECL_FIELD(double, "step2.gamma", c.step2.gamma),
      CECL_FIELD(double, "step2.beta", c.step2.beta),
      CECL_FIELD(double, "step2.temperature", c.step2.temperature),
      CECL_FIELD(double, "step2.key_momentum", c.step2.key_momentum),
      CECL_FIELD(int, "step2.queue_size", c.step2.queue_size),
      CECL_FIELD(int, "step2.epochs", c.step2.epochs),
      CECL_FIELD(int, "step2.batch_size", c.step2.batch_size),
      CECL_FIELD(double, "step2.lr", c.step2.lr),
      CECL_FIELD(double, "step2.min_lr", c.step2.min_lr),
      CECL_FIELD(double, "step2.momentum", c.step2.sgd_momentum),
      CECL_FIELD(double, "step2.weight_decay", c.step2.weight_decay),
      CECL_FIELD(bool, "ablation.cont", c.ablation_cont),
      CECL_FIELD(bool, "ablation.osd", c.ablation_osd),
      CECL_FIELD(bool, "ablation.rdos", c.ablation_rdos),
      CECL_FIELD(double, "probe.threshold", c.probe_threshold),
      CECL_FIELD(int, "report.last_k", c.last_k),
      CECL_FIELD(std::vector<double>, "sweep.tau", c.sweep_tau),
      CECL_FIELD(int, "checkpoint.every", c.checkpoint_every),
  };
  return all;
}

#undef CECL_FIELD

const Field& find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (corpus == CorpusKind::blobs && data_path.empty()) {
    if (blobs.dim < 1 || blobs.n_per_class < 1) throw ConfigError("blob corpus needs positive dim and class size");
    noise.validate(blobs.total_classes);
  } else if (corpus == CorpusKind::images && data_path.empty()) {
    if (images.size < 4 || images.channels < 1) throw ConfigError("image corpus needs size >= 4");
    noise.validate(images.total_classes);
  }
  if (step1.epochs < 1) throw ConfigError("step1.epochs must be at least 1");
  if (step1_forget_rate > 1.0) throw ConfigError("step1.forget_rate must be at most 1");
  step2.validate();
  if (!(probe_threshold >= 0.0 && probe_threshold <= 1.0)) throw ConfigError("probe.threshold must lie in [0, 1]");
  if (last_k < 1) throw ConfigError("report.last_k must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint.every must be non-negative");
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.blobs.total_classes = 10;
  c.blobs.n_per_class = 120;
  c.blobs.n_test_per_class = 250;
  c.blobs.dim = 16;
  c.blobs.informative_dims = 8;
  c.blobs.center_spread = 5.0;
  c.blobs.stddev = 1.0;
  c.noise.known_class_count = 8;
  c.noise.kind = NoiseKind::symmetric;
  c.noise.noise_rate = 0.2;
  c.noise.open_set_fraction = 0.2;
  c.model.hidden = 64;
  c.model.hidden_layers = 2;
  c.model.projection_hidden = 64;
  c.model.embedding_dim = 32;
  c.step1.epochs = 10;
  c.step2.epochs = 20;
  c.step2.tau = 0.1;
  c.step2.beta = 0.5;
  c.step2.temperature = 0.2;
  c.sweep_tau = {0.05, 0.1, 0.15, 0.2, 0.3};
  return c;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  find_field(trim(key)).parse(config, value);
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    set_config_value(base, key, line.substr(eq + 1));
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), std::move(base));
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.format(config) + "\n";
  return out;
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write config file " + path.string());
  out << format_config(config);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

NoiseSpec resolved_noise(const ExperimentConfig& config) {
  NoiseSpec spec = config.noise;
  spec.seed = derive_seed(config.seed, {2});
  return spec;
}

ModelSpec resolved_model(const ExperimentConfig& config, const NoisyDataset& dataset) {
  ModelSpec spec = config.model;
  spec.input_dim = dataset.dim();
  spec.image = dataset.image;
  spec.classes = dataset.c;
  if (spec.architecture == Architecture::cnn && !spec.image.is_image()) {
    throw ConfigError("cnn architecture needs an image corpus");
  }
  return spec;
}

Step1Config resolved_step1(const ExperimentConfig& config, const NoisyDataset& dataset) {
  Step1Config s = config.step1;
  s.model = resolved_model(config, dataset);
  s.augment = config.augment;
  s.augment.image = dataset.image;
  s.seed = derive_seed(config.seed, {3});
  if (config.step1_forget_rate >= 0.0) {
    s.forget_rate = config.step1_forget_rate;
  } else {
    const NoiseSpec& n = dataset.provenance;
    s.forget_rate = n.open_set_fraction + (1.0 - n.open_set_fraction) * n.noise_rate;
  }
  return s;
}

OsdMode osd_mode(bool osd, bool rdos) {
  if (!osd) return OsdMode::disabled;
  return rdos ? OsdMode::remove_delimiters : OsdMode::enabled;
}

Step2Config resolved_step2(const ExperimentConfig& config, const NoisyDataset& dataset) {
  Step2Config s = config.step2;
  s.contrastive = config.ablation_cont;
  s.osd = osd_mode(config.ablation_osd, config.ablation_rdos);
  s.augment = config.augment;
  s.augment.image = dataset.image;
  s.seed = derive_seed(config.seed, {4});
  return s;
}

}  // namespace cecl
