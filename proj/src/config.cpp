#include "ccsd/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ccsd/trainer.hpp"

namespace ccsd {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::array<double, 3> parse_triple(const std::string& v, const std::string& key) {
  std::array<double, 3> out{};
  char extra;
  if (std::sscanf(v.c_str(), "%lf,%lf,%lf%c", &out[0], &out[1], &out[2], &extra) != 3)
    throw std::invalid_argument("config: " + key + " expects three comma-separated values, got '" +
                                v + "'");
  return out;
}

}  // namespace

const std::vector<Config::KeyDoc>& Config::known_keys() {
  static const std::vector<KeyDoc> keys = {
      {"seed", "1234", "master seed for data generation, init, and training order"},
      {"data.n_modalities", "4", "number of modalities N"},
      {"data.volume_size", "32,32,32", "phantom extents D,H,W (D=1 for planar volumes)"},
      {"data.n_cases", "80", "number of generated cases"},
      {"data.noise_std", "0.08", "Gaussian noise sigma added per voxel"},
      {"data.contrast", "(default table)",
       "per-modality WT,TC,ET visibility rows separated by ';'"},
      {"data.fractions", "0.8,0.075,0.125", "train,val,test split fractions (sum 1)"},
      {"data.dir", "(none)", "load cases from this directory's manifest.csv instead of generating"},
      {"net.spatial_rank", "3", "2 or 3"},
      {"net.base_channels", "8", "encoder channels at full resolution"},
      {"net.depth", "3", "resolution levels; bottleneck = input / 2^(depth-1)"},
      {"net.n_classes", "4", "background + region labels"},
      {"net.feature_channels", "32", "channels of shared/specific features at the fusion stage"},
      {"distill.temperature", "2", "softening temperature tau (DMCD and feature-mode HMSD)"},
      {"distill.hmsd_weight", "1", "lambda1 on the hierarchical self-distillation loss (K1)"},
      {"distill.dmcd_weight", "1", "lambda2 on the decremental combination loss (K2)"},
      {"distill.carrier", "fused", "distillation feature carrier: shared|specific|fused"},
      {"distill.hmsd_mode", "decoder_output", "decoder_output|feature"},
      {"distill.per_case_path", "false", "build one DMCD path per case instead of per batch"},
      {"train.epochs", "30", "training epochs (paper scale: 100)"},
      {"train.batch_size", "4", "cases per step (paper scale: 12)"},
      {"train.lr", "0.01", "Adam initial learning rate"},
      {"train.lr_min", "1e-05", "cosine annealing floor"},
      {"train.eval_every", "10", "validation cadence in epochs"},
      {"train.path_strategy", "max_criticality",
       "DMCD path order: max_criticality|min_criticality|random"},
      {"train.augment", "true", "random joint flips/rotations during training"},
      {"train.precision", "f32", "network scalar type: f32|f64"},
  };
  return keys;
}

Config Config::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot read file " + path);
  Config c;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                  ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

Config Config::assemble(const std::string& file, const std::vector<std::string>& overrides,
                        bool apply_env_seed) {
  Config c = file.empty() ? Config{} : load_file(file);
  for (const auto& kv : overrides) c.set_kv(kv);
  if (apply_env_seed) {
    if (const char* env = std::getenv("CCSD_SEED")) c.set("seed", env);
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  const auto& keys = known_keys();
  const bool known = std::any_of(keys.begin(), keys.end(),
                                 [&](const KeyDoc& k) { return k.key == key; });
  if (!known) {
    std::string msg = "config: unknown key '" + key + "'. Valid keys:";
    for (const auto& k : keys) msg += "\n  " + k.key;
    throw std::invalid_argument(msg);
  }
  values_[key] = value;
}

void Config::set_kv(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("config: --set expects KEY=VALUE, got '" + kv + "'");
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

std::string Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it != values_.end()) return it->second;
  for (const auto& k : known_keys())
    if (k.key == key) return k.def;
  throw std::logic_error("config: get of unregistered key " + key);
}

int64_t Config::get_int(const std::string& key) const {
  const std::string v = get(key);
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  }
}

double Config::get_double(const std::string& key) const {
  const std::string v = get(key);
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: " + key + " expects true|false, got '" + v + "'");
}

TrainConfig Config::to_train_config() const {
  TrainConfig t;
  t.seed = static_cast<uint64_t>(get_int("seed"));

  t.data.n_modalities = static_cast<int>(get_int("data.n_modalities"));
  {
    const auto v = parse_triple(get("data.volume_size"), "data.volume_size");
    t.data.volume_size = {static_cast<int>(v[0]), static_cast<int>(v[1]),
                          static_cast<int>(v[2])};
  }
  t.data.n_cases = static_cast<int>(get_int("data.n_cases"));
  t.data.noise_std = get_double("data.noise_std");
  t.data.seed = t.seed;
  if (has("data.contrast")) {
    std::istringstream rows(get("data.contrast"));
    std::string row;
    while (std::getline(rows, row, ';')) {
      row = trim(row);
      if (row.empty()) continue;
      const auto r = parse_triple(row, "data.contrast");
      t.data.contrast.push_back({r[0], r[1], r[2]});
    }
  }
  t.fractions = parse_triple(get("data.fractions"), "data.fractions");
  if (has("data.dir")) t.data_dir = get("data.dir");

  t.net.n_modalities = t.data.n_modalities;
  t.net.spatial_rank = static_cast<int>(get_int("net.spatial_rank"));
  t.net.input_size = t.data.volume_size;
  t.net.base_channels = static_cast<int>(get_int("net.base_channels"));
  t.net.depth = static_cast<int>(get_int("net.depth"));
  t.net.n_classes = static_cast<int>(get_int("net.n_classes"));
  t.net.feature_channels = static_cast<int>(get_int("net.feature_channels"));

  t.distill.temperature = get_double("distill.temperature");
  t.distill.hmsd_weight = get_double("distill.hmsd_weight");
  t.distill.dmcd_weight = get_double("distill.dmcd_weight");
  const std::string carrier = get("distill.carrier");
  if (carrier == "shared")
    t.distill.carrier = Carrier::shared;
  else if (carrier == "specific")
    t.distill.carrier = Carrier::specific;
  else if (carrier == "fused")
    t.distill.carrier = Carrier::fused;
  else
    throw std::invalid_argument("config: distill.carrier expects shared|specific|fused, got '" +
                                carrier + "'");
  const std::string mode = get("distill.hmsd_mode");
  if (mode == "decoder_output")
    t.distill.hmsd_mode = HmsdMode::decoder_output;
  else if (mode == "feature")
    t.distill.hmsd_mode = HmsdMode::feature;
  else
    throw std::invalid_argument("config: distill.hmsd_mode expects decoder_output|feature");
  t.distill.per_case_path = get_bool("distill.per_case_path");

  t.epochs = static_cast<int>(get_int("train.epochs"));
  t.batch_size = static_cast<int>(get_int("train.batch_size"));
  t.lr = get_double("train.lr");
  t.lr_min = get_double("train.lr_min");
  t.eval_every = static_cast<int>(get_int("train.eval_every"));
  t.path_strategy = parse_path_strategy(get("train.path_strategy"));
  t.augment_data = get_bool("train.augment");
  t.precision = get("train.precision");

  t.validate();
  return t;
}

}  // namespace ccsd
