#pragma once
#include <map>
#include <string>
#include <vector>

// Flat `key = value` configuration with dotted namespaces (net.depth,
// distill.temperature). Unknown keys are rejected with the list of valid
// keys. Every key is documented in docs/config.md. The CCSD_SEED environment
// variable overrides the seed key.

namespace ccsd {

struct TrainConfig;

class Config {
 public:
  struct KeyDoc {
    std::string key;
    std::string def;  // default, as text
    std::string doc;
  };

  static const std::vector<KeyDoc>& known_keys();

  // Parses a config file (UTF-8, `key = value` lines, '#' comments).
  static Config load_file(const std::string& path);
  // File (optional, empty = none) plus repeatable KEY=VALUE overrides.
  static Config assemble(const std::string& file, const std::vector<std::string>& overrides,
                         bool apply_env_seed = true);

  void set(const std::string& key, const std::string& value);
  void set_kv(const std::string& key_equals_value);  // "KEY=VALUE"

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get(const std::string& key) const;  // default if unset
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  TrainConfig to_train_config() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ccsd
