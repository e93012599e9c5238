#pragma once

// Flat `key = value` run configuration. Values start from built-in defaults,
// then a config file, then command-line flags; each layer may only name known
// keys. resolve() turns the strings into typed module configs.

#include <charconv>
#include <map>
#include <string>
#include <vector>

#include "fame/backbone.hpp"
#include "fame/data.hpp"
#include "fame/error.hpp"
#include "fame/fame_layer.hpp"
#include "fame/pretrain.hpp"
#include "fame/synth.hpp"
#include "fame/trainer.hpp"

namespace fame {

struct ConfigKey {
  const char* name;
  const char* fallback;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      // model
      {"d", "64", "embedding width"},
      {"H", "2", "attention heads = facet heads"},
      {"N", "2", "experts per head"},
      {"L", "2", "transformer layers (the last becomes the FAME layer)"},
      {"max_len", "50", "most recent items kept per user"},
      {"dropout", "0.2", "dropout rate"},
      {"expert_noise", "0.01", "std-dev of the noise on copied expert queries"},
      {"random_experts", "false", "draw expert queries at random"},
      {"slice_facet_proj", "false", "initialise W_f as column-slice selectors"},
      // optimisation
      {"lr", "0.001", "Adam learning rate"},
      {"beta1", "0.9", "Adam beta1"},
      {"beta2", "0.999", "Adam beta2"},
      {"batch", "256", "users per mini-batch"},
      {"epochs", "200", "backbone epochs"},
      {"finetune_epochs", "100", "FAME fine-tuning epochs"},
      {"eval_every", "0", "valid metrics every n epochs (0 = off)"},
      {"early_stopping", "false", "stop on valid NDCG@10"},
      {"patience", "10", "early stopping patience"},
      {"seed", "0", "random seed"},
      {"init_mode", "random", "random | text_raw | text_facet"},
      {"text_scale", "1.0", "scale applied to pre-trained item rows"},
      // pre-training
      {"tau", "0.1", "SupCon temperature"},
      {"P", "4", "classes per batch"},
      {"K", "8", "samples per class"},
      {"pretrain_epochs", "300", "pre-training epochs"},
      {"pretrain_lr", "0.001", "pre-training learning rate"},
      {"mid_dim", "0", "projector hidden width (0 = d)"},
      {"pretrain_facets", "1,2", "facets (1-based) used as projector heads"},
      // data
      {"scheme", "amazon", "amazon | movielens"},
      {"k_core", "5", "k-core threshold (0 = off)"},
      {"price_edges", "0,50,100,150,200,250,300,350,400,450", "fixed price bin lower edges"},
      {"price_bins", "0", "equal-frequency price bins (0 = use price_edges)"},
      {"embed_dim", "64", "pseudo embedding width"},
      // evaluation
      {"ks", "5,10,20", "metric cutoffs"},
      {"filter_history", "false", "drop history items from the candidate set"},
      // synthetic data
      {"users", "300", "synthetic users"},
      {"items", "60", "synthetic items"},
      {"facets", "2", "synthetic facets"},
      {"classes", "7", "synthetic classes per facet"},
      {"match_prob", "0.9", "chance a draw matches a preferred class"},
      {"class_persistence", "0.75", "chance a matching draw keeps the previous class"},
      // output
      {"runs_dir", "runs", "parent of per-config run directories"},
  };
  return keys;
}

class ConfigMap {
 public:
  ConfigMap() {
    for (const auto& k : config_keys()) {
      values_[k.name] = k.fallback;
      origin_[k.name] = "default";
    }
  }

  static bool known(const std::string& key) {
    for (const auto& k : config_keys())
      if (key == k.name) return true;
    return false;
  }

  void set(const std::string& key, const std::string& value, const std::string& origin) {
    if (!known(key)) throw ConfigError(origin + ": unknown config key '" + key + "'");
    values_[key] = value;
    origin_[key] = origin;
  }

  // `key = value` lines; '#' starts a comment line.
  void merge_text(const std::string& text, const std::string& source) {
    std::map<std::string, std::size_t> seen;
    const auto lines = split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
      const std::string where = source + ":" + std::to_string(n + 1);
      std::string line = trim(lines[n]);
      if (line.empty() || line[0] == '#') continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (seen.count(key)) {
        throw ConfigError(where + ": key '" + key + "' already set on line " +
                          std::to_string(seen[key]));
      }
      seen[key] = n + 1;
      set(key, value, where);
    }
  }

  void merge_file(const std::string& path) { merge_text(read_file(path), path); }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  const std::string& origin(const std::string& key) const { return origin_.at(key); }

  // Canonical form: keys in declaration order.
  std::string dump() const {
    std::string out;
    for (const auto& k : config_keys()) out += std::string(k.name) + " = " + values_.at(k.name) + "\n";
    return out;
  }

  std::string hash() const { return hex64(fnv1a64(dump())); }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> origin_;
};

namespace detail {

inline std::string bad_value(const std::string& key, const std::string& v, const char* want) {
  return "config key '" + key + "': '" + v + "' is not " + want;
}

inline std::size_t as_size(const ConfigMap& c, const std::string& key) {
  const auto& v = c.get(key);
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(bad_value(key, v, "a non-negative integer"));
  }
  return out;
}

inline double as_double(const ConfigMap& c, const std::string& key) {
  const auto& v = c.get(key);
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(bad_value(key, v, "a finite number"));
}

inline bool as_bool(const ConfigMap& c, const std::string& key) {
  const auto& v = c.get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(bad_value(key, v, "true or false"));
}

inline std::vector<std::string> as_list(const ConfigMap& c, const std::string& key) {
  std::vector<std::string> out;
  for (auto& part : split_on(c.get(key), ','))
    if (auto t = ConfigMap::trim(part); !t.empty()) out.push_back(t);
  return out;
}

inline std::vector<std::size_t> as_size_list(const ConfigMap& c, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& s : as_list(c, key)) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError(bad_value(key, c.get(key), "a comma-separated integer list"));
    }
    out.push_back(v);
  }
  return out;
}

inline std::vector<double> as_double_list(const ConfigMap& c, const std::string& key) {
  std::vector<double> out;
  for (const auto& s : as_list(c, key)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError(bad_value(key, c.get(key), "a comma-separated number list"));
    }
  }
  return out;
}

}  // namespace detail

struct RunConfig {
  BackboneConfig backbone;
  FameConfig fame;
  TrainConfig backbone_train;
  TrainConfig finetune;
  PretrainConfig pretrain;
  std::size_t mid_dim = 0;
  std::vector<std::size_t> pretrain_facets;  // 0-based
  Scheme scheme = Scheme::amazon;
  std::size_t k_core = 5;
  std::vector<double> price_edges;
  std::size_t price_bins = 0;
  std::size_t embed_dim = 64;
  SynthConfig synth;
  std::string runs_dir;
  std::uint64_t seed = 0;
};

inline RunConfig resolve(const ConfigMap& c) {
  using namespace detail;
  RunConfig r;
  r.seed = as_size(c, "seed");

  r.backbone.d = as_size(c, "d");
  r.backbone.heads = as_size(c, "H");
  r.backbone.layers = as_size(c, "L");
  r.backbone.max_len = as_size(c, "max_len");
  r.backbone.dropout = as_double(c, "dropout");

  r.fame.d = r.backbone.d;
  r.fame.heads = r.backbone.heads;
  r.fame.experts = as_size(c, "N");
  r.fame.dropout = r.backbone.dropout;
  r.fame.expert_noise = as_double(c, "expert_noise");
  r.fame.random_experts = as_bool(c, "random_experts");
  r.fame.slice_facet_proj = as_bool(c, "slice_facet_proj");

  TrainConfig t;
  t.adam.lr = as_double(c, "lr");
  t.adam.beta1 = as_double(c, "beta1");
  t.adam.beta2 = as_double(c, "beta2");
  t.batch = as_size(c, "batch");
  t.seed = r.seed;
  t.eval_every = as_size(c, "eval_every");
  t.early_stopping = as_bool(c, "early_stopping");
  t.patience = as_size(c, "patience");
  t.init_mode = parse_init_mode(c.get("init_mode"));
  t.text_scale = as_double(c, "text_scale");
  t.eval.ks = as_size_list(c, "ks");
  t.eval.filter_history = as_bool(c, "filter_history");
  if (t.eval.ks.empty()) throw ConfigError("config key 'ks' needs at least one cutoff");
  for (auto k : t.eval.ks)
    if (k == 0) throw ConfigError("config key 'ks': cutoffs must be positive");
  if (t.early_stopping && std::find(t.eval.ks.begin(), t.eval.ks.end(), 10) == t.eval.ks.end()) {
    throw ConfigError("early_stopping monitors NDCG@10, so ks must include 10");
  }
  r.backbone_train = t;
  r.backbone_train.epochs = as_size(c, "epochs");
  r.finetune = t;
  r.finetune.epochs = as_size(c, "finetune_epochs");
  r.finetune.init_mode = InitMode::random;
  r.backbone_train.validate();
  r.finetune.validate();
  if (!(t.adam.beta1 >= 0 && t.adam.beta1 < 1 && t.adam.beta2 >= 0 && t.adam.beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }

  r.pretrain.tau = as_double(c, "tau");
  r.pretrain.P = as_size(c, "P");
  r.pretrain.K = as_size(c, "K");
  r.pretrain.epochs = as_size(c, "pretrain_epochs");
  r.pretrain.adam = t.adam;
  r.pretrain.adam.lr = as_double(c, "pretrain_lr");
  r.pretrain.seed = r.seed;
  r.mid_dim = as_size(c, "mid_dim");
  if (r.mid_dim == 0) r.mid_dim = r.backbone.d;
  for (auto f : as_size_list(c, "pretrain_facets")) {
    if (f == 0) throw ConfigError("config key 'pretrain_facets' is 1-based");
    r.pretrain_facets.push_back(f - 1);
  }
  if (r.pretrain_facets.empty()) throw ConfigError("config key 'pretrain_facets' is empty");
  try {
    r.pretrain.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }

  r.scheme = parse_scheme(c.get("scheme"));
  r.k_core = as_size(c, "k_core");
  r.price_edges = as_double_list(c, "price_edges");
  r.price_bins = as_size(c, "price_bins");
  if (r.price_edges.empty()) throw ConfigError("config key 'price_edges' is empty");
  for (std::size_t i = 1; i < r.price_edges.size(); ++i)
    if (!(r.price_edges[i] > r.price_edges[i - 1])) {
      throw ConfigError("config key 'price_edges' must be strictly increasing");
    }
  r.embed_dim = as_size(c, "embed_dim");
  if (r.embed_dim == 0) throw ConfigError("config key 'embed_dim' must be positive");

  r.synth.users = as_size(c, "users");
  r.synth.items = as_size(c, "items");
  r.synth.facets = as_size(c, "facets");
  r.synth.classes = as_size(c, "classes");
  r.synth.match_prob = as_double(c, "match_prob");
  r.synth.class_persistence = as_double(c, "class_persistence");
  r.synth.seed = r.seed;
  r.runs_dir = c.get("runs_dir");

  try {
    r.backbone.items = 1;  // real count comes from the dataset
    r.backbone.validate();
    r.fame.validate();
    r.synth.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return r;
}

}  // namespace fame
