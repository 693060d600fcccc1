#pragma once

#include "stair/binary_io.hpp"
#include "stair/dataset.hpp"
#include "stair/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace stair {

struct ModalitySource {
  std::string name;
  std::string features;  // FMAT path
  std::size_t k = 5;
};

/// Everything a run needs: data locations, preprocessing, hyperparameters,
/// ablation switches and the output directory.
///
/// JSON keys (all optional except "interactions"; unknown keys are rejected):
///   preset           "baby" | "sports" | "electronics" hyperparameter defaults
///   interactions     TSV of user<TAB>item records
///   min_degree       k-core threshold (5)
///   split            {"train": 0.8, "valid": 0.1, "test": 0.1}
///   split_seed       seed of the per-user split (0)
///   modalities       [{"name": "textual", "features": "text.fmat", "k": 5}, ...]
///   d, L, gamma, beta_scale, lr, weight_decay, adam_beta1, adam_beta2, adam_eps,
///   batch_size, epochs, seed, init_std, eval_every
///   modality_init, fsc, bsc   ablation toggles (true)
///   whitening        "concat-then-whiten" | "whiten-then-concat"
///   out_dir          where prepared data and runs are written ("stair-out")
struct RunConfig {
  std::string preset;
  std::string interactions;
  std::size_t min_degree = 5;
  SplitRatios split;
  std::uint64_t split_seed = 0;
  std::vector<ModalitySource> modalities;
  TrainConfig train;
  std::string out_dir = "stair-out";
};

/// Hyperparameters from the reference settings of each dataset.
inline void apply_preset(TrainConfig& t, std::string_view preset) {
  t.dim = 64;
  t.layers = 3;
  t.epochs = 500;
  t.lr = 1e-3;
  if (preset == "baby") {
    t.batch_size = 1024, t.weight_decay = 0.3, t.gamma = 0.1;
  } else if (preset == "sports") {
    t.batch_size = 1024, t.weight_decay = 0.1, t.gamma = 0.2;
  } else if (preset == "electronics") {
    t.batch_size = 4096, t.weight_decay = 0.1, t.gamma = 0.4;
  } else {
    throw InputError("unknown preset '" + std::string(preset) + "' (expected baby, sports or electronics)");
  }
}

inline std::size_t preset_neighbors(std::string_view modality) { return modality == "visual" ? 1 : 5; }

namespace detail {

template <class T>
T get_as(const nlohmann::json& j, std::string_view key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InputError("config key '" + std::string(key) + "' has the wrong type");
  }
}

inline std::string resolve(const std::string& path, const std::filesystem::path& base) {
  if (path.empty() || base.empty()) return path;
  const std::filesystem::path p(path);
  return p.is_absolute() ? path : (base / p).lexically_normal().string();
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  const auto& t = c.train;
  if (c.interactions.empty()) throw InputError("config: 'interactions' is required");
  if (c.min_degree == 0) throw InputError("config: min_degree must be >= 1");
  if (t.dim == 0) throw InputError("config: d must be >= 1");
  if (!(t.gamma > 0.0)) throw InputError("config: gamma must be > 0");
  if (!(t.beta_scale > 0.0 && t.beta_scale < 1.0)) throw InputError("config: beta_scale must lie in (0, 1)");
  if (!(t.lr > 0.0)) throw InputError("config: lr must be > 0");
  if (!(t.weight_decay >= 0.0)) throw InputError("config: weight_decay must be >= 0");
  if (!(t.adam_beta1 >= 0.0 && t.adam_beta1 < 1.0) || !(t.adam_beta2 >= 0.0 && t.adam_beta2 < 1.0))
    throw InputError("config: adam betas must lie in [0, 1)");
  if (!(t.adam_eps > 0.0)) throw InputError("config: adam_eps must be > 0");
  if (t.batch_size == 0 || t.epochs == 0) throw InputError("config: batch_size and epochs must be >= 1");
  if (!(t.init_std > 0.0)) throw InputError("config: init_std must be > 0");
  const double sum = c.split.train + c.split.valid + c.split.test;
  if (std::abs(sum - 1.0) > 1e-9 || c.split.train <= 0.0 || c.split.valid < 0.0 || c.split.test < 0.0)
    throw InputError("config: split ratios must be non-negative with train > 0 and sum to 1");
  std::set<std::string> names;
  for (const auto& m : c.modalities) {
    if (m.name.empty() || m.features.empty()) throw InputError("config: every modality needs 'name' and 'features'");
    if (!names.insert(m.name).second) throw InputError("config: duplicate modality '" + m.name + "'");
    if (m.k == 0) throw InputError("config: modality '" + m.name + "' needs k >= 1");
  }
  if ((t.modality_init || t.bsc) && c.modalities.empty())
    throw InputError("config: modality_init and bsc need at least one modality");
}

/// Parses and validates a config document. Relative paths resolve against `base_dir`.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  static const std::set<std::string> known = {
      "preset", "interactions", "min_degree", "split", "split_seed", "modalities", "d", "L", "gamma",
      "beta_scale", "lr", "weight_decay", "adam_beta1", "adam_beta2", "adam_eps", "batch_size", "epochs",
      "seed", "init_std", "eval_every", "modality_init", "fsc", "bsc", "whitening", "out_dir"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw InputError("config: unknown key '" + key + "'");

  RunConfig c;
  auto& t = c.train;
  if (j.contains("preset")) {
    c.preset = detail::get_as<std::string>(j["preset"], "preset");
    apply_preset(t, c.preset);
  }
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) field = detail::get_as<std::decay_t<decltype(field)>>(j[key], key);
  };
  read("interactions", c.interactions);
  read("min_degree", c.min_degree);
  read("split_seed", c.split_seed);
  read("d", t.dim);
  read("L", t.layers);
  read("gamma", t.gamma);
  read("beta_scale", t.beta_scale);
  read("lr", t.lr);
  read("weight_decay", t.weight_decay);
  read("adam_beta1", t.adam_beta1);
  read("adam_beta2", t.adam_beta2);
  read("adam_eps", t.adam_eps);
  read("batch_size", t.batch_size);
  read("epochs", t.epochs);
  read("seed", t.seed);
  read("init_std", t.init_std);
  read("eval_every", t.eval_every);
  read("modality_init", t.modality_init);
  read("fsc", t.fsc);
  read("bsc", t.bsc);
  read("out_dir", c.out_dir);
  if (j.contains("whitening"))
    t.whitening = parse_whitening_strategy(detail::get_as<std::string>(j["whitening"], "whitening"));
  if (j.contains("split")) {
    const auto& s = j["split"];
    if (!s.is_object()) throw InputError("config key 'split' must be an object");
    for (const auto& [key, _] : s.items())
      if (key != "train" && key != "valid" && key != "test") throw InputError("config: unknown key 'split." + key + "'");
    c.split.train = s.contains("train") ? detail::get_as<double>(s["train"], "split.train") : c.split.train;
    c.split.valid = s.contains("valid") ? detail::get_as<double>(s["valid"], "split.valid") : c.split.valid;
    c.split.test = s.contains("test") ? detail::get_as<double>(s["test"], "split.test") : c.split.test;
  }
  if (j.contains("modalities")) {
    if (!j["modalities"].is_array()) throw InputError("config key 'modalities' must be an array");
    for (const auto& m : j["modalities"]) {
      if (!m.is_object()) throw InputError("config: each modality must be an object");
      ModalitySource src;
      for (const auto& [key, _] : m.items())
        if (key != "name" && key != "features" && key != "k")
          throw InputError("config: unknown modality key '" + key + "'");
      if (m.contains("name")) src.name = detail::get_as<std::string>(m["name"], "modalities.name");
      if (m.contains("features")) src.features = detail::get_as<std::string>(m["features"], "modalities.features");
      src.k = m.contains("k") ? detail::get_as<std::size_t>(m["k"], "modalities.k") : preset_neighbors(src.name);
      src.features = detail::resolve(src.features, base_dir);
      c.modalities.push_back(std::move(src));
    }
  }
  c.interactions = detail::resolve(c.interactions, base_dir);
  c.out_dir = detail::resolve(c.out_dir, base_dir);
  for (const auto& m : c.modalities) t.knn[m.name] = m.k;
  validate(c);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j, std::filesystem::path(path).parent_path());
}

/// Training-relevant part of the config; its hash identifies checkpoints.
inline nlohmann::ordered_json training_json(const TrainConfig& t) {
  nlohmann::ordered_json j;
  j["d"] = t.dim;
  j["L"] = t.layers;
  j["gamma"] = t.gamma;
  j["beta_scale"] = t.beta_scale;
  j["lr"] = t.lr;
  j["weight_decay"] = t.weight_decay;
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_eps"] = t.adam_eps;
  j["batch_size"] = t.batch_size;
  j["epochs"] = t.epochs;
  j["seed"] = t.seed;
  j["init_std"] = t.init_std;
  j["eval_every"] = t.eval_every;
  j["modality_init"] = t.modality_init;
  j["fsc"] = t.fsc;
  j["bsc"] = t.bsc;
  j["whitening"] = std::string(to_string(t.whitening));
  nlohmann::ordered_json knn = nlohmann::ordered_json::object();
  for (const auto& [name, k] : t.knn) knn[name] = k;
  j["knn"] = knn;
  return j;
}

inline TrainConfig training_from_json(const nlohmann::json& j) {
  TrainConfig t;
  try {
    t.dim = j.at("d");
    t.layers = j.at("L");
    t.gamma = j.at("gamma");
    t.beta_scale = j.at("beta_scale");
    t.lr = j.at("lr");
    t.weight_decay = j.at("weight_decay");
    t.adam_beta1 = j.at("adam_beta1");
    t.adam_beta2 = j.at("adam_beta2");
    t.adam_eps = j.at("adam_eps");
    t.batch_size = j.at("batch_size");
    t.epochs = j.at("epochs");
    t.seed = j.at("seed");
    t.init_std = j.at("init_std");
    t.eval_every = j.at("eval_every");
    t.modality_init = j.at("modality_init");
    t.fsc = j.at("fsc");
    t.bsc = j.at("bsc");
    t.whitening = parse_whitening_strategy(j.at("whitening").get<std::string>());
    for (const auto& [name, k] : j.at("knn").items()) t.knn[name] = k.get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("stored training config is malformed: ") + e.what());
  }
  return t;
}

inline std::uint64_t config_hash(const TrainConfig& t) {
  io::Fnv1a h;
  h.update(training_json(t).dump());
  return h.digest();
}

}  // namespace stair
