#pragma once

#include "stair/binary_io.hpp"
#include "stair/config.hpp"
#include "stair/csr.hpp"
#include "stair/dataset.hpp"
#include "stair/graphs.hpp"
#include "stair/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace stair {

/// On-disk layout written by `prepare` inside the output directory:
///   manifest.json               counts, hashes, cache key, modality list
///   train.tsv valid.tsv test.tsv  dense "user<TAB>item" pairs
///   users.tsv items.tsv         "index<TAB>raw id"
///   features_<name>.fmat        item-aligned features per modality
///   similarity.spgr             normalized item-item similarity graph
struct PreparedData {
  InteractionDataset dataset;
  std::vector<ModalityFeatures> features;
  std::optional<CsrMatrix> similarity;
  nlohmann::json manifest;
};

struct PrepareOutcome {
  bool cache_hit = false;
  std::string stats;
  PreparedData data;
};

/// 160792 -> "160,792".
inline std::string with_thousands(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  for (std::size_t k = 0; k < digits.size(); ++k) {
    if (k > 0 && (digits.size() - k) % 3 == 0) out.push_back(',');
    out.push_back(digits[k]);
  }
  return out;
}

inline std::string stats_line(std::size_t users, std::size_t items, std::size_t interactions) {
  const double density = users && items ? static_cast<double>(interactions) /
                                              (static_cast<double>(users) * static_cast<double>(items))
                                        : 0.0;
  std::ostringstream s;
  s << with_thousands(users) << " users, " << with_thousands(items) << " items, " << with_thousands(interactions)
    << " interactions, ";
  s.setf(std::ios::fixed);
  s.precision(2);
  s << 100.0 * (1.0 - density) << "% sparsity";
  return s.str();
}

/// Content hash of every input that shapes the prepared artifacts.
inline std::uint64_t prepare_cache_key(const RunConfig& c) {
  io::Fnv1a h;
  h.update(std::string_view("stair-prepare-v1"));
  h.update_u64(io::hash_file(c.interactions));
  h.update_u64(c.min_degree);
  nlohmann::json split = {{"train", c.split.train}, {"valid", c.split.valid}, {"test", c.split.test}};
  h.update(split.dump());
  h.update_u64(c.split_seed);
  for (const auto& m : c.modalities) {
    h.update(m.name);
    h.update_u64(m.k);
    h.update_u64(io::hash_file(m.features));
  }
  return h.digest();
}

namespace detail {

inline void write_pairs(const std::filesystem::path& path, const std::vector<Interaction>& xs) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  for (const auto& x : xs) out << x.user << '\t' << x.item << '\n';
}

inline std::vector<Interaction> read_pairs(const std::filesystem::path& path, std::size_t users, std::size_t items) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "' (run prepare first)");
  std::vector<Interaction> xs;
  std::uint64_t u = 0, i = 0;
  while (in >> u >> i) {
    if (u >= users || i >= items) throw InputError("'" + path.string() + "': index out of range");
    xs.push_back({static_cast<Index>(u), static_cast<Index>(i)});
  }
  if (!in.eof()) throw InputError("'" + path.string() + "': malformed line");
  return xs;
}

inline void write_ids(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  for (std::size_t k = 0; k < ids.size(); ++k) out << k << '\t' << ids[k] << '\n';
}

inline std::vector<std::string> read_ids(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InputError("'" + path.string() + "': malformed line");
    ids.push_back(line.substr(tab + 1));
  }
  return ids;
}

/// Feature rows may follow the retained items or every raw item in
/// first-appearance order; the latter gets filtered down.
inline ModalityFeatures align_features(const ModalitySource& src, const InteractionDataset& ds) {
  MatrixF m = io::read_fmat(src.features);
  const auto rows = static_cast<std::size_t>(m.rows());
  if (rows != ds.num_items) {
    if (rows != ds.num_raw_items)
      throw InputError("'" + src.features + "': feature file has " + std::to_string(rows) +
                       " rows but the dataset has " + std::to_string(ds.num_items) + " items (" +
                       std::to_string(ds.num_raw_items) + " before filtering)");
    MatrixF kept(static_cast<Eigen::Index>(ds.num_items), m.cols());
    for (std::size_t i = 0; i < ds.num_items; ++i)
      kept.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(ds.raw_item_rank[i]));
    m = std::move(kept);
  }
  check_finite(m, src.features);
  return {src.name, std::move(m)};
}

}  // namespace detail

/// Reads artifacts written by `prepare`.
inline PreparedData load_prepared(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const auto manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw InputError("no prepared data in '" + dir + "' (run prepare first)");
  PreparedData p;
  try {
    in >> p.manifest;
  } catch (const nlohmann::json::exception&) {
    throw InputError("'" + manifest_path.string() + "' is not valid JSON");
  }
  try {
    const std::size_t users = p.manifest.at("num_users");
    const std::size_t items = p.manifest.at("num_items");
    auto train = detail::read_pairs(root / "train.tsv", users, items);
    auto valid = detail::read_pairs(root / "valid.tsv", users, items);
    auto test = detail::read_pairs(root / "test.tsv", users, items);
    p.dataset = make_dataset(users, items, std::move(train), std::move(valid), std::move(test));
    p.dataset.user_ids = detail::read_ids(root / "users.tsv");
    p.dataset.item_ids = detail::read_ids(root / "items.tsv");
    p.dataset.validate();
    if (io::hex64(p.dataset.content_hash()) != p.manifest.at("dataset_hash").get<std::string>())
      throw InputError("prepared interactions in '" + dir + "' do not match their manifest (rerun prepare)");
    for (const auto& m : p.manifest.at("modalities")) {
      const std::string name = m.at("name");
      p.features.push_back(load_features((root / m.at("file").get<std::string>()).string(), items, name));
    }
    if (p.manifest.at("has_similarity").get<bool>()) {
      p.similarity = read_spgr((root / "similarity.spgr").string());
      if (p.similarity->dimension() != items) throw InputError("cached similarity graph has the wrong size");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("'" + manifest_path.string() + "' is malformed: " + e.what());
  }
  return p;
}

/// Filters, splits and caches the dataset, features and similarity graph.
/// A manifest with the same content key short-circuits the work.
inline PrepareOutcome prepare(const RunConfig& c, const std::string& out_dir) {
  namespace fs = std::filesystem;
  for (const auto& m : c.modalities)
    if (!fs::exists(m.features)) throw InputError("feature file '" + m.features + "' does not exist");
  if (!fs::exists(c.interactions)) throw InputError("interaction file '" + c.interactions + "' does not exist");

  const std::string key = io::hex64(prepare_cache_key(c));
  const fs::path root(out_dir);
  PrepareOutcome outcome;
  if (fs::exists(root / "manifest.json")) {
    try {
      auto cached = load_prepared(out_dir);
      if (cached.manifest.value("cache_key", "") == key) {
        outcome.cache_hit = true;
        outcome.data = std::move(cached);
        const auto& ds = outcome.data.dataset;
        outcome.stats = stats_line(ds.num_users, ds.num_items, ds.num_interactions());
        return outcome;
      }
    } catch (const InputError& e) {
      warn(std::string("ignoring unreadable cache: ") + e.what());
    }
  }

  fs::create_directories(root);
  auto& p = outcome.data;
  p.dataset = split_interactions(load_interactions(c.interactions, c.min_degree), c.split, c.split_seed);
  p.dataset.validate();
  const auto& ds = p.dataset;
  for (const auto& m : c.modalities) p.features.push_back(detail::align_features(m, ds));
  if (!p.features.empty()) p.similarity = build_modality_similarity(p.features, c.train.knn);

  detail::write_pairs(root / "train.tsv", ds.train);
  detail::write_pairs(root / "valid.tsv", ds.valid);
  detail::write_pairs(root / "test.tsv", ds.test);
  detail::write_ids(root / "users.tsv", ds.user_ids);
  detail::write_ids(root / "items.tsv", ds.item_ids);
  nlohmann::ordered_json modalities = nlohmann::ordered_json::array();
  for (const auto& f : p.features) {
    const std::string file = "features_" + f.modality + ".fmat";
    io::write_fmat((root / file).string(), f.matrix);
    modalities.push_back({{"name", f.modality}, {"file", file}, {"dim", f.dim()}, {"k", c.train.knn.at(f.modality)}});
  }
  if (p.similarity) write_spgr((root / "similarity.spgr").string(), *p.similarity);

  nlohmann::ordered_json manifest;
  manifest["cache_key"] = key;
  manifest["dataset_hash"] = io::hex64(ds.content_hash());
  manifest["num_users"] = ds.num_users;
  manifest["num_items"] = ds.num_items;
  manifest["num_interactions"] = ds.num_interactions();
  manifest["num_train"] = ds.train.size();
  manifest["num_valid"] = ds.valid.size();
  manifest["num_test"] = ds.test.size();
  manifest["min_degree"] = c.min_degree;
  manifest["split_seed"] = c.split_seed;
  manifest["modalities"] = modalities;
  manifest["has_similarity"] = p.similarity.has_value();
  std::ofstream out(root / "manifest.json");
  if (!out) throw InputError("cannot write '" + (root / "manifest.json").string() + "'");
  out << manifest.dump(2) << '\n';
  p.manifest = nlohmann::json::parse(manifest.dump());
  outcome.stats = stats_line(ds.num_users, ds.num_items, ds.num_interactions());
  return outcome;
}

/// Run directory name: the baseline, or "stair" plus removed components.
inline std::string variant_name(const std::string& baseline, const std::vector<std::string>& ablations) {
  if (!baseline.empty()) return baseline;
  std::string name = "stair";
  for (const auto& a : ablations) name += "-wo-" + a;
  return name;
}

}  // namespace stair
