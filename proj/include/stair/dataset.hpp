#pragma once

#include "stair/binary_io.hpp"
#include "stair/common.hpp"
#include "stair/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace stair {

struct Interaction {
  Index user = 0;
  Index item = 0;
  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

enum class Split { train, valid, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw InputError("unknown split '" + std::string(s) + "' (expected train, valid or test)");
}

/// Users, items and their train/valid/test interactions over dense indices.
/// `user_items[u]` is the sorted set of items u interacted with in train.
struct InteractionDataset {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<Interaction> train;
  std::vector<Interaction> valid;
  std::vector<Interaction> test;
  std::vector<std::vector<Index>> user_items;

  // Raw identifiers by dense index; empty for generated datasets.
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  // Position of each item among the distinct raw items in first-appearance
  // order before filtering; lets feature files indexed that way be realigned.
  std::vector<std::size_t> raw_item_rank;
  std::size_t num_raw_items = 0;

  const std::vector<Interaction>& split(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::valid: return valid;
      case Split::test: return test;
    }
    return train;
  }

  std::size_t num_interactions() const { return train.size() + valid.size() + test.size(); }

  bool in_train(Index u, Index i) const {
    const auto& items = user_items[u];
    return std::binary_search(items.begin(), items.end(), i);
  }

  void rebuild_adjacency() {
    user_items.assign(num_users, {});
    for (const auto& x : train) user_items[x.user].push_back(x.item);
    for (auto& items : user_items) std::sort(items.begin(), items.end());
  }

  /// Held-out items per user for the given split (sorted).
  std::vector<std::vector<Index>> held_out(Split s) const {
    std::vector<std::vector<Index>> out(num_users);
    for (const auto& x : split(s)) out[x.user].push_back(x.item);
    for (auto& items : out) std::sort(items.begin(), items.end());
    return out;
  }

  std::uint64_t content_hash() const {
    io::Fnv1a h;
    h.update_u64(num_users);
    h.update_u64(num_items);
    for (const auto* part : {&train, &valid, &test}) {
      h.update_u64(part->size());
      for (const auto& x : *part) h.update_u64((static_cast<std::uint64_t>(x.user) << 32) | x.item);
    }
    return h.digest();
  }

  /// Checks index ranges, pairwise disjointness of the splits and train coverage.
  void validate() const {
    std::vector<Interaction> all;
    all.reserve(num_interactions());
    for (const auto* part : {&train, &valid, &test}) {
      for (const auto& x : *part) {
        if (x.user >= num_users || x.item >= num_items)
          throw InputError("interaction (" + std::to_string(x.user) + ", " + std::to_string(x.item) +
                           ") out of range");
        all.push_back(x);
      }
    }
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
      throw InputError("train/valid/test are not pairwise disjoint");
    std::vector<char> user_seen(num_users, 0), item_seen(num_items, 0);
    for (const auto& x : train) user_seen[x.user] = item_seen[x.item] = 1;
    if (std::find(user_seen.begin(), user_seen.end(), 0) != user_seen.end())
      throw InputError("some user has no train interaction");
    if (std::find(item_seen.begin(), item_seen.end(), 0) != item_seen.end())
      throw InputError("some item has no train interaction");
    if (user_items.size() != num_users) throw InputError("user adjacency not built");
  }
};

/// Builds a dataset from dense-index pairs (used by generators and tests).
inline InteractionDataset make_dataset(std::size_t num_users, std::size_t num_items, std::vector<Interaction> train,
                                       std::vector<Interaction> valid = {}, std::vector<Interaction> test = {}) {
  InteractionDataset ds;
  ds.num_users = num_users;
  ds.num_items = num_items;
  ds.train = std::move(train);
  ds.valid = std::move(valid);
  ds.test = std::move(test);
  ds.raw_item_rank.resize(num_items);
  for (std::size_t i = 0; i < num_items; ++i) ds.raw_item_rank[i] = i;
  ds.num_raw_items = num_items;
  ds.rebuild_adjacency();
  return ds;
}

struct RawRecord {
  std::string user;
  std::string item;
};

inline std::vector<RawRecord> read_interaction_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open interactions file '" + path + "'");
  std::vector<RawRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() ||
        line.find('\t', tab + 1) != std::string::npos)
      throw InputError(path + ":" + std::to_string(line_no) + ": expected 'user<TAB>item', got '" + line + "'");
    records.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return records;
}

/// Iterative k-core filter over raw records, dense re-indexing in first-appearance
/// order of the surviving records. Duplicate (user, item) records are collapsed.
/// Every interaction lands in `train`.
inline InteractionDataset build_dataset(const std::vector<RawRecord>& records, std::size_t min_degree) {
  std::unordered_map<std::string, Index> user_code, item_code;
  std::vector<std::string> user_names, item_names;
  std::vector<Interaction> edges;
  edges.reserve(records.size());
  auto code_of = [](std::unordered_map<std::string, Index>& codes, std::vector<std::string>& names,
                    const std::string& key) {
    auto [it, inserted] = codes.try_emplace(key, static_cast<Index>(names.size()));
    if (inserted) names.push_back(key);
    return it->second;
  };
  {
    for (const auto& r : records) {
      const Index u = code_of(user_code, user_names, r.user);
      const Index i = code_of(item_code, item_names, r.item);
      edges.push_back({u, i});
    }
    // Drop duplicate pairs, keeping the first occurrence.
    std::vector<std::size_t> order(edges.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return edges[a] < edges[b]; });
    std::vector<char> keep(edges.size(), 1);
    for (std::size_t k = 1; k < order.size(); ++k)
      if (edges[order[k]] == edges[order[k - 1]]) keep[order[k]] = 0;
    std::size_t w = 0;
    for (std::size_t k = 0; k < edges.size(); ++k)
      if (keep[k]) edges[w++] = edges[k];
    edges.resize(w);
  }

  std::vector<char> alive(edges.size(), 1);
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<std::size_t> udeg(user_names.size(), 0), ideg(item_names.size(), 0);
    for (std::size_t k = 0; k < edges.size(); ++k)
      if (alive[k]) ++udeg[edges[k].user], ++ideg[edges[k].item];
    for (std::size_t k = 0; k < edges.size(); ++k) {
      if (alive[k] && (udeg[edges[k].user] < min_degree || ideg[edges[k].item] < min_degree)) {
        alive[k] = 0;
        changed = true;
      }
    }
  }

  InteractionDataset ds;
  constexpr Index unmapped = ~Index{0};
  std::vector<Index> user_map(user_names.size(), unmapped), item_map(item_names.size(), unmapped);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    if (!alive[k]) continue;
    auto [u, i] = edges[k];
    if (user_map[u] == unmapped) {
      user_map[u] = static_cast<Index>(ds.user_ids.size());
      ds.user_ids.push_back(user_names[u]);
    }
    if (item_map[i] == unmapped) {
      item_map[i] = static_cast<Index>(ds.item_ids.size());
      ds.item_ids.push_back(item_names[i]);
      ds.raw_item_rank.push_back(i);
    }
    ds.train.push_back({user_map[u], item_map[i]});
  }
  if (ds.train.empty()) throw RuntimeError("dataset degenerate: no interactions survive min_degree=" + std::to_string(min_degree));
  ds.num_users = ds.user_ids.size();
  ds.num_items = ds.item_ids.size();
  ds.num_raw_items = item_names.size();
  ds.rebuild_adjacency();
  return ds;
}

inline InteractionDataset load_interactions(const std::string& path, std::size_t min_degree) {
  return build_dataset(read_interaction_records(path), min_degree);
}

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

/// Per-user split sizes for n interactions: floor of each share, then the
/// leftover interactions go one at a time to the largest fractional remainder
/// (ties: test, then valid, then train). Users with fewer than 3 interactions
/// keep everything in train.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  if (n < 3) return {n, 0, 0};
  const std::array<double, 3> share = {r.train * static_cast<double>(n), r.valid * static_cast<double>(n),
                                       r.test * static_cast<double>(n)};
  std::array<std::size_t, 3> size{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    // Guard against 0.8 * 10 evaluating to 7.9999999.
    size[k] = static_cast<std::size_t>(std::floor(share[k] + 1e-9));
    assigned += size[k];
  }
  constexpr std::array<std::size_t, 3> tie_order = {2, 1, 0};
  std::array<bool, 3> used{};
  while (assigned < n) {
    std::size_t best = 3;
    double best_frac = -1.0;
    for (std::size_t k : tie_order) {
      if (used[k]) continue;
      const double frac = share[k] - static_cast<double>(size[k]);
      if (frac > best_frac + 1e-12) best = k, best_frac = frac;
    }
    if (best == 3) {
      used = {};
      continue;
    }
    used[best] = true;
    ++size[best];
    ++assigned;
  }
  if (size[0] == 0) {
    // Keep at least one train interaction per user.
    const std::size_t donor = size[2] > 0 ? 2 : 1;
    --size[donor];
    ++size[0];
  }
  return size;
}

/// Seeded per-user random split. Held-out interactions of items that end up
/// without any train occurrence are moved back to train.
inline InteractionDataset split_interactions(const InteractionDataset& ds, const SplitRatios& ratios,
                                             std::uint64_t seed) {
  const double total = ratios.train + ratios.valid + ratios.test;
  if (std::abs(total - 1.0) > 1e-9 || ratios.train <= 0 || ratios.valid < 0 || ratios.test < 0)
    throw InputError("split ratios must be non-negative, train > 0, and sum to 1");

  std::vector<std::vector<Index>> per_user(ds.num_users);
  for (const auto* part : {&ds.train, &ds.valid, &ds.test})
    for (const auto& x : *part) per_user[x.user].push_back(x.item);

  InteractionDataset out = ds;
  out.train.clear();
  out.valid.clear();
  out.test.clear();
  auto rng = make_rng(seed, Stream::split);
  for (Index u = 0; u < ds.num_users; ++u) {
    auto& items = per_user[u];
    std::sort(items.begin(), items.end());
    shuffle(items.begin(), items.end(), rng);
    const auto [n_train, n_valid, n_test] = split_sizes(items.size(), ratios);
    std::size_t k = 0;
    for (; k < n_train; ++k) out.train.push_back({u, items[k]});
    for (; k < n_train + n_valid; ++k) out.valid.push_back({u, items[k]});
    for (; k < n_train + n_valid + n_test; ++k) out.test.push_back({u, items[k]});
  }

  std::vector<char> item_in_train(ds.num_items, 0);
  for (const auto& x : out.train) item_in_train[x.item] = 1;
  auto reclaim = [&](std::vector<Interaction>& held) {
    std::vector<Interaction> kept;
    for (const auto& x : held) (item_in_train[x.item] ? kept : out.train).push_back(x);
    held = std::move(kept);
  };
  reclaim(out.valid);
  reclaim(out.test);
  out.rebuild_adjacency();
  return out;
}

/// Precomputed item features of one modality, rows aligned to dense item indices.
struct ModalityFeatures {
  std::string modality;
  MatrixF matrix;

  std::size_t num_items() const { return static_cast<std::size_t>(matrix.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(matrix.cols()); }
};

inline void check_finite(const MatrixF& m, const std::string& origin) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (!std::isfinite(m(i, j)))
        throw InputError("'" + origin + "': non-finite value at row " + std::to_string(i) + ", column " +
                         std::to_string(j));
}

inline ModalityFeatures load_features(const std::string& path, std::size_t expected_items,
                                      std::string modality = "features") {
  MatrixF m = io::read_fmat(path);
  if (static_cast<std::size_t>(m.rows()) != expected_items)
    throw InputError("'" + path + "': feature file has " + std::to_string(m.rows()) + " rows but the dataset has " +
                     std::to_string(expected_items) + " items");
  check_finite(m, path);
  return {std::move(modality), std::move(m)};
}

}  // namespace stair
