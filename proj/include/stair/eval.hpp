#pragma once

#include "stair/common.hpp"
#include "stair/dataset.hpp"
#include "stair/init.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace stair {

/// Mean Recall@N and NDCG@N over users with a non-empty held-out set.
struct EvalReport {
  std::vector<std::size_t> cutoffs;
  std::vector<double> recall;
  std::vector<double> ndcg;
  std::size_t num_evaluated_users = 0;
  std::size_t num_skipped_users = 0;

  double recall_at(std::size_t n) const { return recall.at(slot(n)); }
  double ndcg_at(std::size_t n) const { return ndcg.at(slot(n)); }

 private:
  std::size_t slot(std::size_t n) const {
    auto it = std::find(cutoffs.begin(), cutoffs.end(), n);
    if (it == cutoffs.end()) throw InputError("cutoff " + std::to_string(n) + " was not evaluated");
    return static_cast<std::size_t>(it - cutoffs.begin());
  }
};

inline double discount(std::size_t rank) { return 1.0 / std::log2(static_cast<double>(rank) + 1.0); }

/// Recall and NDCG of one ranked list (best first) against a sorted relevant set.
inline void score_ranking(std::span<const Index> ranked, std::span<const Index> relevant,
                          std::span<const std::size_t> cutoffs, std::span<double> recall, std::span<double> ndcg) {
  for (std::size_t c = 0; c < cutoffs.size(); ++c) {
    const std::size_t n = std::min(cutoffs[c], ranked.size());
    double hits = 0.0, dcg = 0.0, idcg = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (std::binary_search(relevant.begin(), relevant.end(), ranked[r])) {
        hits += 1.0;
        dcg += discount(r + 1);
      }
    }
    for (std::size_t r = 0; r < std::min(cutoffs[c], relevant.size()); ++r) idcg += discount(r + 1);
    recall[c] = hits / static_cast<double>(relevant.size());
    ndcg[c] = idcg > 0.0 ? dcg / idcg : 0.0;
  }
}

/// Indices of the n best scores, ties to the smaller index.
inline void top_n(std::span<const double> scores, std::size_t n, std::vector<Index>& order) {
  order.resize(scores.size());
  std::iota(order.begin(), order.end(), Index{0});
  n = std::min(n, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), [&](Index a, Index b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  order.resize(n);
}

struct RankOptions {
  std::vector<std::size_t> cutoffs = {10, 20};
  bool mask_train = true;
  std::size_t block_users = 256;
};

/// Full-catalogue ranking by inner product of latent representations.
/// `latent` holds users then items (|U| + |I| rows).
inline EvalReport rank_and_score(const Matrix& latent, const InteractionDataset& ds, Split split,
                                 const RankOptions& opt = {}) {
  if (static_cast<std::size_t>(latent.rows()) != ds.num_users + ds.num_items)
    throw InputError("rank_and_score: latent rows do not match |U| + |I|");
  if (opt.cutoffs.empty()) throw InputError("rank_and_score: no cutoffs");
  const auto held = ds.held_out(split);
  std::vector<Index> users;
  for (Index u = 0; u < ds.num_users; ++u)
    if (!held[u].empty()) users.push_back(u);

  const std::size_t nc = opt.cutoffs.size();
  const std::size_t max_n = *std::max_element(opt.cutoffs.begin(), opt.cutoffs.end());
  const auto items = latent.bottomRows(static_cast<Eigen::Index>(ds.num_items));
  std::vector<double> recall(users.size() * nc), ndcg(users.size() * nc);

  const auto num_blocks = static_cast<std::int64_t>((users.size() + opt.block_users - 1) / opt.block_users);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t b = 0; b < num_blocks; ++b) {
    const std::size_t begin = static_cast<std::size_t>(b) * opt.block_users;
    const std::size_t end = std::min(users.size(), begin + opt.block_users);
    Matrix user_rows(static_cast<Eigen::Index>(end - begin), latent.cols());
    for (std::size_t k = begin; k < end; ++k) user_rows.row(static_cast<Eigen::Index>(k - begin)) = latent.row(users[k]);
    Matrix scores = user_rows * items.transpose();
    std::vector<Index> order;
    for (std::size_t k = begin; k < end; ++k) {
      auto row = scores.row(static_cast<Eigen::Index>(k - begin));
      if (opt.mask_train)
        for (Index i : ds.user_items[users[k]]) row[i] = -std::numeric_limits<double>::infinity();
      top_n(std::span<const double>(row.data(), ds.num_items), max_n, order);
      score_ranking(order, held[users[k]], opt.cutoffs, std::span<double>(recall.data() + k * nc, nc),
                    std::span<double>(ndcg.data() + k * nc, nc));
    }
  }

  EvalReport report;
  report.cutoffs = opt.cutoffs;
  report.recall.assign(nc, 0.0);
  report.ndcg.assign(nc, 0.0);
  report.num_evaluated_users = users.size();
  report.num_skipped_users = ds.num_users - users.size();
  if (users.empty()) {
    warn("rank_and_score: no user has held-out interactions in split " + std::string(to_string(split)));
    return report;
  }
  for (std::size_t k = 0; k < users.size(); ++k)
    for (std::size_t c = 0; c < nc; ++c) {
      report.recall[c] += recall[k * nc + c];
      report.ndcg[c] += ndcg[k * nc + c];
    }
  for (std::size_t c = 0; c < nc; ++c) {
    report.recall[c] /= static_cast<double>(users.size());
    report.ndcg[c] /= static_cast<double>(users.size());
  }
  return report;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  for (std::size_t c = 0; c < r.cutoffs.size(); ++c) j["recall@" + std::to_string(r.cutoffs[c])] = r.recall[c];
  for (std::size_t c = 0; c < r.cutoffs.size(); ++c) j["ndcg@" + std::to_string(r.cutoffs[c])] = r.ndcg[c];
  j["num_evaluated_users"] = r.num_evaluated_users;
  j["num_skipped_users"] = r.num_skipped_users;
  return j;
}

inline std::string to_text(const EvalReport& r) {
  std::ostringstream out;
  char line[96];
  std::snprintf(line, sizeof line, "%-10s%12s%12s\n", "cutoff", "recall", "ndcg");
  out << line;
  for (std::size_t c = 0; c < r.cutoffs.size(); ++c) {
    std::snprintf(line, sizeof line, "%-10zu%12.6f%12.6f\n", r.cutoffs[c], r.recall[c], r.ndcg[c]);
    out << line;
  }
  out << "evaluated users: " << r.num_evaluated_users << " (skipped " << r.num_skipped_users << ")\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// User behaviour uncertainty

/// Entropy in nats of a user's interactions over item clusters.
struct UncertaintyReport {
  std::string source;
  std::size_t clusters = 0;
  double mean_entropy = 0.0;
  Vector user_entropy;
};

/// -sum_c p_c ln p_c of the cluster histogram of `labels` (0 ln 0 = 0).
inline double label_entropy(std::span<const Index> labels, std::size_t clusters) {
  if (labels.empty()) return 0.0;
  std::vector<std::size_t> counts(clusters, 0);
  for (Index c : labels) ++counts.at(c);
  double h = 0.0;
  const auto n = static_cast<double>(labels.size());
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

/// Per-user entropy of train interactions given item cluster labels.
inline UncertaintyReport entropy_from_labels(std::span<const Index> item_labels, const InteractionDataset& ds,
                                             std::size_t clusters, std::string source) {
  if (item_labels.size() != ds.num_items) throw InputError("one cluster label per item required");
  UncertaintyReport r;
  r.source = std::move(source);
  r.clusters = clusters;
  r.user_entropy.resize(static_cast<Eigen::Index>(ds.num_users));
  std::vector<Index> labels;
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    if (ds.user_items[u].empty()) throw RuntimeError("user " + std::to_string(u) + " has no train interactions");
    labels.clear();
    for (Index i : ds.user_items[u]) labels.push_back(item_labels[i]);
    r.user_entropy[static_cast<Eigen::Index>(u)] = label_entropy(labels, clusters);
  }
  r.mean_entropy = ds.num_users ? r.user_entropy.mean() : 0.0;
  return r;
}

/// Clusters item rows by cosine (k-means on L2-normalized rows) and reports
/// the entropy of every user's train interactions over the clusters.
inline UncertaintyReport behavior_uncertainty(const Matrix& item_rows, const InteractionDataset& ds,
                                              std::size_t clusters, std::uint64_t seed, std::string source) {
  if (clusters < 2) throw InputError("behavior_uncertainty: need at least 2 clusters");
  if (static_cast<std::size_t>(item_rows.rows()) != ds.num_items)
    throw InputError("behavior_uncertainty: rows must align with items");
  Matrix unit = item_rows;
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double norm = unit.row(i).norm();
    if (norm > 0.0) unit.row(i) /= norm;
  }
  const auto km = kmeans(unit, clusters, {.max_iters = 100, .tol = 1e-6, .seed = seed});
  return entropy_from_labels(km.assignments, ds, clusters, std::move(source));
}

/// Standard Gaussian noise rows, the "random" control source.
inline Matrix gaussian_noise_features(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  auto rng = make_rng(seed, Stream::noise);
  return gaussian_matrix(rows, cols, 1.0, rng);
}

inline nlohmann::ordered_json to_json(const UncertaintyReport& r) {
  return {{"source", r.source}, {"clusters", r.clusters}, {"mean_entropy_nats", r.mean_entropy},
          {"max_entropy_nats", std::log(static_cast<double>(r.clusters))}, {"num_users", r.user_entropy.size()}};
}

/// source,clusters,mean_entropy_nats rows for bar charts.
inline void write_uncertainty_summary_csv(const std::string& path, std::span<const UncertaintyReport> reports) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << "source,clusters,mean_entropy_nats\n";
  out.precision(10);
  for (const auto& r : reports) out << r.source << ',' << r.clusters << ',' << r.mean_entropy << '\n';
}

/// user,entropy_nats per user.
inline void write_user_entropy_csv(const std::string& path, const UncertaintyReport& r) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << "user,entropy_nats\n";
  out.precision(10);
  for (Eigen::Index u = 0; u < r.user_entropy.size(); ++u) out << u << ',' << r.user_entropy[u] << '\n';
}

}  // namespace stair
