#pragma once

#include "stair/dataset.hpp"
#include "stair/init.hpp"
#include "stair/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace stair {

/// Generated recommendation data where behaviour is driven partly by latent
/// item clusters. The clusters leak into the modality features with
/// modality-specific noise; a second, feature-invisible factor only shows up
/// in the interactions.
struct SyntheticSpec {
  std::size_t num_users = 2000;
  std::size_t num_items = 500;
  std::size_t num_clusters = 20;
  std::size_t latent_dim = 16;         // cluster / item content factor
  std::size_t collab_dim = 8;          // factor invisible to the features
  std::size_t min_interactions = 5;
  double mean_extra_interactions = 3.0;  // geometric tail on top of the minimum
  std::size_t favourite_clusters = 2;
  double taste_spread = 1.0;     // personal offset of a user's taste around its favourite clusters
  double cluster_weight = 1.0;   // log-odds boost of a favourite cluster
  double content_weight = 2.0;   // weight of the item content factor
  double collab_weight = 0.5;    // weight of the feature-invisible factor
  double popularity_weight = 2.0;
  double item_spread = 0.5;      // item deviation from its cluster centre
  std::size_t textual_dim = 64;
  std::size_t visual_dim = 128;
  double textual_noise = 0.5;
  double visual_noise = 1.5;
  SplitRatios split;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  InteractionDataset dataset;  // already split
  std::vector<ModalityFeatures> features;  // textual, visual
  std::vector<Index> item_cluster;
  Matrix affinity;  // generating score of every (user, item) pair, before Gumbel noise
};

inline SyntheticData make_synthetic(const SyntheticSpec& spec) {
  auto rng = make_rng(spec.seed, Stream::synthetic);
  const auto ni = static_cast<Eigen::Index>(spec.num_items);
  const auto r = static_cast<Eigen::Index>(spec.latent_dim);
  const auto rc = static_cast<Eigen::Index>(spec.collab_dim);

  SyntheticData out;
  out.item_cluster.resize(spec.num_items);
  const Matrix centres = gaussian_matrix(spec.num_clusters, spec.latent_dim, 1.0, rng);
  Matrix content(ni, r);
  for (Eigen::Index i = 0; i < ni; ++i) {
    const auto c = static_cast<Index>(uniform_index(rng, spec.num_clusters));
    out.item_cluster[static_cast<std::size_t>(i)] = c;
    for (Eigen::Index k = 0; k < r; ++k) content(i, k) = centres(c, k) + spec.item_spread * standard_normal(rng);
  }
  const Matrix collab_items = gaussian_matrix(spec.num_items, spec.collab_dim, 1.0, rng);
  Vector popularity(ni);
  for (Eigen::Index i = 0; i < ni; ++i) popularity[i] = standard_normal(rng);

  out.affinity.resize(static_cast<Eigen::Index>(spec.num_users), ni);
  std::vector<Interaction> pairs;
  std::vector<double> key(spec.num_items);
  std::vector<Index> order(spec.num_items);
  const double content_scale = 1.0 / std::sqrt(static_cast<double>(r));
  const double collab_scale = 1.0 / std::sqrt(static_cast<double>(rc));
  for (Index u = 0; u < spec.num_users; ++u) {
    std::vector<Index> favourites(spec.favourite_clusters);
    for (auto& f : favourites) f = static_cast<Index>(uniform_index(rng, spec.num_clusters));
    Vector taste = Vector::Zero(r);
    for (Index f : favourites) taste += centres.row(f).transpose();
    taste /= static_cast<double>(favourites.size());
    for (Eigen::Index k = 0; k < r; ++k) taste[k] += spec.taste_spread * standard_normal(rng);
    Vector collab_user(rc);
    for (Eigen::Index k = 0; k < rc; ++k) collab_user[k] = standard_normal(rng);

    // Geometric number of extra interactions.
    const double p = 1.0 / (1.0 + spec.mean_extra_interactions);
    std::size_t n = spec.min_interactions;
    while (uniform_unit(rng) > p && n < spec.num_items / 2) ++n;

    // Gumbel top-n samples n distinct items with probability proportional to exp(score).
    for (Index i = 0; i < spec.num_items; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      double score = spec.popularity_weight * popularity[ii] +
                     spec.content_weight * content_scale * content.row(ii).dot(taste) +
                     spec.collab_weight * collab_scale * collab_items.row(ii).dot(collab_user);
      if (std::find(favourites.begin(), favourites.end(), out.item_cluster[i]) != favourites.end())
        score += spec.cluster_weight;
      out.affinity(static_cast<Eigen::Index>(u), ii) = score;
      double uu = uniform_unit(rng);
      while (uu <= 0.0) uu = uniform_unit(rng);
      key[i] = score - std::log(-std::log(uu));
      order[i] = i;
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                      [&](Index a, Index b) { return key[a] > key[b] || (key[a] == key[b] && a < b); });
    for (std::size_t k = 0; k < n; ++k) pairs.push_back({u, order[k]});
  }

  // Items nobody picked get one interaction from a random user so that every
  // item is trainable.
  std::vector<char> used(spec.num_items, 0);
  for (const auto& x : pairs) used[x.item] = 1;
  for (Index i = 0; i < spec.num_items; ++i)
    if (!used[i]) pairs.push_back({static_cast<Index>(uniform_index(rng, spec.num_users)), i});

  const auto all = make_dataset(spec.num_users, spec.num_items, std::move(pairs));
  out.dataset = split_interactions(all, spec.split, derive_seed(spec.seed, Stream::split));

  auto modality = [&](const char* name, std::size_t dim, double noise) {
    const Matrix projection = gaussian_matrix(spec.latent_dim, dim, 1.0 / std::sqrt(static_cast<double>(r)), rng);
    Matrix f = content * projection;
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      for (Eigen::Index k = 0; k < f.cols(); ++k) f(i, k) += noise * standard_normal(rng);
    return ModalityFeatures{name, f.cast<float>()};
  };
  out.features.push_back(modality("textual", spec.textual_dim, spec.textual_noise));
  out.features.push_back(modality("visual", spec.visual_dim, spec.visual_noise));
  return out;
}

}  // namespace stair
