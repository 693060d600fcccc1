#pragma once

#include "stair/common.hpp"
#include "stair/dataset.hpp"
#include "stair/rng.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace stair {

/// User and item ID embeddings. The concatenated view is users then items,
/// matching the node layout of the bipartite graph.
struct EmbeddingTable {
  Matrix users;
  Matrix items;

  std::size_t dim() const { return static_cast<std::size_t>(items.cols()); }

  Matrix concatenated() const {
    Matrix e(users.rows() + items.rows(), items.cols());
    e.topRows(users.rows()) = users;
    e.bottomRows(items.rows()) = items;
    return e;
  }

  bool all_finite() const { return users.allFinite() && items.allFinite(); }
};

struct SvdResult {
  Matrix u;  // n x k, orthonormal columns
  Vector singular_values;
};

namespace detail {

inline Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& y) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
  return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

/// Flip each column so that its largest-magnitude entry (first on ties) is positive.
inline void fix_signs(Matrix& u) {
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i)
      if (std::abs(u(i, j)) > best) best = std::abs(u(i, j)), arg = i;
    if (u.rows() > 0 && u(arg, j) < 0.0) u.col(j) *= -1.0;
  }
}

}  // namespace detail

struct TruncatedSvdOptions {
  std::size_t oversample = 8;
  std::size_t power_iters = 4;
  std::uint64_t seed = 0;
};

/// Top-k left singular vectors by randomized subspace iteration. Falls back to
/// an exact decomposition when k + oversampling covers the full rank.
inline SvdResult truncated_svd(const Matrix& a, std::size_t k, const TruncatedSvdOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(a.rows());
  const auto m = static_cast<std::size_t>(a.cols());
  const std::size_t r = std::min(n, m);
  if (k > r) throw InputError("truncated_svd: k=" + std::to_string(k) + " exceeds min(rows, cols)=" + std::to_string(r));
  const Eigen::MatrixXd acol = a;
  const std::size_t p = std::min(k + opt.oversample, r);

  Eigen::MatrixXd u_full;
  Eigen::VectorXd s_full;
  if (p >= r) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(acol, Eigen::ComputeThinU);
    u_full = svd.matrixU();
    s_full = svd.singularValues();
  } else {
    auto rng = make_rng(opt.seed, Stream::svd);
    Eigen::MatrixXd omega(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p));
    for (Eigen::Index j = 0; j < omega.cols(); ++j)
      for (Eigen::Index i = 0; i < omega.rows(); ++i) omega(i, j) = standard_normal(rng);
    Eigen::MatrixXd q = detail::orthonormal_basis(acol * omega);
    for (std::size_t it = 0; it < opt.power_iters; ++it) {
      const Eigen::MatrixXd z = detail::orthonormal_basis(acol.transpose() * q);
      q = detail::orthonormal_basis(acol * z);
    }
    const Eigen::MatrixXd b = q.transpose() * acol;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU);
    u_full = q * svd.matrixU();
    s_full = svd.singularValues();
  }
  SvdResult out;
  out.u = u_full.leftCols(static_cast<Eigen::Index>(k));
  out.singular_values = s_full.head(static_cast<Eigen::Index>(k));
  detail::fix_signs(out.u);
  return out;
}

/// Top-d whitened basis of an already centred matrix, scaled by sqrt(rows) so
/// each column has unit variance. Directions beyond the numeric rank are zero.
inline Matrix whiten_centered(const Matrix& centered, std::size_t d, std::uint64_t seed) {
  const auto svd = truncated_svd(centered, d, {.seed = seed});
  Matrix e = svd.u * std::sqrt(static_cast<double>(centered.rows()));
  const double top = svd.singular_values.size() > 0 ? svd.singular_values[0] : 0.0;
  const double cutoff = std::max(top * 1e-10, std::numeric_limits<double>::min());
  std::size_t dropped = 0;
  for (Eigen::Index j = 0; j < e.cols(); ++j) {
    if (!(svd.singular_values[j] > cutoff)) {
      e.col(j).setZero();
      ++dropped;
    }
  }
  if (dropped > 0)
    warn("whitening: requested dimension " + std::to_string(d) + " exceeds the numeric rank; " +
         std::to_string(dropped) + " columns padded with zeros");
  return e;
}

enum class WhiteningStrategy { concat_then_whiten, whiten_then_concat };

inline WhiteningStrategy parse_whitening_strategy(std::string_view s) {
  if (s == "concat-then-whiten") return WhiteningStrategy::concat_then_whiten;
  if (s == "whiten-then-concat") return WhiteningStrategy::whiten_then_concat;
  throw InputError("unknown whitening strategy '" + std::string(s) + "'");
}

inline std::string_view to_string(WhiteningStrategy s) {
  return s == WhiteningStrategy::concat_then_whiten ? "concat-then-whiten" : "whiten-then-concat";
}

namespace detail {

inline Matrix row_normalized(const MatrixF& f) {
  Matrix m = f.cast<double>();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (norm > 0.0) m.row(i) /= norm;
  }
  return m;
}

inline void center_columns(Matrix& m) {
  const Eigen::RowVectorXd mean = m.colwise().mean();
  m.rowwise() -= mean;
}

}  // namespace detail

/// Item embeddings from multimodal features. Each modality is row-L2-normalized.
/// concat_then_whiten concatenates the modalities, centres the columns and keeps
/// the top-d whitened directions. whiten_then_concat whitens each modality on
/// its own into a share of the d columns (earlier modalities get the remainder).
inline Matrix whiten_init(std::span<const ModalityFeatures> features, std::size_t d,
                          WhiteningStrategy strategy = WhiteningStrategy::concat_then_whiten, std::uint64_t seed = 0) {
  if (features.empty()) throw InputError("whiten_init: no modality features");
  const auto n = static_cast<Eigen::Index>(features.front().num_items());
  std::size_t total_dim = 0;
  for (const auto& f : features) {
    if (f.matrix.rows() != n) throw InputError("whiten_init: modality '" + f.modality + "' is not row-aligned");
    total_dim += f.dim();
  }
  if (d == 0 || d > std::min<std::size_t>(static_cast<std::size_t>(n), total_dim))
    throw InputError("whiten_init: d=" + std::to_string(d) + " must be in [1, min(items, feature dims)]");

  if (strategy == WhiteningStrategy::concat_then_whiten) {
    Matrix joint(n, static_cast<Eigen::Index>(total_dim));
    Eigen::Index col = 0;
    for (const auto& f : features) {
      joint.middleCols(col, f.matrix.cols()) = detail::row_normalized(f.matrix);
      col += f.matrix.cols();
    }
    detail::center_columns(joint);
    return whiten_centered(joint, d, seed);
  }

  const std::size_t parts = features.size();
  Matrix out(n, static_cast<Eigen::Index>(d));
  Eigen::Index col = 0;
  for (std::size_t m = 0; m < parts; ++m) {
    const std::size_t share = d / parts + (m < d % parts ? 1 : 0);
    if (share == 0) continue;
    if (share > std::min<std::size_t>(static_cast<std::size_t>(n), features[m].dim()))
      throw InputError("whiten_init: modality '" + features[m].modality + "' too narrow for its share of d");
    Matrix block = detail::row_normalized(features[m].matrix);
    detail::center_columns(block);
    out.middleCols(col, static_cast<Eigen::Index>(share)) = whiten_centered(block, share, seed + m);
    col += static_cast<Eigen::Index>(share);
  }
  return out;
}

/// E_U[u] = mean of E_I over the user's train items.
inline Matrix meanpool_user_init(const Matrix& item_embeddings, const InteractionDataset& ds) {
  if (static_cast<std::size_t>(item_embeddings.rows()) != ds.num_items)
    throw InputError("meanpool_user_init: item embedding rows do not match the dataset");
  Matrix users = Matrix::Zero(static_cast<Eigen::Index>(ds.num_users), item_embeddings.cols());
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    const auto& items = ds.user_items[u];
    if (items.empty()) throw RuntimeError("user " + std::to_string(u) + " has no train interactions");
    for (Index i : items) users.row(static_cast<Eigen::Index>(u)) += item_embeddings.row(i);
    users.row(static_cast<Eigen::Index>(u)) /= static_cast<double>(items.size());
  }
  return users;
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = stddev * standard_normal(rng);
  return m;
}

inline EmbeddingTable random_init(std::size_t num_users, std::size_t num_items, std::size_t d, double stddev,
                                  std::uint64_t seed) {
  auto rng = make_rng(seed, Stream::embedding_init);
  EmbeddingTable t;
  t.users = gaussian_matrix(num_users, d, stddev, rng);
  t.items = gaussian_matrix(num_items, d, stddev, rng);
  return t;
}

struct KMeansResult {
  std::vector<Index> assignments;
  Matrix centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after every assignment pass
  std::size_t iterations = 0;
};

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// shift drops below tol. An empty cluster is re-seeded at the point farthest
/// from its current centroid.
inline KMeansResult kmeans(const Matrix& points, std::size_t clusters, const KMeansOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (clusters == 0 || n < clusters)
    throw InputError("kmeans: need 1 <= C <= n (C=" + std::to_string(clusters) + ", n=" + std::to_string(n) + ")");
  const auto C = static_cast<Eigen::Index>(clusters);
  auto rng = make_rng(opt.seed, Stream::kmeans);

  KMeansResult res;
  res.centroids.resize(C, points.cols());
  {
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::vector<char> chosen(n, 0);
    std::size_t pick = uniform_index(rng, n);
    for (Eigen::Index c = 0; c < C; ++c) {
      if (c > 0) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
        if (total > 0.0) {
          double target = uniform_unit(rng) * total;
          pick = n;
          for (std::size_t i = 0; i < n; ++i) {
            if (chosen[i] || d2[i] <= 0.0) continue;
            pick = i;
            target -= d2[i];
            if (target < 0.0) break;
          }
        } else {
          // Remaining points coincide with centroids; take any unchosen one.
          std::vector<std::size_t> rest;
          for (std::size_t i = 0; i < n; ++i)
            if (!chosen[i]) rest.push_back(i);
          pick = rest[uniform_index(rng, rest.size())];
        }
      }
      chosen[pick] = 1;
      res.centroids.row(c) = points.row(static_cast<Eigen::Index>(pick));
      for (std::size_t i = 0; i < n; ++i)
        d2[i] = std::min(d2[i], (points.row(static_cast<Eigen::Index>(i)) - res.centroids.row(c)).squaredNorm());
    }
  }

  res.assignments.assign(n, 0);
  std::vector<double> cost(n, 0.0);
  auto assign = [&] {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = points.row(static_cast<Eigen::Index>(i));
      double best = std::numeric_limits<double>::infinity();
      Index arg = 0;
      for (Eigen::Index c = 0; c < C; ++c) {
        const double dist = (row - res.centroids.row(c)).squaredNorm();
        if (dist < best) best = dist, arg = static_cast<Index>(c);
      }
      res.assignments[i] = arg;
      cost[i] = best;
      inertia += best;
    }
    res.inertia = inertia;
    res.inertia_history.push_back(inertia);
  };

  assign();
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    Matrix sums = Matrix::Zero(C, points.cols());
    std::vector<std::size_t> counts(clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(res.assignments[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[res.assignments[i]];
    }
    double shift = 0.0;
    std::vector<char> taken(n, 0);
    for (Eigen::Index c = 0; c < C; ++c) {
      Eigen::RowVectorXd next;
      if (counts[static_cast<std::size_t>(c)] > 0) {
        next = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        std::size_t far = 0;
        double far_cost = -1.0;
        for (std::size_t i = 0; i < n; ++i)
          if (!taken[i] && cost[i] > far_cost) far_cost = cost[i], far = i;
        taken[far] = 1;
        next = points.row(static_cast<Eigen::Index>(far));
      }
      shift = std::max(shift, (next - res.centroids.row(c)).norm());
      res.centroids.row(c) = next;
    }
    assign();
    res.iterations = it + 1;
    if (shift < opt.tol) break;
  }
  return res;
}

}  // namespace stair
