#pragma once

#include "stair/csr.hpp"
#include "stair/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace stair {

/// Symmetric sqrt-normalized user-item adjacency over |U| + |I| nodes.
/// Users occupy [0, |U|), items [|U|, |U| + |I|).
inline CsrMatrix build_bipartite_graph(const InteractionDataset& ds) {
  if (ds.train.empty()) throw InputError("build_bipartite_graph: no train interactions");
  const std::size_t n = ds.num_users + ds.num_items;
  std::vector<Triplet> t;
  t.reserve(2 * ds.train.size());
  for (const auto& x : ds.train) {
    const auto item_node = static_cast<Index>(ds.num_users + x.item);
    t.push_back({x.user, item_node, 1.0});
    t.push_back({item_node, x.user, 1.0});
  }
  auto adjacency = CsrMatrix::from_triplets(n, std::move(t));
  // from_triplets sums duplicates; a repeated pair still counts once.
  std::vector<double> ones(adjacency.nnz(), 1.0);
  adjacency = CsrMatrix(n, adjacency.offsets(), adjacency.indices(), std::move(ones));
  return adjacency.sym_normalized();
}

/// Neighbor counts per modality name, e.g. {"textual": 5, "visual": 1}.
using ModalityKnnSpec = std::map<std::string, std::size_t>;

/// neighbors[i] lists the chosen neighbours of item i, best first.
using NeighborLists = std::vector<std::vector<Index>>;

/// Exact top-k cosine neighbours of every item, excluding the item itself.
/// Ties go to the smaller item index. Zero rows have cosine 0 to everything.
inline NeighborLists knn_neighbors(const ModalityFeatures& features, std::size_t k, std::size_t block_rows = 256) {
  const std::size_t n = features.num_items();
  if (k == 0 || k >= n)
    throw InputError("knn_neighbors: k=" + std::to_string(k) + " must be in [1, " + std::to_string(n) + ")");

  // Cosines are snapped to a 2^-40 grid so that mathematically equal values
  // (rounded differently by the GEMM) still tie and go to the smaller index.
  const Matrix raw = features.matrix.cast<double>();
  Vector norms = raw.rowwise().norm();
  std::size_t zero_rows = 0;
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms[i] > 0.0)) {
      norms[i] = std::numeric_limits<double>::infinity();  // cosine 0 to everything
      ++zero_rows;
    }
  if (zero_rows > 0)
    warn(features.modality + ": " + std::to_string(zero_rows) +
         " zero-norm feature rows; their cosine similarity is 0 to every item");

  NeighborLists out(n);
  const auto num_blocks = static_cast<std::int64_t>((n + block_rows - 1) / block_rows);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t b = 0; b < num_blocks; ++b) {
    const auto begin = static_cast<Eigen::Index>(static_cast<std::size_t>(b) * block_rows);
    const auto rows = std::min<Eigen::Index>(static_cast<Eigen::Index>(block_rows), static_cast<Eigen::Index>(n) - begin);
    Matrix sims = raw.middleRows(begin, rows) * raw.transpose();
    for (Eigen::Index j = 0; j < sims.cols(); ++j)
      for (Eigen::Index r = 0; r < rows; ++r)
        sims(r, j) = std::nearbyint(sims(r, j) / (norms[begin + r] * norms[j]) * 0x1p40) * 0x1p-40;
    std::vector<Index> candidates(n - 1);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto self = static_cast<Index>(begin + r);
      for (Index j = 0, w = 0; j < n; ++j)
        if (j != self) candidates[w++] = j;
      auto better = [&](Index a, Index b) {
        const double sa = sims(r, a), sb = sims(r, b);
        return sa > sb || (sa == sb && a < b);
      };
      std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(), better);
      out[self].assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }
  return out;
}

/// Un-normalized multimodal similarity S: S_ij = S_ji = max(Ŝ_ij, Ŝ_ji),
/// where Ŝ_ij counts the modalities in which j is a neighbour of i. No self-loops.
inline CsrMatrix similarity_counts(std::span<const NeighborLists> per_modality) {
  if (per_modality.empty()) throw InputError("similarity graph needs at least one modality");
  const std::size_t n = per_modality.front().size();
  std::vector<Triplet> directed;
  for (const auto& lists : per_modality) {
    if (lists.size() != n) throw InputError("neighbor lists index different item universes");
    for (std::size_t i = 0; i < n; ++i)
      for (Index j : lists[i]) {
        if (j >= n) throw InputError("neighbor index out of range");
        if (j != i) directed.push_back({static_cast<Index>(i), j, 1.0});
      }
  }
  const auto s_hat = CsrMatrix::from_triplets(n, std::move(directed));
  std::vector<Triplet> sym;
  sym.reserve(2 * s_hat.nnz());
  for (std::size_t i = 0; i < n; ++i) {
    auto cols = s_hat.row_indices(i);
    auto vals = s_hat.row_values(i);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const double v = std::max(vals[k], s_hat.at(cols[k], i));
      sym.push_back({static_cast<Index>(i), cols[k], v});
      // Only emit the mirrored entry when the reverse edge is missing; when it
      // exists, the loop over row cols[k] emits it.
      if (s_hat.at(cols[k], i) == 0.0) sym.push_back({cols[k], static_cast<Index>(i), v});
    }
  }
  return CsrMatrix::from_triplets(n, std::move(sym));
}

/// S̃ = D^{-1/2} S D^{-1/2}.
inline CsrMatrix build_similarity_graph(std::span<const NeighborLists> per_modality) {
  return similarity_counts(per_modality).sym_normalized();
}

/// Checks the shared graph invariants: square, finite non-negative values,
/// sorted columns (enforced by CsrMatrix) and symmetry.
inline void validate_propagation_graph(const CsrMatrix& g, double tol = 1e-12) {
  for (double v : g.values())
    if (!(v >= 0.0)) throw InputError("propagation graph has a negative or NaN weight");
  if (!g.is_symmetric(tol)) throw InputError("propagation graph is not symmetric");
}

}  // namespace stair
