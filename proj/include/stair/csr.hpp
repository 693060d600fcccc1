#pragma once

#include "stair/binary_io.hpp"
#include "stair/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace stair {

struct Triplet {
  Index row = 0;
  Index col = 0;
  double value = 0.0;
};

/// Square sparse matrix in compressed-sparse-row form. Column indices are
/// strictly increasing within each row.
class CsrMatrix {
 public:
  CsrMatrix() : offsets_(1, 0) {}

  CsrMatrix(std::size_t n, std::vector<std::uint64_t> offsets, std::vector<Index> indices, std::vector<double> values)
      : n_(n), offsets_(std::move(offsets)), indices_(std::move(indices)), values_(std::move(values)) {
    check_structure();
  }

  /// Duplicate coordinates are summed.
  static CsrMatrix from_triplets(std::size_t n, std::vector<Triplet> triplets) {
    std::sort(triplets.begin(), triplets.end(),
              [](const Triplet& a, const Triplet& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
    std::vector<std::uint64_t> offsets(n + 1, 0);
    std::vector<Index> indices;
    std::vector<double> values;
    indices.reserve(triplets.size());
    values.reserve(triplets.size());
    for (std::size_t k = 0; k < triplets.size(); ++k) {
      const auto& t = triplets[k];
      if (t.row >= n || t.col >= n) throw InputError("triplet index out of range");
      if (k > 0 && triplets[k - 1].row == t.row && triplets[k - 1].col == t.col) {
        values.back() += t.value;
        continue;
      }
      indices.push_back(t.col);
      values.push_back(t.value);
      ++offsets[t.row + 1];
    }
    for (std::size_t i = 0; i < n; ++i) offsets[i + 1] += offsets[i];
    return CsrMatrix(n, std::move(offsets), std::move(indices), std::move(values));
  }

  static CsrMatrix identity(std::size_t n) {
    std::vector<std::uint64_t> offsets(n + 1);
    std::vector<Index> indices(n);
    for (std::size_t i = 0; i <= n; ++i) offsets[i] = i;
    for (std::size_t i = 0; i < n; ++i) indices[i] = static_cast<Index>(i);
    return CsrMatrix(n, std::move(offsets), std::move(indices), std::vector<double>(n, 1.0));
  }

  static CsrMatrix zero(std::size_t n) {
    return CsrMatrix(n, std::vector<std::uint64_t>(n + 1, 0), {}, {});
  }

  std::size_t dimension() const { return n_; }
  std::size_t nnz() const { return indices_.size(); }

  std::span<const Index> row_indices(std::size_t i) const {
    return {indices_.data() + offsets_[i], static_cast<std::size_t>(offsets_[i + 1] - offsets_[i])};
  }
  std::span<const double> row_values(std::size_t i) const {
    return {values_.data() + offsets_[i], static_cast<std::size_t>(offsets_[i + 1] - offsets_[i])};
  }

  const std::vector<std::uint64_t>& offsets() const { return offsets_; }
  const std::vector<Index>& indices() const { return indices_; }
  const std::vector<double>& values() const { return values_; }

  double at(std::size_t i, std::size_t j) const {
    auto cols = row_indices(i);
    auto it = std::lower_bound(cols.begin(), cols.end(), static_cast<Index>(j));
    if (it == cols.end() || *it != j) return 0.0;
    return row_values(i)[static_cast<std::size_t>(it - cols.begin())];
  }

  Vector row_sums() const {
    Vector s = Vector::Zero(static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i)
      for (double v : row_values(i)) s[static_cast<Eigen::Index>(i)] += v;
    return s;
  }

  bool is_identity() const {
    if (nnz() != n_) return false;
    for (std::size_t i = 0; i < n_; ++i)
      if (offsets_[i] != i || indices_[i] != i || values_[i] != 1.0) return false;
    return true;
  }

  bool is_symmetric(double tol = 0.0) const {
    for (std::size_t i = 0; i < n_; ++i) {
      auto cols = row_indices(i);
      auto vals = row_values(i);
      for (std::size_t k = 0; k < cols.size(); ++k)
        if (std::abs(at(cols[k], i) - vals[k]) > tol) return false;
    }
    return true;
  }

  Matrix to_dense() const {
    Matrix d = Matrix::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i) {
      auto cols = row_indices(i);
      auto vals = row_values(i);
      for (std::size_t k = 0; k < cols.size(); ++k) d(static_cast<Eigen::Index>(i), cols[k]) = vals[k];
    }
    return d;
  }

  /// D^{-1/2} M D^{-1/2} with D the row sums. Rows summing to zero are an error.
  CsrMatrix sym_normalized() const {
    const Vector deg = row_sums();
    Vector inv_sqrt(deg.size());
    for (Eigen::Index i = 0; i < deg.size(); ++i) {
      if (!(deg[i] > 0.0)) throw RuntimeError("node " + std::to_string(i) + " has zero degree; cannot normalize");
      inv_sqrt[i] = 1.0 / std::sqrt(deg[i]);
    }
    std::vector<double> values(values_.size());
    for (std::size_t i = 0; i < n_; ++i)
      for (auto k = offsets_[i]; k < offsets_[i + 1]; ++k)
        values[k] = values_[k] * inv_sqrt[static_cast<Eigen::Index>(i)] * inv_sqrt[indices_[k]];
    return CsrMatrix(n_, offsets_, indices_, std::move(values));
  }

 private:
  void check_structure() const {
    if (offsets_.size() != n_ + 1 || offsets_.front() != 0 || offsets_.back() != indices_.size() ||
        values_.size() != indices_.size())
      throw InputError("inconsistent CSR arrays");
    for (std::size_t i = 0; i < n_; ++i) {
      if (offsets_[i] > offsets_[i + 1]) throw InputError("CSR offsets not monotone");
      for (auto k = offsets_[i]; k < offsets_[i + 1]; ++k) {
        if (indices_[k] >= n_) throw InputError("CSR column index out of range");
        if (k > offsets_[i] && indices_[k] <= indices_[k - 1])
          throw InputError("CSR column indices not strictly increasing in row " + std::to_string(i));
        if (!std::isfinite(values_[k])) throw InputError("CSR value not finite");
      }
    }
  }

  std::size_t n_ = 0;
  std::vector<std::uint64_t> offsets_;
  std::vector<Index> indices_;
  std::vector<double> values_;
};

/// out = graph * x. Each output row accumulates its neighbours in column
/// order, so the result does not depend on the number of threads.
template <class Derived>
void propagate_into(const CsrMatrix& graph, const Eigen::MatrixBase<Derived>& x, Matrix& out) {
  if (static_cast<std::size_t>(x.rows()) != graph.dimension())
    throw InputError("propagate: matrix has " + std::to_string(x.rows()) + " rows, graph dimension is " +
                     std::to_string(graph.dimension()));
  const auto n = static_cast<std::int64_t>(graph.dimension());
  out.resize(x.rows(), x.cols());
  const auto& offsets = graph.offsets();
  const auto& indices = graph.indices();
  const auto& values = graph.values();
#pragma omp parallel for schedule(dynamic, 64)
  for (std::int64_t i = 0; i < n; ++i) {
    auto row = out.row(i);
    row.setZero();
    for (auto k = offsets[static_cast<std::size_t>(i)]; k < offsets[static_cast<std::size_t>(i) + 1]; ++k)
      row.noalias() += values[k] * x.row(indices[k]);
  }
}

template <class Derived>
Matrix propagate(const CsrMatrix& graph, const Eigen::MatrixBase<Derived>& x) {
  Matrix out;
  propagate_into(graph, x, out);
  return out;
}

// SPGR: "SPGR", u32 n, u64 nnz, (n+1) u64 offsets, nnz u32 indices, nnz f64
// values; little-endian.

inline void write_spgr(const std::string& path, const CsrMatrix& m) {
  io::Writer w;
  w.bytes("SPGR");
  w.u32(static_cast<std::uint32_t>(m.dimension()));
  w.u64(m.nnz());
  for (auto o : m.offsets()) w.u64(o);
  for (auto c : m.indices()) w.u32(c);
  for (auto v : m.values()) w.f64(v);
  w.save(path);
}

inline CsrMatrix read_spgr(const std::string& path) {
  auto r = io::Reader::from_file(path);
  r.expect_magic("SPGR");
  const std::size_t n = r.u32();
  const std::size_t nnz = r.u64();
  const std::uint64_t expected = 16 + 8ULL * (n + 1) + 12ULL * nnz;
  if (r.size() != expected)
    throw InputError("'" + path + "': SPGR length " + std::to_string(r.size()) + " bytes, header implies " +
                     std::to_string(expected));
  std::vector<std::uint64_t> offsets(n + 1);
  std::vector<Index> indices(nnz);
  std::vector<double> values(nnz);
  for (auto& o : offsets) o = r.u64();
  for (auto& c : indices) c = r.u32();
  for (auto& v : values) v = r.f64();
  return CsrMatrix(n, std::move(offsets), std::move(indices), std::move(values));
}

}  // namespace stair
