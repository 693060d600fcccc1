#pragma once

#include "stair/binary_io.hpp"
#include "stair/config.hpp"
#include "stair/training.hpp"

#include <string>

namespace stair {

/// Embeddings, optimizer state and the training config that produced them.
///
/// Layout (little-endian): "STCK", u32 version, u64 config hash, u64 dataset
/// hash, u64-length-prefixed training-config JSON, u64 epoch, u64 optimizer
/// step, then six matrices (users, items, user moments m/v, item moments m/v),
/// each as u64 rows, u64 cols, rows*cols f64 row-major.
struct Checkpoint {
  static constexpr std::uint32_t version = 1;

  TrainConfig config;
  std::uint64_t dataset_hash = 0;
  std::size_t epoch = 0;
  EmbeddingTable embeddings;
  OptimizerState optimizer;
};

namespace detail {

inline void write_matrix(io::Writer& w, const Matrix& m) {
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
}

inline Matrix read_matrix(io::Reader& r) {
  const auto rows = r.u64();
  const auto cols = r.u64();
  if (rows * cols * 8 > r.remaining()) throw InputError("'" + r.origin() + "': truncated matrix");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
  return m;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  io::Writer w;
  w.bytes("STCK");
  w.u32(Checkpoint::version);
  w.u64(config_hash(c.config));
  w.u64(c.dataset_hash);
  w.string(training_json(c.config).dump());
  w.u64(c.epoch);
  w.u64(c.optimizer.step);
  detail::write_matrix(w, c.embeddings.users);
  detail::write_matrix(w, c.embeddings.items);
  detail::write_matrix(w, c.optimizer.users.first);
  detail::write_matrix(w, c.optimizer.users.second);
  detail::write_matrix(w, c.optimizer.items.first);
  detail::write_matrix(w, c.optimizer.items.second);
  w.save(path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto r = io::Reader::from_file(path);
  r.expect_magic("STCK");
  const auto ver = r.u32();
  if (ver != Checkpoint::version)
    throw InputError("'" + path + "': checkpoint version " + std::to_string(ver) + " is not supported");
  Checkpoint c;
  const auto stored_config_hash = r.u64();
  c.dataset_hash = r.u64();
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(r.string());
  } catch (const nlohmann::json::parse_error&) {
    throw InputError("'" + path + "': embedded config is not valid JSON");
  }
  c.config = training_from_json(cfg);
  if (config_hash(c.config) != stored_config_hash) throw InputError("'" + path + "': config hash mismatch (corrupt file?)");
  c.epoch = r.u64();
  c.optimizer.step = r.u64();
  c.optimizer.options = c.config.adamw();
  c.embeddings.users = detail::read_matrix(r);
  c.embeddings.items = detail::read_matrix(r);
  c.optimizer.users.first = detail::read_matrix(r);
  c.optimizer.users.second = detail::read_matrix(r);
  c.optimizer.items.first = detail::read_matrix(r);
  c.optimizer.items.second = detail::read_matrix(r);
  r.expect_end();
  if (c.embeddings.users.cols() != static_cast<Eigen::Index>(c.config.dim) ||
      c.embeddings.items.cols() != static_cast<Eigen::Index>(c.config.dim))
    throw InputError("'" + path + "': embedding width does not match the stored config");
  return c;
}

}  // namespace stair
