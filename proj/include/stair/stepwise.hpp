#pragma once

#include "stair/common.hpp"
#include "stair/csr.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>

namespace stair {

enum class Direction { forward, backward };

enum class ScheduleMode {
  stepwise,  // per-dimension teleport ratios
  uniform,   // alpha = 1 / (L + 1) everywhere (LightGCN weighting)
};

/// Per-dimension layer weights alpha (d x (L+1)) and the teleport ratios beta
/// they come from. Rows of alpha sum to one. In uniform mode beta holds the
/// limiting value 1.
struct StepwiseSchedule {
  std::size_t dim = 0;
  std::size_t layers = 0;
  double gamma = 1.0;
  Direction direction = Direction::forward;
  ScheduleMode mode = ScheduleMode::stepwise;
  Vector beta;
  Matrix alpha;
};

/// Layer weights of one dimension: (1 - b) / (1 - b^{L+1}) * b^l.
/// b = 0 gives (1, 0, ..., 0).
inline Eigen::RowVectorXd layer_weights(double b, std::size_t layers) {
  Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(layers + 1));
  if (b == 0.0) {
    w[0] = 1.0;
    return w;
  }
  const double norm = (1.0 - b) / (1.0 - std::pow(b, static_cast<double>(layers + 1)));
  double power = 1.0;
  for (std::size_t l = 0; l <= layers; ++l, power *= b) w[static_cast<Eigen::Index>(l)] = norm * power;
  return w;
}

/// Forward teleport ratios beta_j = scale * (1 - ((j - 1) / d)^gamma), j = 1..d.
inline Vector forward_betas(std::size_t d, double gamma, double scale = 0.9) {
  Vector beta(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j)
    beta[static_cast<Eigen::Index>(j)] =
        scale * (1.0 - std::pow(static_cast<double>(j) / static_cast<double>(d), gamma));
  return beta;
}

/// Schedule from explicit teleport ratios, each in [0, 1).
inline StepwiseSchedule schedule_from_betas(const Vector& beta, std::size_t layers, Direction direction) {
  StepwiseSchedule s;
  s.dim = static_cast<std::size_t>(beta.size());
  s.layers = layers;
  s.direction = direction;
  s.beta = beta;
  s.alpha.resize(beta.size(), static_cast<Eigen::Index>(layers + 1));
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    if (!(beta[j] >= 0.0 && beta[j] < 1.0))
      throw InputError("teleport ratio " + std::to_string(beta[j]) + " outside [0, 1)");
    s.alpha.row(j) = layer_weights(beta[j], layers);
  }
  return s;
}

/// Stepwise schedule. Backward ratios are the complements 1 - beta_j of the forward ones.
inline StepwiseSchedule build_schedule(std::size_t d, std::size_t layers, double gamma, Direction direction,
                                       double beta_scale = 0.9) {
  if (d == 0) throw InputError("schedule dimension must be positive");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InputError("gamma must be positive, got " + std::to_string(gamma));
  if (!(beta_scale >= 0.0 && beta_scale < 1.0)) throw InputError("beta scale must lie in [0, 1)");
  Vector beta = forward_betas(d, gamma, beta_scale);
  if (direction == Direction::backward) beta = Vector::Ones(beta.size()) - beta;
  if (direction == Direction::backward && beta_scale == 0.0)
    throw InputError("beta scale 0 makes every backward ratio equal to 1");
  auto s = schedule_from_betas(beta, layers, direction);
  s.gamma = gamma;
  return s;
}

inline StepwiseSchedule uniform_schedule(std::size_t d, std::size_t layers, Direction direction = Direction::forward) {
  StepwiseSchedule s;
  s.dim = d;
  s.layers = layers;
  s.direction = direction;
  s.mode = ScheduleMode::uniform;
  s.beta = Vector::Ones(static_cast<Eigen::Index>(d));
  s.alpha = Matrix::Constant(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(layers + 1),
                             1.0 / static_cast<double>(layers + 1));
  return s;
}

/// out[:, j] = sum_l alpha(j, l) * graph^l * x[:, j], computed with one sparse
/// product per layer over all columns at once.
inline Matrix stepwise_propagate(const CsrMatrix& graph, const Matrix& x, const StepwiseSchedule& schedule) {
  if (static_cast<std::size_t>(x.cols()) != schedule.dim)
    throw InputError("stepwise propagation: matrix has " + std::to_string(x.cols()) + " columns, schedule has " +
                     std::to_string(schedule.dim));
  if (static_cast<std::size_t>(x.rows()) != graph.dimension())
    throw InputError("stepwise propagation: matrix has " + std::to_string(x.rows()) +
                     " rows, graph dimension is " + std::to_string(graph.dimension()));
  // Every alpha row sums to one, so I^l collapses to the input itself.
  if (graph.is_identity()) return x;
  Matrix out = x * schedule.alpha.col(0).asDiagonal();
  if (schedule.layers == 0) return out;
  Matrix current = x;
  Matrix next;
  for (std::size_t l = 1; l <= schedule.layers; ++l) {
    propagate_into(graph, current, next);
    out.noalias() += next * schedule.alpha.col(static_cast<Eigen::Index>(l)).asDiagonal();
    current.swap(next);
  }
  return out;
}

/// Forward stepwise convolution H = ||_j sum_l alpha_jl Ã^l E_{:,j}.
inline Matrix forward_stepwise_convolution(const CsrMatrix& graph, const Matrix& embeddings,
                                           const StepwiseSchedule& schedule) {
  if (schedule.direction != Direction::forward) throw InputError("forward convolution needs a forward schedule");
  return stepwise_propagate(graph, embeddings, schedule);
}

/// Gradient of the forward convolution. The map is linear and the graph
/// symmetric, so the adjoint is the same propagation applied to grad_H.
inline Matrix backprop_through_fsc(const Matrix& grad_h, const CsrMatrix& graph, const StepwiseSchedule& schedule) {
  if (schedule.direction != Direction::forward)
    throw InputError("backprop_through_fsc expects the forward schedule it differentiates");
  return stepwise_propagate(graph, grad_h, schedule);
}

/// Mean over dimensions of |Pearson(E[:, j], E0[:, j])|. Zero-variance columns contribute 0.
inline double modality_correlation_diagnostic(const Matrix& embeddings, const Matrix& initial) {
  if (embeddings.rows() != initial.rows() || embeddings.cols() != initial.cols())
    throw InputError("correlation diagnostic: shape mismatch");
  if (embeddings.cols() == 0) return 0.0;
  double total = 0.0;
  std::size_t degenerate = 0;
  for (Eigen::Index j = 0; j < embeddings.cols(); ++j) {
    const Vector a = embeddings.col(j).array() - embeddings.col(j).mean();
    const Vector b = initial.col(j).array() - initial.col(j).mean();
    const double denom = a.norm() * b.norm();
    if (!(denom > 0.0)) {
      ++degenerate;
      continue;
    }
    total += std::abs(a.dot(b) / denom);
  }
  if (degenerate > 0)
    warn("correlation diagnostic: " + std::to_string(degenerate) + " zero-variance dimensions counted as 0");
  return total / static_cast<double>(embeddings.cols());
}

/// One row per dimension, one column per layer, with a "layer0,...,layerL" header.
inline void write_schedule_csv(const std::string& path, const StepwiseSchedule& s) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  for (std::size_t l = 0; l <= s.layers; ++l) out << (l ? "," : "") << "layer" << l;
  out << '\n' << std::setprecision(17);
  for (Eigen::Index j = 0; j < s.alpha.rows(); ++j) {
    for (Eigen::Index l = 0; l < s.alpha.cols(); ++l) out << (l ? "," : "") << s.alpha(j, l);
    out << '\n';
  }
}

}  // namespace stair
