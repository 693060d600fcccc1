#pragma once

#include "stair/common.hpp"
#include "stair/csr.hpp"
#include "stair/dataset.hpp"
#include "stair/eval.hpp"
#include "stair/graphs.hpp"
#include "stair/init.hpp"
#include "stair/rng.hpp"
#include "stair/stepwise.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace stair {

struct Triple {
  Index user = 0;
  Index positive = 0;
  Index negative = 0;
};

struct TrainingBatch {
  std::vector<Triple> triples;
};

/// batch_size positives drawn uniformly from the train interactions, each with
/// one negative drawn uniformly from the items the user has not interacted with.
inline TrainingBatch sample_batch(const InteractionDataset& ds, std::size_t batch_size, Rng& rng) {
  if (ds.train.empty()) throw InputError("sample_batch: empty train set");
  TrainingBatch batch;
  batch.triples.reserve(batch_size);
  std::size_t saturated = 0;
  for (std::size_t k = 0; k < batch_size; ++k) {
    const auto& pos = ds.train[uniform_index(rng, ds.train.size())];
    if (ds.user_items[pos.user].size() >= ds.num_items) {
      ++saturated;
      continue;
    }
    Index neg;
    do {
      neg = static_cast<Index>(uniform_index(rng, ds.num_items));
    } while (ds.in_train(pos.user, neg));
    batch.triples.push_back({pos.user, pos.item, neg});
  }
  if (saturated > 0)
    warn("sample_batch: skipped " + std::to_string(saturated) +
         " positives of users who interacted with every item (no negative exists)");
  return batch;
}

struct BprResult {
  double loss = 0.0;
  Matrix grad;  // w.r.t. every row of the latent matrix
};

namespace detail {

/// log(1 + exp(-x)), stable for large |x|.
inline double softplus_neg(double x) { return x > 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

/// sigma(-x) = 1 / (1 + exp(x)).
inline double sigmoid_neg(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(x));
}

}  // namespace detail

/// Mean over the batch of -log sigma(h_u.h_i - h_u.h_i') and its exact gradient.
/// `latent` rows are users then items.
inline BprResult bpr_loss_and_grad(const Matrix& latent, std::size_t num_users, const TrainingBatch& batch) {
  BprResult r;
  r.grad = Matrix::Zero(latent.rows(), latent.cols());
  if (batch.triples.empty()) return r;
  const double scale = 1.0 / static_cast<double>(batch.triples.size());
  for (const auto& t : batch.triples) {
    const auto u = static_cast<Eigen::Index>(t.user);
    const auto i = static_cast<Eigen::Index>(num_users + t.positive);
    const auto j = static_cast<Eigen::Index>(num_users + t.negative);
    const double margin = latent.row(u).dot(latent.row(i) - latent.row(j));
    r.loss += detail::softplus_neg(margin);
    const double g = -detail::sigmoid_neg(margin) * scale;
    r.grad.row(u) += g * (latent.row(i) - latent.row(j));
    r.grad.row(i) += g * latent.row(u);
    r.grad.row(j) -= g * latent.row(u);
  }
  r.loss *= scale;
  return r;
}

struct AdamWOptions {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Moments {
  Matrix first;
  Matrix second;

  static Moments zeros(Eigen::Index rows, Eigen::Index cols) {
    return {Matrix::Zero(rows, cols), Matrix::Zero(rows, cols)};
  }
};

struct OptimizerState {
  std::uint64_t step = 0;
  Moments users;
  Moments items;
  AdamWOptions options;

  static OptimizerState zeros(std::size_t num_users, std::size_t num_items, std::size_t d, AdamWOptions options) {
    const auto cols = static_cast<Eigen::Index>(d);
    return {0, Moments::zeros(static_cast<Eigen::Index>(num_users), cols),
            Moments::zeros(static_cast<Eigen::Index>(num_items), cols), options};
  }
};

/// Bias-corrected adaptive-moment direction m̂ / (sqrt(v̂) + eps) at step t (1-based).
/// Weight decay is not part of the direction.
inline Matrix adamw_direction(Moments& m, std::uint64_t t, const Matrix& grad, const AdamWOptions& opt) {
  if (grad.rows() != m.first.rows() || grad.cols() != m.first.cols())
    throw InputError("adamw_direction: gradient shape does not match the moments");
  m.first = opt.beta1 * m.first + (1.0 - opt.beta1) * grad;
  m.second = opt.beta2 * m.second + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  return ((m.first.array() / c1) / ((m.second.array() / c2).sqrt() + opt.eps)).matrix();
}

struct Directions {
  Matrix users;
  Matrix items;
};

/// One optimizer step over both embedding blocks; advances the step counter by one.
inline Directions adamw_directions(OptimizerState& state, const Matrix& grad_users, const Matrix& grad_items) {
  ++state.step;
  return {adamw_direction(state.users, state.step, grad_users, state.options),
          adamw_direction(state.items, state.step, grad_items, state.options)};
}

/// params <- params - lr * direction - lr * weight_decay * params.
inline void apply_decoupled_update(Eigen::Ref<Matrix> params, const Matrix& direction, double lr, double weight_decay) {
  if (params.rows() != direction.rows() || params.cols() != direction.cols())
    throw InputError("parameter update: shape mismatch");
  params.array() = params.array() * (1.0 - lr * weight_decay) - lr * direction.array();
}

/// T[:, j] = sum_l alpha'_jl S̃^l direction[:, j]. An identity graph or a zero-layer
/// schedule returns the direction untouched (the layer weights sum to one).
inline Matrix bsc_transform(const Matrix& direction, const CsrMatrix& similarity, const StepwiseSchedule& schedule) {
  if (schedule.direction != Direction::backward) throw InputError("BSC needs a backward schedule");
  if (similarity.dimension() != static_cast<std::size_t>(direction.rows()))
    throw InputError("BSC: similarity graph dimension does not match the item count");
  if (similarity.is_identity() || schedule.layers == 0) {
    if (static_cast<std::size_t>(direction.cols()) != schedule.dim) throw InputError("BSC: dimension mismatch");
    return direction;
  }
  return stepwise_propagate(similarity, direction, schedule);
}

/// Constrained item update E_I <- E_I - lr * T - lr * weight_decay * E_I.
inline void bsc_update(Eigen::Ref<Matrix> items, const Matrix& direction, const CsrMatrix& similarity,
                       const StepwiseSchedule& schedule, double lr, double weight_decay) {
  apply_decoupled_update(items, bsc_transform(direction, similarity, schedule), lr, weight_decay);
}

struct TrainConfig {
  std::size_t dim = 64;
  std::size_t layers = 3;
  double gamma = 0.1;
  double beta_scale = 0.9;
  double lr = 1e-3;
  double weight_decay = 0.3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 1024;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;
  bool modality_init = true;
  bool fsc = true;
  bool bsc = true;
  WhiteningStrategy whitening = WhiteningStrategy::concat_then_whiten;
  double init_std = 0.01;
  std::vector<std::size_t> eval_cutoffs = {10, 20};
  std::size_t select_cutoff = 20;
  std::size_t eval_every = 1;
  ModalityKnnSpec knn;  // k per modality name, for building the similarity graph

  AdamWOptions adamw() const { return {lr, weight_decay, adam_beta1, adam_beta2, adam_eps}; }
};

/// Named switches: "mi", "fsc", "bsc" turn the component off.
inline void apply_ablation(TrainConfig& c, std::string_view component) {
  if (component == "mi") c.modality_init = false;
  else if (component == "fsc") c.fsc = false;
  else if (component == "bsc") c.bsc = false;
  else throw InputError("unknown ablation '" + std::string(component) + "' (expected mi, fsc or bsc)");
}

/// "lightgcn": uniform layer weights, random init, plain AdamW.
/// "mf-bpr": the same with zero layers.
inline void apply_baseline(TrainConfig& c, std::string_view baseline) {
  if (baseline == "lightgcn") {
    c.fsc = false;
  } else if (baseline == "mf-bpr") {
    c.fsc = false;
    c.layers = 0;
  } else {
    throw InputError("unknown baseline '" + std::string(baseline) + "' (expected mf-bpr or lightgcn)");
  }
  c.modality_init = false;
  c.bsc = false;
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<EvalReport> valid;
  double correlation = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  EmbeddingTable best;
  OptimizerState best_optimizer;
  std::size_t best_epoch = 0;
  EvalReport best_valid;
  EmbeddingTable last;
  std::vector<EpochLog> log;
};

/// Builds S̃ from per-modality kNN lists with k taken from `knn` by modality name.
inline CsrMatrix build_modality_similarity(std::span<const ModalityFeatures> features, const ModalityKnnSpec& knn) {
  std::vector<NeighborLists> lists;
  for (const auto& f : features) {
    auto it = knn.find(f.modality);
    if (it == knn.end()) throw InputError("no neighbor count configured for modality '" + f.modality + "'");
    lists.push_back(knn_neighbors(f, it->second));
  }
  return build_similarity_graph(lists);
}

/// The training state machine: FSC forward, BPR loss, backprop through FSC,
/// AdamW direction, plain update for users and BSC update for items.
class Trainer {
 public:
  Trainer(TrainConfig config, const InteractionDataset& ds, std::span<const ModalityFeatures> features = {},
          std::optional<CsrMatrix> similarity = std::nullopt)
      : config_(std::move(config)), ds_(ds), graph_(build_bipartite_graph(ds)) {
    if (config_.dim == 0) throw InputError("embedding dimension must be positive");
    if (config_.batch_size == 0) throw InputError("batch size must be positive");
    for (const auto& f : features)
      if (f.num_items() != ds.num_items) throw InputError("modality '" + f.modality + "' is not aligned with items");

    forward_ = config_.fsc ? build_schedule(config_.dim, config_.layers, config_.gamma, Direction::forward,
                                            config_.beta_scale)
                           : uniform_schedule(config_.dim, config_.layers, Direction::forward);
    backward_ = build_schedule(config_.dim, config_.layers, config_.gamma, Direction::backward, config_.beta_scale);

    if (!features.empty()) whitened_ = whiten_init(features, config_.dim, config_.whitening, config_.seed);
    EmbeddingTable init;
    if (config_.modality_init) {
      if (!whitened_) throw InputError("modality initialization needs at least one feature matrix");
      init.items = *whitened_;
      init.users = meanpool_user_init(init.items, ds);
    } else {
      init = random_init(ds.num_users, ds.num_items, config_.dim, config_.init_std, config_.seed);
    }
    embeddings_ = init.concatenated();

    if (config_.bsc) {
      if (similarity) {
        similarity_ = std::move(*similarity);
      } else {
        if (features.empty()) throw InputError("BSC needs modality features or a prebuilt similarity graph");
        similarity_ = build_modality_similarity(features, config_.knn);
      }
      if (similarity_->dimension() != ds.num_items)
        throw InputError("similarity graph dimension does not match the item count");
    }
    optimizer_ = OptimizerState::zeros(ds.num_users, ds.num_items, config_.dim, config_.adamw());
    rng_ = make_rng(config_.seed, Stream::negative_sampling);
  }

  const TrainConfig& config() const { return config_; }
  const CsrMatrix& graph() const { return graph_; }
  const std::optional<CsrMatrix>& similarity() const { return similarity_; }
  const StepwiseSchedule& forward_schedule() const { return forward_; }
  const StepwiseSchedule& backward_schedule() const { return backward_; }
  const OptimizerState& optimizer() const { return optimizer_; }
  const std::optional<Matrix>& whitened_items() const { return whitened_; }

  auto users() const { return embeddings_.topRows(static_cast<Eigen::Index>(ds_.num_users)); }
  auto items() const { return embeddings_.bottomRows(static_cast<Eigen::Index>(ds_.num_items)); }
  EmbeddingTable embeddings() const { return {users(), items()}; }

  Matrix latent() const { return forward_stepwise_convolution(graph_, embeddings_, forward_); }

  /// Gradient of the batch loss w.r.t. the concatenated embeddings.
  BprResult embedding_gradient(const TrainingBatch& batch) const {
    auto r = bpr_loss_and_grad(latent(), ds_.num_users, batch);
    r.grad = backprop_through_fsc(r.grad, graph_, forward_);
    return r;
  }

  double step(const TrainingBatch& batch) {
    const auto nu = static_cast<Eigen::Index>(ds_.num_users);
    const auto ni = static_cast<Eigen::Index>(ds_.num_items);
    const auto g = embedding_gradient(batch);
    if (!std::isfinite(g.loss)) return g.loss;
    const auto dirs = adamw_directions(optimizer_, g.grad.topRows(nu), g.grad.bottomRows(ni));
    apply_decoupled_update(embeddings_.topRows(nu), dirs.users, config_.lr, config_.weight_decay);
    if (similarity_)
      bsc_update(embeddings_.bottomRows(ni), dirs.items, *similarity_, backward_, config_.lr, config_.weight_decay);
    else
      apply_decoupled_update(embeddings_.bottomRows(ni), dirs.items, config_.lr, config_.weight_decay);
    return g.loss;
  }

  /// ceil(|train| / batch_size) sampled batches; returns the mean batch loss.
  double run_epoch(std::size_t epoch = 0) {
    const std::size_t batches = (ds_.train.size() + config_.batch_size - 1) / config_.batch_size;
    double total = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const auto batch = sample_batch(ds_, config_.batch_size, rng_);
      const double loss = step(batch);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << b << " (user norm " << users().norm()
            << ", item norm " << items().norm() << ", optimizer step " << optimizer_.step << ")";
        throw RuntimeError(msg.str());
      }
      total += loss;
    }
    return total / static_cast<double>(batches);
  }

  EvalReport evaluate(Split split, bool mask_train = true) const {
    return rank_and_score(latent(), ds_, split, {.cutoffs = config_.eval_cutoffs, .mask_train = mask_train});
  }

  double correlation() const {
    if (!whitened_) return std::numeric_limits<double>::quiet_NaN();
    return modality_correlation_diagnostic(Matrix(items()), *whitened_);
  }

  /// Runs the configured epochs, evaluating on validation every `eval_every`
  /// epochs and keeping the state with the best validation NDCG at `select_cutoff`.
  TrainResult train(const std::function<void(const EpochLog&)>& on_epoch = {}) {
    TrainResult result;
    double best = -1.0;
    const bool has_valid = !ds_.valid.empty();
    for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
      EpochLog entry;
      entry.epoch = epoch;
      entry.loss = run_epoch(epoch);
      const bool eval_now = epoch % std::max<std::size_t>(config_.eval_every, 1) == 0 || epoch == config_.epochs;
      if (eval_now) {
        entry.correlation = correlation();
        if (has_valid) {
          entry.valid = evaluate(Split::valid);
          const double score = entry.valid->ndcg_at(config_.select_cutoff);
          if (score > best) {
            best = score;
            result.best = embeddings();
            result.best_optimizer = optimizer_;
            result.best_epoch = epoch;
            result.best_valid = *entry.valid;
          }
        }
      }
      if (on_epoch) on_epoch(entry);
      result.log.push_back(std::move(entry));
    }
    result.last = embeddings();
    if (!has_valid || result.best_epoch == 0) {
      result.best = result.last;
      result.best_optimizer = optimizer_;
      result.best_epoch = config_.epochs;
    }
    return result;
  }

 private:
  TrainConfig config_;
  const InteractionDataset& ds_;
  CsrMatrix graph_;
  std::optional<CsrMatrix> similarity_;
  StepwiseSchedule forward_;
  StepwiseSchedule backward_;
  std::optional<Matrix> whitened_;
  Matrix embeddings_;
  OptimizerState optimizer_;
  Rng rng_;
};

inline TrainResult train(const TrainConfig& config, const InteractionDataset& ds,
                         std::span<const ModalityFeatures> features = {},
                         std::optional<CsrMatrix> similarity = std::nullopt,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  Trainer trainer(config, ds, features, std::move(similarity));
  return trainer.train(on_epoch);
}

/// Latent representations for stored embeddings under a configuration.
inline Matrix latent_from_embeddings(const TrainConfig& config, const InteractionDataset& ds,
                                     const EmbeddingTable& e) {
  const auto schedule = config.fsc ? build_schedule(config.dim, config.layers, config.gamma, Direction::forward,
                                                    config.beta_scale)
                                   : uniform_schedule(config.dim, config.layers, Direction::forward);
  return forward_stepwise_convolution(build_bipartite_graph(ds), e.concatenated(), schedule);
}

}  // namespace stair
