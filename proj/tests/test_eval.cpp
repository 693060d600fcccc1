#include "oracles.hpp"
#include "stair/eval.hpp"

#include <gtest/gtest.h>

using namespace stair;

namespace {

struct Scored {
  double recall, ndcg;
};

Scored score_one(std::vector<Index> ranked, std::vector<Index> relevant, std::size_t n) {
  std::sort(relevant.begin(), relevant.end());
  const std::array<std::size_t, 1> cut{n};
  double r = 0, g = 0;
  score_ranking(ranked, relevant, cut, std::span<double>(&r, 1), std::span<double>(&g, 1));
  return {r, g};
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(gen);
  return m;
}

}  // namespace

TEST(Metrics, HandExamples) {
  // Relevant {A, B}; top-2 is [A, C].
  EXPECT_DOUBLE_EQ(score_one({0, 2}, {0, 1}, 2).recall, 0.5);
  EXPECT_DOUBLE_EQ(score_one({5, 1, 2}, {5}, 3).ndcg, 1.0);
  EXPECT_NEAR(score_one({1, 5, 2}, {5}, 3).ndcg, 0.6309, 1e-4);
  EXPECT_NEAR(score_one({1, 5, 2}, {5}, 3).ndcg, 1.0 / std::log2(3.0), 1e-15);
  EXPECT_DOUBLE_EQ(score_one({1, 2, 3}, {5}, 3).recall, 0.0);
}

TEST(Metrics, IdealDcgCapsAtCutoff) {
  // More relevant items than the cutoff: a perfect list scores 1.
  const auto s = score_one({0, 1}, {0, 1, 2, 3}, 2);
  EXPECT_DOUBLE_EQ(s.ndcg, 1.0);
  EXPECT_DOUBLE_EQ(s.recall, 0.5);
}

TEST(TopN, TiesGoToSmallerIndex) {
  std::vector<double> s = {1.0, 3.0, 3.0, 2.0};
  std::vector<Index> order;
  top_n(s, 3, order);
  EXPECT_EQ(order, (std::vector<Index>{1, 2, 3}));
}

TEST(Ranking, MatchesBruteForceOracle) {
  for (unsigned seed = 0; seed < 6; ++seed) {
    const auto ds = oracle::random_dataset(40 + seed * 7, 60, 0.15, seed, 0.3);
    const Matrix latent = random_matrix(static_cast<Eigen::Index>(ds.num_users + ds.num_items), 5, seed);
    for (bool mask : {true, false}) {
      const auto rep = rank_and_score(latent, ds, Split::test, {.cutoffs = {5, 10, 20}, .mask_train = mask, .block_users = 7});
      const auto held = ds.held_out(Split::test);
      std::array<double, 3> rec{}, nd{};
      std::size_t users = 0;
      for (Index u = 0; u < ds.num_users; ++u) {
        if (held[u].empty()) continue;
        ++users;
        std::vector<double> scores(ds.num_items);
        for (Index i = 0; i < ds.num_items; ++i)
          scores[i] = latent.row(u).dot(latent.row(ds.num_users + i));
        const auto masked = mask ? ds.user_items[u] : std::vector<Index>{};
        for (int c = 0; c < 3; ++c) {
          const auto m = oracle::brute_force_user(scores, held[u], masked, std::array{5u, 10u, 20u}[c]);
          rec[c] += m.recall;
          nd[c] += m.ndcg;
        }
      }
      ASSERT_EQ(rep.num_evaluated_users, users);
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(rep.recall[c], rec[c] / users, 1e-12);
        EXPECT_NEAR(rep.ndcg[c], nd[c] / users, 1e-12);
      }
    }
  }
}

TEST(Ranking, MonotoneTransformLeavesMetricsUnchanged) {
  const auto ds = oracle::random_dataset(30, 40, 0.2, 4, 0.3);
  const Matrix latent = random_matrix(70, 4, 9);
  Matrix scaled = latent;
  scaled.topRows(30) *= 3.5;  // scales every user's scores by a positive constant
  const auto a = rank_and_score(latent, ds, Split::test);
  const auto b = rank_and_score(scaled, ds, Split::test);
  EXPECT_EQ(a.recall, b.recall);
  EXPECT_EQ(a.ndcg, b.ndcg);
}

TEST(Ranking, FullCatalogueWithoutMaskRecallsEverything) {
  const auto ds = oracle::random_dataset(20, 25, 0.3, 2, 0.4);
  const auto rep =
      rank_and_score(random_matrix(45, 3, 1), ds, Split::test, {.cutoffs = {25}, .mask_train = false});
  EXPECT_DOUBLE_EQ(rep.recall[0], 1.0);
}

TEST(Ranking, UsersWithoutHeldOutAreSkipped) {
  const auto ds = make_dataset(3, 3, {{0, 0}, {1, 1}, {2, 2}}, {}, {{0, 1}});
  const auto rep = rank_and_score(random_matrix(6, 2, 1), ds, Split::test);
  EXPECT_EQ(rep.num_evaluated_users, 1u);
  EXPECT_EQ(rep.num_skipped_users, 2u);
  EXPECT_THROW(rep.recall_at(50), InputError);
  EXPECT_THROW(rank_and_score(random_matrix(5, 2, 1), ds, Split::test), InputError);
}

TEST(Entropy, HandExamples) {
  const std::vector<Index> same = {2, 2, 2, 2};
  EXPECT_DOUBLE_EQ(label_entropy(same, 4), 0.0);
  const std::vector<Index> spread = {0, 1, 2, 3};
  EXPECT_NEAR(label_entropy(spread, 4), std::log(4.0), 1e-15);
  EXPECT_NEAR(label_entropy(std::vector<Index>{0, 0, 1}, 2), oracle::entropy({2, 1}), 1e-15);
}

TEST(Entropy, BoundedByLogClusters) {
  const auto ds = oracle::random_dataset(60, 80, 0.1, 3);
  for (std::size_t c : {2, 5, 10}) {
    const auto r = behavior_uncertainty(random_matrix(80, 6, 2), ds, c, 1, "random");
    EXPECT_EQ(r.user_entropy.size(), 60);
    EXPECT_GE(r.user_entropy.minCoeff(), 0.0);
    EXPECT_LE(r.user_entropy.maxCoeff(), std::log(static_cast<double>(c)) + 1e-12);
    EXPECT_NEAR(r.mean_entropy, r.user_entropy.mean(), 1e-15);
  }
  EXPECT_THROW(behavior_uncertainty(random_matrix(80, 6, 2), ds, 1, 1, "x"), InputError);
  EXPECT_THROW(behavior_uncertainty(random_matrix(79, 6, 2), ds, 3, 1, "x"), InputError);
}

TEST(Entropy, ClusterAlignedFeaturesGiveLowEntropy) {
  // Users interact only inside one of two item groups; features separate the groups.
  std::vector<Interaction> train;
  for (Index u = 0; u < 10; ++u)
    for (Index k = 0; k < 5; ++k) train.push_back({u, (u % 2) * 5 + k});
  const auto ds = make_dataset(10, 10, train);
  Matrix f = Matrix::Zero(10, 2);
  for (Index i = 0; i < 10; ++i) f(i, i < 5 ? 0 : 1) = 1.0 + 0.01 * i;
  EXPECT_NEAR(behavior_uncertainty(f, ds, 2, 0, "aligned").mean_entropy, 0.0, 1e-12);
}
