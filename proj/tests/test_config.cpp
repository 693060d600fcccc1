#include "stair/checkpoint.hpp"
#include "stair/config.hpp"
#include "stair/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace stair;
using nlohmann::json;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, PresetsFillHyperparameters) {
  const auto c = parse_run_config(json{{"preset", "electronics"}, {"interactions", "x.tsv"}, {"bsc", false},
                                       {"modality_init", false}});
  EXPECT_EQ(c.train.batch_size, 4096u);
  EXPECT_DOUBLE_EQ(c.train.gamma, 0.4);
  EXPECT_DOUBLE_EQ(c.train.weight_decay, 0.1);
  // Explicit keys override the preset.
  const auto d = parse_run_config(json{{"preset", "baby"}, {"gamma", 2.0}, {"interactions", "x.tsv"},
                                       {"modalities", {{{"name", "visual"}, {"features", "v.fmat"}}}}});
  EXPECT_DOUBLE_EQ(d.train.gamma, 2.0);
  EXPECT_DOUBLE_EQ(d.train.weight_decay, 0.3);
  EXPECT_EQ(d.train.knn.at("visual"), 1u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_NE(error_of([] { parse_run_config(json{{"interactions", "x"}, {"learning_rate", 1}}); }).find("learning_rate"),
            std::string::npos);
  EXPECT_THROW(parse_run_config(json{{"interactions", "x"}, {"preset", "books"}}), InputError);
  EXPECT_THROW(parse_run_config(json{{"interactions", "x"}, {"gamma", -1}, {"bsc", false}, {"modality_init", false}}),
               InputError);
  EXPECT_THROW(parse_run_config(json{{"interactions", "x"}, {"d", "wide"}}), InputError);
  EXPECT_THROW(parse_run_config(json{{"interactions", "x"}}), InputError);  // modality init without modalities
  EXPECT_THROW(parse_run_config(json{{"bsc", false}, {"modality_init", false}}), InputError);
  EXPECT_THROW(parse_run_config(json::array()), InputError);
}

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  TempDir dir;
  write_toy_corpus(dir.path());
  const auto c = load_run_config(dir.file("config.json"));
  EXPECT_EQ(c.interactions, dir.file("inter.tsv"));
  EXPECT_EQ(c.modalities[1].features, dir.file("visual.fmat"));
  EXPECT_EQ(c.out_dir, dir.file("out"));
  EXPECT_THROW(load_run_config(dir.file("missing.json")), InputError);
  std::ofstream(dir.file("broken.json")) << "{ \"d\": ";
  EXPECT_THROW(load_run_config(dir.file("broken.json")), InputError);
}

TEST(Config, TrainingJsonRoundTrips) {
  TrainConfig t;
  t.gamma = 0.25;
  t.knn = {{"textual", 4}};
  t.whitening = WhiteningStrategy::whiten_then_concat;
  const auto back = training_from_json(json::parse(training_json(t).dump()));
  EXPECT_EQ(config_hash(back), config_hash(t));
  auto other = t;
  other.lr *= 2;
  EXPECT_NE(config_hash(other), config_hash(t));
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir;
  Checkpoint c;
  c.config.dim = 3;
  c.dataset_hash = 0xfeedbeefULL;
  c.epoch = 17;
  c.embeddings.users = Matrix::Random(4, 3);
  c.embeddings.items = Matrix::Random(5, 3);
  c.optimizer = OptimizerState::zeros(4, 5, 3, c.config.adamw());
  c.optimizer.step = 99;
  c.optimizer.items.second.setConstant(0.125);
  save_checkpoint(dir.file("c.stck"), c);
  const auto back = load_checkpoint(dir.file("c.stck"));
  EXPECT_EQ(back.dataset_hash, c.dataset_hash);
  EXPECT_EQ(back.epoch, 17u);
  EXPECT_EQ(back.optimizer.step, 99u);
  EXPECT_EQ(back.embeddings.users, c.embeddings.users);
  EXPECT_EQ(back.embeddings.items, c.embeddings.items);
  EXPECT_EQ(back.optimizer.items.second, c.optimizer.items.second);
  EXPECT_EQ(config_hash(back.config), config_hash(c.config));
}

TEST(Checkpoint, CorruptionIsDetected) {
  TempDir dir;
  Checkpoint c;
  c.config.dim = 2;
  c.embeddings = {Matrix::Ones(2, 2), Matrix::Ones(3, 2)};
  c.optimizer = OptimizerState::zeros(2, 3, 2, c.config.adamw());
  save_checkpoint(dir.file("c.stck"), c);
  std::ifstream in(dir.file("c.stck"), std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});

  std::ofstream(dir.file("short.stck"), std::ios::binary) << bytes.substr(0, bytes.size() - 8);
  EXPECT_THROW(load_checkpoint(dir.file("short.stck")), InputError);

  // Flip a digit inside the embedded config JSON so the stored hash no longer matches.
  auto tampered = bytes;
  const auto pos = tampered.find("\"L\":3");
  ASSERT_NE(pos, std::string::npos);
  tampered[pos + 4] = '4';
  std::ofstream(dir.file("tampered.stck"), std::ios::binary) << tampered;
  EXPECT_NE(error_of([&] { load_checkpoint(dir.file("tampered.stck")); }).find("hash"), std::string::npos);

  EXPECT_THROW(load_checkpoint(dir.file("none.stck")), InputError);
}

TEST(Pipeline, ThousandsSeparatorAndStatsLine) {
  EXPECT_EQ(with_thousands(0), "0");
  EXPECT_EQ(with_thousands(90), "90");
  EXPECT_EQ(with_thousands(1000), "1,000");
  EXPECT_EQ(with_thousands(19445), "19,445");
  EXPECT_EQ(with_thousands(1234567), "1,234,567");
  EXPECT_EQ(stats_line(19445, 7050, 160792), "19,445 users, 7,050 items, 160,792 interactions, 99.88% sparsity");
}

TEST(Pipeline, PrepareWritesArtifactsAndHitsCache) {
  TempDir dir;
  write_toy_corpus(dir.path());
  const auto c = load_run_config(dir.file("config.json"));
  const auto first = prepare(c, c.out_dir);
  EXPECT_FALSE(first.cache_hit);
  EXPECT_EQ(first.data.dataset.num_items, 20u);
  EXPECT_EQ(first.data.dataset.num_users, 30u);
  EXPECT_NE(first.stats.find("30 users, 20 items, 210 interactions"), std::string::npos) << first.stats;
  for (const char* f : {"manifest.json", "train.tsv", "valid.tsv", "test.tsv", "users.tsv", "items.tsv",
                        "features_textual.fmat", "features_visual.fmat", "similarity.spgr"})
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(c.out_dir) / f)) << f;

  const auto second = prepare(c, c.out_dir);
  EXPECT_TRUE(second.cache_hit);
  EXPECT_EQ(second.data.dataset.content_hash(), first.data.dataset.content_hash());
  EXPECT_EQ(second.data.similarity->values(), first.data.similarity->values());
  EXPECT_EQ(second.data.features[1].matrix, first.data.features[1].matrix);

  // A different split seed invalidates the cache.
  auto changed = c;
  changed.split_seed = 1;
  EXPECT_FALSE(prepare(changed, c.out_dir).cache_hit);
}

TEST(Pipeline, RawFeatureRowsAreRealigned) {
  TempDir dir;
  write_toy_corpus(dir.path());
  const auto c = load_run_config(dir.file("config.json"));
  const auto out = prepare(c, c.out_dir);
  const auto& ds = out.data.dataset;
  for (const auto& f : out.data.features)
    for (std::size_t i = 0; i < ds.num_items; ++i)
      EXPECT_EQ(f.matrix(static_cast<Eigen::Index>(i), 0), std::stof(ds.item_ids[i].substr(1))) << f.modality;
}

TEST(Pipeline, MissingOrMisalignedInputsAreInputErrors) {
  TempDir dir;
  write_toy_corpus(dir.path());
  auto c = load_run_config(dir.file("config.json"));
  auto missing = c;
  missing.modalities[0].features = dir.file("nope.fmat");
  EXPECT_NE(error_of([&] { prepare(missing, c.out_dir); }).find("nope.fmat"), std::string::npos);

  io::write_fmat(dir.file("bad.fmat"), MatrixF(MatrixF::Ones(7, 3)));
  auto bad = c;
  bad.modalities[0].features = dir.file("bad.fmat");
  const auto msg = error_of([&] { prepare(bad, c.out_dir); });
  EXPECT_NE(msg.find("7 rows"), std::string::npos) << msg;
  EXPECT_NE(msg.find("20 items"), std::string::npos) << msg;
}

TEST(Pipeline, VariantNames) {
  EXPECT_EQ(variant_name("", {}), "stair");
  EXPECT_EQ(variant_name("", {"fsc", "bsc"}), "stair-wo-fsc-wo-bsc");
  EXPECT_EQ(variant_name("lightgcn", {}), "lightgcn");
}
