// Command-line front end: prepare, train, evaluate, analyze-uncertainty.
// Exit codes: 0 success, 1 runtime failure, 2 invalid input.

#include "stair/checkpoint.hpp"
#include "stair/config.hpp"
#include "stair/eval.hpp"
#include "stair/pipeline.hpp"
#include "stair/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace stair;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> ablate;
  std::string baseline;
  std::string out;
  std::string checkpoint;
  std::string split = "test";
  bool no_mask = false;
  std::string format = "json";
  std::string sources = "textual,visual,random,pretrained";
  std::vector<std::size_t> clusters = {10, 20};
};

RunConfig load(const Options& o) {
  RunConfig c = load_run_config(o.config);
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) c.train.seed = *o.seed;
  return c;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s.precision(8);
  s << v;
  return s.str();
}

int cmd_prepare(const Options& o) {
  const RunConfig c = load(o);
  const auto outcome = prepare(c, c.out_dir);
  if (outcome.cache_hit) std::cout << "cache hit: " << c.out_dir << " is up to date\n";
  std::cout << outcome.stats << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  RunConfig c = load(o);
  if (!o.baseline.empty() && !o.ablate.empty()) throw InputError("--baseline and --ablate are mutually exclusive");
  for (const auto& a : o.ablate) apply_ablation(c.train, a);
  if (!o.baseline.empty()) apply_baseline(c.train, o.baseline);

  auto data = load_prepared(c.out_dir);
  if (data.manifest.value("cache_key", "") != io::hex64(prepare_cache_key(c)))
    throw InputError("prepared data in '" + c.out_dir + "' is stale for this config (rerun prepare)");
  const auto& ds = data.dataset;
  if (c.train.modality_init && data.features.empty())
    throw InputError("modality initialization needs prepared features");

  const fs::path run_dir =
      fs::path(c.out_dir) / ("run-" + variant_name(o.baseline, o.ablate) + "-seed" + std::to_string(c.train.seed));
  fs::create_directories(run_dir);
  std::ofstream metrics(run_dir / "metrics.csv");
  if (!metrics) throw InputError("cannot write into '" + run_dir.string() + "'");
  metrics << "epoch,loss,recall@10,recall@20,ndcg@10,ndcg@20,mean_abs_pearson\n";

  std::optional<CsrMatrix> similarity;
  if (c.train.bsc) similarity = data.similarity;
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(c.train, ds, data.features, std::move(similarity));
  const auto result = trainer.train([&](const EpochLog& e) {
    metrics << e.epoch << ',' << csv_number(e.loss);
    for (std::size_t n : {10, 20}) metrics << ',' << (e.valid ? csv_number(e.valid->recall_at(n)) : "");
    for (std::size_t n : {10, 20}) metrics << ',' << (e.valid ? csv_number(e.valid->ndcg_at(n)) : "");
    metrics << ',' << csv_number(e.correlation) << '\n';
    metrics.flush();
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  Checkpoint ckpt{c.train, ds.content_hash(), result.best_epoch, result.best, result.best_optimizer};
  save_checkpoint((run_dir / "checkpoint.stck").string(), ckpt);

  const Matrix latent = latent_from_embeddings(c.train, ds, result.best);
  const auto test = rank_and_score(latent, ds, Split::test, {.cutoffs = c.train.eval_cutoffs});
  nlohmann::ordered_json summary;
  summary["variant"] = variant_name(o.baseline, o.ablate);
  summary["seed"] = c.train.seed;
  summary["best_epoch"] = result.best_epoch;
  summary["valid"] = to_json(result.best_valid);
  summary["test"] = to_json(test);
  summary["dataset_hash"] = io::hex64(ds.content_hash());
  summary["config"] = training_json(c.train);
  std::ofstream(run_dir / "summary.json") << summary.dump(2) << '\n';

  std::cout << "best validation epoch " << result.best_epoch << " of " << c.train.epochs << " ("
            << std::fixed << std::setprecision(1) << seconds << " s)\n";
  std::cout << "valid " << to_text(result.best_valid);
  std::cout << "test  " << to_text(test);
  std::cout << "run directory: " << run_dir.string() << '\n';
  return 0;
}

int cmd_evaluate(const Options& o) {
  if (o.checkpoint.empty()) throw InputError("evaluate needs --checkpoint");
  const RunConfig c = load(o);
  const auto data = load_prepared(c.out_dir);
  const auto ckpt = load_checkpoint(o.checkpoint);
  const auto& ds = data.dataset;
  if (ckpt.dataset_hash != ds.content_hash())
    throw InputError("checkpoint '" + o.checkpoint + "' was trained on dataset " + io::hex64(ckpt.dataset_hash) +
                     " but '" + c.out_dir + "' holds dataset " + io::hex64(ds.content_hash()) +
                     "; rerun prepare with the original config or retrain");
  if (ckpt.embeddings.users.rows() != static_cast<Eigen::Index>(ds.num_users) ||
      ckpt.embeddings.items.rows() != static_cast<Eigen::Index>(ds.num_items))
    throw InputError("checkpoint shape does not match the prepared dataset");
  const Split split = parse_split(o.split);
  if (split == Split::train && !o.no_mask) warn("evaluating the train split with train masking gives zero hits");
  const Matrix latent = latent_from_embeddings(ckpt.config, ds, ckpt.embeddings);
  const auto report = rank_and_score(latent, ds, split, {.cutoffs = ckpt.config.eval_cutoffs, .mask_train = !o.no_mask});
  if (o.format == "json") {
    nlohmann::ordered_json j = to_json(report);
    j["split"] = std::string(to_string(split));
    j["masked"] = !o.no_mask;
    j["epoch"] = ckpt.epoch;
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << to_text(report);
  }
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_analyze(const Options& o) {
  const RunConfig c = load(o);
  const auto sources = split_list(o.sources);
  if (sources.empty()) {
    warn("no uncertainty sources requested; nothing to do");
    return 0;
  }
  for (std::size_t clusters : o.clusters)
    if (clusters < 2) throw InputError("--clusters values must be >= 2");
  const auto data = load_prepared(c.out_dir);
  const auto& ds = data.dataset;
  const fs::path dir = fs::path(c.out_dir) / "uncertainty";
  fs::create_directories(dir);

  std::vector<UncertaintyReport> reports;
  nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
  for (const auto& source : sources) {
    std::optional<Matrix> rows;
    if (source == "random") {
      rows = gaussian_noise_features(ds.num_items, c.train.dim, c.train.seed);
    } else if (source == "pretrained") {
      if (o.checkpoint.empty()) {
        warn("source 'pretrained' skipped: pass --checkpoint with an mf-bpr run");
      } else {
        const auto ckpt = load_checkpoint(o.checkpoint);
        if (ckpt.dataset_hash != ds.content_hash())
          throw InputError("checkpoint '" + o.checkpoint + "' belongs to a different dataset");
        if (ckpt.config.layers != 0 || ckpt.config.modality_init)
          warn("pretrained source: checkpoint is not an mf-bpr configuration");
        rows = ckpt.embeddings.items;
      }
    } else {
      auto it = std::find_if(data.features.begin(), data.features.end(),
                             [&](const ModalityFeatures& f) { return f.modality == source; });
      if (it == data.features.end())
        warn("source '" + source + "' skipped: no such modality was prepared");
      else
        rows = it->matrix.cast<double>();
    }
    if (!rows) {
      skipped.push_back(source);
      continue;
    }
    for (std::size_t clusters : o.clusters) {
      auto r = behavior_uncertainty(*rows, ds, clusters, c.train.seed, source);
      write_user_entropy_csv((dir / ("entropy_" + source + "_C" + std::to_string(clusters) + ".csv")).string(), r);
      reports.push_back(std::move(r));
    }
  }
  write_uncertainty_summary_csv((dir / "summary.csv").string(), reports);
  nlohmann::ordered_json out;
  out["entropy_unit"] = "nats";
  out["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) out["reports"].push_back(to_json(r));
  out["skipped"] = skipped;
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stair: multimodal recommendation training and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory (overrides out_dir)");
    sub->add_option("--seed", o.seed, "training seed (overrides seed)");
  };

  auto* prep = app.add_subcommand("prepare", "filter, split and cache the dataset, features and kNN graph");
  add_common(prep);

  auto* train = app.add_subcommand("train", "train one configuration and write its run directory");
  add_common(train);
  train->add_option("--ablate", o.ablate, "remove a component")->check(CLI::IsMember({"mi", "fsc", "bsc"}));
  train->add_option("--baseline", o.baseline, "train a baseline instead")
      ->check(CLI::IsMember({"mf-bpr", "lightgcn"}));

  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on one split");
  add_common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("--split", o.split, "valid, test or train")->check(CLI::IsMember({"train", "valid", "test"}));
  eval->add_flag("--no-mask", o.no_mask, "do not mask train items");
  eval->add_option("--format", o.format, "json or text")->check(CLI::IsMember({"json", "text"}));

  auto* analyze = app.add_subcommand("analyze-uncertainty", "entropy of user behaviour over feature clusters");
  add_common(analyze);
  analyze->add_option("--sources", o.sources, "comma-separated: textual, visual, random, pretrained");
  analyze->add_option("--clusters", o.clusters, "cluster counts")->delimiter(',');
  analyze->add_option("--checkpoint", o.checkpoint, "mf-bpr checkpoint for the pretrained source");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*prep) return cmd_prepare(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_evaluate(o);
    if (*analyze) return cmd_analyze(o);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
