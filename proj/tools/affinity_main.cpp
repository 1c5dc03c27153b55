#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "affinity/checkpoint.hpp"
#include "affinity/data.hpp"
#include "affinity/errors.hpp"
#include "affinity/metrics.hpp"
#include "affinity/report.hpp"
#include "affinity/trainer.hpp"
#include "affinity/version.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace affinity;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

// Config file layout: {"model": {...}, "train": {...}}; both sections
// optional, unknown keys rejected by the section parsers' field list.
void load_config_file(const std::string& path, ModelConfig& mc, TrainConfig& tc) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  if (j.contains("model")) mc = ModelConfig::from_json(j["model"].dump());
  if (j.contains("train")) tc = TrainConfig::from_json(j["train"].dump());
}

fs::path resolve_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("AFFINITY_OUT_DIR"); env && *env) return env;
  return ".";
}

std::string command_line(int argc, char** argv) {
  std::string cmd;
  for (int i = 0; i < argc; ++i) {
    if (i) cmd += ' ';
    cmd += argv[i];
  }
  return cmd;
}

void write_eval_files(const fs::path& dir, const std::string& stem, const MetricsReport& metrics,
                      const RocCurve& curve) {
  write_text(dir / (stem + "metrics.json"), metrics.to_json() + "\n");
  write_text(dir / (stem + "roc.csv"), curve.to_csv());
  write_text(dir / (stem + "confusion.csv"), metrics.normalized_confusion_csv());
}

std::vector<double> binder_scores(const std::vector<std::array<double, 2>>& probs) {
  std::vector<double> scores;
  scores.reserve(probs.size());
  for (const auto& p : probs) scores.push_back(p[1]);
  return scores;
}

struct CliOptions {
  // synth
  int synth_n = 2000;
  std::string synth_motif = "WGQG";
  int synth_seq_len = 120;
  double synth_noise = 0.0;
  uint64_t synth_seed = 7;
  std::string synth_out;

  // shared train/cv/eval/predict
  std::string data_path;
  std::string config_path;
  std::string out_dir;
  std::string checkpoint_path;
  std::string eval_data_path;
  std::string predict_out;
  bool parallel = false;
  int max_len = 256;
};

int run_synth(const CliOptions& opt) {
  Rng rng(opt.synth_seed);
  Dataset ds = synth_generate(opt.synth_n, opt.synth_motif, opt.synth_seq_len, opt.synth_noise, rng);
  save_jsonl(ds, opt.synth_out);
  std::cout << "wrote " << ds.size() << " samples to " << opt.synth_out << "\n";
  return 0;
}

int run_cv(const CliOptions& opt, const ModelConfig& mc, const TrainConfig& tc,
           const std::string& command) {
  const fs::path dir = resolve_out_dir(opt.out_dir);
  fs::create_directories(dir);

  Dataset ds = load_jsonl(opt.data_path);

  RunManifest manifest;
  manifest.tool_version = kVersion;
  manifest.command = command;
  manifest.dataset_provenance = ds.provenance;
  manifest.model = mc;
  manifest.train = tc;
  manifest.seed = tc.seed;
  manifest.started_at = now_iso8601();
  write_text(dir / "run_manifest.json", manifest.to_json() + "\n");

  CvResult cv = cross_validate(ds, mc, tc, opt.parallel);

  write_text(dir / "folds.json", fold_assignment_to_json(cv.assignment) + "\n");
  std::vector<FoldReport> reports;
  for (auto& fold : cv.folds) {
    reports.push_back(fold.report);
    const std::string stem = "fold_" + std::to_string(fold.report.fold) + "_";
    Checkpoint& cp = fold.checkpoint;
    save_checkpoint(cp, (dir / ("fold_" + std::to_string(fold.report.fold) + ".ckpt")).string());
    const RocCurve curve =
        roc_curve(binder_scores(fold.test_probabilities),
                  subset(ds, cv.assignment.fold_indices(fold.report.fold), "").labels());
    write_eval_files(dir, stem, fold.metrics, curve);
  }

  const std::string table = fold_reports_to_table(reports, cv.average);
  write_text(dir / "report.txt", table);
  write_text(dir / "report.json", fold_reports_to_json(reports, cv.average) + "\n");

  manifest.finished_at = now_iso8601();
  write_text(dir / "run_manifest.json", manifest.to_json() + "\n");

  std::cout << table;
  return 0;
}

int run_train(const CliOptions& opt, const ModelConfig& mc, const TrainConfig& tc,
              const std::string& command) {
  const fs::path dir = resolve_out_dir(opt.out_dir);
  fs::create_directories(dir);

  Dataset ds = load_jsonl(opt.data_path);

  RunManifest manifest;
  manifest.tool_version = kVersion;
  manifest.command = command;
  manifest.dataset_provenance = ds.provenance;
  manifest.model = mc;
  manifest.train = tc;
  manifest.seed = tc.seed;
  manifest.started_at = now_iso8601();
  write_text(dir / "run_manifest.json", manifest.to_json() + "\n");

  // no held-out split here: fit on everything, then optionally score a
  // separate evaluation file
  Dataset eval_ds = opt.eval_data_path.empty() ? ds : load_jsonl(opt.eval_data_path);
  TrainResult result = train_fold(ds, eval_ds, mc, tc);
  result.checkpoint.fold = -1;
  save_checkpoint(result.checkpoint, (dir / "model.ckpt").string());

  if (!opt.eval_data_path.empty()) {
    const RocCurve curve = roc_curve(binder_scores(result.test_probabilities), eval_ds.labels());
    write_eval_files(dir, "", result.metrics, curve);
  }

  manifest.finished_at = now_iso8601();
  write_text(dir / "run_manifest.json", manifest.to_json() + "\n");

  std::cout << "trained " << tc.epochs << " epochs; final mean loss "
            << result.epoch_mean_losses.back() << "; checkpoint at " << (dir / "model.ckpt").string()
            << "\n";
  return 0;
}

int run_eval(const CliOptions& opt) {
  const fs::path dir = resolve_out_dir(opt.out_dir);
  fs::create_directories(dir);

  Checkpoint cp = load_checkpoint(opt.checkpoint_path);
  Dataset ds = load_jsonl(opt.data_path);
  auto probs = predict_dataset(cp.params, cp.model, ds, cp.train.batch_size);
  MetricsReport metrics = evaluate(probs, ds.labels());
  const RocCurve curve = roc_curve(binder_scores(probs), ds.labels());
  write_eval_files(dir, "", metrics, curve);
  std::cout << metrics.to_json() << "\n";
  return 0;
}

int run_predict(const CliOptions& opt) {
  Checkpoint cp = load_checkpoint(opt.checkpoint_path);
  Dataset ds = load_jsonl(opt.data_path);
  auto probs = predict_dataset(cp.params, cp.model, ds, cp.train.batch_size);

  std::ofstream out(opt.predict_out);
  if (!out) throw Error("cannot write " + opt.predict_out);
  for (const auto& p : probs) {
    json rec;
    rec["binder_probability"] = p[1];
    rec["predicted_label"] = p[1] > 0.5 ? 1 : 0;
    out << rec.dump() << "\n";
  }
  if (!out) throw Error("write failed for " + opt.predict_out);
  std::cout << "wrote " << probs.size() << " predictions to " << opt.predict_out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"antibody binding-affinity classifier"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CliOptions opt;

  // model/train flag values; only applied over the config file when the
  // user actually passed them
  double lr = 1e-4;
  int epochs = 10, batch = 32, folds = 5;
  uint64_t seed = 42;

  auto* synth = app.add_subcommand("synth", "generate a synthetic motif dataset (JSONL)");
  synth->add_option("--n", opt.synth_n, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--motif", opt.synth_motif, "residue motif planted in binders");
  synth->add_option("--seq-len", opt.synth_seq_len, "residue sequence length")
      ->check(CLI::PositiveNumber);
  synth->add_option("--noise", opt.synth_noise, "label flip probability, < 0.5")
      ->check(CLI::Range(0.0, 0.5).description("[0, 0.5)"));
  synth->add_option("--seed", opt.synth_seed, "generator seed");
  synth->add_option("--out", opt.synth_out, "output JSONL path")->required();

  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", opt.config_path, "JSON config file with model/train sections");
    cmd->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", lr, "learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "seed for splits, init, shuffling, dropout");
    cmd->add_option("--out-dir", opt.out_dir, "output directory (default $AFFINITY_OUT_DIR or .)");
  };

  auto* cv = app.add_subcommand("cv", "stratified k-fold cross-validation");
  cv->add_option("--data", opt.data_path, "JSONL dataset")->required()->check(CLI::ExistingFile);
  cv->add_option("--folds", folds, "fold count")->check(CLI::Range(2, 1000));
  cv->add_flag("--parallel", opt.parallel, "train folds concurrently (same results)");
  add_train_flags(cv);

  auto* train = app.add_subcommand("train", "train one model on a full dataset");
  train->add_option("--data", opt.data_path, "JSONL dataset")->required()->check(CLI::ExistingFile);
  train->add_option("--eval-data", opt.eval_data_path, "held-out JSONL to score after training")
      ->check(CLI::ExistingFile);
  add_train_flags(train);

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", opt.data_path, "JSONL dataset")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out-dir", opt.out_dir, "output directory");

  auto* predict = app.add_subcommand("predict", "per-sample binder probabilities");
  predict->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  predict->add_option("--data", opt.data_path, "JSONL dataset")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", opt.predict_out, "output JSONL path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      if (opt.synth_noise >= 0.5) {
        std::cerr << "--noise must be < 0.5\n";
        return 2;
      }
      return run_synth(opt);
    }

    ModelConfig mc;
    TrainConfig tc;
    if (!opt.config_path.empty()) load_config_file(opt.config_path, mc, tc);
    auto apply = [&](CLI::App* cmd) {
      if (cmd->count("--epochs")) tc.epochs = epochs;
      if (cmd->count("--lr")) tc.learning_rate = lr;
      if (cmd->count("--batch")) tc.batch_size = batch;
      if (cmd->count("--seed")) tc.seed = seed;
    };

    if (cv->parsed()) {
      apply(cv);
      if (cv->count("--folds")) tc.k_folds = folds;
      mc.validate();
      tc.validate();
      return run_cv(opt, mc, tc, command_line(argc, argv));
    }
    if (train->parsed()) {
      apply(train);
      mc.validate();
      tc.validate();
      return run_train(opt, mc, tc, command_line(argc, argv));
    }
    if (eval_cmd->parsed()) return run_eval(opt);
    if (predict->parsed()) return run_predict(opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
