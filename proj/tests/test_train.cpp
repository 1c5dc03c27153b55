#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "affinity/checkpoint.hpp"
#include "affinity/data.hpp"
#include "affinity/errors.hpp"
#include "affinity/trainer.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace affinity;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path(temp_path(name)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

ModelConfig smoke_config() {
  ModelConfig c;
  c.num_layers = 1;
  c.num_query_heads = 2;
  c.num_key_value_heads = 2;
  c.hidden_dim = 16;
  c.intermediate_dim = 8;
  c.max_seq_len = 64;
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Re-serializes a checkpoint file with its manifest JSON mutated.
void rewrite_manifest(const std::string& path, void (*mutate)(nlohmann::json&)) {
  std::string bytes = read_file(path);
  uint64_t manifest_size = 0;
  std::memcpy(&manifest_size, bytes.data(), sizeof(manifest_size));
  nlohmann::json manifest =
      nlohmann::json::parse(bytes.substr(sizeof(manifest_size), manifest_size));
  mutate(manifest);
  const std::string new_text = manifest.dump();
  const uint64_t new_size = new_text.size();
  std::string out(reinterpret_cast<const char*>(&new_size), sizeof(new_size));
  out += new_text;
  out += bytes.substr(sizeof(manifest_size) + manifest_size);
  write_file(path, out);
}

}  // namespace

TEST_CASE("cross entropy hand values") {
  auto even = TensorD::from_vector({1, 2}, {0, 0});
  CHECK(sparse_categorical_cross_entropy(even, {0}).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(sparse_categorical_cross_entropy(even, {1}).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));

  auto confident = TensorD::from_vector({1, 2}, {20, -20});
  CHECK(sparse_categorical_cross_entropy(confident, {0}).item() < 1e-8);

  CHECK_THROWS_AS(sparse_categorical_cross_entropy(even, {2}), LabelError);
}

TEST_CASE("cross entropy equals the binary form for two classes") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int b = 1 + static_cast<int>(rng.bounded(8));
    TensorD logits = TensorD::zeros({b, 2});
    std::vector<int> labels(static_cast<size_t>(b));
    for (auto& v : logits.values()) v = rng.uniform() * 12 - 6;
    for (auto& l : labels) l = rng.bernoulli(0.5) ? 1 : 0;

    const double lse_form = sparse_categorical_cross_entropy(logits, labels).item();

    double binary = 0;  // -[y log p + (1 - y) log(1 - p)], p = binder probability
    for (int i = 0; i < b; ++i) {
      const double z0 = logits.values()[static_cast<size_t>(i) * 2];
      const double z1 = logits.values()[static_cast<size_t>(i) * 2 + 1];
      const double mx = std::max(z0, z1);
      const double p = std::exp(z1 - mx) / (std::exp(z0 - mx) + std::exp(z1 - mx));
      const double y = labels[static_cast<size_t>(i)];
      binary += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    binary /= b;
    CHECK(std::abs(lse_form - binary) < 1e-9);
  }
}

TEST_CASE("cross entropy is non-negative") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    TensorD logits = TensorD::zeros({4, 3});
    for (auto& v : logits.values()) v = rng.uniform() * 30 - 15;
    std::vector<int> labels{0, 1, 2, 1};
    CHECK(sparse_categorical_cross_entropy(logits, labels).item() >= 0.0);
  }
}

TEST_CASE("adam first step and zero gradient") {
  TrainConfig tc;
  tc.learning_rate = 1e-4;

  TensorD p = TensorD::from_vector({1}, {0.5});
  p.set_requires_grad();
  auto state = AdamState<double>::init({&p});

  p.grad_mut()[0] = 1.0;
  adam_step<double>({&p}, state, tc);
  CHECK(std::abs((p.values()[0] - 0.5) - (-1e-4 / (1.0 + tc.adam_eps))) < 1e-9);

  // zero gradient with zero moments leaves the parameter unchanged
  TensorD q = TensorD::from_vector({1}, {0.25});
  q.set_requires_grad();
  auto qs = AdamState<double>::init({&q});
  q.grad_mut()[0] = 0.0;
  adam_step<double>({&q}, qs, tc);
  CHECK(q.values()[0] == 0.25);
}

TEST_CASE("adam update opposes the gradient sign on a fresh state") {
  TrainConfig tc;
  for (double g : {2.5, -0.3, 1e-3, -7.0}) {
    TensorD p = TensorD::from_vector({1}, {1.0});
    p.set_requires_grad();
    auto state = AdamState<double>::init({&p});
    p.grad_mut()[0] = g;
    adam_step<double>({&p}, state, tc);
    CHECK(((p.values()[0] - 1.0) < 0) == (g > 0));
  }
}

TEST_CASE("adam matches an independent scalar recurrence for 100 steps") {
  TrainConfig tc;
  tc.learning_rate = 0.05;

  TensorD p = TensorD::from_vector({1}, {3.0});
  p.set_requires_grad();
  auto state = AdamState<double>::init({&p});

  // independently coded update equations on the quadratic f(w) = w^2
  double w = 3.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const double g = 2.0 * w;
    m = tc.adam_beta1 * m + (1 - tc.adam_beta1) * g;
    v = tc.adam_beta2 * v + (1 - tc.adam_beta2) * g * g;
    const double mhat = m / (1 - std::pow(tc.adam_beta1, t));
    const double vhat = v / (1 - std::pow(tc.adam_beta2, t));
    w -= tc.learning_rate * mhat / (std::sqrt(vhat) + tc.adam_eps);

    p.zero_grad();
    p.grad_mut()[0] = 2.0 * p.values()[0];
    adam_step<double>({&p}, state, tc);
    CHECK(std::abs(p.values()[0] - w) < 1e-9);
  }
}

TEST_CASE("checkpoint round trip is bitwise") {
  ModelConfig mc = smoke_config();
  TrainConfig tc;
  Rng rng(11);
  Checkpoint cp;
  cp.model = mc;
  cp.train = tc;
  cp.params = init_params<float>(mc, rng);
  cp.fold = 2;
  cp.epoch = 10;
  cp.seed = 1234;

  TempFile f("abaff_ckpt.bin");
  save_checkpoint(cp, f.path);
  Checkpoint back = load_checkpoint(f.path);

  CHECK(back.fold == 2);
  CHECK(back.epoch == 10);
  CHECK(back.seed == 1234);
  CHECK(back.model.hidden_dim == mc.hidden_dim);

  auto an = cp.params.named();
  auto bn = back.params.named();
  REQUIRE(an.size() == bn.size());
  for (size_t i = 0; i < an.size(); ++i) {
    REQUIRE(an[i].second->numel() == bn[i].second->numel());
    const auto& av = an[i].second->values();
    const auto& bv = bn[i].second->values();
    CHECK(std::memcmp(av.data(), bv.data(), av.size() * sizeof(float)) == 0);
  }

  // identical save twice -> identical bytes
  TempFile g("abaff_ckpt2.bin");
  save_checkpoint(cp, g.path);
  CHECK(read_file(f.path) == read_file(g.path));
}

TEST_CASE("checkpoint rejects truncation, manifest edits, and version bumps") {
  ModelConfig mc = smoke_config();
  Rng rng(13);
  Checkpoint cp;
  cp.model = mc;
  cp.params = init_params<float>(mc, rng);

  TempFile f("abaff_ckpt_bad.bin");
  save_checkpoint(cp, f.path);

  // 1 byte missing at the end
  {
    const std::string bytes = read_file(f.path);
    TempFile t("abaff_truncated.bin");
    write_file(t.path, bytes.substr(0, bytes.size() - 1));
    CHECK_THROWS_AS(load_checkpoint(t.path), CheckpointTruncatedError);
  }
  // manifest shape disagrees with the buffer
  {
    TempFile t("abaff_badshape.bin");
    write_file(t.path, read_file(f.path));
    rewrite_manifest(t.path, [](nlohmann::json& m) { m["tensors"][0]["shape"] = {1, 1}; });
    CHECK_THROWS_AS(load_checkpoint(t.path), CheckpointManifestError);
  }
  // unknown format version
  {
    TempFile t("abaff_badversion.bin");
    write_file(t.path, read_file(f.path));
    rewrite_manifest(t.path, [](nlohmann::json& m) { m["format_version"] = 999; });
    CHECK_THROWS_AS(load_checkpoint(t.path), CheckpointVersionError);
  }
}

TEST_CASE("train_fold is deterministic and learns on a smoke-scale task") {
  Rng gen(21);
  Dataset ds = synth_generate(80, "WGQ", 20, 0.0, gen);
  Dataset train = subset(ds, [&] {
        std::vector<size_t> idx;
        for (size_t i = 0; i < 60; ++i) idx.push_back(i);
        return idx;
      }(), "train");
  Dataset test = subset(ds, [&] {
        std::vector<size_t> idx;
        for (size_t i = 60; i < 80; ++i) idx.push_back(i);
        return idx;
      }(), "test");

  ModelConfig mc = smoke_config();
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 10;
  tc.learning_rate = 3e-3;
  tc.seed = 77;

  TrainResult a = train_fold(train, test, mc, tc);
  TrainResult b = train_fold(train, test, mc, tc);

  CHECK(a.report.accuracy == b.report.accuracy);
  CHECK(a.report.roc_auc == b.report.roc_auc);
  CHECK(a.report.training_minutes > 0);
  REQUIRE(a.epoch_mean_losses.size() == 3);
  CHECK(a.epoch_mean_losses.back() < a.epoch_mean_losses.front());

  // bitwise identical learned parameters
  auto an = a.checkpoint.params.named();
  auto bn = b.checkpoint.params.named();
  for (size_t i = 0; i < an.size(); ++i) CHECK(an[i].second->values() == bn[i].second->values());

  // checkpoint evaluation path reproduces the fold metrics exactly
  auto probs = predict_dataset(a.checkpoint.params, mc, test, tc.batch_size);
  MetricsReport again = evaluate(probs, test.labels());
  CHECK(again.accuracy == a.report.accuracy);
  CHECK(again.roc_auc == a.report.roc_auc);
}

TEST_CASE("train_fold validates its inputs") {
  Rng gen(23);
  Dataset ds = synth_generate(20, "WG", 12, 0.0, gen);
  Dataset empty;
  ModelConfig mc = smoke_config();
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train_fold(empty, ds, mc, tc), DegenerateInputError);

  // single-class test set
  std::vector<size_t> pos_only;
  for (size_t i = 0; i < ds.size(); ++i)
    if (ds.samples[i].label == 1) pos_only.push_back(i);
  Dataset single = subset(ds, pos_only, "single class");
  CHECK_THROWS_AS(train_fold(ds, single, mc, tc), DegenerateInputError);
}

TEST_CASE("training error names epoch and batch on divergence") {
  Rng gen(29);
  Dataset ds = synth_generate(40, "WG", 12, 0.0, gen);
  ModelConfig mc = smoke_config();
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.learning_rate = 1e32;  // guaranteed blow-up

  try {
    train_fold(ds, ds, mc, tc);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("cross_validate covers the dataset and averages correctly") {
  Rng gen(31);
  Dataset ds = synth_generate(40, "WGQ", 14, 0.0, gen);
  ModelConfig mc = smoke_config();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  tc.k_folds = 2;
  tc.seed = 9;

  CvResult cv = cross_validate(ds, mc, tc, false);
  REQUIRE(cv.folds.size() == 2);
  CHECK(cv.folds[0].report.fold == 0);
  CHECK(cv.folds[1].report.fold == 1);

  size_t covered = 0;
  for (int f = 0; f < 2; ++f) covered += cv.assignment.fold_indices(f).size();
  CHECK(covered == ds.size());

  const double acc_mean = (cv.folds[0].report.accuracy + cv.folds[1].report.accuracy) / 2.0;
  CHECK(std::abs(cv.average.accuracy - acc_mean) < 1e-12);
  const double minutes_sum =
      cv.folds[0].report.training_minutes + cv.folds[1].report.training_minutes;
  CHECK(std::abs(cv.average.training_minutes - minutes_sum) < 1e-12);
}

TEST_CASE("serial and parallel cross validation agree bitwise") {
  Rng gen(37);
  Dataset ds = synth_generate(36, "WGQ", 14, 0.0, gen);
  ModelConfig mc = smoke_config();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 6;
  tc.k_folds = 3;
  tc.seed = 5;

  CvResult serial = cross_validate(ds, mc, tc, false);
  CvResult parallel = cross_validate(ds, mc, tc, true);
  for (int f = 0; f < 3; ++f) {
    CHECK(serial.folds[static_cast<size_t>(f)].report.accuracy ==
          parallel.folds[static_cast<size_t>(f)].report.accuracy);
    auto sp = serial.folds[static_cast<size_t>(f)].checkpoint.params.named();
    auto pp = parallel.folds[static_cast<size_t>(f)].checkpoint.params.named();
    for (size_t i = 0; i < sp.size(); ++i) CHECK(sp[i].second->values() == pp[i].second->values());
  }
}

TEST_CASE("averaging convention matches the reference table row") {
  std::vector<FoldReport> folds(5);
  const double accs[5] = {0.9550, 0.9525, 0.9675, 0.9725, 0.9725};
  for (int i = 0; i < 5; ++i) {
    folds[static_cast<size_t>(i)].fold = i;
    folds[static_cast<size_t>(i)].accuracy = accs[i];
  }
  FoldReport avg = average_report(folds);
  CHECK(std::abs(avg.accuracy - 0.9640) < 1e-12);
}
