#include "affinity/trainer.hpp"

#include <chrono>
#include <cmath>
#include <future>

#include "affinity/errors.hpp"

namespace affinity {

namespace {

TensorF batch_mask(const Batch& b) {
  return TensorF::from_vector({b.batch, b.seq_len}, b.attention_mask);
}

void require_both_labels(const Dataset& ds, const char* which) {
  bool has[2] = {false, false};
  for (const auto& s : ds.samples)
    if (s.label == 0 || s.label == 1) has[s.label] = true;
  if (!has[0] || !has[1])
    throw DegenerateInputError(std::string("train_fold: ") + which +
                               " set must contain both labels");
}

}  // namespace

std::vector<std::array<double, 2>> predict_dataset(Parameters& params, const ModelConfig& mc,
                                                   const Dataset& ds, int batch_size) {
  std::vector<std::array<double, 2>> out;
  out.reserve(ds.size());
  Rng unused(0);  // inference path never draws from it
  std::vector<size_t> indices;
  for (size_t start = 0; start < ds.size(); start += static_cast<size_t>(batch_size)) {
    indices.clear();
    for (size_t i = start; i < std::min(ds.size(), start + static_cast<size_t>(batch_size)); ++i)
      indices.push_back(i);
    const Batch b = make_batch(ds, indices);
    auto fwd = forward(params, b.input_ids, b.batch, b.seq_len, batch_mask(b), mc, unused, false);
    const TensorF probs = predict_proba(fwd.logits);
    for (int r = 0; r < b.batch; ++r)
      out.push_back({static_cast<double>(probs.values()[static_cast<size_t>(r) * 2]),
                     static_cast<double>(probs.values()[static_cast<size_t>(r) * 2 + 1])});
  }
  return out;
}

TrainResult train_fold(const Dataset& train_set, const Dataset& test_set, const ModelConfig& mc,
                       const TrainConfig& tc) {
  mc.validate();
  tc.validate();
  if (train_set.samples.empty() || test_set.samples.empty())
    throw DegenerateInputError("train_fold: train and test sets must be non-empty");
  require_both_labels(test_set, "test");

  const auto start = std::chrono::steady_clock::now();
  Rng rng(tc.seed);
  Parameters params = init_params<float>(mc, rng);
  params.mark_differentiable();
  const auto leaves = params.all();
  AdamState<float> adam = AdamState<float>::init(leaves);

  std::vector<double> epoch_losses;
  epoch_losses.reserve(static_cast<size_t>(tc.epochs));
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const std::vector<Batch> batches = make_batches(train_set, tc.batch_size, rng, true);
    double loss_sum = 0.0;
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& b = batches[bi];
      zero_grads(leaves);
      auto fwd = forward(params, b.input_ids, b.batch, b.seq_len, batch_mask(b), mc, rng, true);
      TensorF loss = sparse_categorical_cross_entropy(fwd.logits, b.labels);
      const float loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw TrainingError("train_fold: loss diverged (non-finite) at epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(bi));
      backward(loss);
      adam_step(leaves, adam, tc);
      loss_sum += static_cast<double>(loss_value);
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(batches.size()));
  }

  TrainResult result;
  result.epoch_mean_losses = std::move(epoch_losses);
  result.test_probabilities = predict_dataset(params, mc, test_set, tc.batch_size);
  result.metrics = evaluate(result.test_probabilities, test_set.labels());

  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  result.report.fold = 0;
  result.report.accuracy = result.metrics.accuracy;
  result.report.f1 = result.metrics.f1;
  result.report.precision = result.metrics.precision;
  result.report.recall = result.metrics.recall;
  result.report.roc_auc = result.metrics.roc_auc;
  result.report.training_minutes = minutes;

  result.checkpoint.model = mc;
  result.checkpoint.train = tc;
  result.checkpoint.params = params;
  result.checkpoint.fold = 0;
  result.checkpoint.epoch = tc.epochs;
  result.checkpoint.seed = tc.seed;
  return result;
}

FoldReport average_report(const std::vector<FoldReport>& folds) {
  FoldReport avg;
  avg.fold = -1;
  for (const auto& f : folds) {
    avg.accuracy += f.accuracy;
    avg.f1 += f.f1;
    avg.precision += f.precision;
    avg.recall += f.recall;
    avg.roc_auc += f.roc_auc;
    avg.training_minutes += f.training_minutes;  // summed, not averaged
  }
  const double n = static_cast<double>(folds.size());
  if (!folds.empty()) {
    avg.accuracy /= n;
    avg.f1 /= n;
    avg.precision /= n;
    avg.recall /= n;
    avg.roc_auc /= n;
  }
  return avg;
}

CvResult cross_validate(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc,
                        bool parallel) {
  tc.validate();
  CvResult result;
  result.assignment = stratified_kfold(ds.labels(), tc.k_folds, tc.seed);
  result.folds.resize(static_cast<size_t>(tc.k_folds));

  auto run_fold = [&](int fold) {
    const Dataset test =
        subset(ds, result.assignment.fold_indices(fold), ds.provenance + " [fold " + std::to_string(fold) + "]");
    const Dataset train =
        subset(ds, result.assignment.complement_indices(fold), ds.provenance + " [not fold " + std::to_string(fold) + "]");
    TrainConfig fold_tc = tc;
    fold_tc.seed = Rng::derive(tc.seed, static_cast<uint64_t>(fold));
    TrainResult r = train_fold(train, test, mc, fold_tc);
    r.report.fold = fold;
    r.checkpoint.fold = fold;
    result.folds[static_cast<size_t>(fold)] = std::move(r);
  };

  if (parallel) {
    std::vector<std::future<void>> futures;
    futures.reserve(static_cast<size_t>(tc.k_folds));
    for (int fold = 0; fold < tc.k_folds; ++fold)
      futures.push_back(std::async(std::launch::async, run_fold, fold));
    for (auto& f : futures) f.get();
  } else {
    for (int fold = 0; fold < tc.k_folds; ++fold) run_fold(fold);
  }

  std::vector<FoldReport> reports;
  reports.reserve(result.folds.size());
  for (const auto& f : result.folds) reports.push_back(f.report);
  result.average = average_report(reports);
  return result;
}

}  // namespace affinity
