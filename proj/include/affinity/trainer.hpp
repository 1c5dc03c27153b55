#pragma once

#include <array>
#include <vector>

#include "affinity/checkpoint.hpp"
#include "affinity/data.hpp"
#include "affinity/metrics.hpp"
#include "affinity/model.hpp"
#include "affinity/train.hpp"

namespace affinity {

struct TrainResult {
  Checkpoint checkpoint;
  FoldReport report;
  MetricsReport metrics;                 // full metric detail behind the report row
  std::vector<double> epoch_mean_losses;
  std::vector<std::array<double, 2>> test_probabilities;  // dataset order
};

// Trains for the configured epochs (shuffle, batch, forward, loss, backward,
// Adam) and evaluates the final-epoch model on the test set. Deterministic
// given the seed; throws TrainingError naming epoch and batch if the loss
// goes non-finite.
TrainResult train_fold(const Dataset& train_set, const Dataset& test_set, const ModelConfig& mc,
                       const TrainConfig& tc);

// Class probabilities for every sample, in dataset order (inference mode).
std::vector<std::array<double, 2>> predict_dataset(Parameters& params, const ModelConfig& mc,
                                                   const Dataset& ds, int batch_size);

struct CvResult {
  FoldAssignment assignment;
  std::vector<TrainResult> folds;
  FoldReport average;  // mean of the metric columns, sum of the minutes
};

// Stratified k-fold cross-validation; each fold serves once as the test set.
// Per-fold seeds derive from tc.seed, so `parallel` changes wall time only,
// never results.
CvResult cross_validate(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc,
                        bool parallel = false);

FoldReport average_report(const std::vector<FoldReport>& folds);

}  // namespace affinity
