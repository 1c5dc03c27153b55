#pragma once

#include <string>
#include <vector>

#include "affinity/model.hpp"
#include "affinity/train.hpp"

namespace affinity {

// Cross-validation table: columns Fold, Accuracy, F1_score, Precision,
// Recall, ROC AUC, Training (Minutes); one row per fold plus the Average row
// (metrics averaged, minutes summed).
std::string fold_reports_to_table(const std::vector<FoldReport>& folds, const FoldReport& average);
std::string fold_reports_to_json(const std::vector<FoldReport>& folds, const FoldReport& average);

// Everything needed to reproduce a run; written before training starts and
// finalized when it ends. The only place timestamps appear.
struct RunManifest {
  std::string tool_version;
  std::string command;
  std::string dataset_provenance;
  ModelConfig model;
  TrainConfig train;
  uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;

  std::string to_json() const;
};

std::string now_iso8601();

}  // namespace affinity
