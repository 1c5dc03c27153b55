#include "affinity/report.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace affinity {

using nlohmann::json;

namespace {

std::string fold_label(const FoldReport& r) {
  return r.fold < 0 ? "Average" : std::to_string(r.fold);
}

void append_row(std::ostringstream& os, const FoldReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-8s%-10.4f%-10.4f%-11.4f%-8.4f%-9.4f%-.4f", fold_label(r).c_str(),
                r.accuracy, r.f1, r.precision, r.recall, r.roc_auc, r.training_minutes);
  os << buf << "\n";
}

json report_to_json(const FoldReport& r) {
  json j;
  j["fold"] = r.fold;
  j["accuracy"] = r.accuracy;
  j["f1"] = r.f1;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["roc_auc"] = r.roc_auc;
  j["training_minutes"] = r.training_minutes;
  return j;
}

}  // namespace

std::string fold_reports_to_table(const std::vector<FoldReport>& folds, const FoldReport& average) {
  std::ostringstream os;
  os << "Fold    Accuracy  F1_score  Precision  Recall  ROC AUC  Training (Minutes)\n";
  for (const auto& r : folds) append_row(os, r);
  append_row(os, average);
  return os.str();
}

std::string fold_reports_to_json(const std::vector<FoldReport>& folds, const FoldReport& average) {
  json j;
  j["folds"] = json::array();
  for (const auto& r : folds) j["folds"].push_back(report_to_json(r));
  j["average"] = report_to_json(average);
  return j.dump(2);
}

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string RunManifest::to_json() const {
  json j;
  j["tool_version"] = tool_version;
  j["command"] = command;
  j["dataset"] = dataset_provenance;
  j["model_config"] = json::parse(model.to_json());
  j["train_config"] = json::parse(train.to_json());
  j["seed"] = seed;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  return j.dump(2);
}

}  // namespace affinity
