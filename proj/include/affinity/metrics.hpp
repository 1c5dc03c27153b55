#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace affinity {

// Binary outcome counts; positive class is 1 (binder).
struct ConfusionMatrix {
  size_t tp = 0;
  size_t fp = 0;
  size_t fn = 0;
  size_t tn = 0;

  size_t total() const { return tp + fp + fn + tn; }
};

ConfusionMatrix confusion(const std::vector<int>& pred_labels, const std::vector<int>& true_labels);

// The four ratio metrics. Zero-denominator cells yield 0; when `degenerate`
// is non-null it is set to true in that case (and left untouched otherwise).
double accuracy(const ConfusionMatrix& cm, bool* degenerate = nullptr);
double precision(const ConfusionMatrix& cm, bool* degenerate = nullptr);
double recall(const ConfusionMatrix& cm, bool* degenerate = nullptr);
double f1_score(const ConfusionMatrix& cm, bool* degenerate = nullptr);
double f1_from_pr(double precision, double recall);

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  double threshold = 0;
};

// Step curve over the distinct scores (descending) with a +inf sentinel;
// predicts positive at score >= threshold. Starts at (0,0), ends at (1,1).
struct RocCurve {
  std::vector<RocPoint> points;

  std::string to_csv() const;
};

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& true_labels);

// Trapezoidal area under the curve; equals the tie-aware pairwise
// concordance statistic.
double roc_auc(const RocCurve& curve);
double roc_auc(const std::vector<double>& scores, const std::vector<int>& true_labels);

struct MetricsReport {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double roc_auc = 0;
  ConfusionMatrix confusion;
  // Row-normalized percentages, rows = true class (0, 1), cols = predicted.
  std::array<std::array<double, 2>, 2> normalized_confusion{{{0, 0}, {0, 0}}};
  bool degenerate = false;

  std::string to_json() const;
  std::string normalized_confusion_csv() const;
};

// Hard labels by argmax over each probability row (ties -> class 0); ROC is
// scored on the class-1 probability.
MetricsReport evaluate(const std::vector<std::array<double, 2>>& probabilities,
                       const std::vector<int>& true_labels);

}  // namespace affinity
