#include "affinity/metrics.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "affinity/errors.hpp"
#include "json.hpp"

namespace affinity {

ConfusionMatrix confusion(const std::vector<int>& pred_labels, const std::vector<int>& true_labels) {
  if (pred_labels.size() != true_labels.size())
    throw ShapeError("confusion: " + std::to_string(pred_labels.size()) + " predictions vs " +
                     std::to_string(true_labels.size()) + " labels");
  if (pred_labels.empty()) throw DegenerateInputError("confusion: empty inputs");
  ConfusionMatrix cm;
  for (size_t i = 0; i < pred_labels.size(); ++i) {
    const int p = pred_labels[i], t = true_labels[i];
    if ((p != 0 && p != 1) || (t != 0 && t != 1))
      throw LabelError("confusion: labels must be 0 or 1");
    if (t == 1)
      p == 1 ? ++cm.tp : ++cm.fn;
    else
      p == 1 ? ++cm.fp : ++cm.tn;
  }
  return cm;
}

namespace {

double ratio(size_t num, size_t den, bool* degenerate) {
  if (den == 0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double accuracy(const ConfusionMatrix& cm, bool* degenerate) {
  return ratio(cm.tp + cm.tn, cm.total(), degenerate);
}

double precision(const ConfusionMatrix& cm, bool* degenerate) {
  return ratio(cm.tp, cm.tp + cm.fp, degenerate);
}

double recall(const ConfusionMatrix& cm, bool* degenerate) {
  return ratio(cm.tp, cm.tp + cm.fn, degenerate);
}

double f1_from_pr(double precision, double recall) {
  const double denom = precision + recall;
  if (denom <= 0.0) return 0.0;
  return 2.0 * precision * recall / denom;
}

double f1_score(const ConfusionMatrix& cm, bool* degenerate) {
  const double p = precision(cm, nullptr);
  const double r = recall(cm, nullptr);
  if (p + r == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return f1_from_pr(p, r);
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& true_labels) {
  if (scores.size() != true_labels.size())
    throw ShapeError("roc_curve: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(true_labels.size()) + " labels");
  size_t n_pos = 0, n_neg = 0;
  for (int t : true_labels) {
    if (t != 0 && t != 1) throw LabelError("roc_curve: labels must be 0 or 1");
    t == 1 ? ++n_pos : ++n_neg;
  }
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("roc_curve: both classes must be present (got " + std::to_string(n_pos) +
                      " positives, " + std::to_string(n_neg) + " negatives)");

  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  size_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    // consume the whole tie group at this threshold
    while (i < order.size() && scores[order[i]] == s) {
      true_labels[order[i]] == 1 ? ++tp : ++fp;
      ++i;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                            static_cast<double>(tp) / static_cast<double>(n_pos), s});
  }
  return curve;
}

double roc_auc(const RocCurve& curve) {
  double area = 0.0;
  for (size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return area;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& true_labels) {
  return roc_auc(roc_curve(scores, true_labels));
}

std::string RocCurve::to_csv() const {
  std::ostringstream os;
  os << "fpr,tpr,threshold\n";
  for (const auto& p : points) os << p.fpr << "," << p.tpr << "," << p.threshold << "\n";
  return os.str();
}

MetricsReport evaluate(const std::vector<std::array<double, 2>>& probabilities,
                       const std::vector<int>& true_labels) {
  if (probabilities.size() != true_labels.size())
    throw ShapeError("evaluate: " + std::to_string(probabilities.size()) + " rows vs " +
                     std::to_string(true_labels.size()) + " labels");
  if (probabilities.empty()) throw DegenerateInputError("evaluate: empty inputs");

  std::vector<int> preds(probabilities.size());
  std::vector<double> scores(probabilities.size());
  for (size_t i = 0; i < probabilities.size(); ++i) {
    preds[i] = probabilities[i][1] > probabilities[i][0] ? 1 : 0;  // ties -> class 0
    scores[i] = probabilities[i][1];
  }

  MetricsReport r;
  r.confusion = confusion(preds, true_labels);
  r.accuracy = accuracy(r.confusion, &r.degenerate);
  r.precision = precision(r.confusion, &r.degenerate);
  r.recall = recall(r.confusion, &r.degenerate);
  r.f1 = f1_score(r.confusion, &r.degenerate);
  r.roc_auc = roc_auc(scores, true_labels);

  const size_t neg_total = r.confusion.tn + r.confusion.fp;
  const size_t pos_total = r.confusion.fn + r.confusion.tp;
  if (neg_total > 0) {
    r.normalized_confusion[0][0] = 100.0 * static_cast<double>(r.confusion.tn) / static_cast<double>(neg_total);
    r.normalized_confusion[0][1] = 100.0 * static_cast<double>(r.confusion.fp) / static_cast<double>(neg_total);
  }
  if (pos_total > 0) {
    r.normalized_confusion[1][0] = 100.0 * static_cast<double>(r.confusion.fn) / static_cast<double>(pos_total);
    r.normalized_confusion[1][1] = 100.0 * static_cast<double>(r.confusion.tp) / static_cast<double>(pos_total);
  }
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["f1"] = f1;
  j["precision"] = precision;
  j["recall"] = recall;
  j["roc_auc"] = roc_auc;
  j["confusion"] = {{"tp", confusion.tp}, {"fp", confusion.fp}, {"fn", confusion.fn}, {"tn", confusion.tn}};
  j["normalized_confusion_pct"] = {{normalized_confusion[0][0], normalized_confusion[0][1]},
                                   {normalized_confusion[1][0], normalized_confusion[1][1]}};
  j["degenerate"] = degenerate;
  return j.dump(2);
}

std::string MetricsReport::normalized_confusion_csv() const {
  std::ostringstream os;
  os << ",pred_low_affinity,pred_binder\n";
  os << "true_low_affinity," << normalized_confusion[0][0] << "," << normalized_confusion[0][1] << "\n";
  os << "true_binder," << normalized_confusion[1][0] << "," << normalized_confusion[1][1] << "\n";
  return os.str();
}

}  // namespace affinity
