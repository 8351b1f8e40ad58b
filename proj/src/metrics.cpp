#include "oltr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace oltr {

std::vector<double> softmax_probs(const std::vector<double>& logits) {
  double max_v = logits.at(0);
  for (double l : logits) max_v = std::max(max_v, l);
  std::vector<double> probs(logits.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - max_v);
    denom += probs[i];
  }
  for (auto& p : probs) p /= denom;
  return probs;
}

int predict_with_reject(const std::vector<double>& logits, double threshold) {
  const auto probs = softmax_probs(logits);
  int best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  }
  if (probs[best] < threshold) return kReject;
  return best;
}

SplitAccuracies evaluate_splits(const std::vector<int>& predictions,
                                const std::vector<int>& ground_truth,
                                const std::vector<bool>& is_open, const ShotSplit& split) {
  if (predictions.size() != ground_truth.size() || predictions.size() != is_open.size()) {
    throw std::invalid_argument("evaluate_splits: size mismatch");
  }
  long correct[3] = {0, 0, 0};
  long total[3] = {0, 0, 0};
  long correct_all = 0, total_all = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (is_open[i]) continue;
    const auto bucket = split.bucket_of(ground_truth[i]);  // throws on unmapped labels
    const int b = static_cast<int>(bucket);
    total[b]++;
    total_all++;
    if (predictions[i] == ground_truth[i]) {
      correct[b]++;
      correct_all++;
    }
  }
  SplitAccuracies acc;
  acc.known_total = static_cast<int>(total_all);
  acc.overall = total_all ? static_cast<double>(correct_all) / total_all : 0.0;
  acc.many = total[0] ? static_cast<double>(correct[0]) / total[0] : 0.0;
  acc.medium = total[1] ? static_cast<double>(correct[1]) / total[1] : 0.0;
  acc.few = total[2] ? static_cast<double>(correct[2]) / total[2] : 0.0;
  return acc;
}

double open_f_measure(const std::vector<int>& predictions, const std::vector<int>& ground_truth,
                      const std::vector<bool>& is_open) {
  if (predictions.size() != ground_truth.size() || predictions.size() != is_open.size()) {
    throw std::invalid_argument("open_f_measure: size mismatch");
  }
  long correct_known = 0;
  long predicted_known = 0;
  long known_truth = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!is_open[i]) known_truth++;
    if (predictions[i] == kReject) continue;
    predicted_known++;
    if (!is_open[i] && predictions[i] == ground_truth[i]) correct_known++;
  }
  const double precision = predicted_known ? static_cast<double>(correct_known) / predicted_known : 0.0;
  const double recall = known_truth ? static_cast<double>(correct_known) / known_truth : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

DetectionMetrics detection_curves(const std::vector<double>& known_scores,
                                  const std::vector<double>& open_scores) {
  if (known_scores.empty() || open_scores.empty()) {
    throw std::invalid_argument("detection_curves: empty score list");
  }
  const double nk = static_cast<double>(known_scores.size());
  const double no = static_cast<double>(open_scores.size());

  // Unique thresholds, descending, so TPR/FPR are non-decreasing along the sweep.
  std::set<double, std::greater<double>> thresholds(known_scores.begin(), known_scores.end());
  thresholds.insert(open_scores.begin(), open_scores.end());

  auto rate_at = [](const std::vector<double>& scores, double t) {
    long n = 0;
    for (double s : scores) n += s >= t ? 1 : 0;
    return static_cast<double>(n);
  };

  DetectionMetrics out;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  bool found_operating_point = false;
  double area = 0.0;
  for (double t : thresholds) {
    const double tpr = rate_at(known_scores, t) / nk;
    const double fpr = rate_at(open_scores, t) / no;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    if (!found_operating_point && tpr >= 0.95) {
      out.fpr_at_95tpr = fpr;
      out.detection_error = 0.5 * (1.0 - tpr) + 0.5 * fpr;
      found_operating_point = true;
    }
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  // Close the curve at (1,1).
  area += (1.0 - prev_fpr) * (1.0 + prev_tpr) / 2.0;
  out.auroc = area;
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["threshold"] = threshold;
  j["overall_acc"] = accuracies.overall;
  j["many_acc"] = accuracies.many;
  j["medium_acc"] = accuracies.medium;
  j["few_acc"] = accuracies.few;
  j["f_measure"] = f_measure;
  j["fpr_at_95tpr"] = detection.fpr_at_95tpr;
  j["detection_error"] = detection.detection_error;
  j["auroc"] = detection.auroc;
  j["test_known"] = test_known;
  j["test_open"] = test_open;
  j["rejected"] = rejected;
  return j.dump(2);
}

std::string EvalReport::csv_header() {
  return "threshold,overall_acc,many_acc,medium_acc,few_acc,f_measure,fpr_at_95tpr,"
         "detection_error,auroc,test_known,test_open,rejected";
}

std::string EvalReport::csv_row() const {
  std::ostringstream os;
  os.precision(9);
  os << threshold << ',' << accuracies.overall << ',' << accuracies.many << ','
     << accuracies.medium << ',' << accuracies.few << ',' << f_measure << ','
     << detection.fpr_at_95tpr << ',' << detection.detection_error << ',' << detection.auroc << ','
     << test_known << ',' << test_open << ',' << rejected;
  return os.str();
}

}  // namespace oltr
