#pragma once

#include <string>
#include <vector>

#include "oltr/datagen.hpp"

namespace oltr {

// Prediction value for a rejected (claimed-open) sample.
inline constexpr int kReject = -1;

struct OpenSetPolicy {
  double threshold = 0.1;  // softmax probability threshold
};

std::vector<double> softmax_probs(const std::vector<double>& logits);

// argmax of the softmax if its probability clears the threshold, kReject
// otherwise; exact ties resolve to the lowest index.
int predict_with_reject(const std::vector<double>& logits, double threshold);

struct SplitAccuracies {
  double overall = 0.0;
  double many = 0.0;
  double medium = 0.0;
  double few = 0.0;
  int known_total = 0;
};

// Accuracy over known-class test samples, per shot bucket. REJECT counts as
// wrong. Open ground-truth samples are ignored here (is_open flags them).
SplitAccuracies evaluate_splits(const std::vector<int>& predictions,
                                const std::vector<int>& ground_truth,
                                const std::vector<bool>& is_open, const ShotSplit& split);

// Micro-averaged known-class F-measure:
//   precision = correct known predictions / all known-class predictions
//               (including those made on open samples)
//   recall    = correct known predictions / known ground-truth count
// F = 2PR/(P+R), 0 when P+R = 0.
double open_f_measure(const std::vector<int>& predictions, const std::vector<int>& ground_truth,
                      const std::vector<bool>& is_open);

struct DetectionMetrics {
  double fpr_at_95tpr = 0.0;
  double detection_error = 0.0;
  double auroc = 0.0;
};

// Threshold sweep over confidence scores (higher = more likely known).
// fpr_at_95tpr and the detection error are evaluated at the largest
// threshold with TPR >= 0.95; AUROC integrates the ROC by trapezoids, which
// scores tied known/open pairs as half-correct.
DetectionMetrics detection_curves(const std::vector<double>& known_scores,
                                  const std::vector<double>& open_scores);

struct EvalReport {
  SplitAccuracies accuracies;
  double f_measure = 0.0;
  DetectionMetrics detection;
  double threshold = 0.1;
  int test_known = 0;
  int test_open = 0;
  int rejected = 0;

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

}  // namespace oltr
