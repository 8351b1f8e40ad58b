#include "oltr/evaluate.hpp"

#include <algorithm>

namespace oltr {

template <std::floating_point T>
EvalReport evaluate_model(const OltrModel<T>& model, const Dataset& dataset,
                          const ShotSplit& split, double threshold) {
  EvalReport report;
  report.threshold = threshold;

  std::vector<int> predictions(dataset.test_size());
  std::vector<bool> is_open(dataset.test_size());
  std::vector<double> known_scores, open_scores;
  for (int i = 0; i < dataset.test_size(); ++i) {
    const auto logits = model.predict_logits(dataset.test_sample(i));
    const auto probs = softmax_probs(logits);
    const double confidence = *std::max_element(probs.begin(), probs.end());
    predictions[i] = predict_with_reject(logits, threshold);
    is_open[i] = dataset.is_open_label(dataset.test_labels[i]);
    (is_open[i] ? open_scores : known_scores).push_back(confidence);
    if (predictions[i] == kReject) report.rejected++;
  }

  report.test_known = static_cast<int>(known_scores.size());
  report.test_open = static_cast<int>(open_scores.size());
  report.accuracies = evaluate_splits(predictions, dataset.test_labels, is_open, split);
  report.f_measure = open_f_measure(predictions, dataset.test_labels, is_open);
  if (!known_scores.empty() && !open_scores.empty()) {
    report.detection = detection_curves(known_scores, open_scores);
  }
  return report;
}

template <std::floating_point T>
double train_accuracy(const OltrModel<T>& model, const Dataset& dataset) {
  if (dataset.train_size() == 0) return 0.0;
  long correct = 0;
  for (int i = 0; i < dataset.train_size(); ++i) {
    const auto logits = model.predict_logits(dataset.train_sample(i));
    const int pred = predict_with_reject(logits, 0.0);
    correct += pred == dataset.train_labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / dataset.train_size();
}

template EvalReport evaluate_model<float>(const OltrModel<float>&, const Dataset&,
                                          const ShotSplit&, double);
template EvalReport evaluate_model<double>(const OltrModel<double>&, const Dataset&,
                                           const ShotSplit&, double);
template double train_accuracy<float>(const OltrModel<float>&, const Dataset&);
template double train_accuracy<double>(const OltrModel<double>&, const Dataset&);

}  // namespace oltr
