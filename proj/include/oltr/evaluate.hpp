#pragma once

#include "oltr/datagen.hpp"
#include "oltr/metrics.hpp"
#include "oltr/model.hpp"

namespace oltr {

// Full open-set evaluation over the dataset's test split: thresholded
// predictions, shot-split accuracies, F-measure, and detection metrics from
// the max-softmax confidence. threshold = 0 gives the closed-set numbers.
template <std::floating_point T>
EvalReport evaluate_model(const OltrModel<T>& model, const Dataset& dataset,
                          const ShotSplit& split, double threshold);

// Closed-set accuracy over the training split (argmax, no rejection).
template <std::floating_point T>
double train_accuracy(const OltrModel<T>& model, const Dataset& dataset);

}  // namespace oltr
