#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "oltr/datagen.hpp"
#include "oltr/model.hpp"

namespace oltr {

// Per-sample exploration scores. `energy` is the literal free-energy value
// -T * log(sum_i^K exp(u_open*u_info / T)); because the summand does not
// depend on i this is identically -(u_open*u_info + T*ln K), a strictly
// decreasing function of the selection score u_open * u_info.
struct UncertaintyRecord {
  double u_open = 0.0;   // distance to the nearest centroid
  double u_info = 0.0;   // ratio of the two nearest distances, in (0, 1]
  double energy = 0.0;
  double score = 0.0;    // u_open * u_info
};

template <std::floating_point T>
UncertaintyRecord compute_uncertainties(const std::vector<T>& v_direct, const MemoryBank<T>& bank,
                                        double temperature);

// Indices of the ceil(budget * pool) highest-score samples; ties keep the
// lower pool index. Selecting by descending score equals selecting by
// ascending literal energy.
std::vector<int> select_for_annotation(const std::vector<UncertaintyRecord>& pool,
                                       double budget_fraction);

// Score-based selection or the uniform random baseline.
enum class SelectionPolicy { Score, Random };

std::vector<int> select_random(std::size_t pool_size, double budget_fraction, Rng& rng);

// Annotation interface. The bundled simulator answers from hidden labels;
// a live annotator would implement the same two calls.
class LabelOracle {
 public:
  virtual ~LabelOracle() = default;
  virtual std::string annotate(int sample_id) = 0;
  virtual long query_count() const = 0;
};

class SimulatedOracle : public LabelOracle {
 public:
  explicit SimulatedOracle(std::vector<int> hidden_labels)
      : hidden_labels_(std::move(hidden_labels)) {}

  std::string annotate(int sample_id) override {
    ++queries_;
    return "class-" + std::to_string(hidden_labels_.at(sample_id));
  }
  long query_count() const override { return queries_; }

 private:
  std::vector<int> hidden_labels_;
  long queries_ = 0;
};

// Canonical token for a dataset label, matching SimulatedOracle's naming.
std::string class_token(int label);

template <std::floating_point T>
struct Annotation {
  std::string token;
  std::vector<T> v_direct;
  std::vector<T> squashed_meta;  // squash(v_meta) at annotation time
  double score = 0.0;
};

// Weighted average of squashed meta-embeddings, weights softmax(score / T),
// unit-normalized: the imprinted classifier row for a discovered class.
template <std::floating_point T>
std::vector<T> hallucinate_class_weights(const std::vector<Annotation<T>>& annotations,
                                         double temperature);

struct FineTuneConfig {
  int epochs = 10;
  double learning_rate = 0.01;
};

// Exploration loop state: the grown model plus the token <-> slot mapping
// discovered so far. Slots 0..K-1 are the original known classes.
template <std::floating_point T>
struct DynamicLoopState {
  OltrModel<T> model;
  std::vector<std::string> slot_tokens;
  long budget_used = 0;

  static DynamicLoopState from_model(OltrModel<T> trained);
  int slot_of(const std::string& token) const;  // -1 when unknown
};

// Backbone and heads stay frozen: annotations grow the classifier, the
// hallucinator width, and the memory bank, then fine-tune all classifier
// rows by cross-entropy on the annotated samples.
template <std::floating_point T>
void update_model_with_annotations(DynamicLoopState<T>& state,
                                   const std::vector<Annotation<T>>& annotations,
                                   double temperature, const FineTuneConfig& fine_tune);

struct StageReport {
  int stage = 0;
  long budget_used = 0;
  double known_acc = 0.0;
  double unknown_acc = 0.0;
  int classifier_width = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

// Accuracy over the union label set (argmax over all grown slots, no
// rejection): known samples must hit their original slot, open samples the
// slot carrying their oracle token.
template <std::floating_point T>
StageReport evaluate_union(const DynamicLoopState<T>& state, const Dataset& dataset, int stage);

// One stage: score the pool, select within budget, annotate, update, report.
template <std::floating_point T>
StageReport run_stage(DynamicLoopState<T>& state, const ExplorationPool& pool,
                      LabelOracle& oracle, double budget_fraction, double temperature,
                      const FineTuneConfig& fine_tune, const Dataset& eval_set, int stage,
                      SelectionPolicy policy = SelectionPolicy::Score, Rng* rng = nullptr);

template <std::floating_point T>
std::vector<StageReport> run_dynamic_loop(DynamicLoopState<T>& state,
                                          const std::vector<ExplorationPool>& stage_pools,
                                          LabelOracle& oracle, double budget_fraction,
                                          double temperature, const FineTuneConfig& fine_tune,
                                          const Dataset& eval_set,
                                          SelectionPolicy policy = SelectionPolicy::Score,
                                          Rng* rng = nullptr);

}  // namespace oltr
