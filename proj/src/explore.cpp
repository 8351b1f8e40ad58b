#include "oltr/explore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "oltr/objective.hpp"
#include "oltr/train.hpp"

namespace oltr {

std::string class_token(int label) { return "class-" + std::to_string(label); }

namespace {

// Re-bases per-stage pool indices onto a global oracle id space.
class OffsetOracle : public LabelOracle {
 public:
  OffsetOracle(LabelOracle& inner, int offset) : inner_(inner), offset_(offset) {}
  std::string annotate(int sample_id) override { return inner_.annotate(sample_id + offset_); }
  long query_count() const override { return inner_.query_count(); }

 private:
  LabelOracle& inner_;
  int offset_;
};

}  // namespace

template <std::floating_point T>
UncertaintyRecord compute_uncertainties(const std::vector<T>& v_direct, const MemoryBank<T>& bank,
                                        double temperature) {
  const auto [d1, d2] = bank.two_nearest(v_direct.data());  // throws when K < 2
  UncertaintyRecord rec;
  rec.u_open = static_cast<double>(d1);
  rec.u_info = d2 == T(0) ? 1.0 : static_cast<double>(d1) / static_cast<double>(d2);
  rec.score = rec.u_open * rec.u_info;
  // Literal value of -T log(K exp(score/T)), evaluated in log space.
  rec.energy = -(rec.score + temperature * std::log(static_cast<double>(bank.num_classes())));
  return rec;
}

std::vector<int> select_random(std::size_t pool_size, double budget_fraction, Rng& rng) {
  if (pool_size == 0) throw TensorError("select_random: empty pool");
  if (budget_fraction <= 0.0 || budget_fraction > 1.0) {
    throw TensorError("select_random: budget fraction must be in (0, 1]");
  }
  const std::size_t take = static_cast<std::size_t>(
      std::ceil(budget_fraction * static_cast<double>(pool_size)));
  std::vector<int> order(pool_size);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t s = 0; s < take; ++s) {
    const std::size_t j = s + rng.below(order.size() - s);
    std::swap(order[s], order[j]);
  }
  order.resize(take);
  return order;
}

std::vector<int> select_for_annotation(const std::vector<UncertaintyRecord>& pool,
                                       double budget_fraction) {
  if (pool.empty()) throw TensorError("select_for_annotation: empty pool");
  if (budget_fraction <= 0.0 || budget_fraction > 1.0) {
    throw TensorError("select_for_annotation: budget fraction must be in (0, 1]");
  }
  const int take = static_cast<int>(
      std::ceil(budget_fraction * static_cast<double>(pool.size())));
  std::vector<int> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (pool[a].score != pool[b].score) return pool[a].score > pool[b].score;
    return a < b;
  });
  order.resize(static_cast<std::size_t>(std::min<long>(take, static_cast<long>(pool.size()))));
  return order;
}

template <std::floating_point T>
std::vector<T> hallucinate_class_weights(const std::vector<Annotation<T>>& annotations,
                                         double temperature) {
  if (annotations.empty()) throw TensorError("hallucinate_class_weights: empty class group");
  // softmax over score / T within the class
  double max_s = -std::numeric_limits<double>::infinity();
  for (const auto& a : annotations) max_s = std::max(max_s, a.score / temperature);
  std::vector<double> weights(annotations.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    weights[i] = std::exp(annotations[i].score / temperature - max_s);
    denom += weights[i];
  }
  const std::size_t dim = annotations.front().squashed_meta.size();
  std::vector<double> acc(dim, 0.0);
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const double w = weights[i] / denom;
    for (std::size_t d = 0; d < dim; ++d) {
      acc[d] += w * static_cast<double>(annotations[i].squashed_meta[d]);
    }
  }
  double norm = 0.0;
  for (double x : acc) norm += x * x;
  norm = std::sqrt(norm);
  constexpr double tiny = std::numeric_limits<double>::min();
  std::vector<T> row(dim);
  for (std::size_t d = 0; d < dim; ++d) row[d] = static_cast<T>(acc[d] / std::max(norm, tiny));
  return row;
}

template <std::floating_point T>
DynamicLoopState<T> DynamicLoopState<T>::from_model(OltrModel<T> trained) {
  DynamicLoopState<T> state;
  state.model = std::move(trained);
  state.slot_tokens.reserve(state.model.num_classes());
  for (int k = 0; k < state.model.num_classes(); ++k) state.slot_tokens.push_back(class_token(k));
  return state;
}

template <std::floating_point T>
int DynamicLoopState<T>::slot_of(const std::string& token) const {
  for (std::size_t i = 0; i < slot_tokens.size(); ++i) {
    if (slot_tokens[i] == token) return static_cast<int>(i);
  }
  return -1;
}

template <std::floating_point T>
void update_model_with_annotations(DynamicLoopState<T>& state,
                                   const std::vector<Annotation<T>>& annotations,
                                   double temperature, const FineTuneConfig& fine_tune) {
  if (annotations.empty()) return;
  OltrModel<T>& model = state.model;

  // Group annotations by token, new tokens in first-seen order.
  std::vector<std::string> new_tokens;
  std::map<std::string, std::vector<const Annotation<T>*>> groups;
  for (const auto& a : annotations) {
    if (a.token.empty()) throw TensorError("update_model_with_annotations: empty label token");
    if (groups.find(a.token) == groups.end() && state.slot_of(a.token) < 0) {
      new_tokens.push_back(a.token);
    }
    groups[a.token].push_back(&a);
  }

  // Imprint one classifier row and one centroid per discovered class.
  std::vector<std::vector<T>> new_rows;
  for (const auto& token : new_tokens) {
    std::vector<Annotation<T>> group;
    for (const auto* a : groups[token]) group.push_back(*a);
    new_rows.push_back(hallucinate_class_weights(group, temperature));

    std::vector<T> centroid(group.front().v_direct.size(), T(0));
    for (const auto& a : group) {
      for (std::size_t d = 0; d < centroid.size(); ++d) centroid[d] += a.v_direct[d];
    }
    for (auto& c : centroid) c /= static_cast<T>(group.size());
    model.bank.append(centroid);
    state.slot_tokens.push_back(token);
  }
  if (!new_tokens.empty()) {
    model.classifier.grow(new_rows);
    model.heads.grow_hal(static_cast<int>(new_tokens.size()));
  }

  if (fine_tune.epochs <= 0) return;

  // Classifier-only fine-tuning on the annotated samples; features and
  // embeddings are recomputed once against the grown bank and frozen.
  std::vector<std::vector<T>> metas;
  std::vector<int> slots;
  {
    NoGradGuard no_grad;
    for (const auto& a : annotations) {
      Tensor<T> v = Tensor<T>::from_values({static_cast<int>(a.v_direct.size())}, a.v_direct);
      metas.push_back(model.embed(v).v_meta.values());
      slots.push_back(state.slot_of(a.token));
    }
  }
  SgdMomentum<T> opt;
  opt.learning_rate = fine_tune.learning_rate;
  opt.momentum = 0.0;
  opt.attach({model.classifier.weight});
  for (int e = 0; e < fine_tune.epochs; ++e) {
    Tensor<T> loss;
    for (std::size_t i = 0; i < metas.size(); ++i) {
      Tensor<T> v_meta = Tensor<T>::from_values({static_cast<int>(metas[i].size())}, metas[i]);
      Tensor<T> ce = cross_entropy_loss(cosine_logits(v_meta, model.classifier), slots[i]);
      loss = loss.defined() ? add(loss, ce) : ce;
    }
    opt.zero_grad();
    backward(loss);
    opt.step();
  }
}

std::string StageReport::csv_header() {
  return "stage,budget_used,known_acc,unknown_acc,classifier_width";
}

std::string StageReport::csv_row() const {
  std::ostringstream os;
  os.precision(9);
  os << stage << ',' << budget_used << ',' << known_acc << ',' << unknown_acc << ','
     << classifier_width;
  return os.str();
}

template <std::floating_point T>
StageReport evaluate_union(const DynamicLoopState<T>& state, const Dataset& dataset, int stage) {
  long known_total = 0, known_correct = 0;
  long open_total = 0, open_correct = 0;
  for (int i = 0; i < dataset.test_size(); ++i) {
    const auto logits = state.model.predict_logits(dataset.test_sample(i));
    int best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k) {
      if (logits[k] > logits[best]) best = static_cast<int>(k);
    }
    const int truth = dataset.test_labels[i];
    if (dataset.is_open_label(truth)) {
      open_total++;
      if (state.slot_tokens[best] == class_token(truth)) open_correct++;
    } else {
      known_total++;
      if (best == truth) known_correct++;
    }
  }
  StageReport report;
  report.stage = stage;
  report.budget_used = state.budget_used;
  report.known_acc = known_total ? static_cast<double>(known_correct) / known_total : 0.0;
  report.unknown_acc = open_total ? static_cast<double>(open_correct) / open_total : 0.0;
  report.classifier_width = state.model.num_classes();
  return report;
}

template <std::floating_point T>
StageReport run_stage(DynamicLoopState<T>& state, const ExplorationPool& pool, LabelOracle& oracle,
                      double budget_fraction, double temperature, const FineTuneConfig& fine_tune,
                      const Dataset& eval_set, int stage, SelectionPolicy policy, Rng* rng) {
  if (budget_fraction > 0.0) {
    // Score the pool on frozen features.
    std::vector<UncertaintyRecord> records(pool.size());
    std::vector<std::vector<T>> directs(pool.size());
    {
      NoGradGuard no_grad;
      for (int i = 0; i < pool.size(); ++i) {
        Tensor<T> v = state.model.direct_feature(state.model.input_tensor(pool.sample(i)));
        directs[i] = v.values();
        records[i] = compute_uncertainties(directs[i], state.model.bank, temperature);
      }
    }
    std::vector<int> selected;
    if (policy == SelectionPolicy::Random) {
      if (!rng) throw TensorError("run_stage: random selection needs an rng");
      selected = select_random(records.size(), budget_fraction, *rng);
    } else {
      selected = select_for_annotation(records, budget_fraction);
    }

    std::vector<Annotation<T>> annotations;
    annotations.reserve(selected.size());
    {
      NoGradGuard no_grad;
      for (int idx : selected) {
        Annotation<T> a;
        a.token = oracle.annotate(idx);
        a.v_direct = directs[idx];
        Tensor<T> v = Tensor<T>::from_values({static_cast<int>(directs[idx].size())}, directs[idx]);
        a.squashed_meta = squash(state.model.embed(v).v_meta).values();
        a.score = records[idx].score;
        annotations.push_back(std::move(a));
      }
    }
    state.budget_used += static_cast<long>(selected.size());
    update_model_with_annotations(state, annotations, temperature, fine_tune);
  }
  return evaluate_union(state, eval_set, stage);
}

template <std::floating_point T>
std::vector<StageReport> run_dynamic_loop(DynamicLoopState<T>& state,
                                          const std::vector<ExplorationPool>& stage_pools,
                                          LabelOracle& oracle, double budget_fraction,
                                          double temperature, const FineTuneConfig& fine_tune,
                                          const Dataset& eval_set, SelectionPolicy policy,
                                          Rng* rng) {
  std::vector<StageReport> reports;
  reports.push_back(evaluate_union(state, eval_set, 0));  // pre-loop row
  int offset = 0;
  for (std::size_t s = 0; s < stage_pools.size(); ++s) {
    // Oracle ids are global across stages: shift by the pool offset.
    OffsetOracle shifted(oracle, offset);
    reports.push_back(run_stage(state, stage_pools[s], shifted, budget_fraction, temperature,
                                fine_tune, eval_set, static_cast<int>(s) + 1, policy, rng));
    offset += stage_pools[s].size();
  }
  return reports;
}

#define OLTR_INSTANTIATE_EXPLORE(T)                                                           \
  template UncertaintyRecord compute_uncertainties<T>(const std::vector<T>&,                  \
                                                      const MemoryBank<T>&, double);          \
  template std::vector<T> hallucinate_class_weights<T>(const std::vector<Annotation<T>>&,     \
                                                       double);                               \
  template struct DynamicLoopState<T>;                                                        \
  template void update_model_with_annotations<T>(DynamicLoopState<T>&,                        \
                                                 const std::vector<Annotation<T>>&, double,   \
                                                 const FineTuneConfig&);                      \
  template StageReport evaluate_union<T>(const DynamicLoopState<T>&, const Dataset&, int);    \
  template StageReport run_stage<T>(DynamicLoopState<T>&, const ExplorationPool&,             \
                                    LabelOracle&, double, double, const FineTuneConfig&,      \
                                    const Dataset&, int, SelectionPolicy, Rng*);              \
  template std::vector<StageReport> run_dynamic_loop<T>(                                      \
      DynamicLoopState<T>&, const std::vector<ExplorationPool>&, LabelOracle&, double,        \
      double, const FineTuneConfig&, const Dataset&, SelectionPolicy, Rng*);

OLTR_INSTANTIATE_EXPLORE(float)
OLTR_INSTANTIATE_EXPLORE(double)

#undef OLTR_INSTANTIATE_EXPLORE

}  // namespace oltr
