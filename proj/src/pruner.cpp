#include "stkd/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace stkd {
namespace {

// Groups a layer is ranked in: every entry, or one group per output channel.
std::size_t group_count(const MaskTensor& t, Granularity g) {
  if (g == Granularity::per_parameter) return t.size();
  return static_cast<std::size_t>(t.shape.empty() ? 1 : t.shape.back());
}

std::size_t group_of(std::size_t idx, const MaskTensor& t, Granularity g) {
  if (g == Granularity::per_parameter) return idx;
  return idx % group_count(t, g);
}

// A group counts as masked once all of its entries are masked.
std::vector<std::uint8_t> group_masked(const MaskTensor& t, Granularity g) {
  const std::size_t groups = group_count(t, g);
  std::vector<std::uint8_t> any_kept(groups, 0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.keep[i]) any_kept[group_of(i, t, g)] = 1;
  }
  std::vector<std::uint8_t> masked(groups);
  for (std::size_t k = 0; k < groups; ++k) masked[k] = any_kept[k] ? 0 : 1;
  return masked;
}

std::size_t target_groups(std::size_t groups, double target) {
  return static_cast<std::size_t>(std::llround(target * static_cast<double>(groups)));
}

PruneResult prune_loop(const StgcnModel* teacher, const StgcnModel& base, const DatasetSplits& data,
                       const GraphKernel& graph, const TrainConfig& cfg, const PruneSchedule& schedule,
                       const LossWeights& weights, const PruneOptions& options) {
  cfg.validate();
  schedule.validate();
  weights.validate();
  if (data.train.samples() == 0) throw ConfigError("training split is empty");
  if (options.finetune_epochs < 0) throw ConfigError("finetune_epochs must be nonnegative");

  PruneResult result;
  StgcnModel model = base;
  MaskSet masks = model.mask() ? *model.mask() : model.full_mask();
  model.apply_mask(masks);
  KdisAccumulator acc = KdisAccumulator::for_model(model);

  Adam adam(cfg.learning_rate);
  std::mt19937_64 order_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  long minibatch = 0;
  bool reached = target_reached(masks, schedule);
  for (int epoch = 0; !reached; ++epoch) {
    if (epoch >= options.max_epochs) {
      throw ConfigError("pruning target not reached within " + std::to_string(options.max_epochs) + " epochs");
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = cfg.learning_rate_at(epoch);
    adam.set_learning_rate(rec.learning_rate);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& idx : epoch_batches(data.train.samples(), cfg.batch_size, order_rng)) {
      const Minibatch mb = gather(data.train, idx);
      const StepOutcome out = compute_gradients(model, teacher, mb, graph, options.loss, weights, &dropout_rng);
      accumulate_kdis(acc, model);
      apply_update(model, adam);
      ++minibatch;
      loss_sum += out.loss * static_cast<double>(idx.size());
      seen += idx.size();
      rec.routed += out.routed;
      rec.terms += out.terms;
      rec.routing = rec.routing || out.routing;
      if (acc.counter == schedule.pruning_minibatch) {
        PruneEventRecord ev;
        masks = prune_event(model, acc, masks, schedule, &ev);
        ev.event = static_cast<int>(result.events.size()) + 1;
        ev.epoch = epoch;
        ev.minibatch = minibatch;
        result.events.push_back(ev);
        if (options.keep_snapshots) result.snapshots.push_back(masks);
        reached = target_reached(masks, schedule);
        if (reached) break;
      }
    }
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.val_rmse = data.val.samples() > 0 ? one_step_rmse(model, graph, data.val) : rec.train_loss;
    if (!std::isfinite(rec.train_loss)) throw TrainingDivergedError("pruning loss diverged");
    result.pruning_epochs.push_back(rec);
  }

  if (options.finetune_epochs > 0) {
    TrainConfig ft = cfg;
    ft.epochs = options.finetune_epochs;
    ft.seed = cfg.seed + 1;
    TrainResult tuned = options.finetune_loss == LossKind::target
                            ? train_teacher(model, data, graph, ft)
                            : train_student_kd(model, *teacher, data, graph, ft, weights, options.finetune_loss);
    result.finetune_epochs = tuned.history;
    model = std::move(tuned.model);
  }
  result.masks = masks;
  result.model = std::move(model);
  return result;
}

}  // namespace

Granularity parse_granularity(const std::string& name) {
  if (name == "per-parameter" || name == "per_parameter" || name == "parameter") return Granularity::per_parameter;
  if (name == "per-filter" || name == "per_filter" || name == "filter") return Granularity::per_filter;
  throw ConfigError("unknown pruning granularity '" + name + "' (per-parameter | per-filter)");
}

std::string to_string(Granularity g) { return g == Granularity::per_filter ? "per-filter" : "per-parameter"; }

void PruneSchedule::validate() const {
  if (pruning_minibatch <= 0) throw ConfigError("pruning_minibatch must be positive");
  if (!(target_sparsity >= 0.0 && target_sparsity <= 1.0)) throw ConfigError("target_sparsity must lie in [0, 1]");
  if (target_sparsity == 0.0) return;
  if (!(per_event_fraction > 0.0 && per_event_fraction <= target_sparsity)) {
    throw ConfigError("per_event_fraction must lie in (0, target_sparsity]");
  }
}

KdisAccumulator KdisAccumulator::for_model(const StgcnModel& model) {
  KdisAccumulator acc;
  for (const Parameter* p : model.parameters()) {
    if (!p->maskable) continue;
    acc.names.push_back(p->name);
    acc.shapes.push_back(p->shape);
    acc.sums.emplace_back(p->size(), 0.0);
  }
  return acc;
}

void KdisAccumulator::reset() {
  for (auto& s : sums) std::fill(s.begin(), s.end(), 0.0);
  counter = 0;
}

std::size_t KdisAccumulator::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ShapeError("no importance scores for tensor '" + name + "'");
}

void accumulate_kdis(KdisAccumulator& acc, std::size_t index, std::span<const double> grads,
                     std::span<const double> weights) {
  if (index >= acc.sums.size()) throw ShapeError("importance tensor index out of range");
  auto& sum = acc.sums[index];
  if (grads.size() != sum.size() || weights.size() != sum.size()) {
    throw ShapeError("gradient/weight size mismatch for tensor '" + acc.names[index] + "'");
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    const double gw = grads[i] * weights[i];
    sum[i] += gw * gw;
  }
}

void accumulate_kdis(KdisAccumulator& acc, const StgcnModel& model) {
  for (std::size_t i = 0; i < acc.names.size(); ++i) {
    const Parameter* p = model.find_parameter(acc.names[i]);
    if (!p) throw ShapeError("model has no tensor '" + acc.names[i] + "'");
    accumulate_kdis(acc, i, p->grad, p->value);
  }
  ++acc.counter;
}

std::vector<double> group_scores(std::span<const double> scores, const std::vector<int>& shape, Granularity g) {
  if (g == Granularity::per_parameter) return {scores.begin(), scores.end()};
  const std::size_t filters = static_cast<std::size_t>(shape.empty() ? 1 : shape.back());
  std::vector<double> out(filters, 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) out[i % filters] += scores[i];
  return out;
}

std::vector<std::size_t> lowest_scores(std::span<const double> scores, const std::vector<std::size_t>& candidates,
                                       std::size_t k) {
  std::vector<std::size_t> order = candidates;
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] < scores[b] || (scores[a] == scores[b] && a < b); });
  order.resize(k);
  return order;
}

std::vector<LayerSparsity> layer_sparsity(const MaskSet& masks) {
  std::vector<LayerSparsity> out;
  for (const auto& t : masks.tensors) out.push_back({t.name, t.masked(), t.size()});
  return out;
}

bool target_reached(const MaskSet& masks, const PruneSchedule& schedule) {
  for (const auto& t : masks.tensors) {
    const auto gm = group_masked(t, schedule.granularity);
    const std::size_t done = static_cast<std::size_t>(std::count(gm.begin(), gm.end(), 1));
    if (done < target_groups(gm.size(), schedule.target_sparsity)) return false;
  }
  return true;
}

MaskSet prune_event(StgcnModel& model, KdisAccumulator& acc, const MaskSet& masks, const PruneSchedule& schedule,
                    PruneEventRecord* record) {
  schedule.validate();
  if (acc.counter != schedule.pruning_minibatch) {
    throw SequencingError("pruning event requested after " + std::to_string(acc.counter) + " of " +
                          std::to_string(schedule.pruning_minibatch) + " minibatches");
  }
  MaskSet next = masks;
  double kdis_sum = 0.0;
  std::size_t kdis_count = 0;
  for (auto& t : next.tensors) {
    const std::size_t ai = acc.index_of(t.name);
    if (acc.sums[ai].size() != t.size()) throw ShapeError("mask shape mismatch for tensor '" + t.name + "'");
    std::vector<double> avg(acc.sums[ai]);
    for (double& v : avg) v /= static_cast<double>(schedule.pruning_minibatch);
    for (std::size_t i = 0; i < avg.size(); ++i) {
      if (t.keep[i]) {
        kdis_sum += avg[i];
        ++kdis_count;
      }
    }

    const auto scores = group_scores(avg, t.shape, schedule.granularity);
    const auto gm = group_masked(t, schedule.granularity);
    std::vector<std::size_t> open;
    for (std::size_t k = 0; k < gm.size(); ++k) {
      if (!gm[k]) open.push_back(k);
    }
    const std::size_t done = gm.size() - open.size();
    const std::size_t quota = target_groups(gm.size(), schedule.target_sparsity);
    if (done >= quota) continue;
    const auto per_event = static_cast<std::size_t>(
        std::ceil(schedule.per_event_fraction * static_cast<double>(gm.size()) - 1e-9));
    const std::size_t k = std::min(per_event, quota - done);
    for (std::size_t g : lowest_scores(scores, open, k)) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (group_of(i, t, schedule.granularity) == g) t.keep[i] = 0;
      }
    }
  }
  acc.reset();
  model.apply_mask(next);
  if (record) {
    record->mean_kdis = kdis_count ? kdis_sum / static_cast<double>(kdis_count) : 0.0;
    record->overall_sparsity = next.sparsity();
    record->layers = layer_sparsity(next);
  }
  return next;
}

PruneResult distill_prune(const StgcnModel& teacher, const StgcnModel& base, const DatasetSplits& data,
                           const GraphKernel& graph, const TrainConfig& cfg, const PruneSchedule& schedule,
                           const LossWeights& weights, const PruneOptions& options) {
  return prune_loop(&teacher, base, data, graph, cfg, schedule, weights, options);
}

PruneResult traditional_prune_baseline(const StgcnModel& base, const DatasetSplits& data, const GraphKernel& graph,
                                       const TrainConfig& cfg, const PruneSchedule& schedule, int finetune_epochs,
                                       bool keep_snapshots) {
  PruneOptions options;
  options.loss = LossKind::target;
  options.finetune_loss = LossKind::target;
  options.finetune_epochs = finetune_epochs;
  options.keep_snapshots = keep_snapshots;
  return prune_loop(nullptr, base, data, graph, cfg, schedule, LossWeights{}, options);
}

void write_prune_history_csv(const std::filesystem::path& path, const std::vector<PruneEventRecord>& events) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "event,epoch,minibatch,overall_sparsity,mean_kdis";
  if (!events.empty()) {
    for (const auto& l : events.front().layers) out << ",sparsity:" << l.name;
  }
  out << '\n' << std::setprecision(10);
  for (const auto& e : events) {
    out << e.event << ',' << e.epoch + 1 << ',' << e.minibatch << ',' << e.overall_sparsity << ',' << e.mean_kdis;
    for (const auto& l : e.layers) out << ',' << l.sparsity();
    out << '\n';
  }
}

}  // namespace stkd
