#include "stkd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace stkd {
namespace {

constexpr int kInferenceChunk = 256;

RowMatrix prediction_matrix(const Tensor& y) {
  RowMatrix out(y.batch(), y.nodes());
  for (int b = 0; b < y.batch(); ++b) {
    for (int n = 0; n < y.nodes(); ++n) out(b, n) = y(b, 0, n, 0);
  }
  return out;
}

Tensor prediction_tensor(const RowMatrix& m) {
  Tensor out(static_cast<int>(m.rows()), 1, static_cast<int>(m.cols()), 1);
  for (Eigen::Index b = 0; b < m.rows(); ++b) {
    for (Eigen::Index n = 0; n < m.cols(); ++n) out(b, 0, n, 0) = m(b, n);
  }
  return out;
}

Tensor gather_inputs(const Tensor& windows, int begin, int count) {
  Tensor out(count, windows.time(), windows.nodes(), windows.channels());
  const std::size_t stride = static_cast<std::size_t>(windows.time()) * windows.nodes() * windows.channels();
  std::copy_n(windows.data() + begin * stride, count * stride, out.data());
  return out;
}

using StepFn = std::function<StepOutcome(StgcnModel&, const Minibatch&, std::mt19937_64&)>;

TrainResult fit(StgcnModel model, const DatasetSplits& data, const GraphKernel& graph, const TrainConfig& cfg,
                const StepFn& step) {
  cfg.validate();
  if (data.train.samples() == 0) throw ConfigError("training split is empty");
  Adam adam(cfg.learning_rate);
  std::mt19937_64 order_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  TrainResult result;
  result.model = model;
  result.best_val_rmse = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = cfg.learning_rate_at(epoch);
    adam.set_learning_rate(rec.learning_rate);
    double loss_sum = 0.0;
    for (const auto& idx : epoch_batches(data.train.samples(), cfg.batch_size, order_rng)) {
      const Minibatch mb = gather(data.train, idx);
      const StepOutcome out = step(model, mb, dropout_rng);
      apply_update(model, adam);
      loss_sum += out.loss * static_cast<double>(idx.size());
      rec.routed += out.routed;
      rec.terms += out.terms;
      rec.routing = rec.routing || out.routing;
    }
    rec.train_loss = loss_sum / data.train.samples();
    rec.val_rmse = data.val.samples() > 0 ? one_step_rmse(model, graph, data.val) : rec.train_loss;
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_rmse)) {
      throw TrainingDivergedError("training diverged at epoch " + std::to_string(epoch + 1) +
                                  " (loss=" + std::to_string(rec.train_loss) + ")");
    }
    if (rec.val_rmse < result.best_val_rmse) {
      result.best_val_rmse = rec.val_rmse;
      result.best_epoch = epoch;
      result.model = model;
    }
    result.history.push_back(rec);
  }
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (lr_decay_every < 0) throw ConfigError("lr_decay_every must be nonnegative");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (optimizer != "adam") throw ConfigError("unsupported optimizer '" + optimizer + "' (only adam)");
}

double TrainResult::overall_teacher_ratio() const {
  std::size_t routed = 0, terms = 0;
  for (const auto& r : history) {
    routed += r.routed;
    terms += r.terms;
  }
  return terms ? static_cast<double>(routed) / static_cast<double>(terms) : 0.0;
}

Minibatch gather(const WindowedDataset& data, std::span<const int> indices) {
  const int b = static_cast<int>(indices.size());
  const int m = data.history();
  const int n = data.nodes();
  Minibatch mb;
  mb.inputs = Tensor(b, m, n, 1);
  mb.next_step = RowMatrix(b, n);
  const std::size_t stride = static_cast<std::size_t>(m) * n;
  for (int k = 0; k < b; ++k) {
    const int s = indices[k];
    std::copy_n(data.inputs.data() + s * stride, stride, mb.inputs.data() + k * stride);
    for (int i = 0; i < n; ++i) mb.next_step(k, i) = data.stats.normalize(data.targets(s, 0, i, 0));
  }
  return mb;
}

std::vector<std::vector<int>> epoch_batches(int samples, int batch_size, std::mt19937_64& rng) {
  std::vector<int> order(samples);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with raw 64-bit draws keeps the order identical across standard libraries.
  for (int i = samples - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < samples; start += batch_size) {
    const int end = std::min(samples, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

StepOutcome compute_gradients(StgcnModel& student, const StgcnModel* teacher, const Minibatch& batch,
                              const GraphKernel& graph, LossKind kind, const LossWeights& weights,
                              std::mt19937_64* dropout_rng) {
  const bool needs_teacher = kind != LossKind::target;
  const bool needs_taps = kind == LossKind::tcd || kind == LossKind::scd || kind == LossKind::stcd;
  if (needs_teacher && !teacher) throw ConfigError("loss '" + to_string(kind) + "' needs a teacher");

  student.zero_grad();
  ForwardTrace trace;
  FeatureTaps student_taps, teacher_taps;
  const Tensor ys = student.forward(batch.inputs, graph, needs_taps ? &student_taps : nullptr, &trace, dropout_rng);

  ResponseTriple r;
  r.student = prediction_matrix(ys);
  r.target = batch.next_step;
  if (needs_teacher) {
    r.teacher = prediction_matrix(teacher->forward(batch.inputs, graph, needs_taps ? &teacher_taps : nullptr));
    if (needs_taps) {
      for (std::size_t i = 0; i < student_taps.temporal.size(); ++i) {
        const Tensor& s = student_taps.temporal[i];
        const Tensor& t = teacher_taps.temporal[i];
        if (s.time() != t.time() || s.nodes() != t.nodes()) {
          throw ConfigError("teacher/student architectures cannot be paired: temporal tap " + std::to_string(i) +
                            " is " + s.shape_string() + " vs " + t.shape_string());
        }
      }
    }
  } else {
    r.teacher = r.target;
  }
  if (!r.student.allFinite()) throw TrainingDivergedError("non-finite student prediction");

  LossResult loss = training_loss(kind, r, needs_taps ? &student_taps : nullptr,
                                  needs_taps ? &teacher_taps : nullptr, weights, true);
  if (!std::isfinite(loss.value)) throw TrainingDivergedError("loss is not finite");
  student.backward(trace, graph, prediction_tensor(loss.d_student), needs_taps ? &loss.d_taps : nullptr);

  StepOutcome out;
  out.loss = loss.value;
  out.routing = loss.routing_applies;
  out.routed = loss.routed;
  out.terms = loss.terms;
  return out;
}

void apply_update(StgcnModel& model, Adam& optimizer) {
  model.enforce_mask();
  optimizer.step(model.parameters());
  model.enforce_mask();
}

double one_step_rmse(const StgcnModel& model, const GraphKernel& graph, const WindowedDataset& data) {
  double sq = 0.0;
  std::size_t count = 0;
  for (int begin = 0; begin < data.samples(); begin += kInferenceChunk) {
    const int n = std::min(kInferenceChunk, data.samples() - begin);
    const Tensor y = model.forward(gather_inputs(data.inputs, begin, n), graph);
    for (int b = 0; b < n; ++b) {
      for (int i = 0; i < data.nodes(); ++i) {
        const double e = data.stats.denormalize(y(b, 0, i, 0)) - data.targets(begin + b, 0, i, 0);
        sq += e * e;
        ++count;
      }
    }
  }
  return count ? std::sqrt(sq / static_cast<double>(count)) : 0.0;
}

TrainResult train_teacher(StgcnModel model, const DatasetSplits& data, const GraphKernel& graph,
                          const TrainConfig& cfg) {
  const LossWeights unused;
  return fit(std::move(model), data, graph, cfg, [&](StgcnModel& m, const Minibatch& mb, std::mt19937_64& rng) {
    return compute_gradients(m, nullptr, mb, graph, LossKind::target, unused, &rng);
  });
}

TrainResult train_student_kd(StgcnModel student, const StgcnModel& teacher, const DatasetSplits& data,
                             const GraphKernel& graph, const TrainConfig& cfg, const LossWeights& weights,
                             LossKind kind) {
  weights.validate();
  if (teacher.config().nodes != student.config().nodes || teacher.config().history != student.config().history ||
      teacher.config().temporal_kernel != student.config().temporal_kernel) {
    throw ConfigError("teacher and student must share nodes, history and temporal kernel");
  }
  return fit(std::move(student), data, graph, cfg, [&](StgcnModel& m, const Minibatch& mb, std::mt19937_64& rng) {
    return compute_gradients(m, &teacher, mb, graph, kind, weights, &rng);
  });
}

Tensor predict_sequence(const StgcnModel& model, const GraphKernel& graph, const Tensor& windows, int horizon,
                        const ZScore& stats) {
  if (horizon < 1) throw ConfigError("prediction horizon must be >= 1");
  const int s_count = windows.batch();
  const int m = windows.time();
  const int n = windows.nodes();
  Tensor out(s_count, horizon, n, 1);
  for (int begin = 0; begin < s_count; begin += kInferenceChunk) {
    const int count = std::min(kInferenceChunk, s_count - begin);
    Tensor window = gather_inputs(windows, begin, count);
    for (int step = 0; step < horizon; ++step) {
      const Tensor y = model.forward(window, graph);
      Tensor next(count, m, n, 1);
      for (int b = 0; b < count; ++b) {
        for (int i = 0; i < n; ++i) out(begin + b, step, i, 0) = stats.denormalize(y(b, 0, i, 0));
        for (int t = 0; t + 1 < m; ++t) {
          for (int i = 0; i < n; ++i) next(b, t, i, 0) = window(b, t + 1, i, 0);
        }
        for (int i = 0; i < n; ++i) next(b, m - 1, i, 0) = y(b, 0, i, 0);
      }
      window = std::move(next);
    }
  }
  return out;
}

const HorizonMetric* HorizonMetrics::at_minutes(int minutes) const {
  for (const auto& h : horizons) {
    if (h.minutes == minutes) return &h;
  }
  return nullptr;
}

HorizonMetrics metrics_at_steps(const Tensor& predictions, const Tensor& truth, const std::vector<int>& steps,
                                int interval_minutes) {
  require_same_dims(predictions, truth, "metrics");
  HorizonMetrics out;
  for (int step : steps) {
    if (step < 1 || step > truth.time()) continue;
    HorizonMetric h;
    h.step = step;
    h.minutes = step * interval_minutes;
    double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
    std::size_t count = 0, pct_count = 0;
    for (int b = 0; b < truth.batch(); ++b) {
      for (int i = 0; i < truth.nodes(); ++i) {
        const double t = truth(b, step - 1, i, 0);
        const double e = predictions(b, step - 1, i, 0) - t;
        abs_sum += std::abs(e);
        sq_sum += e * e;
        ++count;
        if (std::abs(t) > kMapeFloor) {
          pct_sum += std::abs(e) / std::abs(t);
          ++pct_count;
        }
      }
    }
    if (count) {
      h.mae = abs_sum / count;
      h.rmse = std::sqrt(sq_sum / count);
    }
    if (pct_count) h.mape = 100.0 * pct_sum / pct_count;
    out.horizons.push_back(h);
  }
  return out;
}

HorizonMetrics evaluate(const StgcnModel& model, const GraphKernel& graph, const WindowedDataset& test,
                        int interval_minutes, const std::vector<int>& minutes) {
  if (interval_minutes <= 0) throw ConfigError("interval_minutes must be positive");
  std::vector<int> steps;
  for (int m : minutes) {
    if (m % interval_minutes != 0) throw ConfigError("horizon minutes must be a multiple of the sampling interval");
    steps.push_back(m / interval_minutes);
  }
  const Tensor pred = predict_sequence(model, graph, test.inputs, test.horizon(), test.stats);
  return metrics_at_steps(pred, test.targets, steps, interval_minutes);
}

BenchReport benchmark(const StgcnModel& model, const GraphKernel& graph, int batch, int runs, int warmup,
                      std::uint64_t seed) {
  if (batch <= 0 || runs <= 0 || warmup < 0) throw ConfigError("benchmark needs positive batch and runs");
  const auto& cfg = model.config();
  Tensor x(batch, cfg.history, cfg.nodes, 1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& v : x.values()) v = nd(rng);
  volatile double sink = 0.0;
  for (int i = 0; i < warmup; ++i) sink = sink + model.forward(x, graph).data()[0];
  double total = 0.0;
  for (int i = 0; i < runs; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const Tensor y = model.forward(x, graph);
    const auto stop = std::chrono::steady_clock::now();
    sink = sink + y.data()[0];
    total += std::chrono::duration<double>(stop - start).count();
  }
  BenchReport r;
  r.mean_seconds = total / runs;
  r.runs = runs;
  r.warmup = warmup;
  r.batch = batch;
  r.flops = count_flops(cfg, static_cast<std::uint64_t>(batch));
  return r;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,learning_rate,train_loss,val_rmse,teacher_ratio,routed,terms\n" << std::setprecision(10);
  for (const auto& r : history) {
    out << r.epoch + 1 << ',' << r.learning_rate << ',' << r.train_loss << ',' << r.val_rmse << ',';
    if (r.routing) out << r.teacher_ratio();
    out << ',' << r.routed << ',' << r.terms << '\n';
  }
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, HorizonMetrics>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "model,minutes,step,mape,mae,rmse\n" << std::setprecision(10);
  for (const auto& [name, m] : rows) {
    for (const auto& h : m.horizons) {
      out << name << ',' << h.minutes << ',' << h.step << ',';
      if (h.mape) out << *h.mape;
      out << ',' << h.mae << ',' << h.rmse << '\n';
    }
  }
}

std::string format_metrics_table(const std::vector<std::pair<std::string, HorizonMetrics>>& rows) {
  std::ostringstream os;
  std::vector<int> minutes;
  if (!rows.empty()) {
    for (const auto& h : rows.front().second.horizons) minutes.push_back(h.minutes);
  }
  os << std::left << std::setw(24) << "Model";
  for (const char* metric : {"MAPE", "MAE", "RMSE"}) {
    for (int m : minutes) os << std::right << std::setw(10) << (std::string(metric) + "@" + std::to_string(m));
  }
  os << '\n' << std::fixed << std::setprecision(3);
  for (const auto& [name, m] : rows) {
    os << std::left << std::setw(24) << name << std::right;
    for (const auto& h : m.horizons) {
      if (h.mape) {
        os << std::setw(10) << *h.mape;
      } else {
        os << std::setw(10) << "-";
      }
    }
    for (const auto& h : m.horizons) os << std::setw(10) << h.mae;
    for (const auto& h : m.horizons) os << std::setw(10) << h.rmse;
    os << '\n';
  }
  return os.str();
}

}  // namespace stkd
