#include "stkd/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stkd {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  for (const auto& b : blocks) {
    if (b.c_in < 1 || b.c_mid < 1 || b.c_out < 1) fail("all channels must be >= 1");
  }
  if (blocks[0].c_in != 1) fail("first block must take the single speed channel (c_in = 1)");
  if (blocks[1].c_in != blocks[0].c_out) {
    fail("block 2 c_in (" + std::to_string(blocks[1].c_in) + ") must equal block 1 c_out (" +
         std::to_string(blocks[0].c_out) + ")");
  }
  if (temporal_kernel < 1) fail("temporal kernel must be positive");
  if (spatial_order < 1) fail("spatial order must be positive");
  if (nodes < 1) fail("node count must be positive");
  if (history <= 4 * (temporal_kernel - 1)) {
    fail("history M=" + std::to_string(history) + " must exceed 4*(K_t-1)=" + std::to_string(4 * (temporal_kernel - 1)));
  }
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
}

ModelConfig ModelConfig::teacher(int nodes) {
  ModelConfig c;
  c.blocks = {BlockChannels{1, 32, 64}, BlockChannels{64, 32, 128}};
  c.nodes = nodes;
  return c;
}

ModelConfig ModelConfig::pruning_base(int nodes) {
  ModelConfig c;
  c.blocks = {BlockChannels{1, 8, 16}, BlockChannels{16, 8, 32}};
  c.nodes = nodes;
  return c;
}

ModelConfig ModelConfig::student(int nodes) {
  ModelConfig c;
  c.blocks = {BlockChannels{1, 2, 4}, BlockChannels{4, 2, 8}};
  c.nodes = nodes;
  return c;
}

std::size_t MaskTensor::masked() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{0}));
}

std::size_t MaskSet::total() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

std::size_t MaskSet::masked() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.masked();
  return n;
}

double MaskSet::sparsity() const {
  const auto n = total();
  return n ? static_cast<double>(masked()) / static_cast<double>(n) : 0.0;
}

const MaskTensor* MaskSet::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

StgcnModel::StgcnModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const int kt = config_.temporal_kernel;
  for (int i = 0; i < 2; ++i) {
    const auto& ch = config_.blocks[i];
    const std::string p = "block" + std::to_string(i + 1);
    blocks_[i].t1 = TemporalConv(p + ".temporal1", kt, ch.c_in, ch.c_mid, Activation::glu, true);
    blocks_[i].spatial = ChebConv(p + ".spatial", config_.spatial_order, ch.c_mid, ch.c_mid, true);
    blocks_[i].t2 = TemporalConv(p + ".temporal2", kt, ch.c_mid, ch.c_out, Activation::relu, true);
    blocks_[i].norm = LayerNorm(p + ".norm", config_.nodes, ch.c_out);
  }
  const int c = config_.blocks[1].c_out;
  out_temporal_ = TemporalConv("output.temporal", config_.output_kernel(), c, c, Activation::glu, false);
  out_norm_ = LayerNorm("output.norm", config_.nodes, c);
  out_gate_ = TemporalConv("output.gate", 1, c, c, Activation::sigmoid, false);
  out_fc_ = NodeProjection("output.fc", config_.nodes, c);

  std::mt19937_64 rng(seed);
  for (auto& b : blocks_) {
    b.t1.init(rng);
    b.spatial.init(rng);
    b.t2.init(rng);
  }
  out_temporal_.init(rng);
  out_gate_.init(rng);
  out_fc_.init(rng);
}

Tensor StgcnModel::run(const Tensor& x, const GraphKernel& graph, FeatureTaps* taps, ForwardTrace* trace,
                       std::mt19937_64* dropout_rng, Tensor* hidden) const {
  if (x.time() != config_.history || x.nodes() != config_.nodes || x.channels() != 1) {
    throw ShapeError("model input must be (batch, " + std::to_string(config_.history) + ", " +
                     std::to_string(config_.nodes) + ", 1), got " + x.shape_string());
  }
  if (graph.nodes() != config_.nodes) {
    throw ShapeError("graph kernel has " + std::to_string(graph.nodes()) + " nodes, model expects " +
                     std::to_string(config_.nodes));
  }
  if (taps) {
    taps->temporal.clear();
    taps->spatial.clear();
  }
  Tensor h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& blk = blocks_[i];
    ForwardTrace::Block* tb = trace ? &trace->blocks[i] : nullptr;
    Tensor a = blk.t1.forward(h, tb ? &tb->t1 : nullptr);
    Tensor s = blk.spatial.forward(a, graph, tb ? &tb->spatial : nullptr);
    Tensor c = blk.t2.forward(s, tb ? &tb->t2 : nullptr);
    Tensor n = blk.norm.forward(c, tb ? &tb->norm : nullptr);
    if (taps) {
      taps->temporal.push_back(std::move(a));
      taps->spatial.push_back(std::move(s));
      taps->temporal.push_back(std::move(c));
    }
    if (tb) tb->dropout_scale.clear();
    if (dropout_rng && config_.dropout > 0.0) {
      std::bernoulli_distribution keep(1.0 - config_.dropout);
      const double scale = 1.0 / (1.0 - config_.dropout);
      std::vector<double> factors(n.size());
      for (std::size_t k = 0; k < n.size(); ++k) {
        factors[k] = keep(*dropout_rng) ? scale : 0.0;
        n.data()[k] *= factors[k];
      }
      if (tb) tb->dropout_scale = std::move(factors);
    }
    h = std::move(n);
  }
  if (hidden) *hidden = h;
  Tensor o = out_temporal_.forward(h, trace ? &trace->out_temporal : nullptr);
  o = out_norm_.forward(o, trace ? &trace->out_norm : nullptr);
  o = out_gate_.forward(o, trace ? &trace->out_gate : nullptr);
  return out_fc_.forward(o, trace ? &trace->out_fc : nullptr);
}

Tensor StgcnModel::forward(const Tensor& x, const GraphKernel& graph, FeatureTaps* taps, ForwardTrace* trace,
                           std::mt19937_64* dropout_rng) const {
  return run(x, graph, taps, trace, dropout_rng, nullptr);
}

Tensor StgcnModel::hidden_features(const Tensor& x, const GraphKernel& graph) const {
  Tensor hidden;
  run(x, graph, nullptr, nullptr, nullptr, &hidden);
  return hidden;
}

void StgcnModel::backward(const ForwardTrace& trace, const GraphKernel& graph, const Tensor& d_prediction,
                          const FeatureTaps* d_taps) {
  if (d_taps && (d_taps->temporal.size() > 4 || d_taps->spatial.size() > 2)) {
    throw ShapeError("too many tap gradients");
  }
  auto tap_grad = [&](const std::vector<Tensor>& list, std::size_t idx) -> const Tensor* {
    if (!d_taps || idx >= list.size() || list[idx].empty()) return nullptr;
    return &list[idx];
  };

  Tensor g = out_fc_.backward(trace.out_fc, d_prediction);
  g = out_gate_.backward(trace.out_gate, g);
  g = out_norm_.backward(trace.out_norm, g);
  g = out_temporal_.backward(trace.out_temporal, g);
  for (int i = 1; i >= 0; --i) {
    Block& blk = blocks_[i];
    const auto& tb = trace.blocks[i];
    if (!tb.dropout_scale.empty()) {
      for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] *= tb.dropout_scale[k];
    }
    g = blk.norm.backward(tb.norm, g);
    if (const Tensor* t = d_taps ? tap_grad(d_taps->temporal, 2 * i + 1) : nullptr) g += *t;
    g = blk.t2.backward(tb.t2, g);
    if (const Tensor* t = d_taps ? tap_grad(d_taps->spatial, i) : nullptr) g += *t;
    g = blk.spatial.backward(tb.spatial, graph, g);
    if (const Tensor* t = d_taps ? tap_grad(d_taps->temporal, 2 * i) : nullptr) g += *t;
    g = blk.t1.backward(tb.t1, g);
  }
}

std::vector<Parameter*> StgcnModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& b : blocks_) {
    b.t1.collect(out);
    b.spatial.collect(out);
    b.t2.collect(out);
    b.norm.collect(out);
  }
  out_temporal_.collect(out);
  out_norm_.collect(out);
  out_gate_.collect(out);
  out_fc_.collect(out);
  return out;
}

std::vector<const Parameter*> StgcnModel::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& b : blocks_) {
    b.t1.collect(out);
    b.spatial.collect(out);
    b.t2.collect(out);
    b.norm.collect(out);
  }
  out_temporal_.collect(out);
  out_norm_.collect(out);
  out_gate_.collect(out);
  out_fc_.collect(out);
  return out;
}

Parameter* StgcnModel::find_parameter(const std::string& name) {
  for (auto* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

const Parameter* StgcnModel::find_parameter(const std::string& name) const {
  for (const auto* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

std::size_t StgcnModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

void StgcnModel::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

MaskSet StgcnModel::full_mask() const {
  MaskSet m;
  for (const auto* p : parameters()) {
    if (!p->maskable) continue;
    m.tensors.push_back(MaskTensor{p->name, p->shape, std::vector<std::uint8_t>(p->size(), 1)});
  }
  return m;
}

void StgcnModel::apply_mask(const MaskSet& masks) {
  for (const auto& t : masks.tensors) {
    const Parameter* p = find_parameter(t.name);
    if (!p) throw ShapeError("mask names unknown tensor '" + t.name + "'");
    if (!p->maskable) throw ShapeError("tensor '" + t.name + "' is not a hidden-block weight");
    if (t.shape != p->shape || t.keep.size() != p->size()) {
      throw ShapeError("mask shape mismatch for tensor '" + t.name + "'");
    }
  }
  mask_ = masks;
  enforce_mask();
}

void StgcnModel::enforce_mask() {
  if (!mask_) return;
  for (const auto& t : mask_->tensors) {
    Parameter* p = find_parameter(t.name);
    for (std::size_t k = 0; k < t.keep.size(); ++k) {
      if (!t.keep[k]) {
        p->value[k] = 0.0;
        p->grad[k] = 0.0;
      }
    }
  }
}

std::size_t parameter_count(const ModelConfig& config) {
  config.validate();
  const std::size_t kt = static_cast<std::size_t>(config.temporal_kernel);
  const std::size_t ks = static_cast<std::size_t>(config.spatial_order);
  const std::size_t n = static_cast<std::size_t>(config.nodes);
  auto temporal = [&](std::size_t k, std::size_t ci, std::size_t co, bool glu) {
    const std::size_t oc = glu ? 2 * co : co;
    return k * ci * oc + oc + (ci > co ? ci * co : 0);
  };
  std::size_t total = 0;
  for (const auto& b : config.blocks) {
    const std::size_t ci = b.c_in, cm = b.c_mid, co = b.c_out;
    total += temporal(kt, ci, cm, true);
    total += ks * cm * cm + cm;
    total += temporal(kt, cm, co, false);
    total += 2 * n * co;
  }
  const std::size_t c = config.blocks[1].c_out;
  total += static_cast<std::size_t>(config.output_kernel()) * c * 2 * c + 2 * c;
  total += 2 * n * c;
  total += c * c + c;
  total += c + n;
  return total;
}

MaskSet random_mask(const StgcnModel& model, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ConfigError("mask fraction must lie in [0, 1]");
  MaskSet m = model.full_mask();
  std::mt19937_64 rng(seed);
  for (auto& t : m.tensors) {
    const auto zeros = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(t.size()) - 1e-9));
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < zeros; ++k) t.keep[idx[k]] = 0;
  }
  return m;
}

}  // namespace stkd
