#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stkd/errors.hpp"
#include "stkd/graph.hpp"
#include "stkd/layers.hpp"
#include "stkd/tensor.hpp"

namespace stkd {

/// Channels of one spatio-temporal block: temporal c_in -> c_mid, spatial c_mid -> c_mid,
/// temporal c_mid -> c_out.
struct BlockChannels {
  int c_in = 1;
  int c_mid = 1;
  int c_out = 1;

  bool operator==(const BlockChannels&) const = default;
};

struct ModelConfig {
  std::array<BlockChannels, 2> blocks{};
  int temporal_kernel = 3;
  int spatial_order = 3;
  int nodes = 1;
  int history = 12;
  double dropout = 0.0;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  /// Timesteps left for the output block after the four temporal convolutions.
  int output_kernel() const { return history - 4 * (temporal_kernel - 1); }

  static ModelConfig teacher(int nodes);
  static ModelConfig pruning_base(int nodes);
  static ModelConfig student(int nodes);

  bool operator==(const ModelConfig&) const = default;
};

/// Hidden-layer outputs captured during a forward pass.
struct FeatureTaps {
  std::vector<Tensor> temporal;  // block1.t1, block1.t2, block2.t1, block2.t2
  std::vector<Tensor> spatial;   // block1.s, block2.s
};

struct MaskTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<std::uint8_t> keep;

  std::size_t size() const { return keep.size(); }
  std::size_t masked() const;
};

struct MaskSet {
  std::vector<MaskTensor> tensors;

  std::size_t total() const;
  std::size_t masked() const;
  double sparsity() const;
  const MaskTensor* find(const std::string& name) const;
};

/// Intermediate state kept by a training forward pass for the matching backward pass.
struct ForwardTrace {
  struct Block {
    TemporalConv::Cache t1;
    ChebConv::Cache spatial;
    TemporalConv::Cache t2;
    LayerNorm::Cache norm;
    std::vector<double> dropout_scale;
  };
  std::array<Block, 2> blocks;
  TemporalConv::Cache out_temporal;
  LayerNorm::Cache out_norm;
  TemporalConv::Cache out_gate;
  NodeProjection::Cache out_fc;
};

/// Two spatio-temporal blocks plus an output block; maps (batch, M, N, 1) to (batch, 1, N, 1).
class StgcnModel {
 public:
  StgcnModel() = default;
  StgcnModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Tensor forward(const Tensor& x, const GraphKernel& graph, FeatureTaps* taps = nullptr,
                 ForwardTrace* trace = nullptr, std::mt19937_64* dropout_rng = nullptr) const;

  /// Accumulates parameter gradients from d(prediction) and optional d(taps).
  void backward(const ForwardTrace& trace, const GraphKernel& graph, const Tensor& d_prediction,
                const FeatureTaps* d_taps = nullptr);

  /// Output of the second block (after normalization), (batch, T, N, c_out).
  Tensor hidden_features(const Tensor& x, const GraphKernel& graph) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find_parameter(const std::string& name);
  const Parameter* find_parameter(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// All-ones mask over the maskable (hidden-block weight) tensors.
  MaskSet full_mask() const;
  /// Installs a persistent mask and zeroes the masked weights.
  void apply_mask(const MaskSet& masks);
  /// Re-zeroes masked weights (and their gradients) after an update.
  void enforce_mask();
  const std::optional<MaskSet>& mask() const { return mask_; }

 private:
  struct Block {
    TemporalConv t1;
    ChebConv spatial;
    TemporalConv t2;
    LayerNorm norm;
  };

  Tensor run(const Tensor& x, const GraphKernel& graph, FeatureTaps* taps, ForwardTrace* trace,
             std::mt19937_64* dropout_rng, Tensor* hidden) const;

  ModelConfig config_;
  std::array<Block, 2> blocks_;
  TemporalConv out_temporal_;
  LayerNorm out_norm_;
  TemporalConv out_gate_;
  NodeProjection out_fc_;
  std::optional<MaskSet> mask_;
};

/// Closed-form trainable parameter count for a configuration.
std::size_t parameter_count(const ModelConfig& config);

/// Mask with exactly ceil(fraction * size) zeros per maskable tensor, at seeded random positions.
MaskSet random_mask(const StgcnModel& model, double fraction, std::uint64_t seed);

/// Multiply-accumulates of one forward pass for a single sample.
std::uint64_t count_macs(const ModelConfig& config);
/// 2 x multiply-accumulates for one forward pass over `batch` samples.
std::uint64_t count_flops(const ModelConfig& config, std::uint64_t batch);

}  // namespace stkd
