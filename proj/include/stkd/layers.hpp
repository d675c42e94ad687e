#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stkd/graph.hpp"
#include "stkd/tensor.hpp"

namespace stkd {

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool maskable = false;

  Parameter() = default;
  Parameter(std::string name_, std::vector<int> shape_, bool maskable_ = false);

  std::size_t size() const { return value.size(); }
  /// Output channels live on the last axis; one filter per output channel.
  int filters() const { return shape.empty() ? 1 : shape.back(); }
  void zero_grad();
  void glorot_init(int fan_in, int fan_out, std::mt19937_64& rng);
};

enum class Activation { glu, relu, sigmoid, linear };

/// 1-D convolution along time (no padding), with the residual input path used by ST-GCN:
/// a 1x1 projection when c_in > c_out, zero channel padding when c_in < c_out.
class TemporalConv {
 public:
  struct Cache {
    Tensor input;
    Tensor conv;      // pre-activation, out_channels() wide
    Tensor residual;  // aligned input path, c_out wide (glu/relu only)
  };

  TemporalConv() = default;
  TemporalConv(std::string prefix, int kernel, int c_in, int c_out, Activation act, bool maskable);

  int kernel() const { return kernel_; }
  int c_in() const { return c_in_; }
  int c_out() const { return c_out_; }
  int out_channels() const { return act_ == Activation::glu ? 2 * c_out_ : c_out_; }
  bool has_projection() const { return has_projection_; }

  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Cache& cache, const Tensor& dy);

  void init(std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  bool uses_residual() const { return act_ == Activation::glu || act_ == Activation::relu; }
  Tensor residual_path(const Tensor& x) const;

  int kernel_ = 1;
  int c_in_ = 1;
  int c_out_ = 1;
  Activation act_ = Activation::linear;
  bool has_projection_ = false;
  Parameter weight_;      // [kernel, c_in, out_channels]
  Parameter bias_;        // [out_channels]
  Parameter projection_;  // [c_in, c_out]
};

/// Chebyshev graph convolution of order K_s followed by a residual ReLU.
class ChebConv {
 public:
  struct Cache {
    Tensor input;
    Tensor basis;  // (B, T, N, order*c_in): T_k(L) X stacked along channels
    Tensor pre;    // pre-activation
  };

  ChebConv() = default;
  ChebConv(std::string prefix, int order, int c_in, int c_out, bool maskable);

  int order() const { return order_; }
  int c_in() const { return c_in_; }
  int c_out() const { return c_out_; }

  Tensor forward(const Tensor& x, const GraphKernel& graph, Cache* cache) const;
  Tensor backward(const Cache& cache, const GraphKernel& graph, const Tensor& dy);

  void init(std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  int order_ = 1;
  int c_in_ = 1;
  int c_out_ = 1;
  bool has_projection_ = false;
  Parameter theta_;       // [order*c_in, c_out], row k*c_in + c
  Parameter bias_;        // [c_out]
  Parameter projection_;  // [c_in, c_out]
};

/// Normalization over the (node, channel) plane of each (batch, time) slab.
class LayerNorm {
 public:
  struct Cache {
    Tensor normalized;
    std::vector<double> inv_std;
  };
  static constexpr double kEps = 1e-6;

  LayerNorm() = default;
  LayerNorm(std::string prefix, int nodes, int channels);

  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Cache& cache, const Tensor& dy);

  void init();
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  int nodes_ = 1;
  int channels_ = 1;
  Parameter gamma_;  // [N, C]
  Parameter beta_;   // [N, C]
};

/// Per-node channel collapse: y[b,0,n,0] = x[b,0,n,:] . w + bias[n].
class NodeProjection {
 public:
  struct Cache {
    Tensor input;
  };

  NodeProjection() = default;
  NodeProjection(std::string prefix, int nodes, int channels);

  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Cache& cache, const Tensor& dy);

  void init(std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  int nodes_ = 1;
  int channels_ = 1;
  Parameter weight_;  // [C, 1]
  Parameter bias_;    // [N]
};

double sigmoid(double x);

}  // namespace stkd
