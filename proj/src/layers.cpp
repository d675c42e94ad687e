#include "stkd/layers.hpp"

#include <algorithm>
#include <cmath>

namespace stkd {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

RowMatrixMap as_matrix(Parameter& p, int rows, int cols) { return RowMatrixMap(p.value.data(), rows, cols); }
ConstRowMatrixMap as_matrix(const Parameter& p, int rows, int cols) {
  return ConstRowMatrixMap(p.value.data(), rows, cols);
}
RowMatrixMap grad_matrix(Parameter& p, int rows, int cols) { return RowMatrixMap(p.grad.data(), rows, cols); }

/// Whole tensor viewed as (B*T*N x C).
RowMatrixMap flat(Tensor& t) {
  return RowMatrixMap(t.data(), static_cast<Eigen::Index>(t.batch()) * t.time() * t.nodes(), t.channels());
}
ConstRowMatrixMap flat(const Tensor& t) {
  return ConstRowMatrixMap(t.data(), static_cast<Eigen::Index>(t.batch()) * t.time() * t.nodes(), t.channels());
}

/// (B,T,N,C) -> (N x B*T*C), node-major so every slab is multiplied by one GEMM.
RowMatrix to_node_major(const Tensor& x) {
  const int slabs = x.batch() * x.time();
  const int n = x.nodes();
  const int c = x.channels();
  RowMatrix out(n, static_cast<Eigen::Index>(slabs) * c);
  const double* src = x.data();
  for (int s = 0; s < slabs; ++s) {
    for (int i = 0; i < n; ++i) {
      std::copy_n(src + (static_cast<std::size_t>(s) * n + i) * c, c, out.data() + i * out.cols() + s * c);
    }
  }
  return out;
}

}  // namespace

Parameter::Parameter(std::string name_, std::vector<int> shape_, bool maskable_)
    : name(std::move(name_)), shape(std::move(shape_)), maskable(maskable_) {
  value.assign(product(shape), 0.0);
  grad.assign(value.size(), 0.0);
}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void Parameter::glorot_init(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : value) v = u(rng);
}

// ---------------------------------------------------------------------------
// TemporalConv

TemporalConv::TemporalConv(std::string prefix, int kernel, int c_in, int c_out, Activation act, bool maskable)
    : kernel_(kernel), c_in_(c_in), c_out_(c_out), act_(act) {
  has_projection_ = uses_residual() && c_in > c_out;
  weight_ = Parameter(prefix + ".weight", {kernel, c_in, out_channels()}, maskable);
  bias_ = Parameter(prefix + ".bias", {out_channels()});
  if (has_projection_) projection_ = Parameter(prefix + ".projection", {c_in, c_out}, maskable);
}

void TemporalConv::init(std::mt19937_64& rng) {
  weight_.glorot_init(kernel_ * c_in_, out_channels(), rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
  if (has_projection_) projection_.glorot_init(c_in_, c_out_, rng);
}

void TemporalConv::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
  if (has_projection_) out.push_back(&projection_);
}

void TemporalConv::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight_);
  out.push_back(&bias_);
  if (has_projection_) out.push_back(&projection_);
}

Tensor TemporalConv::residual_path(const Tensor& x) const {
  const int t_out = x.time() - kernel_ + 1;
  Tensor aligned = x.slice_time(kernel_ - 1, t_out);
  if (c_in_ == c_out_) return aligned;
  Tensor out(x.batch(), t_out, x.nodes(), c_out_);
  if (has_projection_) {
    flat(out).noalias() = flat(aligned) * as_matrix(projection_, c_in_, c_out_);
  } else {
    flat(out).leftCols(c_in_) = flat(aligned);
  }
  return out;
}

Tensor TemporalConv::forward(const Tensor& x, Cache* cache) const {
  if (x.channels() != c_in_) {
    throw ShapeError(weight_.name + ": expected " + std::to_string(c_in_) + " input channels, got " +
                     x.shape_string());
  }
  const int t_out = x.time() - kernel_ + 1;
  if (t_out < 1) throw ShapeError(weight_.name + ": input has fewer timesteps than the kernel");
  const int oc = out_channels();

  Tensor conv(x.batch(), t_out, x.nodes(), oc);
  const Eigen::Map<const Eigen::RowVectorXd> bias(bias_.value.data(), oc);
  for (int b = 0; b < x.batch(); ++b) {
    auto out_rows = conv.rows(b, 0, t_out);
    out_rows.rowwise() = bias;
    for (int k = 0; k < kernel_; ++k) {
      ConstRowMatrixMap wk(weight_.value.data() + static_cast<std::size_t>(k) * c_in_ * oc, c_in_, oc);
      out_rows.noalias() += x.rows(b, k, t_out) * wk;
    }
  }

  Tensor y(x.batch(), t_out, x.nodes(), c_out_);
  Tensor residual;
  if (uses_residual()) residual = residual_path(x);
  const std::size_t rows = static_cast<std::size_t>(x.batch()) * t_out * x.nodes();
  const double* cv = conv.data();
  double* yv = y.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* crow = cv + r * oc;
    double* yrow = yv + r * c_out_;
    switch (act_) {
      case Activation::glu: {
        const double* res = residual.data() + r * c_out_;
        for (int c = 0; c < c_out_; ++c) yrow[c] = (crow[c] + res[c]) * sigmoid(crow[c_out_ + c]);
        break;
      }
      case Activation::relu: {
        const double* res = residual.data() + r * c_out_;
        for (int c = 0; c < c_out_; ++c) yrow[c] = std::max(0.0, crow[c] + res[c]);
        break;
      }
      case Activation::sigmoid:
        for (int c = 0; c < c_out_; ++c) yrow[c] = sigmoid(crow[c]);
        break;
      case Activation::linear:
        for (int c = 0; c < c_out_; ++c) yrow[c] = crow[c];
        break;
    }
  }
  if (cache) {
    cache->input = x;
    cache->conv = std::move(conv);
    cache->residual = std::move(residual);
  }
  return y;
}

Tensor TemporalConv::backward(const Cache& cache, const Tensor& dy) {
  const Tensor& x = cache.input;
  const int t_out = x.time() - kernel_ + 1;
  const int oc = out_channels();
  require_same_dims(dy, Tensor(x.batch(), t_out, x.nodes(), c_out_), weight_.name.c_str());

  Tensor dconv(x.batch(), t_out, x.nodes(), oc);
  Tensor dres;
  if (uses_residual()) dres = Tensor(x.batch(), t_out, x.nodes(), c_out_);
  const std::size_t rows = static_cast<std::size_t>(x.batch()) * t_out * x.nodes();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* crow = cache.conv.data() + r * oc;
    const double* g = dy.data() + r * c_out_;
    double* dc = dconv.data() + r * oc;
    switch (act_) {
      case Activation::glu: {
        const double* res = cache.residual.data() + r * c_out_;
        double* dr = dres.data() + r * c_out_;
        for (int c = 0; c < c_out_; ++c) {
          const double gate = sigmoid(crow[c_out_ + c]);
          const double lin = crow[c] + res[c];
          dc[c] = g[c] * gate;
          dr[c] = g[c] * gate;
          dc[c_out_ + c] = g[c] * lin * gate * (1.0 - gate);
        }
        break;
      }
      case Activation::relu: {
        const double* res = cache.residual.data() + r * c_out_;
        double* dr = dres.data() + r * c_out_;
        for (int c = 0; c < c_out_; ++c) {
          const double d = (crow[c] + res[c]) > 0.0 ? g[c] : 0.0;
          dc[c] = d;
          dr[c] = d;
        }
        break;
      }
      case Activation::sigmoid:
        for (int c = 0; c < c_out_; ++c) {
          const double s = sigmoid(crow[c]);
          dc[c] = g[c] * s * (1.0 - s);
        }
        break;
      case Activation::linear:
        for (int c = 0; c < c_out_; ++c) dc[c] = g[c];
        break;
    }
  }

  Tensor dx(x.dims());
  Eigen::Map<Eigen::RowVectorXd> dbias(bias_.grad.data(), oc);
  for (int b = 0; b < x.batch(); ++b) {
    auto dconv_rows = dconv.rows(b, 0, t_out);
    dbias += dconv_rows.colwise().sum();
    for (int k = 0; k < kernel_; ++k) {
      const std::size_t off = static_cast<std::size_t>(k) * c_in_ * oc;
      ConstRowMatrixMap wk(weight_.value.data() + off, c_in_, oc);
      RowMatrixMap dwk(weight_.grad.data() + off, c_in_, oc);
      dwk.noalias() += x.rows(b, k, t_out).transpose() * dconv_rows;
      dx.rows(b, k, t_out).noalias() += dconv_rows * wk.transpose();
    }
  }

  if (uses_residual()) {
    for (int b = 0; b < x.batch(); ++b) {
      auto dres_rows = dres.rows(b, 0, t_out);
      auto dx_rows = dx.rows(b, kernel_ - 1, t_out);
      if (c_in_ == c_out_) {
        dx_rows += dres_rows;
      } else if (has_projection_) {
        grad_matrix(projection_, c_in_, c_out_).noalias() += x.rows(b, kernel_ - 1, t_out).transpose() * dres_rows;
        dx_rows.noalias() += dres_rows * as_matrix(projection_, c_in_, c_out_).transpose();
      } else {
        dx_rows += dres_rows.leftCols(c_in_);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ChebConv

ChebConv::ChebConv(std::string prefix, int order, int c_in, int c_out, bool maskable)
    : order_(order), c_in_(c_in), c_out_(c_out), has_projection_(c_in > c_out) {
  theta_ = Parameter(prefix + ".theta", {order * c_in, c_out}, maskable);
  bias_ = Parameter(prefix + ".bias", {c_out});
  if (has_projection_) projection_ = Parameter(prefix + ".projection", {c_in, c_out}, maskable);
}

void ChebConv::init(std::mt19937_64& rng) {
  theta_.glorot_init(order_ * c_in_, c_out_, rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
  if (has_projection_) projection_.glorot_init(c_in_, c_out_, rng);
}

void ChebConv::collect(std::vector<Parameter*>& out) {
  out.push_back(&theta_);
  out.push_back(&bias_);
  if (has_projection_) out.push_back(&projection_);
}

void ChebConv::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&theta_);
  out.push_back(&bias_);
  if (has_projection_) out.push_back(&projection_);
}

Tensor ChebConv::forward(const Tensor& x, const GraphKernel& graph, Cache* cache) const {
  if (x.channels() != c_in_) throw ShapeError(theta_.name + ": channel mismatch, got " + x.shape_string());
  if (graph.nodes() != x.nodes()) {
    throw ShapeError(theta_.name + ": graph has " + std::to_string(graph.nodes()) + " nodes, input has " +
                     std::to_string(x.nodes()));
  }
  if (graph.order() != order_) throw ShapeError(theta_.name + ": graph kernel order mismatch");
  const int n = x.nodes();
  const int slabs = x.batch() * x.time();
  const int kc = order_ * c_in_;

  // (order*N x N) * (N x slabs*c_in)
  const RowMatrix propagated = graph.stacked() * to_node_major(x);
  Tensor basis(x.batch(), x.time(), n, kc);
  double* dst = basis.data();
  for (int s = 0; s < slabs; ++s) {
    for (int i = 0; i < n; ++i) {
      double* row = dst + (static_cast<std::size_t>(s) * n + i) * kc;
      for (int k = 0; k < order_; ++k) {
        std::copy_n(propagated.data() + (static_cast<std::size_t>(k) * n + i) * propagated.cols() + s * c_in_,
                    c_in_, row + k * c_in_);
      }
    }
  }

  Tensor pre(x.batch(), x.time(), n, c_out_);
  flat(pre).noalias() = flat(basis) * as_matrix(theta_, kc, c_out_);
  flat(pre).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias_.value.data(), c_out_);
  if (has_projection_) {
    flat(pre).noalias() += flat(x) * as_matrix(projection_, c_in_, c_out_);
  } else {
    flat(pre).leftCols(c_in_) += flat(x);
  }

  Tensor y(pre.dims());
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = std::max(0.0, pre.data()[i]);
  if (cache) {
    cache->input = x;
    cache->basis = std::move(basis);
    cache->pre = std::move(pre);
  }
  return y;
}

Tensor ChebConv::backward(const Cache& cache, const GraphKernel& graph, const Tensor& dy) {
  const Tensor& x = cache.input;
  require_same_dims(dy, cache.pre, theta_.name.c_str());
  const int n = x.nodes();
  const int slabs = x.batch() * x.time();
  const int kc = order_ * c_in_;

  Tensor dpre(dy.dims());
  for (std::size_t i = 0; i < dpre.size(); ++i) dpre.data()[i] = cache.pre.data()[i] > 0.0 ? dy.data()[i] : 0.0;

  grad_matrix(theta_, kc, c_out_).noalias() += flat(cache.basis).transpose() * flat(dpre);
  Eigen::Map<Eigen::RowVectorXd>(bias_.grad.data(), c_out_) += flat(dpre).colwise().sum();

  const RowMatrix dbasis = flat(dpre) * as_matrix(theta_, kc, c_out_).transpose();
  // scatter into (order*N x slabs*c_in) and pull back through the symmetric polynomials
  RowMatrix stacked_grad(static_cast<Eigen::Index>(order_) * n, static_cast<Eigen::Index>(slabs) * c_in_);
  for (int s = 0; s < slabs; ++s) {
    for (int i = 0; i < n; ++i) {
      const double* row = dbasis.data() + (static_cast<std::size_t>(s) * n + i) * kc;
      for (int k = 0; k < order_; ++k) {
        std::copy_n(row + k * c_in_, c_in_,
                    stacked_grad.data() + (static_cast<std::size_t>(k) * n + i) * stacked_grad.cols() + s * c_in_);
      }
    }
  }
  const RowMatrix dx_node_major = graph.stacked().transpose() * stacked_grad;

  Tensor dx(x.dims());
  double* dst = dx.data();
  for (int s = 0; s < slabs; ++s) {
    for (int i = 0; i < n; ++i) {
      std::copy_n(dx_node_major.data() + i * dx_node_major.cols() + s * c_in_, c_in_,
                  dst + (static_cast<std::size_t>(s) * n + i) * c_in_);
    }
  }
  if (has_projection_) {
    grad_matrix(projection_, c_in_, c_out_).noalias() += flat(x).transpose() * flat(dpre);
    flat(dx).noalias() += flat(dpre) * as_matrix(projection_, c_in_, c_out_).transpose();
  } else {
    flat(dx) += flat(dpre).leftCols(c_in_);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// LayerNorm

LayerNorm::LayerNorm(std::string prefix, int nodes, int channels) : nodes_(nodes), channels_(channels) {
  gamma_ = Parameter(prefix + ".gamma", {nodes, channels});
  beta_ = Parameter(prefix + ".beta", {nodes, channels});
  init();
}

void LayerNorm::init() {
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
  std::fill(beta_.value.begin(), beta_.value.end(), 0.0);
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void LayerNorm::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

Tensor LayerNorm::forward(const Tensor& x, Cache* cache) const {
  if (x.nodes() != nodes_ || x.channels() != channels_) {
    throw ShapeError(gamma_.name + ": expected (" + std::to_string(nodes_) + "," + std::to_string(channels_) +
                     ") plane, got " + x.shape_string());
  }
  const std::size_t plane = static_cast<std::size_t>(nodes_) * channels_;
  const std::size_t slabs = static_cast<std::size_t>(x.batch()) * x.time();
  Tensor y(x.dims());
  Tensor xhat(x.dims());
  std::vector<double> inv(slabs);
  for (std::size_t s = 0; s < slabs; ++s) {
    const double* in = x.data() + s * plane;
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += in[i];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<double>(plane);
    inv[s] = 1.0 / std::sqrt(var + kEps);
    double* xh = xhat.data() + s * plane;
    double* out = y.data() + s * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      xh[i] = (in[i] - mean) * inv[s];
      out[i] = xh[i] * gamma_.value[i] + beta_.value[i];
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Tensor LayerNorm::backward(const Cache& cache, const Tensor& dy) {
  require_same_dims(dy, cache.normalized, gamma_.name.c_str());
  const std::size_t plane = static_cast<std::size_t>(nodes_) * channels_;
  const std::size_t slabs = cache.inv_std.size();
  const double m = static_cast<double>(plane);
  Tensor dx(dy.dims());
  std::vector<double> dxhat(plane);
  for (std::size_t s = 0; s < slabs; ++s) {
    const double* g = dy.data() + s * plane;
    const double* xh = cache.normalized.data() + s * plane;
    double sum = 0.0;
    double dot = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      gamma_.grad[i] += g[i] * xh[i];
      beta_.grad[i] += g[i];
      dxhat[i] = g[i] * gamma_.value[i];
      sum += dxhat[i];
      dot += dxhat[i] * xh[i];
    }
    double* out = dx.data() + s * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      out[i] = cache.inv_std[s] / m * (m * dxhat[i] - sum - xh[i] * dot);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// NodeProjection

NodeProjection::NodeProjection(std::string prefix, int nodes, int channels) : nodes_(nodes), channels_(channels) {
  weight_ = Parameter(prefix + ".weight", {channels, 1});
  bias_ = Parameter(prefix + ".bias", {nodes});
}

void NodeProjection::init(std::mt19937_64& rng) {
  weight_.glorot_init(channels_, 1, rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

void NodeProjection::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void NodeProjection::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

Tensor NodeProjection::forward(const Tensor& x, Cache* cache) const {
  if (x.time() != 1 || x.nodes() != nodes_ || x.channels() != channels_) {
    throw ShapeError(weight_.name + ": unexpected input " + x.shape_string());
  }
  Tensor y(x.batch(), 1, nodes_, 1);
  const Eigen::Map<const Eigen::VectorXd> w(weight_.value.data(), channels_);
  for (int b = 0; b < x.batch(); ++b) {
    const Eigen::VectorXd out = x.slab(b, 0) * w;
    for (int n = 0; n < nodes_; ++n) y(b, 0, n, 0) = out(n) + bias_.value[n];
  }
  if (cache) cache->input = x;
  return y;
}

Tensor NodeProjection::backward(const Cache& cache, const Tensor& dy) {
  const Tensor& x = cache.input;
  Tensor dx(x.dims());
  Eigen::Map<Eigen::VectorXd> dw(weight_.grad.data(), channels_);
  const Eigen::Map<const Eigen::VectorXd> w(weight_.value.data(), channels_);
  for (int b = 0; b < x.batch(); ++b) {
    Eigen::VectorXd g(nodes_);
    for (int n = 0; n < nodes_; ++n) {
      g(n) = dy(b, 0, n, 0);
      bias_.grad[n] += g(n);
    }
    dw.noalias() += x.slab(b, 0).transpose() * g;
    dx.slab(b, 0).noalias() = g * w.transpose();
  }
  return dx;
}

}  // namespace stkd
