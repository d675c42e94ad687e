#include "stkd/projection.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "stkd/errors.hpp"

namespace stkd {

RowMatrix hidden_feature_matrix(const StgcnModel& model, const GraphKernel& graph, const Tensor& inputs) {
  const Tensor h = model.hidden_features(inputs, graph);
  RowMatrix out(h.batch(), static_cast<Eigen::Index>(h.time()) * h.nodes());
  for (int b = 0; b < h.batch(); ++b) {
    for (int t = 0; t < h.time(); ++t) {
      const auto slab = h.slab(b, t);
      for (int n = 0; n < h.nodes(); ++n) out(b, static_cast<Eigen::Index>(t) * h.nodes() + n) = slab.row(n).mean();
    }
  }
  return out;
}

ScatterData export_hidden_projection(const std::vector<std::pair<std::string, const StgcnModel*>>& models,
                                     const GraphKernel& graph, const WindowedDataset& test, int sample_count) {
  if (models.empty()) throw ConfigError("no models to project");
  if (sample_count <= 0) throw ConfigError("sample_count must be positive");
  int used = sample_count;
  if (test.samples() < sample_count) {
    std::cerr << "warning: only " << test.samples() << " test samples available, projecting those\n";
    used = test.samples();
  }
  if (used == 0) throw InsufficientDataError("test split is empty");
  Tensor batch(used, test.inputs.time(), test.inputs.nodes(), test.inputs.channels());
  std::copy_n(test.inputs.data(), batch.size(), batch.data());

  std::vector<RowMatrix> feats;
  for (const auto& [label, model] : models) feats.push_back(hidden_feature_matrix(*model, graph, batch));
  const Eigen::Index dim = feats.front().cols();
  for (const auto& f : feats) {
    if (f.cols() != dim) throw ShapeError("models produce hidden features of different sizes");
  }
  RowMatrix all(used * static_cast<Eigen::Index>(feats.size()), dim);
  for (std::size_t m = 0; m < feats.size(); ++m) all.middleRows(static_cast<Eigen::Index>(m) * used, used) = feats[m];
  const Eigen::RowVectorXd mean = all.colwise().mean();
  RowMatrix centered = all.rowwise() - mean;

  // Covariance eigenvectors via SVD of the centered data; singular values descend.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double total = sv.squaredNorm();
  const Eigen::Index comps = std::min<Eigen::Index>(2, sv.size());
  Eigen::MatrixXd axes = Eigen::MatrixXd::Zero(dim, 2);
  axes.leftCols(comps) = svd.matrixV().leftCols(comps);
  // Fix the sign of each axis so the projection is reproducible.
  for (Eigen::Index c = 0; c < comps; ++c) {
    Eigen::Index arg = 0;
    axes.col(c).cwiseAbs().maxCoeff(&arg);
    if (axes(arg, c) < 0) axes.col(c) *= -1.0;
  }
  const Eigen::MatrixXd proj = centered * axes;

  ScatterData out;
  out.feature_dim = static_cast<int>(dim);
  out.samples_used = used;
  for (Eigen::Index c = 0; c < 2; ++c) {
    out.explained_variance_ratio.push_back(c < comps && total > 0 ? sv(c) * sv(c) / total : 0.0);
  }
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (int s = 0; s < used; ++s) {
      const Eigen::Index row = static_cast<Eigen::Index>(m) * used + s;
      out.points.push_back({models[m].first, s, proj(row, 0), proj(row, 1)});
    }
  }
  return out;
}

void write_scatter_csv(const std::filesystem::path& path, const ScatterData& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "model,sample,pc1,pc2\n" << std::setprecision(10);
  for (const auto& p : data.points) out << p.label << ',' << p.sample << ',' << p.x << ',' << p.y << '\n';
}

}  // namespace stkd
