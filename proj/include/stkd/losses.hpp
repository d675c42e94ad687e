#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stkd/errors.hpp"
#include "stkd/model.hpp"
#include "stkd/tensor.hpp"

namespace stkd {

struct LossWeights {
  double alpha1 = 0.5;  // routing threshold on min-max normalized teacher error
  double alpha2 = 0.5;  // spatial vs temporal mix
  double alpha3 = 0.0;  // hidden-layer weight
  double beta = 0.5;    // teacher vs target mix for response losses

  void validate() const;
};

/// Student, teacher and ground truth, each (batch x nodes), same units.
struct ResponseTriple {
  RowMatrix student;
  RowMatrix teacher;
  RowMatrix target;

  void validate() const;
  int batch() const { return static_cast<int>(student.rows()); }
  int nodes() const { return static_cast<int>(student.cols()); }
};

enum class LossKind { target, rd_l2, rd_kl, ord, tcd, scd, stcd };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

/// KL(teacher || student) between two distributions: sum_i p_t log(p_t / p_s).
double kl_divergence(const Eigen::RowVectorXd& teacher_dist, const Eigen::RowVectorXd& student_dist);

/// Mean over batch and nodes of |y_s - target|.
double loss_target(const RowMatrix& student, const RowMatrix& target, RowMatrix* d_student = nullptr);

double loss_rd_l2(const ResponseTriple& r, double beta, RowMatrix* d_student = nullptr);

/// Softmax over nodes turns each batch row into a distribution; KL summed over nodes,
/// target term averaged over nodes, both averaged over the batch.
double loss_rd_kl(const ResponseTriple& r, double beta, RowMatrix* d_student = nullptr);

struct OrdResult {
  double value = 0.0;
  double teacher_ratio = 0.0;
  std::size_t routed = 0;  // node terms supervised by the teacher
  std::size_t terms = 0;   // batch * nodes
};

/// Per-node routing decision (1 = teacher) after min-max normalization of |y_t - target|.
std::vector<std::uint8_t> teacher_routing(const ResponseTriple& r, double alpha1);

OrdResult loss_ord(const ResponseTriple& r, double alpha1, RowMatrix* d_student = nullptr);

/// TCD[b,n,i,j] = mean_c |F[b,i,n,c] - F[b,j,n,c]|, returned as (B, N, T, T).
Tensor correlation_tensor_temporal(const Tensor& features);
/// SCD[b,t,i,j] = mean_c |F[b,t,i,c] - F[b,t,j,c]|, returned as (B, T, N, N).
Tensor correlation_tensor_spatial(const Tensor& features);

/// Single tap pair; gradient (if requested) is w.r.t. the student tap and is accumulated
/// with the given scale.
double tcd_pair(const Tensor& student, const Tensor& teacher, Tensor* d_student = nullptr, double scale = 1.0);
double scd_pair(const Tensor& student, const Tensor& teacher, Tensor* d_student = nullptr, double scale = 1.0);

/// Averages over all corresponding temporal (resp. spatial) tap pairs.
double loss_tcd(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                std::vector<Tensor>* d_student = nullptr, double scale = 1.0);
double loss_scd(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                std::vector<Tensor>* d_student = nullptr, double scale = 1.0);

struct LossResult {
  double value = 0.0;
  double teacher_ratio = 0.0;
  std::size_t routed = 0;
  std::size_t terms = 0;
  bool routing_applies = false;
  RowMatrix d_student;
  FeatureTaps d_taps;
};

/// L_ORD + alpha3 * (alpha2 * L_SCD + (1 - alpha2) * L_TCD).
LossResult loss_stcd(const ResponseTriple& r, const FeatureTaps& student_taps, const FeatureTaps& teacher_taps,
                     const LossWeights& w, bool with_gradient = false);

/// Training objective for a loss kind. `tcd` and `scd` are the single-branch ablations
/// (L_ORD + alpha3 * branch); `target` ignores the teacher.
LossResult training_loss(LossKind kind, const ResponseTriple& r, const FeatureTaps* student_taps,
                         const FeatureTaps* teacher_taps, const LossWeights& w, bool with_gradient);

}  // namespace stkd
