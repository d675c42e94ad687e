#include "stkd/losses.hpp"

#include <algorithm>
#include <cmath>

namespace stkd {
namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

void check_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
}

Eigen::RowVectorXd log_softmax(const Eigen::RowVectorXd& y) {
  const double m = y.maxCoeff();
  const double lse = m + std::log((y.array() - m).exp().sum());
  return (y.array() - lse).matrix();
}

void require_tap_lists(const std::vector<Tensor>& s, const std::vector<Tensor>& t, const char* what) {
  if (s.size() != t.size() || s.empty()) {
    throw ShapeError(std::string(what) + ": tap count mismatch (" + std::to_string(s.size()) + " vs " +
                     std::to_string(t.size()) + ")");
  }
}

void require_pairable(const Tensor& s, const Tensor& t, const char* what) {
  if (s.batch() != t.batch() || s.time() != t.time() || s.nodes() != t.nodes()) {
    throw ShapeError(std::string(what) + ": taps disagree in (B, T, N): " + s.shape_string() + " vs " +
                     t.shape_string());
  }
}

}  // namespace

void LossWeights::validate() const {
  check_unit(alpha1, "alpha1");
  check_unit(alpha2, "alpha2");
  check_unit(beta, "beta");
  if (!(alpha3 >= 0.0)) throw ConfigError("alpha3 must be nonnegative");
}

void ResponseTriple::validate() const {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols() || student.rows() != target.rows() ||
      student.cols() != target.cols()) {
    throw ShapeError("response triple shapes differ");
  }
  if (student.rows() == 0 || student.cols() == 0) throw ShapeError("response triple is empty");
  if (!student.allFinite() || !teacher.allFinite() || !target.allFinite()) {
    throw ShapeError("response triple contains non-finite values");
  }
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "target" || name == "none") return LossKind::target;
  if (name == "rd_l2") return LossKind::rd_l2;
  if (name == "rd_kl") return LossKind::rd_kl;
  if (name == "ord") return LossKind::ord;
  if (name == "tcd") return LossKind::tcd;
  if (name == "scd") return LossKind::scd;
  if (name == "stcd") return LossKind::stcd;
  throw ConfigError("unknown loss kind '" + name + "' (expected target|rd_l2|rd_kl|ord|tcd|scd|stcd)");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::target: return "target";
    case LossKind::rd_l2: return "rd_l2";
    case LossKind::rd_kl: return "rd_kl";
    case LossKind::ord: return "ord";
    case LossKind::tcd: return "tcd";
    case LossKind::scd: return "scd";
    case LossKind::stcd: return "stcd";
  }
  return "?";
}

double kl_divergence(const Eigen::RowVectorXd& teacher_dist, const Eigen::RowVectorXd& student_dist) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < teacher_dist.size(); ++i) {
    if (teacher_dist(i) > 0.0) kl += teacher_dist(i) * std::log(teacher_dist(i) / student_dist(i));
  }
  return kl;
}

double loss_target(const RowMatrix& student, const RowMatrix& target, RowMatrix* d_student) {
  if (student.rows() != target.rows() || student.cols() != target.cols()) throw ShapeError("target shape mismatch");
  const double terms = static_cast<double>(student.size());
  const RowMatrix diff = student - target;
  if (d_student) *d_student = diff.unaryExpr([](double v) { return sign(v); }) / terms;
  return diff.cwiseAbs().sum() / terms;
}

double loss_rd_l2(const ResponseTriple& r, double beta, RowMatrix* d_student) {
  check_unit(beta, "beta");
  r.validate();
  const double terms = static_cast<double>(r.student.size());
  const RowMatrix to_teacher = r.student - r.teacher;
  const RowMatrix to_target = r.student - r.target;
  if (d_student) {
    *d_student = (beta * to_teacher.unaryExpr([](double v) { return sign(v); }) +
                  (1.0 - beta) * to_target.unaryExpr([](double v) { return sign(v); })) /
                 terms;
  }
  return (beta * to_teacher.cwiseAbs().sum() + (1.0 - beta) * to_target.cwiseAbs().sum()) / terms;
}

double loss_rd_kl(const ResponseTriple& r, double beta, RowMatrix* d_student) {
  check_unit(beta, "beta");
  r.validate();
  const int b_count = r.batch();
  const int n = r.nodes();
  double total = 0.0;
  if (d_student) d_student->setZero(b_count, n);
  for (int b = 0; b < b_count; ++b) {
    const Eigen::RowVectorXd ls = log_softmax(r.student.row(b));
    const Eigen::RowVectorXd lt = log_softmax(r.teacher.row(b));
    const Eigen::RowVectorXd pt = lt.array().exp().matrix();
    const double kl = (pt.array() * (lt - ls).array()).sum();
    const Eigen::RowVectorXd diff = r.student.row(b) - r.target.row(b);
    total += beta * kl + (1.0 - beta) * diff.cwiseAbs().sum() / n;
    if (d_student) {
      const Eigen::RowVectorXd ps = ls.array().exp().matrix();
      d_student->row(b) = (beta * (ps - pt) + (1.0 - beta) / n * diff.unaryExpr([](double v) { return sign(v); })) /
                          static_cast<double>(b_count);
    }
  }
  return total / b_count;
}

std::vector<std::uint8_t> teacher_routing(const ResponseTriple& r, double alpha1) {
  check_unit(alpha1, "alpha1");
  r.validate();
  const int b_count = r.batch();
  const int n = r.nodes();
  std::vector<std::uint8_t> routed(static_cast<std::size_t>(b_count) * n, 0);
  for (int b = 0; b < b_count; ++b) {
    const Eigen::RowVectorXd d = (r.teacher.row(b) - r.target.row(b)).cwiseAbs();
    const double lo = d.minCoeff();
    const double hi = d.maxCoeff();
    if (!(hi > lo)) continue;  // no routing signal: everything follows the target
    for (int i = 0; i < n; ++i) {
      const double normalized = (d(i) - lo) / (hi - lo);
      routed[static_cast<std::size_t>(b) * n + i] = normalized > alpha1 ? 1 : 0;
    }
  }
  return routed;
}

OrdResult loss_ord(const ResponseTriple& r, double alpha1, RowMatrix* d_student) {
  const auto routed = teacher_routing(r, alpha1);
  const int b_count = r.batch();
  const int n = r.nodes();
  OrdResult out;
  out.terms = routed.size();
  const double terms = static_cast<double>(out.terms);
  if (d_student) d_student->setZero(b_count, n);
  double total = 0.0;
  for (int b = 0; b < b_count; ++b) {
    for (int i = 0; i < n; ++i) {
      const bool teacher = routed[static_cast<std::size_t>(b) * n + i] != 0;
      const double diff = r.student(b, i) - (teacher ? r.teacher(b, i) : r.target(b, i));
      total += std::abs(diff);
      if (teacher) ++out.routed;
      if (d_student) (*d_student)(b, i) = sign(diff) / terms;
    }
  }
  out.value = total / terms;
  out.teacher_ratio = static_cast<double>(out.routed) / terms;
  return out;
}

Tensor correlation_tensor_temporal(const Tensor& f) {
  const int bsz = f.batch(), t = f.time(), n = f.nodes(), c = f.channels();
  Tensor out(bsz, n, t, t);
  for (int b = 0; b < bsz; ++b) {
    for (int i = 0; i < t; ++i) {
      for (int j = i + 1; j < t; ++j) {
        const auto fi = f.slab(b, i).array();
        const auto fj = f.slab(b, j).array();
        const Eigen::VectorXd v = (fi - fj).abs().rowwise().sum() / c;
        for (int node = 0; node < n; ++node) {
          out(b, node, i, j) = v(node);
          out(b, node, j, i) = v(node);
        }
      }
    }
  }
  return out;
}

Tensor correlation_tensor_spatial(const Tensor& f) {
  const int bsz = f.batch(), t = f.time(), n = f.nodes(), c = f.channels();
  Tensor out(bsz, t, n, n);
  for (int b = 0; b < bsz; ++b) {
    for (int s = 0; s < t; ++s) {
      const auto slab = f.slab(b, s);
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
          const double v = (slab.row(i) - slab.row(j)).cwiseAbs().sum() / c;
          out(b, s, i, j) = v;
          out(b, s, j, i) = v;
        }
      }
    }
  }
  return out;
}

double tcd_pair(const Tensor& student, const Tensor& teacher, Tensor* d_student, double scale) {
  require_pairable(student, teacher, "L_TCD");
  const int bsz = student.batch(), t = student.time(), n = student.nodes();
  const int cs = student.channels(), ct = teacher.channels();
  const double pairs = 0.5 * t * (t - 1);
  if (d_student && !d_student->same_dims(student)) *d_student = Tensor(student.dims());
  if (pairs == 0.0) return 0.0;
  const double norm = 1.0 / (static_cast<double>(bsz) * n * pairs);
  double total = 0.0;
  for (int b = 0; b < bsz; ++b) {
    for (int i = 0; i < t; ++i) {
      for (int j = i + 1; j < t; ++j) {
        const RowMatrix ds = student.slab(b, i) - student.slab(b, j);
        const Eigen::VectorXd ts = ds.cwiseAbs().rowwise().sum() / cs;
        const Eigen::VectorXd tt = (teacher.slab(b, i) - teacher.slab(b, j)).cwiseAbs().rowwise().sum() / ct;
        const Eigen::VectorXd diff = ts - tt;
        total += diff.cwiseAbs().sum();
        if (d_student) {
          const double w = scale * norm / cs;
          auto gi = d_student->slab(b, i);
          auto gj = d_student->slab(b, j);
          for (int node = 0; node < n; ++node) {
            const double outer = sign(diff(node)) * w;
            if (outer == 0.0) continue;
            for (int c = 0; c < cs; ++c) {
              const double g = outer * sign(ds(node, c));
              gi(node, c) += g;
              gj(node, c) -= g;
            }
          }
        }
      }
    }
  }
  return total * norm;
}

double scd_pair(const Tensor& student, const Tensor& teacher, Tensor* d_student, double scale) {
  require_pairable(student, teacher, "L_SCD");
  const int bsz = student.batch(), t = student.time(), n = student.nodes();
  const int cs = student.channels(), ct = teacher.channels();
  const double pairs = 0.5 * n * (n - 1);
  if (d_student && !d_student->same_dims(student)) *d_student = Tensor(student.dims());
  if (pairs == 0.0) return 0.0;
  const double norm = 1.0 / (static_cast<double>(bsz) * t * pairs);
  double total = 0.0;
  for (int b = 0; b < bsz; ++b) {
    for (int s = 0; s < t; ++s) {
      const auto fs = student.slab(b, s);
      const auto ft = teacher.slab(b, s);
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
          const double vs = (fs.row(i) - fs.row(j)).cwiseAbs().sum() / cs;
          const double vt = (ft.row(i) - ft.row(j)).cwiseAbs().sum() / ct;
          const double diff = vs - vt;
          total += std::abs(diff);
          if (d_student && diff != 0.0) {
            const double w = scale * norm * sign(diff) / cs;
            auto g = d_student->slab(b, s);
            for (int c = 0; c < cs; ++c) {
              const double v = w * sign(fs(i, c) - fs(j, c));
              g(i, c) += v;
              g(j, c) -= v;
            }
          }
        }
      }
    }
  }
  return total * norm;
}

namespace {

using PairFn = double (*)(const Tensor&, const Tensor&, Tensor*, double);

double average_pairs(PairFn fn, const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                     std::vector<Tensor>* d_student, double scale, const char* what) {
  require_tap_lists(student, teacher, what);
  const double k = static_cast<double>(student.size());
  if (d_student) d_student->resize(student.size());
  double total = 0.0;
  for (std::size_t i = 0; i < student.size(); ++i) {
    total += fn(student[i], teacher[i], d_student ? &(*d_student)[i] : nullptr, scale / k);
  }
  return total / k;
}

}  // namespace

double loss_tcd(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                std::vector<Tensor>* d_student, double scale) {
  return average_pairs(&tcd_pair, student, teacher, d_student, scale, "L_TCD");
}

double loss_scd(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                std::vector<Tensor>* d_student, double scale) {
  return average_pairs(&scd_pair, student, teacher, d_student, scale, "L_SCD");
}

namespace {

LossResult ord_plus_branches(const ResponseTriple& r, const FeatureTaps* taps_s, const FeatureTaps* taps_t,
                             double alpha1, double temporal_weight, double spatial_weight, bool with_gradient) {
  LossResult out;
  const OrdResult ord = loss_ord(r, alpha1, with_gradient ? &out.d_student : nullptr);
  out.value = ord.value;
  out.teacher_ratio = ord.teacher_ratio;
  out.routed = ord.routed;
  out.terms = ord.terms;
  out.routing_applies = true;
  if (temporal_weight > 0.0 || spatial_weight > 0.0) {
    if (!taps_s || !taps_t) throw ShapeError("feature distillation needs student and teacher taps");
  }
  if (temporal_weight > 0.0) {
    out.value += temporal_weight *
                 loss_tcd(taps_s->temporal, taps_t->temporal, with_gradient ? &out.d_taps.temporal : nullptr,
                          temporal_weight);
  }
  if (spatial_weight > 0.0) {
    out.value += spatial_weight *
                 loss_scd(taps_s->spatial, taps_t->spatial, with_gradient ? &out.d_taps.spatial : nullptr,
                          spatial_weight);
  }
  return out;
}

}  // namespace

LossResult loss_stcd(const ResponseTriple& r, const FeatureTaps& student_taps, const FeatureTaps& teacher_taps,
                     const LossWeights& w, bool with_gradient) {
  w.validate();
  return ord_plus_branches(r, &student_taps, &teacher_taps, w.alpha1, w.alpha3 * (1.0 - w.alpha2),
                           w.alpha3 * w.alpha2, with_gradient);
}

LossResult training_loss(LossKind kind, const ResponseTriple& r, const FeatureTaps* student_taps,
                         const FeatureTaps* teacher_taps, const LossWeights& w, bool with_gradient) {
  w.validate();
  LossResult out;
  RowMatrix* grad = with_gradient ? &out.d_student : nullptr;
  switch (kind) {
    case LossKind::target:
      out.value = loss_target(r.student, r.target, grad);
      return out;
    case LossKind::rd_l2:
      out.value = loss_rd_l2(r, w.beta, grad);
      return out;
    case LossKind::rd_kl:
      out.value = loss_rd_kl(r, w.beta, grad);
      return out;
    case LossKind::ord:
      return ord_plus_branches(r, nullptr, nullptr, w.alpha1, 0.0, 0.0, with_gradient);
    case LossKind::tcd:
      return ord_plus_branches(r, student_taps, teacher_taps, w.alpha1, w.alpha3, 0.0, with_gradient);
    case LossKind::scd:
      return ord_plus_branches(r, student_taps, teacher_taps, w.alpha1, 0.0, w.alpha3, with_gradient);
    case LossKind::stcd:
      if (!student_taps || !teacher_taps) throw ShapeError("L_STCD needs student and teacher taps");
      return loss_stcd(r, *student_taps, *teacher_taps, w, with_gradient);
  }
  return out;
}

}  // namespace stkd
