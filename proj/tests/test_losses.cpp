#include <doctest.h>

#include "oracles.hpp"
#include "stkd/losses.hpp"

using namespace stkd;

namespace {

RowMatrix row(std::initializer_list<double> v) {
  RowMatrix m(1, static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

ResponseTriple random_triple(int b, int n, std::mt19937_64& rng) {
  return {oracle::random_matrix(b, n, rng), oracle::random_matrix(b, n, rng), oracle::random_matrix(b, n, rng)};
}

FeatureTaps random_taps(int b, int n, int c, std::mt19937_64& rng) {
  FeatureTaps t;
  for (int len : {5, 4, 3, 2}) t.temporal.push_back(oracle::random_tensor(b, len, n, c, rng));
  for (int len : {5, 3}) t.spatial.push_back(oracle::random_tensor(b, len, n, c, rng));
  return t;
}

// Checks d(loss)/d(student) and d(loss)/d(student taps) against central differences.
void check_gradients(LossKind kind, const LossWeights& w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ResponseTriple r = random_triple(3, 4, rng);
  FeatureTaps ts = random_taps(3, 4, 3, rng);
  const FeatureTaps tt = random_taps(3, 4, 2, rng);
  const LossResult base = training_loss(kind, r, &ts, &tt, w, true);
  auto value = [&]() { return training_loss(kind, r, &ts, &tt, w, false).value; };
  double worst = 0.0;
  for (int b = 0; b < r.student.rows(); ++b)
    for (int n = 0; n < r.student.cols(); ++n)
      worst = std::max(worst, oracle::relative_error(base.d_student(b, n),
                                                     oracle::central_difference(value, r.student(b, n))));
  auto check_taps = [&](std::vector<Tensor>& taps, const std::vector<Tensor>& grads) {
    for (std::size_t k = 0; k < taps.size(); ++k) {
      for (std::size_t i = 0; i < taps[k].size(); ++i) {
        const double analytic = grads.empty() || grads[k].empty() ? 0.0 : grads[k].data()[i];
        worst = std::max(worst,
                         oracle::relative_error(analytic, oracle::central_difference(value, taps[k].data()[i])));
      }
    }
  };
  check_taps(ts.temporal, base.d_taps.temporal);
  check_taps(ts.spatial, base.d_taps.spatial);
  INFO("loss " << to_string(kind));
  CHECK(worst < 1e-4);
}

}  // namespace

TEST_CASE("response loss by hand") {
  const ResponseTriple r{row({0}), row({1}), row({2})};
  CHECK(loss_rd_l2(r, 0.5) == doctest::Approx(1.5));
  CHECK(loss_rd_l2(r, 0.0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(loss_rd_l2(r, 1.5), ConfigError);
  const ResponseTriple same{row({3, 1}), row({3, 1}), row({3, 1})};
  CHECK(loss_rd_l2(same, 0.3) == 0.0);
}

TEST_CASE("kl divergence by hand") {
  Eigen::RowVectorXd pt(2), ps(2);
  pt << 0.5, 0.5;
  ps << 0.75, 0.25;
  const double expected = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
  CHECK(kl_divergence(pt, ps) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.1438).epsilon(1e-3));
  // Softmax route: logits whose softmax is [0.75, 0.25] against equal logits.
  const ResponseTriple r{row({std::log(3.0), 0.0}), row({1.0, 1.0}), row({0.0, 0.0})};
  CHECK(loss_rd_kl(r, 1.0) == doctest::Approx(expected).epsilon(1e-12));
  const ResponseTriple same{row({2, -1, 4}), row({2, -1, 4}), row({2, -1, 4})};
  CHECK(loss_rd_kl(same, 1.0) == 0.0);
  CHECK(loss_rd_kl(same, 0.4) == 0.0);
}

TEST_CASE("routing by hand") {
  // |y_t - T| = [0, 1, 2] -> normalized [0, 0.5, 1]; alpha1 = 0.4 routes nodes 2 and 3.
  const ResponseTriple r{row({5, 5, 5}), row({0, 1, 2}), row({0, 0, 0})};
  const OrdResult o = loss_ord(r, 0.4);
  CHECK(o.routed == 2);
  CHECK(o.terms == 3);
  CHECK(o.teacher_ratio == doctest::Approx(2.0 / 3.0));
  // Routed nodes use |y_s - y_t|, the other |y_s - T|.
  CHECK(o.value == doctest::Approx((5.0 + 4.0 + 3.0) / 3.0));
  CHECK(loss_ord(r, 1.0).teacher_ratio == 0.0);
}

TEST_CASE("perfect teacher routes nothing") {
  const ResponseTriple r{row({1, 2, 3}), row({0, 0, 0}), row({0, 0, 0})};
  const OrdResult o = loss_ord(r, 0.2);
  CHECK(o.teacher_ratio == 0.0);
  CHECK(o.value == doctest::Approx(2.0));
}

TEST_CASE("routing is invariant under affine maps of the error") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    ResponseTriple r = random_triple(2, 6, rng);
    const double a = u(rng), c = u(rng), alpha1 = u(rng) / 3.0;
    const auto before = teacher_routing(r, alpha1);
    // Raw errors d -> a d + c, realized by moving the teacher away from the target.
    ResponseTriple s = r;
    for (int b = 0; b < 2; ++b)
      for (int n = 0; n < 6; ++n) s.teacher(b, n) = r.target(b, n) + a * std::abs(r.teacher(b, n) - r.target(b, n)) + c;
    CHECK(teacher_routing(s, alpha1) == before);
  }
}

TEST_CASE("correlation tensors by hand") {
  Tensor f(1, 2, 1, 2);
  f(0, 0, 0, 0) = 1;
  f(0, 0, 0, 1) = 3;
  f(0, 1, 0, 0) = 2;
  f(0, 1, 0, 1) = 5;
  const Tensor tcd = correlation_tensor_temporal(f);
  CHECK(tcd(0, 0, 0, 1) == doctest::Approx(1.5));
  CHECK(tcd(0, 0, 1, 0) == doctest::Approx(1.5));
  CHECK(tcd(0, 0, 0, 0) == 0.0);

  Tensor t(1, 1, 3, 1), s(1, 1, 3, 1);
  t(0, 0, 0, 0) = 0, t(0, 0, 1, 0) = 1, t(0, 0, 2, 0) = 3;
  s(0, 0, 0, 0) = 0, s(0, 0, 1, 0) = 2, s(0, 0, 2, 0) = 3;
  CHECK(scd_pair(s, t) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("correlation tensors match nested loops") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 4);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor f = oracle::random_tensor(dim(rng), dim(rng), dim(rng), dim(rng), rng);
    const auto tb = oracle::tcd_brute(f), sb = oracle::scd_brute(f);
    const Tensor tv = correlation_tensor_temporal(f), sv = correlation_tensor_spatial(f);
    REQUIRE(tv.size() == tb.size());
    REQUIRE(sv.size() == sb.size());
    for (std::size_t i = 0; i < tb.size(); ++i) CHECK(std::abs(tv.data()[i] - tb[i]) < 1e-12);
    for (std::size_t i = 0; i < sb.size(); ++i) CHECK(std::abs(sv.data()[i] - sb[i]) < 1e-12);
  }
}

TEST_CASE("pair losses match the brute-force means") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor s = oracle::random_tensor(2, 4, 3, 3, rng), t = oracle::random_tensor(2, 4, 3, 1, rng);
    CHECK(tcd_pair(s, t) == doctest::Approx(oracle::tcd_loss_brute(s, t)).epsilon(1e-12));
    CHECK(scd_pair(s, t) == doctest::Approx(oracle::scd_loss_brute(s, t)).epsilon(1e-12));
  }
}

TEST_CASE("correlation losses ignore width and reflections") {
  std::mt19937_64 rng(3);
  const Tensor t = oracle::random_tensor(2, 4, 3, 1, rng);
  // Two student channels that both copy the teacher's single channel.
  Tensor s(2, 4, 3, 2);
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 4; ++i)
      for (int n = 0; n < 3; ++n) s(b, i, n, 0) = s(b, i, n, 1) = t(b, i, n, 0);
  CHECK(tcd_pair(s, t) == doctest::Approx(0.0));
  CHECK(scd_pair(s, t) == doctest::Approx(0.0));

  const Tensor other = oracle::random_tensor(2, 4, 3, 2, rng);
  Tensor reflected = other;
  for (double& v : reflected.values()) v = 7.0 - v;
  CHECK(tcd_pair(reflected, t) == doctest::Approx(tcd_pair(other, t)).epsilon(1e-12));
  CHECK(scd_pair(reflected, t) == doctest::Approx(scd_pair(other, t)).epsilon(1e-12));

  Tensor flat(1, 2, 3, 2, 1.5);
  CHECK(scd_pair(flat, Tensor(1, 2, 3, 1, -4.0)) == 0.0);
}

TEST_CASE("tap list mismatches are errors") {
  std::mt19937_64 rng(4);
  const auto a = random_taps(1, 3, 2, rng);
  auto b = a.temporal;
  b.pop_back();
  CHECK_THROWS(loss_tcd(a.temporal, b));
}

TEST_CASE("composite loss limits") {
  std::mt19937_64 rng(5);
  const ResponseTriple r = random_triple(2, 4, rng);
  const FeatureTaps ts = random_taps(2, 4, 3, rng), tt = random_taps(2, 4, 2, rng);
  LossWeights w;
  w.alpha1 = 0.3;
  w.alpha3 = 0.0;
  CHECK(loss_stcd(r, ts, tt, w).value == doctest::Approx(loss_ord(r, 0.3).value));
  w.alpha2 = 1.0;
  w.alpha3 = 1.0;
  CHECK(loss_stcd(r, ts, tt, w).value ==
        doctest::Approx(loss_ord(r, 0.3).value + loss_scd(ts.spatial, tt.spatial)));
  w.alpha2 = 0.25;
  w.alpha3 = 2.0;
  const double expected = loss_ord(r, 0.3).value +
                          2.0 * (0.25 * loss_scd(ts.spatial, tt.spatial) + 0.75 * loss_tcd(ts.temporal, tt.temporal));
  const LossResult res = loss_stcd(r, ts, tt, w);
  CHECK(res.value == doctest::Approx(expected));
  CHECK(res.teacher_ratio == doctest::Approx(loss_ord(r, 0.3).teacher_ratio));
}

TEST_CASE("every loss is zero at its fixed point") {
  std::mt19937_64 rng(6);
  const RowMatrix y = oracle::random_matrix(2, 5, rng);
  const ResponseTriple r{y, y, y};
  const FeatureTaps taps = random_taps(2, 5, 3, rng);
  LossWeights w;
  w.alpha3 = 0.7;
  for (LossKind k : {LossKind::target, LossKind::rd_l2, LossKind::rd_kl, LossKind::ord, LossKind::tcd, LossKind::scd,
                     LossKind::stcd}) {
    INFO(to_string(k));
    CHECK(training_loss(k, r, &taps, &taps, w, false).value == 0.0);
  }
}

TEST_CASE("losses are nonnegative and node-permutation invariant") {
  std::mt19937_64 rng(7);
  const ResponseTriple r = random_triple(3, 5, rng);
  const FeatureTaps ts = random_taps(3, 5, 2, rng), tt = random_taps(3, 5, 3, rng);
  const std::vector<int> perm = {4, 2, 0, 1, 3};
  auto permute_matrix = [&](const RowMatrix& m) {
    RowMatrix out(m.rows(), m.cols());
    for (int b = 0; b < m.rows(); ++b)
      for (int n = 0; n < m.cols(); ++n) out(b, n) = m(b, perm[n]);
    return out;
  };
  auto permute_tensor = [&](const Tensor& t) {
    Tensor out(t.dims());
    for (int b = 0; b < t.batch(); ++b)
      for (int i = 0; i < t.time(); ++i)
        for (int n = 0; n < t.nodes(); ++n)
          for (int c = 0; c < t.channels(); ++c) out(b, i, n, c) = t(b, i, perm[n], c);
    return out;
  };
  auto permute_taps = [&](const FeatureTaps& f) {
    FeatureTaps out;
    for (const auto& t : f.temporal) out.temporal.push_back(permute_tensor(t));
    for (const auto& t : f.spatial) out.spatial.push_back(permute_tensor(t));
    return out;
  };
  const ResponseTriple pr{permute_matrix(r.student), permute_matrix(r.teacher), permute_matrix(r.target)};
  const FeatureTaps pts = permute_taps(ts), ptt = permute_taps(tt);
  LossWeights w;
  w.alpha1 = 0.35;
  w.alpha2 = 0.6;
  w.alpha3 = 0.8;
  w.beta = 0.3;
  for (LossKind k : {LossKind::target, LossKind::rd_l2, LossKind::rd_kl, LossKind::ord, LossKind::tcd, LossKind::scd,
                     LossKind::stcd}) {
    INFO(to_string(k));
    const double a = training_loss(k, r, &ts, &tt, w, false).value;
    CHECK(a >= 0.0);
    CHECK(training_loss(k, pr, &pts, &ptt, w, false).value == doctest::Approx(a).epsilon(1e-12));
  }
}

TEST_CASE("loss gradients match central differences") {
  LossWeights w;
  w.alpha1 = 0.45;
  w.alpha2 = 0.3;
  w.alpha3 = 0.9;
  w.beta = 0.35;
  std::uint64_t seed = 100;
  for (LossKind k : {LossKind::target, LossKind::rd_l2, LossKind::rd_kl, LossKind::ord, LossKind::tcd, LossKind::scd,
                     LossKind::stcd})
    check_gradients(k, w, seed++);
}

TEST_CASE("weights and kinds are validated") {
  LossWeights w;
  w.alpha1 = 1.2;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = {};
  w.alpha3 = -1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  CHECK_THROWS_AS(parse_loss_kind("skd"), ConfigError);
  CHECK(parse_loss_kind("stcd") == LossKind::stcd);
  const ResponseTriple bad{RowMatrix::Zero(1, 2), RowMatrix::Zero(1, 3), RowMatrix::Zero(1, 2)};
  CHECK_THROWS(bad.validate());
}
