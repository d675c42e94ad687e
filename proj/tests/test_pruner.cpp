#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "stkd/optim.hpp"
#include "stkd/pruner.hpp"

using namespace stkd;

namespace {

std::size_t hamming(const MaskSet& a, const MaskSet& b) {
  std::size_t d = 0;
  for (std::size_t t = 0; t < a.tensors.size(); ++t)
    for (std::size_t i = 0; i < a.tensors[t].size(); ++i) d += a.tensors[t].keep[i] != b.tensors[t].keep[i];
  return d;
}

bool masked_weights_are_zero(const StgcnModel& m, const MaskSet& masks) {
  for (const auto& t : masks.tensors) {
    const Parameter* p = m.find_parameter(t.name);
    if (!p) return false;
    for (std::size_t i = 0; i < t.size(); ++i)
      if (!t.keep[i] && p->value[i] != 0.0) return false;
  }
  return true;
}

// Fills every score tensor with its flat index, scaled per tensor, and marks a full window.
void fill_scores(KdisAccumulator& acc, const PruneSchedule& s, bool reversed = false) {
  for (auto& sum : acc.sums)
    for (std::size_t i = 0; i < sum.size(); ++i)
      sum[i] = static_cast<double>(reversed ? sum.size() - i : i + 1) * s.pruning_minibatch;
  acc.counter = s.pruning_minibatch;
}

PruneSchedule quick_schedule() {
  PruneSchedule s;
  s.pruning_minibatch = 3;
  s.per_event_fraction = 0.25;
  s.target_sparsity = 0.5;
  return s;
}

TrainConfig quick_train(std::uint64_t seed = 11) {
  TrainConfig c;
  c.batch_size = 50;
  c.learning_rate = 1e-3;
  c.epochs = 1;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("importance accumulates squared gradient-weight products") {
  KdisAccumulator acc;
  acc.names = {"w"};
  acc.shapes = {{2, 1}};
  acc.sums = {{0.0, 0.0}};
  const std::vector<double> g{0.5, 2.0}, w{1.0, 1.0};
  accumulate_kdis(acc, 0, g, w);
  CHECK(acc.sums[0][0] == doctest::Approx(0.25));
  CHECK(acc.sums[0][1] == doctest::Approx(4.0));
  CHECK(acc.counter == 0);
  const auto filters = group_scores(acc.sums[0], acc.shapes[0], Granularity::per_filter);
  REQUIRE(filters.size() == 1);
  CHECK(filters[0] == doctest::Approx(4.25));
  const std::vector<double> short_w{1.0};
  CHECK_THROWS_AS(accumulate_kdis(acc, 0, g, short_w), ShapeError);

  const std::vector<double> wide{1, 2, 3, 4, 5, 6};
  const auto per_filter = group_scores(wide, {3, 2}, Granularity::per_filter);
  REQUIRE(per_filter.size() == 2);
  CHECK(per_filter[0] == doctest::Approx(9.0));
  CHECK(per_filter[1] == doctest::Approx(12.0));
}

TEST_CASE("lowest scores with ascending-index ties") {
  const std::vector<double> s{4, 1, 3, 2};
  CHECK(lowest_scores(s, {0, 1, 2, 3}, 2) == std::vector<std::size_t>{1, 3});
  CHECK(lowest_scores(s, {0, 2}, 1) == std::vector<std::size_t>{2});
  const std::vector<double> flat(8, 1.0);
  CHECK(lowest_scores(flat, {0, 1, 2, 3, 4, 5, 6, 7}, 2) == std::vector<std::size_t>{0, 1});
  CHECK(lowest_scores(flat, {5, 6}, 9).size() == 2);
}

TEST_CASE("events follow the per-event quota up to the target") {
  StgcnModel model(fixture::tiny(5), 1);
  const PruneSchedule s = quick_schedule();
  KdisAccumulator acc = KdisAccumulator::for_model(model);
  MaskSet masks = model.full_mask();
  REQUIRE(!acc.names.empty());

  fill_scores(acc, s);
  PruneEventRecord first;
  masks = prune_event(model, acc, masks, s, &first);
  CHECK(acc.counter == 0);
  for (const auto& t : masks.tensors) {
    const auto expect = static_cast<std::size_t>(std::ceil(0.25 * t.size() - 1e-9));
    INFO(t.name);
    CHECK(t.masked() == std::min(expect, static_cast<std::size_t>(std::llround(0.5 * t.size()))));
    // The lowest scores are the leading indices.
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(static_cast<bool>(t.keep[i]) == (i >= t.masked()));
  }
  CHECK(!target_reached(masks, s));

  fill_scores(acc, s, true);
  const MaskSet before = masks;
  masks = prune_event(model, acc, masks, s);
  for (std::size_t k = 0; k < masks.tensors.size(); ++k) {
    const auto& t = masks.tensors[k];
    INFO(t.name);
    CHECK(t.masked() == static_cast<std::size_t>(std::llround(0.5 * t.size())));
    for (std::size_t i = 0; i < t.size(); ++i)
      if (!before.tensors[k].keep[i]) CHECK(!t.keep[i]);
  }
  CHECK(target_reached(masks, s));
  CHECK(masked_weights_are_zero(model, masks));

  // A further event at the target leaves the mask untouched.
  fill_scores(acc, s);
  const MaskSet again = prune_event(model, acc, masks, s);
  CHECK(hamming(again, masks) == 0);
  CHECK(first.overall_sparsity > 0.0);
  CHECK(first.layers.size() == masks.tensors.size());
}

TEST_CASE("per-filter events mask whole output channels") {
  StgcnModel model(fixture::tiny(5), 1);
  PruneSchedule s = quick_schedule();
  s.granularity = Granularity::per_filter;
  KdisAccumulator acc = KdisAccumulator::for_model(model);
  fill_scores(acc, s);
  const MaskSet masks = prune_event(model, acc, model.full_mask(), s);
  for (const auto& t : masks.tensors) {
    const int filters = t.shape.back();
    std::vector<int> masked_in_filter(static_cast<std::size_t>(filters), 0);
    for (std::size_t i = 0; i < t.size(); ++i) masked_in_filter[i % filters] += !t.keep[i];
    const int per_filter = static_cast<int>(t.size()) / filters;
    for (int m : masked_in_filter) CHECK((m == 0 || m == per_filter));
  }
}

TEST_CASE("event before a full window is a sequencing error") {
  StgcnModel model(fixture::tiny(4), 2);
  const PruneSchedule s = quick_schedule();
  KdisAccumulator acc = KdisAccumulator::for_model(model);
  acc.counter = 2;
  CHECK_THROWS_AS(prune_event(model, acc, model.full_mask(), s), SequencingError);
  PruneSchedule bad = s;
  bad.per_event_fraction = 0.6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(parse_granularity("per-row"), ConfigError);
}

TEST_CASE("masked weights stay zero through optimizer steps") {
  const auto setup = fixture::synthetic(4, 200);
  StgcnModel model(fixture::tiny(4), 3);
  const MaskSet masks = random_mask(model, 0.5, 9);
  model.apply_mask(masks);
  Adam adam(1e-2);
  std::mt19937_64 order(0);
  int steps = 0;
  for (const auto& idx : epoch_batches(setup.splits.train.samples(), 16, order)) {
    if (steps++ == 3) break;
    const Minibatch mb = gather(setup.splits.train, idx);
    compute_gradients(model, nullptr, mb, setup.graph, LossKind::target, {}, nullptr);
    apply_update(model, adam);
    CHECK(masked_weights_are_zero(model, masks));
  }
}

TEST_CASE("pruning loop: monotone, permanent, deterministic") {
  const auto setup = fixture::synthetic(5, 400);
  const StgcnModel teacher(fixture::small(5), 4);
  const StgcnModel base(fixture::tiny(5), 5);
  PruneOptions opt;
  opt.finetune_epochs = 1;
  opt.keep_snapshots = true;
  LossWeights w;
  w.alpha3 = 0.5;
  const PruneSchedule s = quick_schedule();
  const PruneResult a = distill_prune(teacher, base, setup.splits, setup.graph, quick_train(), s, w, opt);
  REQUIRE(a.events.size() == a.snapshots.size());
  REQUIRE(a.events.size() >= 2);
  for (std::size_t e = 1; e < a.snapshots.size(); ++e) {
    CHECK(a.events[e].overall_sparsity >= a.events[e - 1].overall_sparsity);
    for (std::size_t t = 0; t < a.snapshots[e].tensors.size(); ++t)
      for (std::size_t i = 0; i < a.snapshots[e].tensors[t].size(); ++i)
        if (!a.snapshots[e - 1].tensors[t].keep[i]) CHECK(!a.snapshots[e].tensors[t].keep[i]);
  }
  CHECK(target_reached(a.masks, s));
  CHECK(masked_weights_are_zero(a.model, a.masks));
  CHECK(a.finetune_epochs.size() == 1);
  for (const auto& ev : a.events) CHECK(ev.minibatch % s.pruning_minibatch == 0);

  const PruneResult b = distill_prune(teacher, base, setup.splits, setup.graph, quick_train(), s, w, opt);
  CHECK(hamming(a.masks, b.masks) == 0);
  const auto pa = a.model.parameters();
  const auto pb = b.model.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k]->value == pb[k]->value);

  const auto dir = std::filesystem::temp_directory_path() / "stkd_prune_history_test";
  std::filesystem::create_directories(dir);
  write_prune_history_csv(dir / "history.csv", a.events);
  std::ifstream in(dir / "history.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("event,epoch,minibatch,overall_sparsity,mean_kdis,sparsity:", 0) == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("without routing or hidden terms the loop matches the target-loss baseline") {
  const auto setup = fixture::synthetic(5, 400);
  const StgcnModel teacher(fixture::small(5), 4);
  const StgcnModel base(fixture::tiny(5), 5);
  const PruneSchedule s = quick_schedule();
  LossWeights w;
  w.alpha1 = 1.0;
  w.alpha3 = 0.0;
  PruneOptions opt;
  opt.finetune_epochs = 1;
  const PruneResult kd = distill_prune(teacher, base, setup.splits, setup.graph, quick_train(), s, w, opt);
  const PruneResult plain = traditional_prune_baseline(base, setup.splits, setup.graph, quick_train(), s, 1);
  CHECK(hamming(kd.masks, plain.masks) == 0);
  const auto pk = kd.model.parameters();
  const auto pp = plain.model.parameters();
  double worst = 0.0;
  for (std::size_t k = 0; k < pk.size(); ++k)
    for (std::size_t i = 0; i < pk[k]->size(); ++i) worst = std::max(worst, std::abs(pk[k]->value[i] - pp[k]->value[i]));
  CHECK(worst < 1e-12);
}

TEST_CASE("distillation changes which weights are pruned") {
  const auto setup = fixture::synthetic(5, 400);
  const StgcnModel teacher(fixture::small(5), 4);
  const StgcnModel base(fixture::tiny(5), 5);
  const PruneSchedule s = quick_schedule();
  LossWeights w;
  w.alpha1 = 0.3;
  w.alpha3 = 1.0;
  PruneOptions opt;
  opt.finetune_epochs = 0;
  const PruneResult kd = distill_prune(teacher, base, setup.splits, setup.graph, quick_train(), s, w, opt);
  const PruneResult plain = traditional_prune_baseline(base, setup.splits, setup.graph, quick_train(), s, 0);
  CHECK(hamming(kd.masks, plain.masks) > 0);
  CHECK(kd.masks.sparsity() == doctest::Approx(plain.masks.sparsity()));
}

TEST_CASE("zero target leaves the model unpruned") {
  const auto setup = fixture::synthetic(4, 200);
  const StgcnModel base(fixture::tiny(4), 6);
  PruneSchedule s = quick_schedule();
  s.target_sparsity = 0.0;
  const PruneResult r = traditional_prune_baseline(base, setup.splits, setup.graph, quick_train(), s, 0);
  CHECK(r.events.empty());
  CHECK(r.masks.masked() == 0);
}
