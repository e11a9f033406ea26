#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "slomo/error.hpp"
#include "slomo/streams.hpp"

namespace slomo {
namespace {

TaskOptions small_task() {
  TaskOptions o;
  o.num_classes = 4;
  o.input_dim = 16;
  o.n_train = 400;
  o.n_eval = 100;
  o.seed = 3;
  return o;
}

const SyntheticTask& task() {
  static const SyntheticTask t(small_task());
  return t;
}

TEST(CyclicIndex, MatchesCounterSimulation) {
  for (std::size_t k = 1; k <= 10; ++k) {
    for (std::size_t r = 1; r <= 5; ++r) {
      std::size_t group = 1;
      for (std::size_t t = 1; t <= 10 * k * r; ++t) {
        ASSERT_EQ(cyclic_index(t, k, r), group) << "K=" << k << " r=" << r << " t=" << t;
        group = group == k ? 1 : group + 1;
      }
    }
  }
  EXPECT_THROW(cyclic_index(0, 3, 1), ConfigError);
  EXPECT_THROW(cyclic_index(1, 0, 1), ConfigError);
}

TEST(Task, BalancedAndDeterministic) {
  const SyntheticTask again(small_task());
  EXPECT_EQ(again.train().x, task().train().x);
  EXPECT_EQ(again.clean_eval().labels, task().clean_eval().labels);
  EXPECT_NE(task().train().x, task().clean_eval().x.select_rows(std::vector<std::size_t>{0}));
  std::vector<std::size_t> counts(4, 0);
  for (std::size_t y : task().train().labels) ++counts[y];
  for (std::size_t c : counts) EXPECT_EQ(c, 100u);
  for (std::size_t c = 0; c < 4; ++c) {
    double n = 0.0;
    for (double v : task().class_means().row(c)) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 4.0, 1e-12);
  }
  TaskOptions bad = small_task();
  bad.num_classes = 1;
  EXPECT_THROW(SyntheticTask{bad}, ConfigError);
}

TEST(Corrupt, SeverityZeroIsIdentity) {
  for (std::size_t f = 0; f < kFamilyCount; ++f) {
    Rng rng(1);
    const Corruption c{static_cast<CorruptionFamily>(f), 0, 9};
    EXPECT_EQ(corrupt(task().clean_eval().x, c, rng), task().clean_eval().x);
  }
  Rng rng(1);
  EXPECT_THROW(corrupt(task().clean_eval().x, {CorruptionFamily::Smooth, 6, 0}, rng),
               ConfigError);
}

TEST(Corrupt, ShiftGrowsWithSeverity) {
  const Matrix& x = task().clean_eval().x;
  for (std::size_t f = 0; f < kFamilyCount; ++f) {
    double previous = 0.0;
    for (int s = 1; s <= 5; ++s) {
      Rng rng(42);
      const Matrix y = corrupt(x, {static_cast<CorruptionFamily>(f), s, 7}, rng);
      ASSERT_TRUE(y.same_shape(x));
      double shift = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) shift += std::abs(y.data()[i] - x.data()[i]);
      EXPECT_GT(shift, previous) << to_string(static_cast<CorruptionFamily>(f)) << " s=" << s;
      previous = shift;
    }
  }
}

TEST(Corrupt, RotationPreservesNorms) {
  Rng rng(0);
  const Matrix& x = task().clean_eval().x;
  const Matrix y = corrupt(x, {CorruptionFamily::Rotation, 3, 5}, rng);
  for (std::size_t r = 0; r < x.rows(); ++r) EXPECT_NEAR(norm(y.row(r)), norm(x.row(r)), 1e-12);
}

TEST(Corrupt, OcclusionZeroesCentralCoordinates) {
  Rng rng(0);
  const Matrix y = corrupt(Matrix(1, 10, 1.0), {CorruptionFamily::Occlusion, 2, 0}, rng);
  EXPECT_EQ(y, (Matrix{{1, 1, 1, 1, 0, 0, 1, 1, 1, 1}}));
}

TEST(Domains, GroupsVariantsAndNames) {
  const auto domains = make_domains(1, 5, 3);
  ASSERT_EQ(domains.size(), 15u);
  std::set<std::uint64_t> seeds;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    EXPECT_EQ(domains[i].id, i);
    EXPECT_EQ(domains[i].group, i / 3);
    EXPECT_EQ(static_cast<std::size_t>(domains[i].corruption.family), i / 3);
    seeds.insert(domains[i].corruption.seed);
  }
  EXPECT_EQ(seeds.size(), 15u);
  EXPECT_EQ(domains[4].name, "smooth-1");
  EXPECT_EQ(domain_eval_set(task(), domains[14].corruption).x,
            domain_eval_set(task(), domains[14].corruption).x);
  EXPECT_THROW(make_domains(0, 6, 1), ConfigError);
  EXPECT_EQ(corruption_family_from_string("rotation"), CorruptionFamily::Rotation);
  EXPECT_THROW(corruption_family_from_string("blur"), ConfigError);
}

using Multiset = std::multiset<std::pair<std::size_t, std::size_t>>;

Multiset visits(const StreamSchedule& s, std::size_t cycle) {
  Multiset out;
  for (const auto& k : s.plan()) {
    if (k.cycle == cycle) out.insert({k.domain, k.batch});
  }
  return out;
}

ScheduleOptions options(Setting setting, std::uint64_t seed = 0) {
  ScheduleOptions o;
  o.setting = setting;
  o.batch_size = 32;
  o.seed = seed;
  return o;
}

TEST(Schedule, ContinualAndEpisodic) {
  const auto domains = make_domains(0, 3, 2);
  const StreamSchedule s(task(), domains, options(Setting::Continual));
  EXPECT_EQ(s.batches_per_domain(), 4u);
  ASSERT_EQ(s.size(), 24u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s.plan()[i].domain, i / 4);
    EXPECT_EQ(s.plan()[i].batch, i % 4);
    EXPECT_FALSE(s.plan()[i].reset);
  }
  const StreamSchedule e(task(), domains, options(Setting::Episodic));
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_EQ(e.plan()[i].reset, i % 4 == 0);
  // The last batch is short: 100 = 3 * 32 + 4.
  EXPECT_EQ(s.event(3).batch.x.rows(), 4u);
  EXPECT_EQ(s.event(0).batch.labels.size(), 32u);
}

TEST(Schedule, MixedIsASeededPermutation) {
  const auto domains = make_domains(0, 3, 2);
  const StreamSchedule c(task(), domains, options(Setting::Continual));
  const StreamSchedule a(task(), domains, options(Setting::Mixed, 1));
  const StreamSchedule b(task(), domains, options(Setting::Mixed, 1));
  const StreamSchedule other(task(), domains, options(Setting::Mixed, 2));
  EXPECT_EQ(visits(a, 0), visits(c, 0));
  EXPECT_EQ(a.plan(), b.plan());
  EXPECT_NE(a.plan(), other.plan());
  EXPECT_NE(a.plan(), c.plan());
}

TEST(Schedule, CyclicProtocolRepeatsEachCycle) {
  const auto domains = make_domains(0, 4, 3);
  ScheduleOptions o = options(Setting::Cyclic);
  o.cycles = 3;
  const StreamSchedule s(task(), domains, o);
  ASSERT_EQ(s.size(), 3u * 12u * 4u);
  for (std::size_t c = 1; c < 3; ++c) EXPECT_EQ(visits(s, c), visits(s, 0));
  // Groups arrive in order 0, 1, 2, 3 within every cycle.
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t in_cycle = i % 48;
    EXPECT_EQ(domains[s.plan()[i].domain].group, in_cycle / 12);
    EXPECT_EQ(s.plan()[i].cycle, i / 48);
  }
}

TEST(Schedule, CyclicDwellFollowsIndexFormula) {
  const auto domains = make_domains(0, 3, 2);
  ScheduleOptions o = options(Setting::Cyclic);
  o.cyclic_mode = CyclicMode::Dwell;
  o.dwell = 2;
  o.dwell_steps = 40;
  const StreamSchedule s(task(), domains, o);
  ASSERT_EQ(s.size(), 40u);
  for (std::size_t t = 1; t <= 40; ++t) {
    const std::size_t block = (t - 1) / 2 + 1;
    EXPECT_EQ(domains[s.plan()[t - 1].domain].group + 1, cyclic_index(block, 3, 2));
  }
}

TEST(Schedule, GradualRampsSeverity) {
  const auto domains = make_domains(0, 2, 1);
  const StreamSchedule s(task(), domains, options(Setting::Gradual));
  ASSERT_EQ(s.size(), 2u * 9u * 2u);
  const int ramp[] = {1, 2, 3, 4, 5, 4, 3, 2, 1};
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s.plan()[i].severity, ramp[(i / 2) % 9]);
  EXPECT_EQ(s.event(8).severity, 5);
}

TEST(Schedule, CrossGroupInterleaves) {
  const auto domains = make_domains(0, 3, 2);
  const StreamSchedule s(task(), domains, options(Setting::CrossGroup));
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < s.size(); i += 4) order.push_back(s.plan()[i].domain);
  EXPECT_EQ(order, (std::vector<std::size_t>{0, 2, 4, 1, 3, 5}));
}

TEST(Schedule, DifficultyOrders) {
  const auto domains = make_domains(0, 2, 2);
  const std::vector<std::size_t> rank{2, 0, 3, 1};
  const StreamSchedule easy(task(), domains, options(Setting::Easy2Hard), rank);
  const StreamSchedule hard(task(), domains, options(Setting::Hard2Easy), rank);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(easy.plan()[i * 4].domain, rank[i]);
    EXPECT_EQ(hard.plan()[i * 4].domain, rank[3 - i]);
  }
  EXPECT_THROW(StreamSchedule(task(), domains, options(Setting::Easy2Hard)), ConfigError);
}

TEST(Schedule, MixedAfterContinualAndBack) {
  const auto domains = make_domains(0, 2, 2);
  const StreamSchedule a(task(), domains, options(Setting::MixedAfterContinual, 4));
  const StreamSchedule b(task(), domains, options(Setting::ContinualAfterMixed, 4));
  EXPECT_EQ(visits(a, 0), visits(a, 1));
  EXPECT_EQ(visits(b, 0), visits(b, 1));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(a.plan()[i].domain, i / 4);
  for (std::size_t i = 16; i < 32; ++i) EXPECT_EQ(b.plan()[i].domain, (i - 16) / 4);
}

TEST(Schedule, NextWalksThePlanAndRewinds) {
  const auto domains = make_domains(0, 1, 1);
  StreamSchedule s(task(), domains, options(Setting::Continual));
  std::size_t n = 0;
  while (const auto ev = s.next()) {
    EXPECT_EQ(ev->batch.x, s.event(n).batch.x);
    ++n;
  }
  EXPECT_EQ(n, s.size());
  s.rewind();
  EXPECT_TRUE(s.next().has_value());
  EXPECT_EQ(setting_from_string(to_string(Setting::ContinualAfterMixed)),
            Setting::ContinualAfterMixed);
  EXPECT_THROW(setting_from_string("sometimes"), ConfigError);
  ScheduleOptions tiny = options(Setting::Continual);
  tiny.batch_size = 1;
  EXPECT_THROW(StreamSchedule(task(), domains, tiny), ConfigError);
}

TEST(SourceTraining, ReachesCleanAccuracyAndRanks) {
  const NetworkSpec spec = make_mlp(16, {16}, 4, 0);
  SourceTraining st;
  st.epochs = 15;
  st.min_accuracy = 0.9;
  const NetworkParams a = train_source(task(), spec, st);
  EXPECT_EQ(a, train_source(task(), spec, st));
  EXPECT_GE(accuracy(spec, a, task().clean_eval()), 0.9);
  const auto domains = make_domains(0, 5, 1);
  const auto ranked = rank_by_source_error(task(), spec, a, domains);
  ASSERT_EQ(ranked.size(), 5u);
  for (std::size_t i = 1; i < ranked.size(); ++i) EXPECT_LE(ranked[i - 1].error, ranked[i].error);
  st.min_accuracy = 1.01;
  EXPECT_THROW(train_source(task(), spec, st), NumericError);
  EXPECT_THROW(train_source(task(), make_mlp(8, {16}, 4, 0), SourceTraining{}), ShapeError);
}

}  // namespace
}  // namespace slomo
