#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "slomo/error.hpp"
#include "slomo/protostore.hpp"
#include "store_model.hpp"

namespace slomo {
namespace {

StoreOptions options(std::size_t k = 10, std::size_t p = 50, std::size_t classes = 3) {
  StoreOptions o;
  o.num_classes = classes;
  o.feature_dim = 2;
  o.capacity = k;
  o.evict_interval = p;
  return o;
}

TEST(TryInsert, EmptyQueueAcceptsPassingSample) {
  PrototypeStore s(options());
  EXPECT_EQ(s.try_insert(1, std::vector<double>{1, 2}, 0.3, 0.5), InsertOutcome::Inserted);
  EXPECT_EQ(s.queue_size(1), 1u);
  EXPECT_EQ(s.total_size(), 1u);
}

TEST(TryInsert, FullQueueReplacesMaxEntropy) {
  PrototypeStore s(options(10));
  for (int i = 0; i < 10; ++i) {
    const double h = 0.45 - 0.03 * i;
    ASSERT_EQ(s.try_insert(0, std::vector<double>{1.0 * i, 0}, h, 0.3), InsertOutcome::Inserted);
  }
  EXPECT_EQ(s.try_insert(0, std::vector<double>{9, 9}, 0.30, 0.3),
            InsertOutcome::ReplacedMaxEntropy);
  const auto e = s.entries(0);
  EXPECT_EQ(e.size(), 10u);
  EXPECT_LE(e.back().entropy, 0.45);
  EXPECT_NE(e.back().entropy, 0.45);
  EXPECT_EQ(s.try_insert(0, std::vector<double>{0, 0}, 0.44, 0.3),
            InsertOutcome::RejectedFullHigherEntropy);
}

TEST(TryInsert, GateRejectsRegardlessOfState) {
  PrototypeStore s(options(1));
  EXPECT_EQ(s.try_insert(0, std::vector<double>{1, 0}, 0.6, 0.9), InsertOutcome::RejectedCriteria);
  s.try_insert(0, std::vector<double>{1, 0}, 0.4, 0.9);
  EXPECT_EQ(s.try_insert(0, std::vector<double>{1, 0}, 0.6, 0.9), InsertOutcome::RejectedCriteria);
  EXPECT_EQ(s.try_insert(0, std::vector<double>{1, 0}, 0.1, 0.1), InsertOutcome::RejectedCriteria);
  EXPECT_EQ(s.queue_size(0), 1u);
}

TEST(TryInsert, Errors) {
  PrototypeStore s(options());
  EXPECT_THROW(s.try_insert(3, std::vector<double>{1, 0}, 0.1, 0.5), ShapeError);
  EXPECT_THROW(s.try_insert(0, std::vector<double>{1, 0, 0}, 0.1, 0.5), ShapeError);
  EXPECT_THROW(PrototypeStore(options(0)), ConfigError);
  EXPECT_THROW(PrototypeStore(options(3, 0)), ConfigError);
}

TEST(TryInsert, FloorsZeroEntropy) {
  PrototypeStore s(options());
  s.try_insert(0, std::vector<double>{1, 0}, 0.0, 0.5);
  EXPECT_EQ(s.entries(0)[0].entropy, kEntropyFloor);
}

TEST(Tick, EvictsLowestEntropyEveryPSteps) {
  PrototypeStore s(options(10, 3));
  s.try_insert(0, std::vector<double>{1, 0}, 0.2, 0.5);
  s.try_insert(0, std::vector<double>{0, 1}, 0.1, 0.5);
  s.tick();
  s.tick();
  EXPECT_EQ(s.queue_size(0), 2u);
  const auto evicted = s.tick();
  EXPECT_TRUE(evicted[0]);
  EXPECT_FALSE(evicted[1]);
  ASSERT_EQ(s.queue_size(0), 1u);
  EXPECT_EQ(s.entries(0)[0].entropy, 0.2);
  EXPECT_EQ(s.step_counter(), 3u);
}

TEST(Tick, EmptyStoreStaysEmpty) {
  PrototypeStore s(options(10, 1));
  for (int i = 0; i < 100; ++i) s.tick();
  EXPECT_EQ(s.total_size(), 0u);
}

TEST(Tick, IntervalOneEvictsEveryTick) {
  PrototypeStore s(options(10, 1));
  for (int i = 0; i < 4; ++i) s.try_insert(2, std::vector<double>{1, 1}, 0.1 * (i + 1), 0.5);
  for (std::size_t left : {3u, 2u, 1u, 0u, 0u}) {
    s.tick();
    EXPECT_EQ(s.queue_size(2), left);
  }
}

TEST(Tick, EvictionCountFollowsFloorFormula) {
  for (std::size_t p : {1u, 2u, 5u, 7u}) {
    PrototypeStore s(options(200, p, 1));
    for (int i = 0; i < 150; ++i) s.try_insert(0, std::vector<double>{1, 0}, 0.001 * (i + 1), 0.5);
    for (std::size_t t = 1; t <= 60; ++t) {
      const std::size_t before = s.queue_size(0);
      s.tick();
      EXPECT_EQ(before - s.queue_size(0), t / p - (t - 1) / p);
    }
  }
}

TEST(Tick, EntropyTieEvictsOldest) {
  PrototypeStore s(options(10, 1));
  s.try_insert(0, std::vector<double>{1, 0}, 0.2, 0.5);
  s.try_insert(0, std::vector<double>{0, 1}, 0.2, 0.5);
  s.tick();
  EXPECT_EQ(s.entries(0)[0].feature, (Vector{0, 1}));
}

TEST(Prototype, Examples) {
  PrototypeStore s(options());
  EXPECT_FALSE(s.prototype(0).has_value());
  s.try_insert(0, std::vector<double>{0.3, -2}, 0.25, 0.5);
  EXPECT_EQ(*s.prototype(0), (Vector{0.3, -2}));
  StoreOptions o = options();
  o.sigma = 1.5;
  PrototypeStore weighted(o);
  weighted.try_insert(1, std::vector<double>{1, 0}, 0.5, 0.5);
  weighted.try_insert(1, std::vector<double>{0, 1}, 1.0, 0.5);
  EXPECT_NEAR((*weighted.prototype(1))[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR((*weighted.prototype(1))[1], 1.0 / 3.0, 1e-15);
  PrototypeStore equal(options());
  equal.try_insert(2, std::vector<double>{1, 2}, 0.3, 0.5);
  equal.try_insert(2, std::vector<double>{3, 6}, 0.3, 0.5);
  equal.try_insert(2, std::vector<double>{-1, 1}, 0.3, 0.5);
  EXPECT_NEAR((*equal.prototype(2))[0], 1.0, 1e-15);
  EXPECT_NEAR((*equal.prototype(2))[1], 3.0, 1e-15);
}

TEST(NearestPrototype, Examples) {
  PrototypeStore s(options());
  EXPECT_FALSE(s.nearest_prototype(std::vector<double>{1, 0}).has_value());
  s.try_insert(0, std::vector<double>{1, 0}, 0.1, 0.5);
  s.try_insert(1, std::vector<double>{0, 1}, 0.1, 0.5);
  EXPECT_EQ(s.nearest_prototype(std::vector<double>{0.9, 0.1})->label, 0u);
  const auto self = s.nearest_prototype(std::vector<double>{0, 3});
  EXPECT_EQ(self->label, 1u);
  EXPECT_NEAR(self->similarity, 1.0, 1e-15);
  EXPECT_EQ(s.nearest_prototype(std::vector<double>{1, 1})->label, 0u);
  EXPECT_THROW(s.nearest_prototype(std::vector<double>{0, 0}), NumericError);
}

TEST(Store, FullQueueNeverRaisesMaxEntropy) {
  PrototypeStore s(options(5, 1000, 1));
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  for (int i = 0; i < 5; ++i) s.try_insert(0, std::vector<double>{1, 0}, u(rng), 0.5);
  for (int i = 0; i < 500; ++i) {
    const double before = s.entries(0).back().entropy;
    s.try_insert(0, std::vector<double>{0, 1}, u(rng), 0.5);
    EXPECT_LE(s.entries(0).back().entropy, before);
  }
}

TEST(Store, MatchesListModel) {
  for (std::size_t k : {1u, 2u, 5u, 10u, 25u}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto run = testing::run_store_oracle(k, 2000, seed);
      EXPECT_TRUE(run.ok) << "K=" << k << " seed " << seed << ": " << run.message;
      EXPECT_GT(run.evictions, 0u);
      if (k <= 10) EXPECT_GT(run.replacements, 0u);
    }
  }
}

TEST(Store, JsonRoundTripAndDeterminism) {
  PrototypeStore a(options(4, 3));
  PrototypeStore b(options(4, 3));
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 60; ++i) {
    const std::size_t c = rng() % 3;
    const std::vector<double> z{u(rng), u(rng) - 0.5};
    const double h = u(rng) * 0.6;
    const double dp = u(rng);
    EXPECT_EQ(a.try_insert(c, z, h, dp), b.try_insert(c, z, h, dp));
    if (i % 4 == 0) {
      a.tick();
      b.tick();
    }
  }
  EXPECT_TRUE(a == b);
  const PrototypeStore c = PrototypeStore::from_json(a.to_json());
  EXPECT_TRUE(c == a);
  EXPECT_EQ(c.to_json().dump(), a.to_json().dump());
  ASSERT_TRUE(a.to_json().contains("classes"));
  EXPECT_EQ(a.to_json()["classes"].size(), 3u);
}

TEST(Store, ClearEmptiesEverything) {
  PrototypeStore s(options());
  s.try_insert(0, std::vector<double>{1, 0}, 0.1, 0.5);
  s.clear();
  EXPECT_EQ(s.total_size(), 0u);
  EXPECT_FALSE(s.has_any_prototype());
}

}  // namespace
}  // namespace slomo
