#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "skysim/aoi.hpp"

using namespace skysim;

namespace {

using K = AgeEvent::Kind;

AgeEvent gen(int ue, double t) { return {K::generation, ue, t}; }
AgeEvent col(int ue, double t) { return {K::collection, ue, t}; }

const std::vector<double> kOne{1.0};

}  // namespace

TEST(AgeTracker, NeverCollectedPacketViolatesAfterThreshold) {
  AgeTracker t(1, 3.0, 50.0);
  const std::vector<AgeEvent> ev{gen(0, 0.0)};
  t.advance(ev, 10.0);
  EXPECT_DOUBLE_EQ(t.violated_time(0), 7.0);
  EXPECT_DOUBLE_EQ(violation_ratio(t), 7.0);
  // integral of a over [0,10] plus e^a over [3,10]
  EXPECT_NEAR(aoi_penalty(t, kOne), 50.0 + std::exp(10.0) - std::exp(3.0), 1e-9);
}

TEST(AgeTracker, LinearRampBelowThreshold) {
  AgeTracker t(1, 5.0, 50.0);
  const std::vector<AgeEvent> ev{gen(0, 0.0)};
  t.advance(ev, 2.0);
  EXPECT_DOUBLE_EQ(aoi_penalty(t, kOne), 2.0);
  EXPECT_EQ(violation_ratio(t), 0.0);
}

TEST(AgeTracker, PenaltyAtZeroAge) { EXPECT_EQ(exp_penalty(0.0), 1.0); }

TEST(AgeTracker, FullyViolatedRun) {
  AgeTracker t(1, 1e-9, 50.0);
  const std::vector<AgeEvent> ev{gen(0, 0.0)};
  t.advance(ev, 10.0);
  EXPECT_NEAR(violation_ratio(t), 10.0, 1e-8);
}

TEST(AgeTracker, EmptyQueueContributesNothing) {
  AgeTracker t(2, 3.0, 50.0);
  t.advance({}, 25.0);
  const std::vector<double> w{1, 1};
  EXPECT_EQ(violation_ratio(t), 0.0);
  EXPECT_EQ(aoi_penalty(t, w), 0.0);
}

TEST(AgeTracker, CollectedEverySlotNeverViolates) {
  AgeTracker t(1, 1.5, 50.0);
  for (int s = 0; s < 50; ++s) {
    const std::vector<AgeEvent> ev{gen(0, s), col(0, s + 0.9)};
    t.advance(ev, s + 1.0);
  }
  EXPECT_EQ(t.violated_time(0), 0.0);
  EXPECT_NEAR(aoi_penalty(t, kOne), 50 * 0.5 * 0.81, 1e-9);
}

TEST(AgeTracker, TwoUeMixedCase) {
  // UE 0 holds a packet from 0 to 6 (th 2 -> violated 4); UE 1 from 1 to 4 (violated 1).
  AgeTracker t(2, 2.0, 50.0);
  const std::vector<AgeEvent> ev{gen(0, 0.0), gen(1, 1.0), col(1, 4.0), col(0, 6.0)};
  t.advance(ev, 8.0);
  EXPECT_DOUBLE_EQ(t.violated_time(0), 4.0);
  EXPECT_DOUBLE_EQ(t.violated_time(1), 1.0);
  EXPECT_DOUBLE_EQ(violation_ratio(t), 2.5);
  EXPECT_DOUBLE_EQ(violation_ratio(t, 8.0), 2.5 / 8.0);
}

TEST(AgeTracker, CollectionAdvancesToNextPacket) {
  AgeTracker t(1, 100.0, 50.0);
  const std::vector<AgeEvent> ev{gen(0, 0.0), gen(0, 2.0), col(0, 3.0)};
  t.advance(ev, 5.0);
  ASSERT_TRUE(t.oldest(0).has_value());
  EXPECT_EQ(*t.oldest(0), 2.0);
  EXPECT_EQ(t.age(0), 3.0);
  // age 0->3 then 1->3
  EXPECT_DOUBLE_EQ(t.linear_integral(0), 4.5 + 4.0);
}

TEST(AgeTracker, ExponentCapSaturates) {
  AgeTracker t(1, 1.0, 4.0);
  const std::vector<AgeEvent> ev{gen(0, 0.0)};
  t.advance(ev, 10.0);
  const double want = 50.0 + (std::exp(4.0) - std::exp(1.0)) + std::exp(4.0) * 6.0;
  EXPECT_NEAR(t.penalty_integral(0), want, 1e-9 * want);
  EXPECT_EQ(capped_exp_integral(5, 7, 4), std::exp(4.0) * 2);
}

TEST(AgeTracker, ContractViolations) {
  AgeTracker t(1, 3.0, 50.0);
  t.advance({}, 2.0);
  EXPECT_THROW(t.advance({}, 1.0), ContractError);
  const std::vector<AgeEvent> early{gen(0, 1.0)};
  EXPECT_THROW(t.advance(early, 3.0), ContractError);
  const std::vector<AgeEvent> empty_col{col(0, 2.5)};
  EXPECT_THROW(t.advance(empty_col, 3.0), ContractError);
  const std::vector<AgeEvent> bad_ue{gen(3, 2.5)};
  EXPECT_THROW(t.advance(bad_ue, 3.0), ContractError);
}

TEST(AgeTracker, MatchesNumericalIntegration) {
  Rng rng(31);
  for (int trace = 0; trace < 50; ++trace) {
    const double threshold = 1 + static_cast<int>(uniform01(rng) * 5);
    const double cap = 12;
    const int X = 20;
    std::vector<oracle::AoiEvent> events;
    AgeTracker t(1, threshold, cap);
    int queued = 0;
    for (int s = 0; s < X; ++s) {
      std::vector<AgeEvent> slot;
      if (uniform01(rng) < 0.4) {
        slot.push_back(gen(0, s));
        events.push_back({true, static_cast<double>(s)});
        ++queued;
      }
      if (queued > 0 && uniform01(rng) < 0.3) {
        const double at = s + (1 + static_cast<int>(uniform01(rng) * 99)) / 100.0;
        slot.push_back(col(0, at));
        events.push_back({false, at});
        --queued;
      }
      t.advance(slot, s + 1.0);
    }
    const auto want = oracle::aoi_numeric(events, X, threshold, cap);
    const double chi = violation_ratio(t), q = aoi_penalty(t, kOne);
    if (want.chi == 0) EXPECT_NEAR(chi, 0.0, 1e-9);
    else EXPECT_LE(oracle::rel_err(chi, want.chi), 1e-6) << trace;
    EXPECT_LE(oracle::rel_err(q, want.q), 1e-6) << trace;
  }
}

TEST(Metrics, ExponentialBranchBoundsLinearPenalty) {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    AgeTracker t(3, 2.0 + uniform01(rng) * 4, 50.0);
    for (int s = 0; s < 15; ++s) {
      std::vector<AgeEvent> ev;
      for (int m = 0; m < 3; ++m)
        if (uniform01(rng) < 0.3) ev.push_back(gen(m, s));
      for (int m = 0; m < 3; ++m)
        if (t.pending(m) + (std::count_if(ev.begin(), ev.end(), [m](const AgeEvent& e) { return e.ue == m; })) > 0 &&
            uniform01(rng) < 0.3)
          ev.push_back(col(m, s + 0.5));
      t.advance(ev, s + 1.0);
    }
    const std::vector<double> w{1, 1, 1};
    const double q = aoi_penalty(t, w), lin = linear_aoi_penalty(t, w);
    EXPECT_GE(q, lin);
    EXPECT_EQ(q == lin, violation_ratio(t) == 0.0);
  }
}

TEST(Metrics, WeightScalingAndRelabeling) {
  AgeTracker a(2, 2.0, 50.0), b(2, 2.0, 50.0);
  const std::vector<AgeEvent> ea{gen(0, 0.0), gen(1, 1.0), col(0, 3.5)};
  const std::vector<AgeEvent> eb{gen(1, 0.0), gen(0, 1.0), col(1, 3.5)};
  a.advance(ea, 6.0);
  b.advance(eb, 6.0);
  const std::vector<double> w1{1, 1}, w2{2, 2};
  EXPECT_DOUBLE_EQ(aoi_penalty(a, w1), aoi_penalty(b, w1));
  EXPECT_DOUBLE_EQ(violation_ratio(a), violation_ratio(b));
  EXPECT_DOUBLE_EQ(aoi_penalty(a, w2), 2 * aoi_penalty(a, w1));
}

TEST(Metrics, WeightCountMustMatch) {
  AgeTracker t(2, 2.0, 50.0);
  EXPECT_THROW(aoi_penalty(t, kOne), ContractError);
}
