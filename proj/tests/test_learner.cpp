#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "skysim/learner.hpp"

using namespace skysim;

namespace {

ScenarioConfig small() {
  ScenarioConfig c;
  c.area_side_m = 300;
  c.num_ues = 3;
  c.num_cuavs = 1;
  c.num_iuavs = 1;
  c.irs_elements = 2;
  c.horizon_slots = 8;
  c.ue_task.data_bits = 2e6;
  c.ue_task.arrival_rate = 0.4;
  c.eve_centroid = {240, 60};
  c.jammer_centroid = {60, 240};
  c.radio.eve_region_radius_m = 10;
  c.radio.jammer_region_radius_m = 10;
  c.energy.coverage_radius_m = 100;
  c.aoi.threshold_slots = 3;
  c.aoi.exponent_cap = 6;
  c.network = {8, 1, 1, 3, 16, 8, GateKind::gru, 2.0, false};
  c.learning.minibatch = 8;
  c.learning.broadcast_interval = 1;
  c.learning.episodes = 4;
  return c;
}

struct Episode {
  std::vector<double> values, rewards, mu, pi;
  std::vector<std::uint8_t> dones;
  double bootstrap = 0;
};

/// Values and rewards on a 1/8 grid so every partial sum is exact.
Episode dyadic(Rng& rng, int T, bool terminal) {
  Episode e;
  auto eighth = [&] { return std::floor(uniform(rng, -16, 16)) / 8; };
  for (int t = 0; t < T; ++t) {
    e.values.push_back(eighth());
    e.rewards.push_back(eighth());
    const double lp = -uniform(rng, 0, 3);
    e.mu.push_back(lp);
    e.pi.push_back(lp);
    e.dones.push_back(terminal && t == T - 1 ? 1 : 0);
  }
  e.bootstrap = eighth();
  return e;
}

EpisodicBuffer one_step_buffer(const ScenarioConfig& c, const PolicyLayout& layout, double reward, double mu) {
  Environment env(c);
  const auto obs = env.reset(1);
  EpisodicBuffer b;
  for (int u = 0; u < env.num_uavs(); ++u) {
    AgentTrajectory a;
    a.uav = u;
    a.obs = {obs[u]};
    Experience e;
    e.action.assign(env.heads(u).size(), 0);
    e.active.assign(env.heads(u).size(), 1);
    e.behavior_logp = mu;
    e.reward = reward;
    e.done = true;
    a.steps.push_back(e);
    b.agents.push_back(a);
  }
  (void)layout;
  return b;
}

double uniform_logp(const Environment& env, int u) {
  double lp = 0;
  for (int s : env.heads(u)) lp -= std::log(static_cast<double>(s));
  return lp;
}

std::vector<ParameterSet> zero_grads(const std::vector<ParameterSet>& p) {
  std::vector<ParameterSet> g;
  for (const auto& s : p) g.push_back(s.zeros_like());
  return g;
}

}  // namespace

TEST(VTrace, ZeroTdLeavesValues) {
  const std::vector<double> v{1.0, 0.5, 0.25}, r{0.5, 0.25, 0.25};
  const std::vector<double> lp{-1, -2, -0.5};
  const std::vector<std::uint8_t> d{0, 0, 0};
  const auto out = vtrace(v, 0.0, r, lp, lp, d, 1.0, 1, 1);
  EXPECT_EQ(out.vs, v);
}

TEST(VTrace, SingleTerminalStep) {
  const std::vector<double> v{0}, r{1}, lp{-0.3};
  const std::vector<std::uint8_t> d{1};
  EXPECT_EQ(vtrace(v, 5.0, r, lp, lp, d, 0.95, 1, 1).vs[0], 1.0);
}

TEST(VTrace, OnPolicyEqualsNStepReturnsExactly) {
  Rng rng(51);
  for (int k = 0; k < 100; ++k) {
    const double gamma = std::vector<double>{0.25, 0.5, 0.75}[k % 3];
    const auto e = dyadic(rng, 20, k % 2 == 0);
    const auto out = vtrace(e.values, e.bootstrap, e.rewards, e.mu, e.pi, e.dones, gamma, 1, 1);
    const auto want = oracle::nstep_returns(e.rewards, e.dones, e.bootstrap, gamma);
    for (int t = 0; t < 20; ++t) EXPECT_EQ(out.vs[t], want[t]) << "k=" << k << " t=" << t;
  }
}

TEST(VTrace, OnPolicyGeneralDoubles) {
  Rng rng(52);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> v, r, lp;
    std::vector<std::uint8_t> d;
    for (int t = 0; t < 20; ++t) {
      v.push_back(uniform(rng, -5, 5));
      r.push_back(uniform(rng, -2, 2));
      lp.push_back(-uniform(rng, 0, 4));
      d.push_back(t == 11 && k % 3 == 0 ? 1 : 0);
    }
    const double boot = uniform(rng, -5, 5), gamma = uniform(rng, 0.5, 0.99);
    const auto out = vtrace(v, boot, r, lp, lp, d, gamma, 1, 1);
    const auto want = oracle::nstep_returns(r, d, boot, gamma);
    for (int t = 0; t < 20; ++t) EXPECT_LE(std::abs(out.vs[t] - want[t]), 1e-12 * std::max(1.0, std::abs(want[t])));
  }
}

TEST(VTrace, OffPolicyMatchesTruncatedSum) {
  Rng rng(53);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> v, r, mu, pi, log_ratio;
    std::vector<std::uint8_t> d;
    for (int t = 0; t < 15; ++t) {
      v.push_back(uniform(rng, -5, 5));
      r.push_back(uniform(rng, -2, 2));
      mu.push_back(-uniform(rng, 0, 4));
      pi.push_back(-uniform(rng, 0, 4));
      log_ratio.push_back(pi.back() - mu.back());
      d.push_back(t == 9 && k % 2 ? 1 : 0);
    }
    const double boot = uniform(rng, -5, 5), gamma = 0.95;
    const double rho_bar = k % 4 == 0 ? 2.0 : 1.0, c_bar = k % 4 == 0 ? 1.5 : 1.0;
    const auto out = vtrace(v, boot, r, mu, pi, d, gamma, rho_bar, c_bar);
    const auto want = oracle::vtrace_sum(v, boot, r, log_ratio, d, gamma, rho_bar, c_bar);
    for (int t = 0; t < 15; ++t) {
      EXPECT_LE(std::abs(out.vs[t] - want[t]), 1e-12 * std::max(1.0, std::abs(want[t])));
      EXPECT_LE(out.rho[t], rho_bar);
      EXPECT_LE(out.c[t], c_bar);
      EXPECT_GT(out.rho[t], 0.0);
    }
  }
}

TEST(VTrace, OnPolicyIndependentOfBehaviorValues) {
  const std::vector<double> v{0.3, -1.2, 0.8}, r{1, 0, -1};
  const std::vector<double> a{-0.1, -2.0, -3.0}, b{-4.0, -0.5, -0.01};
  const std::vector<std::uint8_t> d{0, 0, 0};
  EXPECT_EQ(vtrace(v, 0.4, r, a, a, d, 0.9, 1, 1).vs, vtrace(v, 0.4, r, b, b, d, 0.9, 1, 1).vs);
}

TEST(VTrace, RejectsBadInput) {
  const std::vector<double> v{0.0, 1.0}, r{1.0, NAN}, lp{0.0, 0.0}, short_lp{0.0};
  const std::vector<std::uint8_t> d{0, 0};
  EXPECT_THROW(vtrace(v, 0, r, lp, lp, d, 0.9, 1, 1), ContractError);
  const std::vector<double> ok{1.0, 1.0};
  EXPECT_THROW(vtrace(v, 0, ok, short_lp, lp, d, 0.9, 1, 1), ContractError);
}

TEST(Losses, SingleTransitionHandCase) {
  auto c = small();
  c.learning.reward_scale = 0.5;
  const PolicyLayout layout(c);
  const auto params = layout.init(3);
  Environment env(c);
  const double r = 3.0;
  std::vector<EpisodicBuffer> bufs{one_step_buffer(c, layout, r, 0.0)};
  for (int u = 0; u < 2; ++u) bufs[0].agents[u].steps[0].behavior_logp = uniform_logp(env, u);
  auto g = zero_grads(params);
  const auto rep = compute_gradients(layout, params, bufs, c.learning, g);
  // zero heads: uniform policy, V = 0, on-policy so rho = 1 and the advantage is the scaled reward
  double policy = 0, ent = 0;
  for (int u = 0; u < 2; ++u) {
    const double lp = uniform_logp(env, u);
    policy += -(r * 0.5) * lp - c.learning.entropy_coef * (-lp);
    ent += -lp;
  }
  EXPECT_NEAR(rep.policy, policy, 1e-12 * std::abs(policy));
  EXPECT_NEAR(rep.entropy, ent, 1e-12 * ent);
  EXPECT_NEAR(rep.value, 2 * (r * 0.5) * (r * 0.5), 1e-12);
  // value head bias: c_v * 2 (V - vs) per UAV in the group
  EXPECT_NEAR(g[0]["value.b"](0, 0), c.learning.value_coef * 2 * (0 - r * 0.5), 1e-12);
}

TEST(Losses, ValueOffsetGivesSquaredLoss) {
  const auto c = small();
  const PolicyLayout layout(c);
  auto params = layout.init(3);
  const double delta = 0.75;
  for (auto& p : params) p["value.b"](0, 0) = delta;
  Environment env(c);
  std::vector<EpisodicBuffer> bufs{one_step_buffer(c, layout, 0.0, 0.0)};
  for (int u = 0; u < 2; ++u) bufs[0].agents[u].steps[0].behavior_logp = uniform_logp(env, u);
  auto g = zero_grads(params);
  const auto rep = compute_gradients(layout, params, bufs, c.learning, g);
  EXPECT_NEAR(rep.value, 2 * delta * delta, 1e-12);
  EXPECT_NEAR(g[1]["value.b"](0, 0), c.learning.value_coef * 2 * delta, 1e-12);
}

TEST(Losses, ZeroAdvantageGivesZeroGradient) {
  auto c = small();
  c.learning.entropy_coef = 0;
  const PolicyLayout layout(c);
  const auto params = layout.init(3);
  const std::vector<EpisodicBuffer> bufs{one_step_buffer(c, layout, 0.0, -1.0)};
  auto g = zero_grads(params);
  compute_gradients(layout, params, bufs, c.learning, g);
  for (const auto& s : g) EXPECT_EQ(s.squared_norm(), 0.0);
}

TEST(Losses, PolicyGradientLinearInAdvantage) {
  auto c = small();
  c.learning.entropy_coef = 0;
  c.learning.value_coef = 0;
  const PolicyLayout layout(c);
  const auto params = layout.init(3);
  auto g1 = zero_grads(params), g3 = zero_grads(params);
  const std::vector<EpisodicBuffer> b1{one_step_buffer(c, layout, 1.0, -2.0)}, b3{one_step_buffer(c, layout, 3.0, -2.0)};
  compute_gradients(layout, params, b1, c.learning, g1);
  compute_gradients(layout, params, b3, c.learning, g3);
  for (std::size_t k = 0; k < g1.size(); ++k) {
    EXPECT_GT(g1[k].squared_norm(), 0.0);
    for (int t = 0; t < g1[k].size(); ++t)
      EXPECT_LE((g3[k][t] - 3 * g1[k][t]).norm(), 1e-12 * std::max(1.0, g3[k][t].norm())) << g1[k].name(t);
  }
}

TEST(Losses, DuplicateBufferKeepsMeanGradient) {
  const auto c = small();
  const PolicyLayout layout(c);
  const Learner learner(c, layout, layout.init(4));
  Actor actor(c, layout, 0, 5);
  actor.set_policy(learner.snapshot());
  const auto b = actor.fill_buffer();
  auto g1 = zero_grads(learner.params()), g2 = zero_grads(learner.params());
  const std::vector<EpisodicBuffer> one{b}, two{b, b};
  compute_gradients(layout, learner.params(), one, c.learning, g1);
  compute_gradients(layout, learner.params(), two, c.learning, g2);
  for (std::size_t k = 0; k < g1.size(); ++k)
    for (int t = 0; t < g1[k].size(); ++t)
      EXPECT_LE((g2[k][t] - g1[k][t]).norm(), 1e-12 * std::max(1.0, g1[k][t].norm()));
}

TEST(LearnerStep, ZeroGradientLeavesParametersAndBumpsVersion) {
  auto c = small();
  c.learning.entropy_coef = 0;
  const PolicyLayout layout(c);
  Learner learner(c, layout, layout.init(3));
  const auto before = learner.params();
  const auto st = learner.step({one_step_buffer(c, layout, 0.0, -1.0)});
  EXPECT_EQ(st.version, 1u);
  EXPECT_EQ(learner.version(), 1u);
  for (std::size_t k = 0; k < before.size(); ++k)
    for (int t = 0; t < before[k].size(); ++t) EXPECT_EQ(learner.params()[k][t], before[k][t]);
  EXPECT_EQ(learner.params()[0].version, 1u);
}

TEST(LearnerStep, LossDecreasesOnFrozenBatch) {
  auto c = small();
  c.learning.learning_rate = 0.01;
  c.learning.broadcast_interval = 100;
  const PolicyLayout layout(c);
  Learner learner(c, layout, layout.init(6));
  Actor actor(c, layout, 0, 7);
  actor.set_policy(learner.snapshot());
  std::vector<EpisodicBuffer> batch{actor.fill_buffer()};
  const double first = learner.step(batch).loss.value;
  double last = first;
  for (int k = 0; k < 49; ++k) last = learner.step(batch).loss.value;
  EXPECT_LT(last, 0.5 * first);
  EXPECT_EQ(learner.version(), 50u);
  EXPECT_EQ(learner.dropped(), 0u);
}

TEST(LearnerStep, StaleBuffersAreDropped) {
  auto c = small();
  c.learning.staleness_cap = 2;
  c.learning.broadcast_interval = 1;
  const PolicyLayout layout(c);
  Learner learner(c, layout, layout.init(3));
  auto b = one_step_buffer(c, layout, 1.0, -1.0);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(learner.step({}).buffers_dropped, 0u);
  b.behavior_version = 1;
  EXPECT_FALSE(learner.stale(b));
  b.behavior_version = 0;
  EXPECT_TRUE(learner.stale(b));
  const auto st = learner.step({b});
  EXPECT_EQ(st.buffers_used, 0u);
  EXPECT_EQ(st.buffers_dropped, 1u);
}

TEST(LearnerStep, BroadcastEveryInterval) {
  auto c = small();
  c.learning.broadcast_interval = 3;
  const PolicyLayout layout(c);
  Learner learner(c, layout, layout.init(3));
  std::vector<bool> flags;
  for (int k = 0; k < 7; ++k) flags.push_back(learner.step({}).broadcast);
  EXPECT_EQ(flags, (std::vector<bool>{false, false, true, false, false, true, false}));
}

TEST(BufferQueue, EvictsOldestWhenFull) {
  BufferQueue q(10);
  auto make = [](int actor, int steps) {
    EpisodicBuffer b;
    b.actor = actor;
    b.agents.resize(1);
    b.agents[0].steps.resize(static_cast<std::size_t>(steps));
    return b;
  };
  EXPECT_TRUE(q.push(make(0, 4)));
  EXPECT_TRUE(q.push(make(1, 4)));
  EXPECT_TRUE(q.push(make(2, 4)));
  EXPECT_EQ(q.evicted(), 1u);
  EXPECT_EQ(q.pop()->actor, 1);
  EXPECT_EQ(q.try_pop()->actor, 2);
  EXPECT_FALSE(q.try_pop().has_value());
  q.close();
  EXPECT_FALSE(q.push(make(3, 1)));
  EXPECT_FALSE(q.pop().has_value());
}

TEST(Actor, BehaviorLogProbsReplayUnderSnapshot) {
  const auto c = small();
  const PolicyLayout layout(c);
  auto params = layout.init(8);
  Rng noise(9);
  for (auto& p : params)
    for (int t = 0; t < p.size(); ++t)
      for (Eigen::Index i = 0; i < p[t].size(); ++i) p[t].data()[i] += 0.2 * standard_normal(noise);
  const Learner learner(c, layout, params, 12);
  Actor actor(c, layout, 0, 10);
  actor.set_policy(learner.snapshot());
  for (int k = 0; k < 2; ++k) {
    const auto b = actor.fill_buffer();
    EXPECT_EQ(b.behavior_version, 12u);
    for (const auto& a : b.agents) {
      const int g = layout.group(a.uav);
      for (std::size_t t = 0; t < a.steps.size(); ++t) {
        const auto w = a.window(a.prefix + static_cast<int>(t), layout.context());
        const auto fwd = layout.network(g).forward(params[g], w);
        EXPECT_EQ(a.steps[t].behavior_logp, log_prob(fwd.logits, a.steps[t].action, a.steps[t].active));
      }
    }
  }
}

TEST(Actor, BufferHoldsCapacityTransitions) {
  auto c = small();
  c.learning.buffer_capacity = 3;
  const PolicyLayout layout(c);
  const Learner learner(c, layout, layout.init(1));
  Actor actor(c, layout, 0, 2);
  actor.set_policy(learner.snapshot());
  const auto a = actor.fill_buffer();
  const auto b = actor.fill_buffer();
  const auto tail = actor.fill_buffer();
  for (const auto* buf : {&a, &b}) {
    for (const auto& ag : buf->agents) {
      EXPECT_EQ(ag.steps.size(), 3u);
      EXPECT_TRUE(ag.has_bootstrap());
    }
    EXPECT_TRUE(buf->finished.empty());
  }
  for (const auto& ag : tail.agents) {
    EXPECT_EQ(ag.steps.size(), 2u);
    EXPECT_TRUE(ag.steps.back().done);
    EXPECT_FALSE(ag.has_bootstrap());
    EXPECT_EQ(ag.prefix, 2);
  }
  EXPECT_EQ(tail.finished.size(), 1u);
}

TEST(Actor, KeepsOldWeightsWhenMailboxIsQuiet) {
  const auto c = small();
  const PolicyLayout layout(c);
  const Learner learner(c, layout, layout.init(1));
  SnapshotMailbox box;
  EXPECT_EQ(box.latest(), nullptr);
  const auto s = learner.snapshot();
  box.post(s);
  Actor actor(c, layout, 0, 2);
  actor.set_policy(box.latest());
  actor.fill_buffer();
  EXPECT_EQ(box.latest(), s);
  EXPECT_EQ(actor.policy(), s);
  Actor idle(c, layout, 1, 2);
  EXPECT_THROW(idle.fill_buffer(), ContractError);
}

TEST(Training, SyncModeIsDeterministic) {
  const auto c = small();
  auto run = [&] {
    const PolicyLayout layout(c);
    Learner learner(c, layout, layout.init(1));
    std::vector<double> curve;
    TrainingOptions opt;
    opt.seed = 3;
    opt.episodes = 6;
    opt.on_update = [&](const UpdateStats& st, double ret, const Learner&) {
      curve.push_back(st.loss.policy);
      curve.push_back(st.loss.value);
      curve.push_back(ret);
    };
    const auto res = train(c, layout, learner, opt);
    EXPECT_EQ(res.episodes, 6u);
    EXPECT_EQ(res.version, res.updates);
    return curve;
  };
  const auto a = run(), b = run();
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}

TEST(Training, ThreadedModeReachesBudget) {
  const auto c = small();
  const PolicyLayout layout(c);
  Learner learner(c, layout, layout.init(1));
  TrainingOptions opt;
  opt.workers = 2;
  opt.sync = false;
  opt.episodes = 6;
  const auto res = train(c, layout, learner, opt);
  EXPECT_GE(res.episodes, 6u);
  EXPECT_GT(res.updates, 0u);
  EXPECT_FALSE(res.interrupted);
}

TEST(Training, StopRequestInterrupts) {
  const auto c = small();
  const PolicyLayout layout(c);
  Learner learner(c, layout, layout.init(1));
  TrainingOptions opt;
  opt.episodes = 100;
  int polls = 0;
  opt.should_stop = [&] { return ++polls > 3; };
  const auto res = train(c, layout, learner, opt);
  EXPECT_TRUE(res.interrupted);
  EXPECT_LT(res.episodes, 100u);
}

TEST(PolicyLayout, GroupsAndCompatibility) {
  auto c = small();
  const PolicyLayout shared(c);
  EXPECT_EQ(shared.num_groups(), 2);
  EXPECT_EQ(shared.group(0), 0);
  EXPECT_EQ(shared.group(1), 1);
  c.network.per_uav = true;
  c.num_cuavs = 2;
  const PolicyLayout per(c);
  EXPECT_EQ(per.num_groups(), 3);
  EXPECT_EQ(per.group(2), 2);
  EXPECT_FALSE(per.compatible(shared.init(1)));
  EXPECT_TRUE(per.compatible(per.init(1)));
  EXPECT_THROW(Learner(c, per, shared.init(1)), ConfigError);
}

TEST(Evaluate, DeterministicGivenSeed) {
  const auto c = small();
  const PolicyLayout layout(c);
  const Learner learner(c, layout, layout.init(1));
  const auto a = evaluate(c, nullptr, nullptr, 3, 4);
  const auto b = evaluate(c, nullptr, nullptr, 3, 4);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(a[k].q, b[k].q);
    EXPECT_EQ(a[k].mean_return, b[k].mean_return);
  }
  const auto p = evaluate(c, &layout, learner.snapshot(), 2, 4);
  const auto q = evaluate(c, &layout, learner.snapshot(), 2, 4);
  EXPECT_EQ(p[1].chi, q[1].chi);
  int slots = 0;
  evaluate(c, &layout, learner.snapshot(), 1, 4, true, [&](int, const Environment&) { ++slots; });
  EXPECT_EQ(slots, c.horizon_slots + 1);
}
