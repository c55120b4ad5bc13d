#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "net_oracle.hpp"
#include "skysim/gtr.hpp"

using namespace skysim;

namespace {

GtrSpec tiny_spec(int d = 8, int heads = 1, int blocks = 1, GateKind gate = GateKind::gru) {
  GtrSpec s;
  s.obs_dim = 5;
  s.d_model = d;
  s.heads = heads;
  s.blocks = blocks;
  s.context = 4;
  s.ff_width = 2 * d;
  s.embed_hidden = 6;
  s.gate = gate;
  s.head_sizes = {3, 4};
  return s;
}

/// Initial parameters plus noise on every tensor, so heads and gates are live.
ParameterSet noisy(const GtrNetwork& net, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  auto p = net.init(rng);
  for (int t = 0; t < p.size(); ++t)
    for (Eigen::Index i = 0; i < p[t].size(); ++i) p[t].data()[i] += scale * standard_normal(rng);
  return p;
}

HistoryWindow window(const GtrSpec& s, std::uint64_t seed, int padded = 1) {
  Rng rng(seed);
  auto w = HistoryWindow::empty(s.context, s.obs_dim);
  for (int i = 0; i < s.context; ++i) {
    if (i < padded) continue;
    std::vector<double> o;
    for (int j = 0; j < s.obs_dim; ++j) o.push_back(uniform(rng, -1, 1));
    w.obs.row(i) = Eigen::Map<const RowVec>(o.data(), s.obs_dim);
    w.mask[static_cast<std::size_t>(i)] = 1;
  }
  return w;
}

oracle::ProbeLoss probe(std::uint64_t seed, double target) {
  Rng rng(seed);
  RowVec a(3), b(4);
  for (auto* v : {&a, &b})
    for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = uniform(rng, -1, 1);
  return {{a, b}, target};
}

void expect_matches_oracle(const GtrSpec& s, const ParameterSet& p, const HistoryWindow& w) {
  const GtrNetwork net(s);
  const auto got = net.forward(p, w);
  const auto want = oracle::forward(s, p, w);
  for (std::size_t h = 0; h < s.head_sizes.size(); ++h)
    for (int k = 0; k < s.head_sizes[h]; ++k) EXPECT_NEAR(got.logits[h](k), want.logits[h][k], 1e-12);
  EXPECT_NEAR(got.value, want.value, 1e-12);
}

}  // namespace

TEST(Gtr, ZeroWindowGivesUniformPolicyAndZeroValue) {
  const auto s = tiny_spec();
  const GtrNetwork net(s);
  Rng rng(1);
  const auto p = net.init(rng);
  auto w = HistoryWindow::empty(s.context, s.obs_dim);
  std::fill(w.mask.begin(), w.mask.end(), 1);
  const auto y = net.forward(p, w);
  for (const auto& l : y.logits) EXPECT_TRUE((l.array() == 0.0).all());
  EXPECT_EQ(y.value, 0.0);
}

TEST(Gtr, PaddedRowsAreIgnored) {
  const auto s = tiny_spec();
  const GtrNetwork net(s);
  const auto p = noisy(net, 2);
  auto w = window(s, 3, 2);
  const auto a = net.forward(p, w);
  w.obs.row(0).setConstant(7.5);
  w.obs.row(1).setConstant(-3.0);
  const auto b = net.forward(p, w);
  EXPECT_EQ(a.value, b.value);
  for (std::size_t h = 0; h < a.logits.size(); ++h) EXPECT_EQ(a.logits[h], b.logits[h]);
}

TEST(Gtr, MatchesStraightLineForwardAtTinyWidth) {
  const auto s = tiny_spec(4, 1, 1);
  const GtrNetwork net(s);
  expect_matches_oracle(s, noisy(net, 4), window(s, 5));
}

TEST(Gtr, MatchesStraightLineForwardMultiHeadMultiBlock) {
  for (GateKind g : {GateKind::gru, GateKind::residual}) {
    const auto s = tiny_spec(8, 2, 2, g);
    const GtrNetwork net(s);
    expect_matches_oracle(s, noisy(net, 6), window(s, 7, 0));
    expect_matches_oracle(s, noisy(net, 8), window(s, 9, 3));
  }
}

TEST(Gtr, AttentionIsCausal) {
  const auto s = tiny_spec(8, 2, 2);
  const GtrNetwork net(s);
  const auto p = noisy(net, 10);
  const auto w = window(s, 11, 0);
  GtrNetwork::Cache base;
  net.forward(p, w, base);
  for (int k = 0; k < s.context; ++k) {
    auto v = w;
    v.obs(k, 2) += 0.5;
    GtrNetwork::Cache c;
    net.forward(p, v, c);
    for (int r = 0; r < s.context; ++r) {
      if (r < k) {
        EXPECT_EQ(c.x_final.row(r), base.x_final.row(r)) << "k=" << k << " r=" << r;
      } else {
        EXPECT_NE(c.x_final.row(r), base.x_final.row(r)) << "k=" << k << " r=" << r;
      }
    }
  }
}

TEST(Gtr, GradientsMatchFiniteDifferences) {
  for (GateKind g : {GateKind::gru, GateKind::residual}) {
    const auto s = tiny_spec(8, 1, 1, g);
    const GtrNetwork net(s);
    const auto loss = probe(12, 0.7);
    for (const auto& e : oracle::gradient_check(net, noisy(net, 13), window(s, 14), loss, 1e-4))
      EXPECT_LE(e.rel, 1e-4) << e.name;
  }
}

TEST(Gtr, GradientsMatchFiniteDifferencesTwoHeadsTwoBlocks) {
  const auto s = tiny_spec(8, 2, 2);
  const GtrNetwork net(s);
  const auto loss = probe(30, -0.2);
  for (const auto& e : oracle::gradient_check(net, noisy(net, 15), window(s, 16, 2), loss, 1e-4))
    EXPECT_LE(e.rel, 1e-4) << e.name;
}

TEST(Gtr, ValueBiasGradientIsChainRuleLeaf) {
  const auto s = tiny_spec();
  const GtrNetwork net(s);
  const auto p = noisy(net, 17);
  const auto w = window(s, 18);
  GtrNetwork::Cache c;
  const auto y = net.forward(p, w, c);
  auto g = p.zeros_like();
  net.backward(p, w, c, {{}, 2 * (y.value - 1.5)}, g);
  EXPECT_EQ(g["value.b"](0, 0), 2 * (y.value - 1.5));
}

TEST(Gtr, PaddedPositionsReceiveNoGradient) {
  const auto s = tiny_spec();
  const GtrNetwork net(s);
  const auto p = noisy(net, 19);
  const auto w = window(s, 20, 2);
  GtrNetwork::Cache c;
  net.forward(p, w, c);
  auto g = p.zeros_like();
  const Mat dobs = net.backward(p, w, c, {{RowVec::Ones(3), RowVec::Ones(4)}, 1.0}, g);
  for (int r = 0; r < 2; ++r) {
    EXPECT_TRUE((g["embed.pos"].row(r).array() == 0.0).all());
    EXPECT_TRUE((dobs.row(r).array() == 0.0).all());
  }
  EXPECT_GT(g["embed.pos"].row(3).norm(), 0.0);
}

TEST(Gtr, SaturatedGateIsIdentityBlock) {
  auto s = tiny_spec(8, 2, 2);
  const GtrNetwork net(s);
  auto p = noisy(net, 21);
  for (int b = 0; b < 2; ++b)
    for (const char* g : {"gate1", "gate2"}) p["block" + std::to_string(b) + "." + g + ".bz"].setConstant(-1e4);
  const auto w = window(s, 22);
  const auto got = net.forward(p, w);
  s.blocks = 0;
  const auto want = oracle::forward(s, p, w);
  for (std::size_t h = 0; h < 2; ++h)
    for (Eigen::Index k = 0; k < got.logits[h].size(); ++k) EXPECT_EQ(got.logits[h](k), want.logits[h][k]);
  EXPECT_EQ(got.value, want.value);
}

TEST(Gtr, ShapeErrors) {
  const auto s = tiny_spec();
  const GtrNetwork net(s);
  const auto p = noisy(net, 23);
  EXPECT_THROW(net.forward(p, HistoryWindow::empty(3, 5)), ContractError);
  EXPECT_THROW(net.forward(p, HistoryWindow::empty(4, 5)), ContractError);
  const GtrNetwork other(tiny_spec(8, 1, 2));
  EXPECT_THROW(other.forward(p, window(s, 1)), ContractError);
  EXPECT_THROW(GtrNetwork(tiny_spec(6, 4)), ConfigError);
}

TEST(HistoryWindow, PushSlidesLeft) {
  auto w = HistoryWindow::empty(3, 2);
  const std::vector<double> a{1, 2}, b{3, 4};
  w.push(a);
  w.push(b);
  EXPECT_EQ(w.mask, (std::vector<std::uint8_t>{0, 1, 1}));
  EXPECT_EQ(w.obs(1, 0), 1.0);
  EXPECT_EQ(w.obs(2, 1), 4.0);
  const std::vector<double> bad{1};
  EXPECT_THROW(w.push(bad), ContractError);
}

TEST(Categorical, SoftmaxSumsToOne) {
  Rng rng(24);
  for (int k = 0; k < 100; ++k) {
    RowVec l(8);
    for (int i = 0; i < 8; ++i) l(i) = uniform(rng, -30, 30);
    EXPECT_NEAR(softmax(l).sum(), 1.0, 1e-9);
  }
}

TEST(Categorical, UniformAndOneHotLogProbs) {
  const std::vector<RowVec> uniform_logits{RowVec::Zero(8), RowVec::Zero(8)};
  const std::vector<int> a{3, 7};
  EXPECT_NEAR(log_prob(uniform_logits, a), -2 * std::log(8.0), 1e-12);
  RowVec hot = RowVec::Zero(8);
  hot(5) = 50;
  const std::vector<RowVec> hot_logits{hot};
  Rng rng(25);
  for (int k = 0; k < 100; ++k) {
    const auto s = sample_action(hot_logits, rng);
    EXPECT_EQ(s.action[0], 5);
    EXPECT_NEAR(s.log_prob, 0.0, 1e-12);
  }
  const std::vector<std::uint8_t> mask{0, 1};
  EXPECT_NEAR(log_prob(uniform_logits, a, mask), -std::log(8.0), 1e-12);
}

TEST(Categorical, SamplingFrequenciesWithinThreeSigma) {
  RowVec l(5);
  l << 0.3, -1.0, 2.0, 0.5, -0.2;
  const RowVec p = softmax(l);
  Rng rng(26);
  const int n = 100000;
  std::vector<int> counts(5);
  for (int k = 0; k < n; ++k) ++counts[sample_categorical(l, rng)];
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(counts[i], n * p(i), 3 * std::sqrt(n * p(i) * (1 - p(i)))) << i;
}

TEST(Categorical, LogProbAndEntropyGradients) {
  Rng rng(27);
  std::vector<RowVec> l{RowVec(4), RowVec(3)};
  for (auto& v : l)
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = uniform(rng, -2, 2);
  const std::vector<int> a{2, 0};
  const auto gl = log_prob_grad(l, a);
  const auto ge = entropy_grad(l);
  const double eps = 1e-6;
  for (std::size_t h = 0; h < l.size(); ++h)
    for (Eigen::Index i = 0; i < l[h].size(); ++i) {
      auto up = l, down = l;
      up[h](i) += eps;
      down[h](i) -= eps;
      EXPECT_NEAR(gl[h](i), (log_prob(up, a) - log_prob(down, a)) / (2 * eps), 1e-8);
      EXPECT_NEAR(ge[h](i), (entropy(up) - entropy(down)) / (2 * eps), 1e-8);
    }
  const std::vector<std::uint8_t> mask{1, 0};
  EXPECT_TRUE((log_prob_grad(l, a, mask)[1].array() == 0.0).all());
}

TEST(Checkpoint, RoundTripIsFloat32Exact) {
  const auto dir = std::filesystem::temp_directory_path() / "skysim_test_gtr_ckpt";
  std::filesystem::create_directories(dir);
  const GtrNetwork net(tiny_spec());
  Checkpoint ck{"00ff00ff00ff00ff", 42, {noisy(net, 28), noisy(net, 29)}};
  ck.sets[1].version = 41;
  const std::string path = (dir / "ck").string();
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.config_hash, ck.config_hash);
  EXPECT_EQ(back.version, 42u);
  ASSERT_EQ(back.sets.size(), 2u);
  EXPECT_EQ(back.sets[1].version, 41u);
  for (std::size_t k = 0; k < 2; ++k) {
    ASSERT_TRUE(back.sets[k].same_shape(ck.sets[k]));
    for (int t = 0; t < ck.sets[k].size(); ++t) {
      EXPECT_EQ(back.sets[k].name(t), ck.sets[k].name(t));
      for (Eigen::Index i = 0; i < ck.sets[k][t].size(); ++i)
        EXPECT_EQ(back.sets[k][t].data()[i], static_cast<double>(static_cast<float>(ck.sets[k][t].data()[i])));
    }
  }
  std::filesystem::resize_file(path + ".bin", 10);
  EXPECT_THROW(load_checkpoint(path), ConfigError);
  std::ofstream(path + ".json") << R"({"format": "other"})";
  EXPECT_THROW(load_checkpoint(path), ConfigError);
  EXPECT_THROW(load_checkpoint((dir / "missing").string()), ConfigError);
  std::filesystem::remove_all(dir);
}
