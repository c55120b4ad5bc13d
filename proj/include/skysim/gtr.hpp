#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "skysim/error.hpp"
#include "skysim/rng.hpp"
#include "skysim/scenario.hpp"

namespace skysim {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

/// Named dense tensors plus a version counter. Order of insertion is the
/// serialization order.
class ParameterSet {
 public:
  struct Tensor {
    std::string name;
    Mat value;
  };

  int add(const std::string& name, Mat value) {
    if (index_.count(name)) throw ContractError("duplicate tensor name " + name);
    index_[name] = static_cast<int>(tensors_.size());
    tensors_.push_back({name, std::move(value)});
    return static_cast<int>(tensors_.size()) - 1;
  }

  int size() const { return static_cast<int>(tensors_.size()); }
  Mat& operator[](int i) { return tensors_[static_cast<std::size_t>(i)].value; }
  const Mat& operator[](int i) const { return tensors_[static_cast<std::size_t>(i)].value; }
  Mat& operator[](const std::string& name) { return tensors_[static_cast<std::size_t>(index(name))].value; }
  const Mat& operator[](const std::string& name) const {
    return tensors_[static_cast<std::size_t>(index(name))].value;
  }
  const std::string& name(int i) const { return tensors_[static_cast<std::size_t>(i)].name; }
  int index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no tensor named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::uint64_t version = 0;

  ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& t : tensors_) out.add(t.name, Mat::Zero(t.value.rows(), t.value.cols()));
    return out;
  }
  void set_zero() {
    for (auto& t : tensors_) t.value.setZero();
  }
  void axpy(double alpha, const ParameterSet& x) {
    check_same(x);
    for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].value += alpha * x.tensors_[i].value;
  }
  void scale(double alpha) {
    for (auto& t : tensors_) t.value *= alpha;
  }
  double squared_norm() const {
    double s = 0;
    for (const auto& t : tensors_) s += t.value.squaredNorm();
    return s;
  }
  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }
  bool same_shape(const ParameterSet& o) const {
    if (o.tensors_.size() != tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (o.tensors_[i].name != tensors_[i].name || o.tensors_[i].value.rows() != tensors_[i].value.rows() ||
          o.tensors_[i].value.cols() != tensors_[i].value.cols())
        return false;
    return true;
  }

 private:
  void check_same(const ParameterSet& o) const {
    if (!same_shape(o)) throw ContractError("parameter sets differ in layout");
  }

  std::vector<Tensor> tensors_;
  std::map<std::string, int> index_;
};

struct GtrSpec {
  int obs_dim = 1;
  int d_model = 64;
  int heads = 4;
  int blocks = 2;
  int context = 8;
  int ff_width = 128;
  int embed_hidden = 64;
  GateKind gate = GateKind::gru;
  double gate_bias = 2.0;
  std::vector<int> head_sizes;

  static GtrSpec from(const NetworkParams& n, int obs_dim, std::vector<int> head_sizes) {
    GtrSpec s;
    s.obs_dim = obs_dim;
    s.d_model = n.d_model;
    s.heads = n.heads;
    s.blocks = n.blocks;
    s.context = n.context;
    s.ff_width = n.ff_width;
    s.embed_hidden = n.embed_hidden;
    s.gate = n.gate;
    s.gate_bias = n.gate_bias;
    s.head_sizes = std::move(head_sizes);
    return s;
  }
};

/// Last K observations of one agent; rows with mask 0 are padding.
struct HistoryWindow {
  Mat obs;                         // K x obs_dim
  std::vector<std::uint8_t> mask;  // K

  static HistoryWindow empty(int context, int obs_dim) {
    return {Mat::Zero(context, obs_dim), std::vector<std::uint8_t>(static_cast<std::size_t>(context), 0)};
  }

  /// Slides the window left and writes `o` into the last row.
  void push(std::span<const double> o) {
    const auto K = obs.rows();
    if (static_cast<Eigen::Index>(o.size()) != obs.cols()) throw ContractError("observation length mismatch");
    if (K > 1) {
      obs.topRows(K - 1) = obs.bottomRows(K - 1).eval();
      std::rotate(mask.begin(), mask.begin() + 1, mask.end());
    }
    for (Eigen::Index j = 0; j < obs.cols(); ++j) obs(K - 1, j) = o[static_cast<std::size_t>(j)];
    mask.back() = 1;
  }
};

struct ForwardOutput {
  std::vector<RowVec> logits;  // per head
  double value = 0.0;
};

struct OutputGrad {
  std::vector<RowVec> logits;  // d loss / d logits, per head (empty = zero)
  double value = 0.0;
};

namespace detail {

struct LnCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

struct GateCache {
  Mat x, y, r, z, h, rx;
};

struct BlockCache {
  Mat x_in;
  LnCache ln1;
  Mat z1, q, k, v, o, y;
  std::vector<Mat> attn;  // per head, n x n
  GateCache gate1;
  Mat x_mid;
  LnCache ln2;
  Mat z2, f1, y2;
  GateCache gate2;
};

inline constexpr double kLnEps = 1e-5;

inline Mat relu(const Mat& a) { return a.cwiseMax(0.0); }
inline Mat relu_grad(const Mat& pre, const Mat& d) { return (pre.array() > 0).select(d, 0.0); }
inline Mat sigmoid(const Mat& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

inline Mat add_row(Mat m, const Mat& row) {
  m.rowwise() += row.row(0);
  return m;
}

inline Mat layer_norm(const Mat& x, const Mat& g, const Mat& b, LnCache& cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  cache.xhat.resize(n, d);
  cache.inv_std.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    cache.inv_std(i) = 1.0 / std::sqrt(var + kLnEps);
    cache.xhat.row(i) = (x.row(i).array() - mu) * cache.inv_std(i);
  }
  Mat out = cache.xhat.array().rowwise() * g.row(0).array();
  out.rowwise() += b.row(0);
  return out;
}

inline Mat layer_norm_backward(const Mat& dout, const Mat& g, const LnCache& cache, Mat& dg, Mat& db) {
  dg.row(0) += (dout.array() * cache.xhat.array()).colwise().sum().matrix();
  db.row(0) += dout.colwise().sum();
  const Mat dxhat = dout.array().rowwise() * g.row(0).array();
  Mat dx(dout.rows(), dout.cols());
  for (Eigen::Index i = 0; i < dout.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = cache.inv_std(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

}  // namespace detail

/// Gated transformer trunk with categorical policy heads and a value head.
/// Pre-LN blocks; with GateKind::gru each residual connection is replaced by
/// a GRU-style gate on the ReLU'd sublayer output.
class GtrNetwork {
 public:
  explicit GtrNetwork(GtrSpec spec) : spec_(std::move(spec)) {
    if (spec_.d_model % spec_.heads != 0) throw ConfigError("d_model must be divisible by heads");
    if (spec_.head_sizes.empty()) throw ConfigError("network needs at least one action head");
    make_layout(&ix_);
  }

  const GtrSpec& spec() const { return spec_; }

  /// Fresh parameters: orthogonal projections, unit LN gains, zero heads.
  ParameterSet init(Rng& rng) const {
    ParameterSet p = make_layout();
    const double relu_gain = std::sqrt(2.0);
    p[ix_.embed_w1] = orthogonal(rng, spec_.obs_dim, spec_.embed_hidden, relu_gain);
    p[ix_.embed_w2] = orthogonal(rng, spec_.embed_hidden, spec_.d_model, relu_gain);
    for (auto& b : ix_.blocks) {
      for (int i : {b.wq, b.wk, b.wv, b.wo}) p[i] = orthogonal(rng, spec_.d_model, spec_.d_model, 1.0);
      p[b.ff_w1] = orthogonal(rng, spec_.d_model, spec_.ff_width, relu_gain);
      p[b.ff_w2] = orthogonal(rng, spec_.ff_width, spec_.d_model, 1.0);
      if (spec_.gate == GateKind::gru) {
        for (const Gate* g : {&b.gate1, &b.gate2}) {
          for (int i : {g->wr, g->ur, g->wz, g->uz, g->wg, g->ug})
            p[i] = orthogonal(rng, spec_.d_model, spec_.d_model, 1.0);
          p[g->bz].setConstant(-spec_.gate_bias);
        }
      }
    }
    return p;
  }

  ForwardOutput forward(const ParameterSet& p, const HistoryWindow& w) const {
    Cache cache;
    return forward(p, w, cache);
  }

  struct Cache {
    std::vector<int> rows;  // valid window positions
    Mat x0, a1, h1, a2;
    std::vector<detail::BlockCache> blocks;
    Mat x_final;
    detail::LnCache ln_final;
    Mat feature;  // 1 x d
  };

  ForwardOutput forward(const ParameterSet& p, const HistoryWindow& w, Cache& c) const {
    check(p, w);
    c.rows.clear();
    for (int i = 0; i < spec_.context; ++i)
      if (w.mask[static_cast<std::size_t>(i)]) c.rows.push_back(i);
    const auto n = static_cast<Eigen::Index>(c.rows.size());
    c.x0.resize(n, spec_.obs_dim);
    Mat pos(n, spec_.d_model);
    for (Eigen::Index r = 0; r < n; ++r) {
      c.x0.row(r) = w.obs.row(c.rows[r]);
      pos.row(r) = p[ix_.pos].row(c.rows[r]);
    }
    c.a1 = detail::add_row(c.x0 * p[ix_.embed_w1], p[ix_.embed_b1]);
    c.h1 = detail::relu(c.a1);
    c.a2 = detail::add_row(c.h1 * p[ix_.embed_w2], p[ix_.embed_b2]);
    Mat x = detail::relu(c.a2) + pos;

    c.blocks.resize(ix_.blocks.size());
    for (std::size_t b = 0; b < ix_.blocks.size(); ++b) x = block_forward(p, ix_.blocks[b], x, c.blocks[b]);
    c.x_final = x;
    const Mat last = x.bottomRows(1);
    c.feature = detail::layer_norm(last, p[ix_.final_g], p[ix_.final_b], c.ln_final);

    ForwardOutput out;
    for (std::size_t h = 0; h < ix_.head_w.size(); ++h)
      out.logits.push_back(c.feature * p[ix_.head_w[h]] + p[ix_.head_b[h]]);
    out.value = (c.feature * p[ix_.value_w])(0, 0) + p[ix_.value_b](0, 0);
    return out;
  }

  /// Accumulates d loss / d params into `grad` (same layout as `p`). Returns
  /// d loss / d window.obs (padding rows are zero).
  Mat backward(const ParameterSet& p, const HistoryWindow& w, const Cache& c, const OutputGrad& dy,
               ParameterSet& grad) const {
    Mat dfeat = Mat::Zero(1, spec_.d_model);
    for (std::size_t h = 0; h < ix_.head_w.size() && h < dy.logits.size(); ++h) {
      if (dy.logits[h].size() == 0) continue;
      grad[ix_.head_w[h]] += c.feature.transpose() * dy.logits[h];
      grad[ix_.head_b[h]] += dy.logits[h];
      dfeat += dy.logits[h] * p[ix_.head_w[h]].transpose();
    }
    grad[ix_.value_w] += c.feature.transpose() * dy.value;
    grad[ix_.value_b](0, 0) += dy.value;
    dfeat += dy.value * p[ix_.value_w].transpose();

    const auto n = c.x_final.rows();
    Mat dx = Mat::Zero(n, spec_.d_model);
    dx.bottomRows(1) = detail::layer_norm_backward(dfeat, p[ix_.final_g], c.ln_final, grad[ix_.final_g], grad[ix_.final_b]);
    for (std::size_t b = ix_.blocks.size(); b-- > 0;) dx = block_backward(p, ix_.blocks[b], c.blocks[b], dx, grad);

    for (Eigen::Index r = 0; r < n; ++r) grad[ix_.pos].row(c.rows[r]) += dx.row(r);
    const Mat da2 = detail::relu_grad(c.a2, dx);
    grad[ix_.embed_w2] += c.h1.transpose() * da2;
    grad[ix_.embed_b2] += da2.colwise().sum();
    const Mat da1 = detail::relu_grad(c.a1, da2 * p[ix_.embed_w2].transpose());
    grad[ix_.embed_w1] += c.x0.transpose() * da1;
    grad[ix_.embed_b1] += da1.colwise().sum();
    const Mat dx0 = da1 * p[ix_.embed_w1].transpose();
    Mat dobs = Mat::Zero(w.obs.rows(), w.obs.cols());
    for (Eigen::Index r = 0; r < n; ++r) dobs.row(c.rows[r]) = dx0.row(r);
    return dobs;
  }

  /// Layout with every tensor zeroed.
  ParameterSet zeros() const { return make_layout(); }

 private:
  struct Gate {
    int wr = -1, ur = -1, wz = -1, uz = -1, bz = -1, wg = -1, ug = -1;
  };
  struct Block {
    int ln1_g = -1, ln1_b = -1, wq = -1, wk = -1, wv = -1, wo = -1, bo = -1;
    int ln2_g = -1, ln2_b = -1, ff_w1 = -1, ff_b1 = -1, ff_w2 = -1, ff_b2 = -1;
    Gate gate1, gate2;
  };
  struct Index {
    int embed_w1 = -1, embed_b1 = -1, embed_w2 = -1, embed_b2 = -1, pos = -1;
    std::vector<Block> blocks;
    int final_g = -1, final_b = -1;
    std::vector<int> head_w, head_b;
    int value_w = -1, value_b = -1;
  };

  ParameterSet make_layout(Index* out = nullptr) const {
    const int d = spec_.d_model;
    ParameterSet p;
    Index ix;
    ix.embed_w1 = p.add("embed.w1", Mat::Zero(spec_.obs_dim, spec_.embed_hidden));
    ix.embed_b1 = p.add("embed.b1", Mat::Zero(1, spec_.embed_hidden));
    ix.embed_w2 = p.add("embed.w2", Mat::Zero(spec_.embed_hidden, d));
    ix.embed_b2 = p.add("embed.b2", Mat::Zero(1, d));
    ix.pos = p.add("embed.pos", Mat::Zero(spec_.context, d));
    for (int b = 0; b < spec_.blocks; ++b) {
      const std::string pre = "block" + std::to_string(b) + ".";
      Block bl;
      bl.ln1_g = p.add(pre + "ln1.g", Mat::Ones(1, d));
      bl.ln1_b = p.add(pre + "ln1.b", Mat::Zero(1, d));
      bl.wq = p.add(pre + "attn.wq", Mat::Zero(d, d));
      bl.wk = p.add(pre + "attn.wk", Mat::Zero(d, d));
      bl.wv = p.add(pre + "attn.wv", Mat::Zero(d, d));
      bl.wo = p.add(pre + "attn.wo", Mat::Zero(d, d));
      bl.bo = p.add(pre + "attn.bo", Mat::Zero(1, d));
      if (spec_.gate == GateKind::gru) bl.gate1 = add_gate(p, pre + "gate1.");
      bl.ln2_g = p.add(pre + "ln2.g", Mat::Ones(1, d));
      bl.ln2_b = p.add(pre + "ln2.b", Mat::Zero(1, d));
      bl.ff_w1 = p.add(pre + "ff.w1", Mat::Zero(d, spec_.ff_width));
      bl.ff_b1 = p.add(pre + "ff.b1", Mat::Zero(1, spec_.ff_width));
      bl.ff_w2 = p.add(pre + "ff.w2", Mat::Zero(spec_.ff_width, d));
      bl.ff_b2 = p.add(pre + "ff.b2", Mat::Zero(1, d));
      if (spec_.gate == GateKind::gru) bl.gate2 = add_gate(p, pre + "gate2.");
      ix.blocks.push_back(bl);
    }
    ix.final_g = p.add("final_ln.g", Mat::Ones(1, d));
    ix.final_b = p.add("final_ln.b", Mat::Zero(1, d));
    for (std::size_t h = 0; h < spec_.head_sizes.size(); ++h) {
      ix.head_w.push_back(p.add("head" + std::to_string(h) + ".w", Mat::Zero(d, spec_.head_sizes[h])));
      ix.head_b.push_back(p.add("head" + std::to_string(h) + ".b", Mat::Zero(1, spec_.head_sizes[h])));
    }
    ix.value_w = p.add("value.w", Mat::Zero(d, 1));
    ix.value_b = p.add("value.b", Mat::Zero(1, 1));
    if (out) *out = std::move(ix);
    return p;
  }

  Gate add_gate(ParameterSet& p, const std::string& pre) const {
    const int d = spec_.d_model;
    Gate g;
    g.wr = p.add(pre + "wr", Mat::Zero(d, d));
    g.ur = p.add(pre + "ur", Mat::Zero(d, d));
    g.wz = p.add(pre + "wz", Mat::Zero(d, d));
    g.uz = p.add(pre + "uz", Mat::Zero(d, d));
    g.bz = p.add(pre + "bz", Mat::Zero(1, d));
    g.wg = p.add(pre + "wg", Mat::Zero(d, d));
    g.ug = p.add(pre + "ug", Mat::Zero(d, d));
    return g;
  }

  static Mat orthogonal(Rng& rng, int rows, int cols, double gain) {
    const int big = std::max(rows, cols);
    const int small = std::min(rows, cols);
    Mat a(big, small);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = standard_normal(rng);
    Eigen::HouseholderQR<Mat> qr(a);
    Mat q = qr.householderQ() * Mat::Identity(big, small);
    const Mat r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
    for (int j = 0; j < small; ++j)
      if (r(j, j) < 0) q.col(j) *= -1.0;
    Mat out = rows >= cols ? q : Mat(q.transpose());
    return gain * out;
  }

  void check(const ParameterSet& p, const HistoryWindow& w) const {
    if (w.obs.rows() != spec_.context || w.obs.cols() != spec_.obs_dim ||
        static_cast<int>(w.mask.size()) != spec_.context)
      throw ContractError("history window shape does not match the network");
    if (!w.mask.back()) throw ContractError("the newest window position must be valid");
    if (p.size() != expected_tensors()) throw ContractError("parameter set does not match the network");
  }

  int expected_tensors() const {
    const int per_gate = 7;
    const int per_block = 13 + (spec_.gate == GateKind::gru ? 2 * per_gate : 0);
    return 5 + per_block * spec_.blocks + 2 + 2 * static_cast<int>(spec_.head_sizes.size()) + 2;
  }

  static Mat gate_forward(const ParameterSet& p, const Gate& g, const Mat& x, const Mat& y, detail::GateCache& c) {
    c.x = x;
    c.y = y;
    c.r = detail::sigmoid(y * p[g.wr] + x * p[g.ur]);
    c.z = detail::sigmoid(detail::add_row(y * p[g.wz] + x * p[g.uz], p[g.bz]));
    c.rx = c.r.cwiseProduct(x);
    c.h = (y * p[g.wg] + c.rx * p[g.ug]).array().tanh().matrix();
    return ((1.0 - c.z.array()) * x.array() + c.z.array() * c.h.array()).matrix();
  }

  /// Returns dx; adds dy into `dy_out`.
  static Mat gate_backward(const ParameterSet& p, const Gate& g, const detail::GateCache& c, const Mat& dout,
                           Mat& dy_out, ParameterSet& grad) {
    Mat dx = (dout.array() * (1.0 - c.z.array())).matrix();
    const Mat dz = (dout.array() * (c.h.array() - c.x.array())).matrix();
    const Mat dh = dout.cwiseProduct(c.z);
    const Mat dpz = (dz.array() * c.z.array() * (1.0 - c.z.array())).matrix();
    grad[g.wz] += c.y.transpose() * dpz;
    grad[g.uz] += c.x.transpose() * dpz;
    grad[g.bz] += dpz.colwise().sum();
    dy_out += dpz * p[g.wz].transpose();
    dx += dpz * p[g.uz].transpose();
    const Mat dph = (dh.array() * (1.0 - c.h.array().square())).matrix();
    grad[g.wg] += c.y.transpose() * dph;
    grad[g.ug] += c.rx.transpose() * dph;
    dy_out += dph * p[g.wg].transpose();
    const Mat drx = dph * p[g.ug].transpose();
    dx += drx.cwiseProduct(c.r);
    const Mat dpr = (drx.array() * c.x.array() * c.r.array() * (1.0 - c.r.array())).matrix();
    grad[g.wr] += c.y.transpose() * dpr;
    grad[g.ur] += c.x.transpose() * dpr;
    dy_out += dpr * p[g.wr].transpose();
    dx += dpr * p[g.ur].transpose();
    return dx;
  }

  Mat attention_forward(const ParameterSet& p, const Block& b, const Mat& z, detail::BlockCache& c) const {
    const auto n = z.rows();
    const int dh = spec_.d_model / spec_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    c.q = z * p[b.wq];
    c.k = z * p[b.wk];
    c.v = z * p[b.wv];
    c.o.resize(n, spec_.d_model);
    c.attn.assign(static_cast<std::size_t>(spec_.heads), Mat());
    for (int h = 0; h < spec_.heads; ++h) {
      const auto qh = c.q.middleCols(h * dh, dh);
      const auto kh = c.k.middleCols(h * dh, dh);
      Mat s = (qh * kh.transpose()) * scale;
      Mat a = Mat::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = s.row(i).head(i + 1).maxCoeff();
        double sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          a(i, j) = std::exp(s(i, j) - mx);
          sum += a(i, j);
        }
        a.row(i).head(i + 1) /= sum;
      }
      c.o.middleCols(h * dh, dh) = a * c.v.middleCols(h * dh, dh);
      c.attn[static_cast<std::size_t>(h)] = std::move(a);
    }
    return detail::add_row(c.o * p[b.wo], p[b.bo]);
  }

  /// Returns dz given dy of the attention output.
  Mat attention_backward(const ParameterSet& p, const Block& b, const detail::BlockCache& c, const Mat& dy,
                         ParameterSet& grad) const {
    const auto n = dy.rows();
    const int dh = spec_.d_model / spec_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    grad[b.wo] += c.o.transpose() * dy;
    grad[b.bo] += dy.colwise().sum();
    const Mat dO = dy * p[b.wo].transpose();
    Mat dq(n, spec_.d_model), dk(n, spec_.d_model), dv(n, spec_.d_model);
    for (int h = 0; h < spec_.heads; ++h) {
      const Mat& a = c.attn[static_cast<std::size_t>(h)];
      const auto dOh = dO.middleCols(h * dh, dh);
      const Mat da = dOh * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * dOh;
      Mat ds(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double dot = a.row(i).dot(da.row(i));
        ds.row(i) = (a.row(i).array() * (da.row(i).array() - dot)).matrix();
      }
      ds *= scale;
      dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    grad[b.wq] += c.z1.transpose() * dq;
    grad[b.wk] += c.z1.transpose() * dk;
    grad[b.wv] += c.z1.transpose() * dv;
    return dq * p[b.wq].transpose() + dk * p[b.wk].transpose() + dv * p[b.wv].transpose();
  }

  Mat block_forward(const ParameterSet& p, const Block& b, const Mat& x, detail::BlockCache& c) const {
    c.x_in = x;
    c.z1 = detail::layer_norm(x, p[b.ln1_g], p[b.ln1_b], c.ln1);
    c.y = attention_forward(p, b, c.z1, c);
    if (spec_.gate == GateKind::gru) {
      c.x_mid = gate_forward(p, b.gate1, x, detail::relu(c.y), c.gate1);
    } else {
      c.x_mid = x + c.y;
    }
    c.z2 = detail::layer_norm(c.x_mid, p[b.ln2_g], p[b.ln2_b], c.ln2);
    c.f1 = detail::add_row(c.z2 * p[b.ff_w1], p[b.ff_b1]);
    c.y2 = detail::add_row(detail::relu(c.f1) * p[b.ff_w2], p[b.ff_b2]);
    if (spec_.gate == GateKind::gru) return gate_forward(p, b.gate2, c.x_mid, detail::relu(c.y2), c.gate2);
    return c.x_mid + c.y2;
  }

  Mat block_backward(const ParameterSet& p, const Block& b, const detail::BlockCache& c, const Mat& dout,
                     ParameterSet& grad) const {
    const auto n = dout.rows();
    Mat dmid, dy2;
    if (spec_.gate == GateKind::gru) {
      Mat dyr = Mat::Zero(n, spec_.d_model);
      dmid = gate_backward(p, b.gate2, c.gate2, dout, dyr, grad);
      dy2 = detail::relu_grad(c.y2, dyr);
    } else {
      dmid = dout;
      dy2 = dout;
    }
    grad[b.ff_w2] += detail::relu(c.f1).transpose() * dy2;
    grad[b.ff_b2] += dy2.colwise().sum();
    const Mat df1 = detail::relu_grad(c.f1, dy2 * p[b.ff_w2].transpose());
    grad[b.ff_w1] += c.z2.transpose() * df1;
    grad[b.ff_b1] += df1.colwise().sum();
    dmid += detail::layer_norm_backward(df1 * p[b.ff_w1].transpose(), p[b.ln2_g], c.ln2, grad[b.ln2_g], grad[b.ln2_b]);

    Mat dx, dy;
    if (spec_.gate == GateKind::gru) {
      Mat dyr = Mat::Zero(n, spec_.d_model);
      dx = gate_backward(p, b.gate1, c.gate1, dmid, dyr, grad);
      dy = detail::relu_grad(c.y, dyr);
    } else {
      dx = dmid;
      dy = dmid;
    }
    const Mat dz1 = attention_backward(p, b, c, dy, grad);
    dx += detail::layer_norm_backward(dz1, p[b.ln1_g], c.ln1, grad[b.ln1_g], grad[b.ln1_b]);
    return dx;
  }

  GtrSpec spec_;
  Index ix_;
};

// ---------------------------------------------------------------------------
// Categorical heads

inline RowVec softmax(const RowVec& logits) {
  const double mx = logits.maxCoeff();
  RowVec e = (logits.array() - mx).exp();
  return e / e.sum();
}

inline RowVec log_softmax(const RowVec& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

/// Inverse-CDF draw from softmax(logits).
inline int sample_categorical(const RowVec& logits, Rng& rng) {
  const RowVec p = softmax(logits);
  const double u = uniform01(rng);
  double acc = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    acc += p(i);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

/// Joint log-probability: sum over heads whose mask entry is set (all heads
/// when the mask is empty).
inline double log_prob(std::span<const RowVec> logits, std::span<const int> action,
                       std::span<const std::uint8_t> mask = {}) {
  if (action.size() != logits.size()) throw ContractError("log_prob: one action per head required");
  double lp = 0;
  for (std::size_t h = 0; h < logits.size(); ++h) {
    if (!mask.empty() && !mask[h]) continue;
    lp += log_softmax(logits[h])(action[h]);
  }
  return lp;
}

inline double entropy(std::span<const RowVec> logits, std::span<const std::uint8_t> mask = {}) {
  double total = 0;
  for (std::size_t h = 0; h < logits.size(); ++h) {
    if (!mask.empty() && !mask[h]) continue;
    const RowVec lp = log_softmax(logits[h]);
    total -= (lp.array().exp() * lp.array()).sum();
  }
  return total;
}

struct SampledAction {
  std::vector<int> action;
  double log_prob = 0.0;
};

inline SampledAction sample_action(std::span<const RowVec> logits, Rng& rng) {
  SampledAction out;
  for (const auto& l : logits) out.action.push_back(sample_categorical(l, rng));
  out.log_prob = log_prob(logits, out.action);
  return out;
}

/// d log pi(a) / d logits for each active head.
inline std::vector<RowVec> log_prob_grad(std::span<const RowVec> logits, std::span<const int> action,
                                         std::span<const std::uint8_t> mask = {}) {
  std::vector<RowVec> out;
  for (std::size_t h = 0; h < logits.size(); ++h) {
    if (!mask.empty() && !mask[h]) {
      out.push_back(RowVec::Zero(logits[h].size()));
      continue;
    }
    RowVec g = -softmax(logits[h]);
    g(action[h]) += 1.0;
    out.push_back(std::move(g));
  }
  return out;
}

/// d entropy / d logits for each active head: -p (log p + H).
inline std::vector<RowVec> entropy_grad(std::span<const RowVec> logits, std::span<const std::uint8_t> mask = {}) {
  std::vector<RowVec> out;
  for (std::size_t h = 0; h < logits.size(); ++h) {
    if (!mask.empty() && !mask[h]) {
      out.push_back(RowVec::Zero(logits[h].size()));
      continue;
    }
    const RowVec lp = log_softmax(logits[h]);
    const RowVec p = lp.array().exp();
    const double H = -(p.array() * lp.array()).sum();
    out.push_back((-p.array() * (lp.array() + H)).matrix());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: <path>.json manifest + <path>.bin little-endian float32 data.

namespace detail {

inline void write_f32_le(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

inline double read_f32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ConfigError("checkpoint data file is truncated");
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace detail

/// Several parameter sets saved together (one per policy group).
struct Checkpoint {
  std::string config_hash;
  std::uint64_t version = 0;
  std::vector<ParameterSet> sets;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["format"] = "skysim-checkpoint-v1";
  manifest["config_hash"] = ck.config_hash;
  manifest["version"] = ck.version;
  manifest["data"] = std::filesystem::path(path + ".bin").filename().string();
  nlohmann::json sets = nlohmann::json::array();
  std::ofstream bin(path + ".bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot write " + path + ".bin");
  for (const auto& s : ck.sets) {
    nlohmann::json tensors = nlohmann::json::array();
    for (int i = 0; i < s.size(); ++i) {
      const Mat& m = s[i];
      tensors.push_back({{"name", s.name(i)}, {"shape", {m.rows(), m.cols()}}});
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) detail::write_f32_le(bin, m(r, c));
    }
    sets.push_back({{"version", s.version}, {"tensors", tensors}});
  }
  bin.flush();
  if (!bin) throw std::runtime_error("failed writing " + path + ".bin");
  manifest["sets"] = sets;
  std::ofstream js(path + ".json", std::ios::trunc);
  js << manifest.dump(2) << "\n";
  js.flush();
  if (!js) throw std::runtime_error("failed writing " + path + ".json");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream js(path + ".json");
  if (!js) throw ConfigError("cannot open checkpoint manifest " + path + ".json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "skysim-checkpoint-v1") throw ConfigError("unknown checkpoint format");
  Checkpoint ck;
  ck.config_hash = manifest.at("config_hash").get<std::string>();
  ck.version = manifest.at("version").get<std::uint64_t>();
  const auto dir = std::filesystem::path(path).parent_path();
  std::ifstream bin(dir / manifest.at("data").get<std::string>(), std::ios::binary);
  if (!bin) throw ConfigError("cannot open checkpoint data for " + path);
  for (const auto& js_set : manifest.at("sets")) {
    ParameterSet s;
    s.version = js_set.at("version").get<std::uint64_t>();
    for (const auto& t : js_set.at("tensors")) {
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      Mat m(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = detail::read_f32_le(bin);
      s.add(t.at("name").get<std::string>(), std::move(m));
    }
    ck.sets.push_back(std::move(s));
  }
  return ck;
}

}  // namespace skysim
