#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "skysim/env.hpp"
#include "skysim/error.hpp"
#include "skysim/gtr.hpp"
#include "skysim/rng.hpp"
#include "skysim/scenario.hpp"

namespace skysim {

// ---------------------------------------------------------------------------
// V-trace

struct VTraceResult {
  std::vector<double> vs;         // targets V_t
  std::vector<double> rho;        // min(rho_bar, pi/mu)
  std::vector<double> c;          // min(c_bar, pi/mu)
  std::vector<double> advantage;  // r_t + gamma vs_{t+1} - V(o_t)
};

/// `values` has one entry per step; `bootstrap` is V(o_T) after the last step
/// (ignored when that step is terminal). A terminal step cuts both the TD
/// bootstrap and the trace.
inline VTraceResult vtrace(std::span<const double> values, double bootstrap, std::span<const double> rewards,
                           std::span<const double> behavior_logp, std::span<const double> target_logp,
                           std::span<const std::uint8_t> dones, double gamma, double rho_bar, double c_bar) {
  const std::size_t T = values.size();
  if (rewards.size() != T || behavior_logp.size() != T || target_logp.size() != T || dones.size() != T)
    throw ContractError("vtrace: sequences must be aligned");
  auto finite = [](std::span<const double> s) {
    return std::all_of(s.begin(), s.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(values) || !finite(rewards) || !finite(behavior_logp) || !finite(target_logp) ||
      !std::isfinite(bootstrap))
    throw ContractError("vtrace: non-finite input");

  VTraceResult out;
  out.vs.resize(T);
  out.rho.resize(T);
  out.c.resize(T);
  out.advantage.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double ratio = std::exp(target_logp[t] - behavior_logp[t]);
    out.rho[t] = std::min(rho_bar, ratio);
    out.c[t] = std::min(c_bar, ratio);
  }
  double next_value = bootstrap;
  double next_vs = bootstrap;
  for (std::size_t t = T; t-- > 0;) {
    if (dones[t]) next_value = next_vs = 0.0;
    const double td = rewards[t] + gamma * next_value - values[t];
    const double correction = dones[t] ? 0.0 : gamma * out.c[t] * (next_vs - next_value);
    out.vs[t] = values[t] + out.rho[t] * td + correction;
    out.advantage[t] = rewards[t] + gamma * next_vs - values[t];
    next_value = values[t];
    next_vs = out.vs[t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policies

/// One network and parameter set per policy group. Groups are UAV kinds by
/// default, or individual UAVs with `per_uav`.
class PolicyLayout {
 public:
  explicit PolicyLayout(const ScenarioConfig& c) : num_cuavs_(c.num_cuavs), per_uav_(c.network.per_uav) {
    const int obs = observation_dim(c);
    const int groups = per_uav_ ? c.num_uavs() : 2;
    for (int g = 0; g < groups; ++g) {
      const UavKind kind = per_uav_ ? uav_kind(c, g) : (g == 0 ? UavKind::cuav : UavKind::iuav);
      networks_.emplace_back(GtrSpec::from(c.network, obs, head_sizes(c, kind)));
    }
    for (int u = 0; u < c.num_uavs(); ++u) group_of_.push_back(per_uav_ ? u : (u < num_cuavs_ ? 0 : 1));
  }

  int num_groups() const { return static_cast<int>(networks_.size()); }
  int group(int u) const { return group_of_[static_cast<std::size_t>(u)]; }
  const GtrNetwork& network(int g) const { return networks_[static_cast<std::size_t>(g)]; }
  int context() const { return networks_.front().spec().context; }
  int obs_dim() const { return networks_.front().spec().obs_dim; }

  std::vector<ParameterSet> init(std::uint64_t seed) const {
    std::vector<ParameterSet> out;
    for (int g = 0; g < num_groups(); ++g) {
      Rng rng = substream(seed, "init", static_cast<std::uint64_t>(g));
      out.push_back(networks_[g].init(rng));
    }
    return out;
  }

  bool compatible(const std::vector<ParameterSet>& sets) const {
    if (static_cast<int>(sets.size()) != num_groups()) return false;
    for (int g = 0; g < num_groups(); ++g)
      if (!networks_[g].zeros().same_shape(sets[g])) return false;
    return true;
  }

 private:
  int num_cuavs_;
  bool per_uav_;
  std::vector<GtrNetwork> networks_;
  std::vector<int> group_of_;
};

/// Immutable snapshot broadcast from the learner to actors.
struct PolicySnapshot {
  std::uint64_t version = 0;
  std::vector<ParameterSet> sets;
};
using SnapshotPtr = std::shared_ptr<const PolicySnapshot>;

// ---------------------------------------------------------------------------
// Experience

struct Experience {
  std::vector<int> action;
  HeadMask active;
  double behavior_logp = 0.0;
  double reward = 0.0;
  bool done = false;
};

/// Steps of one UAV. `obs` holds `prefix` earlier observations of the same
/// episode (for history windows), one observation per step, and a final
/// bootstrap observation unless the last step is terminal.
struct AgentTrajectory {
  int uav = 0;
  int prefix = 0;
  std::vector<std::vector<double>> obs;
  std::vector<Experience> steps;

  bool has_bootstrap() const { return static_cast<int>(obs.size()) == prefix + static_cast<int>(steps.size()) + 1; }

  /// Window ending at obs index `i`, not reaching before the episode start.
  HistoryWindow window(int i, int context) const {
    const int dim = static_cast<int>(obs.front().size());
    HistoryWindow w = HistoryWindow::empty(context, dim);
    for (int k = 0; k < context; ++k) {
      const int src = i - (context - 1 - k);
      if (src < 0) continue;
      for (int j = 0; j < dim; ++j) w.obs(k, j) = obs[static_cast<std::size_t>(src)][static_cast<std::size_t>(j)];
      w.mask[static_cast<std::size_t>(k)] = 1;
    }
    return w;
  }
};

struct EpisodicBuffer {
  int actor = 0;
  std::uint64_t behavior_version = 0;
  std::vector<AgentTrajectory> agents;
  std::vector<EpisodeMetrics> finished;  // episodes that ended inside this buffer

  std::size_t transitions() const {
    std::size_t n = 0;
    for (const auto& a : agents) n += a.steps.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Message passing

/// Bounded FIFO of buffers, measured in transitions; the oldest buffers are
/// evicted when full.
class BufferQueue {
 public:
  explicit BufferQueue(std::size_t capacity_transitions) : capacity_(capacity_transitions) {}

  /// Returns false once closed.
  bool push(EpisodicBuffer b) {
    std::lock_guard lock(mu_);
    if (closed_) return false;
    size_ += b.transitions();
    items_.push_back(std::move(b));
    while (size_ > capacity_ && items_.size() > 1) {
      size_ -= items_.front().transitions();
      items_.pop_front();
      ++evicted_;
    }
    cv_.notify_all();
    return true;
  }

  /// Blocks until a buffer is available or the queue is closed and empty.
  std::optional<EpisodicBuffer> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [this] { return !items_.empty() || closed_; });
    return take_locked();
  }

  std::optional<EpisodicBuffer> try_pop() {
    std::lock_guard lock(mu_);
    return take_locked();
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }
  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }
  std::size_t evicted() const {
    std::lock_guard lock(mu_);
    return evicted_;
  }

 private:
  std::optional<EpisodicBuffer> take_locked() {
    if (items_.empty()) return std::nullopt;
    EpisodicBuffer b = std::move(items_.front());
    items_.pop_front();
    size_ -= b.transitions();
    return b;
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<EpisodicBuffer> items_;
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t evicted_ = 0;
  bool closed_ = false;
};

/// Latest-value mailbox for parameter broadcasts.
class SnapshotMailbox {
 public:
  void post(SnapshotPtr s) {
    std::lock_guard lock(mu_);
    latest_ = std::move(s);
  }
  SnapshotPtr latest() const {
    std::lock_guard lock(mu_);
    return latest_;
  }

 private:
  mutable std::mutex mu_;
  SnapshotPtr latest_;
};

// ---------------------------------------------------------------------------
// Actor

/// Runs the environment under a policy snapshot and fills episodic buffers.
class Actor {
 public:
  Actor(const ScenarioConfig& config, const PolicyLayout& layout, int id, std::uint64_t root_seed)
      : layout_(layout),
        env_(config),
        id_(id),
        root_seed_(root_seed),
        policy_rng_(substream(root_seed, "policy", static_cast<std::uint64_t>(id))),
        capacity_(config.learning.buffer_capacity > 0 ? config.learning.buffer_capacity : config.horizon_slots) {}

  const Environment& env() const { return env_; }
  int id() const { return id_; }
  std::uint64_t episodes_started() const { return episode_; }

  void set_policy(SnapshotPtr s) { policy_ = std::move(s); }
  const SnapshotPtr& policy() const { return policy_; }

  static std::uint64_t episode_seed(std::uint64_t root, int actor, std::uint64_t episode) {
    Rng r = substream(root, "episode", static_cast<std::uint64_t>(actor), episode);
    return r();
  }

  /// Collects up to `capacity` steps per UAV (stopping early at episode end)
  /// under the current snapshot.
  EpisodicBuffer fill_buffer() {
    if (!policy_) throw ContractError("actor has no policy snapshot");
    if (env_.done()) start_episode();
    const int U = env_.num_uavs();
    const int K = layout_.context();
    EpisodicBuffer buf;
    buf.actor = id_;
    buf.behavior_version = policy_->version;
    for (int u = 0; u < U; ++u) {
      AgentTrajectory a;
      a.uav = u;
      const auto& hist = history_[u];
      const int prefix = std::min<int>(K - 1, static_cast<int>(hist.size()) - 1);
      a.prefix = prefix;
      a.obs.assign(hist.end() - prefix - 1, hist.end());
      buf.agents.push_back(std::move(a));
    }
    for (int step = 0; step < capacity_ && !env_.done(); ++step) {
      ActionBundle actions;
      std::vector<std::vector<RowVec>> logits;
      for (int u = 0; u < U; ++u) {
        const auto& traj = buf.agents[u];
        const HistoryWindow w = traj.window(static_cast<int>(traj.obs.size()) - 1, K);
        const int g = layout_.group(u);
        auto fwd = layout_.network(g).forward(policy_->sets[g], w);
        auto sampled = sample_action(fwd.logits, policy_rng_);
        actions.push_back(std::move(sampled.action));
        logits.push_back(std::move(fwd.logits));
      }
      const StepOutcome out = env_.step(actions);
      for (int u = 0; u < U; ++u) {
        Experience e;
        e.action = actions[u];
        e.active = out.active_heads[u];
        e.behavior_logp = log_prob(logits[u], e.action, e.active);
        e.reward = out.rewards[u];
        e.done = out.done;
        buf.agents[u].steps.push_back(std::move(e));
        buf.agents[u].obs.push_back(out.observations[u]);
        history_[u].push_back(out.observations[u]);
      }
      if (out.done) buf.finished.push_back(env_.metrics());
    }
    for (auto& a : buf.agents)
      if (!a.steps.empty() && a.steps.back().done) a.obs.pop_back();
    return buf;
  }

 private:
  void start_episode() {
    const auto obs = env_.reset(episode_seed(root_seed_, id_, episode_++));
    history_.assign(obs.size(), {});
    for (std::size_t u = 0; u < obs.size(); ++u) history_[u].push_back(obs[u]);
  }

  const PolicyLayout& layout_;
  Environment env_;
  int id_;
  std::uint64_t root_seed_;
  Rng policy_rng_;
  int capacity_;
  SnapshotPtr policy_;
  std::uint64_t episode_ = 0;
  std::vector<std::vector<std::vector<double>>> history_;  // [u][t], current episode
};

// ---------------------------------------------------------------------------
// Learner

struct Adam {
  double lr = 0.005, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<ParameterSet> m, v;

  void step(std::vector<ParameterSet>& params, const std::vector<ParameterSet>& grads) {
    if (m.empty()) {
      for (const auto& p : params) {
        m.push_back(p.zeros_like());
        v.push_back(p.zeros_like());
      }
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t g = 0; g < params.size(); ++g) {
      for (int i = 0; i < params[g].size(); ++i) {
        const Mat& gr = grads[g][i];
        m[g][i] = beta1 * m[g][i] + (1 - beta1) * gr;
        v[g][i] = beta2 * v[g][i] + (1 - beta2) * gr.cwiseProduct(gr);
        params[g][i].array() -= lr * (m[g][i].array() / c1) / ((v[g][i].array() / c2).sqrt() + eps);
      }
    }
  }
};

struct LossReport {
  double policy = 0.0;  // summed over UAVs of per-UAV means
  double value = 0.0;
  double entropy = 0.0;
  std::size_t samples = 0;
};

struct UpdateStats {
  std::uint64_t update = 0;
  std::uint64_t version = 0;
  LossReport loss;
  double grad_norm = 0.0;
  std::size_t buffers_used = 0;
  std::size_t buffers_dropped = 0;  // cumulative
  bool broadcast = false;
};

/// Losses and gradients for one batch of buffers under `params`.
/// L = sum_u [ -mean(rho logpi adv) - ent * mean(H) + c_v mean((vs - V)^2) ].
inline LossReport compute_gradients(const PolicyLayout& layout, const std::vector<ParameterSet>& params,
                                    std::span<const EpisodicBuffer> buffers, const LearningParams& lp,
                                    std::vector<ParameterSet>& grads) {
  const int K = layout.context();
  struct Item {
    const AgentTrajectory* traj;
    int group;
  };
  std::map<int, std::vector<Item>> by_uav;
  for (const auto& b : buffers)
    for (const auto& a : b.agents)
      if (!a.steps.empty()) by_uav[a.uav].push_back({&a, layout.group(a.uav)});

  LossReport report;
  for (const auto& [uav, items] : by_uav) {
    std::size_t n = 0;
    for (const auto& it : items) n += it.traj->steps.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (const auto& it : items) {
      const auto& traj = *it.traj;
      const auto& net = layout.network(it.group);
      const auto& p = params[it.group];
      const std::size_t T = traj.steps.size();
      std::vector<GtrNetwork::Cache> caches(T);
      std::vector<HistoryWindow> windows;
      std::vector<ForwardOutput> fwd;
      std::vector<double> values, rewards, mu, pi;
      std::vector<std::uint8_t> dones;
      for (std::size_t t = 0; t < T; ++t) {
        windows.push_back(traj.window(traj.prefix + static_cast<int>(t), K));
        fwd.push_back(net.forward(p, windows.back(), caches[t]));
        const auto& e = traj.steps[t];
        values.push_back(fwd.back().value);
        rewards.push_back(e.reward * lp.reward_scale);
        mu.push_back(e.behavior_logp);
        pi.push_back(log_prob(fwd.back().logits, e.action, e.active));
        dones.push_back(e.done ? 1 : 0);
      }
      double bootstrap = 0.0;
      if (traj.has_bootstrap())
        bootstrap = net.forward(p, traj.window(traj.prefix + static_cast<int>(T), K)).value;
      const auto vt = vtrace(values, bootstrap, rewards, mu, pi, dones, lp.gamma, lp.rho_bar, lp.c_bar);

      for (std::size_t t = 0; t < T; ++t) {
        const auto& e = traj.steps[t];
        const double coef = vt.rho[t] * vt.advantage[t];
        const double H = entropy(fwd[t].logits, e.active);
        report.policy += -coef * pi[t] * inv_n - lp.entropy_coef * H * inv_n;
        report.entropy += H * inv_n;
        const double resid = values[t] - vt.vs[t];
        report.value += resid * resid * inv_n;

        OutputGrad dy;
        const auto glp = log_prob_grad(fwd[t].logits, e.action, e.active);
        const auto gent = entropy_grad(fwd[t].logits, e.active);
        for (std::size_t h = 0; h < glp.size(); ++h)
          dy.logits.push_back((-coef * inv_n) * glp[h] - (lp.entropy_coef * inv_n) * gent[h]);
        dy.value = lp.value_coef * 2.0 * resid * inv_n;
        net.backward(p, windows[t], caches[t], dy, grads[it.group]);
      }
      report.samples += T;
    }
  }
  return report;
}

/// Owns the trainable parameters and optimizer; consumes buffers, applies
/// updates, and decides when to broadcast.
class Learner {
 public:
  Learner(const ScenarioConfig& config, const PolicyLayout& layout, std::vector<ParameterSet> params,
          std::uint64_t version = 0)
      : config_(config), layout_(layout), params_(std::move(params)), version_(version) {
    if (!layout_.compatible(params_)) throw ConfigError("parameters do not match the network layout");
    const auto& l = config_.learning;
    adam_.lr = l.learning_rate;
    adam_.beta1 = l.adam_beta1;
    adam_.beta2 = l.adam_beta2;
    adam_.eps = l.adam_eps;
    for (auto& p : params_) p.version = version_;
  }

  std::uint64_t version() const { return version_; }
  std::uint64_t updates() const { return updates_; }
  const std::vector<ParameterSet>& params() const { return params_; }
  std::size_t dropped() const { return dropped_; }

  SnapshotPtr snapshot() const {
    auto s = std::make_shared<PolicySnapshot>();
    s->version = version_;
    s->sets = params_;
    return s;
  }

  /// Staleness in missed broadcasts.
  bool stale(const EpisodicBuffer& b) const {
    const auto interval = static_cast<std::uint64_t>(config_.learning.broadcast_interval);
    const auto missed = version_ / interval - std::min(b.behavior_version, version_) / interval;
    return missed > static_cast<std::uint64_t>(config_.learning.staleness_cap);
  }

  /// One optimizer step on the given buffers (stale ones are dropped first).
  UpdateStats step(std::vector<EpisodicBuffer> buffers) {
    std::vector<EpisodicBuffer> fresh;
    for (auto& b : buffers) {
      if (stale(b)) {
        ++dropped_;
        continue;
      }
      fresh.push_back(std::move(b));
    }
    UpdateStats st;
    std::vector<ParameterSet> grads;
    for (const auto& p : params_) grads.push_back(p.zeros_like());
    if (!fresh.empty()) st.loss = compute_gradients(layout_, params_, fresh, config_.learning, grads);
    double sq = 0;
    for (const auto& g : grads) sq += g.squared_norm();
    st.grad_norm = std::sqrt(sq);
    const double cap = config_.learning.max_grad_norm;
    if (cap > 0 && st.grad_norm > cap)
      for (auto& g : grads) g.scale(cap / st.grad_norm);
    if (!fresh.empty()) adam_.step(params_, grads);
    ++version_;
    ++updates_;
    for (auto& p : params_) p.version = version_;
    st.update = updates_;
    st.version = version_;
    st.buffers_used = fresh.size();
    st.buffers_dropped = dropped_;
    st.broadcast = version_ % static_cast<std::uint64_t>(config_.learning.broadcast_interval) == 0;
    return st;
  }

  void count_dropped(std::size_t n) { dropped_ += n; }

 private:
  ScenarioConfig config_;
  const PolicyLayout& layout_;
  std::vector<ParameterSet> params_;
  std::uint64_t version_;
  std::uint64_t updates_ = 0;
  Adam adam_;
  std::size_t dropped_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop

struct TrainingOptions {
  int workers = 1;
  bool sync = true;
  int episodes = 0;         // budget; 0 = config.learning.episodes
  std::uint64_t seed = 1;
  std::function<void(const UpdateStats&, double mean_return, const Learner&)> on_update;
  std::function<bool()> should_stop;  // polled between updates
};

struct TrainingResult {
  std::uint64_t episodes = 0;
  std::uint64_t updates = 0;
  std::uint64_t version = 0;
  std::vector<ParameterSet> params;
  bool interrupted = false;
};

namespace detail {

inline double mean_episode_return(const std::vector<EpisodicBuffer>& bufs, double fallback) {
  double sum = 0;
  int n = 0;
  for (const auto& b : bufs)
    for (const auto& m : b.finished) {
      sum += m.mean_return;
      ++n;
    }
  return n ? sum / n : fallback;
}

inline std::uint64_t count_finished(const std::vector<EpisodicBuffer>& bufs) {
  std::uint64_t n = 0;
  for (const auto& b : bufs) n += b.finished.size();
  return n;
}

}  // namespace detail

/// Actor/learner training until the episode budget is consumed. In sync mode a
/// single actor and the learner alternate on the calling thread.
inline TrainingResult train(const ScenarioConfig& config, const PolicyLayout& layout, Learner& learner,
                            const TrainingOptions& opt) {
  const std::uint64_t budget = static_cast<std::uint64_t>(opt.episodes > 0 ? opt.episodes : config.learning.episodes);
  const std::size_t minibatch = static_cast<std::size_t>(config.learning.minibatch);
  TrainingResult res;
  double last_return = std::numeric_limits<double>::quiet_NaN();

  auto finish_update = [&](std::vector<EpisodicBuffer> batch, SnapshotMailbox& box) {
    const double ret = detail::mean_episode_return(batch, last_return);
    last_return = ret;
    res.episodes += detail::count_finished(batch);
    const auto st = learner.step(std::move(batch));
    if (st.broadcast) box.post(learner.snapshot());
    if (opt.on_update) opt.on_update(st, ret, learner);
  };

  SnapshotMailbox box;
  box.post(learner.snapshot());

  if (opt.sync || opt.workers <= 1) {
    Actor actor(config, layout, 0, opt.seed);
    std::vector<EpisodicBuffer> batch;
    std::size_t have = 0;
    std::uint64_t pending_episodes = 0;
    while (res.episodes + pending_episodes < budget || !batch.empty()) {
      if (opt.should_stop && opt.should_stop()) {
        res.interrupted = true;
        break;
      }
      if (res.episodes + pending_episodes < budget) {
        if (actor.policy() != box.latest()) actor.set_policy(box.latest());
        auto b = actor.fill_buffer();
        pending_episodes += b.finished.size();
        have += b.transitions();
        batch.push_back(std::move(b));
        if (have < minibatch && res.episodes + pending_episodes < budget) continue;
      }
      pending_episodes = 0;
      have = 0;
      finish_update(std::move(batch), box);
      batch.clear();
    }
  } else {
    BufferQueue queue(static_cast<std::size_t>(config.learning.queue_capacity));
    std::atomic<bool> stop{false};
    std::vector<std::thread> threads;
    std::mutex err_mu;
    std::exception_ptr error;
    for (int w = 0; w < opt.workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          Actor actor(config, layout, w, opt.seed);
          while (!stop.load()) {
            auto latest = box.latest();
            if (actor.policy() != latest) actor.set_policy(latest);
            if (!queue.push(actor.fill_buffer())) break;
          }
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!error) error = std::current_exception();
          queue.close();
        }
      });
    }
    std::vector<EpisodicBuffer> batch;
    std::size_t have = 0;
    while (res.episodes < budget) {
      if (opt.should_stop && opt.should_stop()) {
        res.interrupted = true;
        break;
      }
      auto b = queue.pop();
      if (!b) break;
      have += b->transitions();
      batch.push_back(std::move(*b));
      if (have < minibatch) continue;
      have = 0;
      finish_update(std::move(batch), box);
      batch.clear();
    }
    stop = true;
    queue.close();
    for (auto& t : threads) t.join();
    learner.count_dropped(queue.evicted());
    if (error) std::rethrow_exception(error);
  }
  res.updates = learner.updates();
  res.version = learner.version();
  res.params = learner.params();
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Per-UAV history windows driving a snapshot through an environment.
class PolicyRunner {
 public:
  PolicyRunner(const PolicyLayout& layout, SnapshotPtr snapshot, bool greedy = false)
      : layout_(layout), snapshot_(std::move(snapshot)), greedy_(greedy) {}

  void reset(const std::vector<std::vector<double>>& obs) {
    windows_.clear();
    for (const auto& o : obs) {
      windows_.push_back(HistoryWindow::empty(layout_.context(), layout_.obs_dim()));
      windows_.back().push(o);
    }
  }

  ActionBundle act(Rng& rng) const {
    ActionBundle out;
    for (std::size_t u = 0; u < windows_.size(); ++u) {
      const int g = layout_.group(static_cast<int>(u));
      const auto fwd = layout_.network(g).forward(snapshot_->sets[g], windows_[u]);
      if (greedy_) {
        UavAction a;
        for (const auto& l : fwd.logits) {
          Eigen::Index best;
          l.maxCoeff(&best);
          a.push_back(static_cast<int>(best));
        }
        out.push_back(std::move(a));
      } else {
        out.push_back(sample_action(fwd.logits, rng).action);
      }
    }
    return out;
  }

  void observe(const std::vector<std::vector<double>>& obs) {
    for (std::size_t u = 0; u < obs.size(); ++u) windows_[u].push(obs[u]);
  }

 private:
  const PolicyLayout& layout_;
  SnapshotPtr snapshot_;
  bool greedy_;
  std::vector<HistoryWindow> windows_;
};

using TrajectoryHook = std::function<void(int episode, const Environment&)>;

/// Runs `episodes` evaluation episodes; a null snapshot means the uniform
/// random baseline. Episode seeds come from substream(seed, "eval").
inline std::vector<EpisodeMetrics> evaluate(const ScenarioConfig& config, const PolicyLayout* layout,
                                            SnapshotPtr snapshot, int episodes, std::uint64_t seed,
                                            bool greedy = false, const TrajectoryHook& hook = {}) {
  Environment env(config);
  Rng seeds = substream(seed, "eval");
  Rng policy_rng = substream(seed, "policy", 1000);
  std::vector<EpisodeMetrics> out;
  std::optional<PolicyRunner> runner;
  if (snapshot) runner.emplace(*layout, snapshot, greedy);
  for (int e = 0; e < episodes; ++e) {
    auto obs = env.reset(seeds());
    if (runner) runner->reset(obs);
    if (hook) hook(e, env);
    while (!env.done()) {
      const ActionBundle a = runner ? runner->act(policy_rng) : random_actions(env, policy_rng);
      const auto step = env.step(a);
      if (runner) runner->observe(step.observations);
      if (hook) hook(e, env);
    }
    out.push_back(env.metrics());
  }
  return out;
}

}  // namespace skysim
