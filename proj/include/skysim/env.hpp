#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skysim/aoi.hpp"
#include "skysim/channel.hpp"
#include "skysim/error.hpp"
#include "skysim/mobility.hpp"
#include "skysim/offload.hpp"
#include "skysim/radio.hpp"
#include "skysim/rng.hpp"
#include "skysim/scenario.hpp"

namespace skysim {

/// Per-UAV action: one categorical index per head.
/// C-UAV heads: [angle, distance, split(UE 0), ..., split(UE M-1)].
/// I-UAV heads: [angle, distance, phase(element 0), ..., phase(element L-1)].
using UavAction = std::vector<int>;
using ActionBundle = std::vector<UavAction>;
using HeadMask = std::vector<std::uint8_t>;

inline constexpr int kAngleHead = 0;
inline constexpr int kDistanceHead = 1;
inline constexpr int kFirstPayloadHead = 2;

/// Observation length: ego (3) + own one-hot (U) + 5 per UE + eve (3) + jammer (3)
/// + jammer power (1) + 3 per UAV + time (1), U = N + P.
inline int observation_dim(const ScenarioConfig& c) { return 11 + 5 * c.num_ues + 4 * c.num_uavs(); }

inline std::vector<int> head_sizes(const ScenarioConfig& c, UavKind kind) {
  std::vector<int> sizes{c.env.angle_bins, c.env.distance_bins};
  if (kind == UavKind::cuav) {
    const int split = SplitAlphabet(c.num_iuavs, c.env.split_grid).size();
    sizes.insert(sizes.end(), static_cast<std::size_t>(c.num_ues), split);
  } else {
    sizes.insert(sizes.end(), static_cast<std::size_t>(c.irs_elements), c.phase_levels());
  }
  return sizes;
}

inline UavKind uav_kind(const ScenarioConfig& c, int u) { return u < c.num_cuavs ? UavKind::cuav : UavKind::iuav; }

/// Heading 2 pi k / bins.
inline double decode_angle(int k, int bins) { return 2.0 * M_PI * k / bins; }

/// Distance max_move * k / (bins - 1); a single bin always flies the full step.
inline double decode_distance(int k, int bins, double max_move) {
  return bins == 1 ? max_move : max_move * k / (bins - 1);
}

/// Everything computed inside one step, kept for tests, logs and metrics.
struct StepInfo {
  int slot = 0;
  std::vector<MoveResult> moves;                // [u]
  std::vector<double> propulsion_j;             // [u]
  ChannelRealization channels;
  std::vector<int> generated;                   // UEs that generated a packet
  std::vector<int> association;                 // [m], C-UAV index or -1
  std::vector<std::vector<int>> served;         // [n]
  RateReport rates;
  std::vector<TaskSplit> splits;                // [m], meaningful when associated
  std::vector<double> served_bits;              // [m]
  std::vector<double> compute_time;             // [n], tau_comp of the served bits
  std::vector<double> energy_u2c, energy_comp, energy_c2i;  // [n]
  std::vector<AgeEvent> events;
  double delta_q = 0.0;
  double delta_chi = 0.0;
  double secrecy_sum = 0.0;         // sum_n R_sec,n, bits/s
  double secrecy_normalized = 0.0;  // divided by B_BS
  std::vector<bool> energy_violated;  // [u], remaining < 0
  std::vector<bool> eve_cap_violated; // [n]
  std::vector<UavPair> separation_pairs;
  std::vector<UavPair> overlap_pairs;
  bool constraints_active = false;  // grace period over
};

struct StepOutcome {
  std::vector<double> rewards;     // [u], intrinsic + extrinsic
  std::vector<double> intrinsic;   // [u]
  double extrinsic = 0.0;          // shared by all UAVs
  std::vector<std::vector<double>> observations;
  std::vector<HeadMask> active_heads;  // [u], heads whose choice affected this slot
  bool done = false;
  StepInfo info;
};

/// Episode-level summary.
struct EpisodeMetrics {
  int slots = 0;
  double chi = 0.0;
  double q = 0.0;
  double mean_secrecy = 0.0;  // mean over slots of (1/N) sum_n R_sec,n
  int energy_violations = 0;  // UAV-slots with remaining energy < 0
  int eve_cap_violations = 0;
  int separation_violations = 0;
  int overlap_violations = 0;
  double mean_return = 0.0;   // mean over UAVs of the summed reward
  int packets_generated = 0;
  int packets_collected = 0;
};

class Environment {
 public:
  explicit Environment(ScenarioConfig config)
      : config_(std::move(config)), alphabet_(config_.num_iuavs, config_.env.split_grid) {
    require_valid(config_);
    alpha_move_ = propulsion_coefficient(config_.energy.cruise_speed_mps, config_.energy);
    alpha_hover_ = hover_coefficient(config_.energy);
    weights_.resize(static_cast<std::size_t>(config_.num_ues));
    for (int m = 0; m < config_.num_ues; ++m) weights_[m] = config_.weight(m);
    head_sizes_[0] = head_sizes(config_, UavKind::cuav);
    head_sizes_[1] = head_sizes(config_, UavKind::iuav);
  }

  const ScenarioConfig& config() const { return config_; }
  int num_uavs() const { return config_.num_uavs(); }
  int obs_dim() const { return observation_dim(config_); }
  const std::vector<int>& heads(int u) const { return head_sizes_[uav_kind(config_, u) == UavKind::cuav ? 0 : 1]; }
  const SplitAlphabet& split_alphabet() const { return alphabet_; }

  std::vector<std::vector<double>> reset(std::uint64_t seed) {
    seed_ = seed;
    world_ = build_world(config_, seed);
    env_rng_ = substream(seed, "env");
    channel_rng_ = substream(seed, "channels");
    tracker_ = AgeTracker(config_.num_ues, config_.aoi.threshold_slots, config_.aoi.exponent_cap);
    phases_.assign(static_cast<std::size_t>(config_.num_iuavs), ReflectionVector::zeros(config_.irs_elements));
    slot_ = 0;
    done_ = false;
    q_ = chi_ = 0.0;
    metrics_ = EpisodeMetrics{};
    returns_.assign(static_cast<std::size_t>(num_uavs()), 0.0);
    secrecy_total_ = 0.0;
    return observe_all();
  }

  bool done() const { return done_; }
  int slot() const { return slot_; }
  std::uint64_t seed() const { return seed_; }
  const WorldState& world() const { return world_; }
  const AgeTracker& tracker() const { return tracker_; }
  const std::vector<ReflectionVector>& phases() const { return phases_; }
  const Rng& env_rng() const { return env_rng_; }
  const Rng& channel_rng() const { return channel_rng_; }
  double alpha_move() const { return alpha_move_; }
  double alpha_hover() const { return alpha_hover_; }

  /// Current Q and chi of the episode so far.
  double q() const { return q_; }
  double chi() const { return chi_; }

  EpisodeMetrics metrics() const {
    EpisodeMetrics m = metrics_;
    m.chi = chi_;
    m.q = q_;
    m.mean_secrecy = m.slots > 0 ? secrecy_total_ / m.slots : 0.0;
    double sum = 0;
    for (double r : returns_) sum += r;
    m.mean_return = returns_.empty() ? 0.0 : sum / static_cast<double>(returns_.size());
    return m;
  }

  std::vector<double> observe(int u) const {
    const auto& c = config_;
    const double side = c.area_side_m;
    const int U = num_uavs();
    std::vector<double> o;
    o.reserve(static_cast<std::size_t>(obs_dim()));
    const UavState& self = world_.uavs[u];
    o.push_back(self.position.x / side);
    o.push_back(self.position.y / side);
    o.push_back(self.energy() / c.energy.max_energy_j);
    for (int k = 0; k < U; ++k) o.push_back(k == u ? 1.0 : 0.0);
    for (int m = 0; m < c.num_ues; ++m) {
      const auto& ue = world_.ues[m];
      if (planar_distance(ue.position, self.position) <= c.env.sensing_range_m) {
        o.push_back(1.0);
        o.push_back(ue.position.x / side);
        o.push_back(ue.position.y / side);
        o.push_back(ue.queued_bits() / c.ue_task.data_bits);
        o.push_back(tracker_.age(m) / c.aoi.threshold_slots);
      } else {
        o.insert(o.end(), 5, 0.0);
      }
    }
    for (const Adversary* a : {&world_.eavesdropper, &world_.jammer}) {
      o.push_back(a->centroid.x / side);
      o.push_back(a->centroid.y / side);
      o.push_back(a->radius / side);
    }
    o.push_back(c.radio.jammer_power_w / c.radio.cuav_power_w);
    for (const auto& s : world_.uavs) {
      o.push_back(s.position.x / side);
      o.push_back(s.position.y / side);
      o.push_back(s.energy() / c.energy.max_energy_j);
    }
    o.push_back(static_cast<double>(slot_) / c.horizon_slots);
    return o;
  }

  std::vector<std::vector<double>> observe_all() const {
    std::vector<std::vector<double>> out;
    for (int u = 0; u < num_uavs(); ++u) out.push_back(observe(u));
    return out;
  }

  StepOutcome step(const ActionBundle& actions) {
    if (done_) throw ContractError("step called on a finished episode");
    check_actions(actions);
    const auto& c = config_;
    const int M = c.num_ues;
    const int N = c.num_cuavs;
    const int P = c.num_iuavs;
    const int U = num_uavs();
    const double tau = c.slot_length_s;
    const double t0 = slot_;

    StepOutcome out;
    StepInfo& info = out.info;
    info.slot = slot_;

    // (1) moves and propulsion
    for (int u = 0; u < U; ++u) {
      auto& s = world_.uavs[u];
      const double rho = decode_angle(actions[u][kAngleHead], c.env.angle_bins);
      const double l = decode_distance(actions[u][kDistanceHead], c.env.distance_bins, c.env.max_move_m);
      auto mv = apply_move(s.position, rho, l, c.env.max_move_m, c.energy.cruise_speed_mps, c.area_side_m,
                           c.obstacles);
      mv.move_time = std::min(mv.move_time, tau);
      s.position = mv.position;
      info.propulsion_j.push_back(s.ledger.debit(slot_propulsion_energy(mv.move_time, tau, alpha_move_, alpha_hover_)));
      info.moves.push_back(mv);
    }
    if (slot_ == 0) {
      for (int p = 0; p < P; ++p) {
        const auto& a = actions[N + p];
        phases_[p] = ReflectionVector::quantized(std::span<const int>(a).subspan(kFirstPayloadHead), c.phase_levels());
      }
    }

    // (2) channels
    info.channels = sample_channels(world_, c, channel_rng_);

    // (3) generations at the slot start
    for (int m = 0; m < M; ++m) {
      if (uniform01(env_rng_) < c.ue_task.arrival_rate) {
        world_.ues[m].queue.push_back({t0, c.ue_task.data_bits});
        info.generated.push_back(m);
        info.events.push_back({AgeEvent::Kind::generation, m, t0});
        ++metrics_.packets_generated;
      }
    }

    // (4) association and rates
    info.association.assign(M, -1);
    info.served.assign(N, {});
    for (int m = 0; m < M; ++m) {
      if (world_.ues[m].queue.empty()) continue;
      double best = std::numeric_limits<double>::infinity();
      for (int n = 0; n < N; ++n) {
        const double d = planar_distance(world_.ues[m].position, world_.cuav(n).position);
        if (d <= world_.cuav(n).coverage_radius && d < best) {
          best = d;
          info.association[m] = n;
        }
      }
      if (info.association[m] >= 0) info.served[info.association[m]].push_back(m);
    }
    const CsiView view = default_view(c.radio);
    info.rates = compute_rates(info.channels, phases_, info.served, c.radio, view);

    // (5)-(6) offloading within the slot budget, then energies
    info.splits.assign(M, TaskSplit::all_local(P));
    info.served_bits.assign(M, 0.0);
    info.compute_time.assign(N, 0.0);
    info.energy_u2c.assign(N, 0.0);
    info.energy_comp.assign(N, 0.0);
    info.energy_c2i.assign(N, 0.0);
    std::vector<AgeEvent> collections;
    for (int n = 0; n < N; ++n) serve_cuav(n, actions[n], info, collections);
    std::stable_sort(collections.begin(), collections.end(),
                     [](const AgeEvent& a, const AgeEvent& b) { return a.time < b.time; });
    info.events.insert(info.events.end(), collections.begin(), collections.end());
    metrics_.packets_collected += static_cast<int>(collections.size());

    // (7) AoI
    tracker_.advance(info.events, t0 + 1.0);
    const double q_now = aoi_penalty(tracker_, weights_);
    const double chi_now = c.aoi.normalize_violation ? violation_ratio(tracker_, c.horizon_slots)
                                                     : violation_ratio(tracker_);
    info.delta_q = q_now - q_;
    info.delta_chi = chi_now - chi_;
    q_ = q_now;
    chi_ = chi_now;

    // (8) rewards
    for (double s : info.rates.secrecy) info.secrecy_sum += s;
    info.secrecy_normalized = info.secrecy_sum / c.radio.bs_bandwidth_hz;
    out.extrinsic = extrinsic_reward(info.delta_q, info.delta_chi, info.secrecy_normalized, c.env.reward_clip);

    info.energy_violated.assign(U, false);
    for (int u = 0; u < U; ++u) info.energy_violated[u] = world_.uavs[u].energy() < 0;
    info.eve_cap_violated.assign(N, false);
    for (int n = 0; n < N; ++n)
      info.eve_cap_violated[n] = eve_rate_cap_violated(info.rates.rate_eve[n], c.radio.eve_rate_cap);
    info.constraints_active = slot_ >= c.env.grace_slots;
    if (info.constraints_active) {
      info.separation_pairs = check_separation(world_.uavs, c.energy.min_separation_m);
      info.overlap_pairs = check_coverage_overlap(world_.uavs, c.env.coverage_rule);
    }
    out.intrinsic = intrinsic_rewards(info);
    for (int u = 0; u < U; ++u) out.rewards.push_back(out.intrinsic[u] + out.extrinsic);

    // bookkeeping
    for (int u = 0; u < U; ++u) {
      returns_[u] += out.rewards[u];
      if (info.energy_violated[u]) ++metrics_.energy_violations;
    }
    for (int n = 0; n < N; ++n)
      if (info.eve_cap_violated[n]) ++metrics_.eve_cap_violations;
    metrics_.separation_violations += static_cast<int>(info.separation_pairs.size());
    metrics_.overlap_violations += static_cast<int>(info.overlap_pairs.size());
    secrecy_total_ += info.secrecy_sum / N;
    ++metrics_.slots;

    out.active_heads = active_heads(info);
    bool dead = false;
    for (const auto& s : world_.uavs) dead = dead || s.energy() <= 0;
    done_ = slot_ == c.horizon_slots - 1 || dead;
    ++slot_;
    world_.slot = slot_;
    out.done = done_;
    out.observations = observe_all();
    return out;
  }

  /// -(dQ + dchi - normalized secrecy), bounded below by -clip.
  static double extrinsic_reward(double delta_q, double delta_chi, double secrecy_normalized, double clip) {
    return std::max(-(delta_q + delta_chi - secrecy_normalized), -clip);
  }

  std::vector<double> intrinsic_rewards(const StepInfo& info) const {
    const auto& e = config_.env;
    const int N = config_.num_cuavs;
    std::vector<double> r(static_cast<std::size_t>(num_uavs()), 0.0);
    for (int u = 0; u < num_uavs(); ++u) {
      const bool cuav = u < N;
      if (info.energy_violated[u]) r[u] -= cuav ? e.eta_energy_cuav : e.eta_energy_iuav;
      if (cuav && info.eve_cap_violated[u]) r[u] -= e.eta_eve_cap;
    }
    for (auto [a, b] : info.separation_pairs) {
      r[a] -= e.eta_separation;
      r[b] -= e.eta_separation;
    }
    for (auto [a, b] : info.overlap_pairs) {
      r[a] -= e.eta_overlap;
      r[b] -= e.eta_overlap;
    }
    return r;
  }

 private:
  void check_actions(const ActionBundle& actions) const {
    if (static_cast<int>(actions.size()) != num_uavs()) throw ContractError("action bundle needs one action per UAV");
    for (int u = 0; u < num_uavs(); ++u) {
      const auto& sizes = heads(u);
      if (actions[u].size() != sizes.size()) throw ContractError("action has the wrong number of heads");
      for (std::size_t h = 0; h < sizes.size(); ++h)
        if (actions[u][h] < 0 || actions[u][h] >= sizes[h]) throw ContractError("action index out of range");
    }
  }

  struct Unit {
    int ue = 0;
    double seconds_per_bit = 0.0;
  };

  /// Serves C-UAV n's associated UEs oldest packet first within tau - move_time.
  void serve_cuav(int n, const UavAction& action, StepInfo& info, std::vector<AgeEvent>& collections) {
    const auto& c = config_;
    const int P = c.num_iuavs;
    const auto& group = info.served[n];
    if (group.empty()) return;
    const double tau = c.slot_length_s;
    const double move_time = info.moves[n].move_time;
    const double budget = tau - move_time;
    const double cpu_share = c.energy.cuav_cpu_hz / static_cast<double>(group.size());
    const double bs_share = c.energy.bs_cpu_hz / c.num_cuavs;
    const double C = c.ue_task.cycles_per_bit;

    std::vector<Complex> cascade(static_cast<std::size_t>(P));
    for (int p = 0; p < P; ++p)
      cascade[p] = cascaded_gain(info.channels.iuav_bs[p], phases_[p], info.channels.cuav_iuav[n][p]);

    std::vector<std::optional<double>> unit(static_cast<std::size_t>(c.num_ues));
    for (int m : group) {
      const TaskSplit split = alphabet_.decode(action[kFirstPayloadHead + m]);
      info.splits[m] = split;
      const double r_uc = info.rates.rate_uc[m][n];
      bool reachable = r_uc > 0;
      double relay = 0;
      for (int p = 0; p < P && reachable; ++p) {
        if (split.relay[p] == 0) continue;
        const double r_bs = info.rates.rate_bs[n][p];
        if (!(r_bs > 0)) reachable = false;
        else relay += split.relay[p] * (1.0 / r_bs + C / bs_share);
      }
      if (!reachable) continue;
      unit[m] = 1.0 / r_uc + std::max(split.local * C / cpu_share, relay);
    }

    double elapsed = 0;
    for (;;) {
      int pick = -1;
      double oldest = std::numeric_limits<double>::infinity();
      for (int m : group) {
        if (!unit[m] || world_.ues[m].queue.empty()) continue;
        const double z = world_.ues[m].queue.front().generated_at;
        if (z < oldest) {
          oldest = z;
          pick = m;
        }
      }
      if (pick < 0 || elapsed >= budget) break;
      auto& packet = world_.ues[pick].queue.front();
      const double per_bit = *unit[pick];
      const double need = packet.remaining_bits * per_bit;
      double bits = packet.remaining_bits;
      bool finished = true;
      if (elapsed + need > budget) {
        bits = (budget - elapsed) / per_bit;
        finished = false;
      }
      charge(n, pick, bits, cpu_share, cascade, info);
      info.served_bits[pick] += bits;
      if (finished) {
        elapsed += need;
        world_.ues[pick].queue.pop_front();
        collections.push_back({AgeEvent::Kind::collection, pick, slot_ + std::min(move_time + elapsed, tau) / tau});
      } else {
        packet.remaining_bits -= bits;
        elapsed = budget;
      }
    }
    info.compute_time[n] = elapsed;
  }

  void charge(int n, int m, double bits, double cpu_share, const std::vector<Complex>& cascade, StepInfo& info) {
    const auto& c = config_;
    const TaskSplit& split = info.splits[m];
    const Cost up = u2c_cost(bits, info.rates.rate_uc[m][n], info.channels.ue_cuav[m][n], c.radio.ue_power_w);
    const Cost comp =
        cuav_compute_cost(split.local, bits, c.ue_task.cycles_per_bit, cpu_share, c.energy.switched_capacitance);
    double relay = 0;
    for (int p = 0; p < c.num_iuavs; ++p)
      relay += c2i_cost(split.relay[p], bits, info.rates.rate_bs[n][p], cascade[p], c.radio.cuav_power_w).energy;
    auto& ledger = world_.cuav(n).ledger;
    info.energy_u2c[n] += ledger.debit(up.energy);
    info.energy_comp[n] += ledger.debit(comp.energy);
    info.energy_c2i[n] += ledger.debit(relay);
  }

  std::vector<HeadMask> active_heads(const StepInfo& info) const {
    std::vector<HeadMask> out;
    for (int u = 0; u < num_uavs(); ++u) {
      HeadMask mask(heads(u).size(), 0);
      mask[kAngleHead] = mask[kDistanceHead] = 1;
      if (u < config_.num_cuavs) {
        for (int m : info.served[u]) mask[kFirstPayloadHead + m] = 1;
      } else if (info.slot == 0) {
        std::fill(mask.begin() + kFirstPayloadHead, mask.end(), 1);
      }
      out.push_back(std::move(mask));
    }
    return out;
  }

  ScenarioConfig config_;
  SplitAlphabet alphabet_;
  double alpha_move_ = 0.0;
  double alpha_hover_ = 0.0;
  std::vector<double> weights_;
  std::vector<int> head_sizes_[2];

  std::uint64_t seed_ = 0;
  WorldState world_;
  Rng env_rng_;
  Rng channel_rng_;
  AgeTracker tracker_;
  std::vector<ReflectionVector> phases_;
  int slot_ = 0;
  bool done_ = true;
  double q_ = 0.0;
  double chi_ = 0.0;
  EpisodeMetrics metrics_;
  std::vector<double> returns_;
  double secrecy_total_ = 0.0;
};

/// Uniformly random action for every head of every UAV.
inline ActionBundle random_actions(const Environment& env, Rng& rng) {
  ActionBundle out;
  for (int u = 0; u < env.num_uavs(); ++u) {
    UavAction a;
    for (int size : env.heads(u)) a.push_back(static_cast<int>(uniform01(rng) * size));
    out.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replay log: one JSON object per line. The first line holds the episode seed
// and config hash; each later line records a slot's actions, the rng states
// before the slot, and the rewards it produced.

struct ReplayRecord {
  int slot = 0;
  ActionBundle actions;
  std::string env_rng;
  std::string channel_rng;
  std::vector<double> rewards;
};

struct EpisodeReplay {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<ReplayRecord> records;
};

inline std::string to_jsonl(const EpisodeReplay& r) {
  std::string out = nlohmann::json{{"seed", r.seed}, {"config_hash", r.config_hash}}.dump() + "\n";
  for (const auto& rec : r.records) {
    nlohmann::json j{{"slot", rec.slot},       {"actions", rec.actions}, {"env_rng", rec.env_rng},
                     {"channel_rng", rec.channel_rng}, {"rewards", rec.rewards}};
    out += j.dump() + "\n";
  }
  return out;
}

inline EpisodeReplay replay_from_jsonl(std::istream& in) {
  EpisodeReplay r;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (lineno == 1) {
        r.seed = j.at("seed").get<std::uint64_t>();
        r.config_hash = j.at("config_hash").get<std::string>();
        continue;
      }
      ReplayRecord rec;
      rec.slot = j.at("slot").get<int>();
      rec.actions = j.at("actions").get<ActionBundle>();
      rec.env_rng = j.at("env_rng").get<std::string>();
      rec.channel_rng = j.at("channel_rng").get<std::string>();
      rec.rewards = j.at("rewards").get<std::vector<double>>();
      r.records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("replay line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return r;
}

/// Steps `env` and appends the slot to `log`.
inline StepOutcome logged_step(Environment& env, const ActionBundle& actions, EpisodeReplay& log) {
  ReplayRecord rec;
  rec.slot = env.slot();
  rec.actions = actions;
  rec.env_rng = save_state(env.env_rng());
  rec.channel_rng = save_state(env.channel_rng());
  auto out = env.step(actions);
  rec.rewards = out.rewards;
  log.records.push_back(std::move(rec));
  return out;
}

/// Re-runs a logged episode; returns the first slot whose rng states or rewards
/// differ bit-for-bit, or nullopt when the replay matches.
inline std::optional<int> verify_replay(const ScenarioConfig& config, const EpisodeReplay& log) {
  if (log.config_hash != hex64(config_hash(config))) throw ConfigError("replay was recorded with a different config");
  Environment env(config);
  env.reset(log.seed);
  for (const auto& rec : log.records) {
    if (env.done() || env.slot() != rec.slot) return rec.slot;
    if (save_state(env.env_rng()) != rec.env_rng || save_state(env.channel_rng()) != rec.channel_rng) return rec.slot;
    const auto out = env.step(rec.actions);
    if (out.rewards != rec.rewards) return rec.slot;
  }
  return std::nullopt;
}

}  // namespace skysim
