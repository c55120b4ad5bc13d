#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skysim/error.hpp"
#include "skysim/geometry.hpp"
#include "skysim/rng.hpp"

namespace skysim {

using json = nlohmann::json;

struct TaskSpec {
  double data_bits = 2e5;       // D_m
  double cycles_per_bit = 500;  // C_m
  double arrival_rate = 0.3;    // lambda_m, Bernoulli probability per slot
};

/// Nakagami shape per link class.
struct NakagamiShapes {
  double ue_cuav = 1.0;
  double cuav_iuav = 3.0;
  double iuav_bs = 3.0;
  double iuav_eve = 1.0;
  double jammer_iuav = 1.0;
  double jammer_bs = 1.0;
  double cuav_eve = 1.0;
};

/// Radii of the bounded CSI error balls of the illegitimate links.
struct CsiErrorBounds {
  double cuav_eve = 0.05;
  double jammer_bs = 0.05;
  double jammer_iuav = 0.05;
  double iuav_eve = 0.05;
};

struct RadioParams {
  double uplink_bandwidth_hz = 1e6;  // B_u
  double bs_bandwidth_hz = 2e6;      // B_BS
  double ue_power_w = 0.1;           // P_m
  double cuav_power_w = 0.5;         // P_n^t
  double jammer_power_w = 0.1;       // P_J
  double noise_cuav_w = 1e-10;
  double noise_bs_w = 1e-10;
  double noise_eve_w = 1e-10;
  double pathloss_constant = 1e-7;  // A
  double pathloss_exponent = 2.0;   // alpha_pl
  double fading_spread = 1.0;       // Nakagami Omega = E|h|^2
  NakagamiShapes nakagami;
  CsiErrorBounds csi_error;
  double eve_region_radius_m = 30.0;     // epsilon_E
  double jammer_region_radius_m = 30.0;  // epsilon_J
  double eve_rate_cap = 30.0;            // R_th
  bool worst_case_csi = false;
  bool eve_rate_bandwidth = false;
  int phase_bits = 3;
  double min_link_distance_m = 1.0;
};

struct EnergyParams {
  double max_energy_j = 3e5;
  double cruise_speed_mps = 20.0;
  double c1 = 79.86;
  double c2 = 88.63;
  double c3 = 0.0185;
  double tip_speed_mps = 120.0;
  double induced_velocity_mps = 4.03;
  double switched_capacitance = 1e-28;
  double cuav_cpu_hz = 2e9;
  double bs_cpu_hz = 2e10;
  double min_separation_m = 10.0;
  double coverage_radius_m = 100.0;
  std::vector<double> coverage_radii_m;  // per UAV, C-UAVs first; empty = coverage_radius_m for all
};

enum class CoverageRule { disjoint, overlap };

struct EnvParams {
  double max_move_m = 30.0;
  int angle_bins = 8;
  int distance_bins = 4;
  int split_grid = 4;
  double sensing_range_m = 400.0;
  double eta_energy_cuav = 1.0;
  double eta_energy_iuav = 1.0;
  double eta_eve_cap = 1.0;
  double eta_separation = 1.0;
  double eta_overlap = 1.0;
  int grace_slots = 5;
  double reward_clip = std::numeric_limits<double>::infinity();
  CoverageRule coverage_rule = CoverageRule::disjoint;
  double cuav_altitude_m = 100.0;
  double iuav_altitude_m = 200.0;
};

struct AoiParams {
  double threshold_slots = 100.0;  // AoI_th
  double exponent_cap = 50.0;
  bool normalize_violation = false;
};

enum class GateKind { gru, residual };

struct NetworkParams {
  int d_model = 64;
  int heads = 4;
  int blocks = 2;
  int context = 8;
  int ff_width = 128;
  int embed_hidden = 64;
  GateKind gate = GateKind::gru;
  double gate_bias = 2.0;
  bool per_uav = false;
};

struct LearningParams {
  double learning_rate = 0.005;
  double gamma = 0.95;
  int minibatch = 256;
  int queue_capacity = 200000;
  int broadcast_interval = 100;
  double rho_bar = 1.0;
  double c_bar = 1.0;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  int staleness_cap = 10;
  int episodes = 1000;
  int buffer_capacity = 0;  // env steps per episodic buffer; 0 = horizon
  double max_grad_norm = 40.0;
  double reward_scale = 1.0;  // applied to rewards inside the learner only
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct ScenarioConfig {
  double area_side_m = 1500.0;
  int num_ues = 40;
  int num_cuavs = 3;
  int num_iuavs = 6;
  int irs_elements = 8;
  double slot_length_s = 2.0;
  int horizon_slots = 200;
  TaskSpec ue_task;
  std::vector<double> ue_weights;  // empty = all 1
  std::vector<Obstacle> obstacles;
  Vec2 eve_centroid{1100.0, 300.0};
  Vec2 jammer_centroid{300.0, 1100.0};
  std::uint64_t seed = 1;
  RadioParams radio;
  EnergyParams energy;
  EnvParams env;
  AoiParams aoi;
  NetworkParams network;
  LearningParams learning;

  int num_uavs() const { return num_cuavs + num_iuavs; }
  double weight(int m) const { return ue_weights.empty() ? 1.0 : ue_weights[static_cast<std::size_t>(m)]; }
  double coverage_radius(int uav) const {
    return energy.coverage_radii_m.empty() ? energy.coverage_radius_m
                                           : energy.coverage_radii_m[static_cast<std::size_t>(uav)];
  }
  int phase_levels() const { return 1 << radio.phase_bits; }
};

/// Returns one message per violated invariant; empty iff the config is valid.
inline std::vector<std::string> validate(const ScenarioConfig& c) {
  std::vector<std::string> out;
  auto require = [&out](bool ok, std::string msg) {
    if (!ok) out.push_back(std::move(msg));
  };
  require(c.area_side_m > 0, "area_side_m must be > 0");
  require(c.num_ues >= 1, "num_ues must be >= 1");
  require(c.num_cuavs >= 1, "num_cuavs must be >= 1");
  require(c.num_iuavs >= 1, "num_iuavs must be >= 1");
  require(c.irs_elements >= 1, "irs_elements must be >= 1");
  require(c.horizon_slots >= 1, "horizon_slots must be >= 1");
  require(c.slot_length_s > 0, "slot_length must be > 0");

  require(c.ue_task.data_bits > 0, "ue_task.data_bits must be > 0");
  require(c.ue_task.cycles_per_bit > 0, "ue_task.cycles_per_bit must be > 0");
  require(c.ue_task.arrival_rate >= 0 && c.ue_task.arrival_rate <= 1, "ue_task.arrival_rate must be in [0, 1]");

  if (!c.ue_weights.empty()) {
    require(static_cast<int>(c.ue_weights.size()) == c.num_ues, "ue_weights must have num_ues entries");
    bool nonneg = true;
    double sum = 0;
    for (double w : c.ue_weights) {
      nonneg = nonneg && w >= 0;
      sum += w;
    }
    require(nonneg, "ue_weights must be >= 0");
    require(sum > 0, "ue_weights must not all be zero");
  }
  for (std::size_t i = 0; i < c.obstacles.size(); ++i) {
    const auto& o = c.obstacles[i];
    require(o.radius > 0 && o.center.x - o.radius >= 0 && o.center.y - o.radius >= 0 &&
                o.center.x + o.radius <= c.area_side_m && o.center.y + o.radius <= c.area_side_m,
            "obstacles[" + std::to_string(i) + "] must lie within the area");
  }
  auto inside = [&c](Vec2 p) { return p.x >= 0 && p.y >= 0 && p.x <= c.area_side_m && p.y <= c.area_side_m; };
  require(inside(c.eve_centroid), "eve_centroid must lie within the area");
  require(inside(c.jammer_centroid), "jammer_centroid must lie within the area");

  const auto& r = c.radio;
  require(r.uplink_bandwidth_hz > 0, "radio.uplink_bandwidth_hz must be > 0");
  require(r.bs_bandwidth_hz > 0, "radio.bs_bandwidth_hz must be > 0");
  require(r.ue_power_w > 0, "radio.ue_power_w must be > 0");
  require(r.cuav_power_w > 0, "radio.cuav_power_w must be > 0");
  require(r.jammer_power_w > 0, "radio.jammer_power_w must be > 0");
  require(r.noise_cuav_w > 0 && r.noise_bs_w > 0 && r.noise_eve_w > 0, "radio noise variances must be > 0");
  require(r.pathloss_constant > 0, "radio.pathloss_constant must be > 0");
  require(r.pathloss_exponent >= 2, "path-loss exponent ≥ 2");
  require(r.fading_spread > 0, "radio.fading_spread must be > 0");
  for (double m : {r.nakagami.ue_cuav, r.nakagami.cuav_iuav, r.nakagami.iuav_bs, r.nakagami.iuav_eve,
                   r.nakagami.jammer_iuav, r.nakagami.jammer_bs, r.nakagami.cuav_eve}) {
    if (!(m >= 0.5)) {
      out.emplace_back("radio.nakagami shapes must be >= 0.5");
      break;
    }
  }
  require(r.csi_error.cuav_eve >= 0 && r.csi_error.jammer_bs >= 0 && r.csi_error.jammer_iuav >= 0 &&
              r.csi_error.iuav_eve >= 0,
          "radio.csi_error bounds must be >= 0");
  require(r.eve_region_radius_m >= 0, "radio.eve_region_radius_m must be >= 0");
  require(r.jammer_region_radius_m >= 0, "radio.jammer_region_radius_m must be >= 0");
  require(r.eve_rate_cap >= 0, "radio.eve_rate_cap must be >= 0");
  require(r.phase_bits >= 1 && r.phase_bits <= 8, "radio.phase_bits must be in [1, 8]");
  require(r.min_link_distance_m > 0, "radio.min_link_distance_m must be > 0");

  const auto& e = c.energy;
  require(e.max_energy_j > 0, "energy.max_energy_j must be > 0");
  require(e.max_energy_j <= 4194304.0, "energy.max_energy_j must be <= 4194304 (2^22 J)");
  require(e.cruise_speed_mps > 0, "energy.cruise_speed_mps must be > 0");
  require(e.tip_speed_mps > e.cruise_speed_mps, "energy.tip_speed_mps must be > cruise_speed_mps");
  require(e.induced_velocity_mps > 0, "energy.induced_velocity_mps must be > 0");
  require(e.switched_capacitance > 0, "energy.switched_capacitance must be > 0");
  require(e.cuav_cpu_hz > 0, "energy.cuav_cpu_hz must be > 0");
  require(e.bs_cpu_hz > 0, "energy.bs_cpu_hz must be > 0");
  require(e.min_separation_m >= 0, "energy.min_separation_m must be >= 0");
  require(e.coverage_radius_m >= 0, "energy.coverage_radius_m must be >= 0");
  require(e.coverage_radii_m.empty() || static_cast<int>(e.coverage_radii_m.size()) == c.num_uavs(),
          "energy.coverage_radii_m must have num_cuavs + num_iuavs entries");

  const auto& v = c.env;
  require(v.max_move_m >= 0, "env.max_move_m must be >= 0");
  require(v.max_move_m <= e.cruise_speed_mps * c.slot_length_s * (1 + 1e-12),
          "env.max_move_m / cruise_speed_mps must be <= slot_length");
  require(v.angle_bins >= 1, "env.angle_bins must be >= 1");
  require(v.distance_bins >= 1, "env.distance_bins must be >= 1");
  require(v.split_grid >= 1, "env.split_grid must be >= 1");
  require(v.sensing_range_m >= 0, "env.sensing_range_m must be >= 0");
  require(v.eta_energy_cuav >= 0 && v.eta_energy_iuav >= 0 && v.eta_eve_cap >= 0 && v.eta_separation >= 0 &&
              v.eta_overlap >= 0,
          "env penalties eta must be >= 0");
  require(v.grace_slots >= 0, "env.grace_slots must be >= 0");
  require(v.reward_clip > 0, "env.reward_clip must be > 0");
  require(v.cuav_altitude_m > 0 && v.iuav_altitude_m > 0, "env UAV altitudes must be > 0");

  require(c.aoi.threshold_slots > 0, "aoi.threshold_slots must be > 0");
  require(c.aoi.exponent_cap > 0, "aoi.exponent_cap must be > 0");

  const auto& n = c.network;
  require(n.d_model >= 1 && n.heads >= 1 && n.d_model % n.heads == 0, "network.d_model must be divisible by heads");
  require(n.blocks >= 0, "network.blocks must be >= 0");
  require(n.context >= 1, "network.context must be >= 1");
  require(n.ff_width >= 1 && n.embed_hidden >= 1, "network widths must be >= 1");

  const auto& l = c.learning;
  require(l.learning_rate > 0, "learning.learning_rate must be > 0");
  require(l.gamma >= 0 && l.gamma < 1, "learning.gamma must be in [0, 1)");
  require(l.minibatch >= 1, "learning.minibatch must be >= 1");
  require(l.queue_capacity >= 1, "learning.queue_capacity must be >= 1");
  require(l.broadcast_interval >= 1, "learning.broadcast_interval must be >= 1");
  require(l.rho_bar > 0 && l.c_bar > 0, "learning truncation thresholds must be > 0");
  require(l.value_coef >= 0 && l.entropy_coef >= 0, "learning loss coefficients must be >= 0");
  require(l.staleness_cap >= 0, "learning.staleness_cap must be >= 0");
  require(l.episodes >= 0, "learning.episodes must be >= 0");
  require(l.buffer_capacity >= 0, "learning.buffer_capacity must be >= 0");
  require(l.max_grad_norm >= 0, "learning.max_grad_norm must be >= 0");
  require(l.reward_scale > 0, "learning.reward_scale must be > 0");
  return out;
}

inline void require_valid(const ScenarioConfig& c) {
  const auto problems = validate(c);
  if (problems.empty()) return;
  std::string msg = "invalid scenario config: ";
  for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
  throw ConfigError(msg);
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

/// Reads known keys from a JSON object and rejects whatever is left over.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "config" : path_;
    return key ? (path_.empty() ? std::string(key) : path_ + "." + key) : p;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + where(it.key().c_str()) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Vec2 read_point(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(where + " must be a [x, y] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline double read_clip(const json& j, const std::string& where) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  if (!j.is_number()) throw ConfigError(where + " must be a number or null");
  return j.get<double>();
}

}  // namespace detail

inline ScenarioConfig config_from_json(const json& j) {
  using detail::StrictObject;
  ScenarioConfig c;
  StrictObject root(j, "");
  root.get("area_side_m", c.area_side_m);
  root.get("num_ues", c.num_ues);
  root.get("num_cuavs", c.num_cuavs);
  root.get("num_iuavs", c.num_iuavs);
  root.get("irs_elements", c.irs_elements);
  root.get("slot_length_s", c.slot_length_s);
  root.get("horizon_slots", c.horizon_slots);
  root.get("ue_weights", c.ue_weights);
  root.get("seed", c.seed);
  if (auto* t = root.child("ue_task")) {
    StrictObject o(*t, "ue_task");
    o.get("data_bits", c.ue_task.data_bits);
    o.get("cycles_per_bit", c.ue_task.cycles_per_bit);
    o.get("arrival_rate", c.ue_task.arrival_rate);
    o.finish();
  }
  if (auto* obs = root.child("obstacles")) {
    if (!obs->is_array()) throw ConfigError("obstacles must be an array");
    for (std::size_t i = 0; i < obs->size(); ++i) {
      StrictObject o((*obs)[i], "obstacles[" + std::to_string(i) + "]");
      Obstacle ob;
      if (auto* ctr = o.child("center")) ob.center = detail::read_point(*ctr, o.where("center"));
      o.get("radius", ob.radius);
      if (auto* h = o.child("height")) ob.height = detail::read_clip(*h, o.where("height"));
      o.finish();
      c.obstacles.push_back(ob);
    }
  }
  if (auto* p = root.child("eve_centroid")) c.eve_centroid = detail::read_point(*p, "eve_centroid");
  if (auto* p = root.child("jammer_centroid")) c.jammer_centroid = detail::read_point(*p, "jammer_centroid");

  if (auto* r = root.child("radio")) {
    StrictObject o(*r, "radio");
    auto& x = c.radio;
    o.get("uplink_bandwidth_hz", x.uplink_bandwidth_hz);
    o.get("bs_bandwidth_hz", x.bs_bandwidth_hz);
    o.get("ue_power_w", x.ue_power_w);
    o.get("cuav_power_w", x.cuav_power_w);
    o.get("jammer_power_w", x.jammer_power_w);
    o.get("noise_cuav_w", x.noise_cuav_w);
    o.get("noise_bs_w", x.noise_bs_w);
    o.get("noise_eve_w", x.noise_eve_w);
    o.get("pathloss_constant", x.pathloss_constant);
    o.get("pathloss_exponent", x.pathloss_exponent);
    o.get("fading_spread", x.fading_spread);
    if (auto* n = o.child("nakagami")) {
      StrictObject s(*n, "radio.nakagami");
      s.get("ue_cuav", x.nakagami.ue_cuav);
      s.get("cuav_iuav", x.nakagami.cuav_iuav);
      s.get("iuav_bs", x.nakagami.iuav_bs);
      s.get("iuav_eve", x.nakagami.iuav_eve);
      s.get("jammer_iuav", x.nakagami.jammer_iuav);
      s.get("jammer_bs", x.nakagami.jammer_bs);
      s.get("cuav_eve", x.nakagami.cuav_eve);
      s.finish();
    }
    if (auto* n = o.child("csi_error")) {
      StrictObject s(*n, "radio.csi_error");
      s.get("cuav_eve", x.csi_error.cuav_eve);
      s.get("jammer_bs", x.csi_error.jammer_bs);
      s.get("jammer_iuav", x.csi_error.jammer_iuav);
      s.get("iuav_eve", x.csi_error.iuav_eve);
      s.finish();
    }
    o.get("eve_region_radius_m", x.eve_region_radius_m);
    o.get("jammer_region_radius_m", x.jammer_region_radius_m);
    o.get("eve_rate_cap", x.eve_rate_cap);
    o.get("worst_case_csi", x.worst_case_csi);
    o.get("eve_rate_bandwidth", x.eve_rate_bandwidth);
    o.get("phase_bits", x.phase_bits);
    o.get("min_link_distance_m", x.min_link_distance_m);
    o.finish();
  }
  if (auto* e = root.child("energy")) {
    StrictObject o(*e, "energy");
    auto& x = c.energy;
    o.get("max_energy_j", x.max_energy_j);
    o.get("cruise_speed_mps", x.cruise_speed_mps);
    o.get("c1", x.c1);
    o.get("c2", x.c2);
    o.get("c3", x.c3);
    o.get("tip_speed_mps", x.tip_speed_mps);
    o.get("induced_velocity_mps", x.induced_velocity_mps);
    o.get("switched_capacitance", x.switched_capacitance);
    o.get("cuav_cpu_hz", x.cuav_cpu_hz);
    o.get("bs_cpu_hz", x.bs_cpu_hz);
    o.get("min_separation_m", x.min_separation_m);
    o.get("coverage_radius_m", x.coverage_radius_m);
    o.get("coverage_radii_m", x.coverage_radii_m);
    o.finish();
  }
  if (auto* e = root.child("env")) {
    StrictObject o(*e, "env");
    auto& x = c.env;
    o.get("max_move_m", x.max_move_m);
    o.get("angle_bins", x.angle_bins);
    o.get("distance_bins", x.distance_bins);
    o.get("split_grid", x.split_grid);
    o.get("sensing_range_m", x.sensing_range_m);
    o.get("eta_energy_cuav", x.eta_energy_cuav);
    o.get("eta_energy_iuav", x.eta_energy_iuav);
    o.get("eta_eve_cap", x.eta_eve_cap);
    o.get("eta_separation", x.eta_separation);
    o.get("eta_overlap", x.eta_overlap);
    o.get("grace_slots", x.grace_slots);
    if (auto* clip = o.child("reward_clip")) x.reward_clip = detail::read_clip(*clip, "env.reward_clip");
    std::string rule;
    o.get("coverage_rule", rule);
    if (rule == "disjoint") x.coverage_rule = CoverageRule::disjoint;
    else if (rule == "overlap") x.coverage_rule = CoverageRule::overlap;
    else if (!rule.empty()) throw ConfigError("env.coverage_rule must be 'disjoint' or 'overlap'");
    o.get("cuav_altitude_m", x.cuav_altitude_m);
    o.get("iuav_altitude_m", x.iuav_altitude_m);
    o.finish();
  }
  if (auto* a = root.child("aoi")) {
    StrictObject o(*a, "aoi");
    o.get("threshold_slots", c.aoi.threshold_slots);
    o.get("exponent_cap", c.aoi.exponent_cap);
    o.get("normalize_violation", c.aoi.normalize_violation);
    o.finish();
  }
  if (auto* n = root.child("network")) {
    StrictObject o(*n, "network");
    auto& x = c.network;
    o.get("d_model", x.d_model);
    o.get("heads", x.heads);
    o.get("blocks", x.blocks);
    o.get("context", x.context);
    o.get("ff_width", x.ff_width);
    o.get("embed_hidden", x.embed_hidden);
    std::string gate;
    o.get("gate", gate);
    if (gate == "gru") x.gate = GateKind::gru;
    else if (gate == "residual") x.gate = GateKind::residual;
    else if (!gate.empty()) throw ConfigError("network.gate must be 'gru' or 'residual'");
    o.get("gate_bias", x.gate_bias);
    o.get("per_uav", x.per_uav);
    o.finish();
  }
  if (auto* l = root.child("learning")) {
    StrictObject o(*l, "learning");
    auto& x = c.learning;
    o.get("learning_rate", x.learning_rate);
    o.get("gamma", x.gamma);
    o.get("minibatch", x.minibatch);
    o.get("queue_capacity", x.queue_capacity);
    o.get("broadcast_interval", x.broadcast_interval);
    o.get("rho_bar", x.rho_bar);
    o.get("c_bar", x.c_bar);
    o.get("value_coef", x.value_coef);
    o.get("entropy_coef", x.entropy_coef);
    o.get("staleness_cap", x.staleness_cap);
    o.get("episodes", x.episodes);
    o.get("buffer_capacity", x.buffer_capacity);
    o.get("max_grad_norm", x.max_grad_norm);
    o.get("reward_scale", x.reward_scale);
    o.get("adam_beta1", x.adam_beta1);
    o.get("adam_beta2", x.adam_beta2);
    o.get("adam_eps", x.adam_eps);
    o.finish();
  }
  root.finish();
  return c;
}

inline json config_to_json(const ScenarioConfig& c) {
  auto clip = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json obstacles = json::array();
  for (const auto& o : c.obstacles)
    obstacles.push_back({{"center", {o.center.x, o.center.y}}, {"radius", o.radius}, {"height", clip(o.height)}});
  const auto& r = c.radio;
  const auto& e = c.energy;
  const auto& v = c.env;
  const auto& n = c.network;
  const auto& l = c.learning;
  return {
      {"area_side_m", c.area_side_m},
      {"num_ues", c.num_ues},
      {"num_cuavs", c.num_cuavs},
      {"num_iuavs", c.num_iuavs},
      {"irs_elements", c.irs_elements},
      {"slot_length_s", c.slot_length_s},
      {"horizon_slots", c.horizon_slots},
      {"ue_task",
       {{"data_bits", c.ue_task.data_bits},
        {"cycles_per_bit", c.ue_task.cycles_per_bit},
        {"arrival_rate", c.ue_task.arrival_rate}}},
      {"ue_weights", c.ue_weights},
      {"obstacles", obstacles},
      {"eve_centroid", {c.eve_centroid.x, c.eve_centroid.y}},
      {"jammer_centroid", {c.jammer_centroid.x, c.jammer_centroid.y}},
      {"seed", c.seed},
      {"radio",
       {{"uplink_bandwidth_hz", r.uplink_bandwidth_hz},
        {"bs_bandwidth_hz", r.bs_bandwidth_hz},
        {"ue_power_w", r.ue_power_w},
        {"cuav_power_w", r.cuav_power_w},
        {"jammer_power_w", r.jammer_power_w},
        {"noise_cuav_w", r.noise_cuav_w},
        {"noise_bs_w", r.noise_bs_w},
        {"noise_eve_w", r.noise_eve_w},
        {"pathloss_constant", r.pathloss_constant},
        {"pathloss_exponent", r.pathloss_exponent},
        {"fading_spread", r.fading_spread},
        {"nakagami",
         {{"ue_cuav", r.nakagami.ue_cuav},
          {"cuav_iuav", r.nakagami.cuav_iuav},
          {"iuav_bs", r.nakagami.iuav_bs},
          {"iuav_eve", r.nakagami.iuav_eve},
          {"jammer_iuav", r.nakagami.jammer_iuav},
          {"jammer_bs", r.nakagami.jammer_bs},
          {"cuav_eve", r.nakagami.cuav_eve}}},
        {"csi_error",
         {{"cuav_eve", r.csi_error.cuav_eve},
          {"jammer_bs", r.csi_error.jammer_bs},
          {"jammer_iuav", r.csi_error.jammer_iuav},
          {"iuav_eve", r.csi_error.iuav_eve}}},
        {"eve_region_radius_m", r.eve_region_radius_m},
        {"jammer_region_radius_m", r.jammer_region_radius_m},
        {"eve_rate_cap", r.eve_rate_cap},
        {"worst_case_csi", r.worst_case_csi},
        {"eve_rate_bandwidth", r.eve_rate_bandwidth},
        {"phase_bits", r.phase_bits},
        {"min_link_distance_m", r.min_link_distance_m}}},
      {"energy",
       {{"max_energy_j", e.max_energy_j},
        {"cruise_speed_mps", e.cruise_speed_mps},
        {"c1", e.c1},
        {"c2", e.c2},
        {"c3", e.c3},
        {"tip_speed_mps", e.tip_speed_mps},
        {"induced_velocity_mps", e.induced_velocity_mps},
        {"switched_capacitance", e.switched_capacitance},
        {"cuav_cpu_hz", e.cuav_cpu_hz},
        {"bs_cpu_hz", e.bs_cpu_hz},
        {"min_separation_m", e.min_separation_m},
        {"coverage_radius_m", e.coverage_radius_m},
        {"coverage_radii_m", e.coverage_radii_m}}},
      {"env",
       {{"max_move_m", v.max_move_m},
        {"angle_bins", v.angle_bins},
        {"distance_bins", v.distance_bins},
        {"split_grid", v.split_grid},
        {"sensing_range_m", v.sensing_range_m},
        {"eta_energy_cuav", v.eta_energy_cuav},
        {"eta_energy_iuav", v.eta_energy_iuav},
        {"eta_eve_cap", v.eta_eve_cap},
        {"eta_separation", v.eta_separation},
        {"eta_overlap", v.eta_overlap},
        {"grace_slots", v.grace_slots},
        {"reward_clip", clip(v.reward_clip)},
        {"coverage_rule", v.coverage_rule == CoverageRule::disjoint ? "disjoint" : "overlap"},
        {"cuav_altitude_m", v.cuav_altitude_m},
        {"iuav_altitude_m", v.iuav_altitude_m}}},
      {"aoi",
       {{"threshold_slots", c.aoi.threshold_slots},
        {"exponent_cap", c.aoi.exponent_cap},
        {"normalize_violation", c.aoi.normalize_violation}}},
      {"network",
       {{"d_model", n.d_model},
        {"heads", n.heads},
        {"blocks", n.blocks},
        {"context", n.context},
        {"ff_width", n.ff_width},
        {"embed_hidden", n.embed_hidden},
        {"gate", n.gate == GateKind::gru ? "gru" : "residual"},
        {"gate_bias", n.gate_bias},
        {"per_uav", n.per_uav}}},
      {"learning",
       {{"learning_rate", l.learning_rate},
        {"gamma", l.gamma},
        {"minibatch", l.minibatch},
        {"queue_capacity", l.queue_capacity},
        {"broadcast_interval", l.broadcast_interval},
        {"rho_bar", l.rho_bar},
        {"c_bar", l.c_bar},
        {"value_coef", l.value_coef},
        {"entropy_coef", l.entropy_coef},
        {"staleness_cap", l.staleness_cap},
        {"episodes", l.episodes},
        {"buffer_capacity", l.buffer_capacity},
        {"max_grad_norm", l.max_grad_norm},
        {"reward_scale", l.reward_scale},
        {"adam_beta1", l.adam_beta1},
        {"adam_beta2", l.adam_beta2},
        {"adam_eps", l.adam_eps}}},
  };
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

/// Hash of every field except the seed, so runs differing only in seed share it.
inline std::uint64_t config_hash(const ScenarioConfig& c) {
  json j = config_to_json(c);
  j.erase("seed");
  return fnv1a64(j.dump());
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << v;
  return out.str();
}

// ---------------------------------------------------------------------------
// World

struct Packet {
  double generated_at = 0.0;  // slots
  double remaining_bits = 0.0;
};

struct UserEquipment {
  Vec3 position;
  std::deque<Packet> queue;
  double queued_bits() const {
    double total = 0;
    for (const auto& p : queue) total += p.remaining_bits;
    return total;
  }
};

/// Energy debits of one UAV, kept as integer ticks of 2^-30 J so that
/// capacity - remaining == sum of debits holds exactly in any summation order.
class EnergyLedger {
 public:
  static constexpr double kTick = 0x1.0p-30;
  static constexpr double kMaxCapacity = 0x1.0p22;

  explicit EnergyLedger(double capacity = 0.0) : capacity_ticks_(to_ticks(capacity)) {}

  /// Records a debit and returns the amount actually charged (rounded to ticks).
  double debit(double joules) {
    if (!(joules >= 0) || !std::isfinite(joules)) throw ContractError("energy debit must be a finite nonnegative number");
    const std::int64_t ticks = to_ticks(joules);
    debits_.push_back(ticks);
    consumed_ticks_ += ticks;
    return static_cast<double>(ticks) * kTick;
  }
  double capacity() const { return static_cast<double>(capacity_ticks_) * kTick; }
  double consumed() const { return static_cast<double>(consumed_ticks_) * kTick; }
  double remaining() const { return static_cast<double>(capacity_ticks_ - consumed_ticks_) * kTick; }
  std::vector<double> debits() const {
    std::vector<double> out;
    out.reserve(debits_.size());
    for (auto t : debits_) out.push_back(static_cast<double>(t) * kTick);
    return out;
  }

  static double quantize(double joules) { return static_cast<double>(to_ticks(joules)) * kTick; }

 private:
  static std::int64_t to_ticks(double joules) { return static_cast<std::int64_t>(std::llround(joules / kTick)); }

  std::int64_t capacity_ticks_;
  std::int64_t consumed_ticks_ = 0;
  std::vector<std::int64_t> debits_;
};

enum class UavKind { cuav, iuav };

struct UavState {
  Vec3 position;
  UavKind kind = UavKind::cuav;
  double coverage_radius = 0.0;
  EnergyLedger ledger;

  double energy() const { return ledger.remaining(); }
};

struct Adversary {
  Vec3 centroid;  // estimated region center, known to the UAVs
  double radius = 0.0;
  Vec3 position;  // ground truth, hidden from the UAVs
};

struct WorldState {
  std::vector<UserEquipment> ues;
  std::vector<UavState> uavs;  // C-UAVs first, then I-UAVs
  int num_cuavs = 0;
  Vec3 base_station;
  Adversary eavesdropper;
  Adversary jammer;
  int slot = 0;

  int num_iuavs() const { return static_cast<int>(uavs.size()) - num_cuavs; }
  UavState& cuav(int n) { return uavs[static_cast<std::size_t>(n)]; }
  const UavState& cuav(int n) const { return uavs[static_cast<std::size_t>(n)]; }
  UavState& iuav(int p) { return uavs[static_cast<std::size_t>(num_cuavs + p)]; }
  const UavState& iuav(int p) const { return uavs[static_cast<std::size_t>(num_cuavs + p)]; }
};

namespace detail {

inline bool in_obstacle(const ScenarioConfig& c, Vec2 p) {
  for (const auto& o : c.obstacles)
    if (distance(p, o.center) < o.radius) return true;
  return false;
}

inline Vec3 sample_in_disc(Rng& rng, Vec2 center, double radius) {
  const double r = radius * std::sqrt(uniform01(rng));
  const double phi = 2.0 * M_PI * uniform01(rng);
  return {center.x + r * std::cos(phi), center.y + r * std::sin(phi), 0.0};
}

}  // namespace detail

/// Builds the initial world. UE layout depends only on config.seed; the hidden
/// eavesdropper/jammer positions are drawn from `episode_seed`.
inline WorldState build_world(const ScenarioConfig& c, std::uint64_t episode_seed) {
  require_valid(c);
  WorldState w;
  w.num_cuavs = c.num_cuavs;

  Rng layout = substream(c.seed, "layout");
  const double side = c.area_side_m;
  const double sd = side / 4.0;
  w.ues.resize(static_cast<std::size_t>(c.num_ues));
  for (auto& ue : w.ues) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000) throw ConfigError("obstacles leave no room for UE placement");
      const Vec2 p{side / 2 + sd * standard_normal(layout), side / 2 + sd * standard_normal(layout)};
      if (p.x < 0 || p.y < 0 || p.x > side || p.y > side || detail::in_obstacle(c, p)) continue;
      ue.position = {p.x, p.y, 0.0};
      break;
    }
  }

  for (int u = 0; u < c.num_uavs(); ++u) {
    UavState s;
    s.kind = u < c.num_cuavs ? UavKind::cuav : UavKind::iuav;
    s.position = {0.0, 0.0, s.kind == UavKind::cuav ? c.env.cuav_altitude_m : c.env.iuav_altitude_m};
    s.coverage_radius = c.coverage_radius(u);
    s.ledger = EnergyLedger(c.energy.max_energy_j);
    w.uavs.push_back(std::move(s));
  }

  Rng adv = substream(episode_seed, "adversaries");
  w.eavesdropper.centroid = {c.eve_centroid.x, c.eve_centroid.y, 0.0};
  w.eavesdropper.radius = c.radio.eve_region_radius_m;
  w.eavesdropper.position = detail::sample_in_disc(adv, c.eve_centroid, c.radio.eve_region_radius_m);
  w.jammer.centroid = {c.jammer_centroid.x, c.jammer_centroid.y, 0.0};
  w.jammer.radius = c.radio.jammer_region_radius_m;
  w.jammer.position = detail::sample_in_disc(adv, c.jammer_centroid, c.radio.jammer_region_radius_m);
  return w;
}

inline WorldState build_world(const ScenarioConfig& c) { return build_world(c, c.seed); }

}  // namespace skysim
