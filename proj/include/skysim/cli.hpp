#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skysim/env.hpp"
#include "skysim/error.hpp"
#include "skysim/gtr.hpp"
#include "skysim/learner.hpp"
#include "skysim/scenario.hpp"

#ifndef SKYSIM_VERSION
#define SKYSIM_VERSION "0.0.0-dev"
#endif

namespace skysim::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kCsvSchemaVersion = 1;

/// Set from a SIGINT handler; long-running commands poll it between units of work.
inline std::atomic<bool>& interrupt_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

/// Output could not be written (disk full, permissions).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unsupported CSV input; `line` is 1-based.
class CsvError : public ConfigError {
 public:
  CsvError(const std::string& source, int line, const std::string& what)
      : ConfigError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// ---------------------------------------------------------------------------
// CSV

/// Round-trippable decimal text for a double.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string num(long long v) { return std::to_string(v); }
inline std::string num(int v) { return std::to_string(v); }
inline std::string num(std::uint64_t v) { return std::to_string(v); }

inline std::string csv_preamble(const std::string& kind, const std::string& run) {
  return "# skysim-csv v" + std::to_string(kCsvSchemaVersion) + " kind=" + kind + " run=" + run;
}

/// Writes the versioned preamble, the header row, then one row per call.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::string& kind, const std::string& run, std::vector<std::string> columns)
      : path_(path), columns_(std::move(columns)), out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
    out_ << csv_preamble(kind, run) << "\n";
    write_line(columns_);
    check();
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_.size()) throw ContractError("csv row width does not match header of " + path_.string());
    write_line(cells);
    check();
  }

  void flush() {
    out_.flush();
    check();
  }

  const fs::path& path() const { return path_; }

 private:
  void write_line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  void check() {
    if (!out_) throw IoError("write failed for " + path_.string());
  }

  fs::path path_;
  std::vector<std::string> columns_;
  std::ofstream out_;
};

struct CsvTable {
  std::string source;
  std::string kind;
  std::string run;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;  // source line of each row

  std::optional<std::size_t> find(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }

  std::size_t column(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw CsvError(source, 2, "missing column '" + name + "'");
  }

  double number(std::size_t row, std::size_t col) const {
    const std::string& s = rows[row][col];
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw CsvError(source, lines[row], "not a number: '" + s + "'");
    return v;
  }

  double number(std::size_t row, const std::string& name) const { return number(row, column(name)); }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable parse_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  t.source = source;
  std::string line;
  if (!std::getline(in, line)) throw CsvError(source, 1, "empty file");
  std::istringstream pre(line);
  std::string hash, magic, version, kind, run;
  pre >> hash >> magic >> version >> kind >> run;
  if (hash != "#" || magic != "skysim-csv") throw CsvError(source, 1, "missing skysim-csv preamble");
  if (version != "v" + std::to_string(kCsvSchemaVersion))
    throw CsvError(source, 1, "unsupported schema version '" + version + "'");
  if (kind.rfind("kind=", 0) != 0 || run.rfind("run=", 0) != 0) throw CsvError(source, 1, "malformed preamble");
  t.kind = kind.substr(5);
  t.run = run.substr(4);
  if (!std::getline(in, line) || line.empty()) throw CsvError(source, 2, "missing header row");
  t.header = split_csv_line(line);
  int n = 2;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw CsvError(source, n,
                     "expected " + std::to_string(t.header.size()) + " fields, found " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.lines.push_back(n);
  }
  return t;
}

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> c{"episode",          "chi",
                                          "Q",                "mean_secrecy",
                                          "energy_violations", "eve_cap_violations",
                                          "separation_violations", "overlap_violations",
                                          "mean_return",      "packets_generated",
                                          "packets_collected"};
  return c;
}

inline std::vector<std::string> metrics_row(int episode, const EpisodeMetrics& m) {
  return {num(episode),
          num(m.chi),
          num(m.q),
          num(m.mean_secrecy),
          num(m.energy_violations),
          num(m.eve_cap_violations),
          num(m.separation_violations),
          num(m.overlap_violations),
          num(m.mean_return),
          num(m.packets_generated),
          num(m.packets_collected)};
}

inline const std::vector<std::string>& trajectory_columns() {
  static const std::vector<std::string> c{"episode", "slot", "uav_id", "kind", "x", "y", "z", "energy"};
  return c;
}

inline const std::vector<std::string>& training_columns() {
  static const std::vector<std::string> c{"update", "version", "L_policy", "L_value", "mean_return", "buffers_dropped"};
  return c;
}

inline const std::vector<std::string>& sweep_columns() {
  static const std::vector<std::string> c{"axis", "value", "seed", "episodes", "chi", "Q", "mean_secrecy", "mean_return"};
  return c;
}

// ---------------------------------------------------------------------------
// Run manifest

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string run_id;
  std::string command;
  std::string config_path;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string code_version = SKYSIM_VERSION;
  std::string started;
  std::string finished;
  std::string status = "running";  // running | completed | interrupted | failed
  std::string error;
  std::string resumed_from;
  std::vector<std::string> outputs;  // relative to the run directory

  nlohmann::json to_json() const {
    return {{"format", "skysim-run-v1"}, {"run_id", run_id},     {"command", command},
            {"config_path", config_path}, {"config_hash", config_hash}, {"seed", seed},
            {"code_version", code_version}, {"started", started}, {"finished", finished},
            {"status", status},           {"error", error},       {"resumed_from", resumed_from},
            {"outputs", outputs}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "skysim-run-v1") throw ConfigError("unknown run manifest format");
    RunManifest m;
    m.run_id = j.at("run_id");
    m.command = j.at("command");
    m.config_path = j.at("config_path");
    m.config_hash = j.at("config_hash");
    m.seed = j.at("seed");
    m.code_version = j.at("code_version");
    m.started = j.at("started");
    m.finished = j.at("finished");
    m.status = j.at("status");
    m.error = j.at("error");
    m.resumed_from = j.at("resumed_from");
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    return m;
  }
};

inline RunManifest load_manifest(const fs::path& run_dir) {
  std::ifstream in(run_dir / "manifest.json");
  if (!in) throw ConfigError("cannot open " + (run_dir / "manifest.json").string());
  return RunManifest::from_json(nlohmann::json::parse(in));
}

/// A run directory with its manifest, rewritten whenever an output is added
/// and on finalization.
class Run {
 public:
  Run(const fs::path& root, RunManifest manifest) : dir_(root / manifest.run_id), m_(std::move(manifest)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create " + dir_.string() + ": " + ec.message());
    m_.started = utc_now();
    save();
  }

  const fs::path& dir() const { return dir_; }
  const RunManifest& manifest() const { return m_; }
  const std::string& id() const { return m_.run_id; }

  fs::path output(const std::string& name) {
    if (std::find(m_.outputs.begin(), m_.outputs.end(), name) == m_.outputs.end()) {
      m_.outputs.push_back(name);
      save();
    }
    fs::create_directories((dir_ / name).parent_path());
    return dir_ / name;
  }

  void finish(const std::string& status, const std::string& error = {}) {
    m_.status = status;
    m_.error = error;
    m_.finished = utc_now();
    save();
  }

 private:
  void save() const {
    const auto tmp = dir_ / "manifest.json.tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << m_.to_json().dump(2) << "\n";
      out.flush();
      if (!out) throw IoError("cannot write run manifest in " + dir_.string());
    }
    fs::rename(tmp, dir_ / "manifest.json");
  }

  fs::path dir_;
  RunManifest m_;
};

// ---------------------------------------------------------------------------
// SVG plots

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct Panel {
  std::string title;
  std::string xlabel;
  std::vector<Series> series;
};

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Panels stacked vertically; each series becomes one polyline. Panels
/// without data still get axes.
inline std::string render_svg(const std::vector<Panel>& panels, bool equal_aspect = false) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b"};
  const double W = 640, H = 360, ml = 70, mr = 140, mt = 30, mb = 45;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H * panels.size()
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t k = 0; k < panels.size(); ++k) {
    const auto& p = panels[k];
    const double oy = H * static_cast<double>(k);
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& se : p.series)
      for (std::size_t i = 0; i < se.x.size(); ++i) {
        if (!std::isfinite(se.x[i]) || !std::isfinite(se.y[i])) continue;
        x0 = std::min(x0, se.x[i]);
        x1 = std::max(x1, se.x[i]);
        y0 = std::min(y0, se.y[i]);
        y1 = std::max(y1, se.y[i]);
      }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x0 -= 0.5, x1 += 0.5;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double pw = W - ml - mr, ph = H - mt - mb;
    double sx = pw / (x1 - x0), sy = ph / (y1 - y0);
    if (equal_aspect) sx = sy = std::min(sx, sy);
    auto X = [&](double v) { return ml + (v - x0) * sx; };
    auto Y = [&](double v) { return oy + mt + ph - (v - y0) * sy; };

    s << "<g class=\"panel\">\n";
    s << "<text x=\"" << ml << "\" y=\"" << oy + 18 << "\" font-weight=\"bold\">" << xml_escape(p.title) << "</text>\n";
    s << "<rect class=\"axes\" x=\"" << ml << "\" y=\"" << oy + mt << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    s << "<text x=\"" << ml << "\" y=\"" << oy + mt + ph + 16 << "\">" << num(x0) << "</text>\n";
    s << "<text x=\"" << ml + pw << "\" y=\"" << oy + mt + ph + 16 << "\" text-anchor=\"end\">" << num(x1)
      << "</text>\n";
    s << "<text x=\"" << ml + pw / 2 << "\" y=\"" << oy + mt + ph + 34 << "\" text-anchor=\"middle\">"
      << xml_escape(p.xlabel) << "</text>\n";
    s << "<text x=\"" << ml - 6 << "\" y=\"" << oy + mt + ph << "\" text-anchor=\"end\">" << num(y0) << "</text>\n";
    s << "<text x=\"" << ml - 6 << "\" y=\"" << oy + mt + 10 << "\" text-anchor=\"end\">" << num(y1) << "</text>\n";
    for (std::size_t i = 0; i < p.series.size(); ++i) {
      const auto& se = p.series[i];
      const char* color = palette[i % std::size(palette)];
      s << "<polyline data-series=\"" << xml_escape(se.label) << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t j = 0; j < se.x.size(); ++j)
        if (std::isfinite(se.x[j]) && std::isfinite(se.y[j])) s << X(se.x[j]) << "," << Y(se.y[j]) << " ";
      s << "\"/>\n";
      s << "<text x=\"" << W - mr + 8 << "\" y=\"" << oy + mt + 14 * (i + 1) << "\" fill=\"" << color << "\">"
        << xml_escape(se.label) << "</text>\n";
    }
    s << "</g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline std::vector<Panel> panels_for(const CsvTable& t) {
  auto col = [&](const std::string& name) {
    const auto c = t.column(name);
    std::vector<double> v;
    for (std::size_t r = 0; r < t.rows.size(); ++r) v.push_back(t.number(r, c));
    return v;
  };
  auto line_panel = [&](const std::string& xname, const std::string& yname) {
    return Panel{yname, xname, {Series{yname, col(xname), col(yname)}}};
  };

  if (t.kind == "metrics") return {line_panel("episode", "chi"), line_panel("episode", "Q")};
  if (t.kind == "training") return {line_panel("update", "mean_return"), line_panel("update", "L_policy"),
                                    line_panel("update", "L_value")};
  if (t.kind == "trajectory") {
    const auto ep = col("episode"), uav = col("uav_id"), x = col("x"), y = col("y");
    std::map<std::pair<int, int>, Series> paths;
    for (std::size_t r = 0; r < x.size(); ++r) {
      auto& se = paths[{static_cast<int>(ep[r]), static_cast<int>(uav[r])}];
      se.label = "ep " + std::to_string(static_cast<int>(ep[r])) + " uav " + std::to_string(static_cast<int>(uav[r]));
      se.x.push_back(x[r]);
      se.y.push_back(y[r]);
    }
    Panel p{"UAV trajectories", "x (m)", {}};
    for (auto& [key, se] : paths) p.series.push_back(std::move(se));
    return {p};
  }
  if (t.kind == "sweep") {
    t.column("axis");
    const auto value = col("value");
    std::vector<Panel> out;
    for (const std::string metric : {"chi", "Q", "mean_secrecy"}) {
      const auto y = col(metric);
      std::map<double, std::pair<double, int>> mean;
      for (std::size_t r = 0; r < y.size(); ++r) {
        mean[value[r]].first += y[r];
        mean[value[r]].second += 1;
      }
      Series se{metric, {}, {}};
      for (const auto& [v, acc] : mean) {
        se.x.push_back(v);
        se.y.push_back(acc.first / acc.second);
      }
      out.push_back(Panel{metric + " vs fleet size", t.rows.empty() ? "value" : t.rows.front()[t.column("axis")],
                          {std::move(se)}});
    }
    return out;
  }
  throw CsvError(t.source, 1, "no plot defined for kind '" + t.kind + "'");
}

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  bool sync = false;
  std::optional<int> episodes;
  std::string out;  // output root; empty = $SKYSIM_OUT, else "runs"
  int ckpt_every = 0;
  std::string checkpoint;
  bool greedy = false;
  // sweep
  std::string axis = "num_cuavs";
  std::vector<int> values;
  int seeds = 1;
  std::string policy = "trained";  // random | trained
  std::optional<int> train_episodes;
  // plot
  std::vector<std::string> inputs;
  std::ostream* log = &std::cout;
};

inline fs::path output_root(const CommandOptions& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("SKYSIM_OUT"); env && *env) return env;
  return "runs";
}

inline ScenarioConfig load_run_config(const CommandOptions& o) {
  if (o.config_path.empty()) throw ConfigError("--config is required");
  ScenarioConfig c = load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  require_valid(c);
  return c;
}

inline std::string config_hash_hex(const ScenarioConfig& c) { return hex64(config_hash(c)); }

/// Loads a checkpoint and refuses it when it was trained under a different configuration.
inline Checkpoint load_matching_checkpoint(const std::string& path, const ScenarioConfig& c, const PolicyLayout& layout) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config_hash != config_hash_hex(c))
    throw ConfigError("checkpoint " + path + " was written for config " + ck.config_hash + ", current config is " +
                      config_hash_hex(c));
  if (!layout.compatible(ck.sets)) throw ConfigError("checkpoint " + path + " does not match the network layout");
  return ck;
}

inline std::string run_id(const std::string& command, const ScenarioConfig& c, const std::string& tag = {}) {
  return command + "-" + config_hash_hex(c).substr(0, 8) + "-s" + std::to_string(c.seed) + (tag.empty() ? "" : "-" + tag);
}

struct Interrupted {};

/// Evaluates `episodes` episodes, streaming per-episode metrics and per-slot
/// UAV states into the given writers.
inline std::vector<EpisodeMetrics> simulate_into(const ScenarioConfig& c, const PolicyLayout* layout,
                                                 SnapshotPtr snapshot, int episodes, bool greedy, CsvWriter& metrics,
                                                 CsvWriter* trajectory) {
  return evaluate(c, layout, std::move(snapshot), episodes, c.seed, greedy, [&](int e, const Environment& env) {
    if (trajectory)
      for (int u = 0; u < env.num_uavs(); ++u) {
        const auto& s = env.world().uavs[static_cast<std::size_t>(u)];
        trajectory->row({num(e), num(env.slot()), num(u), s.kind == UavKind::cuav ? "C" : "I", num(s.position.x),
                         num(s.position.y), num(s.position.z), num(s.energy())});
      }
    if (env.done()) {
      metrics.row(metrics_row(e, env.metrics()));
      metrics.flush();
      if (interrupt_flag().load()) throw Interrupted{};
    }
  });
}

/// Runs `body` inside a run directory, translating failures into manifest
/// status and exit codes.
template <class Body>
int run_guarded(std::optional<Run>& run, std::ostream& log, Body&& body) {
  try {
    body();
    if (run) run->finish(interrupt_flag().load() ? "interrupted" : "completed");
    if (run) log << run->dir().string() << "\n";
    return interrupt_flag().load() ? kExitRuntime : kExitOk;
  } catch (const Interrupted&) {
    if (run) run->finish("interrupted");
    log << "interrupted\n";
    return kExitRuntime;
  } catch (const ConfigError& e) {
    if (run) run->finish("failed", e.what());
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    try {
      if (run) run->finish("failed", e.what());
    } catch (const std::exception&) {
    }
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

inline int cmd_simulate(const CommandOptions& o, bool require_checkpoint = false) {
  std::optional<Run> run;
  return run_guarded(run, *o.log, [&] {
    const ScenarioConfig c = load_run_config(o);
    const int episodes = o.episodes.value_or(50);
    if (episodes < 0) throw ConfigError("--episodes must be >= 0");
    if (require_checkpoint && o.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint");
    std::optional<PolicyLayout> layout;
    SnapshotPtr snapshot;
    if (!o.checkpoint.empty()) {
      layout.emplace(c);
      auto ck = load_matching_checkpoint(o.checkpoint, c, *layout);
      auto s = std::make_shared<PolicySnapshot>();
      s->version = ck.version;
      s->sets = std::move(ck.sets);
      snapshot = std::move(s);
    }
    const std::string command = require_checkpoint ? "evaluate" : "simulate";
    RunManifest m;
    m.run_id = run_id(command, c, snapshot ? "v" + std::to_string(snapshot->version) : "random");
    m.command = command;
    m.config_path = o.config_path;
    m.config_hash = config_hash_hex(c);
    m.seed = c.seed;
    m.resumed_from = o.checkpoint;
    run.emplace(output_root(o), m);
    CsvWriter metrics(run->output("metrics.csv"), "metrics", run->id(), metrics_columns());
    CsvWriter traj(run->output("trajectory.csv"), "trajectory", run->id(), trajectory_columns());
    simulate_into(c, layout ? &*layout : nullptr, snapshot, episodes, o.greedy, metrics, &traj);
    metrics.flush();
    traj.flush();
  });
}

inline int cmd_train(const CommandOptions& o) {
  std::optional<Run> run;
  return run_guarded(run, *o.log, [&] {
    const ScenarioConfig c = load_run_config(o);
    if (o.workers < 1) throw ConfigError("--workers must be >= 1");
    if (o.ckpt_every < 0) throw ConfigError("--ckpt-every must be >= 0");
    const PolicyLayout layout(c);
    std::vector<ParameterSet> params;
    std::uint64_t version = 0;
    if (!o.checkpoint.empty()) {
      auto ck = load_matching_checkpoint(o.checkpoint, c, layout);
      params = std::move(ck.sets);
      version = ck.version;
    } else {
      params = layout.init(c.seed);
    }
    RunManifest m;
    m.run_id = run_id("train", c, version ? "from-v" + std::to_string(version) : "");
    m.command = "train";
    m.config_path = o.config_path;
    m.config_hash = config_hash_hex(c);
    m.seed = c.seed;
    m.resumed_from = o.checkpoint;
    run.emplace(output_root(o), m);

    Learner learner(c, layout, std::move(params), version);
    CsvWriter log(run->output("training.csv"), "training", run->id(), training_columns());
    auto save = [&](const std::string& name) {
      const std::string base = "checkpoints/" + name;
      run->output(base + ".json");
      run->output(base + ".bin");
      save_checkpoint((run->dir() / base).string(),
                      Checkpoint{config_hash_hex(c), learner.version(), learner.params()});
    };

    TrainingOptions opt;
    opt.workers = o.workers;
    opt.sync = o.sync;
    opt.episodes = o.episodes.value_or(0);
    opt.seed = c.seed;
    opt.should_stop = [] { return interrupt_flag().load(); };
    opt.on_update = [&](const UpdateStats& st, double mean_return, const Learner&) {
      log.row({num(st.update), num(st.version), num(st.loss.policy), num(st.loss.value), num(mean_return),
               num(st.buffers_dropped)});
      if (o.ckpt_every > 0 && st.update % static_cast<std::uint64_t>(o.ckpt_every) == 0)
        save("ckpt-v" + std::to_string(st.version));
    };
    const auto res = train(c, layout, learner, opt);
    log.flush();
    save("final");
    *o.log << "episodes " << res.episodes << " updates " << res.updates << " version " << res.version << "\n";
  });
}

inline int cmd_sweep(const CommandOptions& o) {
  std::optional<Run> run;
  return run_guarded(run, *o.log, [&] {
    const ScenarioConfig base = load_run_config(o);
    if (o.axis != "num_cuavs" && o.axis != "num_iuavs") throw ConfigError("--axis must be num_cuavs or num_iuavs");
    if (o.values.empty()) throw ConfigError("--values must list at least one value");
    if (!std::is_sorted(o.values.begin(), o.values.end())) throw ConfigError("--values must be sorted");
    if (o.policy != "random" && o.policy != "trained") throw ConfigError("--policy must be random or trained");
    if (o.seeds < 1) throw ConfigError("--seeds must be >= 1");
    const int episodes = o.episodes.value_or(50);

    RunManifest m;
    m.run_id = run_id("sweep", base, o.axis + "-" + o.policy);
    m.command = "sweep";
    m.config_path = o.config_path;
    m.config_hash = config_hash_hex(base);
    m.seed = base.seed;
    run.emplace(output_root(o), m);
    CsvWriter agg(run->output("sweep.csv"), "sweep", run->id(), sweep_columns());

    for (int v : o.values) {
      for (int k = 0; k < o.seeds; ++k) {
        ScenarioConfig c = base;
        (o.axis == "num_cuavs" ? c.num_cuavs : c.num_iuavs) = v;
        c.seed = base.seed + static_cast<std::uint64_t>(k);
        require_valid(c);
        const PolicyLayout layout(c);
        SnapshotPtr snapshot;
        if (o.policy == "trained") {
          Learner learner(c, layout, layout.init(c.seed));
          TrainingOptions opt;
          opt.workers = o.workers;
          opt.sync = o.sync;
          opt.episodes = o.train_episodes.value_or(0);
          opt.seed = c.seed;
          opt.should_stop = [] { return interrupt_flag().load(); };
          train(c, layout, learner, opt);
          if (interrupt_flag().load()) throw Interrupted{};
          snapshot = learner.snapshot();
        }
        const std::string name = "metrics-" + o.axis + "-" + std::to_string(v) + "-s" + std::to_string(c.seed) + ".csv";
        CsvWriter per(run->output(name), "metrics", run->id(), metrics_columns());
        const auto ms = simulate_into(c, snapshot ? &layout : nullptr, snapshot, episodes, o.greedy, per, nullptr);
        per.flush();
        double chi = 0, q = 0, sec = 0, ret = 0;
        for (const auto& e : ms) {
          chi += e.chi;
          q += e.q;
          sec += e.mean_secrecy;
          ret += e.mean_return;
        }
        const double n = ms.empty() ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(ms.size());
        agg.row({o.axis, num(v), num(c.seed), num(episodes), num(chi / n), num(q / n), num(sec / n), num(ret / n)});
        agg.flush();
        *o.log << o.axis << "=" << v << " seed " << c.seed << " chi " << chi / n << " Q " << q / n << "\n";
      }
    }
  });
}

inline int cmd_plot(const CommandOptions& o) {
  std::optional<Run> run;
  return run_guarded(run, *o.log, [&] {
    if (o.inputs.empty()) throw ConfigError("plot needs at least one CSV path");
    std::vector<std::pair<std::string, std::vector<Panel>>> figures;
    std::string joined;
    for (const auto& path : o.inputs) {
      const auto table = read_csv(path);
      figures.emplace_back(fs::path(path).stem().string(), panels_for(table));
      joined += table.run + "|" + path + ";";
    }
    RunManifest m;
    m.run_id = "plot-" + hex64(fnv1a64(joined)).substr(0, 8);
    m.command = "plot";
    run.emplace(output_root(o), m);
    for (std::size_t i = 0; i < figures.size(); ++i) {
      const auto& [stem, panels] = figures[i];
      const bool spatial = panels.size() == 1 && panels.front().xlabel == "x (m)";
      std::ofstream out(run->output(std::to_string(i) + "-" + stem + ".svg"), std::ios::trunc);
      out << render_svg(panels, spatial);
      out.flush();
      if (!out) throw IoError("failed writing plot for " + o.inputs[i]);
    }
  });
}

}  // namespace skysim::cli
