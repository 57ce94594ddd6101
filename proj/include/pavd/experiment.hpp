#pragma once

// Experiment orchestration: configuration, parallel replicates with
// per-replicate RNG streams, per-grid-point summaries and result emission.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pavd/cmj.hpp"
#include "pavd/discrete.hpp"
#include "pavd/error.hpp"
#include "pavd/malthus.hpp"
#include "pavd/random.hpp"
#include "pavd/rates.hpp"
#include "pavd/stats.hpp"

namespace pavd {

enum class Mode { discrete, cmj };

inline std::string_view to_string(Mode m) { return m == Mode::discrete ? "discrete" : "cmj"; }

struct OutputPaths {
  std::optional<std::string> csv;          // raw per-replicate rows
  std::optional<std::string> summary_csv;  // per-grid-point table
  std::optional<std::string> json;
  std::optional<std::string> plot_dir;
};

struct ExperimentConfig {
  nlohmann::json model_json;
  std::shared_ptr<const RateModel> model;
  Mode mode = Mode::discrete;
  std::vector<std::uint64_t> n_grid;  // chain index n (state T_n)
  std::vector<double> t_grid;         // cmj only: calendar times
  std::uint64_t replicates = 100;
  std::optional<std::uint64_t> min_survivors;
  std::uint64_t max_replicates = 100000;
  std::uint64_t base_seed = 0;
  bool condition_on_survival = true;
  std::uint64_t observer_stride = 0;
  std::optional<double> r_slope;  // r(t) = r_slope * t in the K_alpha centering
  OutputPaths output;

  bool time_grid() const { return !t_grid.empty(); }
  std::size_t grid_size() const { return time_grid() ? t_grid.size() : n_grid.size(); }
  double grid_value(std::size_t i) const { return time_grid() ? t_grid[i] : static_cast<double>(n_grid[i]); }
};

namespace detail {

inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// Line of the first occurrence of "key" in the source, for diagnostics.
inline std::string at_key(const std::string& text, const std::string& key) {
  const auto pos = text.find("\"" + key + "\"");
  if (pos == std::string::npos) return "";
  return " (line " + std::to_string(line_col(text, pos).first) + ")";
}

}  // namespace detail

// Parses an experiment config from JSON text; `base_dir` resolves "model_file"
// and relative output paths.
inline ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0);
    throw Error(Errc::parse_error, "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                                       e.what());
  }
  auto fail = [&](const std::string& key, const std::string& msg) -> void {
    throw Error(Errc::parse_error, "field '" + key + "'" + detail::at_key(text, key) + ": " + msg);
  };
  if (!j.is_object()) throw Error(Errc::parse_error, "line 1: config must be a JSON object");
  static const std::vector<std::string> allowed = {
      "name", "model", "model_file", "mode", "n_grid", "t_grid", "replicates", "min_survivors",
      "max_replicates", "base_seed", "condition_on_survival", "observer_stride", "r_slope", "output"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) fail(key, "unknown key");
  }

  ExperimentConfig cfg;
  if (j.contains("model") == j.contains("model_file")) fail("model", "exactly one of 'model' and 'model_file' is required");
  if (j.contains("model")) {
    cfg.model_json = j.at("model");
  } else {
    if (!j.at("model_file").is_string()) fail("model_file", "expected a string");
    const auto path = base_dir / j.at("model_file").get<std::string>();
    std::ifstream in(path);
    if (!in) fail("model_file", "cannot open " + path.string());
    try {
      cfg.model_json = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      fail("model_file", path.string() + ": " + e.what());
    }
  }
  try {
    cfg.model = std::make_shared<const RateModel>(model_from_json(cfg.model_json));
  } catch (const Error& e) {
    fail(j.contains("model") ? "model" : "model_file", e.what());
  }

  if (j.contains("mode")) {
    const auto& m = j.at("mode");
    if (!m.is_string() || (m != "discrete" && m != "cmj")) fail("mode", "expected \"discrete\" or \"cmj\"");
    cfg.mode = m == "discrete" ? Mode::discrete : Mode::cmj;
  }

  auto uint_field = [&](const char* key) -> std::uint64_t {
    const auto& v = j.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_float() && v.get<double>() >= 0.0 && std::floor(v.get<double>()) == v.get<double>() &&
        v.get<double>() < 1.8e19) {
      return static_cast<std::uint64_t>(v.get<double>());
    }
    fail(key, "expected a non-negative integer");
    return 0;
  };

  if (j.contains("n_grid") == j.contains("t_grid")) fail("n_grid", "exactly one of 'n_grid' and 't_grid' is required");
  if (j.contains("n_grid")) {
    const auto& g = j.at("n_grid");
    if (!g.is_array() || g.empty()) fail("n_grid", "expected a nonempty array");
    for (const auto& v : g) {
      if (!v.is_number() || v.get<double>() < 1.0 || std::floor(v.get<double>()) != v.get<double>()) {
        fail("n_grid", "entries must be positive integers");
      }
      cfg.n_grid.push_back(static_cast<std::uint64_t>(v.get<double>()));
      if (cfg.n_grid.size() > 1 && cfg.n_grid.back() <= cfg.n_grid[cfg.n_grid.size() - 2]) {
        fail("n_grid", "must be strictly increasing");
      }
    }
  } else {
    if (cfg.mode != Mode::cmj) fail("t_grid", "only available in cmj mode");
    const auto& g = j.at("t_grid");
    if (!g.is_array() || g.empty()) fail("t_grid", "expected a nonempty array");
    for (const auto& v : g) {
      if (!v.is_number() || !(v.get<double>() >= 0.0)) fail("t_grid", "entries must be non-negative numbers");
      cfg.t_grid.push_back(v.get<double>());
      if (cfg.t_grid.size() > 1 && !(cfg.t_grid.back() > cfg.t_grid[cfg.t_grid.size() - 2])) {
        fail("t_grid", "must be strictly increasing");
      }
    }
  }

  if (j.contains("replicates")) {
    cfg.replicates = uint_field("replicates");
    if (cfg.replicates < 1) fail("replicates", "must be >= 1");
  }
  if (j.contains("min_survivors")) cfg.min_survivors = uint_field("min_survivors");
  if (j.contains("max_replicates")) cfg.max_replicates = uint_field("max_replicates");
  if (cfg.max_replicates < cfg.replicates) fail("max_replicates", "must be >= replicates");
  if (j.contains("base_seed")) cfg.base_seed = uint_field("base_seed");
  if (j.contains("condition_on_survival")) {
    if (!j.at("condition_on_survival").is_boolean()) fail("condition_on_survival", "expected a boolean");
    cfg.condition_on_survival = j.at("condition_on_survival").get<bool>();
  }
  if (j.contains("observer_stride")) cfg.observer_stride = uint_field("observer_stride");
  if (cfg.observer_stride == 0 && !cfg.n_grid.empty()) cfg.observer_stride = std::max<std::uint64_t>(1, cfg.n_grid.back() / 100);
  if (j.contains("r_slope")) {
    if (!j.at("r_slope").is_number()) fail("r_slope", "expected a number");
    cfg.r_slope = j.at("r_slope").get<double>();
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    if (!o.is_object()) fail("output", "expected an object");
    for (const auto& [key, v] : o.items()) {
      if (!v.is_string()) fail("output", "'" + key + "' must be a string");
      const auto p = (base_dir / v.get<std::string>()).string();
      if (key == "csv") {
        cfg.output.csv = p;
      } else if (key == "summary_csv") {
        cfg.output.summary_csv = p;
      } else if (key == "json") {
        cfg.output.json = p;
      } else if (key == "plot_dir") {
        cfg.output.plot_dir = p;
      } else {
        fail("output", "unknown key '" + key + "'");
      }
    }
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.parent_path());
}

// ---------------------------------------------------------------------------
// Running

struct ObservationRow {
  std::uint64_t replicate = 0;
  std::uint64_t n = 0;
  bool survived = false;
  bool grid_point = false;
  std::size_t grid_index = 0;
  std::optional<Observables> obs;
  // cmj only
  std::optional<double> t, tau_n, O_cont, I_cont, W_hat;
};

struct MomentSummary {
  std::optional<double> mean, sd, se;
};

struct GridSummary {
  double x = 0.0;  // n or t
  std::uint64_t replicates = 0;
  std::uint64_t survivors = 0;  // alive at this grid point
  std::uint64_t used = 0;       // replicates entering the estimates
  double survival_fraction = 0.0;
  MomentSummary log_O_over_log_n, log_I_over_log_n, maxdeg_over_log_n, maxdeg_all_over_log_n, alive_fraction;
  MomentSummary log_O_normalized, log_I_normalized, maxdeg_phi1_normalized;
  std::optional<double> median_I_over_O;
  MomentSummary O_cont_over_t, I_cont_over_t, W_hat;
};

struct ExperimentSummary {
  ExperimentConfig config;
  RegimeReport report;
  std::optional<MalthusianSolution> solution;
  std::optional<std::string> malthus_error;
  PredictedAsymptotics predicted;
  std::optional<std::string> predicted_error;
  std::uint64_t replicates_run = 0;
  bool interrupted = false;
  std::vector<GridSummary> grid;
  std::optional<double> persistence_kendall_tau;
  std::optional<bool> median_ratio_strictly_increasing;
  std::vector<ObservationRow> rows;  // sorted by (replicate, n)
};

// Set from a signal handler to stop early; completed replicates are still summarized.
inline std::atomic<bool>& interrupt_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline unsigned worker_count() {
  if (const char* env = std::getenv("PAVD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {

inline void fill_cmj(ObservationRow& r, const BPState& s, std::optional<double> lambda) {
  r.t = s.t();
  r.tau_n = s.tau().empty() ? 0.0 : s.tau().back();
  if (s.extinct()) return;
  const auto c = s.continuous_observables(lambda.value_or(0.0));
  r.O_cont = c.O_cont;
  r.I_cont = c.I_cont;
  if (lambda) r.W_hat = c.W_hat;
}

inline std::vector<ObservationRow> run_replicate(const ExperimentConfig& cfg, std::uint64_t rep,
                                                 std::optional<double> lambda) {
  auto rng = Rng::for_stream(cfg.base_seed, rep);
  std::vector<ObservationRow> out;
  const std::uint64_t stride = cfg.observer_stride;
  if (cfg.mode == Mode::discrete) {
    TreeState s(cfg.model);
    std::size_t gi = 0;
    std::uint64_t next_stride = stride ? stride : cfg.n_grid.back();
    while (gi < cfg.n_grid.size()) {
      const std::uint64_t target = std::min(cfg.n_grid[gi], next_stride);
      s.advance_to(target, rng);
      const bool is_grid = target == cfg.n_grid[gi];
      ObservationRow r;
      r.replicate = rep;
      r.n = target;
      r.survived = !s.extinct();
      r.grid_point = is_grid;
      r.grid_index = gi;
      r.obs = s.observe();
      out.push_back(r);
      if (target == next_stride) next_stride += stride ? stride : cfg.n_grid.back();
      if (is_grid) ++gi;
      if (interrupt_flag().load(std::memory_order_relaxed)) break;
    }
    return out;
  }
  BPState s(cfg.model);
  s.record_tau(true);
  s.init(rng);
  for (std::size_t gi = 0; gi < cfg.grid_size(); ++gi) {
    if (cfg.time_grid()) {
      s.run_until_time(cfg.t_grid[gi], rng);
    } else if (cfg.n_grid[gi] > 1) {
      s.run_until_events(cfg.n_grid[gi] - 1, rng);
    }
    ObservationRow r;
    r.replicate = rep;
    r.n = s.N() + 1;
    r.survived = !s.extinct();
    r.grid_point = true;
    r.grid_index = gi;
    r.obs = s.discrete_observables();
    fill_cmj(r, s, lambda);
    out.push_back(r);
    if (interrupt_flag().load(std::memory_order_relaxed)) break;
  }
  return out;
}

inline MomentSummary moments(const std::vector<double>& v) {
  MomentSummary m;
  if (v.empty()) return m;
  m.mean = stats::mean(v);
  m.sd = stats::sd(v);
  m.se = stats::standard_error(v);
  return m;
}

}  // namespace detail

inline ExperimentSummary run_experiment(const ExperimentConfig& cfg) {
  ExperimentSummary sum;
  sum.config = cfg;
  sum.report = assumption_report(*cfg.model);
  if (sum.report.non_explosion == Verdict::fails) {
    throw Error(Errc::invalid_model, "the model explodes: sum 1/(b+d) converges");
  }
  try {
    sum.solution = solve_malthusian(*cfg.model);
  } catch (const Error& e) {
    sum.malthus_error = e.what();
  }
  std::shared_ptr<const DerivedSequences> seqs = std::make_shared<const DerivedSequences>(*cfg.model);
  if (sum.solution) {
    try {
      std::function<double(double)> r;
      if (cfg.r_slope) r = [c = *cfg.r_slope](double t) { return c * t; };
      sum.predicted = predicted_constants(*sum.solution, seqs, sum.report, r);
    } catch (const Error& e) {
      sum.predicted_error = e.what();
    }
  }
  std::optional<double> lambda;
  if (sum.solution) lambda = sum.solution->lambda_star;

  // Replicates run in fixed-size batches so the set of replicates used never
  // depends on the number of workers.
  constexpr std::uint64_t kBatch = 64;
  std::vector<std::vector<ObservationRow>> results;
  const std::size_t last = cfg.grid_size() - 1;
  std::uint64_t survivors_final = 0;
  const unsigned workers = worker_count();
  std::uint64_t target = cfg.replicates;
  while (results.size() < target && !interrupt_flag().load()) {
    const std::uint64_t begin = results.size();
    const std::uint64_t end = std::min<std::uint64_t>(target, begin + kBatch);
    results.resize(end);
    std::atomic<std::uint64_t> next{begin};
    std::mutex err_mu;
    std::optional<Error> first_error;
    auto work = [&] {
      for (;;) {
        const std::uint64_t i = next.fetch_add(1);
        if (i >= end || interrupt_flag().load()) return;
        try {
          results[i] = detail::run_replicate(cfg, i, lambda);
        } catch (const Error& e) {
          std::lock_guard lock(err_mu);
          if (!first_error) first_error = e;
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < std::min<std::uint64_t>(workers, end - begin); ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (first_error) throw *first_error;
    for (std::uint64_t i = begin; i < end; ++i) {
      const auto& rs = results[i];
      if (!rs.empty() && rs.back().grid_point && rs.back().grid_index == last && rs.back().survived) {
        ++survivors_final;
      }
    }
    if (results.size() == target && cfg.min_survivors && survivors_final < *cfg.min_survivors &&
        target < cfg.max_replicates) {
      target = std::min(cfg.max_replicates, target + kBatch);
    }
  }
  sum.interrupted = interrupt_flag().load();
  // keep only complete replicates
  std::vector<std::vector<ObservationRow>> done;
  for (auto& rs : results) {
    const bool complete = !rs.empty() && rs.back().grid_point && rs.back().grid_index == last;
    if (complete) done.push_back(std::move(rs));
  }
  sum.replicates_run = done.size();

  std::vector<double> medians, xs;
  for (std::size_t gi = 0; gi <= last; ++gi) {
    GridSummary g;
    g.x = cfg.grid_value(gi);
    g.replicates = done.size();
    std::vector<double> lo, li, md, mda, af, on, in, mn, ratio, oc, ic, wh;
    for (const auto& rs : done) {
      const ObservationRow* row = nullptr;
      for (const auto& r : rs) {
        if (r.grid_point && r.grid_index == gi) row = &r;
      }
      if (!row) continue;
      if (row->survived) ++g.survivors;
      const bool use = cfg.condition_on_survival ? rs.back().survived : row->survived;
      if (!use || !row->obs) continue;
      ++g.used;
      const auto& o = *row->obs;
      const double n = static_cast<double>(o.n);
      const double ln = std::log(n);
      if (ln > 0.0) {
        lo.push_back(std::log(static_cast<double>(o.O)) / ln);
        li.push_back(std::log(static_cast<double>(o.I)) / ln);
        md.push_back(o.max_deg_alive / ln);
        mda.push_back(o.max_deg_all / ln);
      }
      af.push_back(static_cast<double>(o.alive_count) / n);
      ratio.push_back(static_cast<double>(o.I) / static_cast<double>(o.O));
      const auto& p = sum.predicted;
      if (p.normalizer && n > 1.0) {
        const double norm = p.normalizer(n);
        if (norm > 0.0 && std::isfinite(norm)) {
          const double c = p.centering ? p.centering(n) : 0.0;
          if (p.log_O_limit) on.push_back((std::log(static_cast<double>(o.O)) - c) / norm);
          if (p.log_I_limit) in.push_back((std::log(static_cast<double>(o.I)) - c) / norm);
          if (p.maxdeg_phi1_limit && p.maxdeg_centering) {
            mn.push_back((seqs->phi1(static_cast<double>(o.max_deg_alive)) - p.maxdeg_centering(n)) / norm);
          }
        }
      }
      if (row->O_cont && row->t && *row->t > 0.0) {
        oc.push_back(*row->O_cont / *row->t);
        ic.push_back(*row->I_cont / *row->t);
      }
      if (row->W_hat) wh.push_back(*row->W_hat);
    }
    g.survival_fraction = g.replicates ? static_cast<double>(g.survivors) / g.replicates : 0.0;
    g.log_O_over_log_n = detail::moments(lo);
    g.log_I_over_log_n = detail::moments(li);
    g.maxdeg_over_log_n = detail::moments(md);
    g.maxdeg_all_over_log_n = detail::moments(mda);
    g.alive_fraction = detail::moments(af);
    g.log_O_normalized = detail::moments(on);
    g.log_I_normalized = detail::moments(in);
    g.maxdeg_phi1_normalized = detail::moments(mn);
    g.O_cont_over_t = detail::moments(oc);
    g.I_cont_over_t = detail::moments(ic);
    g.W_hat = detail::moments(wh);
    if (!ratio.empty()) {
      g.median_I_over_O = stats::median(ratio);
      medians.push_back(*g.median_I_over_O);
      xs.push_back(g.x);
    }
    sum.grid.push_back(g);
  }
  if (medians.size() >= 2) {
    sum.persistence_kendall_tau = stats::kendall_tau(xs, medians);
    bool inc = true;
    for (std::size_t i = 1; i < medians.size(); ++i) inc = inc && medians[i] > medians[i - 1];
    sum.median_ratio_strictly_increasing = inc;
  }
  for (auto& rs : done) {
    for (auto& r : rs) sum.rows.push_back(std::move(r));
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : ""; }

inline nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json moments_json(const MomentSummary& m) {
  return {{"mean", opt_json(m.mean)}, {"sd", opt_json(m.sd)}, {"se", opt_json(m.se)}};
}

inline void write_file(const std::string& path, const std::string& content) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path);
  out << content;
  if (!out) throw Error(Errc::io_error, "write failed for " + path);
}

}  // namespace detail

inline std::string raw_csv_header(Mode mode) {
  std::string h = "replicate,n,survived,alive_count,O_n,I_n,max_deg_alive,max_deg_all";
  if (mode == Mode::cmj) h += ",t,tau_n,O_t_cont,I_t_cont,W_hat";
  return h;
}

inline std::string raw_csv_row(const ObservationRow& r, Mode mode) {
  std::string s = std::to_string(r.replicate) + "," + std::to_string(r.n) + "," + (r.survived ? "1" : "0") + ",";
  if (r.obs) {
    const auto& o = *r.obs;
    s += std::to_string(o.alive_count) + "," + std::to_string(o.O) + "," + std::to_string(o.I) + "," +
         std::to_string(o.max_deg_alive) + "," + std::to_string(o.max_deg_all);
  } else {
    s += "0,,,,";
  }
  if (mode == Mode::cmj) {
    s += "," + detail::fmt_opt(r.t) + "," + detail::fmt_opt(r.tau_n) + "," + detail::fmt_opt(r.O_cont) + "," +
         detail::fmt_opt(r.I_cont) + "," + detail::fmt_opt(r.W_hat);
  }
  return s;
}

inline std::string raw_csv(const ExperimentSummary& s) {
  std::string out = raw_csv_header(s.config.mode) + "\n";
  for (const auto& r : s.rows) out += raw_csv_row(r, s.config.mode) + "\n";
  return out;
}

inline std::string summary_csv(const ExperimentSummary& s) {
  const bool cmj = s.config.mode == Mode::cmj;
  std::string out = std::string(s.config.time_grid() ? "t" : "n") +
                    ",replicates,survivor_count,used,survival_fraction,"
                    "mean_log_O_over_log_n,sd_log_O_over_log_n,mean_log_I_over_log_n,sd_log_I_over_log_n,"
                    "mean_maxdeg_over_log_n,sd_maxdeg_over_log_n,mean_maxdeg_all_over_log_n,mean_alive_fraction,"
                    "median_I_over_O";
  if (cmj) out += ",mean_O_cont_over_t,mean_I_cont_over_t,mean_W_hat";
  out += "\n";
  for (const auto& g : s.grid) {
    out += detail::fmt_double(g.x) + "," + std::to_string(g.replicates) + "," + std::to_string(g.survivors) + "," +
           std::to_string(g.used) + "," + detail::fmt_double(g.survival_fraction) + "," +
           detail::fmt_opt(g.log_O_over_log_n.mean) + "," + detail::fmt_opt(g.log_O_over_log_n.sd) + "," +
           detail::fmt_opt(g.log_I_over_log_n.mean) + "," + detail::fmt_opt(g.log_I_over_log_n.sd) + "," +
           detail::fmt_opt(g.maxdeg_over_log_n.mean) + "," + detail::fmt_opt(g.maxdeg_over_log_n.sd) + "," +
           detail::fmt_opt(g.maxdeg_all_over_log_n.mean) + "," + detail::fmt_opt(g.alive_fraction.mean) + "," +
           detail::fmt_opt(g.median_I_over_O);
    if (cmj) {
      out += "," + detail::fmt_opt(g.O_cont_over_t.mean) + "," + detail::fmt_opt(g.I_cont_over_t.mean) + "," +
             detail::fmt_opt(g.W_hat.mean);
    }
    out += "\n";
  }
  return out;
}

inline nlohmann::json summary_json(const ExperimentSummary& s) {
  using nlohmann::json;
  const auto& p = s.predicted;
  const GridSummary* last = s.grid.empty() ? nullptr : &s.grid.back();
  auto last_mean = [&](MomentSummary GridSummary::*f) { return last ? (last->*f).mean : std::nullopt; };

  json j;
  j["model"] = s.config.model_json;
  j["mode"] = std::string(to_string(s.config.mode));
  j["regime"] = std::string(to_string(s.report.regime));
  j["assumptions"] = {{"non_explosion", std::string(to_string(s.report.non_explosion))},
                      {"diverging_variance", std::string(to_string(s.report.diverging_variance))},
                      {"finite_degree", std::string(to_string(s.report.finite_degree))},
                      {"R", detail::opt_json(s.report.R)},
                      {"d_star", detail::opt_json(s.report.d_star)}};
  if (s.solution) {
    j["malthus"] = {{"lambda_star", s.solution->lambda_star},
                    {"residual", s.solution->residual},
                    {"lambda_underline", detail::opt_json(s.solution->lambda_underline)}};
  } else {
    j["malthus"] = {{"lambda_star", nullptr}, {"error", s.malthus_error.value_or("")}};
  }
  j["predicted"] = {{"case", std::string(to_string(p.which))},
                    {"O_exponent", detail::opt_json(p.O_exponent)},
                    {"I_exponent", detail::opt_json(p.I_exponent)},
                    {"maxdeg_over_log_n", detail::opt_json(p.maxdeg_over_log_n)},
                    {"log_O_normalized", detail::opt_json(p.log_O_limit)},
                    {"log_I_normalized", detail::opt_json(p.log_I_limit)},
                    {"maxdeg_phi1_normalized", detail::opt_json(p.maxdeg_phi1_limit)}};
  if (s.predicted_error) j["predicted"]["error"] = *s.predicted_error;

  json rows = json::array();
  for (const auto& g : s.grid) {
    json r = {{s.config.time_grid() ? "t" : "n", g.x},
              {"replicates", g.replicates},
              {"survivor_count", g.survivors},
              {"used", g.used},
              {"survival_fraction", g.survival_fraction},
              {"log_O_over_log_n", detail::moments_json(g.log_O_over_log_n)},
              {"log_I_over_log_n", detail::moments_json(g.log_I_over_log_n)},
              {"maxdeg_over_log_n", detail::moments_json(g.maxdeg_over_log_n)},
              {"maxdeg_all_over_log_n", detail::moments_json(g.maxdeg_all_over_log_n)},
              {"alive_fraction", detail::moments_json(g.alive_fraction)},
              {"log_O_normalized", detail::moments_json(g.log_O_normalized)},
              {"log_I_normalized", detail::moments_json(g.log_I_normalized)},
              {"maxdeg_phi1_normalized", detail::moments_json(g.maxdeg_phi1_normalized)},
              {"median_I_over_O", detail::opt_json(g.median_I_over_O)}};
    if (s.config.mode == Mode::cmj) {
      r["O_cont_over_t"] = detail::moments_json(g.O_cont_over_t);
      r["I_cont_over_t"] = detail::moments_json(g.I_cont_over_t);
      r["W_hat"] = detail::moments_json(g.W_hat);
    }
    rows.push_back(r);
  }
  j["estimated"] = {{"O_exponent", detail::opt_json(last_mean(&GridSummary::log_O_over_log_n))},
                    {"I_exponent", detail::opt_json(last_mean(&GridSummary::log_I_over_log_n))},
                    {"maxdeg_over_log_n", detail::opt_json(last_mean(&GridSummary::maxdeg_over_log_n))},
                    {"log_O_normalized", detail::opt_json(last_mean(&GridSummary::log_O_normalized))},
                    {"log_I_normalized", detail::opt_json(last_mean(&GridSummary::log_I_normalized))},
                    {"maxdeg_phi1_normalized", detail::opt_json(last_mean(&GridSummary::maxdeg_phi1_normalized))},
                    {"grid", rows},
                    {"persistence",
                     {{"kendall_tau_median_I_over_O", detail::opt_json(s.persistence_kendall_tau)},
                      {"median_I_over_O_strictly_increasing",
                       s.median_ratio_strictly_increasing ? json(*s.median_ratio_strictly_increasing)
                                                          : json(nullptr)}}}};
  j["replicates_run"] = s.replicates_run;
  j["base_seed"] = s.config.base_seed;
  j["interrupted"] = s.interrupted;
  return j;
}

// One "x y err" file per observable, for external plotting.
inline std::map<std::string, std::string> plot_data(const ExperimentSummary& s) {
  std::map<std::string, std::string> files;
  auto add = [&](const std::string& name, MomentSummary GridSummary::*f) {
    std::string body = "# x mean se\n";
    for (const auto& g : s.grid) {
      const auto& m = g.*f;
      if (!m.mean) continue;
      body += detail::fmt_double(g.x) + " " + detail::fmt_double(*m.mean) + " " + detail::fmt_opt(m.se) + "\n";
    }
    files[name + ".dat"] = body;
  };
  add("log_O_over_log_n", &GridSummary::log_O_over_log_n);
  add("log_I_over_log_n", &GridSummary::log_I_over_log_n);
  add("maxdeg_over_log_n", &GridSummary::maxdeg_over_log_n);
  add("alive_fraction", &GridSummary::alive_fraction);
  std::string surv = "# x survival_fraction se\n";
  for (const auto& g : s.grid) {
    const double p = g.survival_fraction;
    const double se = g.replicates ? std::sqrt(p * (1 - p) / g.replicates) : 0.0;
    surv += detail::fmt_double(g.x) + " " + detail::fmt_double(p) + " " + detail::fmt_double(se) + "\n";
  }
  files["survival_fraction.dat"] = surv;
  return files;
}

inline void emit_results(const ExperimentSummary& s, const OutputPaths& out) {
  if (s.grid.empty()) throw Error(Errc::empty_input, "empty summary");
  if (out.csv) detail::write_file(*out.csv, raw_csv(s));
  if (out.summary_csv) detail::write_file(*out.summary_csv, summary_csv(s));
  if (out.json) detail::write_file(*out.json, summary_json(s).dump(2) + "\n");
  if (out.plot_dir) {
    for (const auto& [name, body] : plot_data(s)) {
      detail::write_file((std::filesystem::path(*out.plot_dir) / name).string(), body);
    }
  }
}

// ---------------------------------------------------------------------------
// CSV reading (for schema self-checks)

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(Errc::parse_error, "no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw Error(Errc::parse_error, "line " + std::to_string(lineno) + ": expected " +
                                         std::to_string(t.header.size()) + " fields, got " +
                                         std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw Error(Errc::parse_error, "empty CSV");
  return t;
}

inline std::vector<ObservationRow> read_raw_csv(const std::string& text) {
  const auto t = parse_csv(text);
  const bool cmj = std::find(t.header.begin(), t.header.end(), "t") != t.header.end();
  const auto expected = raw_csv_header(cmj ? Mode::cmj : Mode::discrete);
  std::string got;
  for (std::size_t i = 0; i < t.header.size(); ++i) got += (i ? "," : "") + t.header[i];
  if (got != expected) throw Error(Errc::parse_error, "unexpected header: " + got);
  auto opt = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
  };
  std::vector<ObservationRow> out;
  for (const auto& c : t.rows) {
    ObservationRow r;
    r.replicate = std::stoull(c[0]);
    r.n = std::stoull(c[1]);
    r.survived = c[2] == "1";
    if (!c[4].empty()) {
      Observables o;
      o.n = r.n;
      o.alive_count = std::stoull(c[3]);
      o.O = static_cast<Label>(std::stoul(c[4]));
      o.I = static_cast<Label>(std::stoul(c[5]));
      o.max_deg_alive = static_cast<std::uint32_t>(std::stoul(c[6]));
      o.max_deg_all = static_cast<std::uint32_t>(std::stoul(c[7]));
      r.obs = o;
    }
    if (cmj) {
      r.t = opt(c[8]);
      r.tau_n = opt(c[9]);
      r.O_cont = opt(c[10]);
      r.I_cont = opt(c[11]);
      r.W_hat = opt(c[12]);
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace pavd
