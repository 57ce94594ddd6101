// pavd: command-line front end.
//
//   pavd rates inspect --model m.json
//   pavd malthus solve --model m.json
//   pavd simulate discrete --model m.json --n N --seed S
//   pavd simulate cmj --model m.json --events N --seed S
//   pavd experiment run --config c.json
//   pavd verify --suite {embedding,mdp,lifetime,bounds,degree-dist}
//
// Exit codes: 0 ok, 1 runtime error, 2 config error, 3 verification failure.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pavd/pavd.hpp"

using namespace pavd;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kConfig = 2;
constexpr int kVerifyFailed = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RateModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  try {
    return model_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError(path + ": line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

int rates_inspect(const std::string& model_path, std::size_t show) {
  const RateModel m = load_model(model_path);
  const auto r = assumption_report(m);
  json b = json::array(), d = json::array();
  for (std::size_t i = 0; i < show; ++i) {
    b.push_back(m.b(i));
    d.push_back(m.d(i));
  }
  print_json({{"model", model_to_json(m)},
              {"b", b},
              {"d", d},
              {"non_explosion", std::string(to_string(r.non_explosion))},
              {"diverging_variance", std::string(to_string(r.diverging_variance))},
              {"finite_degree", std::string(to_string(r.finite_degree))},
              {"R", opt(r.R)},
              {"d_star", opt(r.d_star)},
              {"liminf_d", opt(r.liminf_d)},
              {"regime", std::string(to_string(r.regime))},
              {"lambda_underline", opt(lambda_underline(m))}});
  return kOk;
}

int malthus_solve(const std::string& model_path) {
  const RateModel m = load_model(model_path);
  try {
    const auto sol = solve_malthusian(m);
    print_json({{"lambda_star", sol.lambda_star},
                {"residual", sol.residual},
                {"lambda_underline", opt(sol.lambda_underline)}});
    return kOk;
  } catch (const Error& e) {
    print_json({{"lambda_star", nullptr}, {"residual", nullptr}, {"lambda_underline", opt(lambda_underline(m))},
                {"error", e.what()}});
    return kRuntime;
  }
}

int simulate(Mode mode, const std::string& model_path, std::uint64_t n, std::uint64_t seed,
             std::uint64_t replicates, std::uint64_t stride) {
  const auto m = std::make_shared<const RateModel>(load_model(model_path));
  std::optional<double> lambda;
  if (mode == Mode::cmj) {
    try {
      lambda = solve_malthusian(*m).lambda_star;
    } catch (const Error&) {
    }
  }
  std::string out = raw_csv_header(mode) + "\n";
  for (std::uint64_t rep = 0; rep < replicates; ++rep) {
    auto rng = Rng::for_stream(seed, rep);
    auto row_of = [&](std::uint64_t step, bool survived, std::optional<Observables> obs) {
      ObservationRow r;
      r.replicate = rep;
      r.n = step;
      r.survived = survived;
      r.obs = obs;
      return r;
    };
    if (mode == Mode::discrete) {
      TreeState s(m);
      s.run(n, stride, rng, [&](const TreeState& st) {
        out += raw_csv_row(row_of(st.n(), !st.extinct(), st.observe()), mode) + "\n";
      });
    } else {
      BPState s(m);
      s.record_tau(true);
      s.init(rng);
      // Rows at every `stride` events and at the final event (chain index = events + 1).
      std::uint64_t target = 0;
      while (target < n && !s.extinct()) {
        target = std::min(n, target + std::max<std::uint64_t>(stride, 1));
        s.run_until_events(target, rng);
        auto r = row_of(s.N() + 1, !s.extinct(), s.discrete_observables());
        detail::fill_cmj(r, s, lambda);
        out += raw_csv_row(r, mode) + "\n";
      }
    }
  }
  std::cout << out;
  return kOk;
}

void on_interrupt(int) { interrupt_flag().store(true); }

int experiment_run(const std::string& config_path, bool quiet) {
  ExperimentConfig cfg;
  try {
    cfg = parse_config(config_path);
  } catch (const Error& e) {
    throw ConfigError(config_path + ": " + e.what());
  }
  std::signal(SIGINT, on_interrupt);
  std::signal(SIGTERM, on_interrupt);
  const auto summary = run_experiment(cfg);
  emit_results(summary, cfg.output);
  if (!quiet) print_json(summary_json(summary));
  return summary.interrupted ? kRuntime : kOk;
}

int verify_suite(const std::string& name, std::uint64_t seed, const std::string& out_path) {
  const auto& names = verify::suite_names();
  std::vector<std::string> todo;
  if (name == "all") {
    todo = names;
  } else if (std::find(names.begin(), names.end(), name) != names.end()) {
    todo = {name};
  } else {
    throw ConfigError("unknown suite '" + name + "'");
  }
  json reports = json::array();
  bool pass = true;
  for (const auto& s : todo) {
    const auto suite = verify::run_suite(s, seed);
    pass = pass && suite.pass();
    reports.push_back(verify::to_json(suite));
  }
  const json j = todo.size() == 1 ? reports[0] : json{{"pass", pass}, {"suites", reports}};
  if (!out_path.empty()) {
    detail::write_file(out_path, j.dump(2) + "\n");
  } else {
    print_json(j);
  }
  return pass ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preferential attachment trees with vertex death"};
  app.require_subcommand(1);

  std::string model_path, config_path, suite, out_path;
  std::uint64_t n = 0, seed = 0, replicates = 1, stride = 0;
  std::size_t show = 10;
  bool quiet = false;

  auto* rates = app.add_subcommand("rates", "Rate-model tools");
  rates->require_subcommand(1);
  auto* inspect = rates->add_subcommand("inspect", "Print assumptions and regime of a rate model");
  inspect->add_option("--model", model_path, "Rate-model JSON")->required();
  inspect->add_option("--show", show, "Number of leading rates to print");

  auto* malthus = app.add_subcommand("malthus", "Malthusian parameter");
  malthus->require_subcommand(1);
  auto* solve = malthus->add_subcommand("solve", "Solve mu_hat(lambda) = 1");
  solve->add_option("--model", model_path, "Rate-model JSON")->required();

  auto* sim = app.add_subcommand("simulate", "Single trajectories as CSV");
  sim->require_subcommand(1);
  auto* sim_d = sim->add_subcommand("discrete", "Discrete-time tree chain");
  sim_d->add_option("--model", model_path, "Rate-model JSON")->required();
  sim_d->add_option("--n", n, "Number of steps")->required()->check(CLI::PositiveNumber);
  auto* sim_c = sim->add_subcommand("cmj", "Continuous-time branching process");
  sim_c->add_option("--model", model_path, "Rate-model JSON")->required();
  sim_c->add_option("--events", n, "Number of events")->required()->check(CLI::PositiveNumber);
  for (auto* s : {sim_d, sim_c}) {
    s->add_option("--seed", seed, "Base seed");
    s->add_option("--replicates", replicates, "Independent replicates")->check(CLI::PositiveNumber);
    s->add_option("--stride", stride, "Rows every this many steps (default: final step only)");
  }

  auto* exp = app.add_subcommand("experiment", "Replicated experiments");
  exp->require_subcommand(1);
  auto* run = exp->add_subcommand("run", "Run an experiment config");
  run->add_option("--config", config_path, "Experiment JSON")->required();
  run->add_flag("--quiet", quiet, "Do not print the summary");

  auto* ver = app.add_subcommand("verify", "Statistical verification suites");
  ver->add_option("--suite", suite, "embedding, mdp, lifetime, bounds, degree-dist or all")->required();
  ver->add_option("--seed", seed, "Base seed");
  ver->add_option("--out", out_path, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (inspect->parsed()) return rates_inspect(model_path, show);
    if (solve->parsed()) return malthus_solve(model_path);
    if (sim_d->parsed()) return simulate(Mode::discrete, model_path, n, seed, replicates, stride ? stride : n);
    if (sim_c->parsed()) return simulate(Mode::cmj, model_path, n, seed, replicates, stride ? stride : n);
    if (run->parsed()) return experiment_run(config_path, quiet);
    if (ver->parsed()) return verify_suite(suite, seed, out_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kConfig;
}
