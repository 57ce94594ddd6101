#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pavd/experiment.hpp"

using namespace pavd;

namespace {

const std::string kConst2 = R"({"b": {"family": "constant", "value": 2}, "d": {"family": "constant", "value": 1}})";

std::string config(const std::string& extra, const std::string& model = kConst2) {
  return R"({"model": )" + model + ", " + extra + "}";
}

std::filesystem::path source_dir() { return PAVD_SOURCE_DIR; }

}  // namespace

TEST(Config, MinimalDefaults) {
  const auto cfg = parse_config_text(config(R"("n_grid": [1000, 5000])"));
  EXPECT_EQ(cfg.replicates, 100u);
  EXPECT_EQ(cfg.observer_stride, 50u);
  EXPECT_EQ(cfg.mode, Mode::discrete);
  EXPECT_TRUE(cfg.condition_on_survival);
  EXPECT_EQ(cfg.base_seed, 0u);
}

TEST(Config, GridMustIncrease) {
  for (const char* grid : {R"("n_grid": [100, 100])", R"("n_grid": [100, 10])", R"("n_grid": [])"}) {
    try {
      parse_config_text(config(grid));
      FAIL() << grid;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::parse_error);
      EXPECT_NE(std::string(e.what()).find("n_grid"), std::string::npos);
    }
  }
}

TEST(Config, Diagnostics) {
  try {
    parse_config_text("{\n  \"n_grid\": [10],\n  \"replicas\": 5\n}");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parse_error);
    EXPECT_NE(std::string(e.what()).find("replicas"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  try {
    parse_config_text("{\n  \"n_grid\": [10,\n}");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parse_error);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(parse_config_text(config(R"("n_grid": [10], "replicates": 0)")), Error);
  EXPECT_THROW(parse_config_text(config(R"("t_grid": [1.0])")), Error);  // discrete mode
  EXPECT_THROW(parse_config_text(config(R"("n_grid": [10], "output": {"pdf": "x"})")), Error);
}

TEST(Config, ShippedRichDieYoungConfig) {
  const auto cfg = parse_config(source_dir() / "configs" / "rdy1_experiment.json");
  EXPECT_EQ(assumption_report(*cfg.model).regime, Regime::rich_die_young);
}

TEST(Experiment, NoDeathKeepsTheRoot) {
  auto cfg = parse_config_text(config(R"("n_grid": [100, 1000], "replicates": 20)",
                                      R"({"b": {"family": "affine", "slope": 1, "intercept": 1},
                                          "d": {"family": "constant", "value": 0}})"));
  const auto s = run_experiment(cfg);
  ASSERT_EQ(s.rows.size(), 20u * 100u);
  for (const auto& r : s.rows) {
    ASSERT_TRUE(r.obs);
    EXPECT_EQ(r.obs->O, 1u);
  }
  EXPECT_DOUBLE_EQ(s.grid.back().survival_fraction, 1.0);
}

TEST(Experiment, DeterministicAcrossThreadCounts) {
  auto cfg = parse_config_text(config(R"("n_grid": [200, 2000], "replicates": 40, "base_seed": 7)"));
  setenv("PAVD_THREADS", "1", 1);
  const auto a = raw_csv(run_experiment(cfg));
  setenv("PAVD_THREADS", "4", 1);
  const auto s = run_experiment(cfg);
  unsetenv("PAVD_THREADS");
  EXPECT_EQ(a, raw_csv(s));
  EXPECT_EQ(summary_json(run_experiment(cfg)).dump(), summary_json(s).dump());
}

TEST(Experiment, SurvivalIsMonotone) {
  auto cfg = parse_config_text(config(R"("n_grid": [2, 10, 100, 1000], "replicates": 200, "base_seed": 3)"));
  const auto s = run_experiment(cfg);
  for (std::size_t i = 1; i < s.grid.size(); ++i) {
    EXPECT_LE(s.grid[i].survival_fraction, s.grid[i - 1].survival_fraction);
  }
  EXPECT_GT(s.grid.back().survival_fraction, 0.0);
  EXPECT_LT(s.grid.back().survival_fraction, 1.0);
  EXPECT_EQ(s.grid.back().used, s.grid.back().survivors);
}

TEST(Experiment, MinSurvivorsAddsBatches) {
  auto cfg = parse_config_text(config(R"("n_grid": [500], "replicates": 10, "min_survivors": 30)"));
  const auto s = run_experiment(cfg);
  EXPECT_GE(s.grid.back().survivors, 30u);
  EXPECT_EQ((s.replicates_run - 10) % 64, 0u);
}

TEST(Experiment, CsvRoundTrip) {
  for (const char* mode : {"discrete", "cmj"}) {
    auto cfg = parse_config_text(
        config(std::string(R"("n_grid": [50, 300], "replicates": 12, "base_seed": 11, "mode": ")") + mode + "\""));
    const auto s = run_experiment(cfg);
    const auto text = raw_csv(s);
    const auto rows = read_raw_csv(text);
    ASSERT_EQ(rows.size(), s.rows.size());
    std::string again = raw_csv_header(cfg.mode) + "\n";
    for (const auto& r : rows) again += raw_csv_row(r, cfg.mode) + "\n";
    EXPECT_EQ(again, text) << mode;
    const auto summary = parse_csv(summary_csv(s));
    EXPECT_EQ(summary.rows.size(), 2u);
    EXPECT_NO_THROW(summary.column("median_I_over_O"));
  }
  EXPECT_THROW(parse_csv("a,b\n1\n"), Error);
}

TEST(Experiment, CmjGridMatchesChainIndex) {
  auto cfg = parse_config_text(config(R"("n_grid": [1, 40], "replicates": 8, "mode": "cmj")"));
  const auto s = run_experiment(cfg);
  for (const auto& r : s.rows) {
    if (r.survived) {
      EXPECT_EQ(r.n, cfg.n_grid[r.grid_index]);
      EXPECT_EQ(r.obs->n, r.n);
      ASSERT_TRUE(r.W_hat);
    }
  }
}

TEST(Experiment, TimeGrid) {
  auto cfg = parse_config_text(config(R"("t_grid": [1.0, 3.0], "replicates": 30, "mode": "cmj",
                                          "condition_on_survival": false)"));
  const auto s = run_experiment(cfg);
  EXPECT_EQ(s.rows.size(), 60u);
  for (const auto& r : s.rows) EXPECT_DOUBLE_EQ(*r.t, cfg.t_grid[r.grid_index]);
}

TEST(Emit, JsonHasPredictedAndEstimated) {
  auto cfg = parse_config_text(config(R"("n_grid": [100, 1000], "replicates": 30, "base_seed": 5)"));
  const auto j = summary_json(run_experiment(cfg));
  EXPECT_DOUBLE_EQ(j.at("predicted").at("O_exponent").get<double>(), 0.5);
  EXPECT_NEAR(j.at("malthus").at("lambda_star").get<double>(), 1.0, 1e-9);
  EXPECT_TRUE(j.at("estimated").at("O_exponent").is_number());
  for (const char* key : {"O_exponent", "I_exponent", "maxdeg_over_log_n"}) {
    EXPECT_TRUE(j.at("predicted").contains(key));
    EXPECT_TRUE(j.at("estimated").contains(key));
  }
}

TEST(Emit, EmptySurvivorRowsAreNull) {
  // death at rate 50 against birth 1: almost every run dies at once
  auto cfg = parse_config_text(config(R"("n_grid": [5, 50], "replicates": 10, "condition_on_survival": false)",
                                      R"({"b": {"family": "constant", "value": 1},
                                          "d": {"family": "constant", "value": 50}})"));
  const auto s = run_experiment(cfg);
  const auto j = summary_json(s);
  const auto& row = j.at("estimated").at("grid").back();
  EXPECT_EQ(row.at("survivor_count").get<int>(), 0);
  EXPECT_TRUE(row.at("log_O_over_log_n").at("mean").is_null());
  EXPECT_TRUE(row.at("median_I_over_O").is_null());
  EXPECT_TRUE(j.at("malthus").at("lambda_star").is_null());
  const auto csv = parse_csv(summary_csv(s));
  EXPECT_EQ(csv.rows.back()[csv.column("mean_log_O_over_log_n")], "");
}

TEST(Emit, WritesFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "pavd_emit_test";
  std::filesystem::remove_all(dir);
  auto cfg = parse_config_text(config(R"("n_grid": [100, 1000], "replicates": 10,
      "output": {"csv": "raw.csv", "summary_csv": "summary.csv", "json": "s.json", "plot_dir": "plots"})"),
                               dir);
  const auto s = run_experiment(cfg);
  emit_results(s, cfg.output);
  for (const char* f : {"raw.csv", "summary.csv", "s.json", "plots/log_O_over_log_n.dat"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ifstream in(dir / "raw.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), raw_csv(s));
  std::filesystem::remove_all(dir);
}
