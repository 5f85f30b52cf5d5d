#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "homog/harness.hpp"

using namespace homog;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("minimal config populates defaults") {
  const ExperimentConfig c = config_from_json_text(R"({"kind": "condition_s"})");
  CHECK(c.grid.n_cell == 256);
  CHECK(c.grid.m_box == 1024);
  CHECK(c.grid.L == 6.0);
  CHECK(c.alpha == 1.0);
  CHECK(c.replicates == 64);
}

TEST_CASE("config validation names the offending field") {
  CHECK_THROWS_WITH_AS(config_from_json_text(R"({"kind": "convergence", "alpha": 2.5})"),
                       "config: alpha must lie in (0,2)", std::invalid_argument);

  CHECK_THROWS_WITH_AS(config_from_json_text(R"({"kind": "convergence", "alpa": 1.0})"),
                       "config: unknown key \"alpa\" in top level", std::invalid_argument);

  CHECK_THROWS_AS(config_from_json_text(R"({"kind": "convergence", "eps": [0.1, 0.2]})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(config_from_json_text(R"({"kind": "convergence", "replicates": 0})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(config_from_json_text(R"({"kind": "what"})"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json_text(R"({"kind": "convergence", "model": {"contrst": 1}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(config_from_json_text("{nope"), std::invalid_argument);
}

TEST_CASE("config hash is stable and seed-independent fields are canonical") {
  const ExperimentConfig a = config_from_json_text(R"({"kind": "invariance", "threads": 3})");
  const ExperimentConfig b = config_from_json_text(R"({"kind": "invariance", "threads": 7})");
  CHECK(a.hash() == b.hash());  // execution width never changes results
  const ExperimentConfig c = config_from_json_text(R"({"kind": "invariance", "base_seed": 77})");
  CHECK(a.hash() != c.hash());
}

TEST_CASE("experiment runs are byte-reproducible") {
  const std::string text = R"({
    "kind": "invariance",
    "eps": [0.4, 0.2],
    "replicates": 16,
    "base_seed": 99,
    "threads": 2,
    "invariance": {"bracket": "identity", "T": 0.5, "var_tol": 1.0}
  })";
  const ExperimentConfig cfg = config_from_json_text(text);
  const ExperimentRecord r1 = run_experiment(cfg);
  const ExperimentRecord r2 = run_experiment(cfg);
  CHECK(rows_csv(r1) == rows_csv(r2));
  CHECK(summary_json(r1, cfg) == summary_json(r2, cfg));
  CHECK(aggregates_csv(r1) == aggregates_csv(r2));
  CHECK(r1.rows.size() == 32);  // 2 eps x 16 replicates
}

TEST_CASE("degenerate convergence skips the slope fit") {
  const std::string text = R"({
    "kind": "convergence",
    "eps": [0.4, 0.2, 0.1],
    "T": 0.05,
    "replicates": 1,
    "base_seed": 5,
    "threads": 2,
    "model": {"kind": "constant", "base": 1.0},
    "grid": {"m_box": 64, "L": 6.0},
    "convergence": {"phi_width": 0.5}
  })";
  const ExperimentConfig cfg = config_from_json_text(text);
  const ExperimentRecord rec = run_experiment(cfg);
  CHECK(rec.summary_values.count("slope_skipped_degenerate") == 1);
  CHECK(rec.all_pass());
}

TEST_CASE("csv writers") {
  ExperimentRecord rec;
  rec.kind = ExperimentKind::convergence;
  rec.metric_columns = {"norm2"};

  CHECK(rows_csv(rec) == "replicate,seed,eps,status,norm2\n");  // header-only when empty

  int id = 0;
  for (double eps : {0.2, 0.1, 0.05})
    for (int r = 0; r < 4; ++r) {
      ReplicateRow row;
      row.replicate = id++;
      row.seed = 100 + r;
      row.eps = eps;
      row.metrics.emplace_back("norm2", eps * (r + 1));
      rec.rows.push_back(row);
    }
  const std::string csv = rows_csv(rec);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);  // header + 12 rows

  ReplicateRow bad;
  bad.replicate = id;
  bad.seed = 1;
  bad.eps = 0.05;
  bad.failed = true;
  bad.error = "solver blew up";
  rec.rows.push_back(bad);
  CHECK(rows_csv(rec).find(",failed,") != std::string::npos);

  const std::string agg = aggregates_csv(rec);
  CHECK(agg.find("0.2000") != std::string::npos);
  CHECK(std::count(agg.begin(), agg.end(), '\n') == 4);  // header + one line per eps
}

TEST_CASE("outputs land on disk with the config hash echoed") {
  const std::string text = R"({
    "kind": "condition_s",
    "driver": {"kind": "sine_sigma", "theta": 1.0, "sigma": 1.4142135623730951, "sine_amp": 0.9},
    "condition_s": {"p": 4.0, "expect_holds": false}
  })";
  const ExperimentConfig cfg = config_from_json_text(text);
  const ExperimentRecord rec = run_experiment(cfg);
  CHECK(rec.all_pass());
  CHECK(rec.summary_values.at("holds") == 0.0);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "homog_test_out";
  fs::remove_all(dir);
  emit_outputs(rec, cfg, dir.string());
  CHECK(fs::exists(dir / "rows.csv"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "eps_aggregates.csv"));
  CHECK(fs::exists(dir / "timings.json"));

  char hex[24];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(cfg.hash()));
  CHECK(slurp(dir / "summary.json").find(hex) != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("tensor experiment on the closed-form profile") {
  const std::string text = R"({
    "kind": "effective_tensors",
    "model": {"kind": "space_only", "base": 2.0, "contrast": 1.0, "profile": "cos", "lambda": 0.3},
    "tensors": {"order": 0, "setting": "time_sliced", "slice_horizon": 0.1,
                "compute_lambda": false, "expect_a_eff": 1.7320508075688772, "a_eff_tol": 1e-6}
  })";
  const ExperimentConfig cfg = config_from_json_text(text);
  const ExperimentRecord rec = run_experiment(cfg);
  for (const auto& c : rec.checks) CHECK(c.pass);
  CHECK(std::abs(rec.summary_values.at("a_eff") - std::sqrt(3.0)) < 1e-6);
  CHECK(!rec.tensors_json.empty());
  const EffectiveTensors t = tensors_from_json(rec.tensors_json);
  CHECK(std::abs(t.a_eff(0, 0) - std::sqrt(3.0)) < 1e-6);
}
