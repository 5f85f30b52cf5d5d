#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "homog/cell_problems.hpp"
#include "homog/limit_analysis.hpp"
#include "homog/parabolic.hpp"
#include "homog/random_media.hpp"

namespace homog {

enum class ExperimentKind {
  effective_tensors,
  convergence,
  invariance,
  spde_variance,
  aronson,
  malliavin,
  condition_s,
};

std::string kind_name(ExperimentKind k);

struct ModelConfig {
  std::string kind = "separable_additive";  // constant|space_only|separable_additive|multiplicative
  double base = 2.0;
  double contrast = 0.5;
  std::string profile = "cos";   // cos | cos2
  std::string link = "tanh";     // tanh | sin | exp_tanh
  double link_scale = 1.0;
  double lambda = 0.25;

  CoefficientModel build() const;
};

struct DriverConfig {
  std::string kind = "ou";  // ou | sine_sigma | cubic
  double theta = 1.0;
  double sigma = 1.4142135623730951;  // sqrt(2): q = 2
  double sine_amp = 0.0;              // sigma(y) = sigma*(1 + sine_amp*sin y)
  double h = 0.01;

  DiffusionSpec build() const;
};

struct GridConfig {
  int n_cell = 256;
  int m_box = 1024;
  double L = 6.0;
  double c1 = 0.125;
  double c2 = 4.0;
};

struct YGridConfig {
  double Y = 8.0;
  int points = 257;
};

struct TensorsConfig {
  int order = 1;                 // cascade depth (capped by j0_order)
  std::string setting = "generator";  // generator | time_sliced
  std::string bracket = "model";      // model | identity (synthetic y bracket)
  double slice_horizon = 2.0;    // time-sliced cascades: driver span
  bool compute_lambda = true;
  double gk_horizon = 1000.0;    // correlation-route horizon
  double max_lag = 20.0;         // 0 = auto from relaxation time
  std::optional<double> expect_a_eff;
  double a_eff_tol = 1e-6;
  std::optional<double> expect_lambda;
  double lambda_poisson_tol = 1e-3;
  double lambda_corr_tol = 0.10;       // relative
  double cross_route_tol = 0.10;       // relative
  double residual_tol = 1e-6;
  double flux_tol = 1e-8;
};

struct ConvergenceConfig {
  double phi_width = 0.5;
  double expect_slope = 0.0;  // 0 = alpha (squared-norm scale)
  double slope_tol = 0.4;
  double degenerate_floor = 1e-8;  // below this all norms count as degenerate
};

struct InvarianceConfig {
  std::string bracket = "identity";  // identity | model (from fluctuation series)
  double T = 1.0;
  double var_tol = 0.10;  // relative, smallest eps vs Lambda*T
};

struct SpdeVarianceConfig {
  double psi_width = 0.7;
  double phi_width = 0.5;
  double tol = 0.15;        // MC vs deterministic variance
  int s_stride = 32;
  bool skew_kurtosis_check = true;
};

struct AronsonConfig {
  double probe_T = 0.2;
  int realizations = 8;
  double spread_tol = 0.20;
  double control_tol = 0.05;       // constant-coefficient C vs 1/4
  double gradient_control_tol = 0.10;
  int skip_steps = 20;
  int store_stride = 4;
};

struct MalliavinConfig {
  double p = 2.0;
  std::vector<double> horizons = {10.0, 100.0, 1000.0};
  int replicates = 32;
  double tol_se = 3.0;  // across-horizon agreement in joint SEs
};

struct ConditionSConfig {
  double p = 4.0;
  bool expect_holds = false;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::effective_tensors;
  double alpha = 1.0;
  double T = 0.25;
  std::vector<double> eps = {0.2, 0.1, 0.05};
  int replicates = 64;
  uint64_t base_seed = 1234;
  std::string out_dir = "out";
  int threads = 0;  // 0 = hardware concurrency

  ModelConfig model;
  DriverConfig driver;
  GridConfig grid;
  YGridConfig ygrid;
  TensorsConfig tensors;
  ConvergenceConfig convergence;
  InvarianceConfig invariance;
  SpdeVarianceConfig spde_variance;
  AronsonConfig aronson;
  MalliavinConfig malliavin;
  ConditionSConfig condition_s;

  std::string canonical_json() const;
  uint64_t hash() const;
};

/// Parses and validates a config file; unknown keys are rejected with
/// the offending key named, bad values with the field named.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);

struct CheckResult {
  std::string name;
  double value = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct ReplicateRow {
  int replicate = 0;
  uint64_t seed = 0;
  double eps = 0.0;
  bool failed = false;
  std::string error;
  // insertion-ordered metric columns, identical across rows of a run
  std::vector<std::pair<std::string, double>> metrics;
};

struct ExperimentRecord {
  ExperimentKind kind;
  uint64_t config_hash = 0;
  std::vector<std::string> metric_columns;
  std::vector<ReplicateRow> rows;
  std::vector<CheckResult> checks;
  std::vector<ComparisonRow> comparisons;  // method-comparison table
  std::map<std::string, double> summary_values;
  std::string tensors_json;  // reusable tensor document, when computed
  std::vector<std::pair<std::string, double>> timings;

  bool all_pass() const;
};

/// Dispatches on the experiment kind; replicate seeds are
/// base_seed + index and reduction is in ascending replicate order.
ExperimentRecord run_experiment(const ExperimentConfig& config);

/// rows.csv, summary.json, eps_aggregates.csv (deterministic bytes) and
/// timings.json (wall-clock diagnostics, not reproducible).
void emit_outputs(const ExperimentRecord& record, const ExperimentConfig& config,
                  const std::string& dir);

std::string rows_csv(const ExperimentRecord& record);
std::string summary_json(const ExperimentRecord& record, const ExperimentConfig& config);
std::string aggregates_csv(const ExperimentRecord& record);

}  // namespace homog
