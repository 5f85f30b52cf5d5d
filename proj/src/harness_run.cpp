#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <thread>

#include "homog/harness.hpp"
#include "homog/util.hpp"
#include "json.hpp"

namespace homog {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void parallel_replicates(int count, int threads, const std::function<void(int)>& fn) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

struct RunGrid {
  BoxDomain domain;
  double dt = 0.0;
  int steps = 0;
  double driver_h = 0.0;
  double driver_horizon = 0.0;
};

RunGrid run_grid_for(const ExperimentConfig& cfg, double eps, double T, double s0 = 0.0) {
  RunGrid g;
  const double L = cfg.grid.L;
  int m = cfg.grid.m_box;
  if (eps < 0.999999) {
    const int needed = static_cast<int>(std::ceil(32.0 * L / eps)) + 1;
    m = std::max(m, needed);
  }
  g.domain = BoxDomain{L, m};
  const double dt0 = std::min(cfg.grid.c1 * eps * eps,
                              cfg.grid.c2 * std::pow(eps, cfg.alpha) * cfg.driver.h);
  g.steps = std::max(1, static_cast<int>(std::ceil(T / dt0 - 1e-9)));
  g.dt = T / g.steps;
  g.driver_h = std::min(cfg.driver.h, g.dt / (4.0 * std::pow(eps, cfg.alpha)));
  g.driver_horizon = (s0 + T) / std::pow(eps, cfg.alpha) + 2.0 * g.driver_h;
  return g;
}

// deterministic seed streams for auxiliary paths, distinct from the
// replicate stream base_seed + index
uint64_t aux_seed(const ExperimentConfig& cfg, uint64_t purpose) {
  return cfg.base_seed + 0x9e3779b97f4a7c15ull * (purpose + 1);
}

struct TensorPipeline {
  TorusGrid cell;
  std::vector<double> ygrid;
  InvariantDensity rho;
  CorrectorSet set;
  std::vector<double> weights;
  Eigen::MatrixXd a_eff;
  std::vector<Eigen::MatrixXd> a_k;  // 1..order
  FluctuationSeries bracket;         // order 0
  double max_residual = 0.0;         // over orders and slices
  double max_chi_mean = 0.0;
  double max_flux_dev = 0.0;         // d=1 flux constancy
};

double flux_deviation(const CorrectorSet& set, int slice) {
  const GridField& a = set.a_slices[slice];
  const GridField grad = gradient(set.chi[0][slice]);
  double mean_flux = 0.0;
  std::vector<double> flux(a.nodes());
  for (int i = 0; i < a.nodes(); ++i) {
    flux[i] = a(i, 0) * (1.0 + grad(i, 0));
    mean_flux += flux[i];
  }
  mean_flux /= a.nodes();
  double dev = 0.0;
  for (double f : flux) dev = std::max(dev, std::abs(f - mean_flux));
  return dev;
}

void cascade_diagnostics(TensorPipeline& p) {
  for (int j = 0; j <= p.set.order; ++j)
    for (int k = 0; k < p.set.slices(); ++k) {
      p.max_residual = std::max(p.max_residual, cascade_residual(p.set, j, k));
      for (double m : mean(p.set.chi[j][k])) p.max_chi_mean = std::max(p.max_chi_mean, std::abs(m));
    }
  if (p.set.grid().dim == 1)
    for (int k = 0; k < p.set.slices(); ++k)
      p.max_flux_dev = std::max(p.max_flux_dev, flux_deviation(p.set, k));
}

TensorPipeline build_generator_pipeline(const ExperimentConfig& cfg, int order) {
  TensorPipeline p;
  p.cell = TorusGrid::make(1, cfg.grid.n_cell);
  p.ygrid = uniform_grid(-cfg.ygrid.Y, cfg.ygrid.Y, cfg.ygrid.points);
  const DiffusionSpec spec = cfg.driver.build();
  p.rho = invariant_density_1d(spec, p.ygrid);
  const CoefficientModel model = cfg.model.build();
  CascadeInput in = generator_input(model, spec, p.ygrid, p.cell);
  p.set = corrector_cascade(in, order);
  p.weights = density_weights(p.rho, p.ygrid);
  p.a_eff = effective_matrix(p.set, p.weights);
  for (int k = 1; k <= order; ++k) p.a_k.push_back(higher_effective(k, p.set, p.weights));
  p.bracket = fluctuation_series(p.set, p.weights, 0);
  cascade_diagnostics(p);
  return p;
}

std::function<double(double)> bracket_interpolant(const FluctuationSeries& br) {
  // linear interpolation of the scalar bracket, clamped at the grid ends
  std::vector<double> ys = br.coords;
  std::vector<double> vs(br.values.size());
  for (size_t i = 0; i < br.values.size(); ++i) vs[i] = br.values[i](0, 0);
  return [ys, vs](double y) {
    const double h = ys[1] - ys[0];
    if (y <= ys.front()) return vs.front();
    if (y >= ys.back()) return vs.back();
    const size_t i = std::min(ys.size() - 2, static_cast<size_t>((y - ys.front()) / h));
    const double t = (y - ys[i]) / h;
    return (1.0 - t) * vs[i] + t * vs[i + 1];
  };
}

FluctuationSeries identity_bracket(const std::vector<double>& ygrid) {
  FluctuationSeries br;
  br.kind = CascadeKind::generator;
  br.dim = 1;
  br.coords = ygrid;
  br.values.reserve(ygrid.size());
  for (double y : ygrid) {
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = y;
    br.values.push_back(v);
  }
  return br;
}

FluctuationSeries series_along_path(const std::function<double(double)>& f, const DriverPath& path) {
  FluctuationSeries s;
  s.kind = CascadeKind::time_sliced;
  s.dim = 1;
  const int K = path.steps();
  s.coords.reserve(K + 1);
  s.values.reserve(K + 1);
  for (int k = 0; k <= K; ++k) {
    s.coords.push_back(k * path.h);
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = f(path.value_at_index(k));
    s.values.push_back(v);
  }
  return s;
}

void add_check(ExperimentRecord& rec, const std::string& name, double value, double reference,
               double tol, bool pass) {
  rec.checks.push_back({name, value, reference, tol, pass});
}

void check_abs(ExperimentRecord& rec, const std::string& name, double value, double reference,
               double tol) {
  add_check(rec, name, value, reference, tol, std::abs(value - reference) <= tol);
}

void check_rel(ExperimentRecord& rec, const std::string& name, double value, double reference,
               double tol) {
  const double denom = std::max(std::abs(reference), 1e-300);
  add_check(rec, name, value, reference, tol, std::abs(value - reference) / denom <= tol);
}

void check_below(ExperimentRecord& rec, const std::string& name, double value, double bound) {
  add_check(rec, name, value, bound, bound, value <= bound);
}

double gaussian_phi(double width, double x) { return std::exp(-x * x / (2.0 * width * width)); }

// ---------------------------------------------------------------------------

ExperimentRecord run_effective_tensors(const ExperimentConfig& cfg) {
  ExperimentRecord rec;
  rec.kind = cfg.kind;
  const auto t0 = Clock::now();
  const int order = std::min(cfg.tensors.order, j0_order(cfg.alpha));

  TensorPipeline p;
  if (cfg.tensors.setting == "generator") {
    p = build_generator_pipeline(cfg, order);
  } else {
    // slices along one simulated driver path
    p.cell = TorusGrid::make(1, cfg.grid.n_cell);
    const DiffusionSpec spec = cfg.driver.build();
    const CoefficientModel model = cfg.model.build();
    const DriverPath path =
        simulate_driver(spec, cfg.tensors.slice_horizon, cfg.driver.h, aux_seed(cfg, 1));
    CascadeInput in = time_sliced_input(model, path, p.cell);
    p.set = corrector_cascade(in, order);
    p.weights = uniform_weights(p.set.slices());
    p.a_eff = effective_matrix(p.set, p.weights);
    for (int k = 1; k <= order; ++k) p.a_k.push_back(higher_effective(k, p.set, p.weights));
    p.bracket = fluctuation_series(p.set, p.weights, 0);
    cascade_diagnostics(p);
  }
  rec.timings.emplace_back("cascade_s", seconds_since(t0));

  rec.summary_values["a_eff"] = p.a_eff(0, 0);
  for (size_t k = 0; k < p.a_k.size(); ++k)
    rec.summary_values["a_" + std::to_string(k + 1) + "_eff"] = p.a_k[k](0, 0);
  rec.summary_values["max_residual"] = p.max_residual;
  rec.summary_values["max_chi_mean"] = p.max_chi_mean;
  rec.summary_values["max_flux_dev"] = p.max_flux_dev;

  if (cfg.tensors.expect_a_eff)
    check_abs(rec, "a_eff", p.a_eff(0, 0), *cfg.tensors.expect_a_eff, cfg.tensors.a_eff_tol);
  check_below(rec, "cascade_residual", p.max_residual, cfg.tensors.residual_tol);
  check_below(rec, "chi_mean", p.max_chi_mean, 1e-12);
  if (p.set.grid().dim == 1) check_below(rec, "flux_deviation", p.max_flux_dev, cfg.tensors.flux_tol);

  EffectiveTensors tensors;
  tensors.dim = 1;
  tensors.a_eff = p.a_eff;
  tensors.a_k_eff = p.a_k;

  if (cfg.tensors.compute_lambda && cfg.tensors.setting == "generator") {
    const auto t1 = Clock::now();
    const DiffusionSpec spec = cfg.driver.build();
    const bool identity = cfg.tensors.bracket == "identity";
    const FluctuationSeries br = identity ? identity_bracket(p.ygrid) : p.bracket;
    const LimitCovariance pois = lambda_from_poisson_1d(spec, br, p.rho);

    const std::function<double(double)> bf =
        identity ? std::function<double(double)>([](double y) { return y; })
                 : bracket_interpolant(p.bracket);
    const DriverPath path =
        simulate_driver(spec, cfg.tensors.gk_horizon, cfg.driver.h, aux_seed(cfg, 2));
    const FluctuationSeries xi = series_along_path(bf, path);
    const double max_lag =
        cfg.tensors.max_lag > 0.0 ? cfg.tensors.max_lag : 20.0 * estimate_relaxation_time(xi);
    const LimitCovariance corr = lambda_from_correlation(xi, max_lag);

    rec.summary_values["lambda_poisson"] = pois.scalar();
    rec.summary_values["lambda_correlation"] = corr.scalar();
    rec.summary_values["lambda_correlation_se"] = corr.scalar_se();
    rec.summary_values["lambda_max_lag"] = corr.max_lag;

    tensors.lambda = pois.lambda;
    tensors.lambda_sqrt = sqrt_psd(pois.lambda);

    if (cfg.tensors.expect_lambda) {
      check_abs(rec, "lambda_poisson", pois.scalar(), *cfg.tensors.expect_lambda,
                cfg.tensors.lambda_poisson_tol);
      check_rel(rec, "lambda_correlation", corr.scalar(), *cfg.tensors.expect_lambda,
                cfg.tensors.lambda_corr_tol);
    }
    check_rel(rec, "lambda_cross_route", corr.scalar(), pois.scalar(), cfg.tensors.cross_route_tol);

    const bool cross_ok =
        std::abs(corr.scalar() - pois.scalar()) / std::max(std::abs(pois.scalar()), 1e-300) <=
        cfg.tensors.cross_route_tol;
    rec.comparisons.push_back({"lambda", "poisson", pois.scalar(), 0.0,
                               cfg.tensors.lambda_poisson_tol, true});
    rec.comparisons.push_back({"lambda", "correlation", corr.scalar(), corr.scalar_se(),
                               cfg.tensors.cross_route_tol, cross_ok});
    rec.timings.emplace_back("lambda_s", seconds_since(t1));
  }

  rec.tensors_json = tensors_to_json(tensors);
  rec.timings.emplace_back("total_s", seconds_since(t0));
  return rec;
}

// ---------------------------------------------------------------------------

ExperimentRecord run_convergence(const ExperimentConfig& cfg) {
  ExperimentRecord rec;
  rec.kind = cfg.kind;
  rec.metric_columns = {"norm2"};
  const auto t0 = Clock::now();

  const int J0 = j0_order(cfg.alpha);
  const TensorPipeline p = build_generator_pipeline(cfg, J0);
  const double a_eff = p.a_eff(0, 0);
  std::vector<double> a_k(J0);
  for (int k = 0; k < J0; ++k) a_k[k] = p.a_k[k](0, 0);
  const CoefficientModel model = cfg.model.build();
  const DiffusionSpec spec = cfg.driver.build();
  const double w = cfg.convergence.phi_width;
  auto phi = [w](double x) { return gaussian_phi(w, x); };
  const double delta = 2.0 - cfg.alpha;

  std::vector<double> mean_norm2;
  for (double eps : cfg.eps) {
    const RunGrid rg = run_grid_for(cfg, eps, cfg.T);
    const SpaceTimeField u0 = solve_homogenized(a_eff, phi, rg.domain, rg.dt, cfg.T);
    std::vector<SpaceTimeField> cascade;
    std::vector<const SpaceTimeField*> lower{&u0};
    for (int j = 1; j <= J0; ++j) {
      cascade.push_back(solve_cascade_pde(j, a_eff, a_k, lower, rg.domain, rg.dt));
      lower.push_back(&cascade.back());
    }

    std::vector<ReplicateRow> rows(cfg.replicates);
    FineOptions fopts;
    fopts.c1 = cfg.grid.c1;
    fopts.c2 = cfg.grid.c2;
    parallel_replicates(cfg.replicates, cfg.threads, [&](int repl) {
      ReplicateRow& row = rows[repl];
      row.replicate = repl;
      row.seed = cfg.base_seed + repl;
      row.eps = eps;
      try {
        const DriverPath path = simulate_driver(spec, rg.driver_horizon, rg.driver_h, row.seed);
        const SpaceTimeField ue = solve_fine(model, path, eps, cfg.alpha, phi, rg.domain, rg.dt,
                                             cfg.T, fopts);
        // || u_eps - u0 - sum eps^{j delta} u^j ||^2 over space-time,
        // accumulated slice by slice
        const int m = rg.domain.m;
        double n2 = 0.0;
        for (int k = 0; k < ue.stored; ++k) {
          const double trap_t = (k == 0 || k == ue.stored - 1) ? 0.5 : 1.0;
          double sx = 0.0;
          for (int i = 0; i < m; ++i) {
            const double trap_x = (i == 0 || i == m - 1) ? 0.5 : 1.0;
            double v = ue.at(k, i) - u0.at(k, i);
            for (int j = 1; j <= J0; ++j)
              v -= std::pow(eps, j * delta) * cascade[j - 1].at(k, i);
            sx += trap_x * v * v;
          }
          n2 += trap_t * sx * rg.domain.dx();
        }
        n2 *= ue.stored_dt();
        row.metrics.emplace_back("norm2", n2);
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
      }
    });

    double acc = 0.0;
    int good = 0;
    for (const auto& r : rows) {
      rec.rows.push_back(r);
      if (!r.failed) {
        acc += r.metrics[0].second;
        ++good;
      }
    }
    mean_norm2.push_back(good > 0 ? acc / good : 0.0);
    rec.summary_values["mean_norm2_eps_" + format_g17(eps)] = mean_norm2.back();
  }

  int failures = 0;
  for (const auto& r : rec.rows)
    if (r.failed) ++failures;
  add_check(rec, "replicate_failures", failures, 0, 0.1 * rec.rows.size(),
            failures <= 0.1 * rec.rows.size());

  double floor = cfg.convergence.degenerate_floor;
  bool degenerate = true;
  for (double v : mean_norm2) degenerate = degenerate && (std::sqrt(v) < floor);
  if (degenerate) {
    rec.summary_values["slope_skipped_degenerate"] = 1.0;
    double worst = 0.0;
    for (double v : mean_norm2) worst = std::max(worst, std::sqrt(v));
    check_below(rec, "degenerate_norms", worst, floor);
  } else {
    const RateFit fit = fit_rate(cfg.eps, mean_norm2);
    rec.summary_values["slope_norm2"] = fit.slope;
    rec.summary_values["slope_intercept"] = fit.intercept;
    rec.summary_values["slope_residual"] = fit.residual;
    const double expect =
        cfg.convergence.expect_slope > 0.0 ? cfg.convergence.expect_slope : cfg.alpha;
    check_abs(rec, "norm2_slope", fit.slope, expect, cfg.convergence.slope_tol);
  }
  rec.timings.emplace_back("total_s", seconds_since(t0));
  return rec;
}

// ---------------------------------------------------------------------------

ExperimentRecord run_invariance(const ExperimentConfig& cfg) {
  ExperimentRecord rec;
  rec.kind = cfg.kind;
  rec.metric_columns = {"zeta_T", "zeta_2T"};
  const auto t0 = Clock::now();

  const DiffusionSpec spec = cfg.driver.build();
  std::function<double(double)> bracket;
  double lambda_ref;
  if (cfg.invariance.bracket == "identity") {
    bracket = [](double y) { return y; };
    const auto ygrid = uniform_grid(-cfg.ygrid.Y, cfg.ygrid.Y, cfg.ygrid.points);
    const InvariantDensity rho = invariant_density_1d(spec, ygrid);
    lambda_ref = lambda_from_poisson_1d(spec, identity_bracket(ygrid), rho).scalar();
  } else {
    const TensorPipeline p = build_generator_pipeline(cfg, 0);
    bracket = bracket_interpolant(p.bracket);
    lambda_ref = lambda_from_poisson_1d(spec, p.bracket, p.rho).scalar();
  }
  rec.summary_values["lambda_ref"] = lambda_ref;

  const InvarianceResult res = invariance_probe(bracket, spec, cfg.eps, cfg.alpha,
                                                cfg.invariance.T, cfg.replicates, cfg.driver.h,
                                                cfg.base_seed);
  for (const auto& r : res.rows) {
    ReplicateRow row;
    row.replicate = r.replicate;
    row.seed = cfg.base_seed + r.replicate;
    row.eps = r.eps;
    row.metrics.emplace_back("zeta_T", r.zeta_T);
    row.metrics.emplace_back("zeta_2T", r.zeta_2T);
    rec.rows.push_back(std::move(row));
  }
  for (const auto& a : res.aggregates) {
    rec.summary_values["var_T_eps_" + format_g17(a.eps)] = a.var_T;
    rec.summary_values["se_T_eps_" + format_g17(a.eps)] = a.se_T;
    rec.summary_values["var_2T_eps_" + format_g17(a.eps)] = a.var_2T;
  }

  const auto& last = res.aggregates.back();  // smallest eps
  check_rel(rec, "var_vs_lambda_T", last.var_T, lambda_ref * cfg.invariance.T,
            cfg.invariance.var_tol);
  const double se_comb = std::sqrt(last.se_2T * last.se_2T + 4.0 * last.se_T * last.se_T);
  add_check(rec, "var_T_doubling", last.var_2T, 2.0 * last.var_T, 2.0 * se_comb,
            std::abs(last.var_2T - 2.0 * last.var_T) <= 2.0 * se_comb);

  rec.comparisons.push_back({"variance_at_T", "limit", lambda_ref * cfg.invariance.T, 0.0,
                             cfg.invariance.var_tol, true});
  for (const auto& a : res.aggregates) {
    const bool ok = std::abs(a.var_T - lambda_ref * cfg.invariance.T) <=
                    cfg.invariance.var_tol * lambda_ref * cfg.invariance.T;
    rec.comparisons.push_back({"variance_at_T", "empirical_eps_" + format_g17(a.eps), a.var_T,
                               a.se_T, cfg.invariance.var_tol, ok || a.eps != cfg.eps.back()});
  }
  rec.timings.emplace_back("total_s", seconds_since(t0));
  return rec;
}

// ---------------------------------------------------------------------------

ExperimentRecord run_spde_variance(const ExperimentConfig& cfg) {
  ExperimentRecord rec;
  rec.kind = cfg.kind;
  rec.metric_columns = {"functional_U"};
  const auto t0 = Clock::now();

  const int J0 = j0_order(cfg.alpha);
  const TensorPipeline p = build_generator_pipeline(cfg, J0);
  const DiffusionSpec spec = cfg.driver.build();
  const double a_eff = p.a_eff(0, 0);
  std::vector<double> a_k(J0);
  for (int k = 0; k < J0; ++k) a_k[k] = p.a_k[k](0, 0);
  const LimitCovariance pois = lambda_from_poisson_1d(spec, p.bracket, p.rho);
  const double lambda_sqrt = sqrt_psd(pois.lambda)(0, 0);
  rec.summary_values["lambda"] = pois.scalar();

  const double eps = cfg.eps.back();  // smallest
  const RunGrid rg = run_grid_for(cfg, eps, cfg.T);
  const double wphi = cfg.spde_variance.phi_width;
  auto phi = [wphi](double x) { return gaussian_phi(wphi, x); };
  const double wpsi = cfg.spde_variance.psi_width;
  auto psi = [wpsi](double x, double) { return gaussian_phi(wpsi, x); };

  const SpaceTimeField u0 = solve_homogenized(a_eff, phi, rg.domain, rg.dt, cfg.T);
  std::vector<SpaceTimeField> cascade;
  std::vector<const SpaceTimeField*> lower{&u0};
  for (int j = 1; j <= J0; ++j) {
    cascade.push_back(solve_cascade_pde(j, a_eff, a_k, lower, rg.domain, rg.dt));
    lower.push_back(&cascade.back());
  }
  const double f_u0 = functional_against(u0, psi);
  std::vector<double> f_uj(J0);
  for (int j = 1; j <= J0; ++j) f_uj[j - 1] = functional_against(cascade[j - 1], psi);

  const auto t1 = Clock::now();
  const double det_var = functional_variance_spde(psi, lambda_sqrt, u0, a_eff, rg.domain, rg.dt,
                                                  cfg.spde_variance.s_stride);
  rec.summary_values["variance_deterministic"] = det_var;
  rec.timings.emplace_back("isometry_s", seconds_since(t1));

  const double delta = 2.0 - cfg.alpha;
  const double scale = std::pow(eps, -cfg.alpha / 2.0);
  std::vector<ReplicateRow> rows(cfg.replicates);
  FineOptions fopts;
  fopts.c1 = cfg.grid.c1;
  fopts.c2 = cfg.grid.c2;
  const CoefficientModel model = cfg.model.build();
  parallel_replicates(cfg.replicates, cfg.threads, [&](int repl) {
    ReplicateRow& row = rows[repl];
    row.replicate = repl;
    row.seed = cfg.base_seed + repl;
    row.eps = eps;
    try {
      const DriverPath path = simulate_driver(spec, rg.driver_horizon, rg.driver_h, row.seed);
      const SpaceTimeField ue =
          solve_fine(model, path, eps, cfg.alpha, phi, rg.domain, rg.dt, cfg.T, fopts);
      // <U, psi> by linearity of the functional
      double f = functional_against(ue, psi) - f_u0;
      for (int j = 1; j <= J0; ++j) f -= std::pow(eps, j * delta) * f_uj[j - 1];
      row.metrics.emplace_back("functional_U", scale * f);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
  });

  std::vector<double> samples;
  for (auto& r : rows) {
    rec.rows.push_back(r);
    if (!r.failed) samples.push_back(r.metrics[0].second);
  }
  add_check(rec, "replicate_failures", rows.size() - samples.size(), 0, 0.1 * rows.size(),
            rows.size() - samples.size() <= 0.1 * rows.size());

  const SampleStats st = sample_stats(samples);
  rec.summary_values["variance_mc"] = st.variance;
  rec.summary_values["variance_mc_se"] = st.variance * std::sqrt(2.0 / (samples.size() - 1));
  rec.summary_values["skewness"] = st.skewness;
  rec.summary_values["excess_kurtosis"] = st.excess_kurtosis;

  check_rel(rec, "variance_mc_vs_deterministic", st.variance, det_var, cfg.spde_variance.tol);
  if (cfg.spde_variance.skew_kurtosis_check) {
    const double n = static_cast<double>(samples.size());
    check_abs(rec, "skewness", st.skewness, 0.0, 3.0 * std::sqrt(6.0 / n));
    check_abs(rec, "excess_kurtosis", st.excess_kurtosis, 0.0, 3.0 * std::sqrt(24.0 / n));
  }

  const bool var_ok = std::abs(st.variance - det_var) <= cfg.spde_variance.tol * det_var;
  rec.comparisons.push_back({"functional_variance", "isometry", det_var, 0.0,
                             cfg.spde_variance.tol, true});
  rec.comparisons.push_back({"functional_variance", "monte_carlo", st.variance,
                             st.variance * std::sqrt(2.0 / (samples.size() - 1.0)),
                             cfg.spde_variance.tol, var_ok});
  rec.timings.emplace_back("total_s", seconds_since(t0));
  return rec;
}

// ---------------------------------------------------------------------------

ExperimentRecord run_aronson(const ExperimentConfig& cfg) {
  ExperimentRecord rec;
  rec.kind = cfg.kind;
  rec.metric_columns = {"c", "C", "c_g", "C_g", "violations", "min_value", "mass_err"};
  const auto t0 = Clock::now();

  const double T = cfg.aronson.probe_T;
  const double dt = cfg.grid.c1 * cfg.eps.back() * cfg.eps.back();

  // Sharp-constant control: fit the closed-form kernel sampled on a
  // probe grid; recovers c = (4 pi)^{-1/2} and C = 1/4 (the gradient
  // bound has an intrinsic sqrt(q) prefactor, so its tightest C sits a
  // little below 1/4 even on exact samples).
  {
    const BoxDomain domain{cfg.grid.L, cfg.grid.m_box};
    SpaceTimeField control;
    control.domain = domain;
    control.dt = 1e-3;
    control.store_stride = 2;
    control.stored = 251;
    control.values.assign(static_cast<size_t>(control.stored) * domain.m, 0.0);
    for (int k = 1; k < control.stored; ++k) {
      const double tau = control.time_of(k);
      for (int i = 0; i < domain.m; ++i) {
        const double x = domain.x(i);
        control.slice(k)[i] = std::exp(-x * x / (4.0 * tau)) / std::sqrt(4.0 * M_PI * tau);
      }
    }
    const GaussianBoundFit fv =
        fit_gaussian_bound({&control}, BoundKind::value, 0.0, 1e-8, cfg.aronson.skip_steps);
    const GaussianBoundFit fg =
        fit_gaussian_bound({&control}, BoundKind::gradient, 0.0, 1e-8, cfg.aronson.skip_steps);
    rec.summary_values["control_c"] = fv.c;
    rec.summary_values["control_C"] = fv.C;
    rec.summary_values["control_C_g"] = fg.C;
    check_rel(rec, "control_C", fv.C, 0.25, cfg.aronson.control_tol);
    check_rel(rec, "control_c", fv.c, 1.0 / std::sqrt(4.0 * M_PI), cfg.aronson.control_tol);
    check_rel(rec, "control_C_gradient", fg.C, 0.25, cfg.aronson.gradient_control_tol);
    add_check(rec, "control_violations", static_cast<double>(fv.violations + fg.violations), 0.0,
              0.0, fv.violations + fg.violations == 0);
  }

  // Discrete control: the solver pipeline on a unit coefficient. Its
  // fitted majorant stays valid (zero violations) but the tightest C
  // sits below the continuum constant: the 1e-8 tail of a second-order
  // kernel is reproduced only to O(1) in log scale near the 20 dt layer.
  {
    const CoefficientModel unit = CoefficientModel::constant(1.0);
    DiffusionSpec still = DiffusionSpec::degenerate_zero();
    const DriverPath path = simulate_driver(still, T + 2.0 * dt, dt, aux_seed(cfg, 3));
    BoxDomain domain{cfg.grid.L, cfg.grid.m_box};
    FineOptions fopts;
    fopts.c1 = 1.0;
    fopts.c2 = 4.0;
    fopts.store_stride = cfg.aronson.store_stride;
    const SpaceTimeField probe =
        fundamental_probe(unit, path, 1.0, cfg.alpha, 0.0, 0.0, domain, dt, T, fopts);
    const GaussianBoundFit fv =
        fit_gaussian_bound({&probe}, BoundKind::value, 0.0, 1e-8, cfg.aronson.skip_steps);
    rec.summary_values["control_probe_c"] = fv.c;
    rec.summary_values["control_probe_C"] = fv.C;
    add_check(rec, "control_probe_violations", static_cast<double>(fv.violations), 0.0, 0.0,
              fv.violations == 0);

    double mass_err = 0.0, vmin = 0.0;
    for (int k = cfg.aronson.skip_steps / cfg.aronson.store_stride + 1; k < probe.stored; ++k)
      mass_err = std::max(mass_err, std::abs(slice_mass(probe, k) - 1.0));
    for (double v : probe.values) vmin = std::min(vmin, v);
    rec.summary_values["control_mass_err"] = mass_err;
    rec.summary_values["control_min_value"] = vmin;
    check_below(rec, "control_mass_error", mass_err, 1e-6);
    add_check(rec, "control_positivity", vmin, 0.0, 1e-10, vmin >= -1e-10);
  }

  const CoefficientModel model = cfg.model.build();
  const DiffusionSpec spec = cfg.driver.build();
  struct ProbeJob {
    double eps;
    int realization;
  };
  std::vector<ProbeJob> jobs;
  for (double eps : cfg.eps)
    for (int r = 0; r < cfg.aronson.realizations; ++r) jobs.push_back({eps, r});

  std::vector<ReplicateRow> rows(jobs.size());
  std::vector<GaussianBoundFit> value_fits(jobs.size()), grad_fits(jobs.size());
  parallel_replicates(static_cast<int>(jobs.size()), cfg.threads, [&](int idx) {
    const ProbeJob& job = jobs[idx];
    ReplicateRow& row = rows[idx];
    row.replicate = idx;
    row.seed = cfg.base_seed + job.realization;
    row.eps = job.eps;
    try {
      RunGrid rg = run_grid_for(cfg, job.eps, T);
      rg.dt = dt;  // shared dt across probes so the excluded layer matches
      rg.driver_h = std::min(cfg.driver.h, dt / (4.0 * std::pow(job.eps, cfg.alpha)));
      rg.driver_horizon = T / std::pow(job.eps, cfg.alpha) + 2.0 * rg.driver_h;
      const DriverPath path = simulate_driver(spec, rg.driver_horizon, rg.driver_h, row.seed);
      FineOptions fopts;
      fopts.c1 = cfg.grid.c1;
      fopts.c2 = cfg.grid.c2;
      fopts.store_stride = cfg.aronson.store_stride;
      const SpaceTimeField probe =
          fundamental_probe(model, path, job.eps, cfg.alpha, 0.0, 0.0, rg.domain, dt, T, fopts);
      value_fits[idx] =
          fit_gaussian_bound({&probe}, BoundKind::value, 0.0, 1e-8, cfg.aronson.skip_steps);
      grad_fits[idx] =
          fit_gaussian_bound({&probe}, BoundKind::gradient, 0.0, 1e-8, cfg.aronson.skip_steps);
      double mass_err = 0.0, vmin = 0.0;
      for (int k = cfg.aronson.skip_steps / cfg.aronson.store_stride + 1; k < probe.stored; ++k)
        mass_err = std::max(mass_err, std::abs(slice_mass(probe, k) - 1.0));
      for (double v : probe.values) vmin = std::min(vmin, v);
      row.metrics.emplace_back("c", value_fits[idx].c);
      row.metrics.emplace_back("C", value_fits[idx].C);
      row.metrics.emplace_back("c_g", grad_fits[idx].c);
      row.metrics.emplace_back("C_g", grad_fits[idx].C);
      row.metrics.emplace_back("violations",
                               static_cast<double>(value_fits[idx].violations + grad_fits[idx].violations));
      row.metrics.emplace_back("min_value", vmin);
      row.metrics.emplace_back("mass_err", mass_err);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
  });

  size_t violations = 0;
  double vmin_all = 0.0, mass_err_all = 0.0;
  std::vector<double> cs, Cs, cgs, Cgs;
  int failures = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    rec.rows.push_back(rows[i]);
    if (rows[i].failed) {
      ++failures;
      continue;
    }
    cs.push_back(value_fits[i].c);
    Cs.push_back(value_fits[i].C);
    cgs.push_back(grad_fits[i].c);
    Cgs.push_back(grad_fits[i].C);
    violations += value_fits[i].violations + grad_fits[i].violations;
    vmin_all = std::min(vmin_all, rows[i].metrics[5].second);
    mass_err_all = std::max(mass_err_all, rows[i].metrics[6].second);
  }
  add_check(rec, "replicate_failures", failures, 0, 0.1 * rows.size(),
            failures <= 0.1 * rows.size());

  auto spread = [](const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    return (*hi - *lo) / std::abs(mean);
  };
  if (!cs.empty()) {
    rec.summary_values["spread_c"] = spread(cs);
    rec.summary_values["spread_C"] = spread(Cs);
    rec.summary_values["spread_c_g"] = spread(cgs);
    rec.summary_values["spread_C_g"] = spread(Cgs);
    check_below(rec, "spread_c", spread(cs), cfg.aronson.spread_tol);
    check_below(rec, "spread_C", spread(Cs), cfg.aronson.spread_tol);
    check_below(rec, "spread_c_gradient", spread(cgs), cfg.aronson.spread_tol);
    check_below(rec, "spread_C_gradient", spread(Cgs), cfg.aronson.spread_tol);
    add_check(rec, "pointwise_violations", static_cast<double>(violations), 0.0, 0.0,
              violations == 0);
    check_below(rec, "probe_mass_error", mass_err_all, 1e-6);
    add_check(rec, "probe_positivity", vmin_all, 0.0, 1e-10, vmin_all >= -1e-10);
  }
  rec.timings.emplace_back("total_s", seconds_since(t0));
  return rec;
}

// ---------------------------------------------------------------------------

ExperimentRecord run_malliavin(const ExperimentConfig& cfg) {
  ExperimentRecord rec;
  rec.kind = cfg.kind;
  rec.metric_columns = {"horizon", "psi_p"};
  const auto t0 = Clock::now();

  const DiffusionSpec spec = cfg.driver.build();
  const double pexp = cfg.malliavin.p;

  const auto ygrid = uniform_grid(-cfg.ygrid.Y, cfg.ygrid.Y, 4097);
  const ConditionSReport cond = check_condition_S_1d(spec, pexp, ygrid);
  rec.summary_values["condition_s_margin"] = cond.margin;
  add_check(rec, "condition_s_holds", cond.holds ? 1.0 : 0.0, 1.0, 0.0, cond.holds);

  std::vector<double> means, ses;
  for (size_t hi = 0; hi < cfg.malliavin.horizons.size(); ++hi) {
    const double H = cfg.malliavin.horizons[hi];
    std::vector<ReplicateRow> rows(cfg.malliavin.replicates);
    parallel_replicates(cfg.malliavin.replicates, cfg.threads, [&](int repl) {
      ReplicateRow& row = rows[repl];
      row.replicate = repl;
      row.seed = cfg.base_seed + repl;
      row.eps = 0.0;
      try {
        const DriverPath path = simulate_driver(spec, H, cfg.driver.h, row.seed);
        const MalliavinPath mal = simulate_malliavin(spec, path, 0.0);
        const double psi = psi_sup(mal, H);
        row.metrics.emplace_back("horizon", H);
        row.metrics.emplace_back("psi_p", std::pow(psi, pexp));
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
      }
    });
    std::vector<double> vals;
    for (auto& r : rows) {
      rec.rows.push_back(r);
      if (!r.failed) vals.push_back(r.metrics[1].second);
    }
    const SampleStats st = sample_stats(vals);
    means.push_back(st.mean);
    ses.push_back(std::sqrt(st.variance / vals.size()));
    rec.summary_values["psi_p_mean_H_" + format_g17(H)] = st.mean;
    rec.summary_values["psi_p_se_H_" + format_g17(H)] = ses.back();
  }

  int failures = 0;
  for (const auto& r : rec.rows)
    if (r.failed) ++failures;
  add_check(rec, "replicate_failures", failures, 0, 0.1 * rec.rows.size(),
            failures <= 0.1 * rec.rows.size());

  for (size_t i = 1; i < means.size(); ++i) {
    const double joint =
        cfg.malliavin.tol_se * std::sqrt(ses[i] * ses[i] + ses[0] * ses[0]) + 1e-9 * std::abs(means[0]);
    add_check(rec, "psi_p_horizon_" + format_g17(cfg.malliavin.horizons[i]), means[i], means[0],
              joint, std::abs(means[i] - means[0]) <= joint);
  }
  rec.timings.emplace_back("total_s", seconds_since(t0));
  return rec;
}

// ---------------------------------------------------------------------------

ExperimentRecord run_condition_s(const ExperimentConfig& cfg) {
  ExperimentRecord rec;
  rec.kind = cfg.kind;
  const auto t0 = Clock::now();
  const DiffusionSpec spec = cfg.driver.build();
  const auto ygrid = uniform_grid(-cfg.ygrid.Y, cfg.ygrid.Y, 4097);
  const ConditionSReport rep = check_condition_S_1d(spec, cfg.condition_s.p, ygrid);
  rec.summary_values["holds"] = rep.holds ? 1.0 : 0.0;
  rec.summary_values["margin"] = rep.margin;
  rec.summary_values["sup"] = rep.sup;
  add_check(rec, "condition_s_expected", rep.holds ? 1.0 : 0.0,
            cfg.condition_s.expect_holds ? 1.0 : 0.0, 0.0,
            rep.holds == cfg.condition_s.expect_holds);
  rec.timings.emplace_back("total_s", seconds_since(t0));
  return rec;
}

}  // namespace

bool ExperimentRecord::all_pass() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

ExperimentRecord run_experiment(const ExperimentConfig& config) {
  ExperimentRecord rec;
  switch (config.kind) {
    case ExperimentKind::effective_tensors: rec = run_effective_tensors(config); break;
    case ExperimentKind::convergence: rec = run_convergence(config); break;
    case ExperimentKind::invariance: rec = run_invariance(config); break;
    case ExperimentKind::spde_variance: rec = run_spde_variance(config); break;
    case ExperimentKind::aronson: rec = run_aronson(config); break;
    case ExperimentKind::malliavin: rec = run_malliavin(config); break;
    case ExperimentKind::condition_s: rec = run_condition_s(config); break;
  }
  rec.config_hash = config.hash();
  return rec;
}

// ---------------------------------------------------------------------------

std::string rows_csv(const ExperimentRecord& record) {
  std::string out = "replicate,seed,eps,status";
  for (const auto& c : record.metric_columns) out += "," + c;
  out += "\n";
  for (const auto& r : record.rows) {
    out += std::to_string(r.replicate) + "," + std::to_string(r.seed) + "," + format_g17(r.eps);
    out += r.failed ? ",failed" : ",ok";
    for (const auto& c : record.metric_columns) {
      out += ",";
      for (const auto& [k, v] : r.metrics)
        if (k == c) {
          out += format_g17(v);
          break;
        }
    }
    out += "\n";
  }
  return out;
}

std::string summary_json(const ExperimentRecord& record, const ExperimentConfig& config) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["kind"] = kind_name(record.kind);
  char hex[24];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(record.config_hash));
  j["config_hash"] = hex;
  j["base_seed"] = config.base_seed;
  j["all_pass"] = record.all_pass();
  j["checks"] = nlohmann::json::array();
  for (const auto& c : record.checks)
    j["checks"].push_back({{"name", c.name},
                           {"value", c.value},
                           {"reference", c.reference},
                           {"tolerance", c.tolerance},
                           {"pass", c.pass}});
  nlohmann::json vals;
  for (const auto& [k, v] : record.summary_values) vals[k] = v;
  j["summary"] = vals;
  return j.dump(2) + "\n";
}

std::string aggregates_csv(const ExperimentRecord& record) {
  std::string out = "eps,metric,mean,variance,stderr,count\n";
  std::vector<double> eps_seen;
  for (const auto& r : record.rows)
    if (std::find(eps_seen.begin(), eps_seen.end(), r.eps) == eps_seen.end())
      eps_seen.push_back(r.eps);
  for (double eps : eps_seen) {
    for (const auto& col : record.metric_columns) {
      std::vector<double> vals;
      for (const auto& r : record.rows) {
        if (r.eps != eps || r.failed) continue;
        for (const auto& [k, v] : r.metrics)
          if (k == col) vals.push_back(v);
      }
      if (vals.empty()) continue;
      const SampleStats st = sample_stats(vals);
      out += format_g17(eps) + "," + col + "," + format_g17(st.mean) + "," +
             format_g17(st.variance) + "," + format_g17(std::sqrt(st.variance / vals.size())) +
             "," + std::to_string(vals.size()) + "\n";
    }
  }
  return out;
}

void emit_outputs(const ExperimentRecord& record, const ExperimentConfig& config,
                  const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw std::runtime_error("emit_outputs: cannot create " + dir);

  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw std::runtime_error("emit_outputs: cannot write " + name + " in " + dir);
    out << content;
  };
  write("rows.csv", rows_csv(record));
  write("summary.json", summary_json(record, config));
  write("eps_aggregates.csv", aggregates_csv(record));
  if (!record.comparisons.empty()) write("comparisons.csv", comparison_csv(record.comparisons));
  if (!record.tensors_json.empty()) write("tensors.json", record.tensors_json);

  // wall-clock diagnostics; the only non-reproducible output, kept apart
  nlohmann::json t;
  for (const auto& [k, v] : record.timings) t[k] = v;
  write("timings.json", t.dump(2) + "\n");
}

}  // namespace homog
