#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "homog/limit_analysis.hpp"
#include "homog/util.hpp"

using namespace homog;

namespace {

FluctuationSeries scalar_series(const std::vector<double>& coords, const std::vector<double>& vals,
                                CascadeKind kind = CascadeKind::time_sliced) {
  FluctuationSeries s;
  s.kind = kind;
  s.dim = 1;
  s.coords = coords;
  for (double v : vals) {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = v;
    s.values.push_back(m);
  }
  return s;
}

FluctuationSeries identity_bracket(const std::vector<double>& ygrid) {
  return scalar_series(ygrid, ygrid, CascadeKind::generator);
}

std::function<double(double)> gaussian(double w) {
  return [w](double x) { return std::exp(-x * x / (2.0 * w * w)); };
}

CoefficientModel additive_model() {
  return CoefficientModel::separable_additive(
      [](double) { return 2.0; },
      [](double z) { return 0.5 * std::cos(2 * M_PI * z); },
      [](double y) { return std::tanh(y); }, 0.35);
}

}  // namespace

TEST_CASE("long-run covariance of a zero series vanishes") {
  std::vector<double> coords, vals;
  for (int k = 0; k < 20000; ++k) {
    coords.push_back(0.01 * k);
    vals.push_back(0.0);
  }
  const LimitCovariance lc = lambda_from_correlation(scalar_series(coords, vals), 10.0);
  CHECK(lc.scalar() == 0.0);
}

TEST_CASE("long-run covariance of the driver itself") {
  // autocovariance e^{-s}, variance 1: integrated both ways gives 2
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));
  const DriverPath p = simulate_driver(ou, 1000.0, 0.01, 101);
  std::vector<double> coords(p.steps() + 1), vals(p.steps() + 1);
  for (int k = 0; k <= p.steps(); ++k) {
    coords[k] = k * p.h;
    vals[k] = p.value_at_index(k);
  }
  const FluctuationSeries xi = scalar_series(coords, vals);
  const double tau = estimate_relaxation_time(xi);
  CHECK(tau == doctest::Approx(1.0).epsilon(0.35));
  const LimitCovariance lc = lambda_from_correlation(xi, 20.0);
  CHECK(lc.scalar() == doctest::Approx(2.0).epsilon(0.10));
  CHECK(lc.scalar_se() > 0.0);

  // doubling the series quadruples the covariance exactly
  std::vector<double> twice = vals;
  for (double& v : twice) v *= 2.0;
  const LimitCovariance lc4 = lambda_from_correlation(scalar_series(coords, twice), 20.0);
  CHECK(lc4.scalar() == doctest::Approx(4.0 * lc.scalar()).epsilon(1e-12));

  CHECK_THROWS_AS(lambda_from_correlation(xi, 200.0), std::invalid_argument);
}

TEST_CASE("poisson route on the y-grid") {
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));
  const auto ygrid = uniform_grid(-8.0, 8.0, 4096);
  const InvariantDensity rho = invariant_density_1d(ou, ygrid);

  std::vector<double> zeros(ygrid.size(), 0.0);
  CHECK(lambda_from_poisson_1d(ou, scalar_series(ygrid, zeros, CascadeKind::generator), rho).scalar() ==
        0.0);

  // bracket(y) = y: Q = -y solves L Q = y, Lambda = int 2 rho = 2
  const LimitCovariance lc = lambda_from_poisson_1d(ou, identity_bracket(ygrid), rho);
  CHECK(std::abs(lc.scalar() - 2.0) < 1e-4);

  // uncentered bracket violates solvability
  std::vector<double> ones(ygrid.size(), 1.0);
  CHECK_THROWS_AS(
      lambda_from_poisson_1d(ou, scalar_series(ygrid, ones, CascadeKind::generator), rho),
      std::invalid_argument);
}

TEST_CASE("the two covariance routes agree on the additive model") {
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));
  const TorusGrid cell = TorusGrid::make(1, 128);
  const auto ygrid = uniform_grid(-8.0, 8.0, 257);
  const InvariantDensity rho = invariant_density_1d(ou, ygrid);
  CascadeInput in = generator_input(additive_model(), ou, ygrid, cell);
  const CorrectorSet set = corrector_cascade(in, 0);
  const auto w = density_weights(rho, ygrid);
  const FluctuationSeries bracket = fluctuation_series(set, w, 0);
  const double pois = lambda_from_poisson_1d(ou, bracket, rho).scalar();

  // sample the bracket along a long stationary path
  std::vector<double> ys = bracket.coords, vs(bracket.values.size());
  for (size_t i = 0; i < vs.size(); ++i) vs[i] = bracket.values[i](0, 0);
  auto interp = [&](double y) {
    const double h = ys[1] - ys[0];
    if (y <= ys.front()) return vs.front();
    if (y >= ys.back()) return vs.back();
    const size_t i = std::min(ys.size() - 2, static_cast<size_t>((y - ys.front()) / h));
    const double t = (y - ys[i]) / h;
    return (1.0 - t) * vs[i] + t * vs[i + 1];
  };
  const double h = 0.02;
  const DriverPath p = simulate_driver(ou, 16000.0, h, 202);
  std::vector<double> coords(p.steps() + 1), vals(p.steps() + 1);
  for (int k = 0; k <= p.steps(); ++k) {
    coords[k] = k * h;
    vals[k] = interp(p.value_at_index(k));
  }
  const double corr = lambda_from_correlation(scalar_series(coords, vals), 20.0).scalar();
  CHECK(std::abs(corr - pois) / std::max(pois, 1e-12) < 0.10);
}

TEST_CASE("symmetric square root") {
  CHECK(sqrt_psd(Eigen::MatrixXd::Zero(1, 1))(0, 0) == 0.0);
  CHECK(sqrt_psd(4.0 * Eigen::MatrixXd::Identity(3, 3))(1, 1) == doctest::Approx(2.0));

  GaussianStream rng(5);
  Eigen::MatrixXd A(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) A(i, j) = rng.normal();
  const Eigen::MatrixXd psd = A * A.transpose();
  const Eigen::MatrixXd R = sqrt_psd(psd);
  CHECK((R * R.transpose() - psd).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((R - R.transpose()).cwiseAbs().maxCoeff() < 1e-10);

  Eigen::MatrixXd neg = Eigen::MatrixXd::Identity(2, 2);
  neg(1, 1) = -0.5;
  CHECK_THROWS_AS(sqrt_psd(neg), std::invalid_argument);
}

TEST_CASE("difference assembly") {
  const BoxDomain box{6.0, 129};
  const double dt = 1e-3, T = 0.1;
  const SpaceTimeField u0 = solve_homogenized(1.0, gaussian(0.7), box, dt, T);
  const SpaceTimeField u1 = solve_cascade_pde(1, 1.0, {0.2}, {&u0}, box, dt);

  // u_eps = u0 with no cascade: identically zero
  const SpaceTimeField z = assemble_U(u0, u0, {}, 0.1, 1.0);
  for (double v : z.values) CHECK(v == 0.0);

  // alpha = 1: U = eps^{-1/2} (u_eps - u0 - eps u1)
  const double eps = 0.04;
  SpaceTimeField ue = u0;
  for (size_t i = 0; i < ue.values.size(); ++i) ue.values[i] += 0.3 * u1.values[i];
  const SpaceTimeField U = assemble_U(ue, u0, {&u1}, eps, 1.0);
  double err = 0.0;
  for (size_t i = 0; i < U.values.size(); ++i) {
    const double expect = (0.3 - eps) * u1.values[i] / std::sqrt(eps);
    err = std::max(err, std::abs(U.values[i] - expect));
  }
  CHECK(err < 1e-12);

  // affine in each argument: U(a + b) - U(a) is linear in b
  SpaceTimeField ue2 = ue;
  for (double& v : ue2.values) v += 0.01;
  const SpaceTimeField U2 = assemble_U(ue2, u0, {&u1}, eps, 1.0);
  for (size_t i = 0; i < U.values.size(); ++i)
    CHECK(U2.values[i] - U.values[i] == doctest::Approx(0.01 / std::sqrt(eps)).epsilon(1e-10));
}

TEST_CASE("corrector layer reduces the gradient misfit") {
  const CoefficientModel model = additive_model();
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));
  const TorusGrid cell = TorusGrid::make(1, 256);
  const auto ygrid = uniform_grid(-8.0, 8.0, 257);
  const InvariantDensity rho = invariant_density_1d(ou, ygrid);
  CascadeInput in = generator_input(model, ou, ygrid, cell);
  const CorrectorSet set = corrector_cascade(in, 0);
  const double a_eff = effective_matrix(set, density_weights(rho, ygrid))(0, 0);

  const double eps = 0.05, T = 0.2, L = 8.0;
  const int m = static_cast<int>(std::ceil(32.0 * L / eps)) + 1;
  const BoxDomain box{L, m};
  const double dt = T / std::ceil(T / (0.125 * eps * eps));
  const double h = dt / (4.0 * eps);
  const DriverPath path = simulate_driver(ou, T / eps + 1.0, h, 77);
  const SpaceTimeField ue = solve_fine(model, path, eps, 1.0, gaussian(0.5), box, dt, T, {});
  const SpaceTimeField u0 = solve_homogenized(a_eff, gaussian(0.5), box, dt, T);

  const SpaceTimeField U = assemble_U(ue, u0, {}, eps, 1.0);
  const SpaceTimeField V = assemble_V(ue, u0, {}, set, path, eps, 1.0);

  auto grad_norm = [&](const SpaceTimeField& f) {
    double acc = 0.0;
    for (int k = 0; k < f.stored; ++k)
      for (int i = 1; i + 1 < box.m; ++i) {
        const double g = (f.at(k, i + 1) - f.at(k, i - 1)) / (2.0 * box.dx());
        acc += g * g;
      }
    return std::sqrt(acc);
  };
  CHECK(grad_norm(V) < grad_norm(U));

  // with zero correctors the full ansatz collapses onto the plain difference
  CorrectorSet nochi = set;
  for (auto& level : nochi.chi)
    for (auto& f : level)
      for (double& v : f.data()) v = 0.0;
  const SpaceTimeField Vz = assemble_V(ue, u0, {}, nochi, path, eps, 1.0);
  double dmax = 0.0;
  for (size_t i = 0; i < U.values.size(); ++i)
    dmax = std::max(dmax, std::abs(Vz.values[i] - U.values[i]));
  CHECK(dmax < 1e-12);
}

TEST_CASE("rate fits") {
  const std::vector<double> eps{0.2, 0.1, 0.05, 0.025};
  std::vector<double> n1(eps), nh(eps);
  for (size_t i = 0; i < eps.size(); ++i) {
    n1[i] = eps[i];
    nh[i] = std::sqrt(eps[i]);
  }
  CHECK(fit_rate(eps, n1).slope == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit_rate(eps, nh).slope == doctest::Approx(0.5).epsilon(1e-12));

  GaussianStream rng(8);
  std::vector<double> noisy(eps.size());
  for (size_t i = 0; i < eps.size(); ++i)
    noisy[i] = 0.7 * std::sqrt(eps[i]) * (1.0 + 0.05 * rng.normal());
  const double slope = fit_rate(eps, noisy).slope;
  CHECK(slope > 0.4);
  CHECK(slope < 0.6);

  CHECK_THROWS_AS(fit_rate({0.1, 0.05}, {1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(fit_rate({0.2, 0.1, 0.05}, {1.0, 0.0, 0.5}), std::invalid_argument);
}

TEST_CASE("functional variance by the isometry") {
  const BoxDomain box{6.0, 513};
  const double dt = 5e-4, T = 0.25;
  const SpaceTimeField u0 = solve_homogenized(1.0, gaussian(0.8), box, dt, T);
  auto psi = [](double x, double) { return std::exp(-x * x); };

  CHECK(functional_variance_spde(psi, 0.0, u0, 1.0, box, dt, 8) == 0.0);

  const double v1 = functional_variance_spde(psi, 0.5, u0, 1.0, box, dt, 8);
  const double v2 = functional_variance_spde(psi, 1.0, u0, 1.0, box, dt, 8);
  CHECK(v2 == doctest::Approx(4.0 * v1).epsilon(1e-12));

  // Monte Carlo cross-check over driven solves
  const int reps = 256;
  std::vector<double> f(reps);
  for (int r = 0; r < reps; ++r) {
    const SpaceTimeField v = solve_limit_spde(1.0, 0.5, u0,
                                              brownian_increments(u0.stored - 1, dt, 4000 + r),
                                              box, dt);
    f[r] = functional_against(v, psi);
  }
  const SampleStats st = sample_stats(f);
  CHECK(std::abs(st.variance - v1) / v1 < 0.05);
}

TEST_CASE("invariance probe") {
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));

  // a bracket that never moves gives a frozen probe
  const InvarianceResult flat = invariance_probe([](double) { return 0.0; }, ou, {0.2, 0.1}, 1.0,
                                                 1.0, 16, 0.01, 55);
  for (const auto& a : flat.aggregates) CHECK(a.var_T == 0.0);

  // identity bracket: Var(zeta_eps(T)) approaches Lambda T = 2
  const InvarianceResult res = invariance_probe([](double y) { return y; }, ou, {0.2, 0.1, 0.05},
                                                1.0, 1.0, 64, 0.01, 1200);
  const auto& last = res.aggregates.back();
  CHECK(std::abs(last.var_T - 2.0) / 2.0 < 0.10);
  // doubling the horizon doubles the variance within the error bars
  const double se = std::sqrt(last.se_2T * last.se_2T + 4.0 * last.se_T * last.se_T);
  CHECK(std::abs(last.var_2T - 2.0 * last.var_T) <= 2.0 * se);

  CHECK_THROWS_AS(invariance_probe([](double y) { return y; }, ou, {0.1}, 1.0, 1.0, 8, 0.01, 1),
                  std::invalid_argument);
}

TEST_CASE("comparison tables render as csv") {
  std::vector<ComparisonRow> rows;
  rows.push_back({"lambda", "poisson", 2.0, 0.0, 1e-3, true});
  rows.push_back({"lambda", "correlation", 1.82, 0.47, 0.1, true});
  const std::string csv = comparison_csv(rows);
  CHECK(csv.rfind("quantity,method,value,stderr,tolerance,pass\n", 0) == 0);
  CHECK(csv.find("lambda,poisson,2,0,0.001,true") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
