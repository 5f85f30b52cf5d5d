#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "homog/cell_problems.hpp"
#include "homog/util.hpp"

using namespace homog;

namespace {

GridField profile_slice(const TorusGrid& g, const std::function<double(double)>& a) {
  GridField f(g, 1);
  for (int i = 0; i < g.nodes(); ++i) f(i, 0) = a(g.coord(i)[0]);
  return f;
}

double harmonic_mean(const std::function<double(double)>& a, int quad = 1 << 16) {
  double s = 0.0;
  for (int i = 0; i < quad; ++i) s += 1.0 / a((i + 0.5) / quad);
  return quad / s;
}

CoefficientModel additive_model() {
  return CoefficientModel::separable_additive(
      [](double) { return 2.0; },
      [](double z) { return 0.5 * std::cos(2 * M_PI * z); },
      [](double y) { return std::tanh(y); }, 0.35);
}

}  // namespace

TEST_CASE("constant coefficient has a vanishing corrector") {
  const TorusGrid g = TorusGrid::make(1, 64);
  const GridField a = profile_slice(g, [](double) { return 1.7; });
  const GridField chi = solve_corrector0(a);
  CHECK(l2_norm(chi) < 1e-12);
}

TEST_CASE("flux constancy pins the corrector in one dimension") {
  const TorusGrid g = TorusGrid::make(1, 256);
  auto aprof = [](double z) { return 2.0 + std::cos(2 * M_PI * z); };
  const GridField a = profile_slice(g, aprof);
  CellSolveReport rep;
  const GridField chi = solve_corrector0(a, {}, &rep);
  CHECK(rep.relative_residual < 1e-10);
  CHECK(std::abs(mean(chi)[0]) < 1e-12);

  // a (1 + chi') is constant and equals the harmonic mean sqrt(3)
  const GridField grad = gradient(chi);
  double dev = 0.0;
  for (int i = 0; i < g.nodes(); ++i)
    dev = std::max(dev, std::abs(a(i, 0) * (1.0 + grad(i, 0)) - std::sqrt(3.0)));
  CHECK(dev < 1e-8);
  CHECK(harmonic_mean(aprof) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-9));
}

TEST_CASE("generic elliptic slice satisfies the solver contract") {
  const TorusGrid g = TorusGrid::make(1, 128);
  const GridField a = profile_slice(
      g, [](double z) { return 1.5 + 0.5 * std::sin(2 * M_PI * z) + 0.3 * std::cos(4 * M_PI * z); });
  CellSolveReport rep;
  const GridField chi = solve_corrector0(a, {}, &rep);
  CHECK(rep.relative_residual < 1e-10);
  CHECK(std::abs(mean(chi)[0]) < 1e-12);
}

TEST_CASE("two-dimensional cell solve keeps its contract") {
  const TorusGrid g = TorusGrid::make(2, 32);
  GridField a(g, 4);
  for (int i = 0; i < g.nodes(); ++i) {
    const auto z = g.coord(i);
    const double v = 2.0 + 0.5 * std::cos(2 * M_PI * z[0]) * std::cos(2 * M_PI * z[1]);
    a(i, 0) = v;
    a(i, 3) = v;
    a(i, 1) = a(i, 2) = 0.1 * std::sin(2 * M_PI * z[0]) * std::sin(2 * M_PI * z[1]);
  }
  CellSolveReport rep;
  const GridField chi = solve_corrector0(a, {}, &rep);
  CHECK(chi.ncomp() == 2);
  CHECK(rep.relative_residual < 1e-10);
  for (double m : mean(chi)) CHECK(std::abs(m) < 1e-12);
}

TEST_CASE("cascade order count") {
  CHECK(j0_order(1.0) == 1);
  CHECK(j0_order(1.5) == 2);
  CHECK(j0_order(1e-9) == 1);
  CHECK(j0_order(1.9) == 10);
  CHECK_THROWS_AS(j0_order(0.0), std::invalid_argument);
  CHECK_THROWS_AS(j0_order(2.0), std::invalid_argument);
  CHECK_THROWS_AS(j0_order(2.5), std::invalid_argument);
}

TEST_CASE("time-independent slices kill the higher correctors") {
  const TorusGrid g = TorusGrid::make(1, 64);
  CascadeInput in;
  in.kind = CascadeKind::time_sliced;
  for (int k = 0; k < 8; ++k) {
    in.coords.push_back(0.1 * k);
    in.a_slices.push_back(profile_slice(g, [](double z) { return 2.0 + std::cos(2 * M_PI * z); }));
  }
  const CorrectorSet set = corrector_cascade(in, 1);
  for (int k = 0; k < set.slices(); ++k) {
    CHECK(l2_norm(set.chi[1][k]) < 1e-10);
    CHECK(cascade_residual(set, 0, k) < 1e-8);
  }
}

TEST_CASE("multiplicative time dependence cancels in the cell problem") {
  const TorusGrid g = TorusGrid::make(1, 128);
  auto alpha_prof = [](double z) { return 2.0 + std::cos(2 * M_PI * z); };
  // solve at two distinct driver values; g(y) scales out of the equation
  const double g1 = 0.7, g2 = 1.9;
  const GridField chi1 = solve_corrector0(profile_slice(g, [&](double z) { return g1 * alpha_prof(z); }));
  const GridField chi2 = solve_corrector0(profile_slice(g, [&](double z) { return g2 * alpha_prof(z); }));
  GridField diff = chi1;
  diff -= chi2;
  CHECK(l2_norm(diff) < 1e-9);

  // hence the cascade right-hand side vanishes and chi^1 = 0
  CascadeInput in;
  in.kind = CascadeKind::time_sliced;
  for (int k = 0; k < 8; ++k) {
    const double gk = 1.0 + 0.5 * std::sin(0.3 * k);
    in.coords.push_back(0.05 * k);
    in.a_slices.push_back(profile_slice(g, [&](double z) { return gk * alpha_prof(z); }));
  }
  const CorrectorSet set = corrector_cascade(in, 1);
  for (int k = 0; k < set.slices(); ++k) CHECK(l2_norm(set.chi[1][k]) < 1e-8);
}

TEST_CASE("additive model cascade solves against its own right-hand side") {
  const TorusGrid g = TorusGrid::make(1, 128);
  const CoefficientModel model = additive_model();
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));
  const DriverPath path = simulate_driver(ou, 1.0, 0.02, 21);
  CascadeInput in = time_sliced_input(model, path, g);
  const CorrectorSet set = corrector_cascade(in, 1);
  for (int k = 0; k < set.slices(); ++k) {
    CHECK(cascade_residual(set, 0, k) < 1e-6);
    CHECK(cascade_residual(set, 1, k) < 1e-6);
    for (double m : mean(set.chi[1][k])) CHECK(std::abs(m) < 1e-12);
  }
}

TEST_CASE("generator cascade on the additive model") {
  const TorusGrid g = TorusGrid::make(1, 128);
  const CoefficientModel model = additive_model();
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));
  const auto ygrid = uniform_grid(-8.0, 8.0, 129);
  CascadeInput in = generator_input(model, ou, ygrid, g);
  const CorrectorSet set = corrector_cascade(in, 1);
  for (int k = 0; k < set.slices(); ++k) {
    CHECK(cascade_residual(set, 0, k) < 1e-8);
    CHECK(cascade_residual(set, 1, k) < 1e-8);
  }
}

TEST_CASE("effective matrix readings") {
  const TorusGrid g = TorusGrid::make(1, 256);

  CascadeInput in;
  in.kind = CascadeKind::time_sliced;
  for (int k = 0; k < 8; ++k) {
    in.coords.push_back(0.1 * k);
    in.a_slices.push_back(profile_slice(g, [](double) { return 1.3; }));
  }
  const CorrectorSet cset = corrector_cascade(in, 0);
  CHECK(effective_matrix(cset, uniform_weights(8))(0, 0) == doctest::Approx(1.3).epsilon(1e-12));

  CascadeInput in2;
  in2.kind = CascadeKind::time_sliced;
  for (int k = 0; k < 8; ++k) {
    in2.coords.push_back(0.1 * k);
    in2.a_slices.push_back(profile_slice(g, [](double z) { return 2.0 + std::cos(2 * M_PI * z); }));
  }
  const CorrectorSet sset = corrector_cascade(in2, 0);
  CHECK(std::abs(effective_matrix(sset, uniform_weights(8))(0, 0) - std::sqrt(3.0)) < 1e-6);
}

TEST_CASE("multiplicative ensemble average factorizes") {
  // a(z,y) = g(y) alpha(z) with g = exp(0.4 tanh y): a_eff = E[g] * harmonic(alpha)
  const TorusGrid g = TorusGrid::make(1, 256);
  auto alpha_prof = [](double z) { return 2.0 + std::cos(2 * M_PI * z); };
  auto link = [](double y) { return std::exp(0.4 * std::tanh(y)); };
  const CoefficientModel model = CoefficientModel::multiplicative(alpha_prof, link, 0.2);
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));
  const auto ygrid = uniform_grid(-8.0, 8.0, 257);
  const InvariantDensity rho = invariant_density_1d(ou, ygrid);

  CascadeInput in = generator_input(model, ou, ygrid, g);
  const CorrectorSet set = corrector_cascade(in, 0);
  const auto w = density_weights(rho, ygrid);
  const double a_eff = effective_matrix(set, w)(0, 0);

  // quadrature oracle for E[g]
  std::vector<double> integrand(ygrid.size());
  for (size_t i = 0; i < ygrid.size(); ++i) integrand[i] = link(ygrid[i]) * rho.rho[i];
  const double Eg = trapz(integrand, ygrid[1] - ygrid[0]);
  CHECK(a_eff == doctest::Approx(Eg * std::sqrt(3.0)).epsilon(1e-7));
}

TEST_CASE("higher effective tensors vanish without time dependence") {
  const TorusGrid g = TorusGrid::make(1, 64);
  CascadeInput in;
  in.kind = CascadeKind::time_sliced;
  for (int k = 0; k < 8; ++k) {
    in.coords.push_back(0.1 * k);
    in.a_slices.push_back(profile_slice(g, [](double z) { return 2.0 + std::cos(2 * M_PI * z); }));
  }
  const CorrectorSet set = corrector_cascade(in, 1);
  CHECK(std::abs(higher_effective(1, set, uniform_weights(8))(0, 0)) < 1e-10);
}

TEST_CASE("higher effective tensor agrees across integration orders") {
  const TorusGrid g = TorusGrid::make(1, 128);
  const CoefficientModel model = additive_model();
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));
  const auto ygrid = uniform_grid(-8.0, 8.0, 129);
  const InvariantDensity rho = invariant_density_1d(ou, ygrid);
  CascadeInput in = generator_input(model, ou, ygrid, g);
  const CorrectorSet set = corrector_cascade(in, 1);
  const auto w = density_weights(rho, ygrid);
  const double route1 = higher_effective(1, set, w)(0, 0);

  // swap the integration order: per-z ensemble average first, then the mean in z
  const int n = g.nodes();
  std::vector<double> per_z(n, 0.0);
  for (int k = 0; k < set.slices(); ++k) {
    const GridField grad = gradient(set.chi[1][k]);
    for (int i = 0; i < n; ++i) per_z[i] += w[k] * set.a_slices[k](i, 0) * grad(i, 0);
  }
  double route2 = 0.0;
  for (double v : per_z) route2 += v;
  route2 /= n;
  CHECK(route1 == doctest::Approx(route2).epsilon(1e-10));
}

TEST_CASE("fluctuation series") {
  const TorusGrid g = TorusGrid::make(1, 64);

  CascadeInput constant_in;
  constant_in.kind = CascadeKind::time_sliced;
  for (int k = 0; k < 8; ++k) {
    constant_in.coords.push_back(0.1 * k);
    constant_in.a_slices.push_back(profile_slice(g, [](double) { return 2.0; }));
  }
  const CorrectorSet cset = corrector_cascade(constant_in, 0);
  const FluctuationSeries cs = fluctuation_series(cset, uniform_weights(8), 0);
  for (int k = 0; k < 8; ++k) CHECK(std::abs(cs.scalar(k)) < 1e-12);

  // additive model: the rho-weighted bracket integrates to zero
  const CoefficientModel model = additive_model();
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));
  const auto ygrid = uniform_grid(-8.0, 8.0, 257);
  const InvariantDensity rho = invariant_density_1d(ou, ygrid);
  CascadeInput in = generator_input(model, ou, ygrid, TorusGrid::make(1, 128));
  const CorrectorSet set = corrector_cascade(in, 0);
  const auto w = density_weights(rho, ygrid);
  const FluctuationSeries br = fluctuation_series(set, w, 0);
  double centered = 0.0;
  for (size_t k = 0; k < ygrid.size(); ++k) centered += w[k] * br.scalar(k);
  CHECK(std::abs(centered) < 1e-8);
}

TEST_CASE("one-dimensional bounds and grid convergence") {
  const CoefficientModel model = additive_model();
  const DiffusionSpec ou = DiffusionSpec::ornstein_uhlenbeck(1.0, std::sqrt(2.0));

  auto run = [&](int n, int ypoints) {
    const TorusGrid g = TorusGrid::make(1, n);
    const auto ygrid = uniform_grid(-8.0, 8.0, ypoints);
    const InvariantDensity rho = invariant_density_1d(ou, ygrid);
    CascadeInput in = generator_input(model, ou, ygrid, g);
    const CorrectorSet set = corrector_cascade(in, 1);
    const auto w = density_weights(rho, ygrid);
    return std::pair{effective_matrix(set, w)(0, 0), higher_effective(1, set, w)(0, 0)};
  };
  const auto [a_coarse, a1_coarse] = run(128, 129);
  const auto [a_fine, a1_fine] = run(256, 257);
  CHECK(std::abs(a_coarse - a_fine) < 1e-4);
  CHECK(std::abs(a1_coarse - a1_fine) < 1e-4);

  // harmonic mean <= a_eff <= arithmetic mean over the full (z, y)
  // measure, strictly when the coefficient is nonconstant
  const auto ygrid = uniform_grid(-8.0, 8.0, 257);
  const InvariantDensity rho = invariant_density_1d(ou, ygrid);
  std::vector<double> inva(ygrid.size()), arith(ygrid.size());
  for (size_t k = 0; k < ygrid.size(); ++k) {
    auto prof = [&](double z) { return model.eval(z, ygrid[k]); };
    double ih = 0.0, am = 0.0;
    for (int i = 0; i < 4096; ++i) {
      ih += 1.0 / prof((i + 0.5) / 4096.0);
      am += prof((i + 0.5) / 4096.0);
    }
    inva[k] = ih / 4096.0 * rho.rho[k];
    arith[k] = am / 4096.0 * rho.rho[k];
  }
  const double h = ygrid[1] - ygrid[0];
  const double lower = 1.0 / trapz(inva, h), upper = trapz(arith, h);
  CHECK(a_fine > lower);
  CHECK(a_fine < upper);
}

TEST_CASE("corrector cache reuses quantized slices") {
  const TorusGrid g = TorusGrid::make(1, 64);
  const CoefficientModel model = additive_model();
  CorrectorCache cache;
  const GridField a = cache.corrector0(model, g, 0.5);
  const GridField b = cache.corrector0(model, g, 0.5 + 1e-9);  // same quantum
  CHECK(cache.size() == 1);
  GridField diff = a;
  diff -= b;
  CHECK(l2_norm(diff) == 0.0);
  cache.corrector0(model, g, 0.75);
  CHECK(cache.size() == 2);
}

TEST_CASE("tensor and corrector documents round-trip") {
  EffectiveTensors t;
  t.dim = 1;
  t.a_eff = Eigen::MatrixXd::Constant(1, 1, std::sqrt(3.0));
  t.a_k_eff.push_back(Eigen::MatrixXd::Constant(1, 1, -0.015));
  t.lambda = Eigen::MatrixXd::Constant(1, 1, 2.0);
  t.lambda_sqrt = Eigen::MatrixXd::Constant(1, 1, std::sqrt(2.0));
  const EffectiveTensors back = tensors_from_json(tensors_to_json(t));
  CHECK(back.a_eff(0, 0) == t.a_eff(0, 0));
  CHECK(back.a_k_eff[0](0, 0) == t.a_k_eff[0](0, 0));
  CHECK(back.lambda(0, 0) == t.lambda(0, 0));
  CHECK(back.lambda_sqrt(0, 0) == t.lambda_sqrt(0, 0));

  const TorusGrid g = TorusGrid::make(1, 32);
  CascadeInput in;
  in.kind = CascadeKind::time_sliced;
  for (int k = 0; k < 8; ++k) {
    in.coords.push_back(0.25 * k);
    in.a_slices.push_back(profile_slice(g, [&](double z) { return 2.0 + 0.3 * std::sin(2 * M_PI * z + 0.1 * k); }));
  }
  const CorrectorSet set = corrector_cascade(in, 1);
  const CorrectorSet loaded = correctors_from_json(correctors_to_json(set));
  CHECK(loaded.order == set.order);
  CHECK(loaded.coords == set.coords);
  REQUIRE(loaded.chi.size() == set.chi.size());
  for (size_t j = 0; j < set.chi.size(); ++j)
    for (size_t k = 0; k < set.chi[j].size(); ++k)
      CHECK(loaded.chi[j][k].data() == set.chi[j][k].data());
}
