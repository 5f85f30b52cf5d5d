#include "homog/random_media.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "homog/util.hpp"

namespace homog {

namespace {

constexpr double kNumDiffStep = 1e-5;

void require_n1(const DiffusionSpec& spec, const char* who) {
  if (spec.n != 1) throw std::invalid_argument(std::string(who) + ": only n = 1 is supported");
}

}  // namespace

DiffusionSpec DiffusionSpec::ornstein_uhlenbeck(double theta, double sigma) {
  DiffusionSpec s;
  s.n = 1;
  s.exact_gaussian = true;
  s.ou_theta = theta;
  s.ou_sigma = sigma;
  s.drift = [theta](const double* y, double* out) { out[0] = -theta * y[0]; };
  s.dispersion = [sigma](const double*, double* out) { out[0] = sigma; };
  s.drift_jacobian = [theta](const double*, double* out) { out[0] = -theta; };
  s.dispersion_jacobian = [](const double*, double* out) { out[0] = 0.0; };
  return s;
}

DiffusionSpec DiffusionSpec::scalar(std::function<double(double)> b,
                                    std::function<double(double)> sigma,
                                    std::function<double(double)> db,
                                    std::function<double(double)> dsigma) {
  DiffusionSpec s;
  s.n = 1;
  s.drift = [b](const double* y, double* out) { out[0] = b(y[0]); };
  s.dispersion = [sigma](const double* y, double* out) { out[0] = sigma(y[0]); };
  if (db) s.drift_jacobian = [db](const double* y, double* out) { out[0] = db(y[0]); };
  if (dsigma) s.dispersion_jacobian = [dsigma](const double* y, double* out) { out[0] = dsigma(y[0]); };
  return s;
}

DiffusionSpec DiffusionSpec::degenerate_zero() {
  DiffusionSpec s;
  s.n = 1;
  s.drift = [](const double*, double* out) { out[0] = 0.0; };
  s.dispersion = [](const double*, double* out) { out[0] = 0.0; };
  s.drift_jacobian = [](const double*, double* out) { out[0] = 0.0; };
  s.dispersion_jacobian = [](const double*, double* out) { out[0] = 0.0; };
  s.require_elliptic = false;
  s.init = Init::fixed;
  s.init_value = {0.0};
  return s;
}

double DiffusionSpec::drift1(double y) const {
  double out;
  drift(&y, &out);
  return out;
}

double DiffusionSpec::dispersion1(double y) const {
  double out;
  dispersion(&y, &out);
  return out;
}

double DiffusionSpec::q1(double y) const {
  const double s = dispersion1(y);
  return s * s;
}

double DiffusionSpec::drift_dy(double y) const {
  if (drift_jacobian) {
    double out;
    drift_jacobian(&y, &out);
    return out;
  }
  return (drift1(y + kNumDiffStep) - drift1(y - kNumDiffStep)) / (2.0 * kNumDiffStep);
}

double DiffusionSpec::dispersion_dy(double y) const {
  if (dispersion_jacobian) {
    double out;
    dispersion_jacobian(&y, &out);
    return out;
  }
  return (dispersion1(y + kNumDiffStep) - dispersion1(y - kNumDiffStep)) / (2.0 * kNumDiffStep);
}

double DriverPath::value_at(double s, int comp) const {
  if (s <= 0.0) return value_at_index(0, comp);
  int k = static_cast<int>(s / h);
  const int last = steps();
  if (k > last) k = last;
  return value_at_index(k, comp);
}

double MalliavinPath::frobenius(int k) const {
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double v = entry(k, i, j);
      s += v * v;
    }
  return std::sqrt(s);
}

double InvariantDensity::value_at(double yy) const {
  if (y.empty() || yy < y.front() || yy > y.back()) return 0.0;
  const double h = spacing();
  const size_t i = std::min(y.size() - 2, static_cast<size_t>((yy - y.front()) / h));
  const double t = (yy - y[i]) / h;
  return (1.0 - t) * rho[i] + t * rho[i + 1];
}

double InvariantDensity::sample(double u) const {
  const double h = spacing();
  std::vector<double> cdf = cumtrapz(rho, h);
  const double target = u * cdf.back();
  auto it = std::lower_bound(cdf.begin(), cdf.end(), target);
  size_t i = static_cast<size_t>(std::distance(cdf.begin(), it));
  if (i == 0) return y.front();
  if (i >= cdf.size()) return y.back();
  const double seg = cdf[i] - cdf[i - 1];
  const double t = seg > 0.0 ? (target - cdf[i - 1]) / seg : 0.0;
  return y[i - 1] + t * h;
}

std::vector<double> uniform_grid(double lo, double hi, int points) {
  if (points < 2) throw std::invalid_argument("uniform_grid: need at least 2 points");
  std::vector<double> g(points);
  const double h = (hi - lo) / (points - 1);
  for (int i = 0; i < points; ++i) g[i] = lo + i * h;
  return g;
}

namespace {

void check_ellipticity_1d(const DiffusionSpec& spec) {
  const double Y = spec.working_range;
  for (int i = 0; i <= 64; ++i) {
    const double y = -Y + 2.0 * Y * i / 64.0;
    if (spec.q1(y) <= 0.0)
      throw std::invalid_argument("simulate_driver: dispersion is not elliptic on the working range");
  }
}

double stationary_initial(const DiffusionSpec& spec, GaussianStream& rng) {
  if (spec.exact_gaussian) {
    const double sd = spec.ou_sigma / std::sqrt(2.0 * spec.ou_theta);
    return sd * rng.normal();
  }
  auto grid = uniform_grid(-spec.working_range, spec.working_range, 2049);
  const InvariantDensity rho = invariant_density_1d(spec, grid);
  return rho.sample(rng.uniform());
}

}  // namespace

DriverPath simulate_driver(const DiffusionSpec& spec, double horizon, double h, uint64_t seed) {
  require_n1(spec, "simulate_driver");
  if (h <= 0.0) throw std::invalid_argument("simulate_driver: h must be positive");
  if (h >= 1.0) throw std::invalid_argument("simulate_driver: h must be below 1");
  if (horizon < h) throw std::invalid_argument("simulate_driver: horizon must cover at least one step");
  if (spec.require_elliptic) check_ellipticity_1d(spec);

  const int steps = static_cast<int>(std::ceil(horizon / h - 1e-12));
  DriverPath p;
  p.n = 1;
  p.h = h;
  p.horizon = steps * h;
  p.seed = seed;
  p.values.resize(steps + 1);
  p.increments.resize(steps);

  GaussianStream rng(seed);
  double xi;
  if (spec.init == DiffusionSpec::Init::fixed) {
    if (spec.init_value.empty()) throw std::invalid_argument("simulate_driver: missing fixed initial value");
    xi = spec.init_value[0];
  } else {
    xi = stationary_initial(spec, rng);
  }
  p.values[0] = xi;

  const double sqrth = std::sqrt(h);
  if (spec.exact_gaussian) {
    // Exact Gaussian transition; the per-step normal doubles as the
    // Brownian increment so downstream consumers stay pathwise consistent.
    const double m = std::exp(-spec.ou_theta * h);
    const double sd = spec.ou_sigma * std::sqrt((1.0 - m * m) / (2.0 * spec.ou_theta));
    for (int k = 0; k < steps; ++k) {
      const double z = rng.normal();
      p.increments[k] = sqrth * z;
      xi = m * xi + sd * z;
      p.values[k + 1] = xi;
    }
  } else {
    for (int k = 0; k < steps; ++k) {
      const double z = rng.normal();
      const double dB = sqrth * z;
      p.increments[k] = dB;
      xi = xi + spec.drift1(xi) * h + spec.dispersion1(xi) * dB;
      p.values[k + 1] = xi;
    }
  }
  return p;
}

MalliavinPath simulate_malliavin(const DiffusionSpec& spec, const DriverPath& path, double r) {
  require_n1(spec, "simulate_malliavin");
  if (r < 0.0 || r > path.horizon + 1e-12)
    throw std::invalid_argument("simulate_malliavin: r outside the path support");
  const double ridx_real = r / path.h;
  const int ridx = static_cast<int>(std::llround(ridx_real));
  if (std::abs(ridx_real - ridx) > 1e-9)
    throw std::invalid_argument("simulate_malliavin: r must lie on the path time grid");

  const int steps = path.steps() - ridx;
  MalliavinPath m;
  m.n = 1;
  m.h = path.h;
  m.r = ridx * path.h;
  m.r_index = ridx;
  m.horizon = path.horizon;
  m.values.resize(steps + 1);

  double z = spec.dispersion1(path.value_at_index(ridx));
  m.values[0] = z;
  const double h = path.h;
  for (int k = 0; k < steps; ++k) {
    const double xi0 = path.value_at_index(ridx + k);
    const double xi1 = path.value_at_index(ridx + k + 1);
    const double b0 = spec.drift_dy(xi0);
    const double b1 = spec.drift_dy(xi1);
    const double s0 = spec.dispersion_dy(xi0);
    // Trapezoid in the drift, Euler-Maruyama in the noise.
    const double pred = z * (1.0 + h * b0);
    z = z + 0.5 * h * (b0 * z + b1 * pred) + s0 * z * path.increments[ridx + k];
    m.values[k + 1] = z;
  }
  return m;
}

double psi_sup(const MalliavinPath& m, double horizon) {
  if (horizon > m.horizon + 1e-12)
    throw std::invalid_argument("psi_sup: horizon exceeds the path support");
  const int last = std::min<int>(static_cast<int>(m.values.size()) / (m.n * m.n) - 1,
                                 static_cast<int>(std::floor((horizon - m.r) / m.h + 1e-9)));
  double sup = 0.0;
  for (int k = 0; k <= last; ++k) sup = std::max(sup, m.frobenius(k));
  return sup;
}

ConditionSReport check_condition_S_1d(const DiffusionSpec& spec, double p,
                                      const std::vector<double>& y_grid) {
  require_n1(spec, "check_condition_S_1d");
  if (p < 2.0) throw std::invalid_argument("check_condition_S_1d: p must be at least 2");
  ConditionSReport rep;
  double sup = -std::numeric_limits<double>::infinity();
  for (double y : y_grid) {
    const double ds = spec.dispersion_dy(y);
    sup = std::max(sup, spec.drift_dy(y) + 0.5 * (p - 1.0) * ds * ds);
  }
  rep.sup = sup;
  rep.holds = sup < 0.0;
  rep.margin = -sup;
  return rep;
}

InvariantDensity invariant_density_1d(const DiffusionSpec& spec, const std::vector<double>& y_grid) {
  require_n1(spec, "invariant_density_1d");
  if (y_grid.size() < 16) throw std::invalid_argument("invariant_density_1d: grid too coarse");
  const double h = y_grid[1] - y_grid[0];

  // log rho = int_0^y 2 b / q - log q, up to the normalizing constant;
  // the lower integration limit only shifts the constant. Cumulative
  // Simpson with midpoint evaluations (the integrand is closed form).
  auto f = [&spec](double y) { return 2.0 * spec.drift1(y) / spec.q1(y); };
  std::vector<double> W(y_grid.size(), 0.0);
  for (size_t i = 1; i < y_grid.size(); ++i) {
    const double a = y_grid[i - 1], b = y_grid[i];
    W[i] = W[i - 1] + h / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
  }
  std::vector<double> logrho(y_grid.size());
  double lmax = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < y_grid.size(); ++i) {
    logrho[i] = W[i] - std::log(spec.q1(y_grid[i]));
    lmax = std::max(lmax, logrho[i]);
  }

  InvariantDensity d;
  d.y = y_grid;
  d.rho.resize(y_grid.size());
  for (size_t i = 0; i < y_grid.size(); ++i) d.rho[i] = std::exp(logrho[i] - lmax);

  // a non-confining drift piles mass at the grid ends; on the default
  // working range [-8, 8] admissible densities sit below 1e-12 there
  const double tail = std::max(d.rho.front(), d.rho.back());
  if (!(tail < 1e-6))
    throw std::runtime_error("invariant_density_1d: density does not decay at the grid ends "
                             "(confinement violated or the range is too small)");

  const double mass = trapz(d.rho, h);
  if (!(mass > 0.0) || !std::isfinite(mass))
    throw std::runtime_error("invariant_density_1d: non-integrable density");
  for (double& v : d.rho) v /= mass;
  return d;
}

double CoefficientModel::eval(double z, double y) const {
  switch (kind) {
    case Kind::constant:
      return c0(0.0);
    case Kind::space_only:
      return c0(z);
    case Kind::separable_additive:
      return c0(z) + c1(z) * link(y);
    case Kind::multiplicative:
      return link(y) * c0(z);
    case Kind::general:
      return general_fn(z, y);
  }
  return 0.0;
}

CoefficientModel CoefficientModel::constant(double value) {
  CoefficientModel m;
  m.kind = Kind::constant;
  m.c0 = [value](double) { return value; };
  m.c1 = [](double) { return 0.0; };
  m.link = [](double) { return 0.0; };
  m.lambda = std::min(value, 1.0 / value);
  return m;
}

CoefficientModel CoefficientModel::space_only(std::function<double(double)> profile, double lambda) {
  CoefficientModel m;
  m.kind = Kind::space_only;
  m.c0 = std::move(profile);
  m.c1 = [](double) { return 0.0; };
  m.link = [](double) { return 0.0; };
  m.lambda = lambda;
  return m;
}

CoefficientModel CoefficientModel::separable_additive(std::function<double(double)> c0,
                                                      std::function<double(double)> c1,
                                                      std::function<double(double)> g, double lambda) {
  CoefficientModel m;
  m.kind = Kind::separable_additive;
  m.c0 = std::move(c0);
  m.c1 = std::move(c1);
  m.link = std::move(g);
  m.lambda = lambda;
  return m;
}

CoefficientModel CoefficientModel::multiplicative(std::function<double(double)> profile,
                                                  std::function<double(double)> g, double lambda) {
  CoefficientModel m;
  m.kind = Kind::multiplicative;
  m.c0 = std::move(profile);
  m.c1 = [](double) { return 0.0; };
  m.link = std::move(g);
  m.lambda = lambda;
  return m;
}

CoefficientModel CoefficientModel::general(std::function<double(double, double)> a, double lambda) {
  CoefficientModel m;
  m.kind = Kind::general;
  m.general_fn = std::move(a);
  m.lambda = lambda;
  return m;
}

double coefficient_at(const CoefficientModel& model, double z, double y) {
  const double v = model.eval(z - std::floor(z), y);
  if (!(v >= model.lambda) || !(v <= 1.0 / model.lambda))
    throw std::runtime_error("coefficient_at: ellipticity violated at evaluation "
                             "(value " + format_g17(v) + ")");
  return v;
}

GridField coefficient_slice(const CoefficientModel& model, const TorusGrid& g, double y) {
  if (g.dim != 1) throw std::invalid_argument("coefficient_slice: coefficient models are 1d");
  GridField f(g, 1);
  for (int i = 0; i < g.nodes(); ++i) f(i, 0) = coefficient_at(model, g.coord(i)[0], y);
  return f;
}

void validate_model(const CoefficientModel& model, double Y) {
  for (int j = 0; j <= 32; ++j) {
    const double y = -Y + 2.0 * Y * j / 32.0;
    for (int i = 0; i < 128; ++i) coefficient_at(model, i / 128.0, y);
  }
}

}  // namespace homog
