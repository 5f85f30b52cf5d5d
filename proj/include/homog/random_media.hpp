#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "homog/torus.hpp"

namespace homog {

/// Driving diffusion d(xi) = b(xi) dt + sigma(xi) dB with generator
/// L = (1/2) q d^2 + b d, q = sigma sigma^T. Callables act on flat
/// arrays sized n (vectors) and n*n row-major (matrices); only n = 1
/// is exercised at desk scale.
struct DiffusionSpec {
  int n = 1;
  std::function<void(const double*, double*)> drift;            // y -> b
  std::function<void(const double*, double*)> dispersion;       // y -> sigma (n x n)
  // Optional analytic derivatives; central differences are used when absent.
  std::function<void(const double*, double*)> drift_jacobian;   // [i*n+j] = d b_i / d y_j
  // [l*n*n + i*n + j] = d sigma_{i,l} / d y_j
  std::function<void(const double*, double*)> dispersion_jacobian;

  // Linear drift with constant dispersion admits an exact Gaussian
  // transition; the integrator uses it when this flag is set.
  bool exact_gaussian = false;
  double ou_theta = 1.0;
  double ou_sigma = 1.0;

  bool require_elliptic = true;
  double working_range = 8.0;  // [-Y, Y] where ellipticity and bounds are enforced

  enum class Init { stationary, fixed };
  Init init = Init::stationary;
  std::vector<double> init_value;

  static DiffusionSpec ornstein_uhlenbeck(double theta, double sigma);
  /// Scalar SDE from closed-form callables, analytic derivatives optional.
  static DiffusionSpec scalar(std::function<double(double)> b, std::function<double(double)> sigma,
                              std::function<double(double)> db = {},
                              std::function<double(double)> dsigma = {});
  /// sigma = 0, b = 0, started at 0; for degenerate-path tests.
  static DiffusionSpec degenerate_zero();

  double drift1(double y) const;       // scalar shorthands (n == 1)
  double dispersion1(double y) const;
  double q1(double y) const;           // sigma^2
  double drift_dy(double y) const;
  double dispersion_dy(double y) const;
};

/// One realization of the driver on a uniform time grid, together with
/// the Brownian increments that produced it (reused by the Malliavin
/// path for pathwise consistency).
struct DriverPath {
  int n = 1;
  double h = 0.0;
  double horizon = 0.0;
  uint64_t seed = 0;
  std::vector<double> values;      // (steps+1) * n
  std::vector<double> increments;  // steps * n

  int steps() const { return n == 0 ? 0 : static_cast<int>(increments.size()) / n; }
  /// Piecewise-constant lookup at time s (clamped to the grid).
  double value_at(double s, int comp = 0) const;
  double value_at_index(int k, int comp = 0) const { return values[static_cast<size_t>(k) * n + comp]; }
};

/// Matrix path Z_t = D_r xi_t for t >= r (flattened n x n per step).
struct MalliavinPath {
  int n = 1;
  double h = 0.0;
  double r = 0.0;
  int r_index = 0;
  double horizon = 0.0;
  std::vector<double> values;  // (steps_from_r + 1) * n * n

  double entry(int k, int i, int j) const {
    return values[(static_cast<size_t>(k) * n + i) * n + j];
  }
  double frobenius(int k) const;
};

/// Stationary density on a uniform y-grid, normalized to unit mass.
struct InvariantDensity {
  std::vector<double> y;
  std::vector<double> rho;

  double spacing() const { return y.size() > 1 ? y[1] - y[0] : 0.0; }
  double value_at(double yy) const;  // linear interpolation, 0 outside
  /// Inverse-CDF sample from a uniform draw in [0,1).
  double sample(double u) const;
};

struct ConditionSReport {
  bool holds = false;
  double margin = 0.0;  // -sup of the criterion; positive when it holds
  double sup = 0.0;
};

DriverPath simulate_driver(const DiffusionSpec& spec, double horizon, double h, uint64_t seed);

MalliavinPath simulate_malliavin(const DiffusionSpec& spec, const DriverPath& path, double r);

/// sup over grid times in [r, horizon] of the Frobenius norm of Z_t.
double psi_sup(const MalliavinPath& m, double horizon);

/// One-dimensional criterion for the uniform Malliavin moment bound:
/// sup_y [ b'(y) + ((p-1)/2) sigma'(y)^2 ] <= -c for some c > 0.
ConditionSReport check_condition_S_1d(const DiffusionSpec& spec, double p,
                                      const std::vector<double>& y_grid);

/// rho = C q^{-1} exp(int_0^y 2 b / q); throws when the density does not
/// decay below 1e-12 at the grid ends (confinement violated).
InvariantDensity invariant_density_1d(const DiffusionSpec& spec, const std::vector<double>& y_grid);

std::vector<double> uniform_grid(double lo, double hi, int points);

/// Spatially periodic coefficient profile a(z,y), d = 1: scalar-valued,
/// elliptic in [lambda, 1/lambda] on the working range.
struct CoefficientModel {
  enum class Kind { constant, space_only, separable_additive, multiplicative, general };
  Kind kind = Kind::constant;
  double lambda = 0.25;
  std::function<double(double)> c0;           // spatial base
  std::function<double(double)> c1;           // spatial contrast
  std::function<double(double)> link;         // driver link g(y)
  std::function<double(double, double)> general_fn;

  double eval(double z, double y) const;
  bool separable() const {
    return kind == Kind::constant || kind == Kind::space_only || kind == Kind::separable_additive;
  }

  static CoefficientModel constant(double value);
  static CoefficientModel space_only(std::function<double(double)> profile, double lambda);
  /// a(z,y) = c0(z) + c1(z) * g(y)
  static CoefficientModel separable_additive(std::function<double(double)> c0,
                                             std::function<double(double)> c1,
                                             std::function<double(double)> g, double lambda);
  /// a(z,y) = g(y) * profile(z), g > 0
  static CoefficientModel multiplicative(std::function<double(double)> profile,
                                         std::function<double(double)> g, double lambda);
  /// arbitrary closed-form a(z,y)
  static CoefficientModel general(std::function<double(double, double)> a, double lambda);
};

/// Evaluates a(z,y) and enforces the ellipticity window; guards model
/// misconfiguration at the point of use.
double coefficient_at(const CoefficientModel& model, double z, double y);

/// Coefficient slice a(. , y) as a (1x1 matrix-valued) grid field.
GridField coefficient_slice(const CoefficientModel& model, const TorusGrid& g, double y);

/// Ellipticity of the model over a probe grid in z and over [-Y, Y].
void validate_model(const CoefficientModel& model, double Y = 8.0);

}  // namespace homog
