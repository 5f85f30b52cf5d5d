#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "homog/random_media.hpp"

namespace homog {

/// Truncated spatial box [-L, L] with m uniform points and homogeneous
/// Dirichlet walls. Everything tracked on it must stay below 1e-10 near
/// the walls for the whole horizon (checked post hoc on solves).
struct BoxDomain {
  double half_width = 6.0;
  int m = 1024;

  double dx() const { return 2.0 * half_width / (m - 1); }
  double x(int i) const { return -half_width + i * dx(); }
};

struct SpaceTimeField {
  BoxDomain domain;
  double t0 = 0.0;
  double dt = 0.0;
  int store_stride = 1;
  int stored = 0;  // stored time slices (steps/stride + 1)
  std::vector<double> values;
  bool boundary_ok = true;
  double boundary_max = 0.0;

  double stored_dt() const { return dt * store_stride; }
  double time_of(int k) const { return t0 + k * stored_dt(); }
  double final_time() const { return time_of(stored - 1); }
  const double* slice(int k) const { return values.data() + static_cast<size_t>(k) * domain.m; }
  double* slice(int k) { return values.data() + static_cast<size_t>(k) * domain.m; }
  double at(int k, int i) const { return values[static_cast<size_t>(k) * domain.m + i]; }
};

struct EvolveOptions {
  int store_stride = 1;
  // Backward-Euler startup steps; damps the high modes of delta-like
  // initial data that plain Crank-Nicolson would keep oscillating.
  int rannacher_steps = 0;
  std::function<double(double, double)> forcing;  // f(x, t), evaluated at midpoints
  // additive per-step increment (index, buffer of size m), added to the step
  std::function<void(int, std::vector<double>&)> increment;
};

struct FineOptions {
  double c1 = 0.125;  // dt <= c1 * eps^2
  double c2 = 4.0;    // dt <= c2 * eps^alpha * h_driver
  int store_stride = 1;
  int rannacher_steps = 0;
  std::function<double(double, double)> forcing;
};

/// Crank-Nicolson in divergence form with per-step face coefficients
/// frozen at the midpoint time; tridiagonal solve per step.
SpaceTimeField evolve(const BoxDomain& domain, std::vector<double> initial, double t0, double dt,
                      int steps,
                      const std::function<void(double, std::vector<double>&)>& face_coefficients,
                      const EvolveOptions& opts = {});

/// Constant-coefficient evolution of given initial data.
SpaceTimeField solve_const_from(double a_const, std::vector<double> initial, double t0, double dt,
                                int steps, const BoxDomain& domain, const EvolveOptions& opts = {});

/// Fine-scale problem d_t u = div(a(x/eps, xi_{t/eps^alpha}) grad u).
/// Preconditions: dt <= c1 eps^2, dt <= c2 eps^alpha h_driver, and
/// m eps / (2L) >= 16 (at least 16 cells per oscillation period).
SpaceTimeField solve_fine(const CoefficientModel& model, const DriverPath& driver, double eps,
                          double alpha, const std::function<double(double)>& phi,
                          const BoxDomain& domain, double dt, double T,
                          const FineOptions& opts = {});

/// Homogenized problem with constant coefficient a_eff.
SpaceTimeField solve_homogenized(double a_eff, const std::function<double(double)>& phi,
                                 const BoxDomain& domain, double dt, double T,
                                 const EvolveOptions& opts = {});

/// Order-j cascade problem: d_t u^j = div(a_eff grad u^j)
/// + sum_k a_{k,eff} d_xx u^{j-k},  u^j(.,0) = 0. lower[i] is u^i and
/// must share the grid, stride 1, with u^j's stepping.
SpaceTimeField solve_cascade_pde(int j, double a_eff, const std::vector<double>& a_k_eff,
                                 const std::vector<const SpaceTimeField*>& lower,
                                 const BoxDomain& domain, double dt);

/// Additive-noise limit equation: Crank-Nicolson drift plus the
/// increment lambda_sqrt * d_xx u0(., t_k) dW_k, started from zero.
SpaceTimeField solve_limit_spde(double a_eff, double lambda_sqrt, const SpaceTimeField& u0,
                                const std::vector<double>& dW, const BoxDomain& domain, double dt);

/// Seeded Brownian increments with variance dt.
std::vector<double> brownian_increments(int steps, double dt, uint64_t seed);

/// Fine-scale solve started from a unit-mass Gaussian of width 2 dx at
/// (y0, s0); a delta approximation of the fundamental solution.
SpaceTimeField fundamental_probe(const CoefficientModel& model, const DriverPath& driver,
                                 double eps, double alpha, double y0, double s0,
                                 const BoxDomain& domain, double dt, double T,
                                 const FineOptions& opts = {});

enum class BoundKind { value, gradient };

/// Tightest Gaussian majorant v <= c tau^{-d/2} exp(-C |x-y0|^2 / tau)
/// (gradient: extra tau^{-1/2} factor) over all samples above the floor
/// and outside the initial layer, fitted as a linear program in
/// (log c, C) on log-transformed samples.
struct GaussianBoundFit {
  BoundKind kind = BoundKind::value;
  double c = 0.0;
  double C = 0.0;
  size_t samples = 0;
  size_t violations = 0;
  double max_violation = 0.0;  // log-scale slack above the fitted bound
  double mean_slack = 0.0;
  double peak = 0.0;
  double floor = 0.0;
};

GaussianBoundFit fit_gaussian_bound(const std::vector<const SpaceTimeField*>& probes,
                                    BoundKind kind, double y0, double floor_rel = 1e-8,
                                    int skip_steps = 20);

/// Trapezoid integral over the box of one stored slice.
double slice_mass(const SpaceTimeField& f, int k);
double slice_l2(const SpaceTimeField& f, int k);
/// Space-time L2 norm over the stored grid.
double space_time_l2(const SpaceTimeField& f);

/// Run provenance carried in the sidecar of a saved field.
struct FieldProvenance {
  uint64_t seed = 0;
  double eps = 0.0;
  double alpha = 0.0;
  std::string model_id;
};

/// Flat binary layout: header m, steps, dt, dx, L as little-endian
/// 64-bit integers/floats, then the values row-major; provenance and
/// the remaining grid metadata go to a JSON sidecar at path + ".json".
void save_field(const SpaceTimeField& f, const std::string& path, const FieldProvenance& prov);
SpaceTimeField load_field(const std::string& path, FieldProvenance* prov = nullptr);

}  // namespace homog
