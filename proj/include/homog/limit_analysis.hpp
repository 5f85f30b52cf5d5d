#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "homog/cell_problems.hpp"
#include "homog/parabolic.hpp"
#include "homog/random_media.hpp"

namespace homog {

/// d^2 x d^2 covariance of the limit noise, with provenance and the
/// batch-means standard error of the empirical route.
struct LimitCovariance {
  enum class Method { correlation, poisson };
  Method method = Method::poisson;
  int dim = 1;
  Eigen::MatrixXd lambda;     // d^2 x d^2, symmetric PSD
  Eigen::MatrixXd stderr_;    // batch-means SE per entry (correlation route)
  double max_lag = 0.0;
  double horizon = 0.0;
  int batches = 0;

  double scalar() const { return lambda(0, 0); }
  double scalar_se() const { return stderr_.size() > 0 ? stderr_(0, 0) : 0.0; }
};

/// Long-run covariance of the stationary matrix series by integrated
/// autocovariance (both orderings summed, trapezoid up to max_lag).
/// Requires horizon >= 10 * max_lag. Batch-means SE attached.
LimitCovariance lambda_from_correlation(const FluctuationSeries& xi, double max_lag,
                                        int batches = 32);

/// Fitted exponential decay time of the leading autocovariance entry;
/// the default integration window is 20 of these.
double estimate_relaxation_time(const FluctuationSeries& xi);

/// Poisson-equation route on the y-grid: solve L Q = bracket via
/// q rho Q' / 2 = int bracket rho, then Lambda = int Q' q Q' rho.
/// Precondition: int bracket rho dy = 0 within 1e-6.
LimitCovariance lambda_from_poisson_1d(const DiffusionSpec& spec, const FluctuationSeries& bracket,
                                       const InvariantDensity& rho);

/// Symmetric PSD square root by eigendecomposition; eigenvalues below
/// -1e-10 are an error, those in [-1e-10, 0) are clamped to zero.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& lambda);

/// U = eps^{-alpha/2} (u_eps - u0 - sum_j eps^{j(2-alpha)} u^j).
SpaceTimeField assemble_U(const SpaceTimeField& u_eps, const SpaceTimeField& u0,
                          const std::vector<const SpaceTimeField*>& cascade, double eps,
                          double alpha);

/// Full ansatz including the oscillating corrector layers
/// eps^{j delta + 1} chi^j(x/eps, xi_{t/eps^alpha}) d_x u^k; correctors
/// come from a generator-kind set indexed by driver value.
SpaceTimeField assemble_V(const SpaceTimeField& u_eps, const SpaceTimeField& u0,
                          const std::vector<const SpaceTimeField*>& cascade,
                          const CorrectorSet& correctors, const DriverPath& driver, double eps,
                          double alpha);

struct RateFit {
  std::vector<double> eps;
  std::vector<double> norms;
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // rms residual of the log-log fit
};

/// Least-squares slope of log(norm) against log(eps); needs >= 3
/// strictly positive norms.
RateFit fit_rate(const std::vector<double>& eps_list, const std::vector<double>& norms);

/// Var<v0, psi> for the additive-noise limit equation by the isometry:
/// for each s on a coarse grid, one deterministic constant-coefficient
/// solve from s with initial data lambda_sqrt * d_xx u0(., s).
double functional_variance_spde(const std::function<double(double, double)>& psi,
                                double lambda_sqrt, const SpaceTimeField& u0, double a_eff,
                                const BoxDomain& domain, double dt, int s_stride = 16);

/// <f, psi> integrated over the stored space-time grid.
double functional_against(const SpaceTimeField& f,
                          const std::function<double(double, double)>& psi);

struct InvarianceRow {
  double eps = 0.0;
  int replicate = 0;
  double zeta_T = 0.0;   // eps^{alpha/2} * int_0^{T/eps^alpha} bracket(xi)
  double zeta_2T = 0.0;
};

struct InvarianceResult {
  std::vector<InvarianceRow> rows;
  struct PerEps {
    double eps = 0.0;
    double var_T = 0.0, se_T = 0.0;
    double var_2T = 0.0, se_2T = 0.0;
  };
  std::vector<PerEps> aggregates;
};

/// Empirical variance of the rescaled integrated bracket at horizons T
/// and 2T per epsilon, for comparison against Lambda * T.
InvarianceResult invariance_probe(const std::function<double(double)>& bracket,
                                  const DiffusionSpec& spec, const std::vector<double>& eps_list,
                                  double alpha, double T, int replicates, double h,
                                  uint64_t base_seed);

/// One line of a method-comparison table.
struct ComparisonRow {
  std::string quantity;
  std::string method;
  double value = 0.0;
  double stderr_ = 0.0;
  double tolerance = 0.0;
  bool pass = true;
};

/// CSV with columns quantity, method, value, stderr, tolerance, pass.
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

}  // namespace homog
