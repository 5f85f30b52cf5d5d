#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "homog/random_media.hpp"
#include "homog/torus.hpp"

namespace homog {

struct CellOptions {
  double tol = 1e-10;          // relative residual
  int max_iter_per_n = 10;     // iteration cap = max_iter_per_n * n
};

struct CellSolveReport {
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Zero-mean periodic solution of div(a grad u) = rhs (componentwise),
/// by preconditioned conjugate gradients in the zero-mean subspace with
/// a constant-coefficient spectral preconditioner.
GridField solve_cell(const GridField& a, const GridField& rhs, const CellOptions& opts = {},
                     CellSolveReport* report = nullptr);

/// First corrector: div(a grad chi0) = -div a, zero mean per component.
GridField solve_corrector0(const GridField& a_slice, const CellOptions& opts = {},
                           CellSolveReport* report = nullptr);

/// Number of cascade orders before the fluctuation scale dominates:
/// floor(alpha / (2 (2 - alpha))) + 1, for 0 < alpha < 2.
int j0_order(double alpha);

/// How the cascade right-hand sides are produced: finite differences in
/// the slice time (smooth-in-time media) or the driver generator acting
/// in y (diffusion-driven media).
enum class CascadeKind { time_sliced, generator };

struct CascadeInput {
  CascadeKind kind = CascadeKind::time_sliced;
  std::vector<double> coords;          // uniform slice times or y values
  std::vector<GridField> a_slices;     // coefficient per slice
  const DiffusionSpec* driver = nullptr;  // generator kind: supplies q, b
};

/// chi^j fields per order (0..order) and slice, all re-centered to zero
/// mean; residual reports kept per order/slice.
struct CorrectorSet {
  CascadeKind kind = CascadeKind::time_sliced;
  int order = 0;
  std::vector<double> coords;
  std::vector<GridField> a_slices;
  // chi[j][k]: corrector of order j on slice k (vector-valued, dim comps)
  std::vector<std::vector<GridField>> chi;
  // rhs[j][k]: right-hand side used for chi[j][k], j >= 1
  std::vector<std::vector<GridField>> rhs;

  int slices() const { return static_cast<int>(coords.size()); }
  const TorusGrid& grid() const { return a_slices.front().grid(); }
};

/// Builds chi^0..chi^order. time_sliced: rhs_j = d_s chi^{j-1} by 4th
/// order differences along slices. generator: rhs_j = -(q/2 d_yy + b d_y)
/// chi^{j-1} by 4th order differences on the y-grid. Throws when a right
/// hand side fails the zero-mean compatibility check.
CorrectorSet corrector_cascade(const CascadeInput& input, int order, const CellOptions& opts = {});

/// Coefficient slices over a y-grid (generator cascade input).
CascadeInput generator_input(const CoefficientModel& model, const DiffusionSpec& driver,
                             const std::vector<double>& y_grid, const TorusGrid& g);
/// Coefficient slices along a simulated driver path (time-sliced input).
CascadeInput time_sliced_input(const CoefficientModel& model, const DriverPath& path,
                               const TorusGrid& g);

/// Slice cache for corrector solves keyed by quantized driver value;
/// concurrent insert-or-get, entries are value-identical by construction.
class CorrectorCache {
 public:
  GridField corrector0(const CoefficientModel& model, const TorusGrid& g, double y,
                       const CellOptions& opts = {});
  size_t size() const;
  static constexpr double quantum = 1e-6;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_ = make_impl();
  static std::shared_ptr<Impl> make_impl();
};

/// Weights for the ensemble average over slices, normalized to sum 1.
std::vector<double> uniform_weights(int count);
std::vector<double> density_weights(const InvariantDensity& rho, const std::vector<double>& coords);

struct EffectiveTensors {
  int dim = 1;
  Eigen::MatrixXd a_eff;                  // d x d
  std::vector<Eigen::MatrixXd> a_k_eff;   // orders 1..J0
  Eigen::MatrixXd lambda;                 // d^2 x d^2 (may be empty)
  Eigen::MatrixXd lambda_sqrt;
};

/// a_eff = E int (a + a grad chi0) dz with E realized by the weights.
/// Throws when the result is asymmetric beyond 1e-8.
Eigen::MatrixXd effective_matrix(const CorrectorSet& set, const std::vector<double>& weights);

/// a_{k,eff} = E int a grad chi^k dz; the divergence-form companion is
/// evaluated as well and both readings must agree within 1e-8.
Eigen::MatrixXd higher_effective(int k, const CorrectorSet& set, const std::vector<double>& weights);

/// Spatially averaged fluctuation of the corrected flux about its
/// effective value, per slice: order 0 uses a + a grad chi0, higher
/// orders a grad chi^k.
struct FluctuationSeries {
  CascadeKind kind = CascadeKind::time_sliced;
  int order = 0;
  int dim = 1;
  std::vector<double> coords;
  std::vector<Eigen::MatrixXd> values;  // d x d per slice

  double scalar(int k) const { return values[k](0, 0); }
};

FluctuationSeries fluctuation_series(const CorrectorSet& set, const std::vector<double>& weights,
                                     int order = 0);

/// L2 residual of div(a grad chi^j) - rhs_j on a slice, evaluated with
/// an independent spectral pass (not the solver internals).
double cascade_residual(const CorrectorSet& set, int order, int slice);

std::string tensors_to_json(const EffectiveTensors& t);
EffectiveTensors tensors_from_json(const std::string& text);
std::string correctors_to_json(const CorrectorSet& set);
CorrectorSet correctors_from_json(const std::string& text);

}  // namespace homog
