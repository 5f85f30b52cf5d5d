#include "homog/cell_problems.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include "json.hpp"

namespace homog {

namespace {

// flux^{ij} = a^{im} (grad chi)^{mj}; chi vector-valued with d comps.
GridField flux_of(const GridField& a, const GridField& chi) {
  const int d = a.grid().dim;
  const GridField g = gradient(chi);  // (m,j) at m*d+j
  GridField flux(a.grid(), d * d);
  for (int node = 0; node < a.nodes(); ++node)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int m = 0; m < d; ++m) s += a(node, i * d + m) * g(node, m * d + j);
        flux(node, i * d + j) = s;
      }
  return flux;
}

GridField apply_div_a_grad(const GridField& a, const GridField& chi) {
  return divergence(flux_of(a, chi));
}

double mean_diffusivity(const GridField& a) {
  const int d = a.grid().dim;
  const auto m = mean(a);
  double tr = 0.0;
  for (int i = 0; i < d; ++i) tr += m[i * d + i];
  return tr / d;
}

void subtract_mean(GridField& f) {
  const auto m = mean(f);
  for (int node = 0; node < f.nodes(); ++node)
    for (int c = 0; c < f.ncomp(); ++c) f(node, c) -= m[c];
}

// 4th-order uniform-grid differentiation stencils; offsets relative to
// the evaluation slice. Rows: left edge, offset-1, centered, and the
// right-side mirrors are derived at use.
struct Stencil {
  std::vector<int> off;
  std::vector<double> w;  // divided by h or h^2 at use
};

const Stencil kD1Center{{-2, -1, 1, 2}, {1.0 / 12, -8.0 / 12, 8.0 / 12, -1.0 / 12}};
const Stencil kD1Edge{{0, 1, 2, 3, 4}, {-25.0 / 12, 48.0 / 12, -36.0 / 12, 16.0 / 12, -3.0 / 12}};
const Stencil kD1Off1{{-1, 0, 1, 2, 3}, {-3.0 / 12, -10.0 / 12, 18.0 / 12, -6.0 / 12, 1.0 / 12}};

const Stencil kD2Center{{-2, -1, 0, 1, 2}, {-1.0 / 12, 16.0 / 12, -30.0 / 12, 16.0 / 12, -1.0 / 12}};
const Stencil kD2Edge{{0, 1, 2, 3, 4, 5},
                      {45.0 / 12, -154.0 / 12, 214.0 / 12, -156.0 / 12, 61.0 / 12, -10.0 / 12}};
const Stencil kD2Off1{{-1, 0, 1, 2, 3, 4},
                      {10.0 / 12, -15.0 / 12, -4.0 / 12, 14.0 / 12, -6.0 / 12, 1.0 / 12}};

Stencil mirror(const Stencil& s, int deriv) {
  Stencil m;
  m.off.resize(s.off.size());
  m.w.resize(s.w.size());
  for (size_t i = 0; i < s.off.size(); ++i) {
    m.off[i] = -s.off[i];
    m.w[i] = (deriv == 1) ? -s.w[i] : s.w[i];
  }
  return m;
}

const Stencil& pick_stencil(int k, int count, int deriv, Stencil& scratch) {
  const Stencil& center = (deriv == 1) ? kD1Center : kD2Center;
  const Stencil& edge = (deriv == 1) ? kD1Edge : kD2Edge;
  const Stencil& off1 = (deriv == 1) ? kD1Off1 : kD2Off1;
  if (k >= 2 && k + 2 < count) return center;
  if (k == 0) return edge;
  if (k == 1) return off1;
  scratch = mirror(k == count - 1 ? edge : off1, deriv);
  return scratch;
}

// d^deriv/dcoord^deriv of the slice stack at slice k.
GridField slice_derivative(const std::vector<GridField>& fields, int k, double h, int deriv) {
  const int count = static_cast<int>(fields.size());
  Stencil scratch;
  const Stencil& st = pick_stencil(k, count, deriv, scratch);
  GridField out(fields[0].grid(), fields[0].ncomp());
  const double scale = (deriv == 1) ? 1.0 / h : 1.0 / (h * h);
  for (size_t w = 0; w < st.off.size(); ++w) {
    const GridField& f = fields[k + st.off[w]];
    const double c = st.w[w] * scale;
    for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] += c * f.data()[i];
  }
  return out;
}

}  // namespace

GridField solve_cell(const GridField& a, const GridField& rhs, const CellOptions& opts,
                     CellSolveReport* report) {
  const TorusGrid& g = a.grid();
  const int d = g.dim;
  if (a.ncomp() != d * d) throw std::invalid_argument("solve_cell: coefficient must be matrix valued");
  if (rhs.grid() != g) throw std::invalid_argument("solve_cell: grid mismatch");
  for (int node = 0; node < g.nodes() && d > 1; ++node)
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j)
        if (std::abs(a(node, i * d + j) - a(node, j * d + i)) > 1e-12)
          throw std::invalid_argument("solve_cell: coefficient matrix is not symmetric");

  const double abar = mean_diffusivity(a);
  const int max_iter = opts.max_iter_per_n * g.n;
  // roundoff-level right-hand sides (the cascade of a time-independent
  // medium) are accepted at this absolute residual
  const double floor_abs = 1e-14 * std::max(abar, 1.0);

  // A u = -div(a grad u) is symmetric positive definite on the zero-mean
  // subspace; solve A u = -rhs componentwise for scalar u.
  auto apply_A = [&](const GridField& u) {
    const GridField grad = gradient(u);  // d comps
    GridField flux(g, d);
    for (int node = 0; node < g.nodes(); ++node)
      for (int i = 0; i < d; ++i) {
        double s = 0.0;
        for (int m = 0; m < d; ++m) s += a(node, i * d + m) * grad(node, m);
        flux(node, i) = s;
      }
    GridField r = divergence(flux);
    r *= -1.0;
    return r;
  };

  GridField solution(g, rhs.ncomp());
  int total_iters = 0;
  double worst_rel = 0.0;

  for (int c = 0; c < rhs.ncomp(); ++c) {
    GridField b(g, 1);
    for (int node = 0; node < g.nodes(); ++node) b(node, 0) = -rhs(node, c);
    subtract_mean(b);
    const double bnorm = l2_norm(b);
    GridField x(g, 1);
    if (bnorm <= floor_abs) continue;
    const double target = std::max(opts.tol * bnorm, floor_abs);

    GridField r = b;
    GridField z = inverse_neg_laplacian(r, abar);
    GridField p = z;
    double rz = inner(r, z);
    double rnorm = bnorm;
    int it = 0;
    for (; it < max_iter && rnorm > target; ++it) {
      GridField q = apply_A(p);
      const double pq = inner(p, q);
      if (pq <= 0.0) throw std::runtime_error("solve_cell: operator lost positivity");
      const double alpha = rz / pq;
      for (size_t i = 0; i < x.data().size(); ++i) {
        x.data()[i] += alpha * p.data()[i];
        r.data()[i] -= alpha * q.data()[i];
      }
      rnorm = l2_norm(r);
      if (rnorm <= target) break;
      z = inverse_neg_laplacian(r, abar);
      const double rz_new = inner(r, z);
      const double beta = rz_new / rz;
      rz = rz_new;
      for (size_t i = 0; i < p.data().size(); ++i) p.data()[i] = z.data()[i] + beta * p.data()[i];
    }
    if (rnorm > target)
      throw std::runtime_error("solve_cell: conjugate gradients did not converge, residual " +
                               std::to_string(rnorm / bnorm));
    subtract_mean(x);
    for (int node = 0; node < g.nodes(); ++node) solution(node, c) = x(node, 0);
    total_iters += it + 1;
    worst_rel = std::max(worst_rel, rnorm / bnorm);
  }
  if (report) {
    report->iterations = total_iters;
    report->relative_residual = worst_rel;
  }
  return solution;
}

GridField solve_corrector0(const GridField& a_slice, const CellOptions& opts,
                           CellSolveReport* report) {
  GridField rhs = divergence(a_slice);  // (div a)_j
  rhs *= -1.0;
  return solve_cell(a_slice, rhs, opts, report);
}

int j0_order(double alpha) {
  if (!(alpha > 0.0) || !(alpha < 2.0)) throw std::invalid_argument("j0_order: alpha must lie in (0,2)");
  return static_cast<int>(std::floor(alpha / (2.0 * (2.0 - alpha)))) + 1;
}

CorrectorSet corrector_cascade(const CascadeInput& input, int order, const CellOptions& opts) {
  if (input.a_slices.empty()) throw std::invalid_argument("corrector_cascade: no slices");
  if (input.coords.size() != input.a_slices.size())
    throw std::invalid_argument("corrector_cascade: coords / slices mismatch");
  if (order >= 1 && input.a_slices.size() < 6)
    throw std::invalid_argument("corrector_cascade: need at least 6 slices for the cascade");
  if (input.kind == CascadeKind::generator && order >= 1 && input.driver == nullptr)
    throw std::invalid_argument("corrector_cascade: generator cascade needs the driver spec");

  CorrectorSet set;
  set.kind = input.kind;
  set.order = order;
  set.coords = input.coords;
  set.a_slices = input.a_slices;
  set.chi.resize(order + 1);
  set.rhs.resize(order + 1);

  const int K = set.slices();
  set.chi[0].reserve(K);
  for (int k = 0; k < K; ++k) set.chi[0].push_back(solve_corrector0(set.a_slices[k], opts));

  const double h = (K > 1) ? set.coords[1] - set.coords[0] : 1.0;

  for (int j = 1; j <= order; ++j) {
    set.rhs[j].reserve(K);
    set.chi[j].reserve(K);
    for (int k = 0; k < K; ++k) {
      GridField rhs(set.grid(), set.chi[j - 1][0].ncomp());
      if (input.kind == CascadeKind::time_sliced) {
        rhs = slice_derivative(set.chi[j - 1], k, h, 1);
      } else {
        const double y = set.coords[k];
        GridField d1 = slice_derivative(set.chi[j - 1], k, h, 1);
        GridField d2 = slice_derivative(set.chi[j - 1], k, h, 2);
        const double q = input.driver->q1(y);
        const double b = input.driver->drift1(y);
        for (size_t i = 0; i < rhs.data().size(); ++i)
          rhs.data()[i] = -(0.5 * q * d2.data()[i] + b * d1.data()[i]);
      }
      for (double m : mean(rhs))
        if (std::abs(m) > 1e-8)
          throw std::runtime_error("corrector_cascade: compatibility failed, mean(rhs) = " +
                                   std::to_string(m));
      GridField chi = solve_cell(set.a_slices[k], rhs, opts);
      subtract_mean(chi);
      set.rhs[j].push_back(std::move(rhs));
      set.chi[j].push_back(std::move(chi));
    }
  }
  return set;
}

struct CorrectorCache::Impl {
  std::mutex mutex;
  std::map<long long, GridField> entries;
};

std::shared_ptr<CorrectorCache::Impl> CorrectorCache::make_impl() { return std::make_shared<Impl>(); }

GridField CorrectorCache::corrector0(const CoefficientModel& model, const TorusGrid& g, double y,
                                     const CellOptions& opts) {
  const long long key = static_cast<long long>(std::llround(y / quantum));
  {
    std::lock_guard<std::mutex> lock(impl_->mutex);
    auto it = impl_->entries.find(key);
    if (it != impl_->entries.end()) return it->second;
  }
  GridField chi = solve_corrector0(coefficient_slice(model, g, y), opts);
  std::lock_guard<std::mutex> lock(impl_->mutex);
  auto [it, inserted] = impl_->entries.insert_or_assign(key, chi);
  return it->second;
}

size_t CorrectorCache::size() const {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  return impl_->entries.size();
}

std::vector<double> uniform_weights(int count) {
  return std::vector<double>(count, 1.0 / count);
}

std::vector<double> density_weights(const InvariantDensity& rho, const std::vector<double>& coords) {
  // trapezoid weights on the coord grid, rho-weighted, normalized
  std::vector<double> w(coords.size());
  const double h = coords.size() > 1 ? coords[1] - coords[0] : 1.0;
  double total = 0.0;
  for (size_t i = 0; i < coords.size(); ++i) {
    const double trap = (i == 0 || i + 1 == coords.size()) ? 0.5 : 1.0;
    w[i] = trap * h * rho.value_at(coords[i]);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

namespace {

Eigen::MatrixXd slice_flux_mean(const CorrectorSet& set, int order, int slice) {
  const int d = set.grid().dim;
  const GridField& a = set.a_slices[slice];
  const GridField flux = flux_of(a, set.chi[order][slice]);
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(d, d);
  const auto mf = mean(flux);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) F(i, j) = mf[i * d + j];
  if (order == 0) {
    const auto ma = mean(a);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) F(i, j) += ma[i * d + j];
  }
  return F;
}

// mean over the torus of d_m (a^{mi} chi^{k,j}); identically zero for a
// spectral derivative, evaluated literally as the cross-check.
Eigen::MatrixXd slice_divergence_term(const CorrectorSet& set, int order, int slice) {
  const int d = set.grid().dim;
  const GridField& a = set.a_slices[slice];
  const GridField& chi = set.chi[order][slice];
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      GridField v(set.grid(), d);
      for (int node = 0; node < a.nodes(); ++node)
        for (int m = 0; m < d; ++m) v(node, m) = a(node, m * d + i) * chi(node, j);
      out(i, j) = mean(divergence(v))[0];
    }
  return out;
}

void check_weights(const CorrectorSet& set, const std::vector<double>& weights) {
  if (weights.size() != set.coords.size())
    throw std::invalid_argument("effective tensors: weights / slices mismatch");
}

}  // namespace

Eigen::MatrixXd effective_matrix(const CorrectorSet& set, const std::vector<double>& weights) {
  check_weights(set, weights);
  const int d = set.grid().dim;
  Eigen::MatrixXd a_eff = Eigen::MatrixXd::Zero(d, d);
  for (int k = 0; k < set.slices(); ++k) a_eff += weights[k] * slice_flux_mean(set, 0, k);
  if ((a_eff - a_eff.transpose()).cwiseAbs().maxCoeff() > 1e-8)
    throw std::runtime_error("effective_matrix: result asymmetric beyond tolerance");
  return a_eff;
}

Eigen::MatrixXd higher_effective(int k, const CorrectorSet& set, const std::vector<double>& weights) {
  check_weights(set, weights);
  if (k < 1 || k > set.order) throw std::invalid_argument("higher_effective: order out of range");
  const int d = set.grid().dim;
  Eigen::MatrixXd formA = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd formB = Eigen::MatrixXd::Zero(d, d);
  for (int s = 0; s < set.slices(); ++s) {
    const Eigen::MatrixXd F = slice_flux_mean(set, k, s);
    formA += weights[s] * F;
    formB += weights[s] * (F + slice_divergence_term(set, k, s));
  }
  if ((formA - formB).cwiseAbs().maxCoeff() > 1e-8)
    throw std::runtime_error("higher_effective: flux and divergence-form readings disagree");
  return formA;
}

FluctuationSeries fluctuation_series(const CorrectorSet& set, const std::vector<double>& weights,
                                     int order) {
  check_weights(set, weights);
  FluctuationSeries out;
  out.kind = set.kind;
  out.order = order;
  out.dim = set.grid().dim;
  out.coords = set.coords;
  out.values.reserve(set.slices());
  Eigen::MatrixXd eff = (order == 0) ? effective_matrix(set, weights)
                                     : higher_effective(order, set, weights);
  for (int k = 0; k < set.slices(); ++k) out.values.push_back(slice_flux_mean(set, order, k) - eff);
  return out;
}

double cascade_residual(const CorrectorSet& set, int order, int slice) {
  const GridField& a = set.a_slices[slice];
  GridField lhs = apply_div_a_grad(a, set.chi[order][slice]);
  GridField rhs;
  if (order == 0) {
    rhs = divergence(a);
    rhs *= -1.0;
  } else {
    rhs = set.rhs[order][slice];
  }
  lhs -= rhs;
  return l2_norm(lhs);
}

CascadeInput generator_input(const CoefficientModel& model, const DiffusionSpec& driver,
                             const std::vector<double>& y_grid, const TorusGrid& g) {
  CascadeInput in;
  in.kind = CascadeKind::generator;
  in.coords = y_grid;
  in.driver = &driver;
  in.a_slices.reserve(y_grid.size());
  for (double y : y_grid) in.a_slices.push_back(coefficient_slice(model, g, y));
  return in;
}

CascadeInput time_sliced_input(const CoefficientModel& model, const DriverPath& path,
                               const TorusGrid& g) {
  CascadeInput in;
  in.kind = CascadeKind::time_sliced;
  const int K = path.steps();
  in.coords.reserve(K + 1);
  in.a_slices.reserve(K + 1);
  for (int k = 0; k <= K; ++k) {
    in.coords.push_back(k * path.h);
    in.a_slices.push_back(coefficient_slice(model, g, path.value_at_index(k)));
  }
  return in;
}

namespace {

using nlohmann::json;

const char* kConvention = "generator L=(1/2)q d2+b d1, q=sigma*sigma^T; "
                          "a_eff=E int (a + a grad chi0) dz";

json field_to_json(const GridField& f) {
  return json{{"ncomp", f.ncomp()}, {"values", f.data()}};
}

GridField field_from_json(const json& j, const TorusGrid& g) {
  GridField f(g, j.at("ncomp").get<int>());
  f.data() = j.at("values").get<std::vector<double>>();
  if (f.data().size() != static_cast<size_t>(g.nodes()) * f.ncomp())
    throw std::runtime_error("field_from_json: size mismatch");
  return f;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> v(m.size());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);  // row-major
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", v}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const int r = j.at("rows").get<int>(), c = j.at("cols").get<int>();
  Eigen::MatrixXd m(r, c);
  const auto v = j.at("data").get<std::vector<double>>();
  for (int i = 0; i < r; ++i)
    for (int k = 0; k < c; ++k) m(i, k) = v[i * c + k];
  return m;
}

}  // namespace

std::string tensors_to_json(const EffectiveTensors& t) {
  json j;
  j["convention"] = kConvention;
  j["dim"] = t.dim;
  j["a_eff"] = matrix_to_json(t.a_eff);
  j["a_k_eff"] = json::array();
  for (const auto& m : t.a_k_eff) j["a_k_eff"].push_back(matrix_to_json(m));
  if (t.lambda.size() > 0) j["lambda"] = matrix_to_json(t.lambda);
  if (t.lambda_sqrt.size() > 0) j["lambda_sqrt"] = matrix_to_json(t.lambda_sqrt);
  return j.dump(2);
}

EffectiveTensors tensors_from_json(const std::string& text) {
  const json j = json::parse(text);
  EffectiveTensors t;
  t.dim = j.at("dim").get<int>();
  t.a_eff = matrix_from_json(j.at("a_eff"));
  for (const auto& m : j.at("a_k_eff")) t.a_k_eff.push_back(matrix_from_json(m));
  if (j.contains("lambda")) t.lambda = matrix_from_json(j.at("lambda"));
  if (j.contains("lambda_sqrt")) t.lambda_sqrt = matrix_from_json(j.at("lambda_sqrt"));
  return t;
}

std::string correctors_to_json(const CorrectorSet& set) {
  json j;
  j["convention"] = kConvention;
  j["kind"] = set.kind == CascadeKind::time_sliced ? "time_sliced" : "generator";
  j["order"] = set.order;
  j["grid"] = {{"dim", set.grid().dim}, {"n", set.grid().n}};
  j["coords"] = set.coords;
  j["a_slices"] = json::array();
  for (const auto& f : set.a_slices) j["a_slices"].push_back(field_to_json(f));
  j["chi"] = json::array();
  for (const auto& level : set.chi) {
    json lv = json::array();
    for (const auto& f : level) lv.push_back(field_to_json(f));
    j["chi"].push_back(std::move(lv));
  }
  j["rhs"] = json::array();
  for (const auto& level : set.rhs) {
    json lv = json::array();
    for (const auto& f : level) lv.push_back(field_to_json(f));
    j["rhs"].push_back(std::move(lv));
  }
  return j.dump();
}

CorrectorSet correctors_from_json(const std::string& text) {
  const json j = json::parse(text);
  CorrectorSet set;
  set.kind = j.at("kind").get<std::string>() == "generator" ? CascadeKind::generator
                                                            : CascadeKind::time_sliced;
  set.order = j.at("order").get<int>();
  const TorusGrid g = TorusGrid::make(j.at("grid").at("dim").get<int>(), j.at("grid").at("n").get<int>());
  set.coords = j.at("coords").get<std::vector<double>>();
  for (const auto& f : j.at("a_slices")) set.a_slices.push_back(field_from_json(f, g));
  for (const auto& level : j.at("chi")) {
    std::vector<GridField> lv;
    for (const auto& f : level) lv.push_back(field_from_json(f, g));
    set.chi.push_back(std::move(lv));
  }
  for (const auto& level : j.at("rhs")) {
    std::vector<GridField> lv;
    for (const auto& f : level) lv.push_back(field_from_json(f, g));
    set.rhs.push_back(std::move(lv));
  }
  return set;
}

}  // namespace homog
