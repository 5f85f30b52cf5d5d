#include "homog/limit_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "homog/util.hpp"

namespace homog {

namespace {

int pair_index(int i, int j, int d) { return i * d + j; }

Eigen::MatrixXd empirical_mean(const FluctuationSeries& xi) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(xi.dim, xi.dim);
  for (const auto& v : xi.values) m += v;
  return m / static_cast<double>(xi.values.size());
}

}  // namespace

LimitCovariance lambda_from_correlation(const FluctuationSeries& xi, double max_lag, int batches) {
  const int d = xi.dim;
  const int N = static_cast<int>(xi.values.size());
  if (N < 8) throw std::invalid_argument("lambda_from_correlation: series too short");
  const double dt = xi.coords[1] - xi.coords[0];
  const double horizon = (N - 1) * dt;
  if (horizon < 10.0 * max_lag)
    throw std::invalid_argument("lambda_from_correlation: horizon must be at least 10 * max_lag");
  const int L = std::min(N - 2, static_cast<int>(std::floor(max_lag / dt)));

  const Eigen::MatrixXd mean = empirical_mean(xi);
  std::vector<Eigen::MatrixXd> centered;
  centered.reserve(N);
  for (const auto& v : xi.values) centered.push_back(v - mean);

  const int d2 = d * d;
  // autocovariance C(l)^{(ij),(ml)} = avg ( Xi_{k+l}^{ij} Xi_k^{ml} );
  // the covariance integrates both orderings, so no 1/2 in front.
  std::vector<Eigen::MatrixXd> C(L + 1, Eigen::MatrixXd::Zero(d2, d2));
  for (int l = 0; l <= L; ++l) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d2, d2);
    for (int k = 0; k + l < N; ++k) {
      const Eigen::MatrixXd& a = centered[k + l];
      const Eigen::MatrixXd& b = centered[k];
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          for (int m = 0; m < d; ++m)
            for (int e = 0; e < d; ++e)
              acc(pair_index(i, j, d), pair_index(m, e, d)) += a(i, j) * b(m, e);
    }
    C[l] = acc / static_cast<double>(N - l);
  }

  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(d2, d2);
  for (int l = 0; l <= L; ++l) {
    const double trap = (l == 0 || l == L) ? 0.5 : 1.0;
    lambda += trap * dt * (C[l] + C[l].transpose());
  }

  // batch means: Lambda ~ Var of batch integrals / batch length
  LimitCovariance out;
  out.method = LimitCovariance::Method::correlation;
  out.dim = d;
  out.lambda = lambda;
  out.max_lag = L * dt;
  out.horizon = horizon;
  out.batches = batches;
  const int per = N / batches;
  if (per > 1) {
    std::vector<Eigen::MatrixXd> sums(batches, Eigen::MatrixXd::Zero(d, d));
    for (int b = 0; b < batches; ++b)
      for (int k = 0; k < per; ++k) sums[b] += dt * centered[b * per + k];
    Eigen::MatrixXd bm = Eigen::MatrixXd::Zero(d, d);
    for (const auto& s : sums) bm += s;
    bm /= batches;
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(d2, d2);
    for (const auto& s : sums) {
      const Eigen::MatrixXd c = s - bm;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          for (int m = 0; m < d; ++m)
            for (int e = 0; e < d; ++e)
              var(pair_index(i, j, d), pair_index(m, e, d)) += c(i, j) * c(m, e);
    }
    var /= (batches - 1.0) * (per * dt);
    out.stderr_ = var * std::sqrt(2.0 / (batches - 1.0));
  } else {
    out.stderr_ = Eigen::MatrixXd::Zero(d2, d2);
  }
  return out;
}

double estimate_relaxation_time(const FluctuationSeries& xi) {
  const int N = static_cast<int>(xi.values.size());
  const double dt = xi.coords[1] - xi.coords[0];
  const Eigen::MatrixXd mean = empirical_mean(xi);
  // lag-k autocorrelation of the (0,0) entry, fitted while it stays
  // clearly positive
  double c0 = 0.0;
  for (const auto& v : xi.values) {
    const double x = v(0, 0) - mean(0, 0);
    c0 += x * x;
  }
  c0 /= N;
  if (c0 <= 0.0) return dt;
  double tau = dt;
  for (int l = 1; l < N / 4; ++l) {
    double cl = 0.0;
    for (int k = 0; k + l < N; ++k)
      cl += (xi.values[k + l](0, 0) - mean(0, 0)) * (xi.values[k](0, 0) - mean(0, 0));
    cl /= (N - l);
    if (cl < 0.05 * c0) {
      tau = l * dt / std::log(c0 / std::max(cl, 1e-300));
      break;
    }
    tau = l * dt / std::log(c0 / cl);
  }
  return std::max(tau, dt);
}

LimitCovariance lambda_from_poisson_1d(const DiffusionSpec& spec, const FluctuationSeries& bracket,
                                       const InvariantDensity& rho) {
  if (spec.n != 1) throw std::invalid_argument("lambda_from_poisson_1d: only n = 1 supported");
  const int d = bracket.dim;
  const int K = static_cast<int>(bracket.coords.size());
  const double h = bracket.coords[1] - bracket.coords[0];

  std::vector<double> rho_grid(K);
  for (int k = 0; k < K; ++k) rho_grid[k] = rho.value_at(bracket.coords[k]);

  // solvability: int bracket rho = 0 per component
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      std::vector<double> f(K);
      for (int k = 0; k < K; ++k) f[k] = bracket.values[k](i, j) * rho_grid[k];
      if (std::abs(trapz(f, h)) > 1e-6)
        throw std::invalid_argument("lambda_from_poisson_1d: bracket is not centered against rho");
    }

  // I^{ij}(y) = int_{-Y}^{y} bracket^{ij} rho ; Q'^{ij} = 2 I / (q rho);
  // Lambda^{(ij)(ml)} = int Q'^{ij} q Q'^{ml} rho = int 4 I^{ij} I^{ml} / (q rho)
  const int d2 = d * d;
  std::vector<std::vector<double>> I(d2);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      std::vector<double> f(K);
      for (int k = 0; k < K; ++k) f[k] = bracket.values[k](i, j) * rho_grid[k];
      I[pair_index(i, j, d)] = cumtrapz(f, h);
    }

  const double rho_floor = 1e-16 * *std::max_element(rho_grid.begin(), rho_grid.end());
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(d2, d2);
  for (int a = 0; a < d2; ++a)
    for (int b = 0; b < d2; ++b) {
      std::vector<double> f(K, 0.0);
      for (int k = 0; k < K; ++k) {
        if (rho_grid[k] <= rho_floor) continue;
        f[k] = 4.0 * I[a][k] * I[b][k] / (spec.q1(bracket.coords[k]) * rho_grid[k]);
      }
      lambda(a, b) = trapz(f, h);
    }

  LimitCovariance out;
  out.method = LimitCovariance::Method::poisson;
  out.dim = d;
  out.lambda = 0.5 * (lambda + lambda.transpose());
  return out;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& lambda) {
  if ((lambda - lambda.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw std::invalid_argument("sqrt_psd: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lambda);
  Eigen::VectorXd ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-10) throw std::invalid_argument("sqrt_psd: matrix is not positive semidefinite");
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

void require_same_grid(const SpaceTimeField& a, const SpaceTimeField& b, const char* who) {
  if (a.domain.m != b.domain.m || a.stored != b.stored || a.store_stride != b.store_stride ||
      std::abs(a.dt - b.dt) > 1e-15)
    throw std::invalid_argument(std::string(who) + ": field grids do not match");
}

}  // namespace

SpaceTimeField assemble_U(const SpaceTimeField& u_eps, const SpaceTimeField& u0,
                          const std::vector<const SpaceTimeField*>& cascade, double eps,
                          double alpha) {
  require_same_grid(u_eps, u0, "assemble_U");
  for (const auto* f : cascade) require_same_grid(u_eps, *f, "assemble_U");
  const double delta = 2.0 - alpha;
  SpaceTimeField U = u_eps;
  const double scale = std::pow(eps, -alpha / 2.0);
  for (size_t idx = 0; idx < U.values.size(); ++idx) {
    double v = u_eps.values[idx] - u0.values[idx];
    for (size_t j = 0; j < cascade.size(); ++j)
      v -= std::pow(eps, (j + 1) * delta) * cascade[j]->values[idx];
    U.values[idx] = scale * v;
  }
  return U;
}

namespace {

// chi^j(z, y) from a generator-kind corrector set by bilinear
// interpolation (periodic in z, clamped in y).
double corrector_lookup(const CorrectorSet& set, int order, double z, double y) {
  const TorusGrid& g = set.grid();
  const int n = g.n;
  double zz = z - std::floor(z);
  const double zpos = zz * n;
  const int i0 = static_cast<int>(zpos) % n;
  const int i1 = (i0 + 1) % n;
  const double tz = zpos - std::floor(zpos);

  const auto& ys = set.coords;
  const double h = ys[1] - ys[0];
  double ypos = (y - ys.front()) / h;
  ypos = std::clamp(ypos, 0.0, static_cast<double>(ys.size() - 1) - 1e-12);
  const int k0 = static_cast<int>(ypos);
  const double ty = ypos - k0;

  const auto& lo = set.chi[order][k0];
  const auto& hi = set.chi[order][k0 + 1];
  const double v0 = (1.0 - tz) * lo(i0, 0) + tz * lo(i1, 0);
  const double v1 = (1.0 - tz) * hi(i0, 0) + tz * hi(i1, 0);
  return (1.0 - ty) * v0 + ty * v1;
}

}  // namespace

SpaceTimeField assemble_V(const SpaceTimeField& u_eps, const SpaceTimeField& u0,
                          const std::vector<const SpaceTimeField*>& cascade,
                          const CorrectorSet& correctors, const DriverPath& driver, double eps,
                          double alpha) {
  require_same_grid(u_eps, u0, "assemble_V");
  for (const auto* f : cascade) require_same_grid(u_eps, *f, "assemble_V");
  if (correctors.kind != CascadeKind::generator)
    throw std::invalid_argument("assemble_V: correctors must be indexed by driver value");
  const double delta = 2.0 - alpha;
  const int J = static_cast<int>(cascade.size());
  const int m = u_eps.domain.m;
  const double dx = u_eps.domain.dx();
  const double scale = std::pow(eps, -alpha / 2.0);

  std::vector<const SpaceTimeField*> uk(1 + cascade.size());
  uk[0] = &u0;
  for (size_t j = 0; j < cascade.size(); ++j) uk[j + 1] = cascade[j];

  SpaceTimeField V = u_eps;
  for (int t = 0; t < u_eps.stored; ++t) {
    const double y = driver.value_at(u_eps.time_of(t) / std::pow(eps, alpha));
    for (int i = 0; i < m; ++i) {
      const double z = u_eps.domain.x(i) / eps;
      double v = u_eps.at(t, i);
      for (int k = 0; k <= J; ++k) {
        double layer = uk[k]->at(t, i);
        for (int j = 0; j + k <= J && j <= correctors.order; ++j) {
          double grad;  // centered d_x u^k, one-sided at the walls
          if (i == 0)
            grad = (uk[k]->at(t, 1) - uk[k]->at(t, 0)) / dx;
          else if (i == m - 1)
            grad = (uk[k]->at(t, m - 1) - uk[k]->at(t, m - 2)) / dx;
          else
            grad = (uk[k]->at(t, i + 1) - uk[k]->at(t, i - 1)) / (2.0 * dx);
          layer += std::pow(eps, j * delta + 1.0) * corrector_lookup(correctors, j, z, y) * grad;
        }
        v -= std::pow(eps, k * delta) * layer;
      }
      V.values[static_cast<size_t>(t) * m + i] = scale * v;
    }
  }
  return V;
}

RateFit fit_rate(const std::vector<double>& eps_list, const std::vector<double>& norms) {
  if (eps_list.size() != norms.size() || eps_list.size() < 3)
    throw std::invalid_argument("fit_rate: need at least 3 (eps, norm) pairs");
  for (double v : norms)
    if (!(v > 0.0)) throw std::invalid_argument("fit_rate: norms must be positive");

  RateFit fit;
  fit.eps = eps_list;
  fit.norms = norms;
  const size_t n = eps_list.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double x = std::log(eps_list[i]);
    const double y = std::log(norms[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = n * sxx - sx * sx;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double res = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double e = std::log(norms[i]) - (fit.intercept + fit.slope * std::log(eps_list[i]));
    res += e * e;
  }
  fit.residual = std::sqrt(res / n);
  return fit;
}

double functional_against(const SpaceTimeField& f,
                          const std::function<double(double, double)>& psi) {
  double acc = 0.0;
  for (int k = 0; k < f.stored; ++k) {
    const double trap_t = (k == 0 || k == f.stored - 1) ? 0.5 : 1.0;
    double sx = 0.0;
    for (int i = 0; i < f.domain.m; ++i) {
      const double trap_x = (i == 0 || i == f.domain.m - 1) ? 0.5 : 1.0;
      sx += trap_x * f.at(k, i) * psi(f.domain.x(i), f.time_of(k));
    }
    acc += trap_t * sx * f.domain.dx();
  }
  return acc * f.stored_dt();
}

double functional_variance_spde(const std::function<double(double, double)>& psi,
                                double lambda_sqrt, const SpaceTimeField& u0, double a_eff,
                                const BoxDomain& domain, double dt, int s_stride) {
  if (u0.store_stride != 1) throw std::invalid_argument("functional_variance_spde: u0 must be dense");
  const int m = domain.m;
  const int steps = u0.stored - 1;
  const double dx2 = domain.dx() * domain.dx();
  const double T = u0.final_time();

  // Var = int_0^T [ int_s^T <S(t-s) f(., s), psi(., t)> dt ]^2 ds with
  // f = lambda_sqrt d_xx u0; one deterministic solve per quadrature s.
  std::vector<double> s_nodes;
  std::vector<double> g_vals;
  for (int ks = 0; ks <= steps; ks += s_stride) {
    const double s = u0.time_of(ks);
    double g = 0.0;
    if (ks < steps) {
      std::vector<double> f(m, 0.0);
      for (int i = 1; i + 1 < m; ++i)
        f[i] = lambda_sqrt * (u0.at(ks, i + 1) - 2.0 * u0.at(ks, i) + u0.at(ks, i - 1)) / dx2;
      SpaceTimeField w = solve_const_from(a_eff, std::move(f), s, dt, steps - ks, domain);
      // time quadrature of <w(., t), psi(., t)> over [s, T]
      for (int k = 0; k < w.stored; ++k) {
        const double trap_t = (k == 0 || k == w.stored - 1) ? 0.5 : 1.0;
        double sx = 0.0;
        for (int i = 0; i < m; ++i) {
          const double trap_x = (i == 0 || i == m - 1) ? 0.5 : 1.0;
          sx += trap_x * w.at(k, i) * psi(domain.x(i), w.time_of(k));
        }
        g += trap_t * sx * domain.dx() * dt;
      }
    }
    s_nodes.push_back(s);
    g_vals.push_back(g * g);
  }
  if (s_nodes.size() < 2) return 0.0;
  // trapezoid in s (uniform except possibly the last interval)
  double var = 0.0;
  for (size_t i = 0; i + 1 < s_nodes.size(); ++i)
    var += 0.5 * (g_vals[i] + g_vals[i + 1]) * (s_nodes[i + 1] - s_nodes[i]);
  if (s_nodes.back() < T) var += 0.5 * g_vals.back() * (T - s_nodes.back());
  return var;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "quantity,method,value,stderr,tolerance,pass\n";
  for (const auto& r : rows) {
    out += r.quantity + "," + r.method + "," + format_g17(r.value) + "," + format_g17(r.stderr_) +
           "," + format_g17(r.tolerance) + "," + (r.pass ? "true" : "false") + "\n";
  }
  return out;
}

InvarianceResult invariance_probe(const std::function<double(double)>& bracket,
                                  const DiffusionSpec& spec, const std::vector<double>& eps_list,
                                  double alpha, double T, int replicates, double h,
                                  uint64_t base_seed) {
  if (replicates < 16) throw std::invalid_argument("invariance_probe: need at least 16 replicates");
  InvarianceResult out;
  for (double eps : eps_list) {
    const double S1 = T / std::pow(eps, alpha);
    const double S2 = 2.0 * S1;
    const double scale = std::pow(eps, alpha / 2.0);
    std::vector<double> z1(replicates), z2(replicates);
    for (int rep = 0; rep < replicates; ++rep) {
      const DriverPath path = simulate_driver(spec, S2, h, base_seed + rep);
      // trapezoid of bracket(xi_s) up to S1 and S2
      double acc = 0.0;
      double prev = bracket(path.value_at_index(0));
      const int k1 = static_cast<int>(std::llround(S1 / h));
      for (int k = 1; k <= path.steps(); ++k) {
        const double cur = bracket(path.value_at_index(k));
        acc += 0.5 * h * (prev + cur);
        prev = cur;
        if (k == k1) z1[rep] = scale * acc;
      }
      z2[rep] = scale * acc;
    }
    const SampleStats s1 = sample_stats(z1);
    const SampleStats s2 = sample_stats(z2);
    InvarianceResult::PerEps agg;
    agg.eps = eps;
    agg.var_T = s1.variance;
    agg.se_T = s1.variance * std::sqrt(2.0 / (replicates - 1));
    agg.var_2T = s2.variance;
    agg.se_2T = s2.variance * std::sqrt(2.0 / (replicates - 1));
    out.aggregates.push_back(agg);
    for (int rep = 0; rep < replicates; ++rep)
      out.rows.push_back({eps, rep, z1[rep], z2[rep]});
  }
  return out;
}

}  // namespace homog
