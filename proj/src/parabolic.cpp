#include "homog/parabolic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "homog/util.hpp"
#include "json.hpp"

namespace homog {

namespace {

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

// Tridiagonal solve (Thomas); diag/upper/lower overwritten.
void thomas(std::vector<double>& lower, std::vector<double>& diag, std::vector<double>& upper,
            std::vector<double>& rhs, std::vector<double>& out) {
  const size_t m = diag.size();
  for (size_t i = 1; i < m; ++i) {
    const double w = lower[i] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  out[m - 1] = rhs[m - 1] / diag[m - 1];
  for (size_t i = m - 1; i-- > 0;) out[i] = (rhs[i] - upper[i] * out[i + 1]) / diag[i];
}

}  // namespace

SpaceTimeField evolve(const BoxDomain& domain, std::vector<double> initial, double t0, double dt,
                      int steps,
                      const std::function<void(double, std::vector<double>&)>& face_coefficients,
                      const EvolveOptions& opts) {
  const int m = domain.m;
  if (static_cast<int>(initial.size()) != m) throw std::invalid_argument("evolve: bad initial size");
  if (steps < 1) throw std::invalid_argument("evolve: need at least one step");
  const double dx = domain.dx();
  const double r = dt / (dx * dx);

  SpaceTimeField out;
  out.domain = domain;
  out.t0 = t0;
  out.dt = dt;
  out.store_stride = opts.store_stride;
  out.stored = steps / opts.store_stride + 1;
  out.values.resize(static_cast<size_t>(out.stored) * m);

  std::vector<double> u = std::move(initial);
  u.front() = 0.0;
  u.back() = 0.0;
  std::copy(u.begin(), u.end(), out.slice(0));
  double bmax = std::max(std::abs(u[1]), std::abs(u[m - 2]));

  std::vector<double> aface(m - 1), lower(m), diag(m), upper(m), rhs(m), unew(m), extra(m);

  for (int k = 0; k < steps; ++k) {
    const double tmid = t0 + (k + 0.5) * dt;
    face_coefficients(tmid, aface);
    const double theta = (k < opts.rannacher_steps) ? 1.0 : 0.5;

    if (opts.increment || opts.forcing) std::fill(extra.begin(), extra.end(), 0.0);
    if (opts.increment) opts.increment(k, extra);
    if (opts.forcing)
      for (int i = 1; i + 1 < m; ++i) extra[i] += dt * opts.forcing(domain.x(i), tmid);

    rhs[0] = 0.0;
    rhs[m - 1] = 0.0;
    for (int i = 1; i + 1 < m; ++i) {
      const double explicit_flux =
          (1.0 - theta) * r * (aface[i] * (u[i + 1] - u[i]) - aface[i - 1] * (u[i] - u[i - 1]));
      rhs[i] = u[i] + explicit_flux;
      if (opts.increment || opts.forcing) rhs[i] += extra[i];
    }

    lower[0] = 0.0;
    diag[0] = 1.0;
    upper[0] = 0.0;
    lower[m - 1] = 0.0;
    diag[m - 1] = 1.0;
    upper[m - 1] = 0.0;
    for (int i = 1; i + 1 < m; ++i) {
      lower[i] = -theta * r * aface[i - 1];
      diag[i] = 1.0 + theta * r * (aface[i - 1] + aface[i]);
      upper[i] = -theta * r * aface[i];
    }
    thomas(lower, diag, upper, rhs, unew);
    u.swap(unew);
    bmax = std::max({bmax, std::abs(u[1]), std::abs(u[m - 2])});
    if ((k + 1) % opts.store_stride == 0)
      std::copy(u.begin(), u.end(), out.slice((k + 1) / opts.store_stride));
  }

  out.boundary_max = bmax;
  out.boundary_ok = bmax < 1e-10;
  return out;
}

SpaceTimeField solve_const_from(double a_const, std::vector<double> initial, double t0, double dt,
                                int steps, const BoxDomain& domain, const EvolveOptions& opts) {
  auto faces = [a_const](double, std::vector<double>& f) { std::fill(f.begin(), f.end(), a_const); };
  return evolve(domain, std::move(initial), t0, dt, steps, faces, opts);
}

namespace {

std::vector<double> sample_initial(const BoxDomain& domain, const std::function<double(double)>& phi) {
  std::vector<double> u(domain.m);
  for (int i = 0; i < domain.m; ++i) u[i] = phi(domain.x(i));
  return u;
}

// Per-step node coefficients with the separable fast path; faces get the
// harmonic mean of the adjacent nodes (keeps the 1d flux structure).
class FaceCoefficients {
 public:
  FaceCoefficients(const CoefficientModel& model, const DriverPath& driver, const BoxDomain& domain,
                   double eps, double alpha)
      : model_(model), driver_(driver), eps_(eps), alpha_(alpha) {
    const int m = domain.m;
    z_.resize(m);
    for (int i = 0; i < m; ++i) {
      double z = domain.x(i) / eps_;
      z_[i] = z - std::floor(z);
    }
    if (model_.separable() || model_.kind == CoefficientModel::Kind::multiplicative) {
      c0_.resize(m);
      c1_.resize(m);
      for (int i = 0; i < m; ++i) {
        c0_[i] = model_.c0(z_[i]);
        c1_[i] = (model_.kind == CoefficientModel::Kind::separable_additive) ? model_.c1(z_[i]) : 0.0;
      }
    }
    nodes_.resize(m);
  }

  void operator()(double tmid, std::vector<double>& aface) {
    const double y = driver_.value_at(tmid / std::pow(eps_, alpha_));
    const int m = static_cast<int>(nodes_.size());
    switch (model_.kind) {
      case CoefficientModel::Kind::constant:
      case CoefficientModel::Kind::space_only:
        for (int i = 0; i < m; ++i) nodes_[i] = c0_[i];
        break;
      case CoefficientModel::Kind::separable_additive: {
        const double g = model_.link(y);
        for (int i = 0; i < m; ++i) nodes_[i] = c0_[i] + c1_[i] * g;
        break;
      }
      case CoefficientModel::Kind::multiplicative: {
        const double g = model_.link(y);
        for (int i = 0; i < m; ++i) nodes_[i] = g * c0_[i];
        break;
      }
      case CoefficientModel::Kind::general:
        for (int i = 0; i < m; ++i) nodes_[i] = model_.eval(z_[i], y);
        break;
    }
    for (int i = 0; i + 1 < m; ++i) aface[i] = harmonic(nodes_[i], nodes_[i + 1]);
  }

 private:
  const CoefficientModel& model_;
  const DriverPath& driver_;
  double eps_, alpha_;
  std::vector<double> z_, c0_, c1_, nodes_;
};

void check_fine_preconditions(const DriverPath& driver, double eps, double alpha,
                              const BoxDomain& domain, double dt, double T, double t0,
                              const FineOptions& opts) {
  if (!(eps > 0.0) || !(alpha > 0.0) || !(alpha < 2.0))
    throw std::invalid_argument("solve_fine: need eps > 0 and alpha in (0,2)");
  if (dt > opts.c1 * eps * eps * (1.0 + 1e-12))
    throw std::invalid_argument("solve_fine: dt exceeds c1*eps^2; temporal resolution insufficient");
  if (dt > opts.c2 * std::pow(eps, alpha) * driver.h * (1.0 + 1e-12))
    throw std::invalid_argument("solve_fine: dt exceeds c2*eps^alpha*h_driver; driver grid too coarse");
  if (eps < 0.999999 && domain.m * eps / (2.0 * domain.half_width) < 16.0 * (1.0 - 1e-12))
    throw std::invalid_argument("solve_fine: fewer than 16 cells per oscillation period");
  if (driver.horizon + 1e-9 < (t0 + T) / std::pow(eps, alpha))
    throw std::invalid_argument("solve_fine: driver path does not cover the horizon");
}

}  // namespace

SpaceTimeField solve_fine(const CoefficientModel& model, const DriverPath& driver, double eps,
                          double alpha, const std::function<double(double)>& phi,
                          const BoxDomain& domain, double dt, double T, const FineOptions& opts) {
  check_fine_preconditions(driver, eps, alpha, domain, dt, T, 0.0, opts);
  const int steps = static_cast<int>(std::llround(T / dt));
  EvolveOptions eopts;
  eopts.store_stride = opts.store_stride;
  eopts.rannacher_steps = opts.rannacher_steps;
  eopts.forcing = opts.forcing;
  FaceCoefficients faces(model, driver, domain, eps, alpha);
  return evolve(domain, sample_initial(domain, phi), 0.0, dt, steps,
                [&faces](double t, std::vector<double>& a) { faces(t, a); }, eopts);
}

SpaceTimeField solve_homogenized(double a_eff, const std::function<double(double)>& phi,
                                 const BoxDomain& domain, double dt, double T,
                                 const EvolveOptions& opts) {
  const int steps = static_cast<int>(std::llround(T / dt));
  return solve_const_from(a_eff, sample_initial(domain, phi), 0.0, dt, steps, domain, opts);
}

SpaceTimeField solve_cascade_pde(int j, double a_eff, const std::vector<double>& a_k_eff,
                                 const std::vector<const SpaceTimeField*>& lower,
                                 const BoxDomain& domain, double dt) {
  if (j < 1) throw std::invalid_argument("solve_cascade_pde: order must be >= 1");
  if (static_cast<int>(lower.size()) != j)
    throw std::invalid_argument("solve_cascade_pde: need fields u^0..u^{j-1}");
  if (static_cast<int>(a_k_eff.size()) < j)
    throw std::invalid_argument("solve_cascade_pde: need a_{k,eff} for k=1..j");
  for (const auto* f : lower) {
    if (f->domain.m != domain.m || f->store_stride != 1 || std::abs(f->dt - dt) > 1e-15)
      throw std::invalid_argument("solve_cascade_pde: lower-order field grid mismatch");
  }
  const int steps = lower[0]->stored - 1;
  const int m = domain.m;
  const double dx2 = domain.dx() * domain.dx();

  // midpoint source: average of the centered second differences of the
  // lower fields at slices k and k+1
  EvolveOptions opts;
  auto second_diff = [&](const SpaceTimeField& f, int k, int i) {
    return (f.at(k, i + 1) - 2.0 * f.at(k, i) + f.at(k, i - 1)) / dx2;
  };
  opts.increment = [&, j, dt](int k, std::vector<double>& add) {
    for (int i = 1; i + 1 < m; ++i) {
      double s = 0.0;
      for (int kk = 1; kk <= j; ++kk) {
        const SpaceTimeField& f = *lower[j - kk];
        s += a_k_eff[kk - 1] * 0.5 * (second_diff(f, k, i) + second_diff(f, k + 1, i));
      }
      add[i] = dt * s;
    }
  };
  return solve_const_from(a_eff, std::vector<double>(m, 0.0), lower[0]->t0, dt, steps, domain, opts);
}

std::vector<double> brownian_increments(int steps, double dt, uint64_t seed) {
  GaussianStream rng(seed);
  std::vector<double> dW(steps);
  const double s = std::sqrt(dt);
  for (int k = 0; k < steps; ++k) dW[k] = s * rng.normal();
  return dW;
}

SpaceTimeField solve_limit_spde(double a_eff, double lambda_sqrt, const SpaceTimeField& u0,
                                const std::vector<double>& dW, const BoxDomain& domain, double dt) {
  if (lambda_sqrt < 0.0)
    throw std::invalid_argument("solve_limit_spde: lambda_sqrt must be a nonnegative factor");
  if (u0.domain.m != domain.m || u0.store_stride != 1 || std::abs(u0.dt - dt) > 1e-15)
    throw std::invalid_argument("solve_limit_spde: u0 grid mismatch");
  const int steps = u0.stored - 1;
  if (static_cast<int>(dW.size()) < steps)
    throw std::invalid_argument("solve_limit_spde: not enough noise increments");
  const int m = domain.m;
  const double dx2 = domain.dx() * domain.dx();

  EvolveOptions opts;
  opts.increment = [&](int k, std::vector<double>& add) {
    for (int i = 1; i + 1 < m; ++i) {
      const double d2u0 = (u0.at(k, i + 1) - 2.0 * u0.at(k, i) + u0.at(k, i - 1)) / dx2;
      add[i] = lambda_sqrt * d2u0 * dW[k];
    }
  };
  return solve_const_from(a_eff, std::vector<double>(m, 0.0), u0.t0, dt, steps, domain, opts);
}

SpaceTimeField fundamental_probe(const CoefficientModel& model, const DriverPath& driver,
                                 double eps, double alpha, double y0, double s0,
                                 const BoxDomain& domain, double dt, double T,
                                 const FineOptions& opts) {
  check_fine_preconditions(driver, eps, alpha, domain, dt, T, s0, opts);
  const int steps = static_cast<int>(std::llround(T / dt));
  const double w = 2.0 * domain.dx();
  std::vector<double> delta(domain.m);
  for (int i = 0; i < domain.m; ++i) {
    const double d = domain.x(i) - y0;
    delta[i] = std::exp(-d * d / (2.0 * w * w));
  }
  double mass = 0.0;  // trapezoid
  for (int i = 0; i < domain.m; ++i)
    mass += delta[i] * ((i == 0 || i == domain.m - 1) ? 0.5 : 1.0) * domain.dx();
  for (double& v : delta) v /= mass;

  EvolveOptions eopts;
  eopts.store_stride = opts.store_stride;
  eopts.rannacher_steps = (opts.rannacher_steps > 0) ? opts.rannacher_steps : 4;
  FaceCoefficients faces(model, driver, domain, eps, alpha);
  return evolve(domain, std::move(delta), s0, dt, steps,
                [&faces](double t, std::vector<double>& a) { faces(t, a); }, eopts);
}

namespace {

struct LogSample {
  double q;  // |x - y0|^2 / tau
  double w;  // log v + (d/2) log tau (+ log(tau)/2 for gradients)
};

// Upper hull of (q, w): the subset attaining max_i (w_i + C q_i), C >= 0.
std::vector<LogSample> upper_hull(std::vector<LogSample> pts) {
  std::sort(pts.begin(), pts.end(), [](const LogSample& a, const LogSample& b) {
    return a.q < b.q || (a.q == b.q && a.w < b.w);
  });
  std::vector<LogSample> hull;
  for (const auto& p : pts) {
    while (!hull.empty() && hull.back().q == p.q) hull.pop_back();
    while (hull.size() >= 2) {
      const auto& a = hull[hull.size() - 2];
      const auto& b = hull[hull.size() - 1];
      // drop b when it lies below segment a-p
      if ((b.w - a.w) * (p.q - a.q) <= (p.w - a.w) * (b.q - a.q))
        hull.pop_back();
      else
        break;
    }
    hull.push_back(p);
  }
  return hull;
}

double envelope(const std::vector<LogSample>& hull, double C) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& p : hull) best = std::max(best, p.w + C * p.q);
  return best;
}

}  // namespace

GaussianBoundFit fit_gaussian_bound(const std::vector<const SpaceTimeField*>& probes,
                                    BoundKind kind, double y0, double floor_rel, int skip_steps) {
  std::vector<LogSample> pts;
  double peak = 0.0;

  // first pass: peak of the fitted quantity outside the initial layer
  for (const auto* f : probes) {
    const double skip = skip_steps * f->dt;
    for (int k = 0; k < f->stored; ++k) {
      const double tau = f->time_of(k) - f->t0;
      if (tau < skip) continue;
      for (int i = 1; i + 1 < f->domain.m; ++i) {
        double v = f->at(k, i);
        if (kind == BoundKind::gradient)
          v = std::abs((f->at(k, i + 1) - f->at(k, i - 1)) / (2.0 * f->domain.dx()));
        peak = std::max(peak, std::abs(v));
      }
    }
  }
  const double floor = floor_rel * peak;

  double sum_q = 0.0;
  for (const auto* f : probes) {
    const double skip = skip_steps * f->dt;
    for (int k = 0; k < f->stored; ++k) {
      const double tau = f->time_of(k) - f->t0;
      if (tau < skip) continue;
      for (int i = 1; i + 1 < f->domain.m; ++i) {
        double v = f->at(k, i);
        if (kind == BoundKind::gradient)
          v = std::abs((f->at(k, i + 1) - f->at(k, i - 1)) / (2.0 * f->domain.dx()));
        if (!(v > floor)) continue;
        const double dxy = f->domain.x(i) - y0;
        LogSample s;
        s.q = dxy * dxy / tau;
        s.w = std::log(v) + 0.5 * std::log(tau);  // d = 1
        if (kind == BoundKind::gradient) s.w += 0.5 * std::log(tau);
        pts.push_back(s);
        sum_q += s.q;
      }
    }
  }
  if (pts.empty()) throw std::runtime_error("fit_gaussian_bound: no samples above the floor");

  const auto hull = upper_hull(pts);
  const double n = static_cast<double>(pts.size());
  // minimize n*logc(C) - C*sum_q  with logc(C) = max_i (w_i + C q_i):
  // convex piecewise-linear in C, ternary search
  auto objective = [&](double C) { return n * envelope(hull, C) - C * sum_q; };
  double lo = 0.0, hi = 10.0;
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (objective(m1) < objective(m2))
      hi = m2;
    else
      lo = m1;
  }
  const double C = 0.5 * (lo + hi);
  const double logc = envelope(hull, C);

  GaussianBoundFit fit;
  fit.kind = kind;
  fit.C = C;
  fit.c = std::exp(logc);
  fit.samples = pts.size();
  fit.peak = peak;
  fit.floor = floor;
  double slack = 0.0;
  for (const auto& p : pts) {
    const double viol = p.w + C * p.q - logc;
    if (viol > 1e-9) {
      ++fit.violations;
      fit.max_violation = std::max(fit.max_violation, viol);
    }
    slack += -viol;
  }
  fit.mean_slack = slack / n;
  return fit;
}

double slice_mass(const SpaceTimeField& f, int k) {
  double s = 0.0;
  for (int i = 0; i < f.domain.m; ++i)
    s += f.at(k, i) * ((i == 0 || i == f.domain.m - 1) ? 0.5 : 1.0);
  return s * f.domain.dx();
}

double slice_l2(const SpaceTimeField& f, int k) {
  double s = 0.0;
  for (int i = 0; i < f.domain.m; ++i) {
    const double trap = (i == 0 || i == f.domain.m - 1) ? 0.5 : 1.0;
    s += trap * f.at(k, i) * f.at(k, i);
  }
  return std::sqrt(s * f.domain.dx());
}

double space_time_l2(const SpaceTimeField& f) {
  double s = 0.0;
  for (int k = 0; k < f.stored; ++k) {
    const double trap_t = (k == 0 || k == f.stored - 1) ? 0.5 : 1.0;
    const double l2 = slice_l2(f, k);
    s += trap_t * l2 * l2;
  }
  return std::sqrt(s * f.stored_dt());
}

namespace {

void put_le64(std::string& out, uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void put_le_double(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_le64(out, bits);
}

uint64_t get_le64(const std::string& in, size_t& pos) {
  uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<uint64_t>(static_cast<unsigned char>(in[pos++])) << (8 * b);
  return v;
}

double get_le_double(const std::string& in, size_t& pos) {
  const uint64_t bits = get_le64(in, pos);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_field(const SpaceTimeField& f, const std::string& path, const FieldProvenance& prov) {
  std::string bytes;
  bytes.reserve(40 + 8 * f.values.size());
  put_le64(bytes, static_cast<uint64_t>(f.domain.m));
  put_le64(bytes, static_cast<uint64_t>(f.stored - 1));
  put_le_double(bytes, f.dt);
  put_le_double(bytes, f.domain.dx());
  put_le_double(bytes, f.domain.half_width);
  for (double v : f.values) put_le_double(bytes, v);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_field: cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  nlohmann::json j;
  j["seed"] = prov.seed;
  j["eps"] = prov.eps;
  j["alpha"] = prov.alpha;
  j["model_id"] = prov.model_id;
  j["t0"] = f.t0;
  j["store_stride"] = f.store_stride;
  j["boundary_ok"] = f.boundary_ok;
  j["boundary_max"] = f.boundary_max;
  std::ofstream side(path + ".json", std::ios::binary);
  if (!side) throw std::runtime_error("save_field: cannot write " + path + ".json");
  side << j.dump(2) << "\n";
}

SpaceTimeField load_field(const std::string& path, FieldProvenance* prov) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_field: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < 40) throw std::runtime_error("load_field: truncated header in " + path);

  size_t pos = 0;
  SpaceTimeField f;
  const uint64_t m = get_le64(bytes, pos);
  const uint64_t steps = get_le64(bytes, pos);
  f.dt = get_le_double(bytes, pos);
  const double dx = get_le_double(bytes, pos);
  f.domain.half_width = get_le_double(bytes, pos);
  f.domain.m = static_cast<int>(m);
  f.stored = static_cast<int>(steps) + 1;
  if (std::abs(f.domain.dx() - dx) > 1e-12 * std::max(1.0, std::abs(dx)))
    throw std::runtime_error("load_field: inconsistent dx in header of " + path);
  const size_t count = static_cast<size_t>(f.stored) * m;
  if (bytes.size() != 40 + 8 * count)
    throw std::runtime_error("load_field: value payload size mismatch in " + path);
  f.values.resize(count);
  for (size_t i = 0; i < count; ++i) f.values[i] = get_le_double(bytes, pos);

  std::ifstream side(path + ".json", std::ios::binary);
  if (side) {
    nlohmann::json j;
    side >> j;
    f.t0 = j.value("t0", 0.0);
    f.store_stride = j.value("store_stride", 1);
    f.boundary_ok = j.value("boundary_ok", true);
    f.boundary_max = j.value("boundary_max", 0.0);
    if (prov) {
      prov->seed = j.value("seed", uint64_t{0});
      prov->eps = j.value("eps", 0.0);
      prov->alpha = j.value("alpha", 0.0);
      prov->model_id = j.value("model_id", std::string{});
    }
  }
  return f;
}

}  // namespace homog
