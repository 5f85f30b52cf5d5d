#include "homog/torus.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace homog {

namespace {

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// Real-to-complex transforms with Hermitian symmetry for one grid size.
// Each thread keeps its own instances (FFTW plan execution is only safe
// on the buffers the plan was created with).
class Spectral {
 public:
  explicit Spectral(TorusGrid g) : g_(g) {
    const int n = g.n;
    nreal_ = g.nodes();
    ncplx_ = (g.dim == 1) ? n / 2 + 1 : n * (n / 2 + 1);
    real_ = fftw_alloc_real(nreal_);
    cplx_ = fftw_alloc_complex(ncplx_);
    std::lock_guard<std::mutex> lock(planner_mutex());
    if (g.dim == 1) {
      fwd_ = fftw_plan_dft_r2c_1d(n, real_, cplx_, FFTW_ESTIMATE);
      bwd_ = fftw_plan_dft_c2r_1d(n, cplx_, real_, FFTW_ESTIMATE);
    } else {
      fwd_ = fftw_plan_dft_r2c_2d(n, n, real_, cplx_, FFTW_ESTIMATE);
      bwd_ = fftw_plan_dft_c2r_2d(n, n, cplx_, real_, FFTW_ESTIMATE);
    }
  }

  ~Spectral() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
    fftw_free(real_);
    fftw_free(cplx_);
  }

  Spectral(const Spectral&) = delete;
  Spectral& operator=(const Spectral&) = delete;

  // out = d(in)/dz_axis
  void derivative(const double* in, double* out, int axis) {
    std::memcpy(real_, in, sizeof(double) * nreal_);
    fftw_execute(fwd_);
    const int n = g_.n;
    const double scale = 1.0 / nreal_;
    if (g_.dim == 1) {
      for (int k = 0; k <= n / 2; ++k) {
        const double w = (k == n / 2) ? 0.0 : 2.0 * M_PI * k;
        rotate(k, w * scale);
      }
    } else {
      const int nc = n / 2 + 1;
      for (int i = 0; i < n; ++i) {
        const int k0 = (i <= n / 2) ? i : i - n;
        for (int j = 0; j < nc; ++j) {
          const int k1 = j;
          int k = (axis == 0) ? k0 : k1;
          if ((axis == 0 && i == n / 2) || (axis == 1 && j == n / 2)) k = 0;
          rotate(i * nc + j, 2.0 * M_PI * k * scale);
        }
      }
    }
    fftw_execute(bwd_);
    std::memcpy(out, real_, sizeof(double) * nreal_);
  }

  // out solves scale * (-Laplace out) = in, zero-mean.
  void inverse_neg_laplacian(const double* in, double* out, double coeff) {
    std::memcpy(real_, in, sizeof(double) * nreal_);
    fftw_execute(fwd_);
    const int n = g_.n;
    const double norm = 1.0 / nreal_;
    if (g_.dim == 1) {
      cplx_[0][0] = cplx_[0][1] = 0.0;
      for (int k = 1; k <= n / 2; ++k) {
        const double lam = 4.0 * M_PI * M_PI * k * k * coeff;
        cplx_[k][0] *= norm / lam;
        cplx_[k][1] *= norm / lam;
      }
    } else {
      const int nc = n / 2 + 1;
      for (int i = 0; i < n; ++i) {
        const int k0 = (i <= n / 2) ? i : i - n;
        for (int j = 0; j < nc; ++j) {
          const int idx = i * nc + j;
          if (k0 == 0 && j == 0) {
            cplx_[idx][0] = cplx_[idx][1] = 0.0;
            continue;
          }
          const double lam =
              4.0 * M_PI * M_PI * (static_cast<double>(k0) * k0 + static_cast<double>(j) * j) * coeff;
          cplx_[idx][0] *= norm / lam;
          cplx_[idx][1] *= norm / lam;
        }
      }
    }
    fftw_execute(bwd_);
    std::memcpy(out, real_, sizeof(double) * nreal_);
  }

 private:
  void rotate(int idx, double w) {
    // multiply mode by i*w
    const double re = cplx_[idx][0], im = cplx_[idx][1];
    cplx_[idx][0] = -im * w;
    cplx_[idx][1] = re * w;
  }

  TorusGrid g_;
  int nreal_ = 0, ncplx_ = 0;
  double* real_ = nullptr;
  fftw_complex* cplx_ = nullptr;
  fftw_plan fwd_{}, bwd_{};
};

Spectral& spectral_for(const TorusGrid& g) {
  thread_local std::map<std::pair<int, int>, std::unique_ptr<Spectral>> cache;
  auto key = std::make_pair(g.dim, g.n);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, std::make_unique<Spectral>(g)).first;
  return *it->second;
}

void extract_component(const GridField& f, int c, std::vector<double>& out) {
  out.resize(f.nodes());
  for (int i = 0; i < f.nodes(); ++i) out[i] = f(i, c);
}

}  // namespace

TorusGrid TorusGrid::make(int dim, int n) {
  if (dim != 1 && dim != 2) throw std::invalid_argument("TorusGrid: dim must be 1 or 2");
  if (n < 8) throw std::invalid_argument("TorusGrid: n must be at least 8");
  if (!power_of_two(n)) throw std::invalid_argument("TorusGrid: n must be a power of two");
  return TorusGrid{dim, n};
}

std::array<double, 2> TorusGrid::coord(int node) const {
  if (dim == 1) return {static_cast<double>(node) / n, 0.0};
  return {static_cast<double>(node / n) / n, static_cast<double>(node % n) / n};
}

GridField& GridField::operator+=(const GridField& o) {
  for (size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
  return *this;
}

GridField& GridField::operator-=(const GridField& o) {
  for (size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
  return *this;
}

GridField& GridField::operator*=(double s) {
  for (double& x : v_) x *= s;
  return *this;
}

GridField sample_field(const TorusGrid& g, int ncomp,
                       const std::function<double(std::array<double, 2>, int)>& f) {
  GridField out(g, ncomp);
  for (int i = 0; i < g.nodes(); ++i)
    for (int c = 0; c < ncomp; ++c) out(i, c) = f(g.coord(i), c);
  return out;
}

std::vector<double> mean(const GridField& f) {
  std::vector<double> m(f.ncomp(), 0.0);
  for (int i = 0; i < f.nodes(); ++i)
    for (int c = 0; c < f.ncomp(); ++c) m[c] += f(i, c);
  for (double& x : m) x /= f.nodes();
  return m;
}

double mean_scalar(const GridField& f) {
  if (f.ncomp() != 1) throw std::invalid_argument("mean_scalar: field is not scalar");
  return mean(f)[0];
}

GridField gradient(const GridField& f) {
  const int d = f.grid().dim;
  GridField out(f.grid(), d * f.ncomp());
  auto& sp = spectral_for(f.grid());
  std::vector<double> in, der(f.nodes());
  for (int c = 0; c < f.ncomp(); ++c) {
    extract_component(f, c, in);
    for (int axis = 0; axis < d; ++axis) {
      sp.derivative(in.data(), der.data(), axis);
      // (i,j) entry of the gradient of a vector field: d_i f^j
      for (int node = 0; node < f.nodes(); ++node) out(node, axis * f.ncomp() + c) = der[node];
    }
  }
  return out;
}

GridField divergence(const GridField& f) {
  const int d = f.grid().dim;
  if (f.ncomp() != d && f.ncomp() != d * d)
    throw std::invalid_argument("divergence: field must be vector or matrix valued");
  const int ncols = f.ncomp() / d;  // 1 for vectors, d for matrices
  GridField out(f.grid(), ncols);
  auto& sp = spectral_for(f.grid());
  std::vector<double> in, der(f.nodes());
  for (int j = 0; j < ncols; ++j) {
    for (int i = 0; i < d; ++i) {
      extract_component(f, i * ncols + j, in);
      sp.derivative(in.data(), der.data(), i);
      for (int node = 0; node < f.nodes(); ++node) out(node, j) += der[node];
    }
  }
  return out;
}

GridField inverse_neg_laplacian(const GridField& f, double scale) {
  GridField out(f.grid(), f.ncomp());
  auto& sp = spectral_for(f.grid());
  std::vector<double> in, sol(f.nodes());
  for (int c = 0; c < f.ncomp(); ++c) {
    extract_component(f, c, in);
    sp.inverse_neg_laplacian(in.data(), sol.data(), scale);
    for (int node = 0; node < f.nodes(); ++node) out(node, c) = sol[node];
  }
  return out;
}

double l2_norm(const GridField& f) { return std::sqrt(inner(f, f)); }

double inner(const GridField& a, const GridField& b) {
  if (a.grid() != b.grid() || a.ncomp() != b.ncomp())
    throw std::invalid_argument("inner: mismatched fields");
  double s = 0.0;
  const auto& va = a.data();
  const auto& vb = b.data();
  for (size_t i = 0; i < va.size(); ++i) s += va[i] * vb[i];
  return s / a.nodes();
}

}  // namespace homog
