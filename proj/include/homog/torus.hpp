#pragma once

#include <array>
#include <functional>
#include <vector>

namespace homog {

/// Uniform periodic grid on [0,1]^dim with n points per dimension.
/// Nodes are z_i = i/n; the point z = 1 is identified with z = 0.
struct TorusGrid {
  int dim = 1;
  int n = 8;

  // Rejects dim outside {1,2}, n < 8 and non-power-of-two n
  // (the spectral transforms assume a power of two).
  static TorusGrid make(int dim, int n);

  double spacing() const { return 1.0 / n; }
  int nodes() const {
    int s = n;
    for (int k = 1; k < dim; ++k) s *= n;
    return s;
  }
  // Coordinates of a node; nodes are row-major, axis 0 slowest.
  std::array<double, 2> coord(int node) const;

  bool operator==(const TorusGrid&) const = default;
};

/// Values over grid nodes with ncomp components per node (node-major).
/// ncomp = 1 for scalars, dim for vectors, dim*dim for matrices
/// (entry (i,j) at component i*dim + j).
class GridField {
 public:
  GridField() = default;
  GridField(TorusGrid grid, int ncomp, double fill = 0.0)
      : grid_(grid), ncomp_(ncomp), v_(static_cast<size_t>(grid.nodes()) * ncomp, fill) {}

  const TorusGrid& grid() const { return grid_; }
  int ncomp() const { return ncomp_; }
  int nodes() const { return grid_.nodes(); }

  double& operator()(int node, int c = 0) { return v_[static_cast<size_t>(node) * ncomp_ + c]; }
  double operator()(int node, int c = 0) const { return v_[static_cast<size_t>(node) * ncomp_ + c]; }

  std::vector<double>& data() { return v_; }
  const std::vector<double>& data() const { return v_; }

  GridField& operator+=(const GridField& o);
  GridField& operator-=(const GridField& o);
  GridField& operator*=(double s);

 private:
  TorusGrid grid_;
  int ncomp_ = 0;
  std::vector<double> v_;
};

/// Fills a field from a callable f(z, component).
GridField sample_field(const TorusGrid& g, int ncomp,
                       const std::function<double(std::array<double, 2>, int)>& f);

/// Periodic trapezoidal quadrature (plain node average); exact for
/// band-limited fields. One value per component.
std::vector<double> mean(const GridField& f);
double mean_scalar(const GridField& f);

/// Spectral derivative: multiply Fourier modes by i*2*pi*k, Nyquist zeroed.
/// scalar -> vector of partials; vector -> matrix with (i,j) = d_i f^j.
GridField gradient(const GridField& f);

/// Componentwise spectral derivative summed. vector -> scalar;
/// matrix -> vector with out_j = sum_i d_i m_{ij}.
GridField divergence(const GridField& f);

/// Solves scale * (-Laplace u) = f mode-wise with zero mean; used as
/// the constant-coefficient preconditioner for cell solves.
GridField inverse_neg_laplacian(const GridField& f, double scale);

/// L2(T^d) norm with normalized measure: sqrt(mean of |f|^2).
double l2_norm(const GridField& f);
/// Normalized L2 inner product (sums components pointwise).
double inner(const GridField& a, const GridField& b);

}  // namespace homog
