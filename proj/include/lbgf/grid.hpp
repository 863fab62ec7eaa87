/*
 * Periodic spatial grid on the unit torus T^d and the spectral helpers built
 * on it.
 *
 * Cells are stored row-major over the axes (axis 0 slowest); the sample
 * point of cell (i_0, ..., i_{d-1}) is x = (i_0, ..., i_{d-1}) / n. Fourier
 * modes use integer wavevectors k, so a mode is exp(2 pi i k.x).
 */
#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <array>
#include <complex>
#include <cstddef>
#include <vector>

#include "lbgf/core.hpp"

namespace lbgf {

using Complex = std::complex<double>;

struct PeriodicGrid {
  int dim = 1;
  int n = 64;  // cells per axis

  std::size_t cells() const {
    std::size_t c = 1;
    for (int a = 0; a < dim; ++a) c *= static_cast<std::size_t>(n);
    return c;
  }
  double spacing() const { return 1.0 / n; }
  double cell_volume() const { return 1.0 / static_cast<double>(cells()); }

  /// Multi-index of a flat cell index.
  std::array<int, 3> index(std::size_t cell) const {
    std::array<int, 3> idx{0, 0, 0};
    for (int a = dim - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(cell % n);
      cell /= n;
    }
    return idx;
  }

  std::size_t flat(const std::array<int, 3>& idx) const {
    std::size_t c = 0;
    for (int a = 0; a < dim; ++a) c = c * n + static_cast<std::size_t>(((idx[a] % n) + n) % n);
    return c;
  }

  std::array<double, 3> position(std::size_t cell) const {
    const auto idx = index(cell);
    return {idx[0] * spacing(), idx[1] * spacing(), idx[2] * spacing()};
  }

  /// Stride between neighbouring cells along an axis.
  std::size_t stride(int axis) const {
    std::size_t s = 1;
    for (int a = dim - 1; a > axis; --a) s *= static_cast<std::size_t>(n);
    return s;
  }

  void validate() const {
    if (dim < 1 || dim > 3) throw ConfigError("spatial dimension must be 1, 2 or 3");
    if (n < 4) throw ConfigError("need at least 4 cells per axis");
  }
};

/// Signed integer frequency of FFT bin m on an n-point axis.
inline int frequency(int m, int n) { return m <= n / 2 ? m : m - n; }

/*
 * Multi-dimensional FFT on a grid, applied axis by axis. Inverse transforms
 * are normalized, so inverse(forward(u)) == u.
 */
class SpectralGrid {
 public:
  explicit SpectralGrid(PeriodicGrid grid) : grid_(grid) { grid_.validate(); }

  const PeriodicGrid& grid() const { return grid_; }

  std::vector<Complex> forward(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    std::vector<Complex> data(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) data[i] = u[i];
    transform(data, false);
    return data;
  }

  Eigen::VectorXd inverse(std::vector<Complex> data) const {
    transform(data, true);
    Eigen::VectorXd out(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) out[static_cast<Eigen::Index>(i)] = data[i].real();
    return out;
  }

  /// Integer wavevector of a flat mode index.
  std::array<int, 3> wavevector(std::size_t mode) const {
    auto idx = grid_.index(mode);
    for (int a = 0; a < grid_.dim; ++a) idx[a] = frequency(idx[a], grid_.n);
    return idx;
  }

  /// Spectral partial derivative along one axis; the Nyquist mode is dropped.
  Eigen::VectorXd derivative(const Eigen::Ref<const Eigen::VectorXd>& u, int axis) const {
    auto hat = forward(u);
    for (std::size_t m = 0; m < hat.size(); ++m) {
      const int k = wavevector(m)[axis];
      hat[m] *= (2 * k == grid_.n) ? Complex(0.0) : Complex(0.0, 2.0 * kPi * k);
    }
    return inverse(std::move(hat));
  }

  /// Gradient as a cells x dim matrix.
  Eigen::MatrixXd gradient(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    Eigen::MatrixXd g(u.size(), grid_.dim);
    for (int a = 0; a < grid_.dim; ++a) g.col(a) = derivative(u, a);
    return g;
  }

  void transform(std::vector<Complex>& data, bool inverse) const {
    const std::size_t n = static_cast<std::size_t>(grid_.n);
    std::vector<Complex> line(n), out(n);
    for (int axis = 0; axis < grid_.dim; ++axis) {
      const std::size_t stride = grid_.stride(axis);
      const std::size_t block = stride * n;
      for (std::size_t base = 0; base < data.size(); base += block) {
        for (std::size_t offset = 0; offset < stride; ++offset) {
          for (std::size_t m = 0; m < n; ++m) line[m] = data[base + offset + m * stride];
          if (inverse) {
            fft_.inv(out, line);
          } else {
            fft_.fwd(out, line);
          }
          for (std::size_t m = 0; m < n; ++m) data[base + offset + m * stride] = out[m];
        }
      }
    }
  }

 private:
  PeriodicGrid grid_;
  mutable Eigen::FFT<double> fft_;
};

}  // namespace lbgf
