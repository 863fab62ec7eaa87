/*
 * Convex costs and integral functionals of the entropy-dissipation
 * formulation.
 *
 *   Phi_k(p, q; xi) = sup_l  l xi - k p (e^l - 1) - k q (e^-l - 1)
 *   Psi_k(p, q; xi) = sup_l  l xi - 2 k sqrt(pq) (cosh l - 1)
 *
 * Both are evaluated in closed form. Degenerate arguments (p q = 0 or
 * k = 0) follow the supremum, so the result may be +infinity, which is
 * carried by the Cost tag.
 *
 * Densities on the phase-space grid are Slices: one row per spatial cell,
 * one column per velocity node.
 */
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "lbgf/core.hpp"
#include "lbgf/grid.hpp"
#include "lbgf/log.hpp"
#include "lbgf/parallel.hpp"
#include "lbgf/velocity.hpp"

namespace lbgf {

using Slice = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// asinh written through log1p, accurate for tiny arguments and safe for huge ones.
inline double stable_asinh(double x) {
  const double a = std::abs(x);
  double r;
  if (a > 1e150) {
    r = std::log(a) + std::log(2.0);
  } else {
    r = std::log1p(a + a * a / (1.0 + std::sqrt(1.0 + a * a)));
  }
  return std::copysign(r, x);
}

namespace detail {

inline void require_nonnegative(double kappa, double p, double q) {
  if (!(kappa >= 0.0) || !(p >= 0.0) || !(q >= 0.0)) {
    throw DomainError("convex cost needs nonnegative rate and densities");
  }
}

// 1 - e^x (1 - x), the value of the Phi supremum per unit k p.
inline double bregman_exp(double x) {
  if (std::abs(x) < 1e-3) {
    const double x2 = x * x;
    return x2 * (0.5 + x * (1.0 / 3.0 + x * (1.0 / 8.0 + x * (1.0 / 30.0 + x / 144.0))));
  }
  return x * std::exp(x) - std::expm1(x);
}

// x log(x / a) - x + a, the Phi supremum when one density vanishes.
inline Cost entropy_cost(double x, double a) {
  if (x < 0.0) return Cost::infinite();
  if (x == 0.0) return Cost::finite(a);
  if (a == 0.0) return Cost::infinite();
  return Cost::finite(x * std::log(x / a) - x + a);
}

}  // namespace detail

inline Cost phi(double kappa, double p, double q, double xi) {
  detail::require_nonnegative(kappa, p, q);
  if (kappa == 0.0) return xi == 0.0 ? Cost::finite(0.0) : Cost::infinite();
  if (q == 0.0 && p == 0.0) return xi == 0.0 ? Cost::finite(0.0) : Cost::infinite();
  if (q == 0.0) return detail::entropy_cost(xi, kappa * p);
  if (p == 0.0) return detail::entropy_cost(-xi, kappa * q);

  // Optimal dual variable; it vanishes exactly on the zero set xi = k (p - q).
  const double s = kappa * std::sqrt(p * q);
  const double l = stable_asinh(xi / (2.0 * s)) - 0.5 * std::log(p / q);
  if (std::abs(l) > 700.0) {
    const double v = l * xi - std::sqrt(xi * xi + 4.0 * s * s) + kappa * (p + q);
    return Cost::finite(std::max(v, 0.0));
  }
  const double v = kappa * (p * detail::bregman_exp(l) + q * detail::bregman_exp(-l));
  return Cost::finite(std::max(v, 0.0));
}

inline double phi_slope_at_zero(double p, double q) {
  if (!(p > 0.0) || !(q > 0.0)) throw DomainError("slope of Phi at zero needs positive densities");
  return 0.5 * std::log(q / p);
}

inline Cost psi(double kappa, double p, double q, double xi) {
  detail::require_nonnegative(kappa, p, q);
  const double s = kappa * std::sqrt(p * q);
  if (s == 0.0) return xi == 0.0 ? Cost::finite(0.0) : Cost::infinite();
  if (xi == 0.0) return Cost::finite(0.0);
  const double v = xi * stable_asinh(xi / (2.0 * s)) - xi * xi / (std::hypot(xi, 2.0 * s) + 2.0 * s);
  return Cost::finite(std::max(v, 0.0));
}

/// Uniform grid of dual variables on [-half_width, half_width].
inline std::vector<double> legendre_grid(double half_width, double step) {
  if (!(half_width > 0.0) || !(step > 0.0)) throw UsageError("legendre grid needs positive width and step");
  const auto n = static_cast<long>(std::floor(half_width / step));
  std::vector<double> grid;
  grid.reserve(2 * n + 1);
  for (long k = -n; k <= n; ++k) grid.push_back(static_cast<double>(k) * step);
  return grid;
}

/// Discrete supremum of the Psi Legendre form; a test oracle, not a production path.
inline Cost psi_legendre_oracle(double kappa, double p, double q, double xi, const std::vector<double>& lambda_grid) {
  if (lambda_grid.empty()) throw UsageError("empty Legendre grid");
  detail::require_nonnegative(kappa, p, q);
  if (!(p * q > 0.0)) throw DomainError("Legendre oracle needs p q > 0");
  const double s = kappa * std::sqrt(p * q);
  double best = -std::numeric_limits<double>::infinity();
  for (double l : lambda_grid) best = std::max(best, l * xi - 2.0 * s * (std::cosh(l) - 1.0));
  return Cost::finite(best);
}

/// Logarithm clamped to [log delta, log upper].
struct LogTruncation {
  double delta = 1e-300;
  double upper = 1e300;

  double operator()(double x) const { return std::log(std::clamp(x, delta, upper)); }
};

inline double truncated_log(double x, const LogTruncation& t = {}) { return t(x); }

namespace detail {
inline void require_slice(const Slice& f, const VelocityModel& model) {
  if (f.cols() != model.size()) throw UsageError("slice has the wrong number of velocity nodes");
  if (f.size() == 0) throw UsageError("empty slice");
}
inline void require_nonnegative(const Slice& f) {
  if (f.minCoeff() < 0.0) throw DomainError("density is negative");
}
}  // namespace detail

/// sum_x dx sum_i w_i f log f, with 0 log 0 = 0.
inline double relative_entropy(const Slice& f, const VelocityModel& model, double cell_volume,
                               const LogTruncation& trunc = {}) {
  detail::require_slice(f, model);
  detail::require_nonnegative(f);
  double total = 0.0;
  for (Eigen::Index c = 0; c < f.rows(); ++c) {
    double cell = 0.0;
    for (Eigen::Index i = 0; i < f.cols(); ++i) {
      const double v = f(c, i);
      if (v > 0.0) cell += model.weights[i] * v * trunc(v);
    }
    total += cell;
  }
  return cell_volume * total;
}

/// sum_x dx sum_ij w_i w_j S_ij (sqrt f_j - sqrt f_i)^2.
inline double dirichlet_form(const Slice& f, const VelocityModel& model, double cell_volume) {
  detail::require_slice(f, model);
  detail::require_nonnegative(f);
  const auto n = model.size();
  std::vector<double> per_cell(static_cast<std::size_t>(f.rows()));
  parallel_for(per_cell.size(), [&](std::size_t c) {
    const Eigen::RowVectorXd r = f.row(static_cast<Eigen::Index>(c)).cwiseSqrt();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double row = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double d = r[j] - r[i];
        row += model.weights[j] * model.sigma(j, i) * d * d;
      }
      acc += model.weights[i] * row;
    }
    per_cell[c] = 2.0 * acc;
  });
  double total = 0.0;
  for (double v : per_cell) total += v;
  return cell_volume * total;
}

/*
 * Collision current eta(x, v_i, v_j), antisymmetric in (i, j). Either
 * generated from a density as scale * S_ij (f_i - f_j) or given explicitly
 * as one matrix per cell. A generated field keeps a pointer to the model's
 * scattering matrix, so the model must outlive it.
 */
class CurrentField {
 public:
  static CurrentField of_density(const VelocityModel& model, Slice f, double scale = 1.0) {
    detail::require_slice(f, model);
    CurrentField c;
    c.sigma_ = &model.sigma;
    c.density_ = std::move(f);
    c.scale_ = scale;
    return c;
  }

  static CurrentField explicit_values(std::vector<Eigen::MatrixXd> per_cell) {
    if (per_cell.empty()) throw UsageError("current field needs at least one cell");
    const auto n = per_cell.front().rows();
    for (const auto& m : per_cell) {
      if (m.rows() != n || m.cols() != n) throw UsageError("current matrices must be square and equal-sized");
    }
    CurrentField c;
    c.values_ = std::move(per_cell);
    return c;
  }

  bool generated() const { return sigma_ != nullptr; }
  Eigen::Index cells() const { return generated() ? density_.rows() : static_cast<Eigen::Index>(values_.size()); }
  Eigen::Index nodes() const { return generated() ? density_.cols() : values_.front().rows(); }

  double operator()(Eigen::Index cell, Eigen::Index i, Eigen::Index j) const {
    if (generated()) return scale_ * (*sigma_)(i, j) * (density_(cell, i) - density_(cell, j));
    return values_[static_cast<std::size_t>(cell)](i, j);
  }

  Eigen::MatrixXd cell_matrix(Eigen::Index cell) const {
    if (!generated()) return values_[static_cast<std::size_t>(cell)];
    const auto n = nodes();
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) m(i, j) = (*this)(cell, i, j);
    return m;
  }

  /// max |eta_ij + eta_ji|; zero by construction for generated fields.
  double max_asymmetry() const {
    if (generated()) return 0.0;
    double a = 0.0;
    for (const auto& m : values_) a = std::max(a, (m + m.transpose()).cwiseAbs().maxCoeff());
    return a;
  }

  CurrentField scaled(double factor) const {
    CurrentField c = *this;
    if (generated()) {
      c.scale_ *= factor;
    } else {
      for (auto& m : c.values_) m *= factor;
    }
    return c;
  }

  /// Average of two fields on the same cells.
  static CurrentField midpoint(const CurrentField& a, const CurrentField& b) {
    if (a.cells() != b.cells() || a.nodes() != b.nodes()) throw UsageError("current fields differ in shape");
    if (a.generated() && b.generated() && a.sigma_ == b.sigma_ && a.scale_ == b.scale_) {
      CurrentField c = a;
      c.density_ = 0.5 * (a.density_ + b.density_);
      return c;
    }
    std::vector<Eigen::MatrixXd> avg;
    avg.reserve(static_cast<std::size_t>(a.cells()));
    for (Eigen::Index cell = 0; cell < a.cells(); ++cell) {
      avg.push_back(0.5 * (a.cell_matrix(cell) + b.cell_matrix(cell)));
    }
    return explicit_values(std::move(avg));
  }

 private:
  const Eigen::MatrixXd* sigma_ = nullptr;
  Slice density_;
  double scale_ = 1.0;
  std::vector<Eigen::MatrixXd> values_;
};

namespace detail {

inline void require_antisymmetric(const CurrentField& eta, double tol = 1e-12) {
  if (eta.max_asymmetry() > tol) throw DomainError("current is not antisymmetric in (v, v')");
}

/*
 * Sum over cells and ordered node pairs of w_i w_j cost(S_ij, f_i, f_j, eta_ij),
 * evaluated on one slice. The cost must be symmetric under the exchange
 * (i, j) together with the sign of eta, so only i < j is visited.
 */
template <class CostFn>
Cost pair_sum(const Slice& f, const CurrentField& eta, const VelocityModel& model, CostFn&& cost) {
  const auto n = model.size();
  std::vector<Cost> per_cell(static_cast<std::size_t>(f.rows()));
  parallel_for(per_cell.size(), [&](std::size_t cu) {
    const auto c = static_cast<Eigen::Index>(cu);
    Cost acc;
    for (Eigen::Index i = 0; i < n && acc.is_finite(); ++i) {
      Cost row;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        row += cost(model.sigma(j, i), f(c, i), f(c, j), eta(c, i, j)).scaled(model.weights[j]);
      }
      acc += row.scaled(model.weights[i]);
    }
    per_cell[cu] = acc.scaled(2.0);
  });
  Cost total;
  for (const auto& v : per_cell) total += v;
  return total;
}

inline void require_path(const std::vector<Slice>& f_path, const std::vector<CurrentField>& eta_path,
                         const VelocityModel& model) {
  if (f_path.size() < 2) throw UsageError("time integral needs at least two slices");
  if (f_path.size() != eta_path.size()) throw UsageError("density and current paths differ in length");
  for (std::size_t n = 0; n < f_path.size(); ++n) {
    require_slice(f_path[n], model);
    require_nonnegative(f_path[n]);
    if (eta_path[n].cells() != f_path[n].rows() || eta_path[n].nodes() != model.size()) {
      throw UsageError("current field shape does not match the density");
    }
    require_antisymmetric(eta_path[n]);
  }
}

}  // namespace detail

/// Psi-cost of one slice: sum_x dx sum_ij w_i w_j Psi_{S_ij}(f_i, f_j; eta_ij).
inline Cost kinematic_density(const Slice& f, const CurrentField& eta, const VelocityModel& model,
                              double cell_volume) {
  detail::require_slice(f, model);
  detail::require_nonnegative(f);
  detail::require_antisymmetric(eta);
  return detail::pair_sum(f, eta, model, [](double k, double p, double q, double x) { return psi(k, p, q, x); })
      .scaled(cell_volume);
}

/// Phi-cost of one slice; zero exactly when eta is the current of f.
inline Cost phi_density(const Slice& f, const CurrentField& eta, const VelocityModel& model, double cell_volume) {
  detail::require_slice(f, model);
  detail::require_nonnegative(f);
  detail::require_antisymmetric(eta);
  return detail::pair_sum(f, eta, model, [](double k, double p, double q, double x) { return phi(k, p, q, x); })
      .scaled(cell_volume);
}

/*
 * Time integral of the kinematic term. Interval n contributes
 * dt * (density at the averaged slices (f^n + f^{n+1}) / 2, (eta^n + eta^{n+1}) / 2).
 */
inline Cost kinematic_term(const std::vector<Slice>& f_path, const std::vector<CurrentField>& eta_path,
                           const VelocityModel& model, double dt, double cell_volume) {
  detail::require_path(f_path, eta_path, model);
  Cost total;
  for (std::size_t n = 0; n + 1 < f_path.size(); ++n) {
    const Slice fm = 0.5 * (f_path[n] + f_path[n + 1]);
    const auto em = CurrentField::midpoint(eta_path[n], eta_path[n + 1]);
    total += kinematic_density(fm, em, model, cell_volume).scaled(dt);
  }
  return total;
}

/*
 * Integrand of the variational formula for the Dirichlet form at a test
 * function phi (cells x nodes): sum_x dx sum_ij w_i w_j S_ij f_i (1 - e^{phi_j - phi_i}).
 * Its supremum over phi, attained at phi = log(f) / 2, equals half of dirichlet_form.
 */
inline double dirichlet_lower_bound(const Slice& f, const VelocityModel& model, double cell_volume,
                                    const Slice& phi_test) {
  detail::require_slice(f, model);
  detail::require_nonnegative(f);
  if (phi_test.rows() != f.rows() || phi_test.cols() != f.cols()) throw UsageError("test function shape mismatch");
  const auto n = model.size();
  double total = 0.0;
  for (Eigen::Index c = 0; c < f.rows(); ++c) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double row = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row += model.weights[j] * model.sigma(j, i) * (1.0 - std::exp(phi_test(c, j) - phi_test(c, i)));
      }
      acc += model.weights[i] * f(c, i) * row;
    }
    total += acc;
  }
  return cell_volume * total;
}

/// Test function on (interval, cell, i, j).
using PairTest = std::function<double(std::size_t, Eigen::Index, Eigen::Index, Eigen::Index)>;

/*
 * Variational probe of the kinematic term at an antisymmetric zeta and a
 * positive alpha:
 *   int dt sum_x dx sum_ij w_i w_j [eta zeta - S_ij f_i (cosh zeta - 1)(alpha_ij + 1/alpha_ji)].
 * Never exceeds kinematic_term on the same path.
 */
inline double kinematic_lower_bound(const std::vector<Slice>& f_path, const std::vector<CurrentField>& eta_path,
                                    const VelocityModel& model, double dt, double cell_volume,
                                    const PairTest& zeta, const PairTest& alpha) {
  detail::require_path(f_path, eta_path, model);
  const auto n = model.size();
  double total = 0.0;
  for (std::size_t step = 0; step + 1 < f_path.size(); ++step) {
    const Slice fm = 0.5 * (f_path[step] + f_path[step + 1]);
    const auto em = CurrentField::midpoint(eta_path[step], eta_path[step + 1]);
    double slice = 0.0;
    for (Eigen::Index c = 0; c < fm.rows(); ++c) {
      for (Eigen::Index i = 0; i < n; ++i) {
        double row = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
          const double z = zeta(step, c, i, j);
          const double a_ij = alpha(step, c, i, j);
          const double a_ji = alpha(step, c, j, i);
          if (!(a_ij > 0.0) || !(a_ji > 0.0)) throw DomainError("alpha test function must be positive");
          row += model.weights[j] * (em(c, i, j) * z - model.sigma(j, i) * fm(c, i) * (std::cosh(z) - 1.0) *
                                                           (a_ij + 1.0 / a_ji));
        }
        slice += model.weights[i] * row;
      }
    }
    total += dt * cell_volume * slice;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Heat-equation functionals on the spatial grid.

namespace detail {

inline Eigen::LLT<Eigen::MatrixXd> spd_factor(const Eigen::MatrixXd& D, int dim) {
  if (D.rows() != dim || D.cols() != dim) throw UsageError("diffusion matrix has the wrong size");
  if ((D - D.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, D.cwiseAbs().maxCoeff())) {
    throw DomainError("diffusion matrix is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(D);
  if (llt.info() != Eigen::Success) throw DomainError("diffusion matrix is singular or not positive definite");
  return llt;
}

inline void require_positive_density(const Eigen::VectorXd& rho) {
  if (!(rho.minCoeff() > 0.0)) {
    throw DomainError("density touches zero; apply a positivity floor before evaluating 1/rho or log rho");
  }
}

inline constexpr double kHeatDensityFloor = 1e-14;

// rho clamped below at 1e-14 for use inside 1/rho and log rho.
inline Eigen::VectorXd floored_density(const Eigen::VectorXd& rho) {
  require_positive_density(rho);
  if (rho.minCoeff() < kHeatDensityFloor) log::note("heat functional: density floor 1e-14 activated");
  return rho.cwiseMax(kHeatDensityFloor);
}

}  // namespace detail

/// int rho log rho dx.
inline double heat_entropy(const Eigen::VectorXd& rho, const PeriodicGrid& grid, const LogTruncation& trunc = {}) {
  if (rho.minCoeff() < 0.0) throw DomainError("density is negative");
  double total = 0.0;
  for (Eigen::Index c = 0; c < rho.size(); ++c) {
    if (rho[c] > 0.0) total += rho[c] * trunc(rho[c]);
  }
  return grid.cell_volume() * total;
}

/// (1/2) int grad rho . D grad rho / rho dx, spectral gradient.
inline double fisher_information(const Eigen::VectorXd& rho, const Eigen::MatrixXd& D, const SpectralGrid& spectral) {
  const auto& grid = spectral.grid();
  detail::spd_factor(D, grid.dim);
  const Eigen::VectorXd r = detail::floored_density(rho);
  const Eigen::MatrixXd g = spectral.gradient(rho);
  const Eigen::VectorXd q = (g * D).cwiseProduct(g).rowwise().sum();
  return 0.5 * grid.cell_volume() * q.cwiseQuotient(r).sum();
}

/// Applies div(D grad .) spectrally.
inline Eigen::VectorXd apply_heat_operator(const Eigen::VectorXd& u, const Eigen::MatrixXd& D,
                                           const SpectralGrid& spectral) {
  auto hat = spectral.forward(u);
  const int dim = spectral.grid().dim;
  for (std::size_t m = 0; m < hat.size(); ++m) {
    const auto k = spectral.wavevector(m);
    double kDk = 0.0;
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b) kDk += k[a] * D(a, b) * k[b];
    hat[m] *= -4.0 * kPi * kPi * kDk;
  }
  return spectral.inverse(std::move(hat));
}

/// Variational probe of the Fisher information: 2 (-int rho e^-phi div(D grad e^phi)).
inline double fisher_lower_bound(const Eigen::VectorXd& rho, const Eigen::MatrixXd& D, const SpectralGrid& spectral,
                                 const Eigen::VectorXd& phi_test) {
  detail::spd_factor(D, spectral.grid().dim);
  const Eigen::VectorXd e = phi_test.array().exp().matrix();
  const Eigen::VectorXd le = apply_heat_operator(e, D, spectral);
  return -2.0 * spectral.grid().cell_volume() * (rho.array() * le.array() / e.array()).sum();
}

/// (1/2) int dt int j . D^-1 j / rho dx with midpoint quadrature on averaged slices.
inline double heat_kinematic(const std::vector<Eigen::VectorXd>& rho_path, const std::vector<Eigen::MatrixXd>& j_path,
                             const Eigen::MatrixXd& D, double dt, const PeriodicGrid& grid) {
  const auto llt = detail::spd_factor(D, grid.dim);
  if (rho_path.size() < 2 || rho_path.size() != j_path.size()) throw UsageError("heat path lengths mismatch");
  double total = 0.0;
  for (std::size_t n = 0; n + 1 < rho_path.size(); ++n) {
    const Eigen::VectorXd rho = detail::floored_density(0.5 * (rho_path[n] + rho_path[n + 1]));
    const Eigen::MatrixXd j = 0.5 * (j_path[n] + j_path[n + 1]);
    const Eigen::MatrixXd dj = llt.solve(j.transpose()).transpose();
    total += dt * 0.5 * grid.cell_volume() * (j.cwiseProduct(dj).rowwise().sum()).cwiseQuotient(rho).sum();
  }
  return total;
}

/// Variational probe J(w) - (1/2) int int rho w . D w at a test field w(interval) (cells x d).
inline double heat_kinematic_lower_bound(const std::vector<Eigen::VectorXd>& rho_path,
                                         const std::vector<Eigen::MatrixXd>& j_path, const Eigen::MatrixXd& D,
                                         double dt, const PeriodicGrid& grid,
                                         const std::function<Eigen::MatrixXd(std::size_t)>& w_test) {
  detail::spd_factor(D, grid.dim);
  if (rho_path.size() < 2 || rho_path.size() != j_path.size()) throw UsageError("heat path lengths mismatch");
  double total = 0.0;
  for (std::size_t n = 0; n + 1 < rho_path.size(); ++n) {
    const Eigen::VectorXd rho = 0.5 * (rho_path[n] + rho_path[n + 1]);
    const Eigen::MatrixXd j = 0.5 * (j_path[n] + j_path[n + 1]);
    const Eigen::MatrixXd w = w_test(n);
    const double pairing = j.cwiseProduct(w).sum();
    const double quad = ((w * D).cwiseProduct(w).rowwise().sum()).cwiseProduct(rho).sum();
    total += dt * grid.cell_volume() * (pairing - 0.5 * quad);
  }
  return total;
}

/// Values of the functionals at one time slice, plus optional variational probes.
struct FunctionalReport {
  double entropy = 0.0;
  double dirichlet = 0.0;
  double kinematic = 0.0;
  double fisher = 0.0;
  std::optional<double> dirichlet_probe;
  std::optional<double> kinematic_probe;
};

}  // namespace lbgf
