/*
 * Discretized velocity space and the operators acting on it.
 *
 * A model is a quadrature (nodes, weights w) of the reference probability
 * measure together with a symmetric scattering matrix S, the drift b at each
 * node and the rate lambda = S w. Every operator here is exact on the
 * discrete model:
 *
 *   (L g)_i = sum_j w_j S_ij (g_j - g_i)
 *   (K g)_i = sum_j w_j S_ij g_j / lambda_i,      -L = lambda (id - K)
 *
 * Functions are templated on the Eigen argument so that a single vector or a
 * block of columns (one per drift component) can be passed.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "lbgf/core.hpp"
#include "lbgf/log.hpp"

namespace lbgf {

struct InvariantReport {
  double weight_sum_error = 0.0;  // |sum w - 1|
  double sigma_asymmetry = 0.0;   // max |S_ij - S_ji|
  double sigma_min = 0.0;
  double rate_error = 0.0;        // max |lambda - S w|
  double centering = 0.0;         // max_a |sum_i w_i b_ia|

  bool ok(double tol, double centering_tol) const {
    return weight_sum_error <= tol && sigma_asymmetry == 0.0 && sigma_min >= 0.0 &&
           rate_error <= tol && centering <= centering_tol;
  }
};

struct VelocityModel {
  std::string kind;
  Eigen::MatrixXd nodes;    // N x (coordinate count); model-specific coordinates
  Eigen::VectorXd weights;  // N
  Eigen::MatrixXd drift;    // N x d
  Eigen::MatrixXd sigma;    // N x N, symmetric, nonnegative
  Eigen::VectorXd rate;     // N
  double centering_tol = 1e-12;
  std::map<std::string, double> diagnostics;

  Eigen::Index size() const { return weights.size(); }
  int drift_dim() const { return static_cast<int>(drift.cols()); }

  /// Builds a model from its ingredients; the rate is computed as S w.
  static VelocityModel assemble(std::string kind, Eigen::MatrixXd nodes, Eigen::VectorXd weights,
                                Eigen::MatrixXd drift, Eigen::MatrixXd sigma,
                                double centering_tol = 1e-12) {
    const auto n = weights.size();
    if (n == 0) throw UsageError("velocity model needs at least one node");
    if (sigma.rows() != n || sigma.cols() != n || drift.rows() != n || nodes.rows() != n) {
      throw UsageError("velocity model arrays have inconsistent sizes");
    }
    VelocityModel m;
    m.kind = std::move(kind);
    m.nodes = std::move(nodes);
    m.weights = std::move(weights);
    m.drift = std::move(drift);
    m.sigma = std::move(sigma);
    m.rate = m.sigma * m.weights;
    m.centering_tol = centering_tol;
    const auto report = m.check_invariants();
    if (!report.ok(1e-12, centering_tol)) {
      std::ostringstream msg;
      msg << m.kind << " model violates invariants: weight sum error " << report.weight_sum_error
          << ", sigma asymmetry " << report.sigma_asymmetry << ", sigma min " << report.sigma_min
          << ", centering " << report.centering;
      throw NumericalQualityError(msg.str());
    }
    return m;
  }

  InvariantReport check_invariants() const {
    InvariantReport r;
    r.weight_sum_error = std::abs(weights.sum() - 1.0);
    r.sigma_asymmetry = (sigma - sigma.transpose()).cwiseAbs().maxCoeff();
    r.sigma_min = sigma.minCoeff();
    r.rate_error = (rate - sigma * weights).cwiseAbs().maxCoeff();
    r.centering = drift.cols() == 0 ? 0.0 : (drift.transpose() * weights).cwiseAbs().maxCoeff();
    return r;
  }

  /// Generator as a dense matrix: S diag(w) - diag(lambda).
  Eigen::MatrixXd generator_matrix() const {
    Eigen::MatrixXd L = sigma * weights.asDiagonal();
    L.diagonal() -= rate;
    return L;
  }
};

namespace detail {
template <class Derived>
void check_rows(const VelocityModel& model, const Eigen::MatrixBase<Derived>& g) {
  if (g.rows() != model.size()) throw UsageError("function size does not match velocity node count");
}
inline void require_positive_rate(const VelocityModel& model) {
  if (model.rate.size() > 0 && model.rate.minCoeff() <= 0.0) {
    throw DomainError("operator K is undefined at a node with zero scattering rate");
  }
}
}  // namespace detail

template <class Derived>
Eigen::Matrix<double, Eigen::Dynamic, Derived::ColsAtCompileTime> apply_generator(
    const VelocityModel& model, const Eigen::MatrixBase<Derived>& g) {
  detail::check_rows(model, g);
  return model.sigma * (model.weights.asDiagonal() * g) - model.rate.asDiagonal() * g;
}

template <class Derived>
Eigen::Matrix<double, Eigen::Dynamic, Derived::ColsAtCompileTime> apply_k(
    const VelocityModel& model, const Eigen::MatrixBase<Derived>& g) {
  detail::check_rows(model, g);
  detail::require_positive_rate(model);
  return model.rate.cwiseInverse().asDiagonal() * (model.sigma * (model.weights.asDiagonal() * g));
}

/// Probability weights lambda_i w_i / pi(lambda), under which K is self-adjoint.
struct TiltedMeasure {
  Eigen::VectorXd weights;

  template <class Derived>
  Eigen::RowVectorXd mean(const Eigen::MatrixBase<Derived>& g) const {
    return weights.transpose() * g;
  }
  double inner(const Eigen::VectorXd& f, const Eigen::VectorXd& g) const {
    return f.cwiseProduct(weights).dot(g);
  }
};

inline TiltedMeasure tilted_measure(const VelocityModel& model) {
  const double mean_rate = model.weights.dot(model.rate);
  if (!(mean_rate > 0.0)) throw DomainError("tilted measure needs a positive mean scattering rate");
  TiltedMeasure t;
  t.weights = model.rate.cwiseProduct(model.weights) / mean_rate;
  return t;
}

struct PoissonSolution {
  Eigen::MatrixXd xi;  // N x d
  double residual = 0.0;
  int iterations = 0;
};

/// max-norm of (-L) xi - b.
inline double poisson_residual(const VelocityModel& model, const Eigen::MatrixXd& xi) {
  if (xi.size() == 0) return 0.0;
  return (-apply_generator(model, xi) - model.drift).cwiseAbs().maxCoeff();
}

/*
 * Neumann series xi = sum_n K^n (b / lambda) in L^2(pi~). The pi~-mean is
 * removed after every application of K. Iteration stops once both the
 * increment norm and the residual are below tol.
 */
inline PoissonSolution poisson_solve(const VelocityModel& model, double tol = 1e-12, int max_iter = 10000) {
  detail::require_positive_rate(model);
  const auto tilt = tilted_measure(model);
  auto center = [&](Eigen::MatrixXd& g) { g.rowwise() -= tilt.mean(g); };
  auto norm = [&](const Eigen::MatrixXd& g) {
    return std::sqrt((g.cwiseAbs2().transpose() * tilt.weights).sum());
  };

  Eigen::MatrixXd term = model.rate.cwiseInverse().asDiagonal() * model.drift;
  center(term);
  PoissonSolution sol;
  sol.xi = term;
  double increment = norm(term);
  for (int it = 1; it <= max_iter; ++it) {
    term = apply_k(model, term);
    center(term);
    sol.xi += term;
    increment = norm(term);
    sol.iterations = it;
    if (increment < tol) {
      sol.residual = poisson_residual(model, sol.xi);
      if (sol.residual < tol) return sol;
    }
  }
  sol.residual = poisson_residual(model, sol.xi);
  throw ConvergenceError("Neumann series for the velocity Poisson equation did not converge",
                         sol.residual, max_iter);
}

/// Direct solve of (-L + 1 w~^T) xi = b; the rank-one term fixes the pi~-mean to zero.
inline PoissonSolution poisson_solve_dense(const VelocityModel& model) {
  const auto tilt = tilted_measure(model);
  Eigen::MatrixXd A = -model.generator_matrix();
  A += Eigen::VectorXd::Ones(model.size()) * tilt.weights.transpose();
  PoissonSolution sol;
  sol.xi = A.partialPivLu().solve(model.drift);
  sol.residual = poisson_residual(model, sol.xi);
  return sol;
}

struct DiffusionResult {
  Eigen::MatrixXd D;        // symmetrized
  double asymmetry = 0.0;   // max |D - D^T| before symmetrization
};

/// D = sum_i w_i b_i (x) xi_i, symmetrized; rejects a clearly indefinite result.
inline DiffusionResult diffusion_matrix(const VelocityModel& model, const PoissonSolution& sol) {
  if (sol.xi.rows() != model.size() || sol.xi.cols() != model.drift.cols()) {
    throw UsageError("Poisson solution does not match the velocity model");
  }
  const Eigen::MatrixXd raw = model.drift.transpose() * model.weights.asDiagonal() * sol.xi;
  DiffusionResult out;
  out.asymmetry = raw.size() ? (raw - raw.transpose()).cwiseAbs().maxCoeff() : 0.0;
  out.D = 0.5 * (raw + raw.transpose());
  if (out.asymmetry > 0.0) {
    std::ostringstream msg;
    msg << "diffusion matrix symmetrized, asymmetry " << out.asymmetry;
    log::note(msg.str());
  }
  if (out.D.size()) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.D, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, out.D.cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
      throw NumericalQualityError("diffusion matrix is not positive semidefinite");
    }
  }
  return out;
}

/*
 * Contraction factor of K on the pi~-mean-zero subspace. rho is the largest
 * |eigenvalue| there; gap = 1 - rho and c0 = 1 / gap bounds the Poincare
 * constant of the Neumann series.
 */
struct SpectralGap {
  double rho = 0.0;
  double gap = 1.0;
  double c0 = 1.0;
  int iterations = 0;
  bool converged = true;
};

inline SpectralGap make_gap(double rho) {
  SpectralGap g;
  g.rho = rho;
  g.gap = 1.0 - rho;
  g.c0 = g.gap > 0.0 ? 1.0 / g.gap : Cost::kSentinel;
  return g;
}

inline SpectralGap spectral_gap_probe(const VelocityModel& model, double tol = 1e-12, int max_iter = 20000) {
  const auto tilt = tilted_measure(model);
  auto norm = [&](const Eigen::VectorXd& g) { return std::sqrt(g.cwiseAbs2().dot(tilt.weights)); };

  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd x(model.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = u(rng);
  x.array() -= tilt.weights.dot(x);
  if (norm(x) == 0.0) return make_gap(0.0);
  x /= norm(x);

  // Iterating K^2 avoids oscillation between eigenvalues of opposite sign.
  double estimate = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::VectorXd y = apply_k(model, x);
    y.array() -= tilt.weights.dot(y);
    Eigen::VectorXd z = apply_k(model, y);
    z.array() -= tilt.weights.dot(z);
    const double nz = norm(z);
    const double next = std::sqrt(nz);
    if (nz == 0.0) {
      auto g = make_gap(0.0);
      g.iterations = it;
      return g;
    }
    x = z / nz;
    if (std::abs(next - estimate) < tol) {
      auto g = make_gap(next);
      g.iterations = it;
      return g;
    }
    estimate = next;
  }
  auto g = make_gap(estimate);
  g.iterations = max_iter;
  g.converged = false;
  log::note("spectral gap power iteration did not converge; reporting last estimate");
  return g;
}

/// Dense oracle for the probe: eigenvalues of the symmetrized K with the constant mode deflated.
inline SpectralGap spectral_gap_dense(const VelocityModel& model) {
  detail::require_positive_rate(model);
  const auto tilt = tilted_measure(model);
  const Eigen::VectorXd sw = model.weights.cwiseSqrt();
  const Eigen::VectorXd sl = model.rate.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd M = (sw.cwiseProduct(sl)).asDiagonal() * model.sigma * (sw.cwiseProduct(sl)).asDiagonal();
  const Eigen::VectorXd u = tilt.weights.cwiseSqrt();
  M -= u * u.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  return make_gap(es.eigenvalues().cwiseAbs().maxCoeff());
}

}  // namespace lbgf
