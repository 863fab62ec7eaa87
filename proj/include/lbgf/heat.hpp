/*
 * Reference heat flow d_t rho = div(D grad rho) on the torus with a constant
 * symmetric positive-definite D, solved exactly mode by mode, and the
 * gradient-flow check
 *
 *   H(rho(T)) + int E(rho) dt + R(rho, j) - H(rho(0)) = 0   for j = -D grad rho.
 */
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "lbgf/core.hpp"
#include "lbgf/functionals.hpp"
#include "lbgf/grid.hpp"
#include "lbgf/kinetic.hpp"

namespace lbgf {

struct HeatTrajectory {
  PeriodicGrid grid;
  Eigen::MatrixXd D;
  double dt = 0.0;
  std::vector<double> times;
  std::vector<Eigen::VectorXd> rho;
};

/// Exact propagation of rho0 at time t: rho_hat(k) exp(-4 pi^2 t k.Dk).
inline Eigen::VectorXd heat_evaluate(const Eigen::VectorXd& rho0, const Eigen::MatrixXd& D, double t,
                                     const SpectralGrid& spectral) {
  detail::spd_factor(D, spectral.grid().dim);
  auto hat = spectral.forward(rho0);
  const int dim = spectral.grid().dim;
  for (std::size_t m = 0; m < hat.size(); ++m) {
    const auto k = spectral.wavevector(m);
    double kDk = 0.0;
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b) kDk += k[a] * D(a, b) * k[b];
    hat[m] *= std::exp(-4.0 * kPi * kPi * t * kDk);
  }
  return spectral.inverse(std::move(hat));
}

/// Slices at t = n dt, n = 0..T/dt.
inline HeatTrajectory heat_solve(const Eigen::VectorXd& rho0, const Eigen::MatrixXd& D, double T, double dt,
                                 const PeriodicGrid& grid) {
  const SpectralGrid spectral(grid);
  detail::spd_factor(D, grid.dim);
  if (rho0.size() != static_cast<Eigen::Index>(grid.cells())) throw UsageError("rho0 has the wrong number of cells");
  if (rho0.minCoeff() < 0.0) throw DomainError("initial density is negative");
  if (!(T > 0.0) || !(dt > 0.0)) throw ConfigError("heat solve needs positive T and dt");
  const auto steps = std::llround(T / dt);
  if (steps < 1 || std::abs(T / dt - static_cast<double>(steps)) > 1e-9 * T / dt) {
    throw ConfigError("final time must be a whole number of time steps");
  }
  const double mass = grid.cell_volume() * rho0.sum();
  if (!(mass > 0.0)) throw DomainError("initial density has zero mass");
  const Eigen::VectorXd r0 = rho0 / mass;

  HeatTrajectory traj;
  traj.grid = grid;
  traj.D = D;
  traj.dt = dt;
  for (long long n = 0; n <= steps; ++n) {
    const double t = static_cast<double>(n) * dt;
    traj.times.push_back(t);
    traj.rho.push_back(n == 0 ? r0 : heat_evaluate(r0, D, t, spectral));
  }
  return traj;
}

/// j = -D grad rho per slice (cells x d).
inline std::vector<Eigen::MatrixXd> heat_current(const HeatTrajectory& traj, const Eigen::MatrixXd& D) {
  const SpectralGrid spectral(traj.grid);
  detail::spd_factor(D, traj.grid.dim);
  std::vector<Eigen::MatrixXd> j;
  j.reserve(traj.rho.size());
  for (const auto& r : traj.rho) j.push_back(-spectral.gradient(r) * D);
  return j;
}

struct HeatFlowCheck {
  double h_initial = 0.0;
  double h_final = 0.0;
  double fisher_integral = 0.0;
  double kinematic = 0.0;
  double residual = 0.0;  // H(T) + int E + R - H(0)
  std::vector<CertificateRow> rows;  // same columns as the kinetic certificate
};

/*
 * Gradient-flow residual with the midpoint rule on averaged consecutive
 * slices. The balance column tracks H(t) - H(0) - int int j . grad rho / rho.
 */
inline HeatFlowCheck heat_gradient_flow_check(const HeatTrajectory& traj, const std::vector<Eigen::MatrixXd>& j_path,
                                              const Eigen::MatrixXd& D, const LogTruncation& trunc = {}) {
  if (traj.rho.size() < 2 || j_path.size() != traj.rho.size()) throw UsageError("heat path lengths mismatch");
  const SpectralGrid spectral(traj.grid);
  for (const auto& r : traj.rho) detail::require_positive_density(r);
  const double dv = traj.grid.cell_volume();

  HeatFlowCheck check;
  check.h_initial = heat_entropy(traj.rho.front(), traj.grid, trunc);
  CertificateRow row;
  row.entropy = check.h_initial;
  row.dirichlet = fisher_information(traj.rho.front(), D, spectral);
  check.rows.push_back(row);
  double fisher_int = 0.0, kin = 0.0, balance_flux = 0.0;
  for (std::size_t n = 0; n + 1 < traj.rho.size(); ++n) {
    const double dt = traj.times[n + 1] - traj.times[n];
    const Eigen::VectorXd rm = 0.5 * (traj.rho[n] + traj.rho[n + 1]);
    const Eigen::MatrixXd jm = 0.5 * (j_path[n] + j_path[n + 1]);
    fisher_int += dt * fisher_information(rm, D, spectral);
    kin += heat_kinematic({traj.rho[n], traj.rho[n + 1]}, {j_path[n], j_path[n + 1]}, D, dt, traj.grid);
    const Eigen::MatrixXd g = spectral.gradient(rm);
    balance_flux += dt * dv * (jm.cwiseProduct(g).rowwise().sum()).cwiseQuotient(rm).sum();

    row = CertificateRow{};
    row.t = traj.times[n + 1];
    row.entropy = heat_entropy(traj.rho[n + 1], traj.grid, trunc);
    row.dirichlet = fisher_information(traj.rho[n + 1], D, spectral);
    row.dirichlet_integral = fisher_int;
    row.kinematic = kin;
    row.edi_residual = row.entropy + fisher_int + kin - check.h_initial;
    row.balance_residual = row.entropy - check.h_initial - balance_flux;
    check.rows.push_back(row);
  }
  check.h_final = row.entropy;
  check.fisher_integral = fisher_int;
  check.kinematic = kin;
  check.residual = row.edi_residual;
  return check;
}

}  // namespace lbgf
