/*
 * Diffusive-limit harness: runs the rescaled kinetic equation for a list of
 * eps and compares the marginals (rho^eps, j^eps) with the heat flow driven
 * by the diffusion matrix of the velocity model.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lbgf/core.hpp"
#include "lbgf/functionals.hpp"
#include "lbgf/grid.hpp"
#include "lbgf/heat.hpp"
#include "lbgf/kinetic.hpp"
#include "lbgf/parallel.hpp"
#include "lbgf/velocity.hpp"

namespace lbgf {

struct DiffusiveOptions {
  PeriodicGrid grid{1, 64};
  TransportScheme transport = TransportScheme::spectral;
  double collision_number = 0.005;  // target dt lambda_max / eps^2 when dt is chosen automatically
  double dt_max = 1e-2;
  std::optional<double> dt;          // explicit step; checked against the limits below
  double max_collision_number = 1.0;
  bool refinement_check = true;
  double refinement_tolerance = 0.1;  // |rho(dt) - rho(dt/2)|_1 <= tolerance * l1 error
  bool record_timings = false;
};

/// Time step for one eps: explicit if given (and admissible), otherwise from the collision number.
inline double diffusive_time_step(const VelocityModel& model, double epsilon, double T, const DiffusiveOptions& opt) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  const double lambda_max = model.rate.maxCoeff();
  const double speed = model.drift.leftCols(opt.grid.dim).cwiseAbs().maxCoeff() / epsilon;
  double limit = opt.max_collision_number * epsilon * epsilon / lambda_max;
  if (opt.transport == TransportScheme::upwind) limit = std::min(limit, opt.grid.spacing() / speed);
  if (opt.dt) {
    if (*opt.dt > limit * (1.0 + 1e-12)) {
      std::ostringstream msg;
      msg << "dt = " << *opt.dt << " is too large at eps = " << epsilon << "; suggested dt <= " << limit;
      throw ConfigError(msg.str());
    }
    return *opt.dt;
  }
  double dt = std::min({opt.dt_max, opt.collision_number * epsilon * epsilon / lambda_max, limit});
  const double steps = std::ceil(T / dt - 1e-9);
  return T / steps;
}

/// Rescaled run from local equilibrium rho0 (x) 1, or from a supplied f0 with finite entropy.
inline KineticState rescaled_run(const VelocityModel& model, const Eigen::VectorXd& rho0, double epsilon, double T,
                                 const DiffusiveOptions& opt = {}, const std::optional<Slice>& f0 = std::nullopt,
                                 int save_every = 1, const KineticSolver::Observer& observer = {}) {
  const double dt = diffusive_time_step(model, epsilon, T, opt);
  KineticSolver solver(model, opt.grid, {epsilon, dt, opt.transport});
  const Slice init = f0 ? *f0 : solver.equilibrium(rho0);
  return solver.run(init, T, save_every, observer);
}

/// Smooth vector fields w(t, x) (cells x d) used to test the current weakly.
struct TestField {
  std::string name;
  std::function<Eigen::MatrixXd(double t, const PeriodicGrid& grid)> eval;
};

inline std::vector<TestField> default_test_bank(const PeriodicGrid& grid) {
  std::vector<TestField> bank;
  for (int a = 0; a < grid.dim; ++a) {
    auto make = [a](std::string name, std::function<double(double, double)> g) {
      return TestField{std::move(name) + "_" + std::to_string(a), [a, g](double t, const PeriodicGrid& gr) {
                         Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(gr.cells()), gr.dim);
                         for (std::size_t c = 0; c < gr.cells(); ++c) w(static_cast<Eigen::Index>(c), a) = g(t, gr.position(c)[a]);
                         return w;
                       }};
    };
    bank.push_back(make("cos", [](double, double x) { return std::cos(2.0 * kPi * x); }));
    bank.push_back(make("sin", [](double, double x) { return std::sin(2.0 * kPi * x); }));
    bank.push_back(make("tsin", [](double t, double x) { return t * std::sin(2.0 * kPi * x); }));
    bank.push_back(make("sin2", [](double, double x) { return std::sin(4.0 * kPi * x); }));
  }
  return bank;
}

struct SweepRow {
  double epsilon = 0.0;
  double dt = 0.0;
  std::size_t steps = 0;
  double l1_error = 0.0;
  double l2_error = 0.0;
  double weak_j_error = 0.0;        // max over the test bank
  double current_time_constant = 0.0;  // sup over dyadic (s, t) of |J_{s,t}(w)| / sqrt(t - s)
  double runtime_s = 0.0;
};

struct RefinementCheck {
  double epsilon = 0.0;
  double dt = 0.0;
  double l1_change = 0.0;  // |rho(T; dt) - rho(T; dt/2)|_1
  double l1_error = 0.0;
  bool converged = false;
};

struct DiffusiveSweepReport {
  Eigen::MatrixXd D;
  double initial_entropy = 0.0;
  double T = 0.0;
  std::vector<SweepRow> rows;  // decreasing eps
  std::optional<RefinementCheck> refinement;
  bool l1_strictly_decreasing = false;
};

namespace detail {

struct SweepRun {
  Eigen::VectorXd rho_final;
  SweepRow row;
};

inline double l1_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const PeriodicGrid& g) {
  return g.cell_volume() * (a - b).cwiseAbs().sum();
}

// One rescaled run with the weak current pairings accumulated on the fly (trapezoid in time).
inline SweepRun sweep_one(const VelocityModel& model, const Eigen::VectorXd& rho0, const Eigen::MatrixXd& D,
                          double epsilon, double T, const DiffusiveOptions& opt, const std::vector<TestField>& bank,
                          std::optional<double> dt_override = std::nullopt) {
  const auto start = std::chrono::steady_clock::now();
  DiffusiveOptions o = opt;
  if (dt_override) o.dt = dt_override;
  const double dt = diffusive_time_step(model, epsilon, T, o);
  const SpectralGrid spectral(opt.grid);
  const double dv = opt.grid.cell_volume();
  const std::size_t nt = bank.size();
  const double mass = dv * rho0.sum();
  const Eigen::VectorXd r0 = rho0 / mass;

  std::vector<std::vector<double>> cumulative(nt);  // J_{0, t_n}(w) - heat counterpart, per step
  std::vector<double> prev_diff(nt, 0.0), prev_kin(nt, 0.0);
  std::vector<std::vector<double>> kin_cum(nt);
  Eigen::VectorXd rho_final;

  auto observer = [&](std::size_t n, double t, const Slice& f) {
    const auto m = marginals(f, model, opt.grid, epsilon);
    const Eigen::MatrixXd jh = -spectral.gradient(heat_evaluate(r0, D, t, spectral)) * D;
    for (std::size_t k = 0; k < nt; ++k) {
      const Eigen::MatrixXd w = bank[k].eval(t, opt.grid);
      const double kin = dv * m.j.cwiseProduct(w).sum();
      const double diff = kin - dv * jh.cwiseProduct(w).sum();
      if (n == 0) {
        cumulative[k].push_back(0.0);
        kin_cum[k].push_back(0.0);
      } else {
        cumulative[k].push_back(cumulative[k].back() + 0.5 * dt * (diff + prev_diff[k]));
        kin_cum[k].push_back(kin_cum[k].back() + 0.5 * dt * (kin + prev_kin[k]));
      }
      prev_diff[k] = diff;
      prev_kin[k] = kin;
    }
    rho_final = m.rho;
  };

  KineticSolver solver(model, opt.grid, {epsilon, dt, opt.transport});
  const auto state = solver.run(solver.equilibrium(rho0), T, std::numeric_limits<int>::max(), observer);

  SweepRun out;
  out.rho_final = rho_final;
  const Eigen::VectorXd heat_T = heat_evaluate(r0, D, T, spectral);
  out.row.epsilon = epsilon;
  out.row.dt = dt;
  out.row.steps = state.times.size() > 1 ? static_cast<std::size_t>(std::llround(T / dt)) : 0;
  out.row.l1_error = l1_distance(rho_final, heat_T, opt.grid);
  out.row.l2_error = std::sqrt(dv * (rho_final - heat_T).squaredNorm());
  for (std::size_t k = 0; k < nt; ++k) out.row.weak_j_error = std::max(out.row.weak_j_error, std::abs(cumulative[k].back()));

  // Dyadic intervals [k T / 2^l, (k + 1) T / 2^l] that fall on step boundaries.
  const std::size_t steps = kin_cum.empty() ? 0 : kin_cum.front().size() - 1;
  for (std::size_t parts = 1; parts <= steps; parts *= 2) {
    if (steps % parts != 0) break;
    const std::size_t len = steps / parts;
    for (std::size_t p = 0; p < parts; ++p) {
      for (std::size_t k = 0; k < nt; ++k) {
        const double J = kin_cum[k][(p + 1) * len] - kin_cum[k][p * len];
        out.row.current_time_constant =
            std::max(out.row.current_time_constant, std::abs(J) / std::sqrt(static_cast<double>(len) * dt));
      }
    }
  }
  if (opt.record_timings) {
    out.row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return out;
}

}  // namespace detail

/*
 * Runs every eps (sorted decreasing) and compares with the heat flow of D
 * (the leading grid.dim block of the model's diffusion matrix). A
 * non-monotone error sequence is reported through l1_strictly_decreasing,
 * not thrown.
 */
inline DiffusiveSweepReport sweep(const VelocityModel& model, const Eigen::VectorXd& rho0, std::vector<double> eps_list,
                                  double T, const DiffusiveOptions& opt = {},
                                  std::optional<Eigen::MatrixXd> D_full = std::nullopt) {
  opt.grid.validate();
  if (eps_list.empty()) throw ConfigError("eps_list is empty");
  if (rho0.size() != static_cast<Eigen::Index>(opt.grid.cells())) throw UsageError("rho0 has the wrong number of cells");
  if (rho0.minCoeff() < 0.0) throw DomainError("initial density is negative");
  std::sort(eps_list.begin(), eps_list.end(), std::greater<>());
  if (!D_full) D_full = diffusion_matrix(model, poisson_solve(model)).D;
  if (D_full->rows() < opt.grid.dim) throw ConfigError("diffusion matrix has fewer components than the grid");

  DiffusiveSweepReport rep;
  rep.D = D_full->topLeftCorner(opt.grid.dim, opt.grid.dim);
  rep.T = T;
  const Eigen::VectorXd r0 = rho0 / (opt.grid.cell_volume() * rho0.sum());
  rep.initial_entropy = heat_entropy(r0, opt.grid);
  const auto bank = default_test_bank(opt.grid);

  std::vector<detail::SweepRun> runs(eps_list.size());
  parallel_for(runs.size(), [&](std::size_t i) {
    runs[i] = detail::sweep_one(model, rho0, rep.D, eps_list[i], T, opt, bank);
  });
  for (const auto& r : runs) rep.rows.push_back(r.row);

  rep.l1_strictly_decreasing = true;
  for (std::size_t i = 1; i < rep.rows.size(); ++i) {
    if (!(rep.rows[i].l1_error < rep.rows[i - 1].l1_error)) rep.l1_strictly_decreasing = false;
  }
  if (!rep.l1_strictly_decreasing) log::note("diffusive sweep: L1 error is not strictly decreasing in eps");

  if (opt.refinement_check) {
    const auto& last = runs.back();
    const auto fine = detail::sweep_one(model, rho0, rep.D, last.row.epsilon, T, opt, bank, 0.5 * last.row.dt);
    RefinementCheck rc;
    rc.epsilon = last.row.epsilon;
    rc.dt = last.row.dt;
    rc.l1_change = detail::l1_distance(last.rho_final, fine.rho_final, opt.grid);
    rc.l1_error = last.row.l1_error;
    rc.converged = rc.l1_change <= opt.refinement_tolerance * rc.l1_error;
    rep.refinement = rc;
  }
  return rep;
}

}  // namespace lbgf
