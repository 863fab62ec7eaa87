/*
 * Space-velocity solver for the (rescaled) linear Boltzmann equation on the
 * periodic torus,
 *
 *   d_t f + (1/eps) b . grad_x f = (1/eps^2) L f,
 *
 * together with current extraction, the entropy balance and the
 * entropy-dissipation certificate of a trajectory.
 *
 * One step is a Strang splitting: half collision, full transport, half
 * collision. Collision applies exp(tau L / eps^2) exactly in every cell.
 * Transport is first-order upwind (positivity preserving under CFL) or an
 * exact Fourier shift (no CFL, not positivity preserving).
 */
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lbgf/core.hpp"
#include "lbgf/functionals.hpp"
#include "lbgf/grid.hpp"
#include "lbgf/log.hpp"
#include "lbgf/parallel.hpp"
#include "lbgf/velocity.hpp"

namespace lbgf {

enum class TransportScheme { upwind, spectral };

inline std::string to_string(TransportScheme s) { return s == TransportScheme::upwind ? "upwind" : "spectral"; }

inline TransportScheme transport_from_string(const std::string& s) {
  if (s == "upwind") return TransportScheme::upwind;
  if (s == "spectral") return TransportScheme::spectral;
  throw ConfigError("unknown transport scheme '" + s + "' (expected upwind or spectral)");
}

struct KineticOptions {
  double epsilon = 1.0;
  double dt = 1e-3;
  TransportScheme transport = TransportScheme::upwind;
};

/// A stored trajectory: slices (cells x nodes) at the listed times.
struct KineticState {
  PeriodicGrid grid;
  double epsilon = 1.0;
  double dt = 0.0;
  TransportScheme transport = TransportScheme::upwind;
  std::vector<double> times;
  std::vector<Slice> slices;
};

/// Collision propagator exp(tau L) via the symmetric form W^1/2 S W^1/2 - diag(lambda).
inline Eigen::MatrixXd collision_propagator(const VelocityModel& model, double tau) {
  const Eigen::VectorXd sw = model.weights.cwiseSqrt();
  Eigen::MatrixXd M = sw.asDiagonal() * model.sigma * sw.asDiagonal();
  M.diagonal() -= model.rate;
  M = 0.5 * (M + M.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  const Eigen::VectorXd e = (tau * es.eigenvalues().array()).exp().matrix();
  Eigen::MatrixXd P = sw.cwiseInverse().asDiagonal() * es.eigenvectors() * e.asDiagonal() *
                      es.eigenvectors().transpose() * sw.asDiagonal();
  // Roundoff can leave entries of order -1e-17 where the exact value is a tiny positive number.
  const double most_negative = P.minCoeff();
  if (most_negative < 0.0) {
    if (most_negative < -1e-12) {
      std::ostringstream msg;
      msg << "collision propagator entry " << most_negative << " clamped to 0";
      log::note(msg.str());
    }
    P = P.cwiseMax(0.0);
  }
  // The W^-1/2 back-transform amplifies roundoff at small weights. Restore w_i P_ij symmetric with row sums w_i,
  // so that P 1 = 1 and w^T P = w^T hold to summation accuracy and no mass drifts over many steps.
  Eigen::MatrixXd Q = model.weights.asDiagonal() * P;
  Q = 0.5 * (Q + Q.transpose()).eval();
  Q.diagonal().setZero();
  Q.diagonal() = model.weights - Q.rowwise().sum();
  return model.weights.cwiseInverse().asDiagonal() * Q;
}

class KineticSolver {
 public:
  KineticSolver(const VelocityModel& model, PeriodicGrid grid, KineticOptions options)
      : model_(model), grid_(grid), options_(options), spectral_(grid) {
    if (!(options_.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (!(options_.dt > 0.0)) throw ConfigError("dt must be positive");
    if (model_.drift_dim() < grid_.dim) {
      throw ConfigError("velocity model drift has fewer components than the spatial dimension");
    }
    speed_ = model_.drift.leftCols(grid_.dim) / options_.epsilon;
    if (options_.transport == TransportScheme::upwind) {
      const double cfl = options_.dt * speed_.cwiseAbs().maxCoeff() / grid_.spacing();
      if (cfl > 1.0) {
        std::ostringstream msg;
        msg << "upwind CFL number " << cfl << " exceeds 1; use dt <= "
            << grid_.spacing() / speed_.cwiseAbs().maxCoeff();
        throw ConfigError(msg.str());
      }
    }
    half_ = collision_propagator(model_, 0.5 * options_.dt / (options_.epsilon * options_.epsilon));
    neighbours();
  }

  const VelocityModel& model() const { return model_; }
  const PeriodicGrid& grid() const { return grid_; }
  const KineticOptions& options() const { return options_; }

  /// Local equilibrium rho0(x) (x) 1.
  Slice equilibrium(const Eigen::VectorXd& rho0) const {
    if (rho0.size() != static_cast<Eigen::Index>(grid_.cells())) throw UsageError("rho0 has the wrong number of cells");
    Slice f(rho0.size(), model_.size());
    f.colwise() = rho0;
    return f;
  }

  /// Half-step collision, applied in place to every cell.
  void collide_half(Slice& f) const { f = (f * half_.transpose()).eval(); }

  /// Full-step transport.
  void transport(Slice& f) const {
    if (options_.transport == TransportScheme::upwind) {
      upwind(f);
    } else {
      spectral_shift(f);
    }
  }

  void step(Slice& f) const {
    collide_half(f);
    transport(f);
    collide_half(f);
  }

  using Observer = std::function<void(std::size_t step, double t, const Slice& f)>;

  /*
   * Runs from f0 to time T (a whole number of steps) and stores every
   * save_every-th slice plus the final one. The observer, if set, sees every
   * slice including the initial one.
   */
  KineticState run(const Slice& f0, double T, int save_every = 1, const Observer& observer = {}) const {
    const std::size_t steps = step_count(T);
    if (save_every < 1) throw ConfigError("save_every must be >= 1");
    Slice f = normalized(f0);
    KineticState state;
    state.grid = grid_;
    state.epsilon = options_.epsilon;
    state.dt = options_.dt;
    state.transport = options_.transport;
    state.times.push_back(0.0);
    state.slices.push_back(f);
    if (observer) observer(0, 0.0, f);
    for (std::size_t n = 1; n <= steps; ++n) {
      step(f);
      const double t = static_cast<double>(n) * options_.dt;
      if (observer) observer(n, t, f);
      if (n % static_cast<std::size_t>(save_every) == 0 || n == steps) {
        state.times.push_back(t);
        state.slices.push_back(f);
      }
    }
    return state;
  }

  std::size_t step_count(double T) const {
    if (!(T > 0.0)) throw ConfigError("final time must be positive");
    const double ratio = T / options_.dt;
    const auto steps = static_cast<std::size_t>(std::llround(ratio));
    if (steps == 0 || std::abs(ratio - static_cast<double>(steps)) > 1e-9 * ratio) {
      throw ConfigError("final time must be a whole number of time steps");
    }
    return steps;
  }

  /// Rescales f0 to unit mass; rejects negative data and data of infinite entropy.
  Slice normalized(const Slice& f0) const {
    if (f0.rows() != static_cast<Eigen::Index>(grid_.cells()) || f0.cols() != model_.size()) {
      throw UsageError("initial datum has the wrong shape");
    }
    if (!f0.allFinite()) throw DomainError("initial datum is not finite");
    if (f0.minCoeff() < 0.0) throw DomainError("initial datum is negative");
    const double mass = grid_.cell_volume() * (f0 * model_.weights).sum();
    if (!(mass > 0.0)) throw DomainError("initial datum has zero mass");
    Slice f = f0 / mass;
    if (std::abs(mass - 1.0) > 1e-12) {
      std::ostringstream msg;
      msg << "initial datum renormalized from mass " << mass;
      log::note(msg.str());
    }
    const double h = relative_entropy(f, model_, grid_.cell_volume());
    if (!std::isfinite(h)) throw DomainError("initial datum has infinite entropy");
    return f;
  }

  /// Upwind divergence of the flux (1/eps) sum_i w_i b_i f_i, the form the transport step uses.
  Eigen::VectorXd upwind_divergence(const Slice& f) const {
    Eigen::VectorXd div = Eigen::VectorXd::Zero(f.rows());
    for (int a = 0; a < grid_.dim; ++a) {
      const Eigen::VectorXd pos = speed_.col(a).cwiseMax(0.0).cwiseProduct(model_.weights);
      const Eigen::VectorXd neg = speed_.col(a).cwiseMin(0.0).cwiseProduct(model_.weights);
      const Eigen::VectorXd jp = f * pos, jn = f * neg;
      for (Eigen::Index c = 0; c < f.rows(); ++c) {
        div[c] += (jp[c] - jp[prev_[a][c]] + jn[next_[a][c]] - jn[c]) / grid_.spacing();
      }
    }
    return div;
  }

 private:
  void neighbours() {
    const auto cells = static_cast<Eigen::Index>(grid_.cells());
    for (int a = 0; a < grid_.dim; ++a) {
      prev_[a].resize(cells);
      next_[a].resize(cells);
      for (Eigen::Index c = 0; c < cells; ++c) {
        auto idx = grid_.index(static_cast<std::size_t>(c));
        idx[a] -= 1;
        prev_[a][c] = static_cast<Eigen::Index>(grid_.flat(idx));
        idx[a] += 2;
        next_[a][c] = static_cast<Eigen::Index>(grid_.flat(idx));
      }
    }
  }

  // Sequential sweeps, one per axis.
  void upwind(Slice& f) const {
    for (int a = 0; a < grid_.dim; ++a) {
      const Eigen::RowVectorXd nu = speed_.col(a).transpose() * (options_.dt / grid_.spacing());
      const Eigen::RowVectorXd nu_pos = nu.cwiseMax(0.0), nu_neg = nu.cwiseMin(0.0);
      Slice out(f.rows(), f.cols());
      for (Eigen::Index c = 0; c < f.rows(); ++c) {
        const auto row = f.row(c);
        out.row(c) = row - nu_pos.cwiseProduct(row - f.row(prev_[a][c])) - nu_neg.cwiseProduct(f.row(next_[a][c]) - row);
      }
      f.swap(out);
    }
  }

  // Exact shift of every velocity column by dt * b_i / eps; the real part is kept.
  void spectral_shift(Slice& f) const {
    const auto cells = grid_.cells();
    std::vector<Eigen::VectorXd> columns(static_cast<std::size_t>(f.cols()));
    parallel_for(columns.size(), [&](std::size_t i) {
      const auto col = static_cast<Eigen::Index>(i);
      auto hat = spectral_.forward(f.col(col));
      for (std::size_t m = 0; m < cells; ++m) {
        const auto k = spectral_.wavevector(m);
        double phase = 0.0;
        for (int a = 0; a < grid_.dim; ++a) phase += k[a] * speed_(col, a);
        hat[m] *= std::polar(1.0, -2.0 * kPi * phase * options_.dt);
      }
      columns[i] = spectral_.inverse(std::move(hat));
    });
    for (std::size_t i = 0; i < columns.size(); ++i) f.col(static_cast<Eigen::Index>(i)) = columns[i];
  }

  const VelocityModel& model_;
  PeriodicGrid grid_;
  KineticOptions options_;
  SpectralGrid spectral_;
  Eigen::MatrixXd speed_;  // N x dim, b / eps
  Eigen::MatrixXd half_;
  std::array<std::vector<Eigen::Index>, 3> prev_, next_;
};

/// eta_ij = S_ij (f_i - f_j) at stored slice t.
inline CurrentField current_of(const KineticState& state, const VelocityModel& model, std::size_t t) {
  if (t >= state.slices.size()) throw UsageError("slice index out of range");
  return CurrentField::of_density(model, state.slices[t]);
}

struct Marginals {
  Eigen::VectorXd rho;  // cells
  Eigen::MatrixXd j;    // cells x dim
};

/// rho = sum_i w_i f_i and j = (1/eps) sum_i w_i f_i b_i (first grid.dim drift components).
inline Marginals marginals(const Slice& f, const VelocityModel& model, const PeriodicGrid& grid, double epsilon) {
  detail::require_slice(f, model);
  Marginals m;
  m.rho = f * model.weights;
  m.j = f * (model.weights.asDiagonal() * model.drift.leftCols(grid.dim)) / epsilon;
  return m;
}

inline Marginals marginals(const KineticState& state, const VelocityModel& model, std::size_t t) {
  if (t >= state.slices.size()) throw UsageError("slice index out of range");
  return marginals(state.slices[t], model, state.grid, state.epsilon);
}

namespace detail {

// (1/2) sum_x dx sum_ij w_i w_j eta_ij (log f_j - log f_i) with eta the current of f.
inline double entropy_flux(const Slice& f, const VelocityModel& model, double cell_volume, const LogTruncation& trunc) {
  const auto n = model.size();
  std::vector<double> per_cell(static_cast<std::size_t>(f.rows()));
  parallel_for(per_cell.size(), [&](std::size_t cu) {
    const auto c = static_cast<Eigen::Index>(cu);
    Eigen::VectorXd lg(n);
    for (Eigen::Index i = 0; i < n; ++i) lg[i] = trunc(f(c, i));
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double row = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        row += model.weights[j] * model.sigma(j, i) * (f(c, i) - f(c, j)) * (lg[j] - lg[i]);
      }
      acc += model.weights[i] * row;
    }
    per_cell[cu] = acc;  // ordered pairs count twice, times the prefactor 1/2
  });
  double total = 0.0;
  for (double v : per_cell) total += v;
  return cell_volume * total;
}

inline void require_trajectory(const KineticState& state, const VelocityModel& model) {
  if (state.slices.size() < 2 || state.times.size() != state.slices.size()) {
    throw UsageError("trajectory needs at least two slices with matching times");
  }
  for (const auto& s : state.slices) require_slice(s, model);
}

}  // namespace detail

struct BalanceResidual {
  double max_interval = 0.0;  // max over single intervals of |H(t_{n+1}) - H(t_n) - flux|
  double cumulative = 0.0;    // max over n of |H(t_n) - H(0) - int_0^{t_n} flux|
};

/*
 * Entropy balance H(t) - H(s) = (1/eps^2) int (1/2) sum w w eta (log f' - log f),
 * with the flux evaluated at averaged consecutive slices (midpoint rule).
 */
inline BalanceResidual entropy_balance_check(const KineticState& state, const VelocityModel& model,
                                             const LogTruncation& trunc = {}) {
  detail::require_trajectory(state, model);
  const double dv = state.grid.cell_volume();
  const double weight = 1.0 / (state.epsilon * state.epsilon);
  BalanceResidual out;
  double h_prev = relative_entropy(state.slices.front(), model, dv, trunc);
  double running = 0.0;
  for (std::size_t n = 0; n + 1 < state.slices.size(); ++n) {
    const double h_next = relative_entropy(state.slices[n + 1], model, dv, trunc);
    const Slice fm = 0.5 * (state.slices[n] + state.slices[n + 1]);
    const double flux = weight * (state.times[n + 1] - state.times[n]) * detail::entropy_flux(fm, model, dv, trunc);
    const double r = h_next - h_prev - flux;
    running += r;
    out.max_interval = std::max(out.max_interval, std::abs(r));
    out.cumulative = std::max(out.cumulative, std::abs(running));
    h_prev = h_next;
  }
  return out;
}

struct CertificateRow {
  double t = 0.0;
  double entropy = 0.0;
  double dirichlet = 0.0;             // at the slice
  double dirichlet_integral = 0.0;    // int_0^t
  double kinematic = 0.0;             // int_0^t
  double phi_residual = 0.0;          // int_0^t
  double edi_residual = 0.0;          // H(t) + int E + R - H(0)
  double balance_residual = 0.0;
};

struct EdiCertificate {
  double epsilon = 1.0;
  double current_scale = 1.0;
  double h_initial = 0.0;
  double h_final = 0.0;
  double dirichlet_integral = 0.0;
  double kinematic_value = 0.0;
  bool kinematic_finite = true;
  double phi_residual = 0.0;
  bool phi_finite = true;
  double balance_residual = 0.0;
  double edi_residual = 0.0;       // H(T) + int E + R - H(0)
  double max_step_residual = 0.0;  // max over slices of |edi residual at t|
  std::vector<CertificateRow> rows;

  bool passed(double tol) const {
    return kinematic_finite && phi_finite && std::abs(edi_residual) <= tol && phi_residual <= tol &&
           max_step_residual <= tol;
  }

  std::string breakdown() const {
    std::ostringstream s;
    s.precision(17);
    s << "H(0)=" << h_initial << " H(T)=" << h_final << " intE=" << dirichlet_integral
      << " R=" << (kinematic_finite ? kinematic_value : Cost::kSentinel) << " phi=" << (phi_finite ? phi_residual : Cost::kSentinel)
      << " edi_residual=" << edi_residual << " max_step=" << max_step_residual
      << " balance=" << balance_residual;
    return s.str();
  }
};

struct EdiOptions {
  double current_scale = 1.0;  // eta = scale * eta^f; 1 certifies the solver's own current
  LogTruncation log;
};

/*
 * All terms of H(T) + (1/eps^2)(int E + R) <= H(0) along a stored trajectory.
 * Time integrals use the midpoint rule on averaged consecutive slices.
 */
inline EdiCertificate edi_certificate(const KineticState& state, const VelocityModel& model,
                                      const EdiOptions& options = {}) {
  detail::require_trajectory(state, model);
  const double dv = state.grid.cell_volume();
  const double weight = 1.0 / (state.epsilon * state.epsilon);
  EdiCertificate cert;
  cert.epsilon = state.epsilon;
  cert.current_scale = options.current_scale;
  cert.h_initial = relative_entropy(state.slices.front(), model, dv, options.log);

  CertificateRow row;
  row.entropy = cert.h_initial;
  row.dirichlet = dirichlet_form(state.slices.front(), model, dv);
  cert.rows.push_back(row);

  Cost kin, ph;
  double dint = 0.0, balance = 0.0;
  for (std::size_t n = 0; n + 1 < state.slices.size(); ++n) {
    const double dt = state.times[n + 1] - state.times[n];
    const Slice fm = 0.5 * (state.slices[n] + state.slices[n + 1]);
    const auto eta = CurrentField::of_density(model, fm, options.current_scale);
    dint += weight * dt * dirichlet_form(fm, model, dv);
    kin += kinematic_density(fm, eta, model, dv).scaled(weight * dt);
    ph += phi_density(fm, eta, model, dv).scaled(weight * dt);
    const double h = relative_entropy(state.slices[n + 1], model, dv, options.log);
    balance += h - row.entropy - weight * dt * detail::entropy_flux(fm, model, dv, options.log);

    row = CertificateRow{};
    row.t = state.times[n + 1];
    row.entropy = h;
    row.dirichlet = dirichlet_form(state.slices[n + 1], model, dv);
    row.dirichlet_integral = dint;
    row.kinematic = kin.value();
    row.phi_residual = ph.value();
    row.edi_residual = kin.is_finite() ? h + dint + kin.value() - cert.h_initial : Cost::kSentinel;
    row.balance_residual = balance;
    cert.rows.push_back(row);
    cert.max_step_residual = std::max(cert.max_step_residual, std::abs(row.edi_residual));
  }
  cert.h_final = row.entropy;
  cert.dirichlet_integral = dint;
  cert.kinematic_finite = kin.is_finite();
  cert.kinematic_value = kin.value();
  cert.phi_finite = ph.is_finite();
  cert.phi_residual = ph.value();
  cert.edi_residual = row.edi_residual;
  cert.balance_residual = balance;
  return cert;
}

/*
 * Default certification tolerance C T dt^2 with C = Omega^2, where
 * Omega = lambda_max / eps^2 + 2 pi max|b| / eps bounds the fastest rate in a step.
 */
inline double default_certification_tolerance(const VelocityModel& model, const KineticState& state) {
  const double T = state.times.back() - state.times.front();
  const double dt = state.dt;
  const double omega = model.rate.maxCoeff() / (state.epsilon * state.epsilon) +
                       2.0 * kPi * model.drift.leftCols(state.grid.dim).cwiseAbs().maxCoeff() / state.epsilon;
  return T * dt * dt * omega * omega;
}

/// Throws CertificationError with the full term breakdown when the certificate fails.
inline void certify(const EdiCertificate& cert, double tol) {
  if (!cert.passed(tol)) {
    std::ostringstream msg;
    msg << "trajectory fails the entropy-dissipation certificate at tolerance " << tol << ": " << cert.breakdown();
    throw CertificationError(msg.str());
  }
}

}  // namespace lbgf
