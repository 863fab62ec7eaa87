/*
 * Constructors for the three concrete velocity models:
 *
 *   lorentz   unit-speed velocities on the circle, kernel pi |sin((t - t') / 2)|
 *   rayleigh  Maxwellian velocities in R^d (d = 2, 3) scattering off a heavy-particle bath
 *   phonon    wavevectors on the torus T^d, drift grad(omega) / (2 pi) of a pinned harmonic lattice
 *
 * plus the radial-reduction diagnostics for the Rayleigh model in d = 2.
 */
#pragma once

#include <Eigen/Dense>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <sstream>
#include <string>
#include <utility>

#include "lbgf/core.hpp"
#include "lbgf/log.hpp"
#include "lbgf/velocity.hpp"

namespace lbgf {

/// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_legendre(int n) {
  if (n < 1) throw UsageError("Gauss-Legendre rule needs at least one node");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = k / std::sqrt(4.0 * k * k - 1.0);
    J(k, k - 1) = J(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Eigen::VectorXd x = es.eigenvalues();
  Eigen::VectorXd w = 2.0 * es.eigenvectors().row(0).transpose().cwiseAbs2();
  // Exact reflection symmetry x -> -x.
  for (int k = 0; k < n / 2; ++k) {
    const double xs = 0.5 * (x[n - 1 - k] - x[k]);
    const double ws = 0.5 * (w[k] + w[n - 1 - k]);
    x[k] = -xs;
    x[n - 1 - k] = xs;
    w[k] = w[n - 1 - k] = ws;
  }
  if (n % 2 == 1) x[n / 2] = 0.0;
  return {x, w};
}

// ---------------------------------------------------------------------------
// Lorentz gas

struct LorentzSpec {
  int n_nodes = 64;
};

/*
 * Uniform angles with weights 1/N and S_ij = pi |sin((t_i - t_j) / 2)|, so
 * the rate is 2. The diagonal entry, which never enters L, is set so that
 * sum_j w_j S_ij equals the continuum rate 2 exactly; point sampling of the
 * kink at t = t' would otherwise leave an O(N^-2) rate error.
 */
inline VelocityModel build_lorentz(const LorentzSpec& spec) {
  const int n = spec.n_nodes;
  if (n < 4 || n % 2 != 0) throw ConfigError("lorentz n_nodes must be even and at least 4");
  Eigen::MatrixXd theta(n, 1);
  Eigen::MatrixXd b(n, 2);
  for (int i = 0; i < n / 2; ++i) {
    theta(i, 0) = 2.0 * kPi * i / n;
    theta(i + n / 2, 0) = theta(i, 0) + kPi;
    b(i, 0) = std::cos(theta(i, 0));
    b(i, 1) = std::sin(theta(i, 0));
    b.row(i + n / 2) = -b.row(i);
  }
  // The kernel depends on |i - j| only.
  Eigen::VectorXd profile(n);
  for (int k = 0; k < n; ++k) profile[k] = kPi * std::abs(std::sin(kPi * k / n));
  const double offdiag = profile.sum();
  Eigen::MatrixXd S(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) S(i, j) = profile[std::abs(i - j)];
  S.diagonal().setConstant(2.0 * n - offdiag);

  auto m = VelocityModel::assemble("lorentz", std::move(theta), Eigen::VectorXd::Constant(n, 1.0 / n),
                                   std::move(b), std::move(S));
  m.diagnostics["lambda_min"] = m.rate.minCoeff();
  m.diagnostics["lambda_max"] = m.rate.maxCoeff();
  return m;
}

// ---------------------------------------------------------------------------
// Rayleigh gas

struct RayleighSpec {
  int dim = 2;
  double beta = 1.0;
  int n_radial = 12;
  int n_angular = 32;  // d = 2
  int n_polar = 8;     // d = 3, Gauss-Legendre in cos(theta)
  int n_azimuth = 16;  // d = 3
  double v_max_factor = 6.0;  // truncation |v| <= v_max_factor / sqrt(beta)
  double near_cutoff = 1e-2;  // d = 3: pairs closer than near_cutoff / sqrt(beta) get S = 0

  void validate() const {
    if (dim != 2 && dim != 3) throw ConfigError("rayleigh dim must be 2 or 3");
    if (!(beta > 0.0)) throw ConfigError("rayleigh beta must be positive");
    if (n_radial < 2) throw ConfigError("rayleigh n_radial must be at least 2");
    if (dim == 2 && (n_angular < 4 || n_angular % 2 != 0)) throw ConfigError("rayleigh n_angular must be even and >= 4");
    if (dim == 3 && (n_polar < 2 || n_polar % 2 != 0)) throw ConfigError("rayleigh n_polar must be even and >= 2");
    if (dim == 3 && (n_azimuth < 4 || n_azimuth % 2 != 0)) throw ConfigError("rayleigh n_azimuth must be even and >= 4");
    if (!(v_max_factor > 0.0)) throw ConfigError("rayleigh v_max_factor must be positive");
    if (!(near_cutoff >= 0.0)) throw ConfigError("rayleigh near_cutoff must be nonnegative");
  }
};

/// Surface constant chi_d = pi^{(d-1)/2} / Gamma((d+1)/2).
inline double rayleigh_chi(int dim) {
  return std::pow(kPi, 0.5 * (dim - 1)) / std::tgamma(0.5 * (dim + 1));
}

/// Scattering kernel at a pair of velocities; symmetric in its arguments.
inline double rayleigh_kernel(int dim, double beta, const Eigen::Ref<const Eigen::VectorXd>& v,
                              const Eigen::Ref<const Eigen::VectorXd>& w) {
  const Eigen::VectorXd d = v - w;
  const double dd = d.squaredNorm();
  double cross2;
  if (dim == 2) {
    const double c = v[0] * w[1] - v[1] * w[0];
    cross2 = c * c;
  } else {
    cross2 = v.head<3>().cross(w.head<3>()).squaredNorm();
  }
  const double expo = std::exp(0.5 * beta * cross2 / dd);
  return std::pow(beta / (2.0 * kPi), 0.5 * (1 - dim)) * std::pow(dd, 0.5 * (2 - dim)) * expo;
}

/*
 * Direct scattering rate chi_d E|v - V| with V ~ N(0, I / beta), i.e. the
 * mean of a noncentral chi variable with noncentrality m = |v| sqrt(beta).
 */
inline double rayleigh_rate_direct(int dim, double beta, double speed) {
  const double sigma = 1.0 / std::sqrt(beta);
  const double m = speed * std::sqrt(beta);
  double mean;
  if (dim == 2) {
    const double x = 0.25 * m * m;
    // e^-x I_nu(x), kept in scaled form.
    const double i0 = boost::math::cyl_bessel_i(0, x) * std::exp(-x);
    const double i1 = boost::math::cyl_bessel_i(1, x) * std::exp(-x);
    mean = sigma * std::sqrt(kPi / 2.0) * ((1.0 + 2.0 * x) * i0 + 2.0 * x * i1);
  } else if (dim == 3) {
    if (m < 1e-4) {
      mean = 2.0 * sigma * std::sqrt(2.0 / kPi) * (1.0 + m * m / 6.0);
    } else {
      mean = sigma * (std::sqrt(2.0 / kPi) * std::exp(-0.5 * m * m) + (m + 1.0 / m) * std::erf(m / std::sqrt(2.0)));
    }
  } else {
    throw ConfigError("rayleigh dim must be 2 or 3");
  }
  return rayleigh_chi(dim) * mean;
}

namespace detail {

// Radial nodes and probability weights of the truncated Maxwellian |v| law.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> rayleigh_radial(const RayleighSpec& spec) {
  const double v_max = spec.v_max_factor / std::sqrt(spec.beta);
  const auto [x, wx] = gauss_legendre(spec.n_radial);
  Eigen::VectorXd r(spec.n_radial), w(spec.n_radial);
  if (spec.dim == 2) {
    // s = beta r^2 / 2 has density e^-s; integrate in s on [0, s_max].
    const double s_max = 0.5 * spec.beta * v_max * v_max;
    for (int k = 0; k < spec.n_radial; ++k) {
      const double s = 0.5 * (x[k] + 1.0) * s_max;
      r[k] = std::sqrt(2.0 * s / spec.beta);
      w[k] = 0.5 * s_max * wx[k] * std::exp(-s);
    }
  } else {
    for (int k = 0; k < spec.n_radial; ++k) {
      const double rr = 0.5 * (x[k] + 1.0) * v_max;
      r[k] = rr;
      w[k] = 0.5 * v_max * wx[k] * rr * rr * std::exp(-0.5 * spec.beta * rr * rr);
    }
  }
  w /= w.sum();
  return {r, w};
}

}  // namespace detail

/*
 * Nodes: product of a radial Gauss-Legendre rule for the truncated
 * Maxwellian and a centrally symmetric angular rule. Off-diagonal S comes
 * from the closed-form kernel. The diagonal S_ii, invisible to L, completes
 * the rate to the direct value chi E|v - V| (clamped at zero): truncation
 * otherwise drops part of the collision band at large |v|.
 */
inline VelocityModel build_rayleigh(const RayleighSpec& spec) {
  spec.validate();
  const auto [r, wr] = detail::rayleigh_radial(spec);
  const int d = spec.dim;
  Eigen::MatrixXd v;
  Eigen::VectorXd w;
  if (d == 2) {
    const int na = spec.n_angular;
    v.resize(spec.n_radial * na, 2);
    w.resize(spec.n_radial * na);
    for (int k = 0; k < spec.n_radial; ++k) {
      for (int m = 0; m < na / 2; ++m) {
        const double phi = 2.0 * kPi * m / na;
        const int i = k * na + m;
        v(i, 0) = r[k] * std::cos(phi);
        v(i, 1) = r[k] * std::sin(phi);
        v.row(i + na / 2) = -v.row(i);
        w[i] = w[i + na / 2] = wr[k] / na;
      }
    }
  } else {
    const auto [c, wc] = gauss_legendre(spec.n_polar);
    const int np = spec.n_polar, na = spec.n_azimuth;
    v.resize(spec.n_radial * np * na, 3);
    w.resize(spec.n_radial * np * na);
    for (int k = 0; k < spec.n_radial; ++k) {
      for (int p = 0; p < np; ++p) {
        const double sn = std::sqrt(std::max(0.0, 1.0 - c[p] * c[p]));
        for (int m = 0; m < na; ++m) {
          const double phi = 2.0 * kPi * m / na;
          const int i = (k * np + p) * na + m;
          // Antipode of (p, m) is (np - 1 - p, m + na / 2); c is exactly reflected.
          if (p >= np / 2) {
            const int j = (k * np + (np - 1 - p)) * na + (m + na / 2) % na;
            v.row(i) = -v.row(j);
          } else {
            v(i, 0) = r[k] * sn * std::cos(phi);
            v(i, 1) = r[k] * sn * std::sin(phi);
            v(i, 2) = r[k] * c[p];
          }
          w[i] = wr[k] * 0.5 * wc[p] / na;
        }
      }
    }
  }
  w /= w.sum();

  const auto n = w.size();
  const double cutoff = spec.near_cutoff / std::sqrt(spec.beta);
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
  long cut_pairs = 0;
  double cut_mass = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (d == 3 && (v.row(i) - v.row(j)).norm() < cutoff) {
        ++cut_pairs;
        cut_mass = std::max(cut_mass, w[j] * rayleigh_kernel(d, spec.beta, v.row(i).transpose(), v.row(j).transpose()));
        continue;
      }
      S(i, j) = S(j, i) = rayleigh_kernel(d, spec.beta, v.row(i).transpose(), v.row(j).transpose());
    }
  }

  const Eigen::VectorXd offdiag_rate = S * w;
  int clamped = 0;
  double gap = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double direct = rayleigh_rate_direct(d, spec.beta, v.row(i).norm());
    gap = std::max(gap, std::abs(offdiag_rate[i] - direct) / direct);
    const double sii = (direct - offdiag_rate[i]) / w[i];
    if (sii < 0.0) ++clamped;
    S(i, i) = std::max(sii, 0.0);
  }

  const double mass_defect = boost::math::gamma_q(0.5 * d, 0.5 * spec.v_max_factor * spec.v_max_factor);
  Eigen::MatrixXd nodes = v;
  auto model = VelocityModel::assemble("rayleigh", std::move(nodes), w, v, std::move(S));
  model.diagnostics["mass_defect"] = mass_defect;
  model.diagnostics["offdiag_rate_gap_max"] = gap;
  model.diagnostics["diagonal_clamped"] = clamped;
  model.diagnostics["near_pairs_cut"] = static_cast<double>(cut_pairs);
  model.diagnostics["near_pairs_max_bias"] = cut_mass;
  model.diagnostics["lambda_min"] = model.rate.minCoeff();
  model.diagnostics["lambda_max"] = model.rate.maxCoeff();
  model.diagnostics["lambda_at_zero"] = rayleigh_rate_direct(d, spec.beta, 0.0);
  std::ostringstream msg;
  msg << "rayleigh: truncation mass defect " << mass_defect << " folded into weights";
  if (clamped > 0) msg << "; " << clamped << " diagonal entries clamped at 0";
  if (cut_pairs > 0) msg << "; " << cut_pairs << " near-diagonal pairs set to 0 (max row bias " << cut_mass << ")";
  log::note(msg.str());
  return model;
}

/// Sup-norm bound on the Poisson solution via the radial reduction (d = 2).
struct RayleighBoundReport {
  double chi = 0.0;
  double z = 0.0;
  double zeta = 0.0;
  double xi_inf_norm = 0.0;
  bool bound_satisfied = false;
  bool a_lambda_below_lambda = false;  // (A lambda) < lambda at every radial node
  bool eta_nonnegative = false;
  bool eta_below_lambda_over_zeta = false;
  double a_min = 0.0;                  // smallest entry of A
  double radial_vs_full = 0.0;         // max |eta/lambda - xi_full| on the ray phi = 0
  int iterations = 0;
  Eigen::VectorXd radii, lambda, eta;
};

/*
 * Radial operator A_kl = sum_m w_{l,m} S((r_k, 0), (r_l, phi_m)) cos(phi_m) / lambda_l.
 * With xi(v) = v_hat gamma(|v|) and eta = lambda gamma, -L xi = v becomes
 * eta = A eta + r, solved by the series sum_k A^k r.
 */
inline RayleighBoundReport rayleigh_xi_bound(const VelocityModel& model, const RayleighSpec& spec,
                                             double tol = 1e-13, int max_iter = 10000) {
  spec.validate();
  if (spec.dim != 2) throw ConfigError("radial reduction diagnostics are implemented for d = 2");
  const int nr = spec.n_radial, na = spec.n_angular;
  if (model.kind != "rayleigh" || model.size() != nr * na) throw UsageError("model does not match the rayleigh spec");

  RayleighBoundReport rep;
  rep.chi = rayleigh_chi(2);
  rep.radii.resize(nr);
  rep.lambda.resize(nr);
  for (int k = 0; k < nr; ++k) {
    rep.radii[k] = model.nodes.row(k * na).norm();
    rep.lambda[k] = model.rate[k * na];
  }
  Eigen::MatrixXd A(nr, nr);
  for (int k = 0; k < nr; ++k) {
    for (int l = 0; l < nr; ++l) {
      double acc = 0.0;
      for (int m = 0; m < na; ++m) {
        const int j = l * na + m;
        acc += model.weights[j] * model.sigma(k * na, j) * std::cos(2.0 * kPi * m / na);
      }
      A(k, l) = acc / rep.lambda[l];
    }
  }
  rep.a_min = A.minCoeff();
  const Eigen::VectorXd a_lambda = A * rep.lambda;
  rep.a_lambda_below_lambda = (a_lambda.array() < rep.lambda.array()).all();
  rep.z = (a_lambda.array() / rep.lambda.array()).maxCoeff();
  if (!(rep.z < 1.0)) {
    throw NumericalQualityError("radial contraction estimate z >= 1; refine the rayleigh grid");
  }
  rep.zeta = rep.chi * (1.0 - rep.z);

  Eigen::VectorXd term = rep.radii;
  rep.eta = term;
  for (int it = 1; it <= max_iter; ++it) {
    term = A * term;
    rep.eta += term;
    rep.iterations = it;
    if (term.cwiseAbs().maxCoeff() < tol) break;
    if (it == max_iter) throw ConvergenceError("radial series did not converge", term.cwiseAbs().maxCoeff(), it);
  }
  const Eigen::VectorXd gamma = rep.eta.cwiseQuotient(rep.lambda);
  rep.xi_inf_norm = gamma.cwiseAbs().maxCoeff();
  rep.bound_satisfied = rep.xi_inf_norm <= 1.0 / rep.zeta + 1e-12;
  rep.eta_nonnegative = (rep.eta.array() >= 0.0).all();
  rep.eta_below_lambda_over_zeta = (rep.eta.array() <= rep.lambda.array() / rep.zeta + 1e-12).all();

  const auto full = poisson_solve(model);
  for (int k = 0; k < nr; ++k) {
    rep.radial_vs_full = std::max(rep.radial_vs_full, std::abs(gamma[k] - full.xi(k * na, 0)));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Pinned harmonic lattice (phonons)

struct PhononSpec {
  int dim = 2;
  double nu = 1.0;  // pinning
  int n_per_axis = 16;
  bool product_form_surrogate = false;  // required for dim = 1

  void validate() const {
    if (!(nu > 0.0)) {
      throw ConfigError("phonon pinning nu must be > 0: the unpinned lattice (nu = 0) is superdiffusive and has no diffusion matrix");
    }
    if (dim < 1 || dim > 3) throw ConfigError("phonon dim must be 1, 2 or 3");
    if (dim == 1 && !product_form_surrogate) {
      throw ConfigError("phonon dim = 1 uses a different kernel; set product_form_surrogate to run the product-form kernel instead");
    }
    if (n_per_axis < 2 || n_per_axis % 2 != 0) throw ConfigError("phonon n_per_axis must be even and >= 2");
  }
};

/*
 * Midpoint grid k = (m + 1/2) / N on T^d, so no node sits at k = 0 where the
 * rate would vanish. Kernel sum_a sin^2(pi k_a) sin^2(pi k'_a), dispersion
 * omega = (nu + 4 sum_a sin^2(pi k_a))^{1/2} and drift b_a = sin(2 pi k_a) / omega.
 */
inline VelocityModel build_phonon(const PhononSpec& spec) {
  spec.validate();
  const int d = spec.dim, N = spec.n_per_axis;
  long total = 1;
  for (int a = 0; a < d; ++a) total *= N;
  const auto n = static_cast<Eigen::Index>(total);

  Eigen::MatrixXd k(n, d), b(n, d), s2(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    long rest = static_cast<long>(i);
    for (int a = d - 1; a >= 0; --a) {
      const int m = static_cast<int>(rest % N);
      rest /= N;
      k(i, a) = (m + 0.5) / N;
      const double s = std::sin(kPi * k(i, a));
      s2(i, a) = s * s;
    }
  }
  // k -> 1 - k maps node index m to N - 1 - m on every axis, i.e. i to n - 1 - i.
  for (Eigen::Index i = 0; i < n; ++i) {
    const double omega = std::sqrt(spec.nu + 4.0 * s2.row(i).sum());
    for (int a = 0; a < d; ++a) b(i, a) = std::sin(2.0 * kPi * k(i, a)) / omega;
  }
  for (Eigen::Index i = 0; i < n / 2; ++i) b.row(n - 1 - i) = -b.row(i);

  Eigen::MatrixXd S = s2 * s2.transpose();
  S = 0.5 * (S + S.transpose()).eval();
  auto model = VelocityModel::assemble("phonon", std::move(k), Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)),
                                       std::move(b), std::move(S));
  model.diagnostics["max_b2_over_lambda"] =
      (model.drift.rowwise().squaredNorm().array() / model.rate.array()).maxCoeff();
  model.diagnostics["lambda_min"] = model.rate.minCoeff();
  model.diagnostics["lambda_max"] = model.rate.maxCoeff();
  return model;
}

}  // namespace lbgf
