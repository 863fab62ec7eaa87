#include <gtest/gtest.h>

#include <sstream>

#include "lbgf/log.hpp"
#include "lbgf/models.hpp"
#include "lbgf/velocity.hpp"
#include "oracles.hpp"

using namespace lbgf;

namespace {
struct Quiet : ::testing::Environment {
  void SetUp() override { log::set_sink(nullptr); }
};
const auto* quiet = ::testing::AddGlobalTestEnvironment(new Quiet);

double max_antipodal_error(const VelocityModel& m) {
  // Every drift vector has an exact negative partner with the same weight.
  double err = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double best = 1e300;
    for (Eigen::Index j = 0; j < m.size(); ++j) {
      if (m.weights[i] != m.weights[j]) continue;
      best = std::min(best, (m.drift.row(i) + m.drift.row(j)).cwiseAbs().maxCoeff());
    }
    err = std::max(err, best);
  }
  return err;
}
}  // namespace

TEST(GaussLegendre, ExactForPolynomialsAndSymmetric) {
  for (int n : {2, 5, 12}) {
    const auto [x, w] = gauss_legendre(n);
    EXPECT_NEAR(w.sum(), 2.0, 1e-14);
    for (int deg = 0; deg <= 2 * n - 1; ++deg) {
      const double exact = deg % 2 ? 0.0 : 2.0 / (deg + 1);
      EXPECT_NEAR((x.array().pow(deg) * w.array()).sum(), exact, 1e-13) << n << " " << deg;
    }
    for (int k = 0; k < n; ++k) EXPECT_EQ(x[k], -x[n - 1 - k]);
  }
}

TEST(Lorentz, RateIsTwoAndDriftCentered) {
  const auto m = build_lorentz({64});
  EXPECT_EQ(m.size(), 64);
  EXPECT_LT((m.rate.array() - 2.0).abs().maxCoeff(), 1e-10);
  EXPECT_EQ(max_antipodal_error(m), 0.0);
  EXPECT_LT(m.check_invariants().centering, 1e-15);
  EXPECT_NEAR(m.diagnostics.at("lambda_min"), 2.0, 1e-10);
  EXPECT_THROW(build_lorentz({63}), ConfigError);
  EXPECT_THROW(build_lorentz({2}), ConfigError);
}

TEST(Lorentz, KernelDependsOnAngleDifference) {
  const auto m = build_lorentz({32});
  for (int i = 1; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) {
      if (i == j) continue;
      const double dt = m.nodes(i, 0) - m.nodes(j, 0);
      EXPECT_NEAR(m.sigma(i, j), oracle::pi * std::abs(std::sin(0.5 * dt)), 1e-13);
    }
  }
}

TEST(Rayleigh, DirectRateMatchesQuadrature) {
  for (int d : {2, 3}) {
    for (double beta : {1.0, 2.5}) {
      for (double speed : {0.0, 0.3, 1.0, 2.0, 4.5}) {
        const double ref = oracle::rayleigh_rate_quadrature(d, beta, speed);
        EXPECT_NEAR(rayleigh_rate_direct(d, beta, speed), ref, 1e-9 * ref) << d << " " << beta << " " << speed;
      }
    }
  }
}

TEST(Rayleigh, RateAtZeroAndLowerBound) {
  const RayleighSpec spec;
  const auto m = build_rayleigh(spec);
  EXPECT_NEAR(m.diagnostics.at("lambda_at_zero"), oracle::rayleigh_rate_quadrature(2, 1.0, 0.0), 1e-9);
  const double chi = rayleigh_chi(2);
  for (Eigen::Index i = 0; i < m.size(); ++i) EXPECT_GE(m.rate[i], chi * m.drift.row(i).norm());
  EXPECT_EQ(max_antipodal_error(m), 0.0);
  EXPECT_LT(m.diagnostics.at("mass_defect"), 1e-7);
}

TEST(Rayleigh, KernelSymmetricAndNonnegative) {
  Eigen::Vector3d a(0.3, -1.2, 0.5), b(-0.7, 0.1, 2.0);
  for (int d : {2, 3}) {
    const Eigen::VectorXd va = a.head(d), vb = b.head(d);
    EXPECT_NEAR(rayleigh_kernel(d, 1.3, va, vb), rayleigh_kernel(d, 1.3, vb, va), 1e-15);
    EXPECT_GT(rayleigh_kernel(d, 1.3, va, vb), 0.0);
  }
}

TEST(Rayleigh, RadialBoundOnPoissonSolution) {
  const RayleighSpec spec;
  const auto m = build_rayleigh(spec);
  const auto rep = rayleigh_xi_bound(m, spec);
  EXPECT_TRUE(rep.a_lambda_below_lambda);
  EXPECT_LT(rep.z, 1.0);
  EXPECT_TRUE(rep.eta_nonnegative);
  EXPECT_NEAR(rep.zeta, rep.chi * (1.0 - rep.z), 1e-15);
  EXPECT_LE(rep.xi_inf_norm, 1.0 / rep.zeta);
  EXPECT_TRUE(rep.bound_satisfied);
  EXPECT_LT(rep.radial_vs_full, 1e-10);
  // The radial profile reproduces the full solve on the whole grid, not only on one ray.
  const auto sol = poisson_solve(m);
  EXPECT_NEAR(sol.xi.cwiseAbs().maxCoeff(), rep.xi_inf_norm, 1e-10);
}

TEST(Rayleigh, ThreeDimensionalBuildAndLimits) {
  RayleighSpec spec;
  spec.dim = 3;
  spec.n_radial = 6;
  spec.n_polar = 4;
  spec.n_azimuth = 8;
  const auto m = build_rayleigh(spec);
  EXPECT_EQ(m.size(), 6 * 4 * 8);
  EXPECT_EQ(max_antipodal_error(m), 0.0);
  EXPECT_TRUE(m.check_invariants().ok(1e-12, 1e-12));
  const auto D = diffusion_matrix(m, poisson_solve(m)).D;
  EXPECT_GT(D.diagonal().minCoeff(), 0.0);
  EXPECT_THROW(rayleigh_xi_bound(m, spec), ConfigError);
  spec.dim = 4;
  EXPECT_THROW(build_rayleigh(spec), ConfigError);
}

TEST(Rayleigh, NearCutoffIsDiagnosed) {
  RayleighSpec spec;
  spec.dim = 3;
  spec.n_radial = 4;
  spec.n_polar = 4;
  spec.n_azimuth = 4;
  spec.near_cutoff = 0.5;
  const auto m = build_rayleigh(spec);
  EXPECT_GT(m.diagnostics.at("near_pairs_cut"), 0.0);
  EXPECT_GT(m.diagnostics.at("near_pairs_max_bias"), 0.0);
}

TEST(Phonon, RejectsUnpinnedLattice) {
  PhononSpec spec;
  spec.nu = 0.0;
  try {
    build_phonon(spec);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("pinning"), std::string::npos);
  }
  PhononSpec one;
  one.dim = 1;
  EXPECT_THROW(build_phonon(one), ConfigError);
  one.product_form_surrogate = true;
  EXPECT_NO_THROW(build_phonon(one));
}

TEST(Phonon, DriftAndKernel) {
  PhononSpec spec;
  spec.n_per_axis = 8;
  const auto m = build_phonon(spec);
  EXPECT_EQ(m.size(), 64);
  EXPECT_EQ(max_antipodal_error(m), 0.0);
  // S is the rank-one product kernel sum_a sin^2(pi k_a) sin^2(pi k'_a) up to its (absent) diagonal adjustments.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.sigma);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const Eigen::VectorXd k = m.nodes.row(i).transpose();
    const double omega = std::sqrt(spec.nu + 4 * (k.array() * oracle::pi).sin().square().sum());
    for (int a = 0; a < 2; ++a) EXPECT_NEAR(m.drift(i, a), std::sin(2 * oracle::pi * k[a]) / omega, 1e-14);
  }
  const auto D = diffusion_matrix(m, poisson_solve(m)).D;
  EXPECT_NEAR(D(0, 0), D(1, 1), 1e-12);
  EXPECT_NEAR(D(0, 1), 0.0, 1e-12);
}
