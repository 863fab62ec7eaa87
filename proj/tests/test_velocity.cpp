#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <random>

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

const std::vector<VelocityModel>& default_models() {
  static const std::vector<VelocityModel> models{build_lorentz({}), build_rayleigh({}), build_phonon({})};
  return models;
}

Eigen::MatrixXd random_functions(Eigen::Index n, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  return Eigen::MatrixXd::NullaryExpr(n, cols, [&] { return z(rng); });
}

}  // namespace

class Operators : public ::testing::TestWithParam<int> {
 protected:
  const VelocityModel& m() const { return default_models()[static_cast<std::size_t>(GetParam())]; }
};

TEST_P(Operators, DetailedBalance) {
  const Eigen::MatrixXd WL = m().weights.asDiagonal() * oracle::generator(m());
  EXPECT_LT((WL - WL.transpose()).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, WL.cwiseAbs().maxCoeff()));
}

TEST_P(Operators, MassConservation) {
  const auto g = random_functions(m().size(), 3, 1);
  const Eigen::MatrixXd Lg = apply_generator(m(), g);
  EXPECT_LT((m().weights.transpose() * Lg).cwiseAbs().maxCoeff(), 1e-12 * m().rate.maxCoeff() * g.cwiseAbs().maxCoeff());
  EXPECT_LT(apply_generator(m(), Eigen::VectorXd::Ones(m().size())).cwiseAbs().maxCoeff(), 1e-12 * m().rate.maxCoeff());
}

TEST_P(Operators, RateTimesIdMinusKIsMinusL) {
  const auto g = random_functions(m().size(), 2, 2);
  const Eigen::MatrixXd lhs = m().rate.asDiagonal() * (g - apply_k(m(), g));
  const Eigen::MatrixXd rhs = -apply_generator(m(), g);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12 * m().rate.maxCoeff() * g.cwiseAbs().maxCoeff());
  // and against the dense generator
  EXPECT_LT((oracle::generator(m()) * g - apply_generator(m(), g)).cwiseAbs().maxCoeff(), 1e-12 * m().rate.maxCoeff() * g.cwiseAbs().maxCoeff());
}

TEST_P(Operators, KSelfAdjointUnderTiltedMeasure) {
  const auto tm = tilted_measure(m());
  EXPECT_NEAR(tm.weights.sum(), 1.0, 1e-14);
  const auto g = random_functions(m().size(), 2, 3);
  const Eigen::VectorXd f = g.col(0), h = g.col(1);
  const Eigen::VectorXd kf = apply_k(m(), f), kh = apply_k(m(), h);
  EXPECT_NEAR(tm.inner(kf, h), tm.inner(f, kh), 1e-12 * std::sqrt(tm.inner(f, f) * tm.inner(h, h)));
  // L self-adjoint in L2(pi)
  const Eigen::VectorXd lf = apply_generator(m(), f), lh = apply_generator(m(), h);
  EXPECT_NEAR(lf.dot(m().weights.cwiseProduct(h)), f.dot(m().weights.cwiseProduct(lh)), 1e-12 * m().rate.maxCoeff() * f.norm() * h.norm());
}

TEST_P(Operators, InvariantsHold) {
  const auto r = m().check_invariants();
  EXPECT_LT(r.weight_sum_error, 1e-12);
  EXPECT_EQ(r.sigma_asymmetry, 0.0);
  EXPECT_GE(r.sigma_min, 0.0);
  EXPECT_LT(r.rate_error, 1e-12 * m().rate.maxCoeff());
  EXPECT_LT(r.centering, 1e-12);
}

TEST_P(Operators, PoissonSolveResidualGaugeAndDenseAgreement) {
  const double tol = 1e-12;
  const auto sol = poisson_solve(m(), tol);
  EXPECT_LT(sol.residual, tol);
  EXPECT_LT(poisson_residual(m(), sol.xi), tol);
  const auto tm = tilted_measure(m());
  EXPECT_LT((tm.weights.transpose() * sol.xi).cwiseAbs().maxCoeff(), 1e-10);
  const auto D = diffusion_matrix(m(), sol).D;
  const auto Dd = diffusion_matrix(m(), poisson_solve_dense(m())).D;
  EXPECT_LT((D - Dd).cwiseAbs().maxCoeff(), 10 * tol);
  EXPECT_LT((D - D.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(D);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST_P(Operators, SpectralGapProbeMatchesDense) {
  const auto probe = spectral_gap_probe(m());
  const auto dense = spectral_gap_dense(m());
  EXPECT_TRUE(probe.converged);
  EXPECT_NEAR(probe.rho, dense.rho, 1e-6);
  EXPECT_LT(probe.rho, 1.0);
  EXPECT_NEAR(probe.gap, 1.0 - probe.rho, 1e-15);
}

INSTANTIATE_TEST_SUITE_P(AllModels, Operators, ::testing::Values(0, 1, 2), [](const auto& info) {
  return std::string(info.param == 0 ? "Lorentz" : info.param == 1 ? "Rayleigh" : "Phonon");
});

TEST(TwoNode, ClosedFormPoissonAndDiffusion) {
  for (double s : {0.5, 1.0, 3.0}) {
    const auto m = oracle::two_node(s);
    const auto sol = poisson_solve(m);
    EXPECT_NEAR(sol.xi(0, 0), 1.0 / s, 1e-13);
    EXPECT_NEAR(sol.xi(1, 0), -1.0 / s, 1e-13);
    EXPECT_NEAR(diffusion_matrix(m, sol).D(0, 0), 1.0 / s, 1e-13);
    // K maps every function to its mean, so it vanishes on mean-zero functions.
    EXPECT_NEAR(spectral_gap_probe(m).rho, 0.0, 1e-12);
  }
}

TEST(Lorentz, DiffusionMatrixMatchesEigenvalueOracle) {
  // cos(theta) is an eigenfunction of -L with eigenvalue mu = 2 - (1/2pi) int pi |sin(t/2)| cos t dt.
  auto integrand = [](double t) { return 0.5 * std::abs(std::sin(0.5 * t)) * std::cos(t); };
  const double mu = 2.0 - boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, 2 * oracle::pi, 10, 1e-14);
  EXPECT_NEAR(mu, 8.0 / 3.0, 1e-12);
  const double expected = 0.5 / mu;  // E[cos^2] / mu
  const auto m = build_lorentz({256});
  const auto D = diffusion_matrix(m, poisson_solve(m)).D;
  EXPECT_LT((D - expected * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Poisson, ReportsNonConvergence) {
  const auto m = build_lorentz({16});
  try {
    poisson_solve(m, 1e-14, 2);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.iterations(), 2);
    EXPECT_GT(e.residual(), 1e-14);
  }
}

TEST(Assemble, RejectsBrokenInvariants) {
  Eigen::MatrixXd nodes(2, 1), drift(2, 1);
  nodes << 1, -1;
  drift << 1, -1;
  Eigen::VectorXd w(2);
  w << 0.5, 0.5;
  Eigen::MatrixXd S(2, 2);
  S << 1, 2, 1, 1;
  EXPECT_THROW(VelocityModel::assemble("x", nodes, w, drift, S), NumericalQualityError);
  Eigen::VectorXd bad_w(2);
  bad_w << 0.5, 0.6;
  EXPECT_THROW(VelocityModel::assemble("x", nodes, bad_w, drift, Eigen::MatrixXd::Ones(2, 2)), NumericalQualityError);
  Eigen::MatrixXd off(2, 1);
  off << 1, 0;
  EXPECT_THROW(VelocityModel::assemble("x", nodes, w, off, Eigen::MatrixXd::Ones(2, 2)), NumericalQualityError);
  EXPECT_THROW(VelocityModel::assemble("x", nodes, w, drift, Eigen::MatrixXd::Ones(3, 3)), UsageError);
}

TEST(Operators, KUndefinedAtZeroRate) {
  const auto m = oracle::two_node(0.0);
  EXPECT_THROW(apply_k(m, Eigen::VectorXd::Ones(2)), DomainError);
  EXPECT_THROW(poisson_solve(m), DomainError);
}

TEST(Diffusion, RejectsMismatchedSolution) {
  const auto m = build_lorentz({16});
  PoissonSolution bad;
  bad.xi = Eigen::MatrixXd::Zero(8, 2);
  EXPECT_THROW(diffusion_matrix(m, bad), UsageError);
}
