#include <gtest/gtest.h>

#include <random>

#include "lbgf/functionals.hpp"
#include "lbgf/log.hpp"
#include "lbgf/models.hpp"
#include "oracles.hpp"

using namespace lbgf;

namespace {

struct Triple {
  double k, p, q, xi;
};

// kappa in [0.1, 10], p, q log-uniform in [1e-3, 1e3], xi in [-20, 20].
std::vector<Triple> random_triples(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lk(std::log(0.1), std::log(10.0)), lp(std::log(1e-3), std::log(1e3)),
      x(-20.0, 20.0);
  std::vector<Triple> out;
  for (int i = 0; i < n; ++i) out.push_back({std::exp(lk(rng)), std::exp(lp(rng)), std::exp(lp(rng)), x(rng)});
  return out;
}

}  // namespace

TEST(Phi, ZeroOnItsZeroSet) {
  EXPECT_NEAR(phi(1, 2, 1, 1).value(), 0.0, 1e-15);
  for (const auto& t : random_triples(10000, 1)) {
    const auto v = phi(t.k, t.p, t.q, t.k * (t.p - t.q));
    ASSERT_TRUE(v.is_finite());
    ASSERT_LT(std::abs(v.value()), 1e-12 * std::max(1.0, t.k * (t.p + t.q))) << t.k << " " << t.p << " " << t.q;
  }
}

TEST(Phi, ZeroRate) {
  EXPECT_EQ(phi(0, 1, 1, 0).value(), 0.0);
  EXPECT_FALSE(phi(0, 1, 1, 1).is_finite());
  EXPECT_EQ(phi(0, 1, 1, 1).value(), Cost::kSentinel);
}

TEST(Phi, ClosedFormAtEqualDensities) {
  const double expected = 2.0 * std::asinh(1.0) - (std::sqrt(8.0) - 2.0);
  EXPECT_NEAR(phi(1, 1, 1, 2).value(), expected, 1e-14);
  EXPECT_NEAR(expected, 0.934320, 5e-7);
  // grid supremum over lambda in [-20, 20], step 1e-4
  const auto grid = legendre_grid(20.0, 1e-4);
  double best = -1e300;
  for (double l : grid) best = std::max(best, l * 2.0 - std::expm1(l) - std::expm1(-l));
  EXPECT_NEAR(phi(1, 1, 1, 2).value(), best, 1e-8);
}

TEST(Phi, MatchesLegendreSupremum) {
  for (const auto& t : random_triples(300, 2)) {
    const double ref = oracle::phi_sup(t.k, t.p, t.q, t.xi);
    ASSERT_NEAR(phi(t.k, t.p, t.q, t.xi).value(), ref, 1e-9 * std::max(1.0, std::abs(ref)));
  }
}

TEST(Phi, DegenerateDensitiesFollowLegendreLimit) {
  // q = 0: sup_l l xi - k p (e^l - 1) = xi log(xi / kp) - xi + kp for xi > 0, +inf for xi < 0.
  EXPECT_NEAR(phi(2, 1.5, 0, 1).value(), 1 * std::log(1 / 3.0) - 1 + 3, 1e-14);
  EXPECT_NEAR(phi(2, 1.5, 0, 0).value(), 3.0, 1e-14);
  EXPECT_FALSE(phi(2, 1.5, 0, -1).is_finite());
  EXPECT_FALSE(phi(2, 0, 1.5, 1).is_finite());
  EXPECT_EQ(phi(2, 0, 0, 0).value(), 0.0);
  EXPECT_FALSE(phi(2, 0, 0, 1e-3).is_finite());
}

TEST(Phi, RejectsNegativeInputs) {
  EXPECT_THROW(phi(-1, 1, 1, 0), DomainError);
  EXPECT_THROW(phi(1, -1, 1, 0), DomainError);
  EXPECT_THROW(psi(1, 1, -1, 0), DomainError);
}

TEST(Phi, SlopeAtZero) {
  EXPECT_EQ(phi_slope_at_zero(1, 1), 0.0);
  EXPECT_NEAR(phi_slope_at_zero(1, std::exp(2.0)), 1.0, 1e-15);
  const double h = 1e-6;
  const double fd = (phi(1, 2, 1, h).value() - phi(1, 2, 1, -h).value()) / (2 * h);
  EXPECT_NEAR(phi_slope_at_zero(2, 1), -0.5 * std::log(2.0), 1e-15);
  EXPECT_NEAR(fd, -0.5 * std::log(2.0), 1e-8);
  EXPECT_THROW(phi_slope_at_zero(0, 1), DomainError);
}

TEST(Psi, Examples) {
  EXPECT_EQ(psi(1, 4, 9, 0).value(), 0.0);
  EXPECT_NEAR(psi(1, 1, 1, 2).value(), 2.0 * std::asinh(1.0) - (std::sqrt(8.0) - 2.0), 1e-14);
}

TEST(Psi, DecompositionIdentity) {
  // Phi(p, q; xi) = Phi(p, q; 0) + xi * log(q / p) / 2 + Psi(p, q; xi)
  for (const auto& t : random_triples(10000, 3)) {
    const double lhs = phi(t.k, t.p, t.q, t.xi).value();
    const double rhs = phi(t.k, t.p, t.q, 0).value() + t.xi * phi_slope_at_zero(t.p, t.q) + psi(t.k, t.p, t.q, t.xi).value();
    ASSERT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs))) << t.k << " " << t.p << " " << t.q << " " << t.xi;
  }
}

TEST(Psi, LegendreOracleAgreement) {
  const auto grid = legendre_grid(20.0, 1e-3);
  for (const auto& t : random_triples(1000, 4)) {
    const auto ref = psi_legendre_oracle(t.k, t.p, t.q, t.xi, grid);
    const double s = t.k * std::sqrt(t.p * t.q);
    const double v = psi(t.k, t.p, t.q, t.xi).value();
    // Skip triples whose maximizer lies outside the grid.
    if (std::abs(stable_asinh(t.xi / (2 * s))) > 19.0) continue;
    ASSERT_LE(ref.value(), v + 1e-12 * std::max(1.0, v));
    // Grid error of a concave sup: at most s cosh(l*) h^2 / 4.
    const double l = stable_asinh(t.xi / (2 * s));
    ASSERT_NEAR(ref.value(), v, 1.01 * s * std::cosh(l) * 1e-6 / 4 + 1e-12 * std::max(1.0, v));
  }
  EXPECT_EQ(psi_legendre_oracle(1, 1, 1, 0, grid).value(), 0.0);
  EXPECT_THROW(psi_legendre_oracle(1, 1, 1, 0, {}), UsageError);
}

TEST(Psi, LegendreOracleImprovesUnderRefinement) {
  double prev = -1e300;
  for (double h : {0.5, 0.25, 0.125, 0.0625}) {
    const double v = psi_legendre_oracle(1.3, 0.7, 2.1, 3.3, legendre_grid(10.0, h)).value();
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(Psi, IndependentSupremum) {
  for (const auto& t : random_triples(300, 5)) {
    const double ref = oracle::psi_sup(t.k, t.p, t.q, t.xi);
    ASSERT_NEAR(psi(t.k, t.p, t.q, t.xi).value(), ref, 1e-9 * std::max(1.0, std::abs(ref)));
  }
}

TEST(Psi, SmallAndLargeFluxAsymptotics) {
  // Psi ~ xi^2 / (4 k sqrt(pq)) near zero.
  EXPECT_NEAR(psi(1, 1, 1, 1e-3).value() / 1e-6, 0.25, 1e-4);
  // Psi ~ |xi| log |xi|: the ratio approaches 1 like 1 - 1/log xi.
  double prev = 0.0;
  for (double xi : {1e3, 1e4, 1e5}) {
    const double ratio = psi(1, 1, 1, xi).value() / (xi * std::log(xi));
    EXPECT_GT(ratio, prev);
    EXPECT_NEAR(ratio, 1.0 - 1.0 / std::log(xi), 2.0 / (xi * std::log(xi)) + 1e-12);
    prev = ratio;
  }
  EXPECT_NEAR(psi(1, 1, 1, -1e4).value(), psi(1, 1, 1, 1e4).value(), 1e-9);
}

TEST(Psi, DegenerateDensities) {
  EXPECT_EQ(psi(1, 0, 1, 0).value(), 0.0);
  EXPECT_FALSE(psi(1, 0, 1, 1).is_finite());
  EXPECT_FALSE(psi(0, 1, 1, -1).is_finite());
}

TEST(Costs, JointConvexityMidpoint) {
  // Convex in (p, q, xi) at fixed kappa; kappa p is bilinear, so kappa stays shared.
  const auto a = random_triples(10000, 6);
  auto b = random_triples(10000, 7);
  for (std::size_t i = 0; i < a.size(); ++i) {
    b[i].k = a[i].k;
    const Triple m{a[i].k, 0.5 * (a[i].p + b[i].p), 0.5 * (a[i].q + b[i].q), 0.5 * (a[i].xi + b[i].xi)};
    for (auto f : {&phi, &psi}) {
      const double fa = f(a[i].k, a[i].p, a[i].q, a[i].xi).value();
      const double fb = f(b[i].k, b[i].p, b[i].q, b[i].xi).value();
      const double fm = f(m.k, m.p, m.q, m.xi).value();
      ASSERT_LE(fm, 0.5 * (fa + fb) + 1e-10 * std::max(1.0, fa + fb));
    }
  }
}

TEST(Costs, StrictConvexityInFlux) {
  for (const auto& t : random_triples(1000, 8)) {
    if (t.xi == 0.0) continue;
    const double mid = psi(t.k, t.p, t.q, 0.5 * t.xi).value();
    const double ends = 0.5 * (psi(t.k, t.p, t.q, 0).value() + psi(t.k, t.p, t.q, t.xi).value());
    ASSERT_LT(mid, ends);
  }
}

TEST(StableAsinh, MatchesStdAndIsAccurateForTinyArguments) {
  for (double x : {-1e3, -2.5, -1e-3, 0.0, 1e-12, 0.7, 1e5}) EXPECT_NEAR(stable_asinh(x), std::asinh(x), 1e-15 * (1 + std::abs(std::asinh(x))));
  EXPECT_EQ(stable_asinh(1e-300), 1e-300);
  EXPECT_NEAR(stable_asinh(1e200), std::log(2e200), 1e-12);
}

TEST(TruncatedLog, ClampsOnlyOutsideTheWindow) {
  EXPECT_EQ(truncated_log(2.0), std::log(2.0));
  EXPECT_EQ(truncated_log(0.0), std::log(1e-300));
  LogTruncation t{1e-3, 1e3};
  EXPECT_EQ(truncated_log(1e-5, t), std::log(1e-3));
  EXPECT_EQ(truncated_log(1e5, t), std::log(1e3));
}

class SliceFunctionals : public ::testing::Test {
 protected:
  void SetUp() override { log::set_sink(nullptr); }
  void TearDown() override { log::set_sink(&std::clog); }
  VelocityModel model = build_lorentz({16});
  PeriodicGrid grid{1, 8};

  Slice random_density(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    Slice f(static_cast<Eigen::Index>(grid.cells()), model.size());
    for (Eigen::Index c = 0; c < f.rows(); ++c)
      for (Eigen::Index i = 0; i < f.cols(); ++i) f(c, i) = u(rng);
    return f / (grid.cell_volume() * (f * model.weights).sum());
  }
};

TEST_F(SliceFunctionals, EntropyExamples) {
  Slice one = Slice::Ones(static_cast<Eigen::Index>(grid.cells()), model.size());
  EXPECT_NEAR(relative_entropy(one, model, grid.cell_volume()), 0.0, 1e-15);
  Slice half = Slice::Zero(one.rows(), one.cols());
  half.topRows(one.rows() / 2).setConstant(2.0);
  EXPECT_NEAR(relative_entropy(half, model, grid.cell_volume()), std::log(2.0), 1e-14);
  Slice neg = one;
  neg(0, 0) = -1e-3;
  EXPECT_THROW(relative_entropy(neg, model, grid.cell_volume()), DomainError);
}

TEST_F(SliceFunctionals, EntropyMatchesExtendedPrecision) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Slice f = random_density(seed);
    EXPECT_NEAR(relative_entropy(f, model, grid.cell_volume()), oracle::entropy_long(f, model.weights, grid.cell_volume()), 1e-12);
  }
}

TEST_F(SliceFunctionals, DirichletFormExamples) {
  Slice flat_v = Slice::Ones(static_cast<Eigen::Index>(grid.cells()), model.size());
  for (Eigen::Index c = 0; c < flat_v.rows(); ++c) flat_v.row(c) *= 1.0 + 0.5 * std::sin(static_cast<double>(c));
  EXPECT_NEAR(dirichlet_form(flat_v, model, grid.cell_volume()), 0.0, 1e-14);

  // Two nodes, one cell: sum_ij w_i w_j s (sqrt f_j - sqrt f_i)^2 = 2 * 1/4 * s * (sqrt b - sqrt a)^2.
  const double s = 1.7, a = 0.4, b = 2.5;
  const auto two = oracle::two_node(s);
  Slice f(1, 2);
  f << a, b;
  const double expected = 0.5 * s * std::pow(std::sqrt(b) - std::sqrt(a), 2);
  EXPECT_NEAR(dirichlet_form(f, two, 1.0), expected, 1e-15);
  EXPECT_NEAR(dirichlet_form(f, oracle::two_node(2 * s), 1.0), 2 * expected, 1e-15);
}

TEST_F(SliceFunctionals, DirichletVariationalProbe) {
  const Slice f = random_density(11);
  const double dv = grid.cell_volume();
  EXPECT_NEAR(dirichlet_lower_bound(f, model, dv, Slice::Zero(f.rows(), f.cols())), 0.0, 1e-15);
  // The supremum is attained at phi = log(f) / 2 and equals half the Dirichlet form.
  const Slice opt = 0.5 * f.array().log().matrix();
  const double at_opt = dirichlet_lower_bound(f, model, dv, opt);
  const double ratio = at_opt / dirichlet_form(f, model, dv);
  EXPECT_NEAR(ratio, 0.5, 1e-12);
  // Coordinate ascent from a random start never beats the value at the maximizer.
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n01;
  Slice phi_t = Slice::NullaryExpr(f.rows(), f.cols(), [&] { return 0.3 * n01(rng); });
  double val = dirichlet_lower_bound(f, model, dv, phi_t);
  for (int sweep = 0; sweep < 20; ++sweep) {
    for (Eigen::Index c = 0; c < f.rows(); ++c) {
      for (Eigen::Index i = 0; i < f.cols(); ++i) {
        for (double step : {0.1, -0.1, 0.02, -0.02}) {
          phi_t(c, i) += step;
          const double v = dirichlet_lower_bound(f, model, dv, phi_t);
          if (v > val) {
            val = v;
          } else {
            phi_t(c, i) -= step;
          }
        }
      }
    }
    ASSERT_LE(val, at_opt + 1e-12);
  }
  EXPECT_GT(val, 0.9 * at_opt);
}

TEST_F(SliceFunctionals, KinematicTermBasics) {
  const Slice f0 = random_density(21), f1 = random_density(22);
  const double dv = grid.cell_volume();
  std::vector<Eigen::MatrixXd> zero(grid.cells(), Eigen::MatrixXd::Zero(model.size(), model.size()));
  const auto z = CurrentField::explicit_values(zero);
  EXPECT_EQ(kinematic_term({f0, f1}, {z, z}, model, 0.1, dv).value(), 0.0);

  const auto e0 = CurrentField::of_density(model, f0), e1 = CurrentField::of_density(model, f1);
  const double r1 = kinematic_term({f0, f1}, {e0, e1}, model, 0.1, dv).value();
  const double r2 = kinematic_term({f0, f1}, {e0.scaled(2), e1.scaled(2)}, model, 0.1, dv).value();
  EXPECT_GT(r1, 0.0);
  EXPECT_GT(r2, r1);

  auto bad = zero;
  bad[0](0, 1) = 1.0;
  EXPECT_THROW(kinematic_term({f0, f1}, {CurrentField::explicit_values(bad), z}, model, 0.1, dv), DomainError);
}

TEST_F(SliceFunctionals, KinematicVariationalProbe) {
  const Slice f0 = random_density(31), f1 = random_density(32);
  const double dv = grid.cell_volume(), dt = 0.05;
  const auto e0 = CurrentField::of_density(model, f0, 0.7), e1 = CurrentField::of_density(model, f1, 0.7);
  const double R = kinematic_term({f0, f1}, {e0, e1}, model, dt, dv).value();
  auto one = [](std::size_t, Eigen::Index, Eigen::Index, Eigen::Index) { return 1.0; };
  auto zero = [](std::size_t, Eigen::Index, Eigen::Index, Eigen::Index) { return 0.0; };
  EXPECT_EQ(kinematic_lower_bound({f0, f1}, {e0, e1}, model, dt, dv, zero, one), 0.0);

  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.3, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double amp = u(rng), freq = 3 * u(rng), a0 = pos(rng);
    auto zeta = [&](std::size_t, Eigen::Index c, Eigen::Index i, Eigen::Index j) {
      return amp * (std::sin(freq * (i + 0.3 * c)) - std::sin(freq * (j + 0.3 * c)));
    };
    auto alpha = [&](std::size_t, Eigen::Index c, Eigen::Index i, Eigen::Index j) {
      return a0 * (1.0 + 0.5 * std::sin(static_cast<double>(c + i * j)));
    };
    ASSERT_LE(kinematic_lower_bound({f0, f1}, {e0, e1}, model, dt, dv, zeta, alpha), R + 1e-12);
  }
  auto bad_alpha = [](std::size_t, Eigen::Index, Eigen::Index, Eigen::Index) { return 0.0; };
  EXPECT_THROW(kinematic_lower_bound({f0, f1}, {e0, e1}, model, dt, dv, zero, bad_alpha), DomainError);
}

TEST_F(SliceFunctionals, KinematicProbeSecondOrderMatch) {
  // alpha = 1, zeta = t * z: probe = t <eta, z> - t^2/2 Q(z) + O(t^4); Psi(eta) for eta = t eta1 scales like t^2.
  // With eta = (the maximizing direction) both sides agree to second order.
  const Slice f = random_density(41);
  const double dv = grid.cell_volume();
  const auto n = model.size();
  auto z = [&](Eigen::Index c, Eigen::Index i, Eigen::Index j) {
    return std::sin(0.7 * i + 0.2 * c) - std::sin(0.7 * j + 0.2 * c);
  };
  // eta_ij = 2 S_ij sqrt(f_i f_j) z_ij is the gradient of the quadratic form at z, so the probe at zeta = z is maximal.
  for (double t : {1e-2, 5e-3}) {
    std::vector<Eigen::MatrixXd> eta(grid.cells(), Eigen::MatrixXd::Zero(n, n));
    for (Eigen::Index c = 0; c < f.rows(); ++c)
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          eta[c](i, j) = t * model.sigma(i, j) * std::sqrt(f(c, i) * f(c, j)) * z(c, i, j) * 2.0;
    const auto field = CurrentField::explicit_values(eta);
    const double R = kinematic_term({f, f}, {field, field}, model, 1.0, dv).value();
    auto zeta = [&](std::size_t, Eigen::Index c, Eigen::Index i, Eigen::Index j) { return t * z(c, i, j); };
    // alpha_ij = sqrt(f_j / f_i) makes the quadratic weight symmetric: f_i (alpha_ij + 1/alpha_ji) = 2 sqrt(f_i f_j).
    auto alpha = [&](std::size_t, Eigen::Index c, Eigen::Index i, Eigen::Index j) { return std::sqrt(f(c, j) / f(c, i)); };
    const double probe = kinematic_lower_bound({f, f}, {field, field}, model, 1.0, dv, zeta, alpha);
    EXPECT_LE(probe, R + 1e-15);
    EXPECT_NEAR(probe / R, 1.0, 20 * t * t);
  }
}

TEST_F(SliceFunctionals, CurrentFieldMidpointAndAsymmetry) {
  const Slice f0 = random_density(51), f1 = random_density(52);
  const auto a = CurrentField::of_density(model, f0), b = CurrentField::of_density(model, f1);
  const auto m = CurrentField::midpoint(a, b);
  EXPECT_TRUE(m.generated());
  EXPECT_NEAR(m(3, 1, 5), 0.5 * (a(3, 1, 5) + b(3, 1, 5)), 1e-15);
  EXPECT_EQ(m.max_asymmetry(), 0.0);
  const auto mixed = CurrentField::midpoint(a, CurrentField::explicit_values(std::vector<Eigen::MatrixXd>(grid.cells(), b.cell_matrix(0))));
  EXPECT_FALSE(mixed.generated());
  EXPECT_LT(mixed.max_asymmetry(), 1e-15);
}

TEST(HeatFunctionals, FisherInformation) {
  const PeriodicGrid g{1, 64};
  const SpectralGrid sp(g);
  const Eigen::MatrixXd D = Eigen::MatrixXd::Identity(1, 1);
  EXPECT_NEAR(fisher_information(Eigen::VectorXd::Ones(64), D, sp), 0.0, 1e-15);
  Eigen::VectorXd rho(64);
  for (int c = 0; c < 64; ++c) rho[c] = 1.0 + 0.5 * std::sin(2 * oracle::pi * c / 64.0);
  // 1/2 int (pi cos)^2 / (1 + sin/2) dx by a fine composite rule
  const int fine = 200000;
  long double ref = 0.0L;
  for (int k = 0; k < fine; ++k) {
    const double x = (k + 0.5) / fine;
    const double d = oracle::pi * std::cos(2 * oracle::pi * x);
    ref += d * d / (1.0 + 0.5 * std::sin(2 * oracle::pi * x));
  }
  ref *= 0.5L / fine;
  EXPECT_NEAR(fisher_information(rho, D, sp), static_cast<double>(ref), 1e-8);
  EXPECT_THROW(fisher_information(rho, Eigen::MatrixXd::Zero(1, 1), sp), DomainError);
}

TEST(HeatFunctionals, FisherVariationalProbe) {
  const PeriodicGrid g{2, 16};
  const SpectralGrid sp(g);
  Eigen::MatrixXd D(2, 2);
  D << 0.3, 0.1, 0.1, 0.2;
  Eigen::VectorXd rho(static_cast<Eigen::Index>(g.cells()));
  for (std::size_t c = 0; c < g.cells(); ++c) {
    const auto x = g.position(c);
    rho[static_cast<Eigen::Index>(c)] = 1.0 + 0.4 * std::cos(2 * oracle::pi * x[0]) * std::sin(2 * oracle::pi * x[1]);
  }
  const double E = fisher_information(rho, D, sp);
  const Eigen::VectorXd half_log = 0.5 * rho.array().log().matrix();
  // Band-limited to the grid only approximately, so allow a small spectral error.
  EXPECT_NEAR(fisher_lower_bound(rho, D, sp, half_log), E, 1e-3 * E);
  for (double a : {-0.5, 0.2, 0.8}) {
    EXPECT_LE(fisher_lower_bound(rho, D, sp, a * half_log), E * (1 + 1e-3));
  }
}

TEST(HeatFunctionals, RejectsDensityAtZero) {
  const PeriodicGrid g{1, 16};
  const SpectralGrid sp(g);
  Eigen::VectorXd rho = Eigen::VectorXd::Ones(16);
  rho[3] = 0.0;
  EXPECT_THROW(fisher_information(rho, Eigen::MatrixXd::Identity(1, 1), sp), DomainError);
}
