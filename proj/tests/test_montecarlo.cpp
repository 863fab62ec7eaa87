#include <gtest/gtest.h>

#include "lbgf/log.hpp"
#include "lbgf/models.hpp"
#include "lbgf/montecarlo.hpp"
#include "lbgf/parallel.hpp"
#include "oracles.hpp"

using namespace lbgf;

namespace {
struct Quiet : ::testing::Environment {
  void SetUp() override { log::set_sink(nullptr); }
};
const auto* quiet = ::testing::AddGlobalTestEnvironment(new Quiet);

// Var(X_T) / 2T for the two-node chain: the velocity autocorrelation is exp(-s t).
double two_node_finite_horizon(double s, double T) { return 1.0 / s - (1.0 - std::exp(-s * T)) / (s * s * T); }
}  // namespace

TEST(PathStream, ReproducibleAndDistinct) {
  auto a = path_stream(42, 7), b = path_stream(42, 7), c = path_stream(42, 8), d = path_stream(43, 7);
  const auto xa = a();
  EXPECT_EQ(xa, b());
  EXPECT_NE(xa, c());
  EXPECT_NE(xa, d());
  // The high half of a 64-bit seed matters too.
  EXPECT_NE(path_stream(1, 0)(), path_stream(1 + (std::uint64_t{1} << 32), 0)());
}

TEST(JumpChain, JumpDistributionFollowsKernel) {
  const auto m = build_lorentz({8});
  const JumpChain chain(m);
  std::mt19937_64 rng(5);
  std::vector<int> counts(8, 0);
  const int n = 80000;
  for (int k = 0; k < n; ++k) ++counts[static_cast<std::size_t>(chain.draw_jump(0, rng))];
  for (Eigen::Index j = 0; j < 8; ++j) {
    const double p = m.weights[j] * m.sigma(j, 0) / m.rate[0];
    const double sd = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(counts[static_cast<std::size_t>(j)] / double(n), p, 5 * sd + 1e-12) << j;
  }
  EXPECT_THROW(JumpChain(oracle::two_node(0.0)), DomainError);
}

TEST(Estimate, TwoNodeMatchesClosedForm) {
  const double s = 2.0;
  const auto m = oracle::two_node(s);
  McConfig cfg;
  cfg.n_paths = 20000;
  cfg.T = 20.0;
  cfg.batches = 20;
  cfg.seed = 42;
  const auto est = estimate_D(m, cfg);
  const double expected = two_node_finite_horizon(s, cfg.T);
  EXPECT_NEAR(est.D_hat(0, 0), expected, 4.0 * est.standard_error(0, 0));
  EXPECT_LT(est.standard_error(0, 0), 0.05 * expected);
  EXPECT_EQ(est.batch_D.size(), 20u);
  EXPECT_NEAR(est.mean_jumps, s * cfg.T, 0.2);
  long total = 0;
  for (long c : est.final_occupation) total += c;
  EXPECT_EQ(total, cfg.n_paths);
  EXPECT_NEAR(est.final_occupation[0] / double(cfg.n_paths), 0.5, 0.02);
}

TEST(Estimate, LorentzWithinSamplingError) {
  const auto m = build_lorentz({16});
  const auto D = diffusion_matrix(m, poisson_solve(m)).D;
  McConfig cfg;
  cfg.n_paths = 20000;
  cfg.T = 50.0;
  cfg.seed = 42;
  const auto est = estimate_D(m, cfg);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      EXPECT_NEAR(est.D_hat(a, b), D(a, b), 4.0 * est.standard_error(a, b) + 0.01 * D(0, 0)) << a << b;
  EXPECT_EQ(est.D_hat(0, 1), est.D_hat(1, 0));
}

TEST(Estimate, IndependentOfThreadCount) {
  const auto m = build_lorentz({8});
  McConfig cfg;
  cfg.n_paths = 3000;
  cfg.T = 5.0;
  cfg.batches = 10;
  set_thread_count(1);
  const auto a = estimate_D(m, cfg);
  set_thread_count(4);
  const auto b = estimate_D(m, cfg);
  set_thread_count(1);
  EXPECT_TRUE((a.D_hat.array() == b.D_hat.array()).all());
  EXPECT_TRUE((a.standard_error.array() == b.standard_error.array()).all());
  EXPECT_EQ(a.mean_jumps, b.mean_jumps);
  cfg.seed = 43;
  const auto c = estimate_D(m, cfg);
  EXPECT_NE(a.D_hat(0, 0), c.D_hat(0, 0));
}

TEST(McConfig, Validation) {
  McConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.n_paths = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = McConfig{};
  cfg.T = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = McConfig{};
  cfg.batches = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.n_paths = 10;
  cfg.batches = 11;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
