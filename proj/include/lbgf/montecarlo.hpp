/*
 * Monte Carlo estimate of the diffusion matrix from the velocity jump chain:
 * holding times Exp(lambda_i), jumps i -> j with probability w_j S_ij / lambda_i,
 * displacement X_T = int_0^T b(V_s) ds, and D_hat = Cov(X_T) / (2T).
 *
 * Every path draws from its own generator seeded by (seed, path index), so
 * results do not depend on the thread count.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lbgf/core.hpp"
#include "lbgf/parallel.hpp"
#include "lbgf/velocity.hpp"

namespace lbgf {

struct McConfig {
  long n_paths = 100000;
  double T = 50.0;
  std::uint64_t seed = 42;
  int batches = 32;

  void validate() const {
    if (n_paths < 1) throw ConfigError("montecarlo n_paths must be >= 1");
    if (!(T > 0.0)) throw ConfigError("montecarlo horizon T must be positive");
    if (batches < 2 || batches > n_paths) throw ConfigError("montecarlo batches must be in [2, n_paths]");
  }
};

/// Generator for one path, derived from (seed, path index).
inline std::mt19937_64 path_stream(std::uint64_t seed, std::uint64_t path) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)};
  return std::mt19937_64(seq);
}

class JumpChain {
 public:
  explicit JumpChain(const VelocityModel& model) : model_(model) {
    if (model.rate.minCoeff() <= 0.0) throw DomainError("jump chain needs a positive rate at every node");
    const auto n = model.size();
    initial_.resize(static_cast<std::size_t>(n));
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) initial_[static_cast<std::size_t>(i)] = acc += model.weights[i];
    jumps_.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& row = jumps_[static_cast<std::size_t>(i)];
      row.resize(static_cast<std::size_t>(n));
      double c = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = c += model.weights[j] * model.sigma(j, i);
      for (auto& v : row) v /= c;
    }
  }

  const VelocityModel& model() const { return model_; }

  Eigen::Index draw_initial(std::mt19937_64& rng) const { return pick(initial_, rng); }
  Eigen::Index draw_jump(Eigen::Index from, std::mt19937_64& rng) const {
    return pick(jumps_[static_cast<std::size_t>(from)], rng);
  }

 private:
  static Eigen::Index pick(const std::vector<double>& cdf, std::mt19937_64& rng) {
    const double u = std::uniform_real_distribution<double>(0.0, cdf.back())(rng);
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return static_cast<Eigen::Index>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
  }

  const VelocityModel& model_;
  std::vector<double> initial_;
  std::vector<std::vector<double>> jumps_;
};

struct PathSample {
  Eigen::VectorXd X;
  long jumps = 0;
  Eigen::Index initial_node = 0;
  Eigen::Index final_node = 0;
};

/// One path started from pi; the last partial holding interval is included.
inline PathSample sample_path(const JumpChain& chain, double T, std::mt19937_64& rng) {
  const auto& m = chain.model();
  PathSample p;
  p.X = Eigen::VectorXd::Zero(m.drift_dim());
  Eigen::Index v = chain.draw_initial(rng);
  p.initial_node = v;
  double t = 0.0;
  while (true) {
    const double hold = std::exponential_distribution<double>(m.rate[v])(rng);
    if (t + hold >= T) {
      p.X += (T - t) * m.drift.row(v).transpose();
      break;
    }
    p.X += hold * m.drift.row(v).transpose();
    t += hold;
    v = chain.draw_jump(v, rng);
    ++p.jumps;
  }
  p.final_node = v;
  return p;
}

struct McEstimate {
  Eigen::MatrixXd D_hat;
  Eigen::MatrixXd standard_error;    // per entry, from batch means
  std::vector<Eigen::MatrixXd> batch_D;
  long n_paths = 0;
  double T = 0.0;
  double mean_jumps = 0.0;
  std::vector<long> final_occupation;  // count of paths ending at each node
};

namespace detail {

// Pairwise summation of a range of per-path values.
template <class Get>
double pairwise_sum(std::size_t begin, std::size_t end, const Get& get) {
  if (end - begin <= 8) {
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += get(i);
    return s;
  }
  const std::size_t mid = begin + (end - begin) / 2;
  return pairwise_sum(begin, mid, get) + pairwise_sum(mid, end, get);
}

inline Eigen::MatrixXd covariance_over(const std::vector<Eigen::VectorXd>& X, std::size_t begin, std::size_t end) {
  const auto d = X.front().size();
  const double n = static_cast<double>(end - begin);
  Eigen::VectorXd mean(d);
  for (Eigen::Index a = 0; a < d; ++a) mean[a] = pairwise_sum(begin, end, [&](std::size_t i) { return X[i][a]; }) / n;
  Eigen::MatrixXd C(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = a; b < d; ++b) {
      C(a, b) = C(b, a) =
          pairwise_sum(begin, end, [&](std::size_t i) { return (X[i][a] - mean[a]) * (X[i][b] - mean[b]); }) / (n - 1.0);
    }
  }
  return C;
}

}  // namespace detail

inline McEstimate estimate_D(const VelocityModel& model, const McConfig& config) {
  config.validate();
  const JumpChain chain(model);
  const auto n = static_cast<std::size_t>(config.n_paths);
  std::vector<Eigen::VectorXd> X(n);
  std::vector<long> jumps(n);
  std::vector<Eigen::Index> final_node(n);
  parallel_for(n, [&](std::size_t i) {
    auto rng = path_stream(config.seed, i);
    const auto p = sample_path(chain, config.T, rng);
    X[i] = p.X;
    jumps[i] = p.jumps;
    final_node[i] = p.final_node;
  });

  McEstimate est;
  est.n_paths = config.n_paths;
  est.T = config.T;
  est.D_hat = detail::covariance_over(X, 0, n) / (2.0 * config.T);
  est.D_hat = 0.5 * (est.D_hat + est.D_hat.transpose()).eval();
  const auto nb = static_cast<std::size_t>(config.batches);
  const auto d = model.drift_dim();
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(d, d), sq = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t begin = b * n / nb, end = (b + 1) * n / nb;
    Eigen::MatrixXd Db = detail::covariance_over(X, begin, end) / (2.0 * config.T);
    est.batch_D.push_back(Db);
    mean += Db;
  }
  mean /= static_cast<double>(nb);
  for (const auto& Db : est.batch_D) sq += (Db - mean).cwiseAbs2();
  est.standard_error = (sq / (static_cast<double>(nb) - 1.0) / static_cast<double>(nb)).cwiseSqrt();
  est.mean_jumps = detail::pairwise_sum(0, n, [&](std::size_t i) { return static_cast<double>(jumps[i]); }) /
                   static_cast<double>(n);
  est.final_occupation.assign(static_cast<std::size_t>(model.size()), 0);
  for (auto v : final_node) ++est.final_occupation[static_cast<std::size_t>(v)];
  return est;
}

}  // namespace lbgf
