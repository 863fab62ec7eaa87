/*
 * Run configuration: one JSON file with blocks model, solver, functional,
 * montecarlo, output and a top-level seed. Every key is checked against the
 * schema before any computation; unknown keys are a ConfigError.
 */
#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lbgf/core.hpp"
#include "lbgf/diffusive.hpp"
#include "lbgf/functionals.hpp"
#include "lbgf/grid.hpp"
#include "lbgf/kinetic.hpp"
#include "lbgf/models.hpp"
#include "lbgf/montecarlo.hpp"

namespace lbgf {

struct ModelConfig {
  std::string kind = "lorentz";
  LorentzSpec lorentz;
  RayleighSpec rayleigh;
  PhononSpec phonon;
};

/// Initial datum rho0(x) (x) (1 + velocity_amplitude b_1 / max|b_1|), rho0 = 1 + amplitude cos(2 pi mode x_1).
struct InitialConfig {
  double amplitude = 0.5;
  int mode = 1;
  double velocity_amplitude = 0.0;
};

struct SolverConfig {
  PeriodicGrid grid{1, 64};
  double dt = 0.01;
  double T = 0.2;
  double epsilon = 1.0;
  std::vector<double> eps_list{0.4, 0.2, 0.1, 0.05};
  std::optional<TransportScheme> transport;  // unset: upwind for kinetic runs, spectral for sweeps
  double poisson_tol = 1e-12;
  int max_iter = 10000;
  int save_every = 1;
  double collision_number = 0.005;
  bool refinement_check = true;
  InitialConfig initial;
};

struct FunctionalConfig {
  LogTruncation log;
  std::optional<double> certification_tolerance;  // default: C T dt^2 from the model
  double current_scale = 1.0;
};

struct OutputConfig {
  std::string directory = "lbgf-out";
  bool csv = true;
  bool json = true;
  bool record_timings = false;
};

struct RunConfig {
  ModelConfig model;
  SolverConfig solver;
  FunctionalConfig functional;
  McConfig montecarlo;
  OutputConfig output;
  std::uint64_t seed = 42;
  nlohmann::json source = nlohmann::json::object();  // the file as read, for the manifest hash
};

namespace detail {

inline void check_keys(const nlohmann::json& block, const std::string& name, const std::set<std::string>& allowed) {
  if (!block.is_object()) throw ConfigError("config block '" + name + "' must be an object");
  for (const auto& [key, _] : block.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in config block '" + name + "'");
  }
}

template <class T>
void read(const nlohmann::json& block, const std::string& block_name, const char* key, T& out) {
  if (!block.contains(key)) return;
  try {
    out = block.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config key '") + block_name + "." + key + "' has the wrong type");
  }
}

inline void parse_model(const nlohmann::json& m, ModelConfig& cfg) {
  read(m, "model", "kind", cfg.kind);
  if (cfg.kind == "lorentz") {
    check_keys(m, "model", {"kind", "n_nodes"});
    read(m, "model", "n_nodes", cfg.lorentz.n_nodes);
    if (cfg.lorentz.n_nodes < 4 || cfg.lorentz.n_nodes % 2 != 0) throw ConfigError("lorentz n_nodes must be even and >= 4");
  } else if (cfg.kind == "rayleigh") {
    check_keys(m, "model", {"kind", "dim", "beta", "n_radial", "n_angular", "n_polar", "n_azimuth", "v_max_factor",
                            "near_cutoff"});
    auto& r = cfg.rayleigh;
    read(m, "model", "dim", r.dim);
    read(m, "model", "beta", r.beta);
    read(m, "model", "n_radial", r.n_radial);
    read(m, "model", "n_angular", r.n_angular);
    read(m, "model", "n_polar", r.n_polar);
    read(m, "model", "n_azimuth", r.n_azimuth);
    read(m, "model", "v_max_factor", r.v_max_factor);
    read(m, "model", "near_cutoff", r.near_cutoff);
    r.validate();
  } else if (cfg.kind == "phonon") {
    check_keys(m, "model", {"kind", "dim", "nu", "n_per_axis", "product_form_surrogate"});
    auto& p = cfg.phonon;
    read(m, "model", "dim", p.dim);
    read(m, "model", "nu", p.nu);
    read(m, "model", "n_per_axis", p.n_per_axis);
    read(m, "model", "product_form_surrogate", p.product_form_surrogate);
    p.validate();
  } else {
    throw ConfigError("unknown model kind '" + cfg.kind + "' (expected lorentz, rayleigh or phonon)");
  }
}

inline void parse_solver(const nlohmann::json& s, SolverConfig& cfg) {
  check_keys(s, "solver", {"grid", "dt", "T", "epsilon", "eps_list", "transport", "poisson_tol", "max_iter",
                           "save_every", "collision_number", "refinement_check", "initial"});
  if (s.contains("grid")) {
    const auto& g = s.at("grid");
    check_keys(g, "solver.grid", {"dim", "n"});
    read(g, "solver.grid", "dim", cfg.grid.dim);
    read(g, "solver.grid", "n", cfg.grid.n);
  }
  cfg.grid.validate();
  read(s, "solver", "dt", cfg.dt);
  read(s, "solver", "T", cfg.T);
  read(s, "solver", "epsilon", cfg.epsilon);
  read(s, "solver", "eps_list", cfg.eps_list);
  if (s.contains("transport")) {
    std::string transport;
    read(s, "solver", "transport", transport);
    cfg.transport = transport_from_string(transport);
  }
  read(s, "solver", "poisson_tol", cfg.poisson_tol);
  read(s, "solver", "max_iter", cfg.max_iter);
  read(s, "solver", "save_every", cfg.save_every);
  read(s, "solver", "collision_number", cfg.collision_number);
  read(s, "solver", "refinement_check", cfg.refinement_check);
  if (s.contains("initial")) {
    const auto& i = s.at("initial");
    check_keys(i, "solver.initial", {"amplitude", "mode", "velocity_amplitude"});
    read(i, "solver.initial", "amplitude", cfg.initial.amplitude);
    read(i, "solver.initial", "mode", cfg.initial.mode);
    read(i, "solver.initial", "velocity_amplitude", cfg.initial.velocity_amplitude);
  }
  if (!(cfg.dt > 0.0) || !(cfg.T > 0.0) || !(cfg.epsilon > 0.0)) {
    throw ConfigError("solver dt, T and epsilon must be positive");
  }
  for (double e : cfg.eps_list)
    if (!(e > 0.0)) throw ConfigError("solver eps_list entries must be positive");
  if (!(cfg.poisson_tol > 0.0) || cfg.max_iter < 1) throw ConfigError("solver poisson_tol and max_iter must be positive");
  if (cfg.save_every < 1) throw ConfigError("solver save_every must be >= 1");
  if (!(cfg.collision_number > 0.0)) throw ConfigError("solver collision_number must be positive");
  if (std::abs(cfg.initial.amplitude) >= 1.0 || std::abs(cfg.initial.velocity_amplitude) >= 1.0) {
    throw ConfigError("initial amplitudes must lie in (-1, 1) so the datum stays positive");
  }
}

inline void parse_functional(const nlohmann::json& f, FunctionalConfig& cfg) {
  check_keys(f, "functional", {"log_delta", "log_upper", "certification_tolerance", "current_scale"});
  read(f, "functional", "log_delta", cfg.log.delta);
  read(f, "functional", "log_upper", cfg.log.upper);
  if (f.contains("certification_tolerance") && !f.at("certification_tolerance").is_null()) {
    double tol = 0.0;
    read(f, "functional", "certification_tolerance", tol);
    if (!(tol > 0.0)) throw ConfigError("functional certification_tolerance must be positive");
    cfg.certification_tolerance = tol;
  }
  read(f, "functional", "current_scale", cfg.current_scale);
  if (!(cfg.log.delta > 0.0) || !(cfg.log.upper > cfg.log.delta)) {
    throw ConfigError("functional log truncation needs 0 < log_delta < log_upper");
  }
  if (!(cfg.current_scale >= 0.0)) throw ConfigError("functional current_scale must be nonnegative");
}

inline void parse_montecarlo(const nlohmann::json& m, McConfig& cfg) {
  check_keys(m, "montecarlo", {"n_paths", "T", "batches"});
  read(m, "montecarlo", "n_paths", cfg.n_paths);
  read(m, "montecarlo", "T", cfg.T);
  read(m, "montecarlo", "batches", cfg.batches);
  cfg.validate();
}

inline void parse_output(const nlohmann::json& o, OutputConfig& cfg) {
  check_keys(o, "output", {"directory", "formats", "record_timings"});
  read(o, "output", "directory", cfg.directory);
  if (o.contains("formats")) {
    std::vector<std::string> formats;
    read(o, "output", "formats", formats);
    cfg.csv = cfg.json = false;
    for (const auto& f : formats) {
      if (f == "csv") {
        cfg.csv = true;
      } else if (f == "json") {
        cfg.json = true;
      } else {
        throw ConfigError("unknown output format '" + f + "' (expected csv or json)");
      }
    }
  }
  read(o, "output", "record_timings", cfg.record_timings);
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  detail::check_keys(j, "<root>", {"model", "solver", "functional", "montecarlo", "output", "seed"});
  RunConfig cfg;
  cfg.source = j;
  if (j.contains("model")) detail::parse_model(j.at("model"), cfg.model);
  if (j.contains("solver")) detail::parse_solver(j.at("solver"), cfg.solver);
  if (j.contains("functional")) detail::parse_functional(j.at("functional"), cfg.functional);
  if (j.contains("montecarlo")) detail::parse_montecarlo(j.at("montecarlo"), cfg.montecarlo);
  if (j.contains("output")) detail::parse_output(j.at("output"), cfg.output);
  detail::read(j, "<root>", "seed", cfg.seed);
  cfg.montecarlo.seed = cfg.seed;
  return cfg;
}

inline VelocityModel build_model(const ModelConfig& cfg) {
  if (cfg.kind == "lorentz") return build_lorentz(cfg.lorentz);
  if (cfg.kind == "rayleigh") return build_rayleigh(cfg.rayleigh);
  if (cfg.kind == "phonon") return build_phonon(cfg.phonon);
  throw ConfigError("unknown model kind '" + cfg.kind + "'");
}

/// rho0 = 1 + amplitude cos(2 pi mode x_1) on the grid (unnormalized).
inline Eigen::VectorXd initial_density(const SolverConfig& cfg) {
  const auto& g = cfg.grid;
  Eigen::VectorXd rho(static_cast<Eigen::Index>(g.cells()));
  for (std::size_t c = 0; c < g.cells(); ++c) {
    rho[static_cast<Eigen::Index>(c)] = 1.0 + cfg.initial.amplitude * std::cos(2.0 * kPi * cfg.initial.mode * g.position(c)[0]);
  }
  return rho;
}

/// Full initial datum for a kinetic run.
inline Slice initial_datum(const SolverConfig& cfg, const VelocityModel& model) {
  const Eigen::VectorXd rho = initial_density(cfg);
  Eigen::VectorXd profile = Eigen::VectorXd::Ones(model.size());
  const double bmax = model.drift.col(0).cwiseAbs().maxCoeff();
  if (cfg.initial.velocity_amplitude != 0.0 && bmax > 0.0) {
    profile += (cfg.initial.velocity_amplitude / bmax) * model.drift.col(0);
  }
  return rho * profile.transpose();
}

}  // namespace lbgf
