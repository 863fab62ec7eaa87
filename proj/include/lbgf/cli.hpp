/*
 * Command-line orchestration. Each subcommand reads a RunConfig, delegates to
 * the library, writes machine-readable files plus a manifest into the output
 * directory, and reports pass/fail only through the exit code:
 *
 *   0 ok, 1 other failure, 2 configuration, 3 certification, 4 convergence or quality.
 *
 * Failures also write error.json into the output directory.
 */
#pragma once

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lbgf/config.hpp"
#include "lbgf/core.hpp"
#include "lbgf/diffusive.hpp"
#include "lbgf/io.hpp"
#include "lbgf/kinetic.hpp"
#include "lbgf/log.hpp"
#include "lbgf/models.hpp"
#include "lbgf/montecarlo.hpp"
#include "lbgf/parallel.hpp"
#include "lbgf/velocity.hpp"

namespace lbgf::cli {

inline constexpr const char* kVersion = "lbgf 0.1.0";

enum ExitCode : int { ok = 0, other = 1, config = 2, certification = 3, convergence = 4 };

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Context {
  std::string command;
  RunConfig config;
  std::filesystem::path out_dir;
  std::vector<std::string> written;  // file names relative to out_dir

  void text(const std::string& name, const std::string& body) {
    io::write_text(out_dir / name, body);
    written.push_back(name);
  }
  void json(const std::string& name, const nlohmann::json& j) {
    io::write_json(out_dir / name, j);
    written.push_back(name);
  }
  void csv(const std::string& name, const io::CsvTable& t) {
    if (config.output.csv) text(name, t.str());
  }
  void json_if(const std::string& name, const nlohmann::json& j) {
    if (config.output.json) json(name, j);
  }
};

/// The config as it governs this run: the file contents with the effective seed.
inline nlohmann::json effective_config(const RunConfig& cfg) {
  nlohmann::json j = cfg.source;
  j["seed"] = cfg.seed;
  return j;
}

inline void write_manifest(Context& ctx) {
  const auto cfg = effective_config(ctx.config);
  nlohmann::json m;
  m["tool"] = "lbgf";
  m["version"] = kVersion;
  m["command"] = ctx.command;
  m["config_hash"] = "fnv1a64:" + hex64(fnv1a(cfg.dump()));
  m["config"] = cfg;
  m["seed"] = ctx.config.seed;
  m["libraries"] = {
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"boost", std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000) + "." +
                    std::to_string(BOOST_VERSION % 100)},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                            "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  m["outputs"] = ctx.written;
  io::write_json(ctx.out_dir / "manifest.json", m);
}

inline nlohmann::json invariants_json(const InvariantReport& r) {
  return {{"weight_sum_error", r.weight_sum_error}, {"sigma_asymmetry", r.sigma_asymmetry},
          {"sigma_min", r.sigma_min},               {"rate_error", r.rate_error},
          {"centering", r.centering}};
}

inline nlohmann::json gap_json(const SpectralGap& g) {
  return {{"rho", g.rho}, {"gap", g.gap}, {"c0", g.c0}, {"iterations", g.iterations}, {"converged", g.converged}};
}

inline int cmd_model_info(Context& ctx) {
  const auto model = build_model(ctx.config.model);
  const auto inv = model.check_invariants();
  const auto gap = spectral_gap_probe(model);
  nlohmann::json info;
  info["kind"] = model.kind;
  info["n_nodes"] = model.size();
  info["drift_dim"] = model.drift_dim();
  info["lambda_min"] = model.rate.minCoeff();
  info["lambda_max"] = model.rate.maxCoeff();
  info["invariants"] = invariants_json(inv);
  info["spectral_gap"] = gap_json(gap);
  info["diagnostics"] = model.diagnostics;
  std::cout << "model " << model.kind << ": " << model.size() << " nodes, drift dimension " << model.drift_dim()
            << "\n  lambda in [" << model.rate.minCoeff() << ", " << model.rate.maxCoeff() << "]"
            << "\n  pi(b) residual " << inv.centering << "\n  spectral gap probe: rho(K) = " << gap.rho
            << ", gap = " << gap.gap << (gap.converged ? "" : " (not converged)") << '\n';
  if (model.kind == "rayleigh") {
    const auto& r = ctx.config.model.rayleigh;
    const double direct = rayleigh_rate_direct(r.dim, r.beta, 0.0);
    info["lambda_at_zero_direct"] = direct;
    std::cout << "  lambda(0) = " << model.diagnostics.at("lambda_at_zero") << " (direct integral " << direct << ")\n";
  }
  for (const auto& [k, v] : model.diagnostics) std::cout << "  " << k << " = " << v << '\n';
  ctx.json_if("model.json", io::model_to_json(model));
  ctx.json_if("model_info.json", info);
  if (ctx.config.output.json) std::cout << "  model written to " << (ctx.out_dir / "model.json").string() << '\n';
  return ok;
}

inline int cmd_diffusion(Context& ctx) {
  const auto model = build_model(ctx.config.model);
  const auto& s = ctx.config.solver;
  const auto sol = poisson_solve(model, s.poisson_tol, s.max_iter);
  const auto D = diffusion_matrix(model, sol);
  nlohmann::json out;
  out["kind"] = model.kind;
  out["D"] = io::to_json(D.D);
  out["asymmetry"] = D.asymmetry;
  out["poisson"] = {{"residual", sol.residual}, {"iterations", sol.iterations}, {"tol", s.poisson_tol}};
  // Dense cross-check is cheap up to a few thousand nodes.
  if (model.size() <= 4096) {
    const auto dense = diffusion_matrix(model, poisson_solve_dense(model));
    out["D_dense"] = io::to_json(dense.D);
    out["dense_difference"] = (dense.D - D.D).cwiseAbs().maxCoeff();
  }
  out["spectral_gap"] = gap_json(spectral_gap_probe(model));
  if (model.kind == "rayleigh" && ctx.config.model.rayleigh.dim == 2) {
    const auto b = rayleigh_xi_bound(model, ctx.config.model.rayleigh);
    out["rayleigh_bound"] = {{"chi", b.chi},
                             {"z", b.z},
                             {"zeta", b.zeta},
                             {"xi_inf_norm", b.xi_inf_norm},
                             {"bound_satisfied", b.bound_satisfied},
                             {"a_lambda_below_lambda", b.a_lambda_below_lambda},
                             {"eta_nonnegative", b.eta_nonnegative},
                             {"radial_vs_full", b.radial_vs_full}};
  }
  std::cout << "diffusion matrix (" << model.kind << ", " << sol.iterations << " iterations, residual "
            << sol.residual << "):\n"
            << D.D << '\n';
  ctx.json_if("diffusion.json", out);
  return ok;
}

inline double certification_tolerance(const Context& ctx, const VelocityModel& model, const KineticState& state) {
  return ctx.config.functional.certification_tolerance.value_or(default_certification_tolerance(model, state));
}

inline EdiOptions edi_options(const Context& ctx) {
  EdiOptions o;
  o.current_scale = ctx.config.functional.current_scale;
  o.log = ctx.config.functional.log;
  return o;
}

// Writes the certificate files, then fails with exit 3 if it does not hold.
inline int emit_certificate(Context& ctx, const EdiCertificate& cert, double tol) {
  ctx.csv("certificate.csv", io::certificate_table(cert.rows));
  ctx.json_if("certificate.json", io::certificate_to_json(cert, tol));
  std::cout << "certificate: " << cert.breakdown() << "\n  tolerance " << tol << ": "
            << (cert.passed(tol) ? "pass" : "FAIL") << '\n';
  certify(cert, tol);
  return ok;
}

inline int cmd_kinetic_run(Context& ctx) {
  const auto model = build_model(ctx.config.model);
  const auto& s = ctx.config.solver;
  KineticSolver solver(model, s.grid, {s.epsilon, s.dt, s.transport.value_or(TransportScheme::upwind)});
  const auto state = solver.run(initial_datum(s, model), s.T, s.save_every);
  std::cout << "kinetic run (" << model.kind << ", " << to_string(solver.options().transport) << "): "
            << state.times.size() - 1 << " stored steps to T = " << state.times.back() << '\n';
  ctx.json_if("trajectory.json", io::trajectory_to_json(state, model));
  const auto cert = edi_certificate(state, model, edi_options(ctx));
  return emit_certificate(ctx, cert, certification_tolerance(ctx, model, state));
}

inline int cmd_certify(Context& ctx, const std::filesystem::path& trajectory) {
  const auto loaded = io::trajectory_from_json(io::read_json(trajectory));
  const auto cert = edi_certificate(loaded.state, loaded.model, edi_options(ctx));
  return emit_certificate(ctx, cert, certification_tolerance(ctx, loaded.model, loaded.state));
}

inline int cmd_diffusive_sweep(Context& ctx) {
  const auto model = build_model(ctx.config.model);
  const auto& s = ctx.config.solver;
  DiffusiveOptions opt;
  opt.grid = s.grid;
  opt.transport = s.transport.value_or(TransportScheme::spectral);
  opt.collision_number = s.collision_number;
  opt.refinement_check = s.refinement_check;
  opt.record_timings = ctx.config.output.record_timings;
  const auto D = diffusion_matrix(model, poisson_solve(model, s.poisson_tol, s.max_iter)).D;
  const auto rep = sweep(model, initial_density(s), s.eps_list, s.T, opt, D);
  std::cout << "diffusive sweep (" << model.kind << ", T = " << rep.T << "):\n";
  for (const auto& r : rep.rows) {
    std::cout << "  eps = " << r.epsilon << "  dt = " << r.dt << "  L1 = " << r.l1_error << "  L2 = " << r.l2_error
              << "  weak j = " << r.weak_j_error << '\n';
  }
  if (rep.refinement) {
    std::cout << "  refinement at eps = " << rep.refinement->epsilon << ": change " << rep.refinement->l1_change
              << (rep.refinement->converged ? " (converged)" : " (NOT converged)") << '\n';
  }
  ctx.csv("sweep.csv", io::sweep_table(rep));
  auto j = io::sweep_to_json(rep);
  j["tolerances"] = {{"poisson_tol", s.poisson_tol},
                     {"collision_number", s.collision_number},
                     {"refinement_tolerance", opt.refinement_tolerance}};
  ctx.json_if("sweep.json", j);
  if (!rep.l1_strictly_decreasing) throw CertificationError("L1 error is not strictly decreasing in eps");
  if (rep.refinement && !rep.refinement->converged) {
    throw CertificationError("smallest eps is not discretization-converged under dt refinement");
  }
  return ok;
}

inline int cmd_mc_estimate(Context& ctx) {
  const auto model = build_model(ctx.config.model);
  auto mc = ctx.config.montecarlo;
  mc.seed = ctx.config.seed;
  const auto est = estimate_D(model, mc);
  const auto D = diffusion_matrix(model, poisson_solve(model, ctx.config.solver.poisson_tol, ctx.config.solver.max_iter)).D;
  const Eigen::MatrixXd z = (est.D_hat - D).cwiseQuotient(est.standard_error);
  auto j = io::mc_to_json(est);
  j["seed"] = mc.seed;
  j["D_spectral"] = io::to_json(D);
  j["z_scores"] = io::to_json(z);
  std::cout << "monte carlo (" << est.n_paths << " paths, T = " << est.T << ", seed " << mc.seed << "):\n"
            << "D_hat =\n"
            << est.D_hat << "\nstderr =\n"
            << est.standard_error << "\nspectral D =\n"
            << D << '\n';
  ctx.csv("mc_batches.csv", io::mc_batch_table(est));
  ctx.json_if("mc.json", j);
  return ok;
}

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e)) return config;
  if (dynamic_cast<const CertificationError*>(&e)) return certification;
  if (dynamic_cast<const ConvergenceError*>(&e) || dynamic_cast<const NumericalQualityError*>(&e)) return convergence;
  return other;
}

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const CertificationError*>(&e)) return "certification";
  if (dynamic_cast<const ConvergenceError*>(&e)) return "convergence";
  if (dynamic_cast<const NumericalQualityError*>(&e)) return "numerical_quality";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  return "internal";
}

inline int report_failure(const std::string& command, const std::filesystem::path& out_dir, const std::exception& e) {
  const int code = exit_code_for(e);
  nlohmann::json j{{"command", command}, {"error", error_kind(e)}, {"message", e.what()}, {"exit_code", code}};
  if (const auto* c = dynamic_cast<const ConvergenceError*>(&e)) {
    j["residual"] = c->residual();
    j["iterations"] = c->iterations();
  }
  std::cerr << "lbgf " << command << ": " << error_kind(e) << " error: " << e.what() << '\n';
  try {
    io::write_json(out_dir / "error.json", j);
  } catch (const std::exception&) {
    std::cerr << "lbgf: could not write error.json to " << out_dir.string() << '\n';
  }
  return code;
}

/// Output directory precedence: --out, then LBGF_OUT_DIR, then the config file.
inline std::filesystem::path resolve_out_dir(const std::string& flag, const std::string& from_config) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("LBGF_OUT_DIR"); env && *env) return env;
  return from_config;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Linear Boltzmann gradient-flow toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  app.set_version_flag("--version", kVersion);
  std::string config_path, out_flag, trajectory;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  app.add_option("--config", config_path, "run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", out_flag, "output directory (overrides LBGF_OUT_DIR and the config)");
  app.add_option("--seed", seed, "random seed (overrides the config)");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  const std::vector<std::pair<std::string, std::string>> commands{
      {"model-info", "build a velocity model and report its invariants"},
      {"diffusion", "diffusion matrix from the Poisson equation"},
      {"kinetic-run", "run the kinetic solver and certify the trajectory"},
      {"diffusive-sweep", "diffusive-limit sweep against the heat flow"},
      {"mc-estimate", "Monte Carlo estimate of the diffusion matrix"},
      {"certify", "certify a stored trajectory"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    if (name == "certify") sub->add_option("trajectory", trajectory, "trajectory.json from kinetic-run")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  std::filesystem::path out_dir = resolve_out_dir(out_flag, OutputConfig{}.directory);
  try {
    set_thread_count(threads);
    Context ctx;
    ctx.command = command;
    ctx.config = config_path.empty() ? parse_config(nlohmann::json::object()) : parse_config(io::read_json(config_path));
    if (seed) ctx.config.seed = *seed;
    ctx.config.montecarlo.seed = ctx.config.seed;
    out_dir = ctx.out_dir = resolve_out_dir(out_flag, ctx.config.output.directory);
    std::filesystem::create_directories(ctx.out_dir);
    std::filesystem::remove(ctx.out_dir / "error.json");

    int code = ok;
    try {
      if (command == "model-info") code = cmd_model_info(ctx);
      if (command == "diffusion") code = cmd_diffusion(ctx);
      if (command == "kinetic-run") code = cmd_kinetic_run(ctx);
      if (command == "diffusive-sweep") code = cmd_diffusive_sweep(ctx);
      if (command == "mc-estimate") code = cmd_mc_estimate(ctx);
      if (command == "certify") code = cmd_certify(ctx, trajectory);
    } catch (...) {
      write_manifest(ctx);  // files already written stay reproducible
      throw;
    }
    write_manifest(ctx);
    return code;
  } catch (const std::exception& e) {
    return report_failure(command, out_dir, e);
  }
}

}  // namespace lbgf::cli
