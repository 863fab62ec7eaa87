/*
 * Serialization: self-describing JSON for models and trajectories, versioned
 * CSV tables. Doubles are written with 17 significant digits so that files
 * round-trip exactly and identical runs give identical bytes.
 */
#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lbgf/core.hpp"
#include "lbgf/diffusive.hpp"
#include "lbgf/kinetic.hpp"
#include "lbgf/montecarlo.hpp"
#include "lbgf/velocity.hpp"

namespace lbgf::io {

using json = nlohmann::json;

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vector_from_json(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw UsageError("ragged matrix in JSON");
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
    }
  }
  return m;
}

/// Model with S stored dense row-major.
inline json model_to_json(const VelocityModel& m) {
  json j;
  j["format"] = "lbgf-model";
  j["version"] = 1;
  j["kind"] = m.kind;
  j["n_nodes"] = m.size();
  j["drift_dim"] = m.drift_dim();
  j["nodes"] = to_json(m.nodes);
  j["weights"] = to_json(m.weights);
  j["drift"] = to_json(m.drift);
  json s = json::array();
  for (Eigen::Index i = 0; i < m.size(); ++i)
    for (Eigen::Index k = 0; k < m.size(); ++k) s.push_back(m.sigma(i, k));
  j["sigma"] = std::move(s);
  j["rate"] = to_json(m.rate);
  j["centering_tol"] = m.centering_tol;
  j["diagnostics"] = m.diagnostics;
  return j;
}

inline VelocityModel model_from_json(const json& j) {
  try {
    if (j.at("format") != "lbgf-model") throw UsageError("not a model file");
    const auto n = j.at("n_nodes").get<Eigen::Index>();
    const auto& s = j.at("sigma");
    if (static_cast<Eigen::Index>(s.size()) != n * n) throw UsageError("sigma has the wrong size");
    Eigen::MatrixXd S(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < n; ++k) S(i, k) = s[static_cast<std::size_t>(i * n + k)].get<double>();
    auto m = VelocityModel::assemble(j.at("kind").get<std::string>(), matrix_from_json(j.at("nodes")),
                                     vector_from_json(j.at("weights")), matrix_from_json(j.at("drift")), std::move(S),
                                     j.at("centering_tol").get<double>());
    m.rate = vector_from_json(j.at("rate"));
    m.diagnostics = j.at("diagnostics").get<std::map<std::string, double>>();
    return m;
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed model JSON: ") + e.what());
  }
}

inline json trajectory_to_json(const KineticState& state, const VelocityModel& model) {
  json j;
  j["format"] = "lbgf-trajectory";
  j["version"] = 1;
  j["grid"] = {{"dim", state.grid.dim}, {"n", state.grid.n}};
  j["epsilon"] = state.epsilon;
  j["dt"] = state.dt;
  j["transport"] = to_string(state.transport);
  j["times"] = state.times;
  json slices = json::array();
  for (const auto& s : state.slices) {
    json flat = json::array();
    for (Eigen::Index c = 0; c < s.rows(); ++c)
      for (Eigen::Index i = 0; i < s.cols(); ++i) flat.push_back(s(c, i));
    slices.push_back(std::move(flat));
  }
  j["slices"] = std::move(slices);
  j["model"] = model_to_json(model);
  return j;
}

struct LoadedTrajectory {
  VelocityModel model;
  KineticState state;
};

inline LoadedTrajectory trajectory_from_json(const json& j) {
  try {
    if (j.at("format") != "lbgf-trajectory") throw UsageError("not a trajectory file");
    LoadedTrajectory out{model_from_json(j.at("model")), {}};
    auto& st = out.state;
    st.grid.dim = j.at("grid").at("dim").get<int>();
    st.grid.n = j.at("grid").at("n").get<int>();
    st.grid.validate();
    st.epsilon = j.at("epsilon").get<double>();
    st.dt = j.at("dt").get<double>();
    st.transport = transport_from_string(j.at("transport").get<std::string>());
    st.times = j.at("times").get<std::vector<double>>();
    const auto cells = static_cast<Eigen::Index>(st.grid.cells());
    const auto n = out.model.size();
    for (const auto& flat : j.at("slices")) {
      if (static_cast<Eigen::Index>(flat.size()) != cells * n) throw UsageError("slice has the wrong size");
      Slice s(cells, n);
      for (Eigen::Index c = 0; c < cells; ++c)
        for (Eigen::Index i = 0; i < n; ++i) s(c, i) = flat[static_cast<std::size_t>(c * n + i)].get<double>();
      st.slices.push_back(std::move(s));
    }
    if (st.slices.size() != st.times.size()) throw UsageError("trajectory times and slices differ in count");
    return out;
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed trajectory JSON: ") + e.what());
  }
}

/// Small CSV table with a versioned comment header.
class CsvTable {
 public:
  CsvTable(std::string schema, std::vector<std::string> columns)
      : schema_(std::move(schema)), columns_(std::move(columns)) {}

  void add(const std::vector<double>& row) {
    if (row.size() != columns_.size()) throw UsageError("CSV row has the wrong number of columns");
    rows_.push_back(row);
  }

  std::string str() const {
    std::ostringstream s;
    s << "# lbgf " << schema_ << " v1\n";
    for (std::size_t k = 0; k < columns_.size(); ++k) s << (k ? "," : "") << columns_[k];
    s << '\n';
    for (const auto& r : rows_) {
      for (std::size_t k = 0; k < r.size(); ++k) s << (k ? "," : "") << format_double(r[k]);
      s << '\n';
    }
    return s.str();
  }

 private:
  std::string schema_;
  std::vector<std::string> columns_;
  std::vector<std::vector<double>> rows_;
};

inline CsvTable certificate_table(const std::vector<CertificateRow>& rows) {
  CsvTable t("certificate",
             {"t", "entropy", "dirichlet", "dirichlet_integral", "kinematic", "phi_residual", "edi_residual",
              "balance_residual"});
  for (const auto& r : rows) {
    t.add({r.t, r.entropy, r.dirichlet, r.dirichlet_integral, r.kinematic, r.phi_residual, r.edi_residual,
           r.balance_residual});
  }
  return t;
}

inline json certificate_to_json(const EdiCertificate& c, double tolerance) {
  json j;
  j["epsilon"] = c.epsilon;
  j["current_scale"] = c.current_scale;
  j["h_initial"] = c.h_initial;
  j["h_final"] = c.h_final;
  j["dirichlet_integral"] = c.dirichlet_integral;
  j["kinematic_value"] = c.kinematic_value;
  j["kinematic_finite"] = c.kinematic_finite;
  j["phi_residual"] = c.phi_residual;
  j["phi_finite"] = c.phi_finite;
  j["balance_residual"] = c.balance_residual;
  j["edi_residual"] = c.edi_residual;
  j["max_step_residual"] = c.max_step_residual;
  j["tolerance"] = tolerance;
  j["passed"] = c.passed(tolerance);
  return j;
}

inline CsvTable sweep_table(const DiffusiveSweepReport& rep) {
  CsvTable t("diffusive-sweep", {"epsilon", "l1", "l2", "weak_j_err", "runtime_s"});
  for (const auto& r : rep.rows) t.add({r.epsilon, r.l1_error, r.l2_error, r.weak_j_error, r.runtime_s});
  return t;
}

inline json sweep_to_json(const DiffusiveSweepReport& rep) {
  json j;
  j["D"] = to_json(rep.D);
  j["T"] = rep.T;
  j["initial_entropy"] = rep.initial_entropy;
  j["l1_strictly_decreasing"] = rep.l1_strictly_decreasing;
  json rows = json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"epsilon", r.epsilon},
                    {"dt", r.dt},
                    {"steps", r.steps},
                    {"l1", r.l1_error},
                    {"l2", r.l2_error},
                    {"weak_j_err", r.weak_j_error},
                    {"current_time_constant", r.current_time_constant},
                    {"runtime_s", r.runtime_s}});
  }
  j["rows"] = std::move(rows);
  if (rep.refinement) {
    const auto& rc = *rep.refinement;
    j["refinement"] = {{"epsilon", rc.epsilon}, {"dt", rc.dt}, {"l1_change", rc.l1_change},
                       {"l1_error", rc.l1_error}, {"converged", rc.converged}};
  }
  return j;
}

inline CsvTable mc_batch_table(const McEstimate& est) {
  std::vector<std::string> cols{"batch_id"};
  const auto d = est.D_hat.rows();
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) cols.push_back("D_" + std::to_string(a) + std::to_string(b));
  CsvTable t("mc-batches", cols);
  for (std::size_t k = 0; k < est.batch_D.size(); ++k) {
    std::vector<double> row{static_cast<double>(k)};
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) row.push_back(est.batch_D[k](a, b));
    t.add(row);
  }
  return t;
}

inline json mc_to_json(const McEstimate& est) {
  return {{"D_hat", to_json(est.D_hat)},   {"stderr", to_json(est.standard_error)}, {"n_paths", est.n_paths},
          {"T", est.T},                    {"batches", est.batch_D.size()},        {"mean_jumps", est.mean_jumps}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace lbgf::io
