#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "senselab/operator.hpp"

namespace senselab {

namespace detail {

// Instance files store matrices row-major.
inline std::vector<double> to_row_major(const Matrix& m) {
  std::vector<double> out;
  out.reserve(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

inline Matrix from_row_major(const std::vector<double>& v, int rows, int cols,
                             const std::string& field) {
  if (static_cast<Eigen::Index>(v.size()) != static_cast<Eigen::Index>(rows) * cols)
    throw ValidationError("field '" + field + "' has wrong length");
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i) * cols + j];
  return m;
}

inline const nlohmann::json& require_field(const nlohmann::json& j, const std::string& name) {
  auto it = j.find(name);
  if (it == j.end()) throw ValidationError("missing field '" + name + "'");
  return *it;
}

}  // namespace detail

inline nlohmann::json instance_to_json(const ProblemInstance& inst) {
  nlohmann::json j;
  j["n"] = inst.op.n();
  j["m"] = inst.op.m();
  j["r"] = inst.r;
  j["r_star"] = inst.truth.r_star;
  j["seed"] = inst.seed;
  j["noise_model"] = {{"kind", NoiseModel::kind_name(inst.noise_model.kind)},
                      {"sigma", inst.noise_model.sigma}};
  nlohmann::json sensing = nlohmann::json::array();
  for (const auto& a : inst.op.sensing()) sensing.push_back(detail::to_row_major(a));
  j["sensing"] = std::move(sensing);
  j["m_star"] = detail::to_row_major(inst.truth.m_star);
  j["noise"] = std::vector<double>(inst.noise.data(), inst.noise.data() + inst.noise.size());
  j["measurements"] =
      std::vector<double>(inst.measurements.data(), inst.measurements.data() + inst.measurements.size());
  return j;
}

inline ProblemInstance instance_from_json(const nlohmann::json& j) {
  using detail::require_field;
  int n = require_field(j, "n").get<int>();
  int m = require_field(j, "m").get<int>();
  int r = require_field(j, "r").get<int>();
  int r_star = require_field(j, "r_star").get<int>();
  if (n < 1 || m < 1) throw ValidationError("field 'n'/'m' must be positive");
  if (r_star < 1 || r < r_star) throw ValidationError("field 'r' must satisfy r >= r_star >= 1");

  const auto& nm = require_field(j, "noise_model");
  NoiseModel noise_model;
  noise_model.kind = NoiseModel::parse_kind(require_field(nm, "kind").get<std::string>());
  noise_model.sigma = require_field(nm, "sigma").get<double>();

  const auto& sensing_json = require_field(j, "sensing");
  if (static_cast<int>(sensing_json.size()) != m)
    throw ValidationError("field 'sensing' must have m entries");
  std::vector<Matrix> sensing;
  sensing.reserve(m);
  for (int i = 0; i < m; ++i)
    sensing.push_back(detail::from_row_major(sensing_json[i].get<std::vector<double>>(), n, n, "sensing"));

  ProblemInstance inst;
  inst.noise_model = noise_model;
  inst.op = SensingOperator(n, std::move(sensing));
  inst.truth.m_star =
      detail::from_row_major(require_field(j, "m_star").get<std::vector<double>>(), n, n, "m_star");
  inst.truth.r_star = r_star;
  {
    Eigen::SelfAdjointEigenSolver<Matrix> es(inst.truth.m_star);
    inst.truth.spectrum = es.eigenvalues().reverse().head(r_star);
  }
  inst.truth.validate();
  inst.r = r;

  auto noise = require_field(j, "noise").get<std::vector<double>>();
  if (static_cast<int>(noise.size()) != m) throw ValidationError("field 'noise' has wrong length");
  inst.noise = Eigen::Map<const Vector>(noise.data(), m);

  auto meas = require_field(j, "measurements").get<std::vector<double>>();
  if (static_cast<int>(meas.size()) != m) throw ValidationError("field 'measurements' has wrong length");
  inst.measurements = Eigen::Map<const Vector>(meas.data(), m);

  inst.seed = require_field(j, "seed").get<std::uint64_t>();
  return inst;
}

inline void save_instance(const ProblemInstance& inst, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << instance_to_json(inst).dump(2) << "\n";
}

inline ProblemInstance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed instance file: ") + e.what());
  }
  try {
    return instance_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid instance file: ") + e.what());
  }
}

}  // namespace senselab
