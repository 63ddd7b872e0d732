#pragma once

// Run configuration: JSON text with the problem instance (or production
// parameters), radii, relaxation settings, seeds and tolerances.
//
// Polynomials are written in the text form of polybasis with variables x1..,
// xi1.. and u1..; matrices are row-major nested arrays.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "wdro/polybasis.hpp"
#include "wdro/production.hpp"
#include "wdro/relax.hpp"

namespace wdro {

// Malformed or inconsistent configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

enum class ProblemKind { Single, TwoStage, Production };

inline const char* to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::Single: return "single";
    case ProblemKind::TwoStage: return "two_stage";
    case ProblemKind::Production: return "production";
  }
  return "unknown";
}

struct ProductionSetup {
  production::ProductionConfig params;
  std::size_t N = 10;  // training samples
};

struct Tolerances {
  double sdp = 1e-8;
  double bundle = 1e-6;
  int bundle_max_iters = 300;
};

struct RunConfig {
  ProblemKind kind = ProblemKind::Single;
  std::optional<SingleStageInstance> single;
  std::optional<TwoStageInstance> two_stage;
  std::optional<ProductionSetup> production;
  std::vector<double> radii;
  int order_k = 1;
  int p = 2;
  bool strengthen = false;
  std::optional<double> epsilon;  // unset: max(N r^p, 1e-3)
  std::uint64_t train_seed = 1;
  std::uint64_t eval_seed = 2;
  std::size_t eval_count = 10000;
  Tolerances tol;

  bool has_distribution() const { return kind == ProblemKind::Production; }
};

namespace detail {

using json = nlohmann::json;

inline std::string where(const std::string& path) { return "field '" + path + "'"; }

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) throw ConfigError("missing " + where(path + key));
  return obj.at(key);
}

inline double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(where(path) + " must be a number");
  return v.get<double>();
}

inline std::size_t as_count(const json& v, const std::string& path, std::size_t minimum = 0) {
  if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(minimum)) {
    throw ConfigError(where(path) + " must be an integer >= " + std::to_string(minimum));
  }
  return v.get<std::size_t>();
}

inline Eigen::VectorXd as_vector(const json& v, const std::string& path, std::optional<std::size_t> len = std::nullopt) {
  if (!v.is_array()) throw ConfigError(where(path) + " must be an array of numbers");
  if (len && v.size() != *len) {
    throw ConfigError(where(path) + " must have " + std::to_string(*len) + " entries, got " + std::to_string(v.size()));
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = as_number(v[i], path + "[" + std::to_string(i) + "]");
  return out;
}

inline Eigen::MatrixXd as_matrix(const json& v, const std::string& path, std::size_t rows, std::size_t cols) {
  if (!v.is_array() || v.size() != rows) throw ConfigError(where(path) + " must have " + std::to_string(rows) + " rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    m.row(static_cast<Eigen::Index>(i)) = as_vector(v[i], path + "[" + std::to_string(i) + "]", cols).transpose();
  }
  return m;
}

inline Polynomial as_poly(const json& v, const std::string& path, const VariableNames& names) {
  if (v.is_number()) return Polynomial::constant(names.nvars(), v.get<double>());
  if (!v.is_string()) throw ConfigError(where(path) + " must be a polynomial string");
  try {
    return parse_polynomial(v.get<std::string>(), names);
  } catch (const ParseError& e) {
    throw ConfigError(where(path) + ": " + e.what());
  }
}

inline std::vector<Polynomial> as_polys(const json& v, const std::string& path, const VariableNames& names,
                                        std::optional<std::size_t> len = std::nullopt) {
  if (!v.is_array()) throw ConfigError(where(path) + " must be an array of polynomials");
  if (len && v.size() != *len) throw ConfigError(where(path) + " must have " + std::to_string(*len) + " entries");
  std::vector<Polynomial> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_poly(v[i], path + "[" + std::to_string(i) + "]", names));
  return out;
}

struct CommonFields {
  std::size_t n1 = 0, n0 = 0;
  Polynomial f;
  std::vector<Polynomial> h;
  std::vector<Eigen::VectorXd> samples;
  Eigen::MatrixXd H;
  Eigen::VectorXd lo, hi;
  bool support_bounded = true;
};

inline CommonFields parse_common(const json& j, const std::string& path) {
  CommonFields c;
  c.n1 = as_count(require(j, "n1", path), path + "n1", 1);
  c.n0 = as_count(require(j, "n0", path), path + "n0", 1);
  const VariableNames xn{{"x", c.n1}};
  const VariableNames xin{{"xi", c.n0}};
  c.f = j.contains("f") ? as_poly(j.at("f"), path + "f", xn) : Polynomial(c.n1);
  c.h = j.contains("h") ? as_polys(j.at("h"), path + "h", xin) : std::vector<Polynomial>{};
  const json& s = require(j, "samples", path);
  if (!s.is_array() || s.empty()) throw ConfigError(where(path + "samples") + " must be a nonempty array");
  for (std::size_t i = 0; i < s.size(); ++i) c.samples.push_back(as_vector(s[i], path + "samples[" + std::to_string(i) + "]", c.n0));
  c.H = j.contains("H") ? as_matrix(j.at("H"), path + "H", c.n0, c.n0)
                        : Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(c.n0), static_cast<Eigen::Index>(c.n0));
  c.lo = as_vector(require(j, "lo", path), path + "lo", c.n1);
  c.hi = as_vector(require(j, "hi", path), path + "hi", c.n1);
  if (j.contains("support_bounded")) {
    if (!j.at("support_bounded").is_boolean()) throw ConfigError(where(path + "support_bounded") + " must be a boolean");
    c.support_bounded = j.at("support_bounded").get<bool>();
  }
  return c;
}

template <typename Inst>
void validate_instance(const Inst& inst) {
  try {
    inst.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("instance: ") + e.what());
  }
}

inline SingleStageInstance parse_single(const json& j, int p) {
  const std::string path = "instance.";
  CommonFields c = parse_common(j, path);
  SingleStageInstance inst;
  inst.n1 = c.n1;
  inst.n0 = c.n0;
  inst.f = std::move(c.f);
  inst.F = as_poly(require(j, "F", path), path + "F", VariableNames{{"x", c.n1}, {"xi", c.n0}});
  inst.h = std::move(c.h);
  inst.samples = std::move(c.samples);
  inst.H = std::move(c.H);
  inst.p = p;
  inst.lo = std::move(c.lo);
  inst.hi = std::move(c.hi);
  inst.support_bounded = c.support_bounded;
  validate_instance(inst);
  return inst;
}

inline TwoStageInstance parse_two_stage(const json& j, int p) {
  const std::string path = "instance.";
  CommonFields c = parse_common(j, path);
  TwoStageInstance inst;
  inst.n1 = c.n1;
  inst.n0 = c.n0;
  inst.n2 = as_count(require(j, "n2", path), path + "n2", 1);
  inst.m2 = as_count(require(j, "m2", path), path + "m2", 1);
  const VariableNames xin{{"xi", c.n0}};
  inst.f = std::move(c.f);
  inst.A = as_matrix(require(j, "A", path), path + "A", inst.n2, inst.m2);
  const json& B = require(j, "B", path);
  if (!B.is_array() || B.size() != inst.n2) throw ConfigError(where(path + "B") + " must have n2 rows");
  for (std::size_t l = 0; l < inst.n2; ++l) inst.B.push_back(as_polys(B[l], path + "B[" + std::to_string(l) + "]", xin, inst.n1));
  inst.b = as_polys(require(j, "b", path), path + "b", xin, inst.n2);
  inst.c = as_polys(require(j, "c", path), path + "c", xin, inst.m2);
  inst.d = j.contains("d") ? as_poly(j.at("d"), path + "d", xin) : Polynomial(c.n0);
  inst.h = std::move(c.h);
  if (j.contains("extra")) inst.extra = as_polys(j.at("extra"), path + "extra", VariableNames{{"xi", c.n0}, {"u", inst.n2}});
  inst.samples = std::move(c.samples);
  inst.H = std::move(c.H);
  inst.p = p;
  inst.lo = std::move(c.lo);
  inst.hi = std::move(c.hi);
  inst.support_bounded = c.support_bounded;
  validate_instance(inst);
  return inst;
}

inline ProductionSetup parse_production(const json& j) {
  const std::string path = "production.";
  const std::size_t n1 = as_count(require(j, "n1", path), path + "n1", 2);
  const std::size_t np = as_count(require(j, "np", path), path + "np", 2);
  const double D = j.contains("D") ? as_number(j.at("D"), path + "D") : 5.0;
  const double sigma = j.contains("sigma") ? as_number(j.at("sigma"), path + "sigma") : 0.1;
  ProductionSetup s;
  try {
    s.params = production::default_config(n1, np, D, sigma);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("production: ") + e.what());
  }
  if (j.contains("Bbar")) s.params.Bbar = as_number(j.at("Bbar"), path + "Bbar");
  if (j.contains("cp")) s.params.cp = as_vector(j.at("cp"), path + "cp", np);
  if (j.contains("demand_cap_factor") && !j.at("demand_cap_factor").is_null()) {
    s.params.demand_cap_factor = as_number(j.at("demand_cap_factor"), path + "demand_cap_factor");
  }
  s.N = j.contains("N") ? as_count(j.at("N"), path + "N", 1) : 10;
  try {
    s.params.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("production: ") + e.what());
  }
  return s;
}

inline std::string locate(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("JSON syntax error at " + detail::locate(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("top level must be an object");
  RunConfig cfg;
  const json& kind = detail::require(j, "kind", "");
  if (!kind.is_string()) throw ConfigError("field 'kind' must be a string");
  const std::string k = kind.get<std::string>();
  if (k == "single") {
    cfg.kind = ProblemKind::Single;
  } else if (k == "two_stage") {
    cfg.kind = ProblemKind::TwoStage;
  } else if (k == "production") {
    cfg.kind = ProblemKind::Production;
  } else {
    throw ConfigError("field 'kind' must be single, two_stage or production, got '" + k + "'");
  }

  if (j.contains("wasserstein_p")) {
    const json& p = j.at("wasserstein_p");
    if (!p.is_number_integer() || p.get<int>() < 2 || p.get<int>() % 2 != 0) {
      throw ConfigError("field 'wasserstein_p' must be an even integer >= 2");
    }
    cfg.p = p.get<int>();
  }
  if (j.contains("order_k")) cfg.order_k = static_cast<int>(detail::as_count(j.at("order_k"), "order_k", 1));

  const json& radii = detail::require(j, "radii", "");
  if (!radii.is_array() || radii.empty()) throw ConfigError("field 'radii' must be a nonempty array");
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double r = detail::as_number(radii[i], "radii[" + std::to_string(i) + "]");
    if (!(r >= 0.0)) throw ConfigError("field 'radii[" + std::to_string(i) + "]' must be nonnegative");
    if (!cfg.radii.empty() && r <= cfg.radii.back()) throw ConfigError("field 'radii' must be strictly increasing");
    cfg.radii.push_back(r);
  }

  if (j.contains("strengthen")) {
    if (!j.at("strengthen").is_boolean()) throw ConfigError("field 'strengthen' must be a boolean");
    cfg.strengthen = j.at("strengthen").get<bool>();
  }
  if (j.contains("epsilon") && !j.at("epsilon").is_null()) {
    cfg.epsilon = detail::as_number(j.at("epsilon"), "epsilon");
    if (!(*cfg.epsilon > 0.0)) throw ConfigError("field 'epsilon' must be positive");
  }
  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    if (!s.is_object()) throw ConfigError("field 'seeds' must be an object");
    if (s.contains("train")) cfg.train_seed = detail::as_count(s.at("train"), "seeds.train");
    if (s.contains("eval")) cfg.eval_seed = detail::as_count(s.at("eval"), "seeds.eval");
  }
  if (j.contains("eval_count")) cfg.eval_count = detail::as_count(j.at("eval_count"), "eval_count", 1);
  if (j.contains("tolerances")) {
    const json& t = j.at("tolerances");
    if (!t.is_object()) throw ConfigError("field 'tolerances' must be an object");
    if (t.contains("sdp")) cfg.tol.sdp = detail::as_number(t.at("sdp"), "tolerances.sdp");
    if (t.contains("bundle")) cfg.tol.bundle = detail::as_number(t.at("bundle"), "tolerances.bundle");
    if (t.contains("bundle_max_iters")) {
      cfg.tol.bundle_max_iters = static_cast<int>(detail::as_count(t.at("bundle_max_iters"), "tolerances.bundle_max_iters", 1));
    }
    if (!(cfg.tol.sdp >= 1e-10 && cfg.tol.sdp <= 1e-4)) throw ConfigError("field 'tolerances.sdp' must lie in [1e-10, 1e-4]");
    if (!(cfg.tol.bundle > 0.0)) throw ConfigError("field 'tolerances.bundle' must be positive");
  }

  switch (cfg.kind) {
    case ProblemKind::Single:
      cfg.single = detail::parse_single(detail::require(j, "instance", ""), cfg.p);
      break;
    case ProblemKind::TwoStage:
      cfg.two_stage = detail::parse_two_stage(detail::require(j, "instance", ""), cfg.p);
      break;
    case ProblemKind::Production:
      if (cfg.p != 2) throw ConfigError("production instances use wasserstein_p = 2");
      cfg.production = detail::parse_production(detail::require(j, "production", ""));
      break;
  }
  if (cfg.strengthen && cfg.kind == ProblemKind::Single) throw ConfigError("field 'strengthen' applies to two-stage problems only");
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace detail {

inline json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json matrix_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
  return a;
}

inline json polys_json(const std::vector<Polynomial>& ps, const VariableNames& names) {
  json a = json::array();
  for (const auto& q : ps) a.push_back(to_string(q, names));
  return a;
}

template <typename Inst>
json common_json(const Inst& inst) {
  const VariableNames xn{{"x", inst.n1}};
  const VariableNames xin{{"xi", inst.n0}};
  json j;
  j["n1"] = inst.n1;
  j["n0"] = inst.n0;
  j["f"] = to_string(inst.f, xn);
  j["h"] = polys_json(inst.h, xin);
  j["samples"] = json::array();
  for (const auto& s : inst.samples) j["samples"].push_back(vector_json(s));
  j["H"] = matrix_json(inst.H);
  j["lo"] = vector_json(inst.lo);
  j["hi"] = vector_json(inst.hi);
  j["support_bounded"] = inst.support_bounded;
  return j;
}

}  // namespace detail

// Inverse of parse_config: parse_config(serialize_config(c)) reproduces c.
inline std::string serialize_config(const RunConfig& cfg) {
  using detail::json;
  json j;
  j["kind"] = to_string(cfg.kind);
  j["order_k"] = cfg.order_k;
  j["wasserstein_p"] = cfg.p;
  j["radii"] = cfg.radii;
  j["strengthen"] = cfg.strengthen;
  j["epsilon"] = cfg.epsilon ? json(*cfg.epsilon) : json(nullptr);
  j["seeds"] = {{"train", cfg.train_seed}, {"eval", cfg.eval_seed}};
  j["eval_count"] = cfg.eval_count;
  j["tolerances"] = {{"sdp", cfg.tol.sdp}, {"bundle", cfg.tol.bundle}, {"bundle_max_iters", cfg.tol.bundle_max_iters}};
  if (cfg.single) {
    const auto& s = *cfg.single;
    json inst = detail::common_json(s);
    inst["F"] = to_string(s.F, VariableNames{{"x", s.n1}, {"xi", s.n0}});
    j["instance"] = inst;
  } else if (cfg.two_stage) {
    const auto& t = *cfg.two_stage;
    const VariableNames xin{{"xi", t.n0}};
    json inst = detail::common_json(t);
    inst["n2"] = t.n2;
    inst["m2"] = t.m2;
    inst["A"] = detail::matrix_json(t.A);
    inst["B"] = json::array();
    for (const auto& row : t.B) inst["B"].push_back(detail::polys_json(row, xin));
    inst["b"] = detail::polys_json(t.b, xin);
    inst["c"] = detail::polys_json(t.c, xin);
    inst["d"] = to_string(t.d, xin);
    inst["extra"] = detail::polys_json(t.extra, VariableNames{{"xi", t.n0}, {"u", t.n2}});
    j["instance"] = inst;
  } else if (cfg.production) {
    const auto& ps = *cfg.production;
    const auto& c = ps.params;
    j["production"] = {{"n1", c.n1}, {"np", c.np}, {"D", c.D}, {"sigma", c.sigma}, {"Bbar", c.Bbar},
                       {"cp", detail::vector_json(c.cp)}, {"N", ps.N}};
    j["production"]["demand_cap_factor"] = c.demand_cap_factor ? json(*c.demand_cap_factor) : json(nullptr);
  }
  return j.dump(2) + "\n";
}

// The training instance: the configured one, or the production instance on
// N samples of the training stream.
inline std::variant<SingleStageInstance, TwoStageInstance> build_instance(const RunConfig& cfg) {
  if (cfg.single) return *cfg.single;
  if (cfg.two_stage) return *cfg.two_stage;
  const auto& ps = *cfg.production;
  return production::to_instance(ps.params, production::sample_uncertainty(ps.params, cfg.train_seed, ps.N));
}

}  // namespace wdro
