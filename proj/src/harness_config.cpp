#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "homog/harness.hpp"
#include "homog/util.hpp"
#include "json.hpp"

namespace homog {

using nlohmann::json;

std::string kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::effective_tensors: return "effective_tensors";
    case ExperimentKind::convergence: return "convergence";
    case ExperimentKind::invariance: return "invariance";
    case ExperimentKind::spde_variance: return "spde_variance";
    case ExperimentKind::aronson: return "aronson";
    case ExperimentKind::malliavin: return "malliavin";
    case ExperimentKind::condition_s: return "condition_s";
  }
  return "?";
}

namespace {

ExperimentKind kind_from_name(const std::string& s) {
  for (ExperimentKind k :
       {ExperimentKind::effective_tensors, ExperimentKind::convergence, ExperimentKind::invariance,
        ExperimentKind::spde_variance, ExperimentKind::aronson, ExperimentKind::malliavin,
        ExperimentKind::condition_s}) {
    if (kind_name(k) == s) return k;
  }
  throw std::invalid_argument("config: unknown experiment kind \"" + s + "\"");
}

std::function<double(double)> spatial_profile(const std::string& name) {
  if (name == "cos") return [](double z) { return std::cos(2.0 * M_PI * z); };
  if (name == "cos2") return [](double z) { return std::cos(4.0 * M_PI * z); };
  throw std::invalid_argument("config: unknown spatial profile \"" + name + "\"");
}

std::function<double(double)> link_function(const std::string& name, double scale) {
  if (name == "tanh") return [scale](double y) { return std::tanh(scale * y); };
  if (name == "sin") return [scale](double y) { return std::sin(scale * y); };
  if (name == "exp_tanh") return [scale](double y) { return std::exp(scale * std::tanh(y)); };
  throw std::invalid_argument("config: unknown link function \"" + name + "\"");
}

void expect_keys(const json& j, const std::string& section, const std::set<std::string>& known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key()))
      throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + section);
  }
}

template <typename T>
void read_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

CoefficientModel ModelConfig::build() const {
  CoefficientModel m;
  if (kind == "constant") {
    m = CoefficientModel::constant(base);
  } else if (kind == "space_only") {
    const double b = base, c = contrast;
    auto prof = spatial_profile(profile);
    m = CoefficientModel::space_only([b, c, prof](double z) { return b + c * prof(z); }, lambda);
  } else if (kind == "separable_additive") {
    const double b = base, c = contrast;
    auto prof = spatial_profile(profile);
    m = CoefficientModel::separable_additive([b](double) { return b; },
                                             [c, prof](double z) { return c * prof(z); },
                                             link_function(link, link_scale), lambda);
  } else if (kind == "multiplicative") {
    const double b = base, c = contrast;
    auto prof = spatial_profile(profile);
    m = CoefficientModel::multiplicative([b, c, prof](double z) { return b + c * prof(z); },
                                         link_function(link, link_scale), lambda);
  } else {
    throw std::invalid_argument("config: unknown model kind \"" + kind + "\"");
  }
  validate_model(m);
  return m;
}

DiffusionSpec DriverConfig::build() const {
  if (kind == "ou") return DiffusionSpec::ornstein_uhlenbeck(theta, sigma);
  if (kind == "sine_sigma") {
    const double th = theta, s0 = sigma, a = sine_amp;
    return DiffusionSpec::scalar([th](double y) { return -th * y; },
                                 [s0, a](double y) { return s0 * (1.0 + a * std::sin(y)); },
                                 [th](double) { return -th; },
                                 [s0, a](double y) { return s0 * a * std::cos(y); });
  }
  if (kind == "cubic") {
    const double s0 = sigma;
    return DiffusionSpec::scalar([](double y) { return -y * y * y; },
                                 [s0](double) { return s0; },
                                 [](double y) { return -3.0 * y * y; }, [](double) { return 0.0; });
  }
  throw std::invalid_argument("config: unknown driver kind \"" + kind + "\"");
}

namespace {

void parse_model(const json& j, ModelConfig& m) {
  expect_keys(j, "model", {"kind", "base", "contrast", "profile", "link", "link_scale", "lambda"});
  read_to(j, "kind", m.kind);
  read_to(j, "base", m.base);
  read_to(j, "contrast", m.contrast);
  read_to(j, "profile", m.profile);
  read_to(j, "link", m.link);
  read_to(j, "link_scale", m.link_scale);
  read_to(j, "lambda", m.lambda);
}

void parse_driver(const json& j, DriverConfig& d) {
  expect_keys(j, "driver", {"kind", "theta", "sigma", "sine_amp", "h"});
  read_to(j, "kind", d.kind);
  read_to(j, "theta", d.theta);
  read_to(j, "sigma", d.sigma);
  read_to(j, "sine_amp", d.sine_amp);
  read_to(j, "h", d.h);
  if (!(d.h > 0.0) || d.h >= 1.0) throw std::invalid_argument("config: driver.h must lie in (0,1)");
}

void parse_grid(const json& j, GridConfig& g) {
  expect_keys(j, "grid", {"n_cell", "m_box", "L", "c1", "c2"});
  read_to(j, "n_cell", g.n_cell);
  read_to(j, "m_box", g.m_box);
  read_to(j, "L", g.L);
  read_to(j, "c1", g.c1);
  read_to(j, "c2", g.c2);
  if (g.m_box < 16) throw std::invalid_argument("config: grid.m_box too small");
  if (!(g.L > 0.0)) throw std::invalid_argument("config: grid.L must be positive");
}

void parse_ygrid(const json& j, YGridConfig& g) {
  expect_keys(j, "ygrid", {"Y", "points"});
  read_to(j, "Y", g.Y);
  read_to(j, "points", g.points);
  if (g.points < 16) throw std::invalid_argument("config: ygrid.points too small");
}

void parse_tensors(const json& j, TensorsConfig& t) {
  expect_keys(j, "tensors",
              {"order", "setting", "slice_horizon", "compute_lambda", "gk_horizon", "max_lag",
               "expect_a_eff", "a_eff_tol", "expect_lambda", "lambda_poisson_tol", "lambda_corr_tol",
               "cross_route_tol", "residual_tol", "flux_tol", "bracket"});
  read_to(j, "order", t.order);
  read_to(j, "setting", t.setting);
  read_to(j, "bracket", t.bracket);
  read_to(j, "slice_horizon", t.slice_horizon);
  read_to(j, "compute_lambda", t.compute_lambda);
  read_to(j, "gk_horizon", t.gk_horizon);
  read_to(j, "max_lag", t.max_lag);
  if (j.contains("expect_a_eff")) t.expect_a_eff = j.at("expect_a_eff").get<double>();
  read_to(j, "a_eff_tol", t.a_eff_tol);
  if (j.contains("expect_lambda")) t.expect_lambda = j.at("expect_lambda").get<double>();
  read_to(j, "lambda_poisson_tol", t.lambda_poisson_tol);
  read_to(j, "lambda_corr_tol", t.lambda_corr_tol);
  read_to(j, "cross_route_tol", t.cross_route_tol);
  read_to(j, "residual_tol", t.residual_tol);
  read_to(j, "flux_tol", t.flux_tol);
  if (t.setting != "generator" && t.setting != "time_sliced")
    throw std::invalid_argument("config: tensors.setting must be generator or time_sliced");
  if (t.bracket != "model" && t.bracket != "identity")
    throw std::invalid_argument("config: tensors.bracket must be model or identity");
}

void parse_convergence(const json& j, ConvergenceConfig& c) {
  expect_keys(j, "convergence", {"phi_width", "expect_slope", "slope_tol", "degenerate_floor"});
  read_to(j, "phi_width", c.phi_width);
  read_to(j, "expect_slope", c.expect_slope);
  read_to(j, "slope_tol", c.slope_tol);
  read_to(j, "degenerate_floor", c.degenerate_floor);
}

void parse_invariance(const json& j, InvarianceConfig& c) {
  expect_keys(j, "invariance", {"bracket", "T", "var_tol"});
  read_to(j, "bracket", c.bracket);
  read_to(j, "T", c.T);
  read_to(j, "var_tol", c.var_tol);
  if (c.bracket != "identity" && c.bracket != "model")
    throw std::invalid_argument("config: invariance.bracket must be identity or model");
}

void parse_spde(const json& j, SpdeVarianceConfig& c) {
  expect_keys(j, "spde_variance",
              {"psi_width", "phi_width", "tol", "s_stride", "skew_kurtosis_check"});
  read_to(j, "psi_width", c.psi_width);
  read_to(j, "phi_width", c.phi_width);
  read_to(j, "tol", c.tol);
  read_to(j, "s_stride", c.s_stride);
  read_to(j, "skew_kurtosis_check", c.skew_kurtosis_check);
}

void parse_aronson(const json& j, AronsonConfig& c) {
  expect_keys(j, "aronson",
              {"probe_T", "realizations", "spread_tol", "control_tol", "gradient_control_tol",
               "skip_steps", "store_stride"});
  read_to(j, "probe_T", c.probe_T);
  read_to(j, "realizations", c.realizations);
  read_to(j, "spread_tol", c.spread_tol);
  read_to(j, "control_tol", c.control_tol);
  read_to(j, "gradient_control_tol", c.gradient_control_tol);
  read_to(j, "skip_steps", c.skip_steps);
  read_to(j, "store_stride", c.store_stride);
}

void parse_malliavin(const json& j, MalliavinConfig& c) {
  expect_keys(j, "malliavin", {"p", "horizons", "replicates", "tol_se"});
  read_to(j, "p", c.p);
  if (j.contains("horizons")) c.horizons = j.at("horizons").get<std::vector<double>>();
  read_to(j, "replicates", c.replicates);
  read_to(j, "tol_se", c.tol_se);
}

void parse_condition_s(const json& j, ConditionSConfig& c) {
  expect_keys(j, "condition_s", {"p", "expect_holds"});
  read_to(j, "p", c.p);
  read_to(j, "expect_holds", c.expect_holds);
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  expect_keys(j, "top level",
              {"kind", "alpha", "T", "eps", "replicates", "base_seed", "out_dir", "threads",
               "model", "driver", "grid", "ygrid", "tensors", "convergence", "invariance",
               "spde_variance", "aronson", "malliavin", "condition_s"});

  ExperimentConfig c;
  if (!j.contains("kind")) throw std::invalid_argument("config: missing \"kind\"");
  c.kind = kind_from_name(j.at("kind").get<std::string>());
  read_to(j, "alpha", c.alpha);
  if (!(c.alpha > 0.0) || !(c.alpha < 2.0))
    throw std::invalid_argument("config: alpha must lie in (0,2)");
  read_to(j, "T", c.T);
  if (j.contains("eps")) c.eps = j.at("eps").get<std::vector<double>>();
  if (c.eps.empty()) throw std::invalid_argument("config: eps list must be nonempty");
  for (size_t i = 1; i < c.eps.size(); ++i)
    if (!(c.eps[i] < c.eps[i - 1]))
      throw std::invalid_argument("config: eps values must be strictly decreasing");
  read_to(j, "replicates", c.replicates);
  if (c.replicates < 1) throw std::invalid_argument("config: replicates must be at least 1");
  read_to(j, "base_seed", c.base_seed);
  read_to(j, "out_dir", c.out_dir);
  read_to(j, "threads", c.threads);

  if (j.contains("model")) parse_model(j.at("model"), c.model);
  if (j.contains("driver")) parse_driver(j.at("driver"), c.driver);
  if (j.contains("grid")) parse_grid(j.at("grid"), c.grid);
  if (j.contains("ygrid")) parse_ygrid(j.at("ygrid"), c.ygrid);
  if (j.contains("tensors")) parse_tensors(j.at("tensors"), c.tensors);
  if (j.contains("convergence")) parse_convergence(j.at("convergence"), c.convergence);
  if (j.contains("invariance")) parse_invariance(j.at("invariance"), c.invariance);
  if (j.contains("spde_variance")) parse_spde(j.at("spde_variance"), c.spde_variance);
  if (j.contains("aronson")) parse_aronson(j.at("aronson"), c.aronson);
  if (j.contains("malliavin")) parse_malliavin(j.at("malliavin"), c.malliavin);
  if (j.contains("condition_s")) parse_condition_s(j.at("condition_s"), c.condition_s);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string ExperimentConfig::canonical_json() const {
  json j;
  j["kind"] = kind_name(kind);
  j["alpha"] = alpha;
  j["T"] = T;
  j["eps"] = eps;
  j["replicates"] = replicates;
  j["base_seed"] = base_seed;
  j["threads"] = 0;  // execution width must not change results
  j["model"] = {{"kind", model.kind},       {"base", model.base},
                {"contrast", model.contrast}, {"profile", model.profile},
                {"link", model.link},        {"link_scale", model.link_scale},
                {"lambda", model.lambda}};
  j["driver"] = {{"kind", driver.kind},
                 {"theta", driver.theta},
                 {"sigma", driver.sigma},
                 {"sine_amp", driver.sine_amp},
                 {"h", driver.h}};
  j["grid"] = {{"n_cell", grid.n_cell}, {"m_box", grid.m_box}, {"L", grid.L},
               {"c1", grid.c1},         {"c2", grid.c2}};
  j["ygrid"] = {{"Y", ygrid.Y}, {"points", ygrid.points}};
  switch (kind) {
    case ExperimentKind::effective_tensors:
      j["tensors"] = {{"order", tensors.order},
                      {"setting", tensors.setting},
                      {"bracket", tensors.bracket},
                      {"slice_horizon", tensors.slice_horizon},
                      {"compute_lambda", tensors.compute_lambda},
                      {"gk_horizon", tensors.gk_horizon},
                      {"max_lag", tensors.max_lag}};
      break;
    case ExperimentKind::convergence:
      j["convergence"] = {{"phi_width", convergence.phi_width}};
      break;
    case ExperimentKind::invariance:
      j["invariance"] = {{"bracket", invariance.bracket}, {"T", invariance.T}};
      break;
    case ExperimentKind::spde_variance:
      j["spde_variance"] = {{"psi_width", spde_variance.psi_width},
                            {"phi_width", spde_variance.phi_width},
                            {"s_stride", spde_variance.s_stride}};
      break;
    case ExperimentKind::aronson:
      j["aronson"] = {{"probe_T", aronson.probe_T},
                      {"realizations", aronson.realizations},
                      {"skip_steps", aronson.skip_steps},
                      {"store_stride", aronson.store_stride}};
      break;
    case ExperimentKind::malliavin:
      j["malliavin"] = {{"p", malliavin.p},
                        {"horizons", malliavin.horizons},
                        {"replicates", malliavin.replicates}};
      break;
    case ExperimentKind::condition_s:
      j["condition_s"] = {{"p", condition_s.p}};
      break;
  }
  return j.dump();
}

uint64_t ExperimentConfig::hash() const { return fnv1a(canonical_json()); }

}  // namespace homog
