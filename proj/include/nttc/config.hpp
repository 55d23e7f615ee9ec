#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nttc/common.hpp"
#include "nttc/models.hpp"
#include "nttc/ntt_fit.hpp"

namespace nttc {

/// Configuration problems (bad keys, missing files, invalid values); the
/// CLI maps these to exit status 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat INI-style configuration: [section] headers, key = value lines,
/// '#' comments. Values are strings until a typed getter is applied.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse(std::istream& is, const std::string& origin = "<config>") {
    ConfigFile cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError(origin + ":" + std::to_string(lineno) +
                            ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[section + "." + key] = value;
    }
    return cfg;
  }

  static ConfigFile parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    return parse(is, path);
  }

  /// Flag-style overrides: "section.key=value".
  void override_entry(const std::string& dotted, const std::string& value) {
    values_[dotted] = value;
  }

  bool has(const std::string& section, const std::string& key) const {
    return values_.count(section + "." + key) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
    auto it = values_.find(section + "." + key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& section,
                             const std::string& key) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end())
      throw ConfigError("missing required config key [" + section + "] " + key);
    return it->second;
  }

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) return fallback;
    return parse_double(section, key, it->second);
  }

  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) return fallback;
    return parse_int(section, key, it->second);
  }

  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key [" + section + "] " + key +
                      ": expected a boolean, got '" + v + "'");
  }

  /// Rejects keys in a section outside the allowed set (typo guard).
  void check_known(const std::string& section,
                   const std::set<std::string>& allowed) const {
    const std::string prefix = section + ".";
    for (const auto& [dotted, _] : values_) {
      if (dotted.rfind(prefix, 0) != 0) continue;
      const std::string key = dotted.substr(prefix.size());
      if (!allowed.count(key))
        throw ConfigError("unknown config key [" + section + "] " + key);
    }
  }

  std::set<std::string> sections() const {
    std::set<std::string> out;
    for (const auto& [dotted, _] : values_)
      out.insert(dotted.substr(0, dotted.find('.')));
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

  static double parse_double(const std::string& section, const std::string& key,
                             const std::string& v) {
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing characters");
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key [" + section + "] " + key +
                        ": expected a number, got '" + v + "'");
    }
  }

  static std::int64_t parse_int(const std::string& section,
                                const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const std::int64_t x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing characters");
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key [" + section + "] " + key +
                        ": expected an integer, got '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

/// Builds a model spec from the [model] section. Unset parameters take the
/// benchmark defaults of the corresponding example.
inline ModelSpec model_from_config(const ConfigFile& cfg) {
  cfg.check_known("model", {"name", "d", "n", "gamma", "lambda", "beta",
                            "grid_lo", "grid_hi"});
  const std::string name = cfg.require_string("model", "name");
  const int d = static_cast<int>(cfg.get_int("model", "d", 30));
  if (d < 2) throw ConfigError("[model] d must be >= 2");
  auto grid = [&](double lo, double hi) {
    return GridSpec(cfg.get_double("model", "grid_lo", lo),
                    cfg.get_double("model", "grid_hi", hi),
                    static_cast<int>(cfg.get_int("model", "n", 50)));
  };
  if (name == "gl") {
    GinzburgLandau m;
    m.gamma = cfg.get_double("model", "gamma", 0.16);
    m.lambda = cfg.get_double("model", "lambda", 0.16);
    m.grid = grid(-2.0, 2.0);
    m.d = d;
    return m;
  }
  if (name == "gibbs") {
    GibbsKernel m;
    m.beta = cfg.get_double("model", "beta", 0.3);
    m.grid = grid(-1.0, 1.0);
    m.d = d;
    return m;
  }
  if (name == "heavytail") {
    HeavyTail m;
    m.grid = grid(0.0, 2.0);
    m.d = d;
    return m;
  }
  if (name == "ising") {
    PeriodicIsing m;
    m.beta = cfg.get_double("model", "beta", 0.5);
    m.d = d;
    return m;
  }
  throw ConfigError("unknown model '" + name +
                    "' (expected gl | gibbs | heavytail | ising)");
}

inline std::string model_name(const ModelSpec& spec) {
  if (std::holds_alternative<GinzburgLandau>(spec)) return "gl";
  if (std::holds_alternative<GibbsKernel>(spec)) return "gibbs";
  if (std::holds_alternative<HeavyTail>(spec)) return "heavytail";
  return "ising";
}

inline BarrierSchedule schedule_from_config(const ConfigFile& cfg) {
  const std::string kind = cfg.get_string("stage_two", "schedule", "adaptive");
  if (kind == "fixed") {
    FixedSchedule s;
    s.mu0 = cfg.get_double("stage_two", "mu0", s.mu0);
    s.decay = cfg.get_double("stage_two", "mu_decay", s.decay);
    s.mu_min = cfg.get_double("stage_two", "mu_min", s.mu_min);
    return s;
  }
  if (kind == "adaptive") {
    AdaptiveSchedule s;
    s.sigma = cfg.get_double("stage_two", "sigma", s.sigma);
    s.mu0 = cfg.get_double("stage_two", "mu0", s.mu0);
    s.mu_min = cfg.get_double("stage_two", "mu_min", s.mu_min);
    return s;
  }
  throw ConfigError("unknown schedule '" + kind + "' (expected fixed | adaptive)");
}

inline FitOptions fit_options_from_config(const ConfigFile& cfg, int dim_count) {
  FitOptions opt;
  opt.sweeps = static_cast<int>(cfg.get_int("stage_two", "sweeps", 100));
  try {
    opt.solver = newton_solver_from_string(
        cfg.get_string("stage_two", "solver", "pcg"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  opt.cg_max_iter = static_cast<int>(cfg.get_int("stage_two", "cg_max_iter", 100));
  opt.cg_tol = cfg.get_double("stage_two", "cg_tol", 1e-10);
  opt.pcg_mu_threshold = cfg.get_double("stage_two", "pcg_mu_threshold", 1e-8);
  opt.ls_alpha = cfg.get_double("stage_two", "alpha", 0.3);
  opt.ls_beta = cfg.get_double("stage_two", "beta_ls", 0.5);
  opt.newton_steps_per_visit =
      static_cast<int>(cfg.get_int("stage_two", "newton_steps", 1));
  opt.warm_init_iters = static_cast<int>(cfg.get_int("stage_two", "warm_iters", 10));
  opt.stop_below_rel_loss = cfg.get_double("stage_two", "stop_below", 0.0);
  const int rank = static_cast<int>(cfg.get_int("stage_two", "rank", 0));
  if (rank < 1) throw ConfigError("[stage_two] rank must be >= 1");
  opt.ranks.assign(dim_count - 1, rank);
  try {
    opt.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return opt;
}

}  // namespace nttc
