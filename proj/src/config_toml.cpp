#include "countfuse/config_toml.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "countfuse/common.hpp"

namespace countfuse {

namespace {

struct TomlValue {
  enum class Kind { String, Number, Boolean, Array } kind = Kind::String;
  std::string str;
  double number = 0.0;
  bool boolean = false;
  std::vector<TomlValue> array;
};

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

// strips full-line and trailing comments, respecting quoted strings
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

TomlValue parse_scalar(const std::string& raw, const std::string& where) {
  TomlValue v;
  if (raw.empty()) throw input_error("empty value for " + where);
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"')
      throw input_error("unterminated string for " + where);
    v.kind = TomlValue::Kind::String;
    v.str = raw.substr(1, raw.size() - 2);
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.kind = TomlValue::Kind::Boolean;
    v.boolean = raw == "true";
    return v;
  }
  try {
    std::size_t pos = 0;
    v.number = std::stod(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument(raw);
  } catch (const std::exception&) {
    throw input_error("cannot parse value '" + raw + "' for " + where);
  }
  v.kind = TomlValue::Kind::Number;
  return v;
}

TomlValue parse_value(const std::string& raw, const std::string& where) {
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']') throw input_error("unterminated array for " + where +
                                             " (arrays must be single-line)");
    TomlValue arr;
    arr.kind = TomlValue::Kind::Array;
    std::string body = raw.substr(1, raw.size() - 2);
    std::vector<std::string> items;
    std::string cur;
    bool in_string = false;
    for (char c : body) {
      if (c == '"') in_string = !in_string;
      if (c == ',' && !in_string) {
        items.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty() || !items.empty()) items.push_back(cur);
    for (const auto& item : items) {
      const std::string t = trim(item);
      if (t.empty()) throw input_error("empty array element for " + where);
      arr.array.push_back(parse_scalar(t, where));
    }
    return arr;
  }
  return parse_scalar(raw, where);
}

std::map<std::string, TomlValue> parse_toml(std::istream& is, const std::string& path) {
  std::map<std::string, TomlValue> out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw input_error(path + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw input_error(path + ":" + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw input_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw input_error(path + ":" + std::to_string(lineno) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    out[full] = parse_value(trim(line.substr(eq + 1)), full);
  }
  return out;
}

class Schema {
 public:
  void number(const std::string& key, const std::function<void(double)>& set) {
    setters_[key] = [set, key](const TomlValue& v) {
      if (v.kind != TomlValue::Kind::Number)
        throw input_error("config field " + key + " must be a number");
      set(v.number);
    };
  }
  void integer(const std::string& key, const std::function<void(long long)>& set) {
    setters_[key] = [set, key](const TomlValue& v) {
      if (v.kind != TomlValue::Kind::Number || v.number != std::floor(v.number))
        throw input_error("config field " + key + " must be an integer");
      set(static_cast<long long>(v.number));
    };
  }
  void text(const std::string& key, const std::function<void(const std::string&)>& set) {
    setters_[key] = [set, key](const TomlValue& v) {
      if (v.kind != TomlValue::Kind::String)
        throw input_error("config field " + key + " must be a string");
      set(v.str);
    };
  }
  void flag(const std::string& key, const std::function<void(bool)>& set) {
    setters_[key] = [set, key](const TomlValue& v) {
      if (v.kind != TomlValue::Kind::Boolean)
        throw input_error("config field " + key + " must be true or false");
      set(v.boolean);
    };
  }
  void numbers(const std::string& key, const std::function<void(std::vector<double>)>& set) {
    setters_[key] = [set, key](const TomlValue& v) {
      if (v.kind != TomlValue::Kind::Array)
        throw input_error("config field " + key + " must be an array of numbers");
      std::vector<double> vals;
      for (const auto& e : v.array) {
        if (e.kind != TomlValue::Kind::Number)
          throw input_error("config field " + key + " must contain only numbers");
        vals.push_back(e.number);
      }
      set(std::move(vals));
    };
  }
  void texts(const std::string& key,
             const std::function<void(std::vector<std::string>)>& set) {
    setters_[key] = [set, key](const TomlValue& v) {
      if (v.kind != TomlValue::Kind::Array)
        throw input_error("config field " + key + " must be an array of strings");
      std::vector<std::string> vals;
      for (const auto& e : v.array) {
        if (e.kind != TomlValue::Kind::String)
          throw input_error("config field " + key + " must contain only strings");
        vals.push_back(e.str);
      }
      set(std::move(vals));
    };
  }

  void apply(const std::map<std::string, TomlValue>& values) const {
    for (const auto& [key, value] : values) {
      const auto it = setters_.find(key);
      if (it == setters_.end()) throw input_error("unknown config field: " + key);
      it->second(value);
    }
  }

 private:
  std::map<std::string, std::function<void(const TomlValue&)>> setters_;
};

}  // namespace

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw input_error("cannot open config file: " + path);
  const auto values = parse_toml(is, path);

  Schema schema;
  schema.integer("seed", [&](long long v) { cfg.seed = static_cast<std::uint64_t>(v); });
  schema.integer("threads", [&](long long v) { cfg.threads = static_cast<int>(v); });
  schema.text("out", [&](const std::string& v) { cfg.out_dir = v; });
  schema.flag("fast", [&](bool v) { cfg.fast = v; });

  schema.number("domain.x0", [&](double v) { cfg.domain.x0 = v; });
  schema.number("domain.y0", [&](double v) { cfg.domain.y0 = v; });
  schema.number("domain.x1", [&](double v) { cfg.domain.x1 = v; });
  schema.number("domain.y1", [&](double v) { cfg.domain.y1 = v; });
  schema.text("domain.polygon_csv", [&](const std::string& v) { cfg.domain.polygon_csv = v; });
  schema.number("domain.max_edge_inner", [&](double v) { cfg.domain.max_edge_inner = v; });
  schema.number("domain.max_edge_outer", [&](double v) { cfg.domain.max_edge_outer = v; });
  schema.number("domain.buffer_width", [&](double v) { cfg.domain.buffer_width = v; });
  schema.integer("domain.max_nodes", [&](long long v) { cfg.domain.max_nodes = v; });

  schema.number("priors.pc1_rho0", [&](double v) { cfg.priors.pc1_rho0 = v; });
  schema.number("priors.pc1_alpha_rho", [&](double v) { cfg.priors.pc1_alpha_rho = v; });
  schema.number("priors.pc1_sigma0", [&](double v) { cfg.priors.pc1_sigma0 = v; });
  schema.number("priors.pc1_alpha_sigma", [&](double v) { cfg.priors.pc1_alpha_sigma = v; });
  schema.number("priors.pc2_rho0", [&](double v) { cfg.priors.pc2_rho0 = v; });
  schema.number("priors.pc2_alpha_rho", [&](double v) { cfg.priors.pc2_alpha_rho = v; });
  schema.number("priors.pc2_sigma0", [&](double v) { cfg.priors.pc2_sigma0 = v; });
  schema.number("priors.pc2_alpha_sigma", [&](double v) { cfg.priors.pc2_alpha_sigma = v; });
  schema.number("priors.beta_precision", [&](double v) { cfg.priors.beta_precision = v; });
  schema.number("priors.psi_mean", [&](double v) { cfg.priors.psi_mean = v; });
  schema.number("priors.psi_precision", [&](double v) { cfg.priors.psi_precision = v; });
  schema.number("priors.tau_shape", [&](double v) { cfg.priors.tau_shape = v; });
  schema.number("priors.tau_rate", [&](double v) { cfg.priors.tau_rate = v; });

  schema.text("model.variant", [&](const std::string& v) { cfg.model.variant = v; });
  schema.texts("model.covariates",
               [&](std::vector<std::string> v) { cfg.model.covariates = std::move(v); });

  schema.integer("inference.nm_max_evals",
                 [&](long long v) { cfg.inference.nm_max_evals = static_cast<int>(v); });
  schema.integer("inference.nm_stall_window",
                 [&](long long v) { cfg.inference.nm_stall_window = static_cast<int>(v); });
  schema.number("inference.nm_tol", [&](double v) { cfg.inference.nm_tol = v; });
  schema.number("inference.nm_init_step", [&](double v) { cfg.inference.nm_init_step = v; });
  schema.number("inference.fd_step", [&](double v) { cfg.inference.fd_step = v; });
  schema.number("inference.ccd_radius", [&](double v) { cfg.inference.ccd_radius = v; });
  schema.number("inference.newton_tol", [&](double v) { cfg.inference.newton_tol = v; });
  schema.integer("inference.n_samples",
                 [&](long long v) { cfg.inference.n_samples = static_cast<int>(v); });
  schema.numbers("inference.theta_start",
                 [&](std::vector<double> v) { cfg.inference.theta_start = std::move(v); });
  schema.number("inference.cpo_cv_threshold",
                [&](double v) { cfg.inference.cpo_cv_threshold = v; });

  schema.integer("scenario.scenario",
                 [&](long long v) { cfg.scenario.scenario = static_cast<int>(v); });
  schema.number("scenario.beta0", [&](double v) { cfg.scenario.beta0 = v; });
  schema.number("scenario.beta1", [&](double v) { cfg.scenario.beta1 = v; });
  schema.number("scenario.rho", [&](double v) { cfg.scenario.rho = v; });
  schema.number("scenario.sigma2", [&](double v) { cfg.scenario.sigma2 = v; });
  schema.numbers("scenario.zeta_star",
                 [&](std::vector<double> v) { cfg.scenario.zeta_star = std::move(v); });
  schema.numbers("scenario.psi_star",
                 [&](std::vector<double> v) { cfg.scenario.psi_star = std::move(v); });
  schema.integer("scenario.n_sites_a",
                 [&](long long v) { cfg.scenario.n_sites_a = static_cast<int>(v); });
  schema.integer("scenario.n_sites_b",
                 [&](long long v) { cfg.scenario.n_sites_b = static_cast<int>(v); });
  schema.number("scenario.country_split",
                [&](double v) { cfg.scenario.country_split = v; });
  schema.integer("scenario.site_seed",
                 [&](long long v) { cfg.scenario.site_seed = static_cast<std::uint64_t>(v); });
  schema.integer("scenario.cov_seed",
                 [&](long long v) { cfg.scenario.cov_seed = static_cast<std::uint64_t>(v); });
  schema.number("scenario.cov_cell", [&](double v) { cfg.scenario.cov_cell = v; });
  schema.text("scenario.cov_name", [&](const std::string& v) { cfg.scenario.cov_name = v; });
  schema.integer("scenario.replicates",
                 [&](long long v) { cfg.scenario.replicates = static_cast<int>(v); });
  schema.texts("scenario.models",
               [&](std::vector<std::string> v) { cfg.scenario.models = std::move(v); });

  schema.text("paths.dataset", [&](const std::string& v) { cfg.paths.dataset = v; });
  schema.text("paths.sites", [&](const std::string& v) { cfg.paths.sites = v; });
  schema.text("paths.records", [&](const std::string& v) { cfg.paths.records = v; });
  schema.texts("paths.rasters",
               [&](std::vector<std::string> v) { cfg.paths.rasters = std::move(v); });
  schema.text("paths.fit_dir", [&](const std::string& v) { cfg.paths.fit_dir = v; });

  schema.number("screen.threshold", [&](double v) { cfg.screen.threshold = v; });
  schema.texts("screen.priority",
               [&](std::vector<std::string> v) { cfg.screen.priority = std::move(v); });
  schema.integer("screen.max_cells", [&](long long v) { cfg.screen.max_cells = v; });

  schema.apply(values);
}

}  // namespace countfuse
