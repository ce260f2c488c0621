#pragma once

// Experiment configuration: INI text with sections, parsed into a fixed schema.
// Values are kept as their text so that text → config → text is the identity on
// canonical files. Lists are comma separated; "inf" is accepted for reals.

#include "shapenet/core.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace shapenet {

struct ConfigError : Error {
  using Error::Error;
};

enum class ValueKind { integer, count, real, boolean, text, real_list, int_list };

struct ConfigKey {
  std::string section, key, fallback;
  ValueKind kind;
  std::vector<std::string> choices = {}; // non-empty: allowed text values
};

inline const std::vector<ConfigKey> &config_schema() {
  using K = ValueKind;
  static const std::vector<ConfigKey> s = {
      {"run", "seed", "0", K::count},
      {"run", "threads", "1", K::integer},
      {"run", "tolerance_scale", "1", K::real},
      {"run", "out_dir", "out", K::text},

      {"network", "N0", "5", K::count},
      {"network", "N", "400", K::count},
      {"network", "L", "20", K::count},
      {"network", "psi", "0", K::real},
      {"network", "eta", "0", K::real},
      {"network", "eta_convention", "two_eta", K::text, {"two_eta", "one_eta"}},

      {"data", "source", "random", K::text, {"random", "csv"}},
      {"data", "csv", "", K::text},
      {"data", "P", "3", K::count},
      {"data", "norm_ratio", "0.3", K::real},

      {"temperature", "beta", "inf", K::real},

      {"prior", "psi_list", "0,0.3", K::real_list},
      {"prior", "eta_list", "0,0.3", K::real_list},
      {"prior", "x_scale", "0.7", K::real},
      {"prior", "t_scale", "0.8", K::real},
      {"prior", "n_samples", "100000", K::count},
      {"prior", "band_C", "5", K::real},

      {"selfloop", "psi_list", "-0.3,0.15,0.3", K::real_list},
      {"selfloop", "eta_list", "0,0.25,0.5", K::real_list},
      {"selfloop", "norm_ratio_list", "0.2,0.4", K::real_list},
      {"selfloop", "L", "400", K::count},
      {"selfloop", "n_samples", "1000000", K::count},
      {"selfloop", "tau", "0.5", K::real},

      {"graph", "q_list", "1,2", K::int_list},
      {"graph", "n_samples", "200000", K::count},
      {"graph", "network_samples", "20000", K::count},
      {"graph", "band_C", "5", K::real},

      {"wick", "instances", "4", K::count},
      {"wick", "P", "3", K::count},
      {"wick", "beta_list", "1,10,inf", K::real_list},
      {"wick", "n_samples", "200000", K::count},

      {"posterior", "n_test", "5", K::count},
      {"posterior", "test_scale", "1", K::real},

      {"powerlaw", "P", "256", K::count},
      {"powerlaw", "N0", "512", K::count},
      {"powerlaw", "alpha", "1.5", K::real},
      {"powerlaw", "k", "2", K::count},
      {"powerlaw", "noise_scale", "0.5", K::real}, // σ_ε² = noise_scale·P^{1−α}
      {"powerlaw", "haar_U", "true", K::boolean},
      {"powerlaw", "LN_list", "0,0.005,0.01", K::real_list},
      {"powerlaw", "B_exp_list", "0.5,0.75,1,1.25,1.5,1.75,2,2.25,2.5", K::real_list},
      {"powerlaw", "n_test", "200", K::count},
      {"powerlaw", "L", "1", K::count},

      {"phase", "P", "4096", K::count},
      {"phase", "alpha", "1.5", K::real},
      {"phase", "gamma_list", "0,0.2,0.4,0.6,0.8,1", K::real_list},
      {"phase", "delta_list", "0.5,0.75,1,1.25,1.5,1.75,2,2.25,2.5", K::real_list},
      {"phase", "LN", "0.0001", K::real},
      {"phase", "c", "0", K::real},
      {"phase", "sigma_eps2", "0", K::real},
  };
  return s;
}

namespace detail {

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string &v, const std::string &where) {
  const std::string t = trim(v);
  if (t == "inf" || t == "+inf")
    return inf;
  if (t == "-inf")
    return -inf;
  try {
    std::size_t pos = 0;
    const double d = std::stod(t, &pos);
    if (pos != t.size())
      throw ConfigError(where + ": trailing characters in '" + v + "'");
    return d;
  } catch (const ConfigError &) {
    throw;
  } catch (...) {
    throw ConfigError(where + ": not a number: '" + v + "'");
  }
}

inline long long parse_int(const std::string &v, const std::string &where) {
  const std::string t = trim(v);
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(t, &pos);
    if (pos != t.size())
      throw ConfigError(where + ": not an integer: '" + v + "'");
    return i;
  } catch (const ConfigError &) {
    throw;
  } catch (...) {
    throw ConfigError(where + ": not an integer: '" + v + "'");
  }
}

inline std::vector<std::string> split_list(const std::string &v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(trim(item));
  return out;
}

} // namespace detail

inline std::string format_real(double x) {
  if (std::isinf(x))
    return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  // shortest representation that round-trips
  for (int p = 1; p <= 17; ++p) {
    char b2[32];
    std::snprintf(b2, sizeof b2, "%.*g", p, x);
    if (std::stod(b2) == x)
      return b2;
  }
  return buf;
}

class ExperimentConfig {
public:
  ExperimentConfig() {
    for (const auto &k : config_schema())
      values_[k.section + "." + k.key] = k.fallback;
  }

  static ExperimentConfig parse_ini(const std::string &text) {
    boost::property_tree::ptree pt;
    std::istringstream is(text);
    try {
      boost::property_tree::ini_parser::read_ini(is, pt);
    } catch (const boost::property_tree::ini_parser_error &e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig c;
    for (const auto &sec : pt) {
      if (sec.second.empty())
        throw ConfigError("config: key '" + sec.first + "' outside a section");
      for (const auto &kv : sec.second)
        c.set(sec.first + "." + kv.first, kv.second.data());
    }
    c.validate();
    return c;
  }

  static ExperimentConfig load(const std::string &path) {
    std::ifstream in(path);
    if (!in)
      throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(text);
      } catch (const std::exception &e) {
        throw ConfigError(std::string("config: bad JSON: ") + e.what());
      }
      return from_json(j.contains("config") ? j.at("config") : j);
    }
    return parse_ini(text);
  }

  // "section.key=value"
  void apply_override(const std::string &assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must look like section.key=value: '" + assignment + "'");
    set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
  }

  void set(const std::string &dotted, const std::string &value) {
    if (!values_.count(dotted))
      throw ConfigError("config: unknown key '" + dotted + "'");
    values_[dotted] = detail::trim(value);
  }

  const std::string &text(const std::string &dotted) const {
    const auto it = values_.find(dotted);
    if (it == values_.end())
      throw ConfigError("config: unknown key '" + dotted + "'");
    return it->second;
  }

  double real(const std::string &k) const { return detail::parse_real(text(k), k); }
  long long integer(const std::string &k) const { return detail::parse_int(text(k), k); }
  std::size_t count(const std::string &k) const {
    const auto v = integer(k);
    if (v < 0)
      throw ConfigError(k + ": must be >= 0");
    return static_cast<std::size_t>(v);
  }
  bool boolean(const std::string &k) const {
    const auto &v = text(k);
    if (v == "true" || v == "1" || v == "yes")
      return true;
    if (v == "false" || v == "0" || v == "no")
      return false;
    throw ConfigError(k + ": not a boolean: '" + v + "'");
  }
  std::vector<double> reals(const std::string &k) const {
    std::vector<double> out;
    for (const auto &s : detail::split_list(text(k)))
      out.push_back(detail::parse_real(s, k));
    return out;
  }
  std::vector<int> ints(const std::string &k) const {
    std::vector<int> out;
    for (const auto &s : detail::split_list(text(k)))
      out.push_back(static_cast<int>(detail::parse_int(s, k)));
    return out;
  }

  void validate() const {
    for (const auto &k : config_schema()) {
      const std::string d = k.section + "." + k.key;
      switch (k.kind) {
      case ValueKind::integer:
        integer(d);
        break;
      case ValueKind::count:
        count(d);
        break;
      case ValueKind::real:
        real(d);
        break;
      case ValueKind::boolean:
        boolean(d);
        break;
      case ValueKind::text:
        if (!k.choices.empty() &&
            std::find(k.choices.begin(), k.choices.end(), text(d)) == k.choices.end())
          throw ConfigError(d + ": unexpected value '" + text(d) + "'");
        break;
      case ValueKind::real_list:
        if (reals(d).empty())
          throw ConfigError(d + ": empty list");
        break;
      case ValueKind::int_list:
        if (ints(d).empty())
          throw ConfigError(d + ": empty list");
        break;
      }
    }
    if (text("data.source") == "csv" && text("data.csv").empty())
      throw ConfigError("data.csv must name a file when data.source = csv");
    if (count("network.L") < 1 || count("network.N") < 1 || count("network.N0") < 1)
      throw ConfigError("network: N0, N and L must be >= 1");
    if (!(real("run.tolerance_scale") > 0.0))
      throw ConfigError("run.tolerance_scale must be positive");
    if (!(real("temperature.beta") > 0.0))
      throw ConfigError("temperature.beta must be positive or inf");
  }

  // Canonical text: schema order, every key present.
  std::string to_ini() const {
    std::ostringstream os;
    std::string section;
    for (const auto &k : config_schema()) {
      if (k.section != section) {
        if (!section.empty())
          os << '\n';
        section = k.section;
        os << '[' << section << "]\n";
      }
      os << k.key << " = " << text(k.section + "." + k.key) << '\n';
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto &k : config_schema())
      j[k.section][k.key] = text(k.section + "." + k.key);
    return j;
  }

  static ExperimentConfig from_json(const nlohmann::json &j) {
    ExperimentConfig c;
    if (!j.is_object())
      throw ConfigError("config: JSON must be an object of sections");
    for (const auto &[sec, body] : j.items()) {
      if (!body.is_object())
        throw ConfigError("config: section '" + sec + "' must be an object");
      for (const auto &[key, v] : body.items())
        c.set(sec + "." + key, v.is_string() ? v.get<std::string>() : v.dump());
    }
    c.validate();
    return c;
  }

  bool operator==(const ExperimentConfig &o) const { return values_ == o.values_; }

private:
  std::map<std::string, std::string> values_;
};

} // namespace shapenet
