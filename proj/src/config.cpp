#include "ptcure/config.hpp"

#include "ptcure/error.hpp"
#include "text_util.hpp"

#include "json.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

namespace ptcure {

namespace {

// Shortest text that reads back to the same double.
std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string json_scalar(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return format_double(v.get<double>());
  throw InputError("config key '" + key + "' must be a scalar or a flat array");
}

double as_double(const ConfigMap::Entry& e, const std::string& key) {
  return detail::parse_double(e.value, key, e.line);
}

int as_int(const ConfigMap::Entry& e, const std::string& key) {
  const auto v = detail::parse_integer(e.value, key, e.line);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw InputError("value of '" + key + "' is out of range", e.line);
  }
  return static_cast<int>(v);
}

std::size_t as_count(const ConfigMap::Entry& e, const std::string& key) {
  const auto v = detail::parse_integer(e.value, key, e.line);
  if (v < 0) throw InputError("'" + key + "' must be nonnegative", e.line);
  return static_cast<std::size_t>(v);
}

std::uint64_t as_seed(const ConfigMap::Entry& e, const std::string& key) {
  const auto s = detail::trim(e.value);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw InputError("cannot parse " + key + " value '" + std::string(s) + "' as an unsigned integer", e.line);
  }
  return v;
}

Coefficients as_vector(const ConfigMap::Entry& e, const std::string& key) {
  std::vector<double> values;
  for (const auto& field : detail::split_csv(e.value)) values.push_back(detail::parse_double(field, key, e.line));
  if (values.empty()) throw InputError("'" + key + "' needs at least one value", e.line);
  return Eigen::Map<const Coefficients>(values.data(), static_cast<Eigen::Index>(values.size()));
}

// Wraps domain parsers so their std::invalid_argument carries the line number.
template <class Fn>
auto with_line(const ConfigMap::Entry& e, Fn&& fn) {
  try {
    return fn(e.value);
  } catch (const std::invalid_argument& ex) {
    throw InputError(ex.what(), e.line);
  }
}

}  // namespace

ConfigMap ConfigMap::parse(std::istream& in) {
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  ConfigMap map;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& ex) {
      throw InputError(std::string("invalid JSON config: ") + ex.what());
    }
    for (const auto& [key, value] : j.items()) {
      if (value.is_array()) {
        std::string joined;
        for (const auto& item : value) {
          if (!joined.empty()) joined += ',';
          joined += json_scalar(item, key);
        }
        map.set(key, joined);
      } else {
        map.set(key, json_scalar(value, key));
      }
    }
    return map;
  }

  std::istringstream lines(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(lines, line)) {
    ++number;
    detail::strip_cr(line);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw InputError("expected key = value", number);
    const std::string key(detail::trim(body.substr(0, eq)));
    if (key.empty()) throw InputError("missing key before '='", number);
    if (map.contains(key)) throw InputError("duplicate key '" + key + "'", number);
    map.set(key, std::string(detail::trim(body.substr(eq + 1))), number);
  }
  return map;
}

ConfigMap ConfigMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  return parse(in);
}

void ConfigMap::set(const std::string& key, std::string value, std::size_t line) {
  entries_[key] = Entry{std::move(value), line};
}

std::optional<ConfigMap::Entry> ConfigMap::take(const std::string& key) {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  Entry e = it->second;
  entries_.erase(it);
  return e;
}

void ConfigMap::require_consumed() const {
  if (entries_.empty()) return;
  // Report the earliest offending line when lines are known.
  const auto* worst = &*entries_.begin();
  for (const auto& kv : entries_) {
    if (kv.second.line > 0 && (worst->second.line == 0 || kv.second.line < worst->second.line)) worst = &kv;
  }
  throw InputError("unknown config key '" + worst->first + "'", worst->second.line);
}

void apply_fit_config(ConfigMap& map, FitConfig& c) {
  if (auto e = map.take("method")) c.method = with_line(*e, [](const std::string& v) { return parse_method(v); });
  if (auto e = map.take("family")) c.family = with_line(*e, [](const std::string& v) { return parse_family(v); });
  if (auto e = map.take("tau")) c.tau = CureThreshold{as_double(*e, "tau")};
  if (auto e = map.take("beta_init")) c.beta_init = as_vector(*e, "beta_init");
  if (auto e = map.take("outer_tol")) c.outer_tol = as_double(*e, "outer_tol");
  if (auto e = map.take("outer_max_iter")) c.outer_max_iter = as_int(*e, "outer_max_iter");
  if (auto e = map.take("newton_tol")) c.newton_tol = as_double(*e, "newton_tol");
  if (auto e = map.take("newton_max_iter")) c.newton_max_iter = as_int(*e, "newton_max_iter");
  if (auto e = map.take("seed")) c.seed = as_seed(*e, "seed");
  try {
    c.validate();
  } catch (const std::invalid_argument& ex) {
    throw InputError(ex.what());
  }
}

void apply_sim_config(ConfigMap& map, SimConfig& c) {
  if (auto e = map.take("clusters")) c.clusters = as_count(*e, "clusters");
  if (auto e = map.take("cluster_size")) c.cluster_size = as_count(*e, "cluster_size");
  if (auto e = map.take("beta_true")) c.beta_true = as_vector(*e, "beta_true");
  if (auto e = map.take("structure")) c.structure = with_line(*e, [](const std::string& v) { return parse_family(v); });
  if (auto e = map.take("tau_corr")) c.tau_corr = as_double(*e, "tau_corr");
  if (auto e = map.take("eta_corr")) c.eta_corr = as_double(*e, "eta_corr");
  if (auto e = map.take("nu")) c.nu = as_double(*e, "nu");
  if (auto e = map.take("censor_max")) c.censor_max = as_double(*e, "censor_max");
  if (auto e = map.take("seed")) c.seed = as_seed(*e, "seed");
  try {
    c.validate();
    if (auto e = map.take("censoring")) c.nu = calibrate_nu_for_censoring(c, as_double(*e, "censoring"));
  } catch (const std::invalid_argument& ex) {
    throw InputError(ex.what());
  } catch (const RootBracketError& ex) {
    throw InputError(ex.what());
  }
}

void apply_study_config(ConfigMap& map, StudyDesign& d) {
  if (auto e = map.take("replications")) d.replications = as_int(*e, "replications");
  if (auto e = map.take("confidence")) d.confidence = as_double(*e, "confidence");
  if (auto e = map.take("threads")) d.threads = static_cast<unsigned>(as_count(*e, "threads"));
  if (auto e = map.take("methods")) d.methods = with_line(*e, [](const std::string& v) { return parse_method_list(v); });
  if (auto e = map.take("bootstrap_replicates")) d.bootstrap_replicates = as_int(*e, "bootstrap_replicates");
  if (auto e = map.take("bootstrap_subset")) d.bootstrap_subset = as_int(*e, "bootstrap_subset");
  if (auto e = map.take("seed")) d.seed = as_seed(*e, "seed");

  ConfigMap fit_keys;
  std::vector<std::string> prefixed;
  for (const auto& [key, entry] : map.entries()) {
    if (key.rfind("fit.", 0) == 0) {
      fit_keys.set(key.substr(4), entry.value, entry.line);
      prefixed.push_back(key);
    }
  }
  for (const auto& key : prefixed) map.take(key);
  apply_fit_config(fit_keys, d.fit);
  fit_keys.require_consumed();

  apply_sim_config(map, d.sim);
  try {
    d.validate();
  } catch (const std::invalid_argument& ex) {
    throw InputError(ex.what());
  }
}

std::string to_key_values(const SimConfig& c) {
  std::ostringstream os;
  os << "clusters = " << c.clusters << '\n';
  os << "cluster_size = " << c.cluster_size << '\n';
  os << "beta_true = ";
  for (Eigen::Index k = 0; k < c.beta_true.size(); ++k) os << (k ? "," : "") << format_double(c.beta_true(k));
  os << '\n';
  os << "structure = " << to_string(c.structure) << '\n';
  os << "tau_corr = " << format_double(c.tau_corr) << '\n';
  os << "eta_corr = " << format_double(c.eta_corr) << '\n';
  os << "nu = " << format_double(c.nu) << '\n';
  os << "censor_max = " << format_double(c.censor_max) << '\n';
  os << "seed = " << c.seed << '\n';
  return os.str();
}

std::string to_json(const SimConfig& c, int indent) {
  nlohmann::json j = {
      {"clusters", c.clusters},
      {"cluster_size", c.cluster_size},
      {"beta_true", std::vector<double>(c.beta_true.data(), c.beta_true.data() + c.beta_true.size())},
      {"structure", to_string(c.structure)},
      {"tau_corr", c.tau_corr},
      {"eta_corr", c.eta_corr},
      {"nu", c.nu},
      {"censor_max", c.censor_max},
      {"seed", c.seed},
  };
  return j.dump(indent);
}

std::vector<MethodSpec> parse_method_list(const std::string& text) {
  std::vector<MethodSpec> out;
  for (const auto& field : detail::split_csv(text)) {
    if (field.empty()) continue;
    const auto dash = field.find('-');
    MethodSpec spec;
    spec.method = parse_method(field.substr(0, dash));
    if (dash != std::string::npos) {
      spec.family = parse_family(field.substr(dash + 1));
    } else if (spec.method != Method::Npm) {
      throw std::invalid_argument("method '" + field + "' needs a working family, e.g. gee-exchangeable");
    }
    if (spec.method == Method::Npm) spec.family = CorrelationFamily::Independence;
    out.push_back(spec);
  }
  if (out.empty()) throw std::invalid_argument("empty method list");
  return out;
}

}  // namespace ptcure
