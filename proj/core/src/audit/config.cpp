#include "protoaudit/audit/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "protoaudit/sourcebench/mixer.hpp"

namespace protoaudit::audit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join_points(const std::vector<int>& points) {
  std::string out;
  for (std::size_t i = 0; i < points.size(); ++i) out += (i ? "," : "") + std::to_string(points[i]);
  return out;
}

}  // namespace

AuditConfig::AuditConfig() : points(sourcebench::sweep_points()) { set_root_seed(root_seed); }

void AuditConfig::set_root_seed(std::uint64_t seed) {
  root_seed = seed;
  generator.seed = seed;
  train.seed = seed;
}

void AuditConfig::validate() const {
  generator.validate();
  train.validate();
  if (points.empty()) throw ConfigError("config: sweep needs at least one point");
  for (int x : points) {
    if (x < 0 || x > 100 || x % 10 != 0) {
      throw ConfigError("config: sweep point " + std::to_string(x) + " is not one of 0, 10, ..., 100");
    }
  }
}

std::map<std::string, std::string> AuditConfig::to_map() const {
  const auto& g = generator;
  const auto& t = train;
  return {
      {"seed", std::to_string(root_seed)},
      {"pool_size", std::to_string(g.pool_size)},
      {"val_size", std::to_string(g.val_size)},
      {"test_size", std::to_string(g.test_size)},
      {"tag_strength", format_double(g.tag_strength)},
      {"lesion_contrast", format_double(g.lesion_contrast)},
      {"mode", sourcebench::to_string(g.mode)},
      {"joint_epochs", std::to_string(t.joint_epochs)},
      {"projection_interval", std::to_string(t.projection_interval)},
      {"last_layer_epochs", std::to_string(t.last_layer_epochs)},
      {"batch_size", std::to_string(t.batch_size)},
      {"joint_lr", format_double(t.joint_lr)},
      {"addon_lr", format_double(t.addon_lr)},
      {"prototype_lr", format_double(t.prototype_lr)},
      {"last_layer_lr", format_double(t.last_layer_lr)},
      {"momentum", format_double(t.momentum)},
      {"max_grad_norm", format_double(t.max_grad_norm)},
      {"lambda_clst", format_double(t.coefficients.cluster)},
      {"lambda_sep", format_double(t.coefficients.separation)},
      {"lambda_l1", format_double(t.coefficients.l1)},
      {"points", join_points(points)},
      {"heatmaps_per_model", std::to_string(heatmaps_per_model)},
      {"faithfulness", faithfulness ? "true" : "false"},
  };
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!out.emplace(key, value).second) throw ConfigError(where + "duplicate key '" + key + "'");
  }
  return out;
}

std::vector<int> parse_points(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<int>("points", trim(item)));
  if (out.empty()) throw ConfigError("config: empty point list");
  return out;
}

void apply_config(AuditConfig& c, const std::map<std::string, std::string>& values) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto& g = c.generator;
  auto& t = c.train;
  const std::map<std::string, Setter> setters = {
      {"seed", [&](auto& k, auto& v) { c.set_root_seed(parse_int<std::uint64_t>(k, v)); }},
      {"pool_size", [&](auto& k, auto& v) { g.pool_size = parse_int<std::size_t>(k, v); }},
      {"val_size", [&](auto& k, auto& v) { g.val_size = parse_int<std::size_t>(k, v); }},
      {"test_size", [&](auto& k, auto& v) { g.test_size = parse_int<std::size_t>(k, v); }},
      {"tag_strength", [&](auto& k, auto& v) { g.tag_strength = parse_double(k, v); }},
      {"lesion_contrast", [&](auto& k, auto& v) { g.lesion_contrast = parse_double(k, v); }},
      {"mode",
       [&](auto& k, auto& v) {
         try {
           g.mode = sourcebench::mode_from_string(v);
         } catch (const std::exception&) {
           throw ConfigError("config: '" + k + "' expects pneumonia or abnormality, got '" + v + "'");
         }
       }},
      {"joint_epochs", [&](auto& k, auto& v) { t.joint_epochs = parse_int<std::size_t>(k, v); }},
      {"projection_interval", [&](auto& k, auto& v) { t.projection_interval = parse_int<std::size_t>(k, v); }},
      {"last_layer_epochs", [&](auto& k, auto& v) { t.last_layer_epochs = parse_int<std::size_t>(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { t.batch_size = parse_int<std::size_t>(k, v); }},
      {"joint_lr", [&](auto& k, auto& v) { t.joint_lr = parse_double(k, v); }},
      {"addon_lr", [&](auto& k, auto& v) { t.addon_lr = parse_double(k, v); }},
      {"prototype_lr", [&](auto& k, auto& v) { t.prototype_lr = parse_double(k, v); }},
      {"last_layer_lr", [&](auto& k, auto& v) { t.last_layer_lr = parse_double(k, v); }},
      {"momentum", [&](auto& k, auto& v) { t.momentum = parse_double(k, v); }},
      {"max_grad_norm", [&](auto& k, auto& v) { t.max_grad_norm = parse_double(k, v); }},
      {"lambda_clst", [&](auto& k, auto& v) { t.coefficients.cluster = parse_double(k, v); }},
      {"lambda_sep", [&](auto& k, auto& v) { t.coefficients.separation = parse_double(k, v); }},
      {"lambda_l1", [&](auto& k, auto& v) { t.coefficients.l1 = parse_double(k, v); }},
      {"points", [&](auto&, auto& v) { c.points = parse_points(v); }},
      {"heatmaps_per_model", [&](auto& k, auto& v) { c.heatmaps_per_model = parse_int<std::size_t>(k, v); }},
      {"faithfulness", [&](auto& k, auto& v) { c.faithfulness = parse_bool(k, v); }},
  };
  // Seed first; explicit keys below override what it propagates.
  if (auto it = values.find("seed"); it != values.end()) setters.at("seed")(it->first, it->second);
  for (const auto& [key, value] : values) {
    if (key == "seed") continue;
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(key, value);
  }
}

AuditConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  AuditConfig c;
  apply_config(c, parse_key_values(ss.str()));
  c.validate();
  return c;
}

}  // namespace protoaudit::audit
