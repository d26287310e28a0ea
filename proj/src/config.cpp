#include "splitwire/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "splitwire/error.hpp"
#include "splitwire/wire.hpp"

namespace splitwire {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
    return v.substr(1, v.size() - 2);
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  require(ec == std::errc() && p == end, ErrorKind::Config, key + ": '" + v + "' is not a non-negative integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  require(ec == std::errc() && p == end, ErrorKind::Config, key + ": '" + v + "' is not a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  require(ec == std::errc() && p == end && std::isfinite(out), ErrorKind::Config,
          key + ": '" + v + "' is not a finite number");
  return out;
}

/// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::vector<std::string> parse_list(const std::string& v) {
  std::string body = trim(v);
  if (!body.empty() && body.front() == '[') {
    require(body.back() == ']', ErrorKind::Config, "unterminated list '" + v + "'");
    body = body.substr(1, body.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format_list(const std::vector<std::string>& items) {
  std::string s = "[";
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", \"" : "\"") + items[i] + "\"";
  return s + "]";
}

struct Field {
  bool experiment;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SW_SIZE(name, member, exp)                                                                             \
  {name,                                                                                                       \
   {exp, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_size(k, v); }, \
    [](const ExperimentConfig& c) { return std::to_string(c.member); }}}
#define SW_DOUBLE(name, member, exp)                                                                             \
  {name,                                                                                                         \
   {exp, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); }, \
    [](const ExperimentConfig& c) { return format_double(c.member); }}}
#define SW_STRING(name, member, exp)                                                              \
  {name,                                                                                          \
   {exp, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.member = v; }, \
    [](const ExperimentConfig& c) { return "\"" + c.member + "\""; }}}
#define SW_LIST(name, member, exp)                                                                           \
  {name,                                                                                                     \
   {exp, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.member = parse_list(v); }, \
    [](const ExperimentConfig& c) { return format_list(c.member); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"mode",
       {true, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.mode = parse_mode(v); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.mode)); }}},
      SW_DOUBLE("lambda", lambda, true),
      SW_DOUBLE("aux_weight", aux_weight, true),
      {"arch",
       {true, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.arch = parse_arch(v); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.arch)); }}},
      SW_SIZE("resnet_blocks", resnet_blocks, true),
      SW_SIZE("resnet_width", resnet_width, true),
      {"cut",
       {true, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.cut = v; },
        [](const ExperimentConfig& c) { return c.cut; }}},
      SW_SIZE("clients", clients, true),
      SW_SIZE("epochs", epochs, true),
      SW_DOUBLE("lr", lr, true),
      SW_DOUBLE("momentum", momentum, true),
      SW_SIZE("batch", batch, true),
      {"seed",
       {true, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
        [](const ExperimentConfig& c) { return std::to_string(c.seed); }}},
      {"dtype",
       {true,
        [](ExperimentConfig& c, const std::string&, const std::string& v) {
          if (v == "f32") c.dtype = DType::f32;
          else if (v == "f64") c.dtype = DType::f64;
          else fail(ErrorKind::Config, "dtype: '" + v + "' (expected f32 or f64)");
        },
        [](const ExperimentConfig& c) { return std::string(to_string(c.dtype)); }}},
      SW_STRING("data.kind", data.kind, true),
      SW_SIZE("data.train", data.train, true),
      SW_SIZE("data.test", data.test, true),
      SW_SIZE("data.features", data.features, true),
      SW_SIZE("data.classes", data.classes, true),
      SW_DOUBLE("data.spread", data.spread, true),
      SW_STRING("data.train_images", data.train_images, true),
      SW_STRING("data.train_labels", data.train_labels, true),
      SW_STRING("data.test_images", data.test_images, true),
      SW_STRING("data.test_labels", data.test_labels, true),
      SW_LIST("data.cifar_train", data.cifar_train, true),
      SW_LIST("data.cifar_test", data.cifar_test, true),
      SW_STRING("transport", transport, false),
      SW_SIZE("window", window, false),
      SW_DOUBLE("link.latency_ms", latency_ms, false),
      SW_DOUBLE("link.bandwidth", bandwidth, false),
      SW_STRING("out", out, false),
      SW_STRING("format", format, false),
  };
  return table;
}

#undef SW_SIZE
#undef SW_DOUBLE
#undef SW_STRING
#undef SW_LIST

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto& table = fields();
  auto it = table.find(key);
  require(it != table.end(), ErrorKind::Config, "unknown config key '" + key + "'");
  it->second.set(*this, key, unquote(trim(value)));
}

std::string ExperimentConfig::get(const std::string& key) const {
  const auto& table = fields();
  auto it = table.find(key);
  require(it != table.end(), ErrorKind::Config, "unknown config key '" + key + "'");
  return it->second.get(*this);
}

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    // Strip comments that are not inside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']', ErrorKind::Config, "line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Config,
            "line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      cfg.set(key, line.substr(eq + 1));
    } catch (const Error& e) {
      fail(ErrorKind::Config, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::canonical(bool experiment_only) const {
  std::string out;
  for (const auto& [k, f] : fields()) {
    if (experiment_only && !f.experiment) continue;
    out += k + " = " + f.get(*this) + "\n";
  }
  return out;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(canonical(true)); }

void ExperimentConfig::validate() const {
  require(clients >= 1, ErrorKind::Config, "clients must be at least 1");
  require(epochs >= 1, ErrorKind::Config, "epochs must be at least 1");
  require(batch >= 1, ErrorKind::Config, "batch must be at least 1");
  require(lr > 0.0, ErrorKind::Config, "lr must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::Config, "momentum must be in [0, 1)");
  require(lambda >= 0.0, ErrorKind::Config, "lambda must be non-negative");
  require(aux_weight >= 0.0, ErrorKind::Config, "aux_weight must be non-negative");
  require(window >= 1, ErrorKind::Config, "window must be at least 1");
  require(latency_ms >= 0.0 && bandwidth >= 0.0, ErrorKind::Config, "link settings must be non-negative");
  require(transport == "loopback" || transport == "threads", ErrorKind::Config,
          "transport must be loopback or threads (use serve/client for TCP)");
  require(format == "csv" || format == "json", ErrorKind::Config, "format must be csv or json");
  const std::string& k = data.kind;
  require(k == "blobs" || k == "digits" || k == "idx" || k == "cifar", ErrorKind::Config,
          "data.kind must be blobs, digits, idx or cifar");
  if (k == "idx")
    require(!data.train_images.empty() && !data.train_labels.empty() && !data.test_images.empty() &&
                !data.test_labels.empty(),
            ErrorKind::Config, "idx data needs train/test image and label paths");
  if (k == "cifar")
    require(!data.cifar_train.empty() && !data.cifar_test.empty(), ErrorKind::Config,
            "cifar data needs data.cifar_train and data.cifar_test");
}

}  // namespace splitwire
