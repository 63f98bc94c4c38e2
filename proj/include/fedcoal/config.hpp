#pragma once

// Experiment config files.
//
// Flat key = value lines, '#' starts a comment, [section] headers prefix the
// keys that follow ("[train]\nlr = 0.05" is the key "train.lr"). Keys before
// the first section are top level. Command-line overrides use the same
// dotted keys: --set rounds=5 --set train.lr=0.05.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "fedcoal/error.hpp"
#include "fedcoal/simulator.hpp"

namespace fedcoal {

class ConfigError : public Error {
 public:
  ConfigError(std::string field, std::size_t line, const std::string& message)
      : Error(format(field, line, message)), field_(std::move(field)), line_(line) {}

  const std::string& field() const noexcept { return field_; }
  /// 1-based line in the config file; 0 for command-line overrides and missing keys.
  std::size_t line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& field, std::size_t line, const std::string& message) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!field.empty()) out += field + ": ";
    return out + message;
  }

  std::string field_;
  std::size_t line_;
};

struct ConfigEntry {
  std::string value;
  std::size_t line = 0;  // 0 = set on the command line
};

/// Parsed key/value pairs, sorted by key.
class ConfigDocument {
 public:
  static ConfigDocument parse(std::string_view text) {
    ConfigDocument doc;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t eol = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, eol - pos);
      pos = eol + 1;
      ++line_no;

      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) {
        if (eol == text.size()) break;
        continue;
      }
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) throw ConfigError("", line_no, "malformed section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("", line_no, "expected 'key = value'");
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("", line_no, "empty key");
      std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
      if (doc.entries_.count(full)) throw ConfigError(full, line_no, "duplicate key");
      doc.entries_[full] = {std::string(trim(line.substr(eq + 1))), line_no};
      if (eol == text.size()) break;
    }
    return doc;
  }

  static ConfigDocument load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", 0, "cannot read config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  /// Applies a "key=value" override.
  void set(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(assignment), 0, "override must look like key=value");
    }
    const auto key = trim(assignment.substr(0, eq));
    if (key.empty()) throw ConfigError("", 0, "override has an empty key");
    entries_[std::string(key)] = {std::string(trim(assignment.substr(eq + 1))), 0};
  }

  void set(const std::string& key, const std::string& value) { entries_[key] = {value, 0}; }

  const ConfigEntry* find(const std::string& key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, ConfigEntry>& entries() const noexcept { return entries_; }

  /// Keys under "prefix." (prefix stripped).
  std::map<std::string, ConfigEntry> section(const std::string& prefix) const {
    std::map<std::string, ConfigEntry> out;
    const std::string p = prefix + ".";
    for (const auto& [k, v] : entries_) {
      if (k.compare(0, p.size(), p) == 0) out[k.substr(p.size())] = v;
    }
    return out;
  }

  static std::string_view trim(std::string_view s) {
    const auto ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
  }

 private:
  std::map<std::string, ConfigEntry> entries_;
};

/// A fully resolved run: experiment plus output naming and strategy list.
struct RunSpec {
  std::string name = "experiment";
  ExperimentConfig experiment;
  std::vector<Strategy> strategies;  // one entry = plain run; several = comparison
};

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(const ConfigDocument& doc) : doc_(doc) {}

  std::optional<std::string> str(const std::string& key) {
    used_.push_back(key);
    if (const auto* e = doc_.find(key)) return e->value;
    return std::nullopt;
  }

  std::string str(const std::string& key, std::string fallback) { return str(key).value_or(std::move(fallback)); }

  template <typename T>
  T number(const std::string& key, T fallback) {
    const auto s = str(key);
    if (!s) return fallback;
    T v{};
    const auto* first = s->data();
    const auto* last = s->data() + s->size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) fail(key, "expected a number, got '" + *s + "'");
    return v;
  }

  bool boolean(const std::string& key, bool fallback) {
    const auto s = str(key);
    if (!s) return fallback;
    if (*s == "true" || *s == "1" || *s == "yes" || *s == "on") return true;
    if (*s == "false" || *s == "0" || *s == "no" || *s == "off") return false;
    fail(key, "expected true/false, got '" + *s + "'");
  }

  std::vector<std::size_t> size_list(const std::string& key) {
    std::vector<std::size_t> out;
    const auto s = str(key);
    if (!s || s->empty()) return out;
    std::string_view rest = *s;
    while (!rest.empty()) {
      const auto comma = std::min(rest.find(','), rest.size());
      const auto item = ConfigDocument::trim(rest.substr(0, comma));
      std::size_t v = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc{} || ptr != item.data() + item.size()) fail(key, "expected a comma-separated list of integers");
      out.push_back(v);
      rest = comma < rest.size() ? rest.substr(comma + 1) : std::string_view{};
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    const auto* e = doc_.find(key);
    throw ConfigError(key, e ? e->line : 0, message);
  }

  /// Rejects keys nobody asked for (typos). [fetch] is free-form.
  void reject_unknown() const {
    for (const auto& [key, entry] : doc_.entries()) {
      if (key.compare(0, 6, "fetch.") == 0) continue;
      if (std::find(used_.begin(), used_.end(), key) == used_.end()) {
        throw ConfigError(key, entry.line, "unknown key");
      }
    }
  }

 private:
  const ConfigDocument& doc_;
  std::vector<std::string> used_;
};

}  // namespace detail

/// Resolves a document into a validated RunSpec. Throws ConfigError naming
/// the offending field (and line, when it came from the file).
inline RunSpec resolve_config(const ConfigDocument& doc) {
  detail::ConfigReader in(doc);
  RunSpec spec;
  auto& cfg = spec.experiment;

  spec.name = in.str("name", "experiment");
  if (spec.name.empty() || spec.name.find_first_of("/\\") != std::string::npos) {
    in.fail("name", "must be a plain file stem");
  }
  cfg.master_seed = in.number<std::uint64_t>("seed", 0);
  cfg.client_count = in.number<std::size_t>("clients", 10);
  cfg.rounds = in.number<std::size_t>("rounds", 50);
  cfg.eval_every = in.number<std::size_t>("eval_every", 1);
  cfg.threads = in.number<std::size_t>("threads", 1);
  cfg.snapshot_weights = in.boolean("snapshot_weights", false);
  cfg.record_wall_time = in.boolean("wall_time", true);

  const std::size_t k = in.number<std::size_t>("coalition.k", 3);
  const std::string weighting = in.str("fedavg.weighting", "uniform");
  FedAvgWeighting w = FedAvgWeighting::Uniform;
  if (weighting == "uniform") w = FedAvgWeighting::Uniform;
  else if (weighting == "by-size") w = FedAvgWeighting::BySize;
  else in.fail("fedavg.weighting", "expected uniform or by-size, got '" + weighting + "'");

  const std::string strategies = in.str("strategy", "coalition");
  {
    std::string_view rest = strategies;
    while (!rest.empty()) {
      const auto comma = std::min(rest.find(','), rest.size());
      const auto item = ConfigDocument::trim(rest.substr(0, comma));
      if (item == "coalition") spec.strategies.push_back(Strategy::coalition(k));
      else if (item == "fedavg") spec.strategies.push_back(Strategy::fedavg(w));
      else in.fail("strategy", "unknown strategy '" + std::string(item) + "' (coalition, fedavg)");
      rest = comma < rest.size() ? rest.substr(comma + 1) : std::string_view{};
    }
    if (spec.strategies.empty()) in.fail("strategy", "no strategy given");
    cfg.strategy = spec.strategies.front();
  }

  const std::string source = in.str("data.source", "synth");
  std::size_t input_dim = 0;
  std::size_t classes = 0;
  if (source == "synth") {
    SynthSource s;
    s.classes = in.number<std::size_t>("data.classes", s.classes);
    s.per_class = in.number<std::size_t>("data.per_class", s.per_class);
    s.test_per_class = in.number<std::size_t>("data.test_per_class", s.test_per_class);
    s.input_dim = in.number<std::size_t>("data.input_dim", s.input_dim);
    s.separation = in.number<double>("data.separation", s.separation);
    if (s.classes < 2) in.fail("data.classes", "must be >= 2");
    if (s.per_class == 0) in.fail("data.per_class", "must be positive");
    if (s.test_per_class == 0) in.fail("data.test_per_class", "must be positive");
    if (s.input_dim < s.classes) in.fail("data.input_dim", "must be >= data.classes");
    input_dim = s.input_dim;
    classes = s.classes;
    cfg.source = s;
  } else if (source == "idx") {
    IdxSource s;
    const auto path = [&](const std::string& key) {
      const auto v = in.str(key);
      if (!v || v->empty()) in.fail(key, "missing dataset path");
      if (!std::filesystem::exists(*v)) in.fail(key, "dataset file '" + *v + "' does not exist");
      return std::filesystem::path(*v);
    };
    s.train_images = path("data.train_images");
    s.train_labels = path("data.train_labels");
    s.test_images = path("data.test_images");
    s.test_labels = path("data.test_labels");
    input_dim = in.number<std::size_t>("data.input_dim", 784);
    classes = in.number<std::size_t>("data.classes", 10);
    cfg.source = s;
  } else {
    in.fail("data.source", "expected synth or idx, got '" + source + "'");
  }

  const std::string kind = in.str("model.kind", "logistic");
  if (kind == "logistic") cfg.model.kind = ModelKind::Logistic;
  else if (kind == "mlp") cfg.model.kind = ModelKind::Mlp;
  else if (kind == "cnn-reference") in.fail("model.kind", "unsupported kind 'cnn-reference'");
  else in.fail("model.kind", "expected logistic or mlp, got '" + kind + "'");
  cfg.model.input_dim = input_dim;
  cfg.model.class_count = classes;
  cfg.model.hidden_dims = in.size_list("model.hidden");
  if (cfg.model.kind == ModelKind::Mlp && cfg.model.hidden_dims.empty()) cfg.model.hidden_dims = {64};

  cfg.train.local_epochs = in.number<std::size_t>("train.epochs", 5);
  cfg.train.batch_size = in.number<std::size_t>("train.batch_size", 10);
  cfg.train.learning_rate = in.number<double>("train.lr", 0.01);

  const std::string scheme = in.str("partition.scheme", "iid");
  if (scheme == "iid") cfg.partition.scheme = PartitionScheme::IidEqual;
  else if (scheme == "dirichlet") cfg.partition.scheme = PartitionScheme::Dirichlet;
  else if (scheme == "class-balanced") cfg.partition.scheme = PartitionScheme::ClassBalanced;
  else in.fail("partition.scheme", "expected iid, dirichlet or class-balanced, got '" + scheme + "'");
  cfg.partition.alpha = in.number<double>("partition.alpha", 0.5);
  cfg.partition.per_class = in.number<std::size_t>("partition.per_class", 0);
  cfg.partition.client_count = cfg.client_count;

  in.reject_unknown();

  const auto check = [&](const char* key, auto&& fn) {
    try {
      fn();
    } catch (const InvalidArgument& e) {
      in.fail(key, e.what());
    }
  };
  check("partition.alpha", [&] { cfg.partition.validate(); });
  check("train", [&] { cfg.train.validate(); });
  check("model", [&] { cfg.model.validate(); });
  for (const auto& s : spec.strategies) {
    ExperimentConfig c = cfg;
    c.strategy = s;
    check("strategy", [&] { c.validate(); });
  }
  return spec;
}

}  // namespace fedcoal
