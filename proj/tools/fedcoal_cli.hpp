#pragma once

// The fedcoal command line: run, fetch, plot.
//
// Exit codes: 0 success, 2 config/usage error, 3 runtime abort,
// 4 fetched file failed verification.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <zlib.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <CLI11.hpp>
#include <httplib.h>

#include "fedcoal/config.hpp"
#include "fedcoal/metrics_io.hpp"
#include "fedcoal/simulator.hpp"

namespace fedcoal::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kRuntimeError = 3, kChecksumError = 4 };

namespace fs = std::filesystem;

inline fs::path default_out_dir() {
  if (const char* env = std::getenv("FEDCOAL_OUT"); env && *env) return env;
  return ".";
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("short write to '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  fs::path config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out_dir;
};

inline int cmd_run(const RunOptions& opt, std::ostream& out, std::ostream& err) {
  ConfigDocument doc;
  RunSpec spec;
  try {
    doc = ConfigDocument::load(opt.config);
    for (const auto& o : opt.overrides) doc.set(std::string_view(o));
    if (opt.seed) doc.set("seed", std::to_string(*opt.seed));
    spec = resolve_config(doc);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  }

  const fs::path dir = opt.out_dir.value_or(default_out_dir());
  const fs::path csv_path = dir / (spec.name + ".csv");
  const fs::path json_path = dir / (spec.name + ".json");

  std::vector<StrategyRun> runs;
  int code = kOk;
  try {
    runs = compare_strategies(spec.experiment, spec.strategies);
  } catch (const ExperimentAborted& e) {
    err << "aborted: " << e.what() << '\n';
    runs.push_back({spec.experiment.strategy, e.partial_records()});
    code = kRuntimeError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }

  try {
    write_text(csv_path, to_csv(runs));
    write_text(json_path, to_json(doc, runs));
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  for (const auto& run : runs) {
    if (run.records.empty()) continue;
    const auto& last = run.records.back();
    out << run.strategy.label() << ": round " << last.round << " test_accuracy " << format_double(last.test_accuracy)
        << " test_loss " << format_double(last.test_loss) << '\n';
  }
  out << "wrote " << csv_path.string() << " and " << json_path.string() << '\n';
  return code;
}

// ---------------------------------------------------------------------------
// fetch

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return hex.str();
}

inline std::string gunzip(const std::string& bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw Error("inflateInit2 failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::string out;
  char buf[1 << 16];
  int rc;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error("gzip stream is corrupt");
    }
    out.append(buf, sizeof buf - zs.avail_out);
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

struct FetchEntry {
  std::string name;
  std::string url;
  std::optional<std::size_t> bytes;
  std::string sha256;
  std::string file;
  bool unzip = false;
};

/// Entries from the [fetch] section: <name>.url, <name>.sha256 and optional
/// <name>.bytes, <name>.file, <name>.gunzip.
inline std::vector<FetchEntry> fetch_entries(const ConfigDocument& doc) {
  std::map<std::string, FetchEntry> by_name;
  for (const auto& [key, entry] : doc.section("fetch")) {
    if (key == "dest") continue;
    const auto dot = key.rfind('.');
    if (dot == std::string::npos) throw ConfigError("fetch." + key, entry.line, "expected <name>.<field>");
    const std::string name = key.substr(0, dot);
    const std::string field = key.substr(dot + 1);
    auto& e = by_name[name];
    e.name = name;
    if (field == "url") {
      e.url = entry.value;
    } else if (field == "sha256") {
      e.sha256 = entry.value;
      for (auto& c : e.sha256) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (field == "bytes") {
      try {
        e.bytes = std::stoull(entry.value);
      } catch (const std::exception&) {
        throw ConfigError("fetch." + key, entry.line, "expected a byte count");
      }
    } else if (field == "file") {
      e.file = entry.value;
    } else if (field == "gunzip") {
      e.unzip = entry.value == "true" || entry.value == "1" || entry.value == "yes";
    } else {
      throw ConfigError("fetch." + key, entry.line, "unknown fetch field '" + field + "'");
    }
  }
  std::vector<FetchEntry> out;
  for (auto& [name, e] : by_name) {
    if (e.url.empty()) throw ConfigError("fetch." + name + ".url", 0, "missing url");
    if (e.sha256.size() != 64) throw ConfigError("fetch." + name + ".sha256", 0, "missing or malformed sha256");
    if (e.file.empty()) {
      const auto slash = e.url.find_last_of('/');
      e.file = slash == std::string::npos ? e.url : e.url.substr(slash + 1);
    }
    if (e.file.empty() || e.file.find('/') != std::string::npos) {
      throw ConfigError("fetch." + name + ".file", 0, "cannot derive a plain file name");
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline bool verifies(const std::string& bytes, const FetchEntry& e) {
  return (!e.bytes || bytes.size() == *e.bytes) && sha256_hex(bytes) == e.sha256;
}

/// Splits "scheme://host[:port]/path" into the base and the path.
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("not an absolute URL: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::string download(const std::string& url) {
  const auto [base, path] = split_url(url);
  httplib::Client client(base);
  client.set_follow_location(true);
  client.set_connection_timeout(30);
  client.set_read_timeout(120);
  auto res = client.Get(path);
  if (!res) throw Error("download of '" + url + "' failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error("download of '" + url + "' returned HTTP " + std::to_string(res->status));
  return std::move(res->body);
}

struct FetchOptions {
  fs::path config;
  std::optional<fs::path> dest;
};

inline int cmd_fetch(const FetchOptions& opt, std::ostream& out, std::ostream& err) {
  std::vector<FetchEntry> entries;
  fs::path dest;
  try {
    const auto doc = ConfigDocument::load(opt.config);
    entries = fetch_entries(doc);
    if (opt.dest) dest = *opt.dest;
    else if (const auto* d = doc.find("fetch.dest")) dest = d->value;
    else dest = default_out_dir();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  }

  for (const auto& e : entries) {
    const fs::path target = dest / e.file;
    try {
      if (fs::exists(target) && verifies(read_text(target), e)) {
        out << e.name << ": " << target.string() << " present and verified\n";
      } else {
        const std::string body = download(e.url);
        if (!verifies(body, e)) {
          fs::remove(target);
          err << e.name << ": verification failed for " << e.url << " (got " << body.size() << " bytes, sha256 "
              << sha256_hex(body) << ")\n";
          return kChecksumError;
        }
        write_text(target, body);
        out << e.name << ": downloaded " << body.size() << " bytes to " << target.string() << '\n';
      }
      if (e.unzip) {
        fs::path plain = target;
        if (plain.extension() == ".gz") plain.replace_extension();
        else plain += ".raw";
        if (!fs::exists(plain)) {
          write_text(plain, gunzip(read_text(target)));
          out << e.name << ": unpacked to " << plain.string() << '\n';
        }
      }
    } catch (const Error& ex) {
      err << e.name << ": " << ex.what() << '\n';
      return kRuntimeError;
    } catch (const fs::filesystem_error& ex) {
      err << e.name << ": " << ex.what() << '\n';
      return kRuntimeError;
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// plot

struct PlotOptions {
  std::vector<fs::path> csvs;
  std::optional<fs::path> out;  // SVG path; merged CSV goes next to it
};

inline int cmd_plot(const PlotOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.csvs.empty()) {
    err << "plot: no input CSV files\n";
    return kConfigError;
  }
  fs::path svg_path = opt.out.value_or(default_out_dir() / "accuracy.svg");
  if (svg_path.extension() != ".svg") svg_path /= "accuracy.svg";
  fs::path merged_path = svg_path;
  merged_path.replace_extension(".csv");

  std::vector<AccuracySeries> series;
  try {
    for (const auto& p : opt.csvs) {
      auto s = read_metrics_csv(read_text(p), p.stem().string());
      series.insert(series.end(), s.begin(), s.end());
    }
    const std::string merged = merged_csv(series);
    write_text(merged_path, merged);
    write_text(svg_path, accuracy_svg(series, "Test accuracy per round"));
  } catch (const InvalidArgument& e) {
    err << "plot: " << e.what() << '\n';
    return kConfigError;
  } catch (const Error& e) {
    err << "plot: " << e.what() << '\n';
    return kRuntimeError;
  }
  out << "wrote " << svg_path.string() << " (" << series.size() << " series) and " << merged_path.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Federated learning simulator: coalition formation vs FedAvg"};
  app.require_subcommand(1);

  RunOptions run_opt;
  std::uint64_t seed = 0;
  std::string run_out;
  auto* run = app.add_subcommand("run", "Run an experiment and write <name>.csv / <name>.json");
  run->add_option("--config", run_opt.config, "Experiment config file")->required();
  run->add_option("--set", run_opt.overrides, "Override a config key (key=value), repeatable");
  auto* seed_opt = run->add_option("--seed", seed, "Override the master seed");
  run->add_option("--out", run_out, "Output directory (default: $FEDCOAL_OUT or .)");

  FetchOptions fetch_opt;
  std::string fetch_out;
  auto* fetch = app.add_subcommand("fetch", "Download and verify the dataset files listed in [fetch]");
  fetch->add_option("--config", fetch_opt.config, "Config file with a [fetch] section")->required();
  fetch->add_option("--out", fetch_out, "Destination directory (default: fetch.dest, $FEDCOAL_OUT or .)");

  PlotOptions plot_opt;
  std::string plot_out;
  auto* plot = app.add_subcommand("plot", "Plot accuracy vs round from metrics CSVs (SVG + merged CSV)");
  plot->add_option("csv", plot_opt.csvs, "Metrics CSV files")->required();
  plot->add_option("--out", plot_out, "SVG path or directory (default: $FEDCOAL_OUT/accuracy.svg)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kConfigError;
  }

  if (run->parsed()) {
    if (seed_opt->count()) run_opt.seed = seed;
    if (!run_out.empty()) run_opt.out_dir = run_out;
    return cmd_run(run_opt, out, err);
  }
  if (fetch->parsed()) {
    if (!fetch_out.empty()) fetch_opt.dest = fetch_out;
    return cmd_fetch(fetch_opt, out, err);
  }
  if (!plot_out.empty()) plot_opt.out = plot_out;
  return cmd_plot(plot_opt, out, err);
}

}  // namespace fedcoal::cli
