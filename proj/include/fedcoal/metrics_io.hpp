#pragma once

// RoundRecord export (CSV, JSON), CSV read-back and the SVG accuracy plot.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "fedcoal/config.hpp"
#include "fedcoal/error.hpp"
#include "fedcoal/simulator.hpp"

namespace fedcoal {

inline constexpr std::string_view kCsvHeader =
    "round,test_accuracy,test_loss,strategy,coalition_sizes,center_ids,wall_ms";

/// Shortest representation that round-trips.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

namespace detail {

template <typename T>
std::string join(const std::vector<T>& xs, char sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace detail

/// One line per record; list fields are ';'-separated and empty for fedavg.
inline void write_csv(std::ostream& out, const std::vector<RoundRecord>& records) {
  for (const auto& r : records) {
    out << r.round << ',' << format_double(r.test_accuracy) << ',' << format_double(r.test_loss) << ','
        << r.strategy << ',' << detail::join(r.coalition_sizes, ';') << ','
        << detail::join(r.center_ids, ';') << ',' << (r.wall_ms ? format_double(*r.wall_ms) : "") << '\n';
  }
}

inline std::string to_csv(const std::vector<StrategyRun>& runs) {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& run : runs) write_csv(out, run.records);
  return out.str();
}

inline nlohmann::json record_json(const RoundRecord& r) {
  nlohmann::json j;
  j["round"] = r.round;
  j["test_accuracy"] = r.test_accuracy;
  j["test_loss"] = r.test_loss;
  j["strategy"] = r.strategy;
  j["coalition_sizes"] = r.coalition_sizes;
  j["center_ids"] = r.center_ids;
  j["wall_ms"] = r.wall_ms ? nlohmann::json(*r.wall_ms) : nlohmann::json(nullptr);
  j["client_train_loss"] = r.client_train_loss;
  j["barycenter_distances"] = r.barycenter_distances;
  return j;
}

/// {"config": {...effective keys...}, "records": [...]} with records in CSV row order.
inline std::string to_json(const ConfigDocument& doc, const std::vector<StrategyRun>& runs) {
  nlohmann::json root;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : doc.entries()) cfg[k] = v.value;
  root["config"] = std::move(cfg);
  root["records"] = nlohmann::json::array();
  for (const auto& run : runs) {
    for (const auto& r : run.records) root["records"].push_back(record_json(r));
  }
  return root.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Read-back and plotting

struct AccuracySeries {
  std::string label;
  std::vector<std::uint64_t> rounds;
  std::vector<double> accuracy;
};

/// Parses a metrics CSV into one series per strategy, labelled
/// "<stem>:<strategy>" (or "<stem>" when the file holds one strategy).
inline std::vector<AccuracySeries> read_metrics_csv(std::string_view text, const std::string& stem) {
  std::vector<std::string> lines;
  {
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto eol = text.find('\n', pos);
      if (eol == std::string_view::npos) eol = text.size();
      std::string line(text.substr(pos, eol - pos));
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) lines.push_back(std::move(line));
      pos = eol + 1;
    }
  }
  if (lines.empty()) throw InvalidArgument(stem + ": empty CSV");
  if (lines.front() != kCsvHeader) {
    throw InvalidArgument(stem + ": column mismatch, expected header '" + std::string(kCsvHeader) + "'");
  }
  if (lines.size() == 1) throw InvalidArgument(stem + ": CSV has no rows");

  std::vector<AccuracySeries> series;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> cols;
    std::stringstream ss(lines[i]);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (!lines[i].empty() && lines[i].back() == ',') cols.emplace_back();
    if (cols.size() != 7) {
      throw InvalidArgument(stem + ": row " + std::to_string(i + 1) + " has " + std::to_string(cols.size()) +
                            " columns, expected 7");
    }
    std::uint64_t round = 0;
    double acc = 0.0;
    const auto r1 = std::from_chars(cols[0].data(), cols[0].data() + cols[0].size(), round);
    const auto r2 = std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), acc);
    if (r1.ec != std::errc{} || r2.ec != std::errc{}) {
      throw InvalidArgument(stem + ": row " + std::to_string(i + 1) + " is not numeric");
    }
    auto it = std::find_if(series.begin(), series.end(), [&](const auto& s) { return s.label == cols[3]; });
    if (it == series.end()) {
      series.push_back({cols[3], {}, {}});
      it = series.end() - 1;
    }
    it->rounds.push_back(round);
    it->accuracy.push_back(acc);
  }
  for (auto& s : series) s.label = series.size() == 1 ? stem : stem + ":" + s.label;
  return series;
}

/// round,<label1>,<label2>,... Requires every series to share the round column.
inline std::string merged_csv(const std::vector<AccuracySeries>& series) {
  if (series.empty()) throw InvalidArgument("merge: no series");
  for (const auto& s : series) {
    if (s.rounds != series.front().rounds) {
      throw InvalidArgument("merge: series '" + s.label + "' does not share the round column of '" +
                            series.front().label + "'");
    }
  }
  std::ostringstream out;
  out << "round";
  for (const auto& s : series) out << ',' << s.label;
  out << '\n';
  for (std::size_t i = 0; i < series.front().rounds.size(); ++i) {
    out << series.front().rounds[i];
    for (const auto& s : series) out << ',' << format_double(s.accuracy[i]);
    out << '\n';
  }
  return out.str();
}

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

}  // namespace detail

/// Accuracy vs round line chart, one polyline per series.
inline std::string accuracy_svg(const std::vector<AccuracySeries>& series, const std::string& title) {
  constexpr double width = 720, height = 440;
  constexpr double left = 64, right = 180, top = 40, bottom = 56;
  constexpr double plot_w = width - left - right, plot_h = height - top - bottom;
  static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                            "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::uint64_t r_min = ~std::uint64_t{0}, r_max = 0;
  for (const auto& s : series) {
    for (auto r : s.rounds) {
      r_min = std::min(r_min, r);
      r_max = std::max(r_max, r);
    }
  }
  if (r_min > r_max) r_min = r_max = 0;
  const double span = r_max > r_min ? static_cast<double>(r_max - r_min) : 1.0;
  const auto x_of = [&](double r) { return left + (r - static_cast<double>(r_min)) / span * plot_w; };
  const auto y_of = [&](double acc) { return top + (1.0 - std::clamp(acc, 0.0, 1.0)) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
      << detail::xml_escape(title) << "</text>\n";

  for (int i = 0; i <= 10; ++i) {
    const double acc = i / 10.0;
    const double y = y_of(acc);
    svg << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + plot_w << "\" y2=\"" << y
        << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << detail::fixed(acc, 1)
        << "</text>\n";
  }
  const std::uint64_t ticks = std::min<std::uint64_t>(10, r_max - r_min);
  for (std::uint64_t i = 0; i <= ticks; ++i) {
    const double r = static_cast<double>(r_min) + (ticks ? span * static_cast<double>(i) / static_cast<double>(ticks) : 0.0);
    svg << "<text x=\"" << x_of(r) << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">"
        << detail::fixed(r, 0) << "</text>\n";
  }
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 14 << "\" text-anchor=\"middle\">round</text>\n";
  svg << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << top + plot_h / 2 << ")\">test accuracy</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % std::size(palette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].rounds.size(); ++i) {
      if (i) svg << ' ';
      svg << detail::fixed(x_of(static_cast<double>(series[s].rounds[i])), 2) << ','
          << detail::fixed(y_of(series[s].accuracy[i]), 2);
    }
    svg << "\"/>\n";
    const double ly = top + 12 + 20.0 * static_cast<double>(s);
    svg << "<line x1=\"" << left + plot_w + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + plot_w + 36
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + plot_w + 42 << "\" y=\"" << ly + 4 << "\">" << detail::xml_escape(series[s].label)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace fedcoal
