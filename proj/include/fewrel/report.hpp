#pragma once

// Evaluation reports: one cell per (model, N, K, domain, NOTA rate) with the
// accuracy mean over repeats and its dispersion, rendered as CSV, JSON,
// a markdown accuracy grid, or an SVG accuracy-vs-NOTA-rate chart.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

namespace fewrel {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kDispersionNote =
    "± is the standard deviation of mean accuracy across independent seeded repeats "
    "(sample standard deviation, n-1 denominator; 0 for a single repeat)";

struct EvalCell {
  std::string model;
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
  std::string domain;
  double nota_rate = 0.0;
  double acc_mean = 0.0;  // percent
  double acc_std = 0.0;   // percent
  std::size_t episodes = 0;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  // Totals over all repeats.
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t nota_queries = 0;

  bool operator==(const EvalCell&) const = default;
};

struct EvalReport {
  std::vector<EvalCell> cells;
  bool operator==(const EvalReport&) const = default;
};

/// "74.52±0.07".
inline std::string format_cell(double mean, double disp) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", mean, disp);
  return buf;
}

namespace report_detail {

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string pct(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g%%", rate * 100.0);
  return buf;
}

template <class T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

}  // namespace report_detail

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> kCols = {"model",    "N",       "K",           "domain", "nota_rate",
                                                 "acc_mean", "acc_std", "episodes",    "repeats", "seed",
                                                 "config_hash", "correct", "total", "nota_queries"};
  return kCols;
}

inline std::string report_to_csv(const EvalReport& r) {
  using namespace report_detail;
  std::string out;
  for (std::size_t i = 0; i < csv_columns().size(); ++i) out += (i ? "," : "") + csv_columns()[i];
  out += "\n";
  for (const auto& c : r.cells) {
    out += csv_field(c.model) + "," + std::to_string(c.n_way) + "," + std::to_string(c.k_shot) + "," +
           csv_field(c.domain) + "," + g17(c.nota_rate) + "," + g17(c.acc_mean) + "," + g17(c.acc_std) + "," +
           std::to_string(c.episodes) + "," + std::to_string(c.repeats) + "," + std::to_string(c.seed) + "," +
           csv_field(c.config_hash) + "," + std::to_string(c.correct) + "," + std::to_string(c.total) + "," +
           std::to_string(c.nota_queries) + "\n";
  }
  return out;
}

inline EvalReport report_from_csv(const std::string& text) {
  using namespace report_detail;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw ReportError("csv report: empty input");
  if (csv_split(line) != csv_columns()) throw ReportError("csv report: unexpected header");
  EvalReport r;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != csv_columns().size()) throw ReportError("csv report: wrong field count");
    try {
      EvalCell c;
      c.model = f[0];
      c.n_way = std::stoul(f[1]);
      c.k_shot = std::stoul(f[2]);
      c.domain = f[3];
      c.nota_rate = std::stod(f[4]);
      c.acc_mean = std::stod(f[5]);
      c.acc_std = std::stod(f[6]);
      c.episodes = std::stoul(f[7]);
      c.repeats = std::stoul(f[8]);
      c.seed = std::stoull(f[9]);
      c.config_hash = f[10];
      c.correct = std::stoul(f[11]);
      c.total = std::stoul(f[12]);
      c.nota_queries = std::stoul(f[13]);
      r.cells.push_back(std::move(c));
    } catch (const std::logic_error& e) {
      throw ReportError(std::string("csv report: bad field: ") + e.what());
    }
  }
  return r;
}

inline nlohmann::ordered_json report_to_json_value(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["dispersion"] = kDispersionNote;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : r.cells) {
    nlohmann::ordered_json cj;
    cj["model"] = c.model;
    cj["N"] = c.n_way;
    cj["K"] = c.k_shot;
    cj["domain"] = c.domain;
    cj["nota_rate"] = c.nota_rate;
    cj["acc_mean"] = c.acc_mean;
    cj["acc_std"] = c.acc_std;
    cj["cell"] = format_cell(c.acc_mean, c.acc_std);
    cj["episodes"] = c.episodes;
    cj["repeats"] = c.repeats;
    cj["seed"] = c.seed;
    cj["config_hash"] = c.config_hash;
    cj["correct"] = c.correct;
    cj["total"] = c.total;
    cj["nota_queries"] = c.nota_queries;
    j["cells"].push_back(std::move(cj));
  }
  return j;
}

inline std::string report_to_json(const EvalReport& r) { return report_to_json_value(r).dump(2) + "\n"; }

inline EvalReport report_from_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& cj : j.at("cells")) {
      EvalCell c;
      c.model = cj.at("model").get<std::string>();
      c.n_way = cj.at("N").get<std::size_t>();
      c.k_shot = cj.at("K").get<std::size_t>();
      c.domain = cj.at("domain").get<std::string>();
      c.nota_rate = cj.at("nota_rate").get<double>();
      c.acc_mean = cj.at("acc_mean").get<double>();
      c.acc_std = cj.at("acc_std").get<double>();
      c.episodes = cj.at("episodes").get<std::size_t>();
      c.repeats = cj.at("repeats").get<std::size_t>();
      c.seed = cj.at("seed").get<std::uint64_t>();
      c.config_hash = cj.at("config_hash").get<std::string>();
      c.correct = cj.value("correct", std::size_t{0});
      c.total = cj.value("total", std::size_t{0});
      c.nota_queries = cj.value("nota_queries", std::size_t{0});
      r.cells.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("json report: ") + e.what());
  }
  return r;
}

/// Model-by-column accuracy grid. Columns are (N, K, domain, NOTA rate) in
/// first-appearance order; the domain and rate appear in the column label
/// only when the report has more than one of them.
inline std::string report_to_markdown(const EvalReport& r) {
  using namespace report_detail;
  if (r.cells.empty()) throw ReportError("markdown report: no cells");
  using Col = std::tuple<std::size_t, std::size_t, std::string, double>;
  std::vector<std::string> models, domains;
  std::vector<double> rates;
  std::vector<Col> cols;
  for (const auto& c : r.cells) {
    push_unique(models, c.model);
    push_unique(domains, c.domain);
    push_unique(rates, c.nota_rate);
    push_unique(cols, Col{c.n_way, c.k_shot, c.domain, c.nota_rate});
  }
  auto label = [&](const Col& col) {
    std::string s = std::to_string(std::get<0>(col)) + "-Way " + std::to_string(std::get<1>(col)) + "-Shot";
    if (domains.size() > 1) s += " On " + std::get<2>(col);
    if (rates.size() > 1 || std::get<3>(col) > 0.0) s += " " + pct(std::get<3>(col)) + " NOTA";
    return s;
  };
  std::ostringstream os;
  os << "| Model |";
  for (const auto& col : cols) os << ' ' << label(col) << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& m : models) {
    os << "| " << m << " |";
    for (const auto& col : cols) {
      auto it = std::find_if(r.cells.begin(), r.cells.end(), [&](const EvalCell& c) {
        return c.model == m && Col{c.n_way, c.k_shot, c.domain, c.nota_rate} == col;
      });
      os << ' ' << (it == r.cells.end() ? std::string("-") : format_cell(it->acc_mean, it->acc_std)) << " |";
    }
    os << '\n';
  }
  const auto& f = r.cells.front();
  os << "\nAccuracy (%) over " << f.episodes << " episodes x " << f.repeats << " repeats, seed " << f.seed
     << ", config " << f.config_hash << ". " << kDispersionNote << ".\n";
  return os.str();
}

/// Accuracy-vs-NOTA-rate chart: one polyline per (model, N, K, domain) series.
inline std::string report_to_svg(const EvalReport& r) {
  using namespace report_detail;
  if (r.cells.empty()) throw ReportError("svg report: no cells");
  using Key = std::tuple<std::string, std::size_t, std::size_t, std::string>;
  std::vector<Key> series;
  std::vector<std::string> domains;
  for (const auto& c : r.cells) {
    push_unique(series, Key{c.model, c.n_way, c.k_shot, c.domain});
    push_unique(domains, c.domain);
  }
  const double w = 640, h = 400, left = 60, right = 180, top = 30, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](double rate) { return left + rate * pw; };
  auto py = [&](double acc) { return top + (1.0 - acc / 100.0) * ph; };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double acc = 20.0 * t;
    os << "<text x=\"" << left - 8 << "\" y=\"" << py(acc) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
       << static_cast<int>(acc) << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const double rate = 0.25 * t;
    os << "<text x=\"" << px(rate) << "\" y=\"" << top + ph + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
       << pct(rate) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" font-size=\"12\" text-anchor=\"middle\">NOTA rate</text>\n";
  os << "<text x=\"15\" y=\"" << top + ph / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
     << top + ph / 2 << ")\">Accuracy (%)</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    std::vector<const EvalCell*> pts;
    for (const auto& c : r.cells)
      if (Key{c.model, c.n_way, c.k_shot, c.domain} == series[s]) pts.push_back(&c);
    std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->nota_rate < b->nota_rate; });
    const char* color = kColors[s % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      os << (i ? " " : "") << px(pts[i]->nota_rate) << ',' << py(pts[i]->acc_mean);
    os << "\"/>\n";
    std::string name = std::get<0>(series[s]) + " " + std::to_string(std::get<1>(series[s])) + "-way " +
                       std::to_string(std::get<2>(series[s])) + "-shot";
    if (domains.size() > 1) name += " (" + std::get<3>(series[s]) + ")";
    const double ly = top + 16.0 * static_cast<double>(s);
    os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

enum class ReportFormat { csv, json, markdown, svg };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  if (s == "svg" || s == "svg-chart") return ReportFormat::svg;
  throw ReportError("unknown report format '" + s + "'");
}

inline std::string render_report(const EvalReport& r, ReportFormat f) {
  if (r.cells.empty()) throw ReportError("report has no cells");
  switch (f) {
    case ReportFormat::csv: return report_to_csv(r);
    case ReportFormat::json: return report_to_json(r);
    case ReportFormat::markdown: return report_to_markdown(r);
    case ReportFormat::svg: return report_to_svg(r);
  }
  return {};
}

inline void emit_report(const EvalReport& r, ReportFormat f, const std::string& path) {
  const std::string text = render_report(r, f);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ReportError("cannot write report '" + path + "'");
  out << text;
  if (!out) throw ReportError("failed writing report '" + path + "'");
}

/// Reads a report written as JSON or CSV (detected from the first character).
inline EvalReport read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReportError("cannot open report '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return report_from_json(text);
  return report_from_csv(text);
}

}  // namespace fewrel
