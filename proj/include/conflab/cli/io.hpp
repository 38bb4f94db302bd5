#pragma once

// Deterministic artifact output: tables as CSV or JSON, standalone SVG line
// charts, and a manifest listing every file with its SHA-256.

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace conflab::cli {

using json = nlohmann::json;

// Shortest round-trip decimal form; identical doubles give identical bytes.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

// JSON has no NaN or infinity; they are written as null.
inline json json_number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

using Cell = std::variant<double, std::int64_t, std::string, bool>;

struct Table {
  Table() = default;
  Table(std::vector<std::string> cols) : columns(std::move(cols)) {}

  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size()) throw std::logic_error("Table::add: row width mismatch");
    rows.push_back(std::move(row));
  }
};

inline std::string cell_text(const Cell& c) {
  struct V {
    std::string operator()(double d) const { return format_double(d); }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
  };
  return std::visit(V{}, c);
}

inline std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + cell_text(row[i]);
    out += '\n';
  }
  return out;
}

inline json to_json(const Table& t) {
  json arr = json::array();
  for (const auto& row : t.rows) {
    json obj = json::object();
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, double>)
              obj[t.columns[i]] = json_number(v);
            else
              obj[t.columns[i]] = v;
          },
          row[i]);
    }
    arr.push_back(std::move(obj));
  }
  return arr;
}

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG line charts

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
};

inline std::string svg_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

inline std::string svg_line_chart(const ChartSpec& spec, const std::vector<Series>& series) {
  const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
  auto tx = [&](double v) { return spec.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double a = tx(s.x[i]), b = ty(s.y[i]);
      if (!std::isfinite(a) || !std::isfinite(b)) continue;
      x0 = std::min(x0, a);
      x1 = std::max(x1, a);
      y0 = std::min(y0, b);
      y1 = std::max(y1, b);
    }
  if (!(x1 > x0)) {
    x0 = std::isfinite(x0) ? x0 - 1 : 0;
    x1 = x0 + 2;
  }
  if (!(y1 > y0)) {
    y0 = std::isfinite(y0) ? y0 - 1 : 0;
    y1 = y0 + 2;
  }
  auto px = [&](double a) { return L + (a - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double b) { return H - B - (b - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << svg_escape(spec.title)
    << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double a = x0 + (x1 - x0) * k / 4, b = y0 + (y1 - y0) * k / 4;
    o << "<text x=\"" << px(a) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << format_double(std::round((spec.log_x ? std::pow(10, a) : a) * 1000) / 1000) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(b) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
      << format_double(std::round((spec.log_y ? std::pow(10, b) : b) * 1000) / 1000) << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << svg_escape(spec.x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\">" << svg_escape(spec.y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* col = colors[s % 6];
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      const double a = tx(series[s].x[i]), b = ty(series[s].y[i]);
      if (!std::isfinite(a) || !std::isfinite(b)) continue;
      o << (first ? "" : " ") << px(a) << "," << py(b);
      first = false;
    }
    o << "\"/>\n";
    o << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (s + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
      << col << "\">" << svg_escape(series[s].name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Output directory with manifest

enum class Format { csv, json };

inline Format parse_format(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  throw std::invalid_argument("format must be 'csv' or 'json', got '" + s + "'");
}

struct ManifestEntry {
  std::string file;
  std::string sha256;
  std::size_t bytes = 0;
};

class OutputDir {
 public:
  OutputDir(std::filesystem::path dir, Format format) : dir_(std::move(dir)), format_(format) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& path() const { return dir_; }
  Format format() const { return format_; }
  const std::vector<ManifestEntry>& entries() const { return entries_; }

  void write_text(const std::string& name, const std::string& bytes) {
    for (const auto& e : entries_)
      if (e.file == name) throw std::logic_error("output file written twice: " + name);
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + (dir_ / name).string() + " for writing");
    f << bytes;
    if (!f) throw std::runtime_error("write failed: " + (dir_ / name).string());
    entries_.push_back({name, sha256_hex(bytes), bytes.size()});
  }

  // name without extension; the extension follows the format.
  void write_table(const std::string& name, const Table& t) {
    if (format_ == Format::csv)
      write_text(name + ".csv", to_csv(t));
    else
      write_text(name + ".json", dump_json(to_json(t)));
  }

  void write_json(const std::string& name, const json& j) { write_text(name + ".json", dump_json(j)); }

  // manifest.json lists every file written so far; it is not listed in itself.
  std::string write_manifest(json header) {
    json files = json::array();
    for (const auto& e : entries_) files.push_back({{"file", e.file}, {"sha256", e.sha256}, {"bytes", e.bytes}});
    header["files"] = files;
    const std::string bytes = dump_json(header);
    std::ofstream f(dir_ / "manifest.json", std::ios::binary);
    f << bytes;
    if (!f) throw std::runtime_error("write failed: manifest.json");
    return sha256_hex(bytes);
  }

 private:
  std::filesystem::path dir_;
  Format format_;
  std::vector<ManifestEntry> entries_;
};

}  // namespace conflab::cli
