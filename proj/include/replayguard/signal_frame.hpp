#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "replayguard/error.hpp"

namespace replayguard {

inline constexpr std::size_t kSignalCount = 8;

// Column order of the monitored reactor signals. The order is also the
// feature order of model inputs.
enum class Signal : std::size_t {
  kNCounts = 0,
  kNRate,
  kSs1Pos,
  kSs2Pos,
  kRrPos,
  kSs1Active,
  kSs2Active,
  kRrActive,
};

inline constexpr std::array<std::string_view, kSignalCount> kSignalNames = {
    "n_counts",  "n_rate",     "ss1_pos",    "ss2_pos",
    "rr_pos",    "ss1_active", "ss2_active", "rr_active"};

inline constexpr std::size_t kRodCount = 3;

constexpr std::size_t to_index(Signal s) { return static_cast<std::size_t>(s); }

constexpr Signal position_signal(std::size_t rod) {
  return static_cast<Signal>(to_index(Signal::kSs1Pos) + rod);
}

constexpr Signal active_signal(std::size_t rod) {
  return static_cast<Signal>(to_index(Signal::kSs1Active) + rod);
}

constexpr bool is_active_signal(std::size_t column) {
  return column >= to_index(Signal::kSs1Active);
}

inline std::optional<Signal> signal_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kSignalCount; ++i) {
    if (kSignalNames[i] == name) return static_cast<Signal>(i);
  }
  return std::nullopt;
}

enum class Label : std::uint8_t { kNormal, kAnomalous, kUndetectable };

inline std::string_view label_name(Label l) {
  switch (l) {
    case Label::kNormal:
      return "normal";
    case Label::kAnomalous:
      return "anomalous";
    case Label::kUndetectable:
      return "undetectable";
  }
  return "normal";
}

inline std::optional<Label> label_from_name(std::string_view s) {
  if (s == "normal") return Label::kNormal;
  if (s == "anomalous") return Label::kAnomalous;
  if (s == "undetectable") return Label::kUndetectable;
  return std::nullopt;
}

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

using SignalRow = std::array<double, kSignalCount>;

// Column-major table of the eight signals at 1 Hz. Missing cells hold NaN.
struct SignalFrame {
  std::vector<std::int64_t> index;
  std::array<std::vector<double>, kSignalCount> columns;
  std::vector<Label> label;

  std::size_t size() const { return index.size(); }
  bool empty() const { return index.empty(); }

  std::vector<double>& column(Signal s) { return columns[to_index(s)]; }
  const std::vector<double>& column(Signal s) const {
    return columns[to_index(s)];
  }

  double at(std::size_t row, Signal s) const {
    return columns[to_index(s)][row];
  }

  void reserve(std::size_t n) {
    index.reserve(n);
    label.reserve(n);
    for (auto& c : columns) c.reserve(n);
  }

  void push_row(std::int64_t idx, const SignalRow& values,
                Label l = Label::kNormal) {
    index.push_back(idx);
    for (std::size_t i = 0; i < kSignalCount; ++i) {
      columns[i].push_back(values[i]);
    }
    label.push_back(l);
  }

  SignalRow row(std::size_t r) const {
    SignalRow out{};
    for (std::size_t i = 0; i < kSignalCount; ++i) out[i] = columns[i][r];
    return out;
  }

  bool row_has_missing(std::size_t r) const {
    for (const auto& c : columns) {
      if (is_missing(c[r])) return true;
    }
    return false;
  }

  // Rows [begin, end).
  SignalFrame slice(std::size_t begin, std::size_t end) const {
    SignalFrame out;
    const auto b = static_cast<std::ptrdiff_t>(begin);
    const auto e = static_cast<std::ptrdiff_t>(end);
    out.index.assign(index.begin() + b, index.begin() + e);
    out.label.assign(label.begin() + b, label.begin() + e);
    for (std::size_t i = 0; i < kSignalCount; ++i) {
      out.columns[i].assign(columns[i].begin() + b, columns[i].begin() + e);
    }
    return out;
  }

  void append(const SignalFrame& other) {
    index.insert(index.end(), other.index.begin(), other.index.end());
    label.insert(label.end(), other.label.begin(), other.label.end());
    for (std::size_t i = 0; i < kSignalCount; ++i) {
      columns[i].insert(columns[i].end(), other.columns[i].begin(),
                        other.columns[i].end());
    }
  }

  // Index strictly increasing, active states ternary, columns aligned.
  bool well_formed() const {
    for (const auto& c : columns) {
      if (c.size() != index.size()) return false;
    }
    if (label.size() != index.size()) return false;
    for (std::size_t r = 1; r < index.size(); ++r) {
      if (index[r] <= index[r - 1]) return false;
    }
    for (std::size_t rod = 0; rod < kRodCount; ++rod) {
      for (double d : column(active_signal(rod))) {
        if (!is_missing(d) && d != -1.0 && d != 0.0 && d != 1.0) return false;
      }
    }
    return true;
  }
};

// Indices where a new contiguous run starts (0 is always a run start).
inline bool continues_run(const std::vector<std::int64_t>& index,
                          std::size_t r) {
  return r > 0 && index[r] == index[r - 1] + 1;
}

// ---------------------------------------------------------------------------
// CSV dataset format:
//   index,n_counts,n_rate,ss1_pos,ss2_pos,rr_pos,ss1_active,ss2_active,
//   rr_active,label
// Missing values are empty fields.

inline constexpr std::string_view kCsvHeader =
    "index,n_counts,n_rate,ss1_pos,ss2_pos,rr_pos,ss1_active,ss2_active,"
    "rr_active,label";

inline void append_number(std::string& out, double v) {
  if (is_missing(v)) return;
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline void append_number(std::string& out, std::int64_t v) {
  char buf[24];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline std::string format_csv_row(const SignalFrame& f, std::size_t r) {
  std::string line;
  append_number(line, f.index[r]);
  for (std::size_t i = 0; i < kSignalCount; ++i) {
    line.push_back(',');
    append_number(line, f.columns[i][r]);
  }
  line.push_back(',');
  line.append(label_name(f.label[r]));
  return line;
}

inline void write_csv(std::ostream& os, const SignalFrame& f) {
  os << kCsvHeader << '\n';
  for (std::size_t r = 0; r < f.size(); ++r) os << format_csv_row(f, r) << '\n';
}

inline void write_csv(const std::string& path, const SignalFrame& f) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::kConfig,
          "cannot open '" + path + "' for writing");
  write_csv(os, f);
}

struct CsvRow {
  std::int64_t index = 0;
  SignalRow values{};
  Label label = Label::kNormal;
};

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    return std::nullopt;
  }
  return v;
}

// Parses one data row. Returns nullopt and fills `why` on malformed input.
// An absent label column defaults to normal so that live streams without
// ground truth are accepted.
inline std::optional<CsvRow> parse_csv_row(std::string_view line,
                                           std::string* why = nullptr) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::array<std::string_view, kSignalCount + 2> fields{};
  std::size_t n = 0;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (n == fields.size()) {
      if (why) *why = "too many fields";
      return std::nullopt;
    }
    fields[n++] = line.substr(start, comma == std::string_view::npos
                                         ? std::string_view::npos
                                         : comma - start);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (n != kSignalCount + 1 && n != kSignalCount + 2) {
    if (why) *why = "expected 9 or 10 fields, got " + std::to_string(n);
    return std::nullopt;
  }
  CsvRow row;
  auto idx = fields[0];
  auto res = std::from_chars(idx.data(), idx.data() + idx.size(), row.index);
  if (res.ec != std::errc() || res.ptr != idx.data() + idx.size()) {
    if (why) *why = "bad index '" + std::string(idx) + "'";
    return std::nullopt;
  }
  for (std::size_t i = 0; i < kSignalCount; ++i) {
    const auto field = fields[i + 1];
    if (field.empty()) {
      row.values[i] = kMissing;
      continue;
    }
    auto v = parse_double(field);
    if (!v) {
      if (why) {
        *why = "bad value '" + std::string(field) + "' in column " +
               std::string(kSignalNames[i]);
      }
      return std::nullopt;
    }
    row.values[i] = *v;
  }
  if (n == kSignalCount + 2 && !fields[kSignalCount + 1].empty()) {
    auto l = label_from_name(fields[kSignalCount + 1]);
    if (!l) {
      if (why) *why = "bad label '" + std::string(fields[kSignalCount + 1]) + "'";
      return std::nullopt;
    }
    row.label = *l;
  }
  return row;
}

inline bool is_csv_header(std::string_view line) {
  return line.substr(0, 6) == "index,";
}

inline SignalFrame read_csv(std::istream& is, const std::string& source = "csv") {
  SignalFrame f;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (line_no == 1 && is_csv_header(line)) continue;
    std::string why;
    auto row = parse_csv_row(line, &why);
    require(row.has_value(), ErrorKind::kFormat,
            source + ":" + std::to_string(line_no) + ": " + why);
    require(f.empty() || row->index > f.index.back(), ErrorKind::kFormat,
            source + ":" + std::to_string(line_no) +
                ": index not strictly increasing");
    f.push_row(row->index, row->values, row->label);
  }
  return f;
}

inline SignalFrame read_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kDependency,
          "cannot open dataset '" + path + "'");
  return read_csv(is, path);
}

}  // namespace replayguard
