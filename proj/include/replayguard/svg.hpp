#pragma once

// Minimal self-contained SVG charts for the report stage.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "replayguard/error.hpp"

namespace replayguard::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool dashed = false;
};

struct Bar {
  std::string label;
  double value = 0.0;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Frame {
  double w = 760, h = 360, left = 64, right = 150, top = 36, bottom = 44;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
  double py(double y) const { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); }
};

inline void axes(std::string& s, const Frame& f, const std::string& title,
                 const std::string& xlabel, const std::string& ylabel) {
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.w) + "\" height=\"" +
       num(f.h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(f.w / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
       escape(title) + "</text>\n";
  const double xl = f.left, xr = f.w - f.right, yt = f.top, yb = f.h - f.bottom;
  s += "<path d=\"M" + num(xl) + " " + num(yt) + " V" + num(yb) + " H" + num(xr) +
       "\" stroke=\"black\" fill=\"none\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    s += "<text x=\"" + num(xl - 6) + "\" y=\"" + num(f.py(yv) + 4) +
         "\" text-anchor=\"end\">" + tick(yv) + "</text>\n";
    s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(yb + 16) +
         "\" text-anchor=\"middle\">" + tick(xv) + "</text>\n";
  }
  s += "<text x=\"" + num((xl + xr) / 2) + "\" y=\"" + num(f.h - 8) +
       "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  s += "<text transform=\"translate(14 " + num((yt + yb) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + escape(ylabel) + "</text>\n";
}

}  // namespace detail

inline std::string line_chart(const std::string& title, const std::string& xlabel,
                              const std::string& ylabel, const std::vector<Series>& series) {
  detail::Frame f;
  double x0 = INFINITY, x1 = -INFINITY, y0 = 0.0, y1 = -INFINITY;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) {
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
  }
  if (!(x1 > x0)) x0 = 0, x1 = std::max(1.0, x1 + 1);
  if (!(y1 > y0)) y1 = y0 + 1;
  f.x0 = x0, f.x1 = x1, f.y0 = y0, f.y1 = y1 + 0.05 * (y1 - y0);
  std::string s;
  detail::axes(s, f, title, xlabel, ylabel);
  int legend = 0;
  for (const auto& ser : series) {
    std::string d;
    bool pen = false;
    for (std::size_t i = 0; i < ser.x.size() && i < ser.y.size(); ++i) {
      if (!std::isfinite(ser.y[i])) {
        pen = false;
        continue;
      }
      d += (pen ? " L" : " M") + detail::num(f.px(ser.x[i])) + " " + detail::num(f.py(ser.y[i]));
      pen = true;
    }
    s += "<path d=\"" + d + "\" stroke=\"" + ser.color + "\" fill=\"none\" stroke-width=\"1.2\"" +
         (ser.dashed ? " stroke-dasharray=\"5 3\"" : "") + "/>\n";
    const double ly = f.top + 14.0 * legend++;
    s += "<line x1=\"" + detail::num(f.w - f.right + 10) + "\" y1=\"" + detail::num(ly) +
         "\" x2=\"" + detail::num(f.w - f.right + 28) + "\" y2=\"" + detail::num(ly) +
         "\" stroke=\"" + ser.color + "\"/>\n";
    s += "<text x=\"" + detail::num(f.w - f.right + 32) + "\" y=\"" + detail::num(ly + 4) +
         "\">" + detail::escape(ser.name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

// Horizontal bars around a zero line; negative values drawn in red.
inline std::string bar_chart(const std::string& title, const std::string& xlabel,
                             const std::vector<Bar>& bars) {
  const double row = 22;
  detail::Frame f;
  f.left = 110;
  f.right = 40;
  f.h = f.top + f.bottom + row * static_cast<double>(std::max<std::size_t>(bars.size(), 1));
  double lo = 0.0, hi = 0.0;
  for (const auto& b : bars) lo = std::min(lo, b.value), hi = std::max(hi, b.value);
  if (hi - lo <= 0) hi = lo + 1;
  const double pad = 0.05 * (hi - lo);
  f.x0 = lo - (lo < 0 ? pad : 0), f.x1 = hi + (hi > 0 ? pad : 0);
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::num(f.w) +
       "\" height=\"" + detail::num(f.h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + detail::num(f.w / 2) +
       "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + detail::escape(title) +
       "</text>\n";
  const double zx = f.px(0.0);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double y = f.top + row * static_cast<double>(i);
    const double vx = f.px(bars[i].value);
    s += "<rect x=\"" + detail::num(std::min(zx, vx)) + "\" y=\"" + detail::num(y + 3) +
         "\" width=\"" + detail::num(std::abs(vx - zx)) + "\" height=\"" +
         detail::num(row - 6) + "\" fill=\"" + (bars[i].value < 0 ? "#d62728" : "#1f77b4") +
         "\"/>\n";
    s += "<text x=\"" + detail::num(f.left - 6) + "\" y=\"" + detail::num(y + row / 2 + 4) +
         "\" text-anchor=\"end\">" + detail::escape(bars[i].label) + "</text>\n";
  }
  const double yb = f.h - f.bottom;
  s += "<line x1=\"" + detail::num(zx) + "\" y1=\"" + detail::num(f.top) + "\" x2=\"" +
       detail::num(zx) + "\" y2=\"" + detail::num(yb) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    s += "<text x=\"" + detail::num(f.px(xv)) + "\" y=\"" + detail::num(yb + 16) +
         "\" text-anchor=\"middle\">" + detail::tick(xv) + "</text>\n";
  }
  s += "<text x=\"" + detail::num((f.left + f.w - f.right) / 2) + "\" y=\"" +
       detail::num(f.h - 8) + "\" text-anchor=\"middle\">" + detail::escape(xlabel) +
       "</text>\n";
  s += "</svg>\n";
  return s;
}

inline void write(const std::string& path, const std::string& doc) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::kConfig, "cannot open '" + path + "' for writing");
  os << doc;
}

}  // namespace replayguard::svg
