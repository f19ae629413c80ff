#include "voxnas/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace voxnas::plot {

namespace {

constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                              "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string open_svg(double w, double h, const std::string& title, const std::string& comment) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  if (!comment.empty()) s << "<!-- " << escape(comment) << " -->\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << num(w / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
    << "</text>\n";
  return s.str();
}

struct Frame {
  double left = 60, top = 30, width = 480, height = 280;
  double lo = 0, hi = 1;
  double y(double v) const { return top + height - (v - lo) / (hi - lo) * height; }
};

void axes(std::ostringstream& s, const Frame& f, const std::string& y_label) {
  s << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(f.top + f.height) << "\" x2=\"" << num(f.left + f.width)
    << "\" y2=\"" << num(f.top + f.height) << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(f.top) << "\" x2=\"" << num(f.left) << "\" y2=\""
    << num(f.top + f.height) << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = f.lo + (f.hi - f.lo) * k / 4.0;
    s << "<text x=\"" << num(f.left - 4) << "\" y=\"" << num(f.y(v) + 4) << "\" text-anchor=\"end\">" << tick(v)
      << "</text>\n";
  }
  s << "<text transform=\"translate(14," << num(f.top + f.height / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(y_label) << "</text>\n";
}

void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

}  // namespace

std::string line_chart(const std::string& title, const std::vector<Series>& series, const std::string& x_label,
                       const std::string& y_label, const std::string& comment) {
  Frame f;
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  f.lo = xlo;
  f.hi = -xlo;
  for (const auto& sr : series) {
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      if (!std::isfinite(sr.y[i])) continue;
      xlo = std::min(xlo, sr.x[i]);
      xhi = std::max(xhi, sr.x[i]);
      f.lo = std::min(f.lo, sr.y[i]);
      f.hi = std::max(f.hi, sr.y[i]);
    }
  }
  if (!std::isfinite(xlo)) xlo = 0, xhi = 1, f.lo = 0, f.hi = 1;
  if (!(xhi > xlo)) xhi = xlo + 1;
  pad_range(f.lo, f.hi);
  auto px = [&](double x) { return f.left + (x - xlo) / (xhi - xlo) * f.width; };

  std::ostringstream s;
  s << open_svg(f.left + f.width + 140, f.top + f.height + 40, title, comment);
  axes(s, f, y_label);
  for (int k = 0; k <= 4; ++k) {
    const double x = xlo + (xhi - xlo) * k / 4.0;
    s << "<text x=\"" << num(px(x)) << "\" y=\"" << num(f.top + f.height + 14) << "\" text-anchor=\"middle\">"
      << tick(x) << "</text>\n";
  }
  s << "<text x=\"" << num(f.left + f.width / 2) << "\" y=\"" << num(f.top + f.height + 32)
    << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& sr = series[k];
    const char* colour = kPalette[k % kPalette.size()];
    s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      if (std::isfinite(sr.y[i])) s << num(px(sr.x[i])) << ',' << num(f.y(sr.y[i])) << ' ';
    }
    s << "\"/>\n";
    const double ly = f.top + 14 + 16.0 * static_cast<double>(k);
    s << "<line x1=\"" << num(f.left + f.width + 10) << "\" y1=\"" << num(ly - 4) << "\" x2=\""
      << num(f.left + f.width + 28) << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << num(f.left + f.width + 32) << "\" y=\"" << num(ly) << "\">" << escape(sr.name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string bar_chart(const std::string& title, const std::vector<BarGroup>& bars, const std::string& y_label,
                      const std::string& comment) {
  Frame f;
  f.width = std::max(200.0, 60.0 * static_cast<double>(bars.size()));
  f.lo = 0.0;
  f.hi = 0.0;
  for (const auto& b : bars) {
    f.hi = std::max({f.hi, b.mean + b.std});
    for (double p : b.points) f.hi = std::max(f.hi, p);
  }
  if (!(f.hi > 0.0)) f.hi = 1.0;
  f.hi *= 1.05;
  std::ostringstream s;
  s << open_svg(f.left + f.width + 20, f.top + f.height + 50, title, comment);
  axes(s, f, y_label);
  const double slot = f.width / static_cast<double>(std::max<std::size_t>(bars.size(), 1));
  for (std::size_t k = 0; k < bars.size(); ++k) {
    const auto& b = bars[k];
    const double cx = f.left + slot * (static_cast<double>(k) + 0.5);
    const char* colour = kPalette[k % kPalette.size()];
    s << "<rect x=\"" << num(cx - slot * 0.3) << "\" y=\"" << num(f.y(b.mean)) << "\" width=\"" << num(slot * 0.6)
      << "\" height=\"" << num(f.y(0) - f.y(b.mean)) << "\" fill=\"" << colour << "\" fill-opacity=\"0.6\"/>\n";
    s << "<line x1=\"" << num(cx) << "\" y1=\"" << num(f.y(std::max(0.0, b.mean - b.std))) << "\" x2=\"" << num(cx)
      << "\" y2=\"" << num(f.y(b.mean + b.std)) << "\" stroke=\"black\"/>\n";
    for (double p : b.points) {
      s << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(f.y(p)) << "\" r=\"2.5\" fill=\"black\"/>\n";
    }
    s << "<text x=\"" << num(cx) << "\" y=\"" << num(f.top + f.height + 14) << "\" text-anchor=\"middle\">"
      << escape(b.label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string heatmap_grid(const std::string& title, const std::vector<HeatPanel>& panels, const std::string& comment) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : panels) {
    if (p.values.size() == 0) continue;
    lo = std::min(lo, p.values.minCoeff());
    hi = std::max(hi, p.values.maxCoeff());
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (!(hi > lo)) hi = lo + 1;
  const double cell = 14.0, gap = 24.0;
  double width = gap, height = 0.0;
  for (const auto& p : panels) {
    width += cell * static_cast<double>(p.values.cols()) + gap;
    height = std::max(height, cell * static_cast<double>(p.values.rows()));
  }
  std::ostringstream s;
  s << open_svg(std::max(width, 200.0), height + 70, title, comment);
  double x0 = gap;
  for (const auto& p : panels) {
    s << "<text x=\"" << num(x0) << "\" y=\"42\">" << escape(p.title) << "</text>\n";
    for (Eigen::Index r = 0; r < p.values.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.values.cols(); ++c) {
        const double t = (p.values(r, c) - lo) / (hi - lo);
        // blue -> white -> red
        const int red = t < 0.5 ? static_cast<int>(255 * 2 * t) : 255;
        const int blue = t < 0.5 ? 255 : static_cast<int>(255 * 2 * (1 - t));
        const int green = std::min(red, blue);
        s << "<rect x=\"" << num(x0 + cell * static_cast<double>(c)) << "\" y=\""
          << num(50 + cell * static_cast<double>(r)) << "\" width=\"" << num(cell) << "\" height=\"" << num(cell)
          << "\" fill=\"rgb(" << red << ',' << green << ',' << blue << ")\"/>\n";
      }
    }
    x0 += cell * static_cast<double>(p.values.cols()) + gap;
  }
  s << "<text x=\"" << num(gap) << "\" y=\"" << num(height + 66) << "\">scale " << tick(lo) << " .. " << tick(hi)
    << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace voxnas::plot
