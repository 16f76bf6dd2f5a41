#include "cadlab/cli/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cadlab/error.hpp"

namespace cadlab::cli {

namespace {

constexpr double kWidth = 640;
constexpr double kHeight = 400;
constexpr double kLeft = 70;
constexpr double kRight = 70;
constexpr double kTop = 40;
constexpr double kBottom = 50;

struct Range {
  double lo;
  double hi;
};

Range range_of(const std::vector<double>& v) {
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  Range r{*lo, *hi};
  if (r.hi - r.lo < 1e-12) {
    r.lo -= 0.5;
    r.hi += 0.5;
  }
  return r;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string two_axis_plot(const std::string& title, const std::string& x_label, const std::vector<double>& x,
                          const PlotSeries& left, const PlotSeries& right) {
  require(!x.empty(), "two_axis_plot: no points");
  require(left.values.size() == x.size() && right.values.size() == x.size(),
          "two_axis_plot: series length differs from x");
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const Range rx = range_of(x);
  const Range rl = range_of(left.values);
  const Range rr = range_of(right.values);
  const auto sx = [&](double v) { return kLeft + (v - rx.lo) / (rx.hi - rx.lo) * plot_w; };
  const auto sy = [&](double v, const Range& r) { return kTop + plot_h - (v - r.lo) / (r.hi - r.lo) * plot_h; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
     << "</text>\n";
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\"" << plot_h
     << "\" fill=\"none\" stroke=\"#444\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    const double y = kTop + plot_h - f * plot_h;
    const double xv = rx.lo + f * (rx.hi - rx.lo);
    const double xp = kLeft + f * plot_w;
    os << "<line x1=\"" << kLeft << "\" y1=\"" << px(y) << "\" x2=\"" << kLeft + plot_w << "\" y2=\"" << px(y)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << px(y + 4) << "\" text-anchor=\"end\" fill=\"" << left.color
       << "\">" << num(rl.lo + f * (rl.hi - rl.lo)) << "</text>\n";
    os << "<text x=\"" << kLeft + plot_w + 6 << "\" y=\"" << px(y + 4) << "\" fill=\"" << right.color << "\">"
       << num(rr.lo + f * (rr.hi - rr.lo)) << "</text>\n";
    os << "<text x=\"" << px(xp) << "\" y=\"" << kTop + plot_h + 18 << "\" text-anchor=\"middle\">" << num(xv)
       << "</text>\n";
  }
  os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">"
     << escape(x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << kTop + plot_h / 2 << ") rotate(-90)\" text-anchor=\"middle\" fill=\""
     << left.color << "\">" << escape(left.label) << "</text>\n";
  os << "<text transform=\"translate(" << kWidth - 12 << ',' << kTop + plot_h / 2
     << ") rotate(90)\" text-anchor=\"middle\" fill=\"" << right.color << "\">" << escape(right.label)
     << "</text>\n";

  const auto polyline = [&](const PlotSeries& s, const Range& r, const char* dash) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\"" << dash << " points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) os << (i ? " " : "") << px(sx(x[i])) << ',' << px(sy(s.values[i], r));
    os << "\"/>\n";
    for (std::size_t i = 0; i < x.size(); ++i) {
      os << "<circle cx=\"" << px(sx(x[i])) << "\" cy=\"" << px(sy(s.values[i], r)) << "\" r=\"3\" fill=\""
         << s.color << "\"/>\n";
    }
  };
  polyline(left, rl, "");
  polyline(right, rr, " stroke-dasharray=\"6 4\"");
  os << "</svg>\n";
  return os.str();
}

}  // namespace cadlab::cli
