#include "poe/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace poe::svg {

namespace {

constexpr double kLeft = 70, kRight = 130, kTop = 40, kBottom = 50;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
};

class Frame {
 public:
  Frame(const Axes& a, Range x, Range y) : a_(a), x_(x), y_(y) {
    x_.settle();
    y_.settle();
  }

  double sx(double v) const { return kLeft + (v - x_.lo) / (x_.hi - x_.lo) * plot_w(); }
  double sy(double v) const { return kTop + plot_h() - (v - y_.lo) / (y_.hi - y_.lo) * plot_h(); }
  double plot_w() const { return a_.width - kLeft - kRight; }
  double plot_h() const { return a_.height - kTop - kBottom; }

  void open(std::ostringstream& os) const {
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << a_.width << "\" height=\"" << a_.height
       << "\" viewBox=\"0 0 " << a_.width << ' ' << a_.height << "\">\n"
       << "<rect x=\"0\" y=\"0\" width=\"" << a_.width << "\" height=\"" << a_.height << "\" fill=\"white\"/>\n"
       << "<text x=\"" << a_.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       << "font-size=\"15\">" << escape(a_.title) << "</text>\n";
  }

  void axes(std::ostringstream& os) const {
    const double x0 = kLeft, y0 = kTop + plot_h();
    os << "<g stroke=\"black\" stroke-width=\"1\">\n"
       << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y0) << "\" x2=\"" << px(x0 + plot_w()) << "\" y2=\"" << px(y0)
       << "\"/>\n"
       << "<line x1=\"" << px(x0) << "\" y1=\"" << px(kTop) << "\" x2=\"" << px(x0) << "\" y2=\"" << px(y0)
       << "\"/>\n</g>\n";
    os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x_.lo + (x_.hi - x_.lo) * i / 4.0;
      const double yv = y_.lo + (y_.hi - y_.lo) * i / 4.0;
      os << "<text x=\"" << px(sx(xv)) << "\" y=\"" << px(y0 + 16) << "\" text-anchor=\"middle\">" << fmt(xv)
         << "</text>\n";
      os << "<text x=\"" << px(x0 - 6) << "\" y=\"" << px(sy(yv) + 4) << "\" text-anchor=\"end\">" << fmt(yv)
         << "</text>\n";
    }
    os << "<text x=\"" << px(x0 + plot_w() / 2) << "\" y=\"" << px(y0 + 38) << "\" text-anchor=\"middle\">"
       << escape(a_.x_label) << "</text>\n";
    os << "<text x=\"16\" y=\"" << px(kTop + plot_h() / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << px(kTop + plot_h() / 2) << ")\">" << escape(a_.y_label) << "</text>\n</g>\n";
  }

  void legend(std::ostringstream& os, const std::vector<std::string>& labels) const {
    os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double y = kTop + 10 + 18.0 * static_cast<double>(i);
      const double x = a_.width - kRight + 12;
      os << "<rect x=\"" << px(x) << "\" y=\"" << px(y - 8) << "\" width=\"12\" height=\"10\" fill=\""
         << kPalette[i % 6] << "\"/>\n"
         << "<text x=\"" << px(x + 16) << "\" y=\"" << px(y + 1) << "\">" << escape(labels[i]) << "</text>\n";
    }
    os << "</g>\n";
  }

 private:
  Axes a_;
  Range x_;
  Range y_;
};

std::vector<std::string> labels_of(const std::vector<Series>& series) {
  std::vector<std::string> out;
  for (const auto& s : series) out.push_back(s.label);
  return out;
}

}  // namespace

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

std::string line_chart(const Axes& axes, const std::vector<Series>& series) {
  Range xr, yr;
  for (const auto& s : series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  const Frame f(axes, xr, yr);
  std::ostringstream os;
  f.open(os);
  f.axes(os);
  for (std::size_t k = 0; k < series.size(); ++k) {
    os << "<polyline fill=\"none\" stroke=\"" << kPalette[k % 6] << "\" stroke-width=\"1.5\" points=\"";
    const auto& s = series[k];
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << px(f.sx(s.x[i])) << ',' << px(f.sy(s.y[i])) << ' ';
    }
    os << "\"/>\n";
  }
  f.legend(os, labels_of(series));
  os << "</svg>\n";
  return os.str();
}

std::string scatter(const Axes& axes, const std::vector<Series>& series) {
  Range xr, yr;
  for (const auto& s : series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  const Frame f(axes, xr, yr);
  std::ostringstream os;
  f.open(os);
  f.axes(os);
  for (std::size_t k = 0; k < series.size(); ++k) {
    os << "<g fill=\"" << kPalette[k % 6] << "\" fill-opacity=\"0.35\">\n";
    const auto& s = series[k];
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << "<circle cx=\"" << px(f.sx(s.x[i])) << "\" cy=\"" << px(f.sy(s.y[i])) << "\" r=\"2\"/>\n";
    }
    os << "</g>\n";
  }
  f.legend(os, labels_of(series));
  os << "</svg>\n";
  return os.str();
}

std::string histogram_pair(const Axes& axes, const std::string& label_a, const std::vector<double>& a,
                           const std::string& label_b, const std::vector<double>& b, std::size_t bins) {
  Range xr;
  for (double v : a) xr.add(v);
  for (double v : b) xr.add(v);
  xr.settle();
  bins = std::max<std::size_t>(bins, 1);
  auto density = [&](const std::vector<double>& xs) {
    std::vector<double> h(bins, 0.0);
    for (double v : xs) {
      if (!std::isfinite(v)) continue;
      auto i = static_cast<std::size_t>((v - xr.lo) / (xr.hi - xr.lo) * static_cast<double>(bins));
      h[std::min(i, bins - 1)] += 1.0;
    }
    for (auto& c : h) c /= std::max<double>(1.0, static_cast<double>(xs.size()));
    return h;
  };
  const auto ha = density(a);
  const auto hb = density(b);
  Range yr;
  yr.add(0.0);
  for (double v : ha) yr.add(v);
  for (double v : hb) yr.add(v);
  const Frame f(axes, xr, yr);
  std::ostringstream os;
  f.open(os);
  f.axes(os);
  const double w = (xr.hi - xr.lo) / static_cast<double>(bins);
  int k = 0;
  for (const auto* h : {&ha, &hb}) {
    os << "<g fill=\"" << kPalette[k++] << "\" fill-opacity=\"0.45\">\n";
    for (std::size_t i = 0; i < bins; ++i) {
      const double x0 = f.sx(xr.lo + w * static_cast<double>(i));
      const double x1 = f.sx(xr.lo + w * static_cast<double>(i + 1));
      const double top = f.sy((*h)[i]);
      os << "<rect x=\"" << px(x0) << "\" y=\"" << px(top) << "\" width=\"" << px(x1 - x0) << "\" height=\""
         << px(f.sy(0.0) - top) << "\"/>\n";
    }
    os << "</g>\n";
  }
  f.legend(os, {label_a, label_b});
  os << "</svg>\n";
  return os.str();
}

std::string heat_grid(const Axes& axes, const std::vector<std::vector<double>>& cells) {
  const std::size_t rows = cells.size();
  const std::size_t cols = rows ? cells[0].size() : 0;
  Range xr, yr;
  xr.add(0.0);
  xr.add(static_cast<double>(cols));
  yr.add(0.0);
  yr.add(static_cast<double>(rows));
  const Frame f(axes, xr, yr);
  double peak = 0.0;
  for (const auto& r : cells)
    for (double v : r) peak = std::max(peak, v);
  std::ostringstream os;
  f.open(os);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const double shade = peak > 0 ? cells[r][c] / peak : 0.0;
      const int level = static_cast<int>(std::lround(255.0 * (1.0 - shade)));
      const double x0 = f.sx(static_cast<double>(c));
      const double x1 = f.sx(static_cast<double>(c + 1));
      const double y0 = f.sy(static_cast<double>(r + 1));
      const double y1 = f.sy(static_cast<double>(r));
      os << "<rect x=\"" << px(x0) << "\" y=\"" << px(y0) << "\" width=\"" << px(x1 - x0) << "\" height=\""
         << px(y1 - y0) << "\" fill=\"rgb(" << level << ',' << level << ",255)\"><title>" << fmt(cells[r][c])
         << "</title></rect>\n";
    }
  }
  f.axes(os);
  os << "</svg>\n";
  return os.str();
}

}  // namespace poe::svg
