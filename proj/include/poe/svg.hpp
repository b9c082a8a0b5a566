#pragma once

// Minimal SVG figures: line charts, paired histograms, scatter and heat
// grids. Output is a standalone XML document with width/height set.

#include <string>
#include <vector>

namespace poe::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 420;
};

std::string line_chart(const Axes& axes, const std::vector<Series>& series);
std::string scatter(const Axes& axes, const std::vector<Series>& series);

// Two histograms over shared bins, drawn as overlapping translucent bars.
std::string histogram_pair(const Axes& axes, const std::string& label_a, const std::vector<double>& a,
                           const std::string& label_b, const std::vector<double>& b, std::size_t bins);

// cells[row][col]; row 0 is drawn at the bottom.
std::string heat_grid(const Axes& axes, const std::vector<std::vector<double>>& cells);

std::string escape(const std::string& text);

}  // namespace poe::svg
