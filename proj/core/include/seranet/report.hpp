#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seranet/training.hpp"

namespace seranet {

/// One table row: a method (or loss variant) with Dice per noise level.
struct TableRow {
    std::string label;
    std::map<double, DiceScores> by_noise;
};

/// Fixed-width text table, one column group (CSF GM WM Aver.) per noise
/// level, sorted by ascending noise. Missing cells print as "-".
std::string format_dice_table(const std::string& title, const std::vector<TableRow>& rows);

/// Published numbers for side-by-side reading; not produced by this code.
std::string published_reference_block();

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;  // (x, y)
};

/// Minimal standalone SVG line chart.
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series);

}  // namespace seranet
