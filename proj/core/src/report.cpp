#include "seranet/report.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

namespace seranet {

namespace {

std::string fixed(double v, int digits = 4) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string pad_right(std::string s, std::size_t n) {
    if (s.size() < n) s.append(n - s.size(), ' ');
    return s;
}

std::string pad_left(std::string s, std::size_t n) {
    if (s.size() < n) s.insert(0, n - s.size(), ' ');
    return s;
}

std::string noise_label(double noise) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g%% noise", noise * 100.0);
    return buf;
}

std::string xml_escape(const std::string& s) {
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

std::string format_dice_table(const std::string& title, const std::vector<TableRow>& rows) {
    std::set<double> levels;
    std::size_t label_w = 6;
    for (const auto& r : rows) {
        label_w = std::max(label_w, r.label.size());
        for (const auto& [noise, _] : r.by_noise) levels.insert(noise);
    }
    constexpr std::size_t cell = 8;
    const std::size_t group_w = 4 * cell;

    std::ostringstream out;
    out << title << '\n';
    std::string header1 = pad_right("", label_w) + " |";
    std::string header2 = pad_right("Method", label_w) + " |";
    for (double n : levels) {
        header1 += pad_right(" " + noise_label(n), group_w) + " |";
        header2 += pad_left("CSF", cell) + pad_left("GM", cell) + pad_left("WM", cell) +
                   pad_left("Aver.", cell) + " |";
    }
    out << header1 << '\n' << header2 << '\n' << std::string(header2.size(), '-') << '\n';
    for (const auto& r : rows) {
        std::string line = pad_right(r.label, label_w) + " |";
        for (double n : levels) {
            auto it = r.by_noise.find(n);
            if (it == r.by_noise.end()) {
                line += pad_left("-", cell) + pad_left("-", cell) + pad_left("-", cell) + pad_left("-", cell);
            } else {
                for (double v : it->second.per_class) line += pad_left(fixed(v), cell);
                line += pad_left(fixed(it->second.average), cell);
            }
            line += " |";
        }
        out << line << '\n';
    }
    return out.str();
}

std::string published_reference_block() {
    return R"(PUBLISHED REFERENCE VALUES (not reproduced by this code)
Column order of each table is kept as printed.

Loss ablation          |          10% noise              |          20% noise
                       |  CSF     GM      WM      Aver.  |  CSF     GM      WM      Aver.
l_ce(s_T)+l_2(x_T)     | 0.8048  0.8841  0.8518  0.8469 | 0.7995  0.8751  0.8092  0.8279
sum_t l_ce(s_t)        | 0.8513  0.9082  0.8796  0.8797 | 0.8041  0.8733  0.8283  0.8352
l_ce(s_T)              | 0.8482  0.9102  0.8814  0.8799 | 0.8083  0.8762  0.8415  0.8423

Method comparison      |          10% noise              |          20% noise
(Pretrain, Loss)       |  CSF     WM      GM      Aver.  |  CSF     WM      GM      Aver.
One-step (No, ce)      | 0.7677  0.8334  0.7900  0.7970 | 0.7600  0.8324  0.7911  0.7945
LI-net (Yes, ce)       | 0.6849  0.7576  0.7558  0.7328 | 0.6686  0.7276  0.7282  0.7081
Syn-net (Yes, ce+l2)   | 0.7558  0.8256  0.7961  0.7925 | 0.7307  0.8095  0.7808  0.7737
SegNetMRI (Yes, ce+l2) | 0.8210  0.8905  0.8575  0.8563 | 0.7817  0.8472  0.7728  0.8006
SERANet-2 (No, ce)     | 0.8344  0.8977  0.8669  0.8663 | 0.8053  0.8706  0.8373  0.8377
SERANet-7 (No, ce)     | 0.8548  0.9175  0.8905  0.8876 | 0.8122  0.8798  0.8457  0.8459
)";
}

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series) {
    constexpr double width = 640, height = 420, left = 70, right = 170, top = 40, bottom = 60;
    double x_min = std::numeric_limits<double>::max(), x_max = std::numeric_limits<double>::lowest();
    double y_min = x_min, y_max = x_max;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    if (x_min > x_max) x_min = 0, x_max = 1, y_min = 0, y_max = 1;
    if (x_max - x_min < 1e-12) x_min -= 0.5, x_max += 0.5;
    if (y_max - y_min < 1e-6) y_min -= 0.05, y_max += 0.05;
    const double pad_y = 0.05 * (y_max - y_min);
    y_min -= pad_y;
    y_max += pad_y;

    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * plot_w; };
    auto py = [&](double y) { return top + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h; };

    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << xml_escape(title) << "</text>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = y_min + (y_max - y_min) * i / 4.0;
        out << "<text x=\"" << left - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << fixed(y, 3)
            << "</text>\n";
    }
    std::set<double> xs;
    for (const auto& s : series)
        for (const auto& p : s.points) xs.insert(p.first);
    for (double x : xs)
        out << "<text x=\"" << px(x) << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">" << x
            << "</text>\n";
    out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">"
        << xml_escape(x_label) << "</text>\n";
    out << "<text transform=\"translate(18," << top + plot_h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << xml_escape(y_label) << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = colors[k % std::size(colors)];
        auto pts = s.points;
        std::sort(pts.begin(), pts.end());
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : pts) out << px(x) << ',' << py(y) << ' ';
        out << "\"/>\n";
        for (const auto& [x, y] : pts)
            out << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        const double ly = top + 14 + 18 * static_cast<double>(k);
        out << "<line x1=\"" << left + plot_w + 15 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + plot_w + 35
            << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << left + plot_w + 40 << "\" y=\"" << ly << "\">" << xml_escape(s.name) << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace seranet
