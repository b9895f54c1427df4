#include "seranet/phantom.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seranet/common.hpp"

namespace seranet {

namespace {

constexpr double kPi = std::numbers::pi;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

Tissue tissue_from_name(const std::string& name) {
    const auto n = lower(name);
    if (n == "background" || n == "bg" || n == "0") return Tissue::Background;
    if (n == "csf" || n == "1") return Tissue::CSF;
    if (n == "gm" || n == "gray matter" || n == "grey matter" || n == "2") return Tissue::GM;
    if (n == "wm" || n == "white matter" || n == "3") return Tissue::WM;
    throw InvalidArgument("unknown tissue name '" + name + "'");
}

// Radial boundary r(theta) = base * (1 + sum_k a_k cos(k theta + phi_k)).
struct Contour {
    double base = 1.0;
    std::vector<std::array<double, 3>> harmonics;  // order, amplitude, phase

    double operator()(double theta) const {
        double r = 1.0;
        for (const auto& [k, a, phi] : harmonics) r += a * std::cos(k * theta + phi);
        return base * r;
    }
};

Contour random_contour(std::mt19937_64& gen, double base, int k_lo, int k_hi, double max_amp) {
    Contour c;
    c.base = base;
    for (int k = k_lo; k <= k_hi; ++k) {
        const double amp = uniform(gen, 0.0, max_amp);
        const double phase = uniform(gen, -kPi, kPi);
        c.harmonics.push_back({static_cast<double>(k), amp, phase});
    }
    return c;
}

struct Blob {
    double u0, v0, a, b, angle;
    bool contains(double u, double v) const {
        const double du = u - u0;
        const double dv = v - v0;
        const double ca = std::cos(angle);
        const double sa = std::sin(angle);
        const double p = (ca * du + sa * dv) / a;
        const double q = (-sa * du + ca * dv) / b;
        return p * p + q * q <= 1.0;
    }
};

}  // namespace

std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::string_view tissue_name(Tissue t) {
    switch (t) {
        case Tissue::Background: return "Background";
        case Tissue::CSF: return "CSF";
        case Tissue::GM: return "GM";
        case Tissue::WM: return "WM";
    }
    return "?";
}

TissueTable TissueTable::defaults() {
    TissueTable t;
    t.set({Tissue::Background, 1.0, 0.1, 0.0});
    t.set({Tissue::CSF, 2.569, 0.329, 1.0});
    t.set({Tissue::GM, 0.833, 0.083, 0.86});
    t.set({Tissue::WM, 0.500, 0.070, 0.77});
    return t;
}

const TissueParams& TissueTable::at(Tissue t) const {
    const auto i = static_cast<std::size_t>(t);
    if (i >= entries.size() || !present[i])
        throw InvalidArgument("tissue table has no entry for " + std::string(tissue_name(t)));
    return entries[i];
}

void TissueTable::set(const TissueParams& p) {
    const auto i = static_cast<std::size_t>(p.tissue);
    if (i >= entries.size()) throw InvalidArgument("tissue id out of range");
    entries[i] = p;
    present[i] = true;
}

void TissueTable::validate() const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!present[i]) continue;
        const auto& p = entries[i];
        const std::string name(tissue_name(p.tissue));
        if (!(p.t1 > 0.0) || !(p.t2 > 0.0))
            throw InvalidArgument(name + ": T1 and T2 must be positive");
        if (!(p.t2 < p.t1)) throw InvalidArgument(name + ": T2 must be below T1");
        // Background is the only class allowed a zero proton density.
        const bool pd_ok = p.tissue == Tissue::Background ? (p.pd >= 0.0 && p.pd <= 1.0)
                                                          : (p.pd > 0.0 && p.pd <= 1.0);
        if (!pd_ok) throw InvalidArgument(name + ": PD out of range");
    }
}

TissueTable parse_tissue_table(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("tissue table: ") + e.what());
    }
    auto table = TissueTable::defaults();
    const auto& list = doc.contains("tissues") ? doc.at("tissues") : doc;
    if (!list.is_array()) throw InvalidArgument("tissue table: expected an array of tissues");
    for (const auto& item : list) {
        TissueParams p;
        const auto& name = item.at("name");
        p.tissue = tissue_from_name(name.is_string() ? name.get<std::string>() : name.dump());
        p.t1 = item.at("T1").get<double>();
        p.t2 = item.at("T2").get<double>();
        p.pd = item.at("PD").get<double>();
        table.set(p);
    }
    table.validate();
    return table;
}

TissueTable load_tissue_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open tissue table " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_tissue_table(ss.str());
}

std::array<std::int64_t, kNumClasses> LabelMap::class_counts() const {
    std::array<std::int64_t, kNumClasses> counts{};
    for (auto l : labels) ++counts[l];
    return counts;
}

LabelMap generate_label_map(std::uint64_t seed, int height, int width) {
    if (height < kMinPhantomSize || width < kMinPhantomSize)
        throw InvalidArgument("phantom dimensions must be at least " +
                              std::to_string(kMinPhantomSize) + " pixels");

    std::mt19937_64 gen(mix_seed(seed, 0x70a47f));

    const double cy = 0.5 * (height - 1) + uniform(gen, -0.02, 0.02) * height;
    const double cx = 0.5 * (width - 1) + uniform(gen, -0.02, 0.02) * width;
    const double ay = 0.40 * height * uniform(gen, 0.90, 1.0);
    const double ax = 0.40 * width * uniform(gen, 0.90, 1.0);

    const Contour skull = random_contour(gen, 1.0, 2, 4, 0.025);
    const double rim = uniform(gen, 0.86, 0.90);
    const Contour cortex = random_contour(gen, 1.0, 5, 9, 0.035);
    const double gm_depth = uniform(gen, 0.68, 0.74);

    const int n_ventricles = 2 + static_cast<int>(gen() % 4);
    std::vector<Blob> ventricles;
    for (int i = 0; i < n_ventricles; ++i) {
        const double r = uniform(gen, 0.0, 0.30);
        const double th = uniform(gen, -kPi, kPi);
        ventricles.push_back({r * std::cos(th), r * std::sin(th), uniform(gen, 0.06, 0.14),
                              uniform(gen, 0.04, 0.09), uniform(gen, 0.0, kPi)});
    }

    LabelMap map;
    map.height = height;
    map.width = width;
    map.seed = seed;
    map.labels.assign(static_cast<std::size_t>(height) * width, 0);

    for (int row = 0; row < height; ++row) {
        for (int col = 0; col < width; ++col) {
            const double u = (col - cx) / ax;
            const double v = (row - cy) / ay;
            const double rho = std::hypot(u, v);
            const double theta = std::atan2(v, u);
            const double outer = skull(theta);
            Tissue t = Tissue::Background;
            if (rho <= outer) {
                if (rho > rim * outer) {
                    t = Tissue::CSF;
                } else if (rho > gm_depth * outer * cortex(theta)) {
                    t = Tissue::GM;
                } else {
                    t = Tissue::WM;
                    for (const auto& b : ventricles) {
                        if (b.contains(u, v)) {
                            t = Tissue::CSF;
                            break;
                        }
                    }
                }
            }
            map(row, col) = static_cast<std::uint8_t>(t);
        }
    }

    for (int col = 0; col < width; ++col) {
        map(0, col) = 0;
        map(height - 1, col) = 0;
    }
    for (int row = 0; row < height; ++row) {
        map(row, 0) = 0;
        map(row, width - 1) = 0;
    }
    return map;
}

SequenceParams sample_sequence_params(std::uint64_t seed) {
    std::mt19937_64 gen(mix_seed(seed, 0x5e9));
    SequenceParams s;
    s.te = uniform(gen, 0.076, 0.084);
    s.tr = uniform(gen, 2.85, 3.15);
    return s;
}

double spin_echo_signal(const TissueParams& params, const SequenceParams& seq) {
    if (!(params.t1 > 0.0) || !(params.t2 > 0.0))
        throw InvalidArgument("spin_echo_signal: T1 and T2 must be positive");
    if (!(seq.tr > 0.0) || seq.te < 0.0)
        throw InvalidArgument("spin_echo_signal: TR must be positive and TE non-negative");
    return params.pd * -std::expm1(-seq.tr / params.t1) * std::exp(-seq.te / params.t2);
}

PhaseField PhaseField::sample(std::uint64_t seed) {
    std::mt19937_64 gen(mix_seed(seed, 0xf4a5e));
    PhaseField f;
    for (auto& c : f.coeffs) c = uniform(gen, -kPi / 4.0, kPi / 4.0);
    return f;
}

torch::Tensor synthesize_complex_image(const LabelMap& labels, const TissueTable& table,
                                       const SequenceParams& seq, std::uint64_t phase_seed) {
    return synthesize_complex_image(labels, table, seq, PhaseField::sample(phase_seed));
}

torch::Tensor synthesize_complex_image(const LabelMap& labels, const TissueTable& table,
                                       const SequenceParams& seq, const PhaseField& phase) {
    std::array<double, kNumClasses> signal{};
    const auto counts = labels.class_counts();
    for (int c = 0; c < kNumClasses; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) continue;
        signal[static_cast<std::size_t>(c)] =
            spin_echo_signal(table.at(static_cast<Tissue>(c)), seq);
    }

    const int h = labels.height;
    const int w = labels.width;
    auto img = torch::zeros({2, h, w}, torch::kFloat64);
    auto acc = img.accessor<double, 3>();
    for (int row = 0; row < h; ++row) {
        const double y = h > 1 ? 2.0 * row / (h - 1) - 1.0 : 0.0;
        for (int col = 0; col < w; ++col) {
            const double x = w > 1 ? 2.0 * col / (w - 1) - 1.0 : 0.0;
            const double s = signal[labels(row, col)];
            const double phi = phase(x, y);
            acc[0][row][col] = s * std::cos(phi);
            acc[1][row][col] = s * std::sin(phi);
        }
    }
    return img;
}

torch::Tensor labels_to_onehot(const LabelMap& labels) {
    const int h = labels.height;
    const int w = labels.width;
    auto out = torch::zeros({kNumClasses, h, w}, torch::kFloat32);
    auto acc = out.accessor<float, 3>();
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            const auto l = labels(row, col);
            if (l >= kNumClasses)
                throw InvalidArgument("labels_to_onehot: label " + std::to_string(l) +
                                      " out of range");
            acc[l][row][col] = 1.0f;
        }
    }
    return out;
}

std::vector<std::uint8_t> argmax_labels(const torch::Tensor& probs) {
    if (probs.dim() != 3) throw InvalidArgument("argmax_labels: expected C x H x W");
    auto p = probs.detach().to(torch::kFloat64).contiguous();
    const auto c = p.size(0);
    const auto n = p.size(1) * p.size(2);
    const double* data = p.data_ptr<double>();
    std::vector<std::uint8_t> out(static_cast<std::size_t>(n), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t best = 0;
        double best_v = data[i];
        for (std::int64_t k = 1; k < c; ++k) {
            const double v = data[k * n + i];
            if (v > best_v) {
                best_v = v;
                best = k;
            }
        }
        out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
    }
    return out;
}

}  // namespace seranet
