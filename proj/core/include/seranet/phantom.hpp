#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace seranet {

inline constexpr int kNumClasses = 4;

enum class Tissue : std::uint8_t { Background = 0, CSF = 1, GM = 2, WM = 3 };

std::string_view tissue_name(Tissue t);

/// MR physical parameters of one tissue class. Times in seconds.
struct TissueParams {
    Tissue tissue = Tissue::Background;
    double t1 = 1.0;
    double t2 = 0.1;
    double pd = 0.0;
};

/// One entry per class, indexed by label value.
struct TissueTable {
    std::array<TissueParams, kNumClasses> entries{};
    std::array<bool, kNumClasses> present{};

    static TissueTable defaults();

    const TissueParams& at(Tissue t) const;
    void set(const TissueParams& p);

    /// Throws InvalidArgument when an entry breaks T2 < T1 or PD bounds.
    void validate() const;
};

/// Reads `{"tissues": [{"name": "CSF", "T1": .., "T2": .., "PD": ..}, ...]}`.
/// Entries not listed keep their default values.
TissueTable load_tissue_table(const std::filesystem::path& path);
TissueTable parse_tissue_table(const std::string& json_text);

struct SequenceParams {
    double te = 0.080;
    double tr = 3.0;
};

/// Row-major H x W grid of tissue labels.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::int64_t brain_id = 0;
    std::int64_t slice_id = 0;
    std::uint64_t seed = 0;
    std::vector<std::uint8_t> labels;

    std::uint8_t operator()(int row, int col) const {
        return labels[static_cast<std::size_t>(row) * width + col];
    }
    std::uint8_t& operator()(int row, int col) {
        return labels[static_cast<std::size_t>(row) * width + col];
    }
    std::array<std::int64_t, kNumClasses> class_counts() const;
};

inline constexpr int kMinPhantomSize = 32;

/// Procedural head slice: background outside a deformed skull ellipse, a
/// CSF rim, a folded GM band, a WM core and 2-5 CSF ventricles.
LabelMap generate_label_map(std::uint64_t seed, int height, int width);

/// TE ~ U(0.076, 0.084) s, TR ~ U(2.85, 3.15) s.
SequenceParams sample_sequence_params(std::uint64_t seed);

/// PD * (1 - exp(-TR/T1)) * exp(-TE/T2).
double spin_echo_signal(const TissueParams& params, const SequenceParams& seq);

/// Coefficients of the phase field a0 + a1*x + a2*y + a3*x*y with x, y in
/// [-1, 1] across the grid.
struct PhaseField {
    std::array<double, 4> coeffs{};
    static PhaseField sample(std::uint64_t seed);
    double operator()(double x, double y) const {
        return coeffs[0] + coeffs[1] * x + coeffs[2] * y + coeffs[3] * x * y;
    }
};

/// Complex image as a 2 x H x W float64 tensor (real, imaginary).
torch::Tensor synthesize_complex_image(const LabelMap& labels, const TissueTable& table,
                                       const SequenceParams& seq, std::uint64_t phase_seed);
torch::Tensor synthesize_complex_image(const LabelMap& labels, const TissueTable& table,
                                       const SequenceParams& seq, const PhaseField& phase);

/// 4 x H x W float32 one-hot mask.
torch::Tensor labels_to_onehot(const LabelMap& labels);

/// Per-pixel argmax over the leading class axis of a C x H x W tensor;
/// ties resolve to the lowest class index.
std::vector<std::uint8_t> argmax_labels(const torch::Tensor& probs);

}  // namespace seranet
