#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace seranet {

// Image and k-space tensors share one layout: (..., 2, H, W) with the real
// part in channel 0 and the imaginary part in channel 1. k-space grids are
// centered (DC term at row H/2, column W/2).

/// Centered orthonormal 2D DFT over the last two axes. Differentiable.
torch::Tensor fft2c(const torch::Tensor& image);
/// Inverse of fft2c.
torch::Tensor ifft2c(const torch::Tensor& kspace);

/// Cartesian phase-encode mask along the width axis.
struct SamplingMask {
    std::vector<std::uint8_t> kept_lines;
    double rate = 1.0;
    int center_lines = 0;
    std::uint64_t seed = 0;

    int width() const { return static_cast<int>(kept_lines.size()); }
    int kept_count() const;
    bool kept(int col) const { return kept_lines[static_cast<std::size_t>(col)] != 0; }

    /// 1 x 1 x W tensor of {0, 1}; broadcasts over (..., 2, H, W).
    torch::Tensor as_tensor(torch::Dtype dtype = torch::kFloat32) const;
    /// H x W boolean grid, constant along rows.
    torch::Tensor expanded(int height) const;
};

/// round(rate * width) with halves rounded away from zero.
int kept_line_count(int width, double rate);

/// First column of the centered block of `center_lines` columns.
int center_block_start(int width, int center_lines);

SamplingMask make_cartesian_mask(int width, double rate, int center_lines, std::uint64_t seed);

/// Adds complex Gaussian noise with per-component sigma
/// noise_level * RMS(|k_full|) / sqrt(2), then zeroes unsampled lines.
torch::Tensor corrupt_and_undersample(const torch::Tensor& k_full, const SamplingMask& mask,
                                      double noise_level, std::uint64_t noise_seed);

/// Complex Gaussian noise field used by corrupt_and_undersample.
torch::Tensor kspace_noise(const torch::Tensor& k_full, double noise_level,
                           std::uint64_t noise_seed);

torch::Tensor apply_mask(const torch::Tensor& kspace, const torch::Tensor& mask);

torch::Tensor zero_fill(const torch::Tensor& y);

/// Hard data consistency: measured lines of y replace the estimate's
/// spectrum, the rest is kept. `mask` broadcasts against (..., 1, H, W).
torch::Tensor data_consistency(const torch::Tensor& x, const torch::Tensor& y,
                               const torch::Tensor& mask);
torch::Tensor data_consistency(const torch::Tensor& x, const torch::Tensor& y,
                               const SamplingMask& mask);

/// Sum of squares over all entries.
double energy(const torch::Tensor& t);

}  // namespace seranet
