#include "seranet/kspace.hpp"

#include <cmath>
#include <random>

#include "seranet/common.hpp"

namespace seranet {

namespace {

void check_complex_layout(const torch::Tensor& t, const char* what) {
    if (t.dim() < 3 || t.size(-3) != 2)
        throw InvalidArgument(std::string(what) + ": expected a (..., 2, H, W) tensor");
}

torch::Tensor to_complex(const torch::Tensor& t) {
    return torch::complex(t.select(-3, 0), t.select(-3, 1));
}

torch::Tensor from_complex(const torch::Tensor& c) {
    return torch::stack({torch::real(c), torch::imag(c)}, -3);
}

}  // namespace

torch::Tensor fft2c(const torch::Tensor& image) {
    check_complex_layout(image, "fft2c");
    auto c = torch::fft::ifftshift(to_complex(image), std::vector<int64_t>{-2, -1});
    c = torch::fft::fft2(c, std::nullopt, {-2, -1}, "ortho");
    return from_complex(torch::fft::fftshift(c, std::vector<int64_t>{-2, -1}));
}

torch::Tensor ifft2c(const torch::Tensor& kspace) {
    check_complex_layout(kspace, "ifft2c");
    auto c = torch::fft::ifftshift(to_complex(kspace), std::vector<int64_t>{-2, -1});
    c = torch::fft::ifft2(c, std::nullopt, {-2, -1}, "ortho");
    return from_complex(torch::fft::fftshift(c, std::vector<int64_t>{-2, -1}));
}

int SamplingMask::kept_count() const {
    int n = 0;
    for (auto k : kept_lines) n += k != 0;
    return n;
}

torch::Tensor SamplingMask::as_tensor(torch::Dtype dtype) const {
    auto m = torch::empty({1, 1, width()}, torch::kFloat64);
    auto acc = m.accessor<double, 3>();
    for (int j = 0; j < width(); ++j) acc[0][0][j] = kept(j) ? 1.0 : 0.0;
    return m.to(dtype);
}

torch::Tensor SamplingMask::expanded(int height) const {
    return as_tensor(torch::kFloat32).view({1, width()}).expand({height, width()}).to(torch::kBool);
}

int kept_line_count(int width, double rate) {
    return static_cast<int>(std::lround(rate * width));
}

int center_block_start(int width, int center_lines) {
    return width / 2 - center_lines / 2;
}

SamplingMask make_cartesian_mask(int width, double rate, int center_lines, std::uint64_t seed) {
    if (width <= 0) throw InvalidArgument("make_cartesian_mask: width must be positive");
    if (!(rate > 0.0 && rate <= 1.0))
        throw InvalidArgument("make_cartesian_mask: rate must lie in (0, 1]");
    if (center_lines < 0 || center_lines > width)
        throw InvalidArgument("make_cartesian_mask: center_lines out of range");
    const int total = kept_line_count(width, rate);
    if (total < center_lines)
        throw InvalidArgument("make_cartesian_mask: round(rate*width) = " + std::to_string(total) +
                              " is below center_lines = " + std::to_string(center_lines));

    SamplingMask mask;
    mask.kept_lines.assign(static_cast<std::size_t>(width), 0);
    mask.rate = rate;
    mask.center_lines = center_lines;
    mask.seed = seed;

    const int start = center_block_start(width, center_lines);
    for (int j = start; j < start + center_lines; ++j) mask.kept_lines[static_cast<std::size_t>(j)] = 1;

    const double center = width / 2;
    const double sigma = width / 6.0;
    std::vector<double> weight(static_cast<std::size_t>(width), 0.0);
    for (int j = 0; j < width; ++j) {
        if (mask.kept(j)) continue;
        const double d = j - center;
        weight[static_cast<std::size_t>(j)] = std::exp(-d * d / (2.0 * sigma * sigma));
    }

    std::mt19937_64 gen(mix_seed(seed, 0x3a5c));
    for (int drawn = center_lines; drawn < total; ++drawn) {
        double sum = 0.0;
        for (double w : weight) sum += w;
        const double target = uniform01(gen) * sum;
        double acc = 0.0;
        int pick = -1;
        for (int j = 0; j < width; ++j) {
            const double w = weight[static_cast<std::size_t>(j)];
            if (w <= 0.0) continue;
            pick = j;
            acc += w;
            if (target < acc) break;
        }
        mask.kept_lines[static_cast<std::size_t>(pick)] = 1;
        weight[static_cast<std::size_t>(pick)] = 0.0;
    }
    return mask;
}

torch::Tensor kspace_noise(const torch::Tensor& k_full, double noise_level,
                           std::uint64_t noise_seed) {
    check_complex_layout(k_full, "kspace_noise");
    if (noise_level < 0.0) throw InvalidArgument("noise_level must be non-negative");
    auto k64 = k_full.detach().to(torch::kFloat64).contiguous();
    const double rms = std::sqrt(k64.pow(2).sum(-3).mean().item<double>());
    const double sigma = noise_level * rms / std::sqrt(2.0);

    auto noise = torch::empty_like(k64);
    double* data = noise.data_ptr<double>();
    std::mt19937_64 gen(mix_seed(noise_seed, 0x9015e));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::int64_t i = 0; i < noise.numel(); ++i) data[i] = sigma * normal(gen);
    return noise;
}

torch::Tensor apply_mask(const torch::Tensor& kspace, const torch::Tensor& mask) {
    return kspace * mask.to(kspace.scalar_type());
}

torch::Tensor corrupt_and_undersample(const torch::Tensor& k_full, const SamplingMask& mask,
                                      double noise_level, std::uint64_t noise_seed) {
    check_complex_layout(k_full, "corrupt_and_undersample");
    if (k_full.size(-1) != mask.width())
        throw InvalidArgument("corrupt_and_undersample: mask width does not match k-space");
    auto noisy = k_full.to(torch::kFloat64);
    if (noise_level > 0.0) noisy = noisy + kspace_noise(k_full, noise_level, noise_seed);
    return apply_mask(noisy, mask.as_tensor(torch::kFloat64)).to(k_full.scalar_type());
}

torch::Tensor zero_fill(const torch::Tensor& y) { return ifft2c(y); }

torch::Tensor data_consistency(const torch::Tensor& x, const torch::Tensor& y,
                               const torch::Tensor& mask) {
    check_complex_layout(x, "data_consistency");
    if (x.sizes() != y.sizes()) throw InvalidArgument("data_consistency: x and y shapes differ");
    const auto m = mask.to(x.scalar_type());
    const auto k = fft2c(x);
    return ifft2c(m * y + (1.0 - m) * k);
}

torch::Tensor data_consistency(const torch::Tensor& x, const torch::Tensor& y,
                               const SamplingMask& mask) {
    if (x.size(-1) != mask.width())
        throw InvalidArgument("data_consistency: mask width does not match image");
    return data_consistency(x, y, mask.as_tensor(x.scalar_type()));
}

double energy(const torch::Tensor& t) {
    return t.detach().to(torch::kFloat64).pow(2).sum().item<double>();
}

}  // namespace seranet
