#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "seranet/kspace.hpp"
#include "seranet/phantom.hpp"

namespace seranet {

enum class Split { Train, Test };

std::string_view split_name(Split s);
Split parse_split(std::string_view s);

/// One training record: the measurement the network sees plus its labels.
struct KSpaceSample {
    torch::Tensor y;       // 2 x H x W float32, zero on unsampled lines
    SamplingMask mask;
    LabelMap labels;
    torch::Tensor seg_gt;  // 4 x H x W one-hot
    torch::Tensor x_full;  // 2 x H x W; undefined unless explicitly loaded
    double noise_level = 0.0;
    SequenceParams seq;
    Split split = Split::Train;
    std::uint64_t phantom_seed = 0;
    std::uint64_t phase_seed = 0;
    std::uint64_t mask_seed = 0;
    std::uint64_t noise_seed = 0;

    std::int64_t brain_id() const { return labels.brain_id; }
    std::int64_t slice_id() const { return labels.slice_id; }
    int height() const { return labels.height; }
    int width() const { return labels.width; }
};

struct DatasetConfig {
    int train_brains = 17;
    int test_brains = 3;
    int slices_per_brain = 57;
    int height = 180;
    int width = 216;
    double rate = 0.30;
    int center_lines = 16;
    double noise_level = 0.10;
    std::uint64_t seed = 0;
    TissueTable tissues = TissueTable::defaults();

    void validate() const;
    nlohmann::json to_json() const;
};

/// Seeds of one slice, derived from (master seed, brain id, slice id).
struct SliceSeeds {
    std::uint64_t phantom, phase, mask, noise;
    static SliceSeeds derive(std::uint64_t master, std::int64_t brain, std::int64_t slice);
};

/// Full pipeline for a single slice: phantom, synthesis, max-magnitude
/// normalization, k-space, noise, undersampling.
KSpaceSample make_sample(const DatasetConfig& cfg, std::int64_t brain_id, std::int64_t slice_id,
                         Split split);

/// Brains [0, train_brains) form the train split, the following
/// test_brains brains the test split.
std::vector<KSpaceSample> build_dataset(const DatasetConfig& cfg);

/// Scale-free normalization applied before k-space synthesis.
torch::Tensor normalize_max_magnitude(const torch::Tensor& image);

/// Access to records without committing to where they live. x_full is only
/// materialized when the caller asks for it, and every such read is counted.
class SampleSource {
public:
    virtual ~SampleSource() = default;
    virtual std::size_t size() const = 0;
    virtual Split split_of(std::size_t index) const = 0;
    virtual std::int64_t brain_of(std::size_t index) const = 0;
    virtual KSpaceSample load(std::size_t index, bool with_x_full) const = 0;
    virtual double noise_level() const = 0;

    std::vector<std::size_t> indices(Split s) const;
    std::size_t x_full_reads() const { return x_full_reads_.load(); }

protected:
    mutable std::atomic<std::size_t> x_full_reads_{0};
};

class InMemorySource final : public SampleSource {
public:
    explicit InMemorySource(std::vector<KSpaceSample> samples);
    std::size_t size() const override { return samples_.size(); }
    Split split_of(std::size_t i) const override { return samples_.at(i).split; }
    std::int64_t brain_of(std::size_t i) const override { return samples_.at(i).brain_id(); }
    KSpaceSample load(std::size_t index, bool with_x_full) const override;
    double noise_level() const override;

private:
    std::vector<KSpaceSample> samples_;
};

/// Dataset directory layout:
///   manifest.json
///   records/rec_NNNNNN.y.f32       2 x H x W little-endian float32
///   records/rec_NNNNNN.x.f32       2 x H x W little-endian float32
///   records/rec_NNNNNN.labels.u8   H x W uint8
///   records/rec_NNNNNN.mask.u8     W uint8 (kept phase-encode lines)
void write_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg,
                   const std::vector<KSpaceSample>& samples);

/// Streaming form of write_dataset: records are flushed as they are added
/// and the manifest is written by finish().
class DatasetWriter {
public:
    DatasetWriter(std::filesystem::path dir, DatasetConfig cfg);
    void add(const KSpaceSample& s);
    /// Writes manifest.json and returns its FNV-1a checksum.
    std::uint64_t finish();
    std::size_t train_records() const { return n_train_; }
    std::size_t test_records() const { return n_test_; }

private:
    std::filesystem::path dir_;
    DatasetConfig cfg_;
    nlohmann::json records_ = nlohmann::json::array();
    std::size_t n_train_ = 0;
    std::size_t n_test_ = 0;
};

/// Generates and writes every record of `cfg` without holding the dataset
/// in memory. Returns the manifest checksum.
std::uint64_t generate_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg);

class DiskDataset final : public SampleSource {
public:
    static std::unique_ptr<DiskDataset> open(const std::filesystem::path& dir);

    std::size_t size() const override { return records_.size(); }
    Split split_of(std::size_t i) const override;
    std::int64_t brain_of(std::size_t i) const override;
    KSpaceSample load(std::size_t index, bool with_x_full) const override;
    double noise_level() const override;

    const nlohmann::json& manifest() const { return manifest_; }
    const std::filesystem::path& root() const { return root_; }
    int height() const;
    int width() const;

private:
    std::filesystem::path root_;
    nlohmann::json manifest_;
    std::vector<nlohmann::json> records_;
};

/// Raw little-endian array helpers shared by the dataset and checkpoint code.
void write_f32_le(std::ostream& out, const torch::Tensor& t);
torch::Tensor read_f32_le(std::istream& in, torch::IntArrayRef shape);
std::string read_file_bytes(const std::filesystem::path& p);
std::uint64_t file_checksum(const std::filesystem::path& p);

}  // namespace seranet
