#include "seranet/dataset.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "seranet/common.hpp"

namespace seranet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "seranet-kspace-dataset";
constexpr int kFormatVersion = 1;

std::string record_stem(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "rec_%06zu", index);
    return buf;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + p.string());
}

std::string f32_bytes(const torch::Tensor& t) {
    std::ostringstream ss(std::ios::binary);
    write_f32_le(ss, t);
    return ss.str();
}

}  // namespace

std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw InvalidArgument("unknown split '" + std::string(s) + "'");
}

void DatasetConfig::validate() const {
    if (train_brains < 1 || test_brains < 0 || slices_per_brain < 1)
        throw InvalidArgument("dataset: brain and slice counts must be positive");
    if (noise_level < 0.0) throw InvalidArgument("dataset: noise level must be non-negative");
    if (height < kMinPhantomSize || width < kMinPhantomSize)
        throw InvalidArgument("dataset: slice dimensions below minimum");
    if (kept_line_count(width, rate) < center_lines)
        throw InvalidArgument("dataset: rate * width is below center_lines");
    tissues.validate();
}

json DatasetConfig::to_json() const {
    json tissues_j = json::array();
    for (std::size_t i = 0; i < tissues.entries.size(); ++i) {
        const auto& p = tissues.entries[i];
        tissues_j.push_back({{"name", std::string(tissue_name(p.tissue))},
                             {"T1", p.t1},
                             {"T2", p.t2},
                             {"PD", p.pd}});
    }
    return {{"train_brains", train_brains},
            {"test_brains", test_brains},
            {"slices_per_brain", slices_per_brain},
            {"height", height},
            {"width", width},
            {"rate", rate},
            {"center_lines", center_lines},
            {"noise_level", noise_level},
            {"seed", seed},
            {"tissues", tissues_j}};
}

SliceSeeds SliceSeeds::derive(std::uint64_t master, std::int64_t brain, std::int64_t slice) {
    const auto base = mix_seed(master, static_cast<std::uint64_t>(brain),
                               static_cast<std::uint64_t>(slice));
    return {mix_seed(base, 1), mix_seed(base, 2), mix_seed(base, 3), mix_seed(base, 4)};
}

torch::Tensor normalize_max_magnitude(const torch::Tensor& image) {
    const double peak = image.pow(2).sum(-3).sqrt().max().item<double>();
    if (!(peak > 0.0)) return image.clone();
    return image / peak;
}

KSpaceSample make_sample(const DatasetConfig& cfg, std::int64_t brain_id, std::int64_t slice_id,
                         Split split) {
    const auto seeds = SliceSeeds::derive(cfg.seed, brain_id, slice_id);
    const auto seq = sample_sequence_params(mix_seed(cfg.seed, static_cast<std::uint64_t>(brain_id)));

    KSpaceSample s;
    s.labels = generate_label_map(seeds.phantom, cfg.height, cfg.width);
    s.labels.brain_id = brain_id;
    s.labels.slice_id = slice_id;
    s.seq = seq;
    s.split = split;
    s.noise_level = cfg.noise_level;
    s.phantom_seed = seeds.phantom;
    s.phase_seed = seeds.phase;
    s.mask_seed = seeds.mask;
    s.noise_seed = seeds.noise;

    const auto image = normalize_max_magnitude(
        synthesize_complex_image(s.labels, cfg.tissues, seq, seeds.phase));
    const auto k_full = fft2c(image);
    s.mask = make_cartesian_mask(cfg.width, cfg.rate, cfg.center_lines, seeds.mask);
    s.y = corrupt_and_undersample(k_full, s.mask, cfg.noise_level, seeds.noise).to(torch::kFloat32);
    s.x_full = image.to(torch::kFloat32);
    s.seg_gt = labels_to_onehot(s.labels);
    return s;
}

std::vector<KSpaceSample> build_dataset(const DatasetConfig& cfg) {
    cfg.validate();
    std::vector<KSpaceSample> out;
    out.reserve(static_cast<std::size_t>(cfg.train_brains + cfg.test_brains) *
                static_cast<std::size_t>(cfg.slices_per_brain));
    for (int b = 0; b < cfg.train_brains + cfg.test_brains; ++b) {
        const Split split = b < cfg.train_brains ? Split::Train : Split::Test;
        for (int sl = 0; sl < cfg.slices_per_brain; ++sl) out.push_back(make_sample(cfg, b, sl, split));
    }
    return out;
}

std::vector<std::size_t> SampleSource::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
        if (split_of(i) == s) out.push_back(i);
    return out;
}

InMemorySource::InMemorySource(std::vector<KSpaceSample> samples) : samples_(std::move(samples)) {}

KSpaceSample InMemorySource::load(std::size_t index, bool with_x_full) const {
    KSpaceSample s = samples_.at(index);
    if (with_x_full) {
        ++x_full_reads_;
    } else {
        s.x_full = torch::Tensor();
    }
    return s;
}

double InMemorySource::noise_level() const {
    return samples_.empty() ? 0.0 : samples_.front().noise_level;
}

void write_f32_le(std::ostream& out, const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous();
    const float* data = c.data_ptr<float>();
    std::string buf(static_cast<std::size_t>(c.numel()) * 4, '\0');
    for (std::int64_t i = 0; i < c.numel(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(data[i]);
        for (int b = 0; b < 4; ++b)
            buf[static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(b)] =
                static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

torch::Tensor read_f32_le(std::istream& in, torch::IntArrayRef shape) {
    auto t = torch::empty(shape, torch::kFloat32);
    std::string buf(static_cast<std::size_t>(t.numel()) * 4, '\0');
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw IoError("truncated float array");
    float* data = t.data_ptr<float>();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(
                        buf[static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(b)]))
                    << (8 * b);
        data[i] = std::bit_cast<float>(bits);
    }
    return t;
}

std::string read_file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t file_checksum(const fs::path& p) { return fnv1a64(read_file_bytes(p)); }

DatasetWriter::DatasetWriter(fs::path dir, DatasetConfig cfg) : dir_(std::move(dir)), cfg_(std::move(cfg)) {
    fs::create_directories(dir_ / "records");
}

void DatasetWriter::add(const KSpaceSample& s) {
    if (!s.x_full.defined()) throw InvalidArgument("dataset writer: record lacks x_full");
    const std::size_t i = records_.size();
    const auto stem = record_stem(i);
    const std::string y_name = "records/" + stem + ".y.f32";
    const std::string x_name = "records/" + stem + ".x.f32";
    const std::string l_name = "records/" + stem + ".labels.u8";
    const std::string m_name = "records/" + stem + ".mask.u8";

    const auto y_bytes = f32_bytes(s.y);
    const auto x_bytes = f32_bytes(s.x_full);
    const std::string l_bytes(s.labels.labels.begin(), s.labels.labels.end());
    const std::string m_bytes(s.mask.kept_lines.begin(), s.mask.kept_lines.end());
    write_bytes(dir_ / y_name, y_bytes);
    write_bytes(dir_ / x_name, x_bytes);
    write_bytes(dir_ / l_name, l_bytes);
    write_bytes(dir_ / m_name, m_bytes);

    (s.split == Split::Train ? n_train_ : n_test_) += 1;
    records_.push_back({
        {"index", i},
        {"brain_id", s.brain_id()},
        {"slice_id", s.slice_id()},
        {"split", split_name(s.split)},
        {"TE", s.seq.te},
        {"TR", s.seq.tr},
        {"noise_level", s.noise_level},
        {"kept_lines", s.mask.kept_count()},
        {"seeds",
         {{"phantom", s.phantom_seed}, {"phase", s.phase_seed}, {"mask", s.mask_seed}, {"noise", s.noise_seed}}},
        {"files", {{"y", y_name}, {"x_full", x_name}, {"labels", l_name}, {"mask", m_name}}},
        {"checksums",
         {{"y", hex64(fnv1a64(y_bytes))},
          {"x_full", hex64(fnv1a64(x_bytes))},
          {"labels", hex64(fnv1a64(l_bytes))},
          {"mask", hex64(fnv1a64(m_bytes))}}},
    });
}

std::uint64_t DatasetWriter::finish() {
    json manifest = {
        {"format", kFormatTag},
        {"version", kFormatVersion},
        {"dtype", "float32"},
        {"label_dtype", "uint8"},
        {"byte_order", "little"},
        {"layout", {{"y", "2xHxW (real, imag), centered k-space"},
                    {"x_full", "2xHxW (real, imag)"},
                    {"labels", "HxW, 0=Background 1=CSF 2=GM 3=WM"},
                    {"mask", "W, 1 = phase-encode line kept"}}},
        {"config", cfg_.to_json()},
        {"height", cfg_.height},
        {"width", cfg_.width},
        {"noise_level", cfg_.noise_level},
        {"rate", cfg_.rate},
        {"center_lines", cfg_.center_lines},
        {"seed", cfg_.seed},
        {"record_count", records_.size()},
        {"train_records", n_train_},
        {"test_records", n_test_},
        {"records", records_},
    };
    const auto text = manifest.dump(2) + "\n";
    write_bytes(dir_ / "manifest.json", text);
    return fnv1a64(text);
}

void write_dataset(const fs::path& dir, const DatasetConfig& cfg, const std::vector<KSpaceSample>& samples) {
    DatasetWriter writer(dir, cfg);
    for (const auto& s : samples) writer.add(s);
    writer.finish();
}

std::uint64_t generate_dataset(const fs::path& dir, const DatasetConfig& cfg) {
    cfg.validate();
    DatasetWriter writer(dir, cfg);
    for (int b = 0; b < cfg.train_brains + cfg.test_brains; ++b) {
        const Split split = b < cfg.train_brains ? Split::Train : Split::Test;
        for (int sl = 0; sl < cfg.slices_per_brain; ++sl) writer.add(make_sample(cfg, b, sl, split));
    }
    return writer.finish();
}

std::unique_ptr<DiskDataset> DiskDataset::open(const fs::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw IoError("no manifest.json in " + dir.string());
    auto ds = std::unique_ptr<DiskDataset>(new DiskDataset());
    ds->root_ = dir;
    try {
        ds->manifest_ = json::parse(read_file_bytes(manifest_path));
    } catch (const json::exception& e) {
        throw IoError("malformed manifest: " + std::string(e.what()));
    }
    if (ds->manifest_.value("format", "") != kFormatTag)
        throw IoError("not a dataset manifest: " + manifest_path.string());
    if (ds->manifest_.value("version", 0) != kFormatVersion)
        throw IoError("unsupported dataset version");
    for (const auto& r : ds->manifest_.at("records")) ds->records_.push_back(r);
    return ds;
}

Split DiskDataset::split_of(std::size_t i) const {
    return parse_split(records_.at(i).at("split").get<std::string>());
}

std::int64_t DiskDataset::brain_of(std::size_t i) const {
    return records_.at(i).at("brain_id").get<std::int64_t>();
}

int DiskDataset::height() const { return manifest_.at("height").get<int>(); }
int DiskDataset::width() const { return manifest_.at("width").get<int>(); }
double DiskDataset::noise_level() const { return manifest_.at("noise_level").get<double>(); }

KSpaceSample DiskDataset::load(std::size_t index, bool with_x_full) const {
    const auto& r = records_.at(index);
    const int h = height();
    const int w = width();
    const auto& files = r.at("files");

    KSpaceSample s;
    {
        std::ifstream in(root_ / files.at("y").get<std::string>(), std::ios::binary);
        if (!in) throw IoError("missing y for record " + std::to_string(index));
        s.y = read_f32_le(in, {2, h, w});
    }
    if (with_x_full) {
        std::ifstream in(root_ / files.at("x_full").get<std::string>(), std::ios::binary);
        if (!in) throw IoError("missing x_full for record " + std::to_string(index));
        s.x_full = read_f32_le(in, {2, h, w});
        ++x_full_reads_;
    }
    const auto label_bytes = read_file_bytes(root_ / files.at("labels").get<std::string>());
    if (label_bytes.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w))
        throw IoError("label file size mismatch for record " + std::to_string(index));
    s.labels.height = h;
    s.labels.width = w;
    s.labels.labels.assign(label_bytes.begin(), label_bytes.end());
    s.labels.brain_id = r.at("brain_id").get<std::int64_t>();
    s.labels.slice_id = r.at("slice_id").get<std::int64_t>();

    const auto mask_bytes = read_file_bytes(root_ / files.at("mask").get<std::string>());
    if (mask_bytes.size() != static_cast<std::size_t>(w))
        throw IoError("mask file size mismatch for record " + std::to_string(index));
    s.mask.kept_lines.assign(mask_bytes.begin(), mask_bytes.end());
    s.mask.rate = manifest_.at("rate").get<double>();
    s.mask.center_lines = manifest_.at("center_lines").get<int>();

    const auto& seeds = r.at("seeds");
    s.phantom_seed = seeds.at("phantom").get<std::uint64_t>();
    s.phase_seed = seeds.at("phase").get<std::uint64_t>();
    s.mask_seed = seeds.at("mask").get<std::uint64_t>();
    s.noise_seed = seeds.at("noise").get<std::uint64_t>();
    s.mask.seed = s.mask_seed;
    s.labels.seed = s.phantom_seed;
    s.seq = {r.at("TE").get<double>(), r.at("TR").get<double>()};
    s.noise_level = r.at("noise_level").get<double>();
    s.split = parse_split(r.at("split").get<std::string>());
    s.seg_gt = labels_to_onehot(s.labels);
    return s;
}

}  // namespace seranet
