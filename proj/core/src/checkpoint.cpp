#include "seranet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "seranet/common.hpp"
#include "seranet/dataset.hpp"

namespace seranet {

namespace {

constexpr char kMagic[8] = {'S', 'R', 'N', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::string& out, T v) {
    auto u = static_cast<std::make_unsigned_t<T>>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes_[pos_ + i]))
                 << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

struct Parsed {
    ModelConfig config;
    std::map<std::string, torch::Tensor> params;
};

Parsed parse(const std::filesystem::path& path, bool with_params) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw IoError("not a checkpoint: " + path.string());
    const std::string_view body(bytes.data(), bytes.size() - 8);
    Reader tail(std::string_view(bytes).substr(bytes.size() - 8));
    if (tail.get<std::uint64_t>() != fnv1a64(body))
        throw IoError("checkpoint checksum mismatch: " + path.string());

    Reader r(body);
    r.take(sizeof kMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto cfg_len = r.get<std::uint64_t>();
    Parsed out;
    out.config = ModelConfig::from_json(nlohmann::json::parse(r.take(cfg_len)));
    if (!with_params) return out;

    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint32_t>();
        std::string name(r.take(name_len));
        const auto rank = r.get<std::uint32_t>();
        std::vector<std::int64_t> dims;
        for (std::uint32_t d = 0; d < rank; ++d) dims.push_back(r.get<std::int64_t>());
        auto t = torch::empty(dims, torch::kFloat32);
        float* data = t.data_ptr<float>();
        for (std::int64_t k = 0; k < t.numel(); ++k) data[k] = std::bit_cast<float>(r.get<std::uint32_t>());
        out.params.emplace(std::move(name), t);
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Network& net) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    const auto cfg = net->config().to_json().dump();
    put<std::uint64_t>(out, cfg.size());
    out += cfg;

    const auto named = net->named_parameters(true);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& item : named) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(item.key().size()));
        out += item.key();
        const auto t = item.value().detach().to(torch::kFloat32).contiguous();
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
        for (auto d : t.sizes()) put<std::int64_t>(out, d);
        const float* data = t.data_ptr<float>();
        for (std::int64_t k = 0; k < t.numel(); ++k) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(data[k]));
    }
    put<std::uint64_t>(out, fnv1a64(out));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + path.string());
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
    return parse(path, false).config;
}

Network load_checkpoint(const std::filesystem::path& path) {
    auto parsed = parse(path, true);
    Network net(parsed.config);
    torch::NoGradGuard guard;
    auto named = net->named_parameters(true);
    if (named.size() != parsed.params.size())
        throw IoError("checkpoint parameter count does not match its config");
    for (auto& item : named) {
        auto it = parsed.params.find(item.key());
        if (it == parsed.params.end()) throw IoError("checkpoint lacks parameter " + item.key());
        if (it->second.sizes() != item.value().sizes())
            throw IoError("checkpoint parameter " + item.key() + " has the wrong shape");
        item.value().copy_(it->second);
    }
    return net;
}

}  // namespace seranet
