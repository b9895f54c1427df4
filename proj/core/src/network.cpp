#include "seranet/network.hpp"

#include <cmath>
#include <random>

#include "seranet/common.hpp"
#include "seranet/kspace.hpp"

namespace seranet {

namespace F = torch::nn::functional;
using nlohmann::json;

namespace {

torch::nn::Conv2d conv3x3(int in, int out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

torch::nn::Sequential double_conv(int in, int out) {
    return torch::nn::Sequential(conv3x3(in, out), torch::nn::ReLU(), conv3x3(out, out),
                                 torch::nn::ReLU());
}

torch::Tensor upsample2x(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
}

torch::Tensor crop_to(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
    if (x.size(-2) == h && x.size(-1) == w) return x;
    return x.narrow(-2, 0, h).narrow(-1, 0, w);
}

torch::Tensor ensure_batched(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

}  // namespace

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::SeraNet: return "seranet";
        case ModelKind::OneStep: return "one_step";
        case ModelKind::TwoStep: return "two_step";
        case ModelKind::Joint: return "joint";
    }
    return "?";
}

std::string to_string(RegType r) { return r == RegType::A ? "A" : "B"; }

std::string to_string(AttentionInput a) {
    return a == AttentionInput::FixedNMinus1 ? "fixed_n_minus_1" : "previous_x";
}

ModelKind parse_model_kind(const std::string& s) {
    if (s == "seranet") return ModelKind::SeraNet;
    if (s == "one_step" || s == "onestep" || s == "one-step") return ModelKind::OneStep;
    if (s == "two_step" || s == "twostep" || s == "two-step") return ModelKind::TwoStep;
    if (s == "joint") return ModelKind::Joint;
    throw InvalidArgument("unknown model kind '" + s + "'");
}

RegType parse_reg_type(const std::string& s) {
    if (s == "A" || s == "a") return RegType::A;
    if (s == "B" || s == "b") return RegType::B;
    throw InvalidArgument("unknown reg block type '" + s + "'");
}

AttentionInput parse_attention_input(const std::string& s) {
    if (s == "fixed_n_minus_1") return AttentionInput::FixedNMinus1;
    if (s == "previous_x") return AttentionInput::PreviousX;
    throw InvalidArgument("unknown attention input '" + s + "'");
}

void ModelConfig::validate() const {
    if (kind != ModelKind::OneStep && n_blocks < 1)
        throw ConfigError("model needs at least one reconstruction block");
    if (kind == ModelKind::SeraNet && n_blocks < 2)
        throw ConfigError("seranet needs at least two reconstruction blocks (uses block N-1)");
    if (recurrences < 0) throw ConfigError("recurrences must be non-negative");
    if (reg_channels < 1 || unet_base_channels < 1 || lstm_hidden_channels < 1)
        throw ConfigError("channel widths must be positive");
    if (num_classes < 2) throw ConfigError("need at least two classes");
}

json ModelConfig::to_json() const {
    return {{"model_kind", to_string(kind)},
            {"reg_type", to_string(reg_type)},
            {"n_blocks", n_blocks},
            {"recurrences", recurrences},
            {"reg_channels", reg_channels},
            {"unet_base_channels", unet_base_channels},
            {"lstm_hidden_channels", lstm_hidden_channels},
            {"num_classes", num_classes},
            {"attention_input", to_string(attention_input)},
            {"weight_seed", weight_seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.kind = parse_model_kind(j.at("model_kind").get<std::string>());
    c.reg_type = parse_reg_type(j.at("reg_type").get<std::string>());
    c.n_blocks = j.at("n_blocks").get<int>();
    c.recurrences = j.at("recurrences").get<int>();
    c.reg_channels = j.at("reg_channels").get<int>();
    c.unet_base_channels = j.at("unet_base_channels").get<int>();
    c.lstm_hidden_channels = j.at("lstm_hidden_channels").get<int>();
    c.num_classes = j.value("num_classes", 4);
    c.attention_input = parse_attention_input(j.value("attention_input", "fixed_n_minus_1"));
    c.weight_seed = j.value("weight_seed", std::uint64_t{0});
    return c;
}

std::vector<std::string> ModelConfig::diff(const ModelConfig& other) const {
    const auto a = to_json();
    const auto b = other.to_json();
    std::vector<std::string> out;
    for (const auto& [key, value] : a.items())
        if (!b.contains(key) || b.at(key) != value) out.push_back(key);
    return out;
}

torch::Tensor pad_to_multiple(const torch::Tensor& x, int divisor) {
    const auto h = x.size(-2);
    const auto w = x.size(-1);
    const auto ph = (divisor - h % divisor) % divisor;
    const auto pw = (divisor - w % divisor) % divisor;
    if (ph == 0 && pw == 0) return x;
    if (ph >= h || pw >= w) throw InvalidArgument("pad_to_multiple: image too small to reflect-pad");
    return F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReflect));
}

torch::Tensor RegBlockImpl::forward(const torch::Tensor& x) {
    const bool batched = x.dim() == 4;
    const auto xb = ensure_batched(x);
    if (xb.dim() != 4 || xb.size(1) != in_channels_)
        throw InvalidArgument("reg block expects " + std::to_string(in_channels_) +
                              " input channels, got " + std::to_string(xb.dim() >= 2 ? xb.size(1) : 0));
    auto out = residual_branch(xb) + xb.narrow(1, 0, 2);
    return batched ? out : out.squeeze(0);
}

CascadeBlockImpl::CascadeBlockImpl(int in_channels, int features) : RegBlockImpl(in_channels) {
    const int widths[] = {in_channels, features, features, features, features, 2};
    for (int i = 0; i < 5; ++i)
        convs_.push_back(register_module("conv" + std::to_string(i), conv3x3(widths[i], widths[i + 1])));
}

torch::Tensor CascadeBlockImpl::residual_branch(const torch::Tensor& x) {
    auto h = x;
    for (std::size_t i = 0; i + 1 < convs_.size(); ++i) h = torch::relu(convs_[i]->forward(h));
    return convs_.back()->forward(h);
}

AutoEncoderBlockImpl::AutoEncoderBlockImpl(int in_channels, int features) : RegBlockImpl(in_channels) {
    const int c = features;
    enc1_ = register_module("enc1", double_conv(in_channels, c));
    enc2_ = register_module("enc2", double_conv(c, 2 * c));
    bottom_ = register_module("bottom", double_conv(2 * c, 2 * c));
    dec2_ = register_module("dec2", double_conv(4 * c, 2 * c));
    dec1_ = register_module("dec1", double_conv(3 * c, c));
    out_ = register_module("out", conv3x3(c, 2));
}

torch::Tensor AutoEncoderBlockImpl::residual_branch(const torch::Tensor& x) {
    const auto h = x.size(-2);
    const auto w = x.size(-1);
    const auto xp = pad_to_multiple(x, kAutoEncoderDivisor);
    auto e1 = enc1_->forward(xp);
    auto e2 = enc2_->forward(F::max_pool2d(e1, F::MaxPool2dFuncOptions(2)));
    auto b = bottom_->forward(F::max_pool2d(e2, F::MaxPool2dFuncOptions(2)));
    auto d2 = dec2_->forward(torch::cat({upsample2x(b), e2}, 1));
    auto d1 = dec1_->forward(torch::cat({upsample2x(d2), e1}, 1));
    return crop_to(out_->forward(d1), h, w);
}

std::shared_ptr<RegBlockImpl> make_reg_block(RegType type, int in_channels, int features) {
    if (type == RegType::A) return std::make_shared<CascadeBlockImpl>(in_channels, features);
    return std::make_shared<AutoEncoderBlockImpl>(in_channels, features);
}

ConvLSTMCellImpl::ConvLSTMCellImpl(int input_channels, int hidden_channels)
    : hidden_(hidden_channels) {
    gates_ = register_module("gates", conv3x3(input_channels + hidden_channels, 4 * hidden_channels));
}

RecurrentState ConvLSTMCellImpl::forward(const torch::Tensor& x, const RecurrentState& state) {
    torch::Tensor h = state.hidden;
    torch::Tensor c = state.cell;
    if (state.empty()) {
        h = torch::zeros({x.size(0), hidden_, x.size(2), x.size(3)}, x.options());
        c = torch::zeros_like(h);
    } else if (h.size(0) != x.size(0) || h.size(2) != x.size(2) || h.size(3) != x.size(3)) {
        throw InvalidArgument("ConvLSTM state does not match the input resolution");
    }
    auto gates = gates_->forward(torch::cat({x, h}, 1)).chunk(4, 1);
    auto i = torch::sigmoid(gates[0]);
    auto f = torch::sigmoid(gates[1]);
    auto o = torch::sigmoid(gates[2]);
    auto g = torch::tanh(gates[3]);
    auto c_next = f * c + i * g;
    return {o * torch::tanh(c_next), c_next};
}

SegmenterImpl::SegmenterImpl(int in_channels, int base, int lstm_hidden, int num_classes) {
    const int w[] = {base, 2 * base, 4 * base, 8 * base};
    int prev = in_channels;
    for (int l = 0; l < 4; ++l) {
        enc_.push_back(register_module("enc" + std::to_string(l), double_conv(prev, w[l])));
        prev = w[l];
    }
    lstm_ = register_module("lstm", ConvLSTMCell(w[3], lstm_hidden));
    // dec_[l] consumes the upsampled deeper features and enc_[l]'s skip.
    const int dec_in[] = {w[0] + w[0], w[1] + w[1], w[2] + w[2], lstm_hidden + w[3]};
    const int dec_out[] = {w[0], w[0], w[1], w[2]};
    for (int l = 0; l < 4; ++l)
        dec_.push_back(register_module("dec" + std::to_string(l), double_conv(dec_in[l], dec_out[l])));
    head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(w[0], num_classes, 1)));
}

std::pair<torch::Tensor, RecurrentState> SegmenterImpl::forward(const torch::Tensor& x,
                                                                const RecurrentState& state) {
    if (x.dim() != 4) throw InvalidArgument("segmenter expects a B x C x H x W input");
    if (x.size(2) % kSegmenterDivisor != 0 || x.size(3) % kSegmenterDivisor != 0)
        throw InvalidArgument("segmenter input dims must be multiples of " +
                              std::to_string(kSegmenterDivisor));
    std::vector<torch::Tensor> skips;
    auto h = x;
    for (auto& enc : enc_) {
        h = enc->forward(h);
        skips.push_back(h);
        h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2));
    }
    auto next_state = lstm_->forward(h, state);
    h = next_state.hidden;
    for (int l = 3; l >= 0; --l)
        h = dec_[static_cast<std::size_t>(l)]->forward(
            torch::cat({upsample2x(h), skips[static_cast<std::size_t>(l)]}, 1));
    return {torch::softmax(head_->forward(h), 1), next_state};
}

torch::Tensor attention_combine(const torch::Tensor& x, const torch::Tensor& s) {
    if (x.dim() != s.dim() || x.dim() < 3 || x.size(-3) != 2)
        throw InvalidArgument("attention_combine: expected x (..., 2, H, W) and s (..., C, H, W)");
    if (x.size(-1) != s.size(-1) || x.size(-2) != s.size(-2) ||
        (x.dim() == 4 && x.size(0) != s.size(0)))
        throw InvalidArgument("attention_combine: spatial or batch shapes differ");
    {
        torch::NoGradGuard guard;
        const double dev = (s.sum(-3) - 1.0).abs().max().item<double>();
        if (!(dev <= 1e-3))
            throw ContractViolation("attention_combine: class probabilities do not sum to 1 (max deviation " +
                                    std::to_string(dev) + ")");
    }
    std::vector<torch::Tensor> groups;
    const auto classes = s.size(-3);
    for (std::int64_t i = 0; i < classes; ++i) groups.push_back(s.narrow(-3, i, 1) * x);
    return torch::cat(groups, -3);
}

torch::Tensor ForwardOutput::final_image() const {
    if (!refined.empty()) return refined.back();
    return recon;
}

NetworkImpl::NetworkImpl(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.kind != ModelKind::OneStep) {
        for (int n = 0; n < cfg_.n_blocks; ++n)
            recon_blocks_.push_back(register_module("recon" + std::to_string(n),
                                                    make_reg_block(cfg_.reg_type, 2, cfg_.reg_channels)));
    }
    if (cfg_.kind == ModelKind::SeraNet)
        att_reg_ = register_module("att_reg",
                                   make_reg_block(cfg_.reg_type, 2 * cfg_.num_classes, cfg_.reg_channels));
    segmenter_ = register_module("segmenter", Segmenter(2, cfg_.unet_base_channels,
                                                        cfg_.lstm_hidden_channels, cfg_.num_classes));
    reset_parameters(cfg_.weight_seed);
}

void NetworkImpl::reset_parameters(std::uint64_t seed) {
    torch::NoGradGuard guard;
    for (auto& item : named_parameters(true)) {
        auto& p = item.value();
        if (p.dim() < 2) {
            p.zero_();
            continue;
        }
        const double fan_in = static_cast<double>(p.numel() / p.size(0));
        const double bound = std::sqrt(6.0 / fan_in);
        std::mt19937_64 gen(mix_seed(seed, fnv1a64(item.key())));
        auto values = torch::empty(p.sizes(), torch::kFloat64);
        double* data = values.data_ptr<double>();
        for (std::int64_t i = 0; i < values.numel(); ++i) data[i] = uniform(gen, -bound, bound);
        p.copy_(values);
    }
}

void NetworkImpl::zero_parameters() {
    torch::NoGradGuard guard;
    for (auto& p : parameters(true)) p.zero_();
}

std::pair<torch::Tensor, torch::Tensor> NetworkImpl::recon_init(const torch::Tensor& y,
                                                                const torch::Tensor& mask) {
    if (recon_blocks_.empty()) throw InvalidArgument("recon_init: model has no reconstruction blocks");
    auto x = zero_fill(y);
    torch::Tensor prev = x;
    for (auto& block : recon_blocks_) {
        prev = x;
        x = data_consistency(block->forward(x), y, mask);
    }
    return {prev, x};
}

std::pair<torch::Tensor, RecurrentState> NetworkImpl::segment_step(const torch::Tensor& x,
                                                                   const RecurrentState& state) {
    const bool batched = x.dim() == 4;
    const auto xb = ensure_batched(x);
    const auto h = xb.size(-2);
    const auto w = xb.size(-1);
    auto [s, next] = segmenter_->forward(pad_to_multiple(xb, kSegmenterDivisor), state);
    s = crop_to(s, h, w);
    return {batched ? s : s.squeeze(0), next};
}

torch::Tensor NetworkImpl::attention_refine(const torch::Tensor& x_base, const torch::Tensor& s_prev,
                                            const torch::Tensor& y, const torch::Tensor& mask) {
    if (!att_reg_) throw InvalidArgument("attention_refine: model has no attention block");
    return data_consistency(att_reg_->forward(attention_combine(x_base, s_prev)), y, mask);
}

ForwardOutput NetworkImpl::seranet_forward(const torch::Tensor& y, const torch::Tensor& mask,
                                           int recurrences) {
    if (recurrences < 0) throw InvalidArgument("recurrences must be non-negative");
    if (recurrences > 0 && !att_reg_) throw InvalidArgument("seranet_forward: model has no attention block");
    ForwardOutput out;
    std::tie(out.recon_prev, out.recon) = recon_init(y, mask);
    auto [s, state] = segment_step(out.recon, RecurrentState{});
    out.segmentations.push_back(s);
    for (int t = 1; t <= recurrences; ++t) {
        torch::Tensor base = out.recon_prev;
        if (cfg_.attention_input == AttentionInput::PreviousX)
            base = out.refined.empty() ? out.recon : out.refined.back();
        out.refined.push_back(attention_refine(base, out.segmentations.back(), y, mask));
        std::tie(s, state) = segment_step(out.refined.back(), state);
        out.segmentations.push_back(s);
    }
    return out;
}

ForwardOutput NetworkImpl::baseline_forward(const torch::Tensor& y, const torch::Tensor& mask,
                                            ModelKind kind) {
    ForwardOutput out;
    switch (kind) {
        case ModelKind::OneStep: {
            out.recon = zero_fill(y);
            out.recon_prev = out.recon;
            out.segmentations.push_back(segment_step(out.recon, RecurrentState{}).first);
            return out;
        }
        case ModelKind::Joint:
        case ModelKind::TwoStep: {
            std::tie(out.recon_prev, out.recon) = recon_init(y, mask);
            out.segmentations.push_back(segment_step(out.recon, RecurrentState{}).first);
            return out;
        }
        case ModelKind::SeraNet: break;
    }
    throw InvalidArgument("baseline_forward: '" + to_string(kind) + "' is not a baseline");
}

ForwardOutput NetworkImpl::forward(const torch::Tensor& y, const torch::Tensor& mask) {
    if (cfg_.kind == ModelKind::SeraNet) return seranet_forward(y, mask, cfg_.recurrences);
    return baseline_forward(y, mask, cfg_.kind);
}

std::vector<torch::Tensor> NetworkImpl::recon_parameters() const {
    std::vector<torch::Tensor> out;
    for (const auto& b : recon_blocks_)
        for (const auto& p : b->parameters()) out.push_back(p);
    return out;
}

std::vector<torch::Tensor> NetworkImpl::attention_parameters() const {
    return att_reg_ ? att_reg_->parameters() : std::vector<torch::Tensor>{};
}

std::vector<torch::Tensor> NetworkImpl::segmenter_parameters() const { return segmenter_->parameters(); }

std::int64_t parameter_count(const torch::nn::Module& m) {
    std::int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

}  // namespace seranet
