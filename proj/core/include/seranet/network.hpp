#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace seranet {

enum class ModelKind { SeraNet, OneStep, TwoStep, Joint };
enum class RegType { A, B };
/// Which image the attention module weights at recurrence t: always the
/// output of reconstruction block N-1, or the previous recurrence's image.
enum class AttentionInput { FixedNMinus1, PreviousX };

std::string to_string(ModelKind k);
std::string to_string(RegType r);
std::string to_string(AttentionInput a);
ModelKind parse_model_kind(const std::string& s);
RegType parse_reg_type(const std::string& s);
AttentionInput parse_attention_input(const std::string& s);

struct ModelConfig {
    ModelKind kind = ModelKind::SeraNet;
    RegType reg_type = RegType::A;
    int n_blocks = 2;
    int recurrences = 2;
    int reg_channels = 64;
    int unet_base_channels = 32;
    int lstm_hidden_channels = 64;
    int num_classes = 4;
    AttentionInput attention_input = AttentionInput::FixedNMinus1;
    std::uint64_t weight_seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    /// Names of the fields whose values differ.
    std::vector<std::string> diff(const ModelConfig& other) const;
};

/// Spatial size multiple required by the segmenter (four 2x poolings).
inline constexpr int kSegmenterDivisor = 16;
/// Spatial size multiple required by the Type B block (two 2x poolings).
inline constexpr int kAutoEncoderDivisor = 4;

/// Reflect-pads the last two axes up to the next multiple of `divisor`.
torch::Tensor pad_to_multiple(const torch::Tensor& x, int divisor);

/// Common interface of the image-domain regularization blocks. Input is
/// B x C_in x H x W (or C_in x H x W); output has two channels and adds the
/// first two input channels as a residual.
class RegBlockImpl : public torch::nn::Module {
public:
    explicit RegBlockImpl(int in_channels) : in_channels_(in_channels) {}
    torch::Tensor forward(const torch::Tensor& x);
    int in_channels() const { return in_channels_; }

protected:
    virtual torch::Tensor residual_branch(const torch::Tensor& x) = 0;

private:
    int in_channels_;
};

/// Type A: five 3x3 convolutions with ReLU in between.
class CascadeBlockImpl final : public RegBlockImpl {
public:
    CascadeBlockImpl(int in_channels, int features);

protected:
    torch::Tensor residual_branch(const torch::Tensor& x) override;

private:
    std::vector<torch::nn::Conv2d> convs_;
};

/// Type B: three-scale encoder/decoder with skip connections.
class AutoEncoderBlockImpl final : public RegBlockImpl {
public:
    AutoEncoderBlockImpl(int in_channels, int features);

protected:
    torch::Tensor residual_branch(const torch::Tensor& x) override;

private:
    torch::nn::Sequential enc1_{nullptr}, enc2_{nullptr}, bottom_{nullptr};
    torch::nn::Sequential dec2_{nullptr}, dec1_{nullptr};
    torch::nn::Conv2d out_{nullptr};
};

std::shared_ptr<RegBlockImpl> make_reg_block(RegType type, int in_channels, int features);

/// ConvLSTM hidden and cell tensors; undefined means zero state.
struct RecurrentState {
    torch::Tensor hidden;
    torch::Tensor cell;
    bool empty() const { return !hidden.defined(); }
};

class ConvLSTMCellImpl : public torch::nn::Module {
public:
    ConvLSTMCellImpl(int input_channels, int hidden_channels);
    RecurrentState forward(const torch::Tensor& x, const RecurrentState& state);
    int hidden_channels() const { return hidden_; }

private:
    int hidden_;
    torch::nn::Conv2d gates_{nullptr};
};
TORCH_MODULE(ConvLSTMCell);

/// Four-level UNet with a ConvLSTM cell at the bottleneck and a softmax
/// head. Input spatial dims must be multiples of kSegmenterDivisor.
class SegmenterImpl : public torch::nn::Module {
public:
    SegmenterImpl(int in_channels, int base_channels, int lstm_hidden, int num_classes);
    std::pair<torch::Tensor, RecurrentState> forward(const torch::Tensor& x,
                                                     const RecurrentState& state);

private:
    std::vector<torch::nn::Sequential> enc_;
    std::vector<torch::nn::Sequential> dec_;
    ConvLSTMCell lstm_{nullptr};
    torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Segmenter);

/// Multi-class attention: group i = s^i * x for each class channel i,
/// concatenated along the channel axis (2 * C output channels). Throws
/// ContractViolation when s is not normalized over classes.
torch::Tensor attention_combine(const torch::Tensor& x, const torch::Tensor& s);

/// Everything produced by one forward pass.
struct ForwardOutput {
    std::vector<torch::Tensor> segmentations;  // s_0 .. s_T
    torch::Tensor recon_prev;                  // output of block N-1 (post-DC)
    torch::Tensor recon;                       // output of block N (post-DC)
    std::vector<torch::Tensor> refined;        // x_1 .. x_T

    const torch::Tensor& final_segmentation() const { return segmentations.back(); }
    /// x_T: last refined image, else the reconstruction, else undefined.
    torch::Tensor final_image() const;
};

/// All learnable components. Which ones exist depends on the model kind:
/// one_step has only the segmenter, joint/two_step add the reconstruction
/// cascade, seranet adds the attention Reg block.
class NetworkImpl : public torch::nn::Module {
public:
    explicit NetworkImpl(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }

    /// Fan-in scaled uniform weights drawn per parameter from
    /// (seed, parameter name); biases start at zero.
    void reset_parameters(std::uint64_t seed);
    void zero_parameters();

    /// x <- zero_fill(y); N times x <- DC(Reg_n(x)). Returns the outputs of
    /// blocks N-1 and N (the zero-filled image stands in for block 0).
    std::pair<torch::Tensor, torch::Tensor> recon_init(const torch::Tensor& y,
                                                       const torch::Tensor& mask);
    /// Pads to the segmenter's divisor, runs it, crops back.
    std::pair<torch::Tensor, RecurrentState> segment_step(const torch::Tensor& x,
                                                          const RecurrentState& state);
    /// DC(AttReg(attention_combine(x_base, s_prev))).
    torch::Tensor attention_refine(const torch::Tensor& x_base, const torch::Tensor& s_prev,
                                   const torch::Tensor& y, const torch::Tensor& mask);

    ForwardOutput seranet_forward(const torch::Tensor& y, const torch::Tensor& mask, int recurrences);
    ForwardOutput baseline_forward(const torch::Tensor& y, const torch::Tensor& mask, ModelKind kind);
    /// Dispatches on the configured kind.
    ForwardOutput forward(const torch::Tensor& y, const torch::Tensor& mask);

    std::vector<torch::Tensor> recon_parameters() const;
    std::vector<torch::Tensor> attention_parameters() const;
    std::vector<torch::Tensor> segmenter_parameters() const;

    const Segmenter& segmenter() const { return segmenter_; }

private:
    ModelConfig cfg_;
    std::vector<std::shared_ptr<RegBlockImpl>> recon_blocks_;
    std::shared_ptr<RegBlockImpl> att_reg_;
    Segmenter segmenter_{nullptr};
};
TORCH_MODULE(Network);

std::int64_t parameter_count(const torch::nn::Module& m);

}  // namespace seranet
