#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "seranet/dataset.hpp"
#include "seranet/network.hpp"

namespace seranet {

enum class LossVariant { CeFinal, CeSum, CePlusL2 };

std::string to_string(LossVariant v);
/// Accepts ce / ce_final, ce_sum, ce_l2 / ce_plus_l2.
LossVariant parse_loss_variant(const std::string& s);

struct TrainConfig {
    LossVariant loss = LossVariant::CeFinal;
    double learning_rate = 1e-4;
    double decay_factor = 0.5;
    int decay_every = 20;
    int max_epochs = 50;
    int batch_size = 12;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double l2_weight = 1.0;  // lambda of the ce_plus_l2 variant
    std::uint64_t seed = 0;  // shuffling

    void validate() const;
    /// learning_rate * decay_factor^floor(epoch / decay_every), epochs from 0.
    double lr_at(int epoch) const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Mean over pixels (and batch) of -sum_i gt_i log(clip(s_i, 1e-8, 1)).
torch::Tensor cross_entropy_loss(const torch::Tensor& s, const torch::Tensor& s_gt);

/// Euclidean norm of the stacked 2-channel difference; batch inputs give
/// the mean of the per-sample norms.
torch::Tensor l2_loss(const torch::Tensor& x, const torch::Tensor& x_gt);

/// ce_final: l_ce(s_T); ce_sum: sum_t l_ce(s_t);
/// ce_plus_l2: l_ce(s_T) + l2_weight * l2(x_T, x_full).
torch::Tensor composite_loss(const ForwardOutput& out, const torch::Tensor& seg_gt,
                             const torch::Tensor& x_full, LossVariant variant, double l2_weight = 1.0);

/// Foreground classes reported by the metrics, in column order.
inline constexpr std::array<const char*, 3> kForegroundNames = {"CSF", "GM", "WM"};

struct DiceScores {
    std::array<double, 3> per_class{};  // CSF, GM, WM
    double average = 0.0;
    nlohmann::json to_json() const;
    static DiceScores from_json(const nlohmann::json& j);
};

/// Hard Dice between argmax(pred) and the ground-truth labels. A class
/// absent from both masks scores 1, absent from exactly one scores 0.
DiceScores dice_scores(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);
/// pred: C x H x W probabilities; gt: C x H x W one-hot.
DiceScores dice_scores(const torch::Tensor& pred, const torch::Tensor& gt);
DiceScores mean_dice(const std::vector<DiceScores>& scores);

struct PhaseHistory {
    std::string name;
    std::vector<double> losses;
};

struct Metrics {
    std::vector<PhaseHistory> phases;
    DiceScores train_dice;
    DiceScores test_dice;
    bool has_test = false;
    std::size_t x_full_reads = 0;
    bool x_full_loaded = false;

    /// All per-epoch losses, phases concatenated.
    std::vector<double> loss_history() const;
    nlohmann::json to_json() const;
};

using LogSink = std::function<void(const std::string&)>;

struct TrainResult {
    Network net{nullptr};
    Metrics metrics;
};

/// Whether a training run needs the fully-sampled image at all.
bool needs_x_full(const ModelConfig& model, const TrainConfig& train);

/// Throws ConfigError for anything that would fail mid-run.
void check_training_setup(const ModelConfig& model, const TrainConfig& train, const SampleSource& data);

/// Called after every epoch with the network in eval mode; returning true
/// ends the current phase early.
using EpochHook = std::function<bool(const std::string& phase, int epoch, Network& net)>;

TrainResult train_model(const ModelConfig& model, const TrainConfig& train, const SampleSource& data,
                        const LogSink& log = {}, const EpochHook& hook = {});

struct EvalResult {
    DiceScores mean;
    std::vector<DiceScores> per_slice;
    std::vector<std::size_t> indices;
};

/// Runs the network over one split and averages per-slice Dice. When
/// `on_output` is set it receives (record index, sample, forward output)
/// for every slice.
EvalResult evaluate(Network& net, const SampleSource& data, Split split, int batch_size = 8,
                    const std::function<void(std::size_t, const KSpaceSample&, const ForwardOutput&)>&
                        on_output = {});

/// Stacks samples into batched tensors. x_full is stacked only when every
/// sample carries it.
struct Batch {
    torch::Tensor y, mask, seg_gt, x_full;
};
Batch make_batch(const std::vector<const KSpaceSample*>& samples, torch::Dtype dtype = torch::kFloat32);

}  // namespace seranet
