#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "seranet/dataset.hpp"
#include "seranet/network.hpp"
#include "seranet/training.hpp"

namespace seranet::cli {

/// Bad flag combination; reported with exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommonOptions {
    std::uint64_t seed = 0;
    std::filesystem::path out;
    std::filesystem::path data;
    std::optional<double> noise;
    bool force = false;
};

struct GenDataOptions {
    CommonOptions common;
    int brains = 17;
    int test_brains = 3;
    int slices = 57;
    int height = 180;
    int width = 216;
    double rate = 0.30;
    int center_lines = 16;
    std::string tissue_table;
};

/// Model and optimizer flags shared by train and sweep-blocks.
struct ModelFlags {
    std::string model = "seranet";
    std::string reg_type = "A";
    int blocks = 2;
    int recurrences = 2;
    int reg_channels = 64;
    int unet_channels = 32;
    int lstm_channels = 64;
    std::string attention_input = "fixed_n_minus_1";
    std::optional<std::uint64_t> weight_seed;
};

struct OptimFlags {
    std::string loss = "ce";
    int epochs = 50;
    int batch = 12;
    double lr = 1e-4;
    double decay = 0.5;
    int decay_every = 20;
    double l2_weight = 1.0;
};

struct TrainOptions {
    CommonOptions common;
    ModelFlags model;
    OptimFlags optim;
};

struct EvalOptions {
    CommonOptions common;
    std::filesystem::path checkpoint;
    std::filesystem::path run;
    std::string split = "test";
    bool dump_images = false;
    // When set, each must match the checkpoint's config.
    std::optional<std::string> model;
    std::optional<std::string> reg_type;
    std::optional<int> blocks;
    std::optional<int> recurrences;
};

struct SweepOptions {
    CommonOptions common;
    ModelFlags model;
    OptimFlags optim;
    int n_max = 4;
    std::vector<std::string> types = {"A", "B"};
    std::vector<std::string> models = {"two_step", "joint", "seranet"};
};

struct CompareOptions {
    CommonOptions common;
    std::vector<std::filesystem::path> runs;
    std::string mode = "methods";
};

int cmd_gen_data(const GenDataOptions& o);
int cmd_train(const TrainOptions& o);
int cmd_eval(const EvalOptions& o);
int cmd_sweep_blocks(const SweepOptions& o);
int cmd_compare(const CompareOptions& o);

ModelConfig model_config_from(const ModelFlags& f, std::uint64_t seed);
TrainConfig train_config_from(const OptimFlags& f, std::uint64_t seed);

}  // namespace seranet::cli
