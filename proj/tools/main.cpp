#include <iostream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "commands.hpp"
#include "seranet/common.hpp"

using namespace seranet::cli;

namespace {

void add_common(CLI::App* cmd, CommonOptions& c, bool needs_data, bool needs_out) {
    cmd->add_option("--seed", c.seed, "master seed")->capture_default_str();
    auto* out = cmd->add_option("--out", c.out, "output directory");
    if (needs_out) out->required();
    auto* data = cmd->add_option("--data", c.data, "dataset directory");
    if (needs_data) data->required();
    cmd->add_option("--noise", c.noise, "noise level (checked against the dataset when one is given)");
    cmd->add_flag("--force", c.force, "overwrite an existing output directory");
}

void add_model(CLI::App* cmd, ModelFlags& m) {
    cmd->add_option("--model", m.model, "seranet | one_step | two_step | joint")->capture_default_str();
    cmd->add_option("--reg-type", m.reg_type, "A (cascade) | B (auto-encoder)")->capture_default_str();
    cmd->add_option("--blocks,-N", m.blocks, "reconstruction blocks")->capture_default_str();
    cmd->add_option("--recurrences,-T,--T", m.recurrences, "refinement recurrences")->capture_default_str();
    cmd->add_option("--reg-channels", m.reg_channels)->capture_default_str();
    cmd->add_option("--unet-channels", m.unet_channels)->capture_default_str();
    cmd->add_option("--lstm-channels", m.lstm_channels)->capture_default_str();
    cmd->add_option("--attention-input", m.attention_input, "fixed_n_minus_1 | previous_x")->capture_default_str();
    cmd->add_option("--weight-seed", m.weight_seed, "weight init seed (defaults to --seed)");
}

void add_optim(CLI::App* cmd, OptimFlags& o) {
    cmd->add_option("--loss", o.loss, "ce | ce_sum | ce_l2")->capture_default_str();
    cmd->add_option("--epochs", o.epochs)->capture_default_str();
    cmd->add_option("--batch", o.batch)->capture_default_str();
    cmd->add_option("--lr", o.lr)->capture_default_str();
    cmd->add_option("--lr-decay", o.decay)->capture_default_str();
    cmd->add_option("--decay-every", o.decay_every)->capture_default_str();
    cmd->add_option("--l2-weight", o.l2_weight)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Brain segmentation from undersampled k-space"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI file with flag values; command-line flags win");
    int threads = 1;
    app.add_option("--threads", threads, "intra-op threads")->capture_default_str();

    GenDataOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "synthesize a phantom k-space dataset");
    add_common(gen_cmd, gen.common, false, true);
    gen_cmd->add_option("--brains", gen.brains, "training brains")->capture_default_str();
    gen_cmd->add_option("--test-brains", gen.test_brains)->capture_default_str();
    gen_cmd->add_option("--slices", gen.slices, "slices per brain")->capture_default_str();
    gen_cmd->add_option("--height", gen.height)->capture_default_str();
    gen_cmd->add_option("--width", gen.width)->capture_default_str();
    gen_cmd->add_option("--rate", gen.rate, "fraction of phase-encode lines kept")->capture_default_str();
    gen_cmd->add_option("--center-lines", gen.center_lines)->capture_default_str();
    gen_cmd->add_option("--tissue-table", gen.tissue_table, "JSON tissue table");

    TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "train one model");
    add_common(train_cmd, train.common, true, true);
    add_model(train_cmd, train.model);
    add_optim(train_cmd, train.optim);

    EvalOptions ev;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd, ev.common, true, false);
    eval_cmd->add_option("--ckpt", ev.checkpoint, "checkpoint file");
    eval_cmd->add_option("--run", ev.run, "run directory holding checkpoint.bin");
    eval_cmd->add_option("--split", ev.split, "train | test")->capture_default_str();
    eval_cmd->add_flag("--dump-images", ev.dump_images, "write PGM/PPM images under --out");
    eval_cmd->add_option("--model", ev.model);
    eval_cmd->add_option("--reg-type", ev.reg_type);
    eval_cmd->add_option("--blocks,-N", ev.blocks);
    eval_cmd->add_option("--recurrences,-T,--T", ev.recurrences);

    SweepOptions sweep;
    auto* sweep_cmd = app.add_subcommand("sweep-blocks", "train over a range of block counts");
    add_common(sweep_cmd, sweep.common, true, true);
    add_model(sweep_cmd, sweep.model);
    add_optim(sweep_cmd, sweep.optim);
    sweep_cmd->add_option("--n-max", sweep.n_max)->capture_default_str();
    sweep_cmd->add_option("--types", sweep.types)->capture_default_str();
    sweep_cmd->add_option("--models", sweep.models)->capture_default_str();

    CompareOptions cmp;
    auto* cmp_cmd = app.add_subcommand("compare", "tabulate finished runs");
    add_common(cmp_cmd, cmp.common, false, false);
    cmp_cmd->add_option("--runs", cmp.runs, "run directories")->required();
    cmp_cmd->add_option("--mode", cmp.mode, "methods | loss")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (threads < 1) throw UsageError("--threads must be positive");
        torch::set_num_threads(threads);
        if (*gen_cmd) return cmd_gen_data(gen);
        if (*train_cmd) return cmd_train(train);
        if (*eval_cmd) return cmd_eval(ev);
        if (*sweep_cmd) return cmd_sweep_blocks(sweep);
        if (*cmp_cmd) return cmd_compare(cmp);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const seranet::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
