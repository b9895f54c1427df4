#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seranet/checkpoint.hpp"
#include "seranet/common.hpp"
#include "seranet/report.hpp"

namespace seranet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void prepare_output_dir(const fs::path& dir, bool force) {
    if (dir.empty()) throw UsageError("--out is required");
    if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
        if (!force) throw UsageError("output " + dir.string() + " already exists; pass --force to overwrite");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

// Timestamps live only here, never in metrics or manifests.
class RunLog {
public:
    explicit RunLog(const fs::path& path) : out_(path, std::ios::trunc) {
        if (!out_) throw IoError("cannot write " + path.string());
    }
    void operator()(const std::string& line) {
        out_ << '[' << timestamp() << "] " << line << '\n';
        out_.flush();
        std::cout << line << std::endl;
    }

private:
    std::ofstream out_;
};

std::unique_ptr<DiskDataset> open_dataset(const CommonOptions& c) {
    if (c.data.empty()) throw UsageError("--data is required");
    if (!fs::exists(c.data / "manifest.json")) throw UsageError("no dataset at " + c.data.string());
    auto ds = DiskDataset::open(c.data);
    if (c.noise && std::abs(*c.noise - ds->noise_level()) > 1e-12) {
        std::ostringstream ss;
        ss << "--noise " << *c.noise << " does not match the dataset's noise level " << ds->noise_level();
        throw UsageError(ss.str());
    }
    return ds;
}

json dataset_json(const CommonOptions& c, const DiskDataset& ds) {
    return {{"path", c.data.string()},
            {"manifest_checksum", hex64(file_checksum(c.data / "manifest.json"))},
            {"noise_level", ds.noise_level()},
            {"height", ds.height()},
            {"width", ds.width()}};
}

std::string display_name(ModelKind k) {
    switch (k) {
        case ModelKind::SeraNet: return "SERANet";
        case ModelKind::OneStep: return "One-step";
        case ModelKind::TwoStep: return "Two-step";
        case ModelKind::Joint: return "Joint";
    }
    return "?";
}

std::string loss_label(LossVariant v) {
    switch (v) {
        case LossVariant::CePlusL2: return "l_ce(s_T)+l_2(x_T)";
        case LossVariant::CeSum: return "sum_t l_ce(s_t)";
        case LossVariant::CeFinal: return "l_ce(s_T)";
    }
    return "?";
}

std::string method_label(const ModelConfig& m) {
    if (m.kind == ModelKind::OneStep) return display_name(m.kind);
    return display_name(m.kind) + "-" + std::to_string(m.n_blocks) + " (" + to_string(m.reg_type) + ")";
}

std::string summary_table(const std::string& title, const Metrics& m, double noise) {
    std::vector<TableRow> rows;
    rows.push_back({"train", {{noise, m.train_dice}}});
    if (m.has_test) rows.push_back({"test", {{noise, m.test_dice}}});
    return format_dice_table(title, rows);
}

// Writes checkpoint, metrics.json and metrics.txt for one finished run.
json save_run(const fs::path& dir, TrainResult& result, const ModelConfig& mcfg, const TrainConfig& tcfg,
              const json& dataset) {
    const auto ckpt = dir / "checkpoint.bin";
    save_checkpoint(ckpt, result.net);
    json j = {{"model", mcfg.to_json()},
              {"train", tcfg.to_json()},
              {"dataset", dataset},
              {"metrics", result.metrics.to_json()},
              {"checkpoint_checksum", hex64(file_checksum(ckpt))},
              {"parameter_count", parameter_count(*result.net)}};
    write_text(dir / "metrics.json", j.dump(2) + "\n");
    write_text(dir / "metrics.txt", summary_table(method_label(mcfg) + ", loss " + to_string(tcfg.loss),
                                                  result.metrics, dataset.at("noise_level").get<double>()));
    return j;
}

void write_pgm(const fs::path& p, const torch::Tensor& magnitude) {
    auto m = magnitude.detach().to(torch::kFloat64).contiguous();
    const auto h = m.size(0);
    const auto w = m.size(1);
    const double peak = std::max(m.max().item<double>(), 1e-12);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << "P5\n" << w << ' ' << h << "\n255\n";
    const double* d = m.data_ptr<double>();
    for (std::int64_t i = 0; i < h * w; ++i)
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(d[i] / peak, 0.0, 1.0) * 255.0))));
}

// CSF purple, GM orange, WM white on black.
void write_label_ppm(const fs::path& p, const std::vector<std::uint8_t>& labels, int h, int w) {
    static constexpr unsigned char colors[4][3] = {{0, 0, 0}, {128, 0, 160}, {255, 150, 0}, {255, 255, 255}};
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << "P6\n" << w << ' ' << h << "\n255\n";
    for (auto l : labels)
        for (int c = 0; c < 3; ++c) out.put(static_cast<char>(colors[std::min<int>(l, 3)][c]));
}

}  // namespace

ModelConfig model_config_from(const ModelFlags& f, std::uint64_t seed) {
    ModelConfig m;
    try {
        m.kind = parse_model_kind(f.model);
        m.reg_type = parse_reg_type(f.reg_type);
        m.attention_input = parse_attention_input(f.attention_input);
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    m.n_blocks = f.blocks;
    m.recurrences = f.recurrences;
    m.reg_channels = f.reg_channels;
    m.unet_base_channels = f.unet_channels;
    m.lstm_hidden_channels = f.lstm_channels;
    m.weight_seed = f.weight_seed.value_or(seed);
    try {
        m.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    return m;
}

TrainConfig train_config_from(const OptimFlags& f, std::uint64_t seed) {
    TrainConfig t;
    try {
        t.loss = parse_loss_variant(f.loss);
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    t.max_epochs = f.epochs;
    t.batch_size = f.batch;
    t.learning_rate = f.lr;
    t.decay_factor = f.decay;
    t.decay_every = f.decay_every;
    t.l2_weight = f.l2_weight;
    t.seed = seed;
    try {
        t.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    return t;
}

int cmd_gen_data(const GenDataOptions& o) {
    DatasetConfig cfg;
    cfg.train_brains = o.brains;
    cfg.test_brains = o.test_brains;
    cfg.slices_per_brain = o.slices;
    cfg.height = o.height;
    cfg.width = o.width;
    cfg.rate = o.rate;
    cfg.center_lines = o.center_lines;
    cfg.noise_level = o.common.noise.value_or(0.10);
    cfg.seed = o.common.seed;
    try {
        if (!o.tissue_table.empty()) cfg.tissues = load_tissue_table(o.tissue_table);
        cfg.validate();
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    prepare_output_dir(o.common.out, o.common.force);

    const auto checksum = generate_dataset(o.common.out, cfg);
    const auto total = static_cast<long>(cfg.train_brains + cfg.test_brains) * cfg.slices_per_brain;
    std::cout << "wrote " << total << " records to " << o.common.out.string() << '\n'
              << "  train: " << static_cast<long>(cfg.train_brains) * cfg.slices_per_brain << " records ("
              << cfg.train_brains << " brains x " << cfg.slices_per_brain << " slices)\n"
              << "  test:  " << static_cast<long>(cfg.test_brains) * cfg.slices_per_brain << " records ("
              << cfg.test_brains << " brains x " << cfg.slices_per_brain << " slices)\n"
              << "  size " << cfg.height << "x" << cfg.width << ", rate " << cfg.rate << ", center lines "
              << cfg.center_lines << ", noise " << cfg.noise_level << '\n'
              << "manifest checksum " << hex64(checksum) << '\n';
    return 0;
}

int cmd_train(const TrainOptions& o) {
    const auto mcfg = model_config_from(o.model, o.common.seed);
    const auto tcfg = train_config_from(o.optim, o.common.seed);
    auto ds = open_dataset(o.common);
    try {
        check_training_setup(mcfg, tcfg, *ds);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    prepare_output_dir(o.common.out, o.common.force);

    RunLog log(o.common.out / "run.log");
    log("train " + method_label(mcfg) + " T=" + std::to_string(mcfg.recurrences) + " loss " +
        to_string(tcfg.loss) + " on " + o.common.data.string());
    log("model " + mcfg.to_json().dump());
    log("optimizer " + tcfg.to_json().dump());
    auto result = train_model(mcfg, tcfg, *ds, std::ref(log));
    const auto j = save_run(o.common.out, result, mcfg, tcfg, dataset_json(o.common, *ds));
    log("x_full reads: " + std::to_string(result.metrics.x_full_reads));
    log("checkpoint checksum " + j.at("checkpoint_checksum").get<std::string>());
    std::cout << summary_table("final Dice", result.metrics, ds->noise_level());
    return 0;
}

int cmd_eval(const EvalOptions& o) {
    fs::path ckpt = o.checkpoint;
    if (ckpt.empty() && !o.run.empty()) ckpt = o.run / "checkpoint.bin";
    if (ckpt.empty()) throw UsageError("--ckpt or --run is required");
    if (!fs::exists(ckpt)) throw UsageError("no checkpoint at " + ckpt.string());

    const auto stored = read_checkpoint_config(ckpt);
    {
        ModelConfig expected = stored;
        try {
            if (o.model) expected.kind = parse_model_kind(*o.model);
            if (o.reg_type) expected.reg_type = parse_reg_type(*o.reg_type);
        } catch (const InvalidArgument& e) {
            throw UsageError(e.what());
        }
        if (o.blocks) expected.n_blocks = *o.blocks;
        if (o.recurrences) expected.recurrences = *o.recurrences;
        const auto fields = stored.diff(expected);
        if (!fields.empty()) {
            std::string msg = "checkpoint/config mismatch in:";
            const auto a = stored.to_json();
            const auto b = expected.to_json();
            for (const auto& f : fields) msg += " " + f + " (checkpoint " + a.at(f).dump() + ", requested " + b.at(f).dump() + ")";
            throw UsageError(msg);
        }
    }
    Split split;
    try {
        split = parse_split(o.split);
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    auto ds = open_dataset(o.common);
    if (ds->indices(split).empty()) throw UsageError("dataset has no " + o.split + " records");
    if (!o.common.out.empty()) prepare_output_dir(o.common.out, o.common.force);
    if (o.dump_images && o.common.out.empty()) throw UsageError("--dump-images needs --out");

    auto net = load_checkpoint(ckpt);
    net->eval();
    fs::path image_dir;
    if (o.dump_images) {
        image_dir = o.common.out / "images";
        fs::create_directories(image_dir);
    }
    const auto result = evaluate(net, *ds, split, 8, [&](std::size_t index, const KSpaceSample& s, const ForwardOutput& out) {
        if (image_dir.empty()) return;
        char stem[32];
        std::snprintf(stem, sizeof stem, "rec_%06zu", index);
        const auto image = out.final_image();
        if (image.defined()) write_pgm(image_dir / (std::string(stem) + "_recon.pgm"), image.pow(2).sum(0).sqrt());
        write_pgm(image_dir / (std::string(stem) + "_zero_fill.pgm"), zero_fill(s.y).pow(2).sum(0).sqrt());
        write_label_ppm(image_dir / (std::string(stem) + "_seg.ppm"), argmax_labels(out.final_segmentation()),
                        s.height(), s.width());
        write_label_ppm(image_dir / (std::string(stem) + "_gt.ppm"), s.labels.labels, s.height(), s.width());
    });

    std::vector<TableRow> rows = {{method_label(stored) + " [" + o.split + "]", {{ds->noise_level(), result.mean}}}};
    const auto table = format_dice_table("evaluation", rows);
    std::cout << table;
    if (!o.common.out.empty()) {
        json per_slice = json::array();
        for (std::size_t k = 0; k < result.per_slice.size(); ++k)
            per_slice.push_back({{"index", result.indices[k]}, {"dice", result.per_slice[k].to_json()}});
        json j = {{"checkpoint", ckpt.string()},
                  {"checkpoint_checksum", hex64(file_checksum(ckpt))},
                  {"model", stored.to_json()},
                  {"dataset", dataset_json(o.common, *ds)},
                  {"split", o.split},
                  {"dice", result.mean.to_json()},
                  {"per_slice", per_slice}};
        write_text(o.common.out / "eval.json", j.dump(2) + "\n");
        write_text(o.common.out / "eval.txt", table);
    }
    return 0;
}

int cmd_sweep_blocks(const SweepOptions& o) {
    if (o.n_max < 1) throw UsageError("--n-max must be at least 1");
    const auto tcfg = train_config_from(o.optim, o.common.seed);
    std::vector<ModelKind> kinds;
    std::vector<RegType> types;
    try {
        for (const auto& m : o.models) kinds.push_back(parse_model_kind(m));
        for (const auto& t : o.types) types.push_back(parse_reg_type(t));
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    for (auto k : kinds)
        if (k == ModelKind::OneStep) throw UsageError("one_step has no reconstruction blocks to sweep");

    // Every configuration is validated before any training starts.
    struct Job {
        ModelConfig model;
        std::string name;
    };
    std::vector<Job> jobs;
    for (auto kind : kinds)
        for (auto type : types)
            for (int n = kind == ModelKind::SeraNet ? 2 : 1; n <= o.n_max; ++n) {
                ModelFlags f = o.model;
                f.model = to_string(kind);
                f.reg_type = to_string(type);
                f.blocks = n;
                jobs.push_back({model_config_from(f, o.common.seed),
                                to_string(kind) + "_" + to_string(type) + "_N" + std::to_string(n)});
            }
    if (jobs.empty()) throw UsageError("nothing to sweep (SERANet needs --n-max >= 2)");
    auto ds = open_dataset(o.common);
    for (const auto& job : jobs) {
        try {
            check_training_setup(job.model, tcfg, *ds);
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
    }
    prepare_output_dir(o.common.out, o.common.force);
    RunLog log(o.common.out / "run.log");
    const auto dataset = dataset_json(o.common, *ds);
    const bool has_test = !ds->indices(Split::Test).empty();

    json rows = json::array();
    std::ostringstream csv;
    csv << "model,reg_type,n_blocks,recurrences,seed,weight_seed,split,CSF,GM,WM,average\n";
    std::map<std::string, PlotSeries> series;
    for (const auto& job : jobs) {
        log("== " + job.name + " ==");
        const auto dir = o.common.out / job.name;
        fs::create_directories(dir);
        auto result = train_model(job.model, tcfg, *ds, std::ref(log));
        save_run(dir, result, job.model, tcfg, dataset);
        const auto& dice = has_test ? result.metrics.test_dice : result.metrics.train_dice;
        const std::string split = has_test ? "test" : "train";
        rows.push_back({{"model", to_string(job.model.kind)},
                        {"reg_type", to_string(job.model.reg_type)},
                        {"n_blocks", job.model.n_blocks},
                        {"recurrences", job.model.recurrences},
                        {"seed", o.common.seed},
                        {"weight_seed", job.model.weight_seed},
                        {"split", split},
                        {"dice", dice.to_json()},
                        {"run_dir", job.name}});
        csv << to_string(job.model.kind) << ',' << to_string(job.model.reg_type) << ',' << job.model.n_blocks << ','
            << job.model.recurrences << ',' << o.common.seed << ',' << job.model.weight_seed << ',' << split;
        for (double v : dice.per_class) csv << ',' << std::setprecision(10) << v;
        csv << ',' << dice.average << '\n';
        const auto key = display_name(job.model.kind) + " (Type " + to_string(job.model.reg_type) + ")";
        series[key].name = key;
        series[key].points.emplace_back(job.model.n_blocks, dice.average);
    }
    write_text(o.common.out / "sweep.csv", csv.str());
    write_text(o.common.out / "sweep.json",
               json({{"dataset", dataset}, {"train", tcfg.to_json()}, {"rows", rows}}).dump(2) + "\n");
    std::vector<PlotSeries> plot;
    for (auto& [_, s] : series) plot.push_back(s);
    write_text(o.common.out / "sweep.svg",
               svg_line_plot("Dice vs number of reconstruction blocks", "reconstruction blocks N",
                             "average Dice (" + std::string(has_test ? "test" : "train") + ")", plot));
    std::cout << csv.str();
    return 0;
}

int cmd_compare(const CompareOptions& o) {
    if (o.mode != "loss" && o.mode != "methods") throw UsageError("--mode must be 'loss' or 'methods'");
    if (o.runs.empty()) throw UsageError("--runs needs at least one run directory");

    struct Entry {
        std::string label;
        int order;
        double noise;
        DiceScores dice;
        std::string split;
    };
    std::vector<Entry> entries;
    std::vector<std::string> missing;
    for (const auto& dir : o.runs) {
        const auto path = dir / "metrics.json";
        if (!fs::exists(path)) {
            missing.push_back(dir.string());
            continue;
        }
        json j;
        try {
            j = json::parse(read_file_bytes(path));
        } catch (const json::exception&) {
            missing.push_back(dir.string() + " (unreadable metrics.json)");
            continue;
        }
        const auto mcfg = ModelConfig::from_json(j.at("model"));
        const auto tcfg = TrainConfig::from_json(j.at("train"));
        const double noise = j.at("dataset").at("noise_level").get<double>();
        if (o.common.noise && std::abs(*o.common.noise - noise) > 1e-12) continue;
        const auto& m = j.at("metrics");
        const bool has_test = !m.at("test_dice").is_null();
        Entry e;
        e.noise = noise;
        e.split = has_test ? "test" : "train";
        e.dice = DiceScores::from_json(has_test ? m.at("test_dice") : m.at("train_dice"));
        if (o.mode == "loss") {
            e.label = loss_label(tcfg.loss);
            e.order = tcfg.loss == LossVariant::CePlusL2 ? 0 : tcfg.loss == LossVariant::CeSum ? 1 : 2;
        } else {
            e.label = method_label(mcfg);
            e.order = static_cast<int>(mcfg.kind == ModelKind::OneStep   ? 0
                                       : mcfg.kind == ModelKind::TwoStep ? 1
                                       : mcfg.kind == ModelKind::Joint   ? 2
                                                                         : 3) *
                          1000 +
                      mcfg.n_blocks * 10 + static_cast<int>(mcfg.reg_type);
        }
        if (!has_test) e.label += " [train]";
        entries.push_back(e);
    }

    // Runs sharing a label and noise level (e.g. several seeds) are averaged.
    std::map<std::pair<int, std::string>, std::map<double, std::vector<DiceScores>>> grouped;
    for (const auto& e : entries) grouped[{e.order, e.label}][e.noise].push_back(e.dice);
    std::vector<TableRow> rows;
    json rows_j = json::array();
    for (const auto& [key, by_noise] : grouped) {
        TableRow row{key.second, {}};
        for (const auto& [noise, list] : by_noise) {
            row.by_noise[noise] = mean_dice(list);
            rows_j.push_back({{"label", key.second},
                              {"noise_level", noise},
                              {"runs", list.size()},
                              {"dice", row.by_noise[noise].to_json()}});
        }
        rows.push_back(row);
    }

    std::ostringstream text;
    text << format_dice_table(o.mode == "loss" ? "Dice by training loss" : "Dice by method", rows);
    if (!missing.empty()) {
        text << "\nmissing runs:\n";
        for (const auto& m : missing) text << "  " << m << '\n';
    }
    text << '\n' << published_reference_block();
    std::cout << text.str();
    if (!o.common.out.empty()) {
        prepare_output_dir(o.common.out, o.common.force);
        write_text(o.common.out / "compare.txt", text.str());
        write_text(o.common.out / "compare.json",
                   json({{"mode", o.mode}, {"rows", rows_j}, {"missing", missing}}).dump(2) + "\n");
    }
    return 0;
}

}  // namespace seranet::cli
