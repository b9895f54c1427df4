#include "seranet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "seranet/common.hpp"
#include "seranet/kspace.hpp"

namespace seranet {

using nlohmann::json;

std::string to_string(LossVariant v) {
    switch (v) {
        case LossVariant::CeFinal: return "ce_final";
        case LossVariant::CeSum: return "ce_sum";
        case LossVariant::CePlusL2: return "ce_plus_l2";
    }
    return "?";
}

LossVariant parse_loss_variant(const std::string& s) {
    if (s == "ce" || s == "ce_final") return LossVariant::CeFinal;
    if (s == "ce_sum") return LossVariant::CeSum;
    if (s == "ce_l2" || s == "ce_plus_l2") return LossVariant::CePlusL2;
    throw InvalidArgument("unknown loss variant '" + s + "'");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !(decay_factor > 0.0) || decay_every < 1)
        throw ConfigError("learning-rate schedule parameters must be positive");
    if (max_epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch size must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
        throw ConfigError("optimizer moments must lie in (0, 1) and eps be positive");
    if (l2_weight < 0.0) throw ConfigError("l2 weight must be non-negative");
}

double TrainConfig::lr_at(int epoch) const {
    return learning_rate * std::pow(decay_factor, epoch / decay_every);
}

json TrainConfig::to_json() const {
    return {{"loss_variant", to_string(loss)},
            {"learning_rate", learning_rate},
            {"decay_factor", decay_factor},
            {"decay_every", decay_every},
            {"max_epochs", max_epochs},
            {"batch_size", batch_size},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps},
            {"l2_weight", l2_weight},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.loss = parse_loss_variant(j.value("loss_variant", to_string(c.loss)));
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.decay_every = j.value("decay_every", c.decay_every);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.l2_weight = j.value("l2_weight", c.l2_weight);
    c.seed = j.value("seed", c.seed);
    return c;
}

torch::Tensor cross_entropy_loss(const torch::Tensor& s, const torch::Tensor& s_gt) {
    if (s.sizes() != s_gt.sizes()) throw InvalidArgument("cross_entropy_loss: shapes differ");
    const auto log_s = torch::log(torch::clamp(s, 1e-8, 1.0));
    return -(s_gt.to(s.scalar_type()) * log_s).sum(-3).mean();
}

torch::Tensor l2_loss(const torch::Tensor& x, const torch::Tensor& x_gt) {
    if (!x.defined() || !x_gt.defined() || x.sizes() != x_gt.sizes())
        throw InvalidArgument("l2_loss: shapes differ");
    const auto diff = x - x_gt.to(x.scalar_type());
    if (diff.dim() == 4) return torch::linalg_vector_norm(diff.flatten(1), 2, {1}).mean();
    return torch::linalg_vector_norm(diff.flatten(), 2);
}

torch::Tensor composite_loss(const ForwardOutput& out, const torch::Tensor& seg_gt,
                             const torch::Tensor& x_full, LossVariant variant, double l2_weight) {
    if (out.segmentations.empty()) throw InvalidArgument("composite_loss: no segmentation outputs");
    switch (variant) {
        case LossVariant::CeFinal: return seranet::cross_entropy_loss(out.final_segmentation(), seg_gt);
        case LossVariant::CeSum: {
            auto total = seranet::cross_entropy_loss(out.segmentations.front(), seg_gt);
            for (std::size_t t = 1; t < out.segmentations.size(); ++t)
                total = total + seranet::cross_entropy_loss(out.segmentations[t], seg_gt);
            return total;
        }
        case LossVariant::CePlusL2: {
            const auto x_t = out.final_image();
            if (!x_t.defined()) throw InvalidArgument("composite_loss: ce_plus_l2 needs an image output");
            if (!x_full.defined()) throw InvalidArgument("composite_loss: ce_plus_l2 needs x_full");
            return seranet::cross_entropy_loss(out.final_segmentation(), seg_gt) + l2_weight * l2_loss(x_t, x_full);
        }
    }
    throw InvalidArgument("composite_loss: unknown variant");
}

json DiceScores::to_json() const {
    return {{"CSF", per_class[0]}, {"GM", per_class[1]}, {"WM", per_class[2]}, {"average", average}};
}

DiceScores DiceScores::from_json(const json& j) {
    DiceScores d;
    for (std::size_t i = 0; i < 3; ++i) d.per_class[i] = j.at(kForegroundNames[i]).get<double>();
    d.average = j.at("average").get<double>();
    return d;
}

DiceScores dice_scores(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size()) throw InvalidArgument("dice_scores: sizes differ");
    std::array<std::int64_t, 4> n_pred{}, n_gt{}, n_both{};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto p = pred[i];
        const auto g = gt[i];
        if (p < 4) ++n_pred[p];
        if (g < 4) ++n_gt[g];
        if (p == g && p < 4) ++n_both[p];
    }
    DiceScores d;
    for (std::size_t c = 1; c <= 3; ++c) {
        const auto denom = n_pred[c] + n_gt[c];
        d.per_class[c - 1] = denom == 0 ? 1.0 : 2.0 * static_cast<double>(n_both[c]) / static_cast<double>(denom);
    }
    d.average = (d.per_class[0] + d.per_class[1] + d.per_class[2]) / 3.0;
    return d;
}

DiceScores dice_scores(const torch::Tensor& pred, const torch::Tensor& gt) {
    if (pred.sizes() != gt.sizes()) throw InvalidArgument("dice_scores: shapes differ");
    return dice_scores(argmax_labels(pred), argmax_labels(gt));
}

DiceScores mean_dice(const std::vector<DiceScores>& scores) {
    DiceScores m;
    if (scores.empty()) return m;
    for (const auto& s : scores) {
        for (std::size_t c = 0; c < 3; ++c) m.per_class[c] += s.per_class[c];
        m.average += s.average;
    }
    const auto n = static_cast<double>(scores.size());
    for (auto& v : m.per_class) v /= n;
    m.average /= n;
    return m;
}

std::vector<double> Metrics::loss_history() const {
    std::vector<double> all;
    for (const auto& p : phases) all.insert(all.end(), p.losses.begin(), p.losses.end());
    return all;
}

json Metrics::to_json() const {
    json phases_j = json::array();
    for (const auto& p : phases) phases_j.push_back({{"name", p.name}, {"loss_history", p.losses}});
    json j = {{"loss_history", loss_history()},
              {"phases", phases_j},
              {"train_dice", train_dice.to_json()},
              {"x_full_loaded", x_full_loaded},
              {"x_full_reads", x_full_reads}};
    j["test_dice"] = has_test ? test_dice.to_json() : json(nullptr);
    return j;
}

bool needs_x_full(const ModelConfig& model, const TrainConfig& train) {
    return model.kind == ModelKind::TwoStep || train.loss == LossVariant::CePlusL2;
}

void check_training_setup(const ModelConfig& model, const TrainConfig& train, const SampleSource& data) {
    model.validate();
    train.validate();
    const auto train_idx = data.indices(Split::Train);
    if (train_idx.empty()) throw ConfigError("dataset has no training records");
    if (model.kind == ModelKind::OneStep && train.loss == LossVariant::CePlusL2)
        throw ConfigError("one_step has no reconstruction to apply the l2 term to");

    std::set<std::int64_t> train_brains;
    std::set<std::int64_t> test_brains;
    for (std::size_t i = 0; i < data.size(); ++i)
        (data.split_of(i) == Split::Train ? train_brains : test_brains).insert(data.brain_of(i));
    for (auto b : test_brains)
        if (train_brains.count(b)) throw ConfigError("brain " + std::to_string(b) + " appears in both splits");

    // Reflect padding up to the segmenter divisor must fit inside the image.
    const auto probe = data.load(train_idx.front(), false);
    for (int dim : {probe.height(), probe.width()}) {
        const int pad = (kSegmenterDivisor - dim % kSegmenterDivisor) % kSegmenterDivisor;
        if (pad >= dim) throw ConfigError("slice dimension " + std::to_string(dim) + " is too small to pad");
    }
}

Batch make_batch(const std::vector<const KSpaceSample*>& samples, torch::Dtype dtype) {
    std::vector<torch::Tensor> ys, masks, segs, xs;
    bool all_x = true;
    for (const auto* s : samples) {
        ys.push_back(s->y);
        masks.push_back(s->mask.as_tensor(dtype));
        segs.push_back(s->seg_gt);
        all_x = all_x && s->x_full.defined();
        if (s->x_full.defined()) xs.push_back(s->x_full);
    }
    Batch b;
    b.y = torch::stack(ys).to(dtype);
    b.mask = torch::stack(masks);
    b.seg_gt = torch::stack(segs).to(dtype);
    if (all_x && !xs.empty()) b.x_full = torch::stack(xs).to(dtype);
    return b;
}

namespace {

std::string format_epoch(const std::string& phase, int epoch, int epochs, double lr, double loss) {
    std::ostringstream ss;
    ss << phase << " epoch " << (epoch + 1) << "/" << epochs << " lr " << lr << " loss " << loss;
    return ss.str();
}

void set_lr(torch::optim::Adam& opt, double lr) {
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

// One optimization phase over the training samples.
PhaseHistory run_phase(const std::string& name, std::vector<torch::Tensor> params,
                       const TrainConfig& cfg, const std::vector<KSpaceSample>& samples,
                       const std::function<torch::Tensor(const Batch&)>& loss_fn, const LogSink& log,
                       const std::function<bool(int)>& after_epoch) {
    PhaseHistory history{name, {}};
    torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.learning_rate)
                                       .betas({cfg.beta1, cfg.beta2})
                                       .eps(cfg.adam_eps));
    std::vector<std::size_t> order(samples.size());
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        set_lr(opt, lr);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 gen(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), gen);

        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const KSpaceSample*> batch_samples;
            for (auto k = start; k < end; ++k) batch_samples.push_back(&samples[order[k]]);
            const auto batch = make_batch(batch_samples);

            opt.zero_grad();
            auto loss = loss_fn(batch);
            loss.backward();
            opt.step();
            total += loss.item<double>() * static_cast<double>(end - start);
        }
        history.losses.push_back(total / static_cast<double>(samples.size()));
        if (log) log(format_epoch(name, epoch, cfg.max_epochs, lr, history.losses.back()));
        if (after_epoch && after_epoch(epoch)) break;
    }
    return history;
}

}  // namespace

TrainResult train_model(const ModelConfig& model, const TrainConfig& train, const SampleSource& data,
                        const LogSink& log, const EpochHook& hook) {
    check_training_setup(model, train, data);
    const bool with_x = needs_x_full(model, train);

    std::vector<KSpaceSample> samples;
    for (auto i : data.indices(Split::Train)) samples.push_back(data.load(i, with_x));

    TrainResult result;
    result.net = Network(model);
    auto& net = result.net;
    net->train();
    auto after_epoch = [&](const std::string& phase) -> std::function<bool(int)> {
        if (!hook) return {};
        return [&, phase](int epoch) {
            net->eval();
            const bool stop = hook(phase, epoch, net);
            net->train();
            return stop;
        };
    };

    if (model.kind == ModelKind::TwoStep) {
        if (log) log("== phase 1/2: reconstruction (l2 against x_full) ==");
        result.metrics.phases.push_back(run_phase(
            "reconstruction", net->recon_parameters(), train, samples,
            [&](const Batch& b) {
                auto [prev, recon] = net->recon_init(b.y, b.mask);
                return l2_loss(recon, b.x_full);
            },
            log, after_epoch("reconstruction")));

        if (log) log("== phase 2/2: segmentation (cross entropy, reconstruction frozen) ==");
        for (auto& p : net->recon_parameters()) p.set_requires_grad(false);
        result.metrics.phases.push_back(run_phase(
            "segmentation", net->segmenter_parameters(), train, samples,
            [&](const Batch& b) {
                torch::Tensor recon;
                {
                    torch::NoGradGuard guard;
                    recon = net->recon_init(b.y, b.mask).second;
                }
                return seranet::cross_entropy_loss(net->segment_step(recon, RecurrentState{}).first, b.seg_gt);
            },
            log, after_epoch("segmentation")));
        for (auto& p : net->recon_parameters()) p.set_requires_grad(true);
    } else {
        if (log) log("== end-to-end training (" + to_string(train.loss) + ") ==");
        result.metrics.phases.push_back(run_phase(
            "end_to_end", net->parameters(), train, samples,
            [&](const Batch& b) {
                return composite_loss(net->forward(b.y, b.mask), b.seg_gt, b.x_full, train.loss,
                                      train.l2_weight);
            },
            log, after_epoch("end_to_end")));
    }

    net->eval();
    result.metrics.x_full_loaded = with_x;
    result.metrics.x_full_reads = data.x_full_reads();
    result.metrics.train_dice = evaluate(net, data, Split::Train, train.batch_size).mean;
    if (!data.indices(Split::Test).empty()) {
        result.metrics.has_test = true;
        result.metrics.test_dice = evaluate(net, data, Split::Test, train.batch_size).mean;
    }
    return result;
}

EvalResult evaluate(Network& net, const SampleSource& data, Split split, int batch_size,
                    const std::function<void(std::size_t, const KSpaceSample&, const ForwardOutput&)>& on_output) {
    torch::NoGradGuard guard;
    const auto dtype = net->parameters().empty() ? torch::kFloat32
                                                 : net->parameters().front().scalar_type();
    EvalResult result;
    result.indices = data.indices(split);
    const auto step = static_cast<std::size_t>(std::max(1, batch_size));
    for (std::size_t start = 0; start < result.indices.size(); start += step) {
        const auto end = std::min(result.indices.size(), start + step);
        std::vector<KSpaceSample> samples;
        for (auto k = start; k < end; ++k) samples.push_back(data.load(result.indices[k], false));
        std::vector<const KSpaceSample*> ptrs;
        for (const auto& s : samples) ptrs.push_back(&s);
        const auto batch = make_batch(ptrs, dtype);
        const auto out = net->forward(batch.y, batch.mask);
        const auto& s_final = out.final_segmentation();
        for (std::size_t b = 0; b < samples.size(); ++b) {
            result.per_slice.push_back(dice_scores(argmax_labels(s_final[static_cast<std::int64_t>(b)]),
                                                   samples[b].labels.labels));
            if (on_output) {
                ForwardOutput single;
                const auto bi = static_cast<std::int64_t>(b);
                for (const auto& s : out.segmentations) single.segmentations.push_back(s[bi]);
                if (out.recon_prev.defined()) single.recon_prev = out.recon_prev[bi];
                if (out.recon.defined()) single.recon = out.recon[bi];
                for (const auto& x : out.refined) single.refined.push_back(x[bi]);
                on_output(result.indices[start + b], samples[b], single);
            }
        }
    }
    result.mean = mean_dice(result.per_slice);
    return result;
}

}  // namespace seranet
