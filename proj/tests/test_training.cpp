#include "doctest_torch.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "seranet/common.hpp"
#include "seranet/report.hpp"
#include "seranet/training.hpp"

using namespace seranet;

namespace {

DatasetConfig toy_data() {
    DatasetConfig c;
    c.train_brains = 2;
    c.test_brains = 1;
    c.slices_per_brain = 2;
    c.height = 32;
    c.width = 32;
    c.rate = 0.5;
    c.seed = 3;
    return c;
}

ModelConfig toy_model(ModelKind kind) {
    ModelConfig c;
    c.kind = kind;
    c.reg_channels = 4;
    c.unet_base_channels = 2;
    c.lstm_hidden_channels = 2;
    c.weight_seed = 1;
    return c;
}

TrainConfig toy_train(LossVariant loss = LossVariant::CeFinal) {
    TrainConfig t;
    t.loss = loss;
    t.max_epochs = 2;
    t.batch_size = 3;
    t.learning_rate = 1e-3;
    t.seed = 9;
    return t;
}

torch::Tensor onehot(const torch::Tensor& labels, int classes = 4) {
    return torch::nn::functional::one_hot(labels, classes).permute({0, 3, 1, 2}).to(torch::kFloat64);
}

}  // namespace

TEST_CASE("cross entropy") {
    torch::manual_seed(1);
    const auto labels = torch::randint(0, 4, {2, 6, 5}, torch::kLong);
    const auto gt = onehot(labels);
    CHECK(seranet::cross_entropy_loss(gt, gt).item<double>() < 1e-12);
    const auto uniform = torch::full_like(gt, 0.25);
    CHECK(seranet::cross_entropy_loss(uniform, gt).item<double>() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // Pixel order does not matter.
    const auto s = torch::softmax(torch::randn({2, 4, 6, 5}, torch::kFloat64), 1);
    const auto perm = torch::randperm(30);
    auto shuffle = [&](const torch::Tensor& t) { return t.reshape({2, 4, 30}).index_select(2, perm).reshape({2, 4, 6, 5}); };
    CHECK(seranet::cross_entropy_loss(shuffle(s), shuffle(gt)).item<double>() ==
          doctest::Approx(seranet::cross_entropy_loss(s, gt).item<double>()).epsilon(1e-12));

    // Zero probability is clipped instead of producing infinity.
    const auto wrong = onehot((labels + 1) % 4);
    CHECK(seranet::cross_entropy_loss(wrong, gt).item<double>() == doctest::Approx(-std::log(1e-8)).epsilon(1e-9));
    CHECK_THROWS_AS(seranet::cross_entropy_loss(s, gt.narrow(1, 0, 3)), InvalidArgument);
}

TEST_CASE("l2 loss") {
    const auto x = torch::randn({2, 4, 4}, torch::kFloat64);
    CHECK(l2_loss(x, x).item<double>() == 0.0);
    auto single = torch::zeros({2, 4, 4}, torch::kFloat64);
    single[1][2][3] = 3.0;
    CHECK(l2_loss(single, torch::zeros_like(single)).item<double>() == doctest::Approx(3.0));
    // Batches average the per-sample norms.
    auto batch = torch::zeros({2, 2, 4, 4}, torch::kFloat64);
    batch[0][0][0][0] = 3.0;
    batch[1][1][1][1] = 4.0;
    batch[1][0][1][1] = 3.0;
    CHECK(l2_loss(batch, torch::zeros_like(batch)).item<double>() == doctest::Approx(4.0));
    CHECK_THROWS_AS(l2_loss(x, x.narrow(1, 0, 2)), InvalidArgument);
}

TEST_CASE("composite loss variants") {
    torch::manual_seed(2);
    const auto gt = onehot(torch::randint(0, 4, {1, 4, 4}, torch::kLong));
    ForwardOutput out;
    for (int t = 0; t < 3; ++t) out.segmentations.push_back(torch::softmax(torch::randn({1, 4, 4, 4}, torch::kFloat64), 1));
    const auto x_full = torch::randn({1, 2, 4, 4}, torch::kFloat64);
    out.recon = torch::randn({1, 2, 4, 4}, torch::kFloat64);
    out.recon_prev = out.recon;
    out.refined = {torch::randn({1, 2, 4, 4}, torch::kFloat64), x_full.clone()};

    const double last = seranet::cross_entropy_loss(out.segmentations.back(), gt).item<double>();
    double sum = 0.0;
    for (const auto& s : out.segmentations) sum += seranet::cross_entropy_loss(s, gt).item<double>();
    CHECK(composite_loss(out, gt, {}, LossVariant::CeFinal).item<double>() == doctest::Approx(last).epsilon(1e-14));
    CHECK(composite_loss(out, gt, {}, LossVariant::CeSum).item<double>() == doctest::Approx(sum).epsilon(1e-14));
    // x_T equals x_full, so the l2 term vanishes.
    CHECK(composite_loss(out, gt, x_full, LossVariant::CePlusL2).item<double>() == doctest::Approx(last).epsilon(1e-14));
    CHECK_THROWS_AS(composite_loss(out, gt, {}, LossVariant::CePlusL2), InvalidArgument);

    ForwardOutput single;
    single.segmentations = {out.segmentations[0]};
    CHECK(composite_loss(single, gt, {}, LossVariant::CeSum).item<double>() ==
          composite_loss(single, gt, {}, LossVariant::CeFinal).item<double>());
    CHECK_THROWS_AS(composite_loss(ForwardOutput{}, gt, {}, LossVariant::CeFinal), InvalidArgument);
}

TEST_CASE("dice identities") {
    std::vector<std::uint8_t> gt = {0, 1, 1, 2, 2, 3, 3, 0};
    const auto self = dice_scores(gt, gt);
    for (double d : self.per_class) CHECK(d == 1.0);
    CHECK(self.average == 1.0);

    // Same-size disjoint foregrounds.
    std::vector<std::uint8_t> a = {1, 1, 0, 0}, b = {0, 0, 1, 1};
    CHECK(dice_scores(a, b).per_class[0] == 0.0);

    // |A| = |B| = 4, |A n B| = 2.
    std::vector<std::uint8_t> p = {1, 1, 1, 1, 0, 0}, q = {0, 0, 1, 1, 1, 1};
    CHECK(dice_scores(p, q).per_class[0] == doctest::Approx(0.5));

    // Absent from both scores one, absent from one scores zero.
    std::vector<std::uint8_t> only_csf = {1, 0, 0, 0};
    const auto d = dice_scores(only_csf, only_csf);
    CHECK(d.per_class[1] == 1.0);
    std::vector<std::uint8_t> with_gm = {1, 2, 0, 0};
    CHECK(dice_scores(only_csf, with_gm).per_class[1] == 0.0);

    const auto m = dice_scores(p, q);
    CHECK(m.average == doctest::Approx((m.per_class[0] + m.per_class[1] + m.per_class[2]) / 3.0));

    // Tensor form uses argmax with ties to the lowest index.
    auto probs = torch::full({4, 1, 2}, 0.25);
    auto truth = torch::zeros({4, 1, 2});
    truth[0] = 1.0;
    CHECK(dice_scores(probs, truth).average == 1.0);
    CHECK(mean_dice({self, dice_scores(a, b)}).per_class[0] == doctest::Approx(0.5));
}

TEST_CASE("learning-rate schedule") {
    TrainConfig t;
    CHECK(t.lr_at(0) == 1e-4);
    CHECK(t.lr_at(19) == 1e-4);
    CHECK(t.lr_at(20) == 5e-5);
    CHECK(t.lr_at(45) == 2.5e-5);
    t.decay_every = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    const auto back = TrainConfig::from_json(toy_train(LossVariant::CeSum).to_json());
    CHECK(back.loss == LossVariant::CeSum);
    CHECK(back.max_epochs == 2);
    CHECK(parse_loss_variant("ce_l2") == LossVariant::CePlusL2);
    CHECK(parse_loss_variant("ce") == LossVariant::CeFinal);
    CHECK_THROWS_AS(parse_loss_variant("mse"), InvalidArgument);
}

TEST_CASE("training is deterministic and keeps x_full unread for pure cross entropy") {
    InMemorySource data(build_dataset(toy_data()));
    const auto a = train_model(toy_model(ModelKind::SeraNet), toy_train(), data);
    CHECK(data.x_full_reads() == 0u);
    CHECK(a.metrics.x_full_reads == 0u);
    CHECK_FALSE(a.metrics.x_full_loaded);
    const auto b = train_model(toy_model(ModelKind::SeraNet), toy_train(), data);
    const auto ha = a.metrics.loss_history();
    const auto hb = b.metrics.loss_history();
    REQUIRE(ha.size() == 2u);
    REQUIRE(hb.size() == ha.size());
    for (std::size_t i = 0; i < ha.size(); ++i) CHECK(std::abs(ha[i] - hb[i]) < 1e-6);
    CHECK(a.metrics.has_test);
    for (double d : a.metrics.test_dice.per_class) {
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
    }
}

TEST_CASE("two-step training runs two phases and reads x_full") {
    InMemorySource data(build_dataset(toy_data()));
    std::vector<std::string> lines;
    const auto r = train_model(toy_model(ModelKind::TwoStep), toy_train(), data,
                               [&](const std::string& l) { lines.push_back(l); });
    REQUIRE(r.metrics.phases.size() == 2u);
    CHECK(r.metrics.phases[0].name == "reconstruction");
    CHECK(r.metrics.phases[1].name == "segmentation");
    CHECK(r.metrics.x_full_reads > 0u);
    CHECK(std::any_of(lines.begin(), lines.end(), [](const std::string& l) { return l.find("phase 1/2") != std::string::npos; }));
    CHECK(std::any_of(lines.begin(), lines.end(), [](const std::string& l) { return l.find("phase 2/2") != std::string::npos; }));
}

TEST_CASE("setup errors surface before training") {
    auto samples = build_dataset(toy_data());
    CHECK_THROWS_AS(check_training_setup(toy_model(ModelKind::OneStep), toy_train(LossVariant::CePlusL2),
                                         InMemorySource(samples)),
                    ConfigError);
    auto leaked = samples;
    leaked[0].split = Split::Test;
    CHECK_THROWS_AS(check_training_setup(toy_model(ModelKind::Joint), toy_train(), InMemorySource(leaked)), ConfigError);
    auto no_train = samples;
    for (auto& s : no_train) s.split = Split::Test;
    CHECK_THROWS_AS(check_training_setup(toy_model(ModelKind::Joint), toy_train(), InMemorySource(no_train)), ConfigError);
    CHECK_NOTHROW(check_training_setup(toy_model(ModelKind::Joint), toy_train(), InMemorySource(samples)));
    CHECK(needs_x_full(toy_model(ModelKind::TwoStep), toy_train()));
    CHECK(needs_x_full(toy_model(ModelKind::Joint), toy_train(LossVariant::CePlusL2)));
    CHECK_FALSE(needs_x_full(toy_model(ModelKind::SeraNet), toy_train(LossVariant::CeSum)));
}

TEST_CASE("dice table formatting") {
    DiceScores d;
    d.per_class = {0.5, 0.25, 0.75};
    d.average = 0.5;
    const auto text = format_dice_table("demo", {{"A", {{0.1, d}}}, {"B", {{0.2, d}}}});
    CHECK(text.find("10% noise") != std::string::npos);
    CHECK(text.find("20% noise") != std::string::npos);
    CHECK(text.find("0.2500") != std::string::npos);
    CHECK(text.find(" - ") != std::string::npos);
    CHECK(published_reference_block().find("not reproduced") != std::string::npos);
    const auto svg = svg_line_plot("t", "x", "y", {{"s", {{1.0, 0.5}, {2.0, 0.6}}}});
    CHECK(svg.rfind("<svg", 0) == 0);
}
