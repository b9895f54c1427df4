#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>

#include "seranet/checkpoint.hpp"
#include "seranet/common.hpp"
#include "seranet/kspace.hpp"
#include "seranet/network.hpp"

using namespace seranet;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(ModelKind kind, RegType type = RegType::A, int n = 2, int t = 2) {
    ModelConfig c;
    c.kind = kind;
    c.reg_type = type;
    c.n_blocks = n;
    c.recurrences = t;
    c.reg_channels = 4;
    c.unet_base_channels = 2;
    c.lstm_hidden_channels = 3;
    c.weight_seed = 5;
    return c;
}

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
    return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

// Fully sampled, noise-free measurement of a random image.
std::pair<torch::Tensor, torch::Tensor> clean_measurement(int b, int h, int w) {
    const auto x = torch::randn({b, 2, h, w});
    return {fft2c(x), x};
}

std::vector<torch::Tensor> output_images(const ForwardOutput& o) {
    std::vector<torch::Tensor> v = {o.recon_prev, o.recon};
    v.insert(v.end(), o.refined.begin(), o.refined.end());
    return v;
}

}  // namespace

TEST_CASE("reg blocks") {
    torch::manual_seed(1);
    for (auto type : {RegType::A, RegType::B}) {
        auto block = make_reg_block(type, 2, 8);
        const auto x = torch::randn({2, 96, 96});
        const auto out = block->forward(x);
        CHECK(out.sizes() == x.sizes());
        CHECK(torch::equal(out, block->forward(x)));
        const auto odd = torch::randn({1, 2, 30, 22});
        CHECK(block->forward(odd).sizes() == odd.sizes());
        CHECK_THROWS_AS(block->forward(torch::randn({1, 3, 16, 16})), InvalidArgument);

        auto att = make_reg_block(type, 8, 8);
        {
            torch::NoGradGuard g;
            for (auto& p : att->parameters()) p.zero_();
        }
        const auto a = torch::randn({1, 8, 16, 16});
        CHECK(torch::equal(att->forward(a), a.narrow(1, 0, 2)));
    }
}

TEST_CASE("pad to multiple") {
    const auto x = torch::randn({1, 2, 30, 17});
    const auto p = pad_to_multiple(x, 16);
    CHECK(p.sizes() == torch::IntArrayRef({1, 2, 32, 32}));
    CHECK(torch::equal(p.narrow(2, 0, 30).narrow(3, 0, 17), x));
    CHECK(torch::equal(pad_to_multiple(torch::zeros({1, 1, 32, 48}), 16), torch::zeros({1, 1, 32, 48})));
    CHECK_THROWS_AS(pad_to_multiple(torch::zeros({1, 1, 4, 4}), 16), InvalidArgument);
}

TEST_CASE("segmenter contract") {
    torch::manual_seed(2);
    auto cfg = tiny(ModelKind::OneStep);
    cfg.unet_base_channels = 8;
    Network net(cfg);
    auto seg = net->segmenter();
    const auto x = torch::randn({2, 2, 32, 48});
    auto [s, state] = seg->forward(x, RecurrentState{});
    CHECK(s.sizes() == torch::IntArrayRef({2, 4, 32, 48}));
    CHECK(max_abs_diff(s.sum(1), torch::ones({2, 32, 48})) < 1e-5);
    CHECK(s.min().item<float>() >= 0.0f);
    REQUIRE_FALSE(state.empty());
    CHECK(state.hidden.sizes() == torch::IntArrayRef({2, 3, 2, 3}));

    // A carried state changes the output for the same input.
    auto [s2, state2] = seg->forward(x, state);
    CHECK(max_abs_diff(s, s2) > 1e-6);
    CHECK(torch::equal(s, seg->forward(x, RecurrentState{}).first));

    CHECK_THROWS_AS(seg->forward(torch::randn({1, 2, 30, 32}), RecurrentState{}), InvalidArgument);
}

TEST_CASE("attention combination") {
    torch::manual_seed(3);
    const auto x = torch::randn({2, 2, 8, 8}, torch::kFloat64);

    SUBCASE("uniform maps scale every group") {
        const auto s = torch::full({2, 4, 8, 8}, 0.25, torch::kFloat64);
        const auto a = attention_combine(x, s);
        CHECK(a.sizes() == torch::IntArrayRef({2, 8, 8, 8}));
        for (int i = 0; i < 4; ++i) CHECK(torch::equal(a.narrow(1, 2 * i, 2), 0.25 * x));
    }
    SUBCASE("one-hot maps route each pixel to one group") {
        const auto labels = torch::randint(0, 4, {2, 8, 8}, torch::kLong);
        const auto s = torch::nn::functional::one_hot(labels, 4).permute({0, 3, 1, 2}).to(torch::kFloat64);
        const auto a = attention_combine(x, s);
        for (int i = 0; i < 4; ++i) {
            const auto sel = (labels == i).unsqueeze(1).to(torch::kFloat64);
            CHECK(torch::equal(a.narrow(1, 2 * i, 2), x * sel));
        }
    }
    SUBCASE("groups sum back to the input") {
        const auto s = torch::softmax(torch::randn({2, 4, 8, 8}, torch::kFloat64), 1);
        const auto a = attention_combine(x, s);
        auto total = torch::zeros_like(x);
        for (int i = 0; i < 4; ++i) total += a.narrow(1, 2 * i, 2);
        CHECK(max_abs_diff(total, x) < 1e-14);
    }
    SUBCASE("non-normalized maps are a contract violation") {
        auto s = torch::full({2, 4, 8, 8}, 0.25, torch::kFloat64);
        s[0][1][3][3] = 0.26;
        CHECK_THROWS_AS(attention_combine(x, s), ContractViolation);
        s[0][1][3][3] = 0.2505;
        CHECK_NOTHROW(attention_combine(x, s));
    }
}

TEST_CASE("forward shapes and softmax for every model kind") {
    torch::manual_seed(4);
    const auto y = apply_mask(fft2c(torch::randn({2, 2, 24, 40})), make_cartesian_mask(40, 0.5, 16, 1).as_tensor());
    const auto mask = make_cartesian_mask(40, 0.5, 16, 1).as_tensor();
    for (auto kind : {ModelKind::OneStep, ModelKind::TwoStep, ModelKind::Joint, ModelKind::SeraNet})
        for (auto type : {RegType::A, RegType::B}) {
            Network net(tiny(kind, type));
            const auto out = net->forward(y, mask);
            const std::size_t expected = kind == ModelKind::SeraNet ? 3u : 1u;
            REQUIRE(out.segmentations.size() == expected);
            CHECK(out.refined.size() == expected - 1);
            for (const auto& s : out.segmentations) {
                CHECK(s.sizes() == torch::IntArrayRef({2, 4, 24, 40}));
                CHECK(max_abs_diff(s.sum(1), torch::ones({2, 24, 40})) < 1e-5);
            }
            CHECK(out.final_image().sizes() == torch::IntArrayRef({2, 2, 24, 40}));
        }
}

TEST_CASE("zeroed weights reduce every pipeline to data consistency") {
    torch::manual_seed(5);
    const auto [y, x_full] = clean_measurement(2, 32, 32);
    const auto mask = torch::ones({1, 1, 32});
    for (auto kind : {ModelKind::OneStep, ModelKind::TwoStep, ModelKind::Joint, ModelKind::SeraNet})
        for (auto type : {RegType::A, RegType::B}) {
            Network net(tiny(kind, type));
            net->zero_parameters();
            const auto out = net->forward(y, mask);
            for (const auto& img : output_images(out)) CHECK(max_abs_diff(img, x_full) < 1e-6);
            // Softmax of zero logits is uniform.
            CHECK(max_abs_diff(out.final_segmentation(), torch::full({2, 4, 32, 32}, 0.25)) < 1e-7);
        }
}

TEST_CASE("data consistency holds on every reconstructed image") {
    torch::manual_seed(6);
    const auto m = make_cartesian_mask(32, 0.5, 16, 3);
    const auto mask = m.as_tensor();
    const auto y = apply_mask(fft2c(torch::randn({1, 2, 32, 32})), mask);
    Network net(tiny(ModelKind::SeraNet));
    const auto out = net->forward(y, mask);
    for (const auto& img : output_images(out)) CHECK(max_abs_diff(fft2c(img) * mask, y) < 1e-5);
}

TEST_CASE("T = 0 matches the joint baseline exactly") {
    torch::manual_seed(7);
    const auto mask = make_cartesian_mask(48, 0.4, 16, 2).as_tensor();
    const auto y = apply_mask(fft2c(torch::randn({2, 2, 32, 48})), mask);
    for (auto type : {RegType::A, RegType::B}) {
        Network sera(tiny(ModelKind::SeraNet, type, 3, 0));
        Network joint(tiny(ModelKind::Joint, type, 3, 0));
        const auto a = sera->forward(y, mask);
        const auto b = joint->forward(y, mask);
        REQUIRE(a.segmentations.size() == 1u);
        CHECK(torch::equal(a.segmentations[0], b.segmentations[0]));
        CHECK(torch::equal(a.recon, b.recon));
        CHECK(torch::equal(a.recon_prev, b.recon_prev));
    }
}

TEST_CASE("attention input switch") {
    torch::manual_seed(8);
    const auto mask = make_cartesian_mask(32, 0.5, 16, 2).as_tensor();
    const auto y = apply_mask(fft2c(torch::randn({1, 2, 32, 32})), mask);
    auto cfg = tiny(ModelKind::SeraNet, RegType::A, 2, 2);
    Network fixed(cfg);
    cfg.attention_input = AttentionInput::PreviousX;
    Network prev(cfg);
    const auto a = fixed->forward(y, mask);
    const auto b = prev->forward(y, mask);
    CHECK(torch::equal(a.segmentations[0], b.segmentations[0]));
    CHECK_FALSE(torch::equal(a.refined[0], b.refined[0]));
}

TEST_CASE("model config") {
    CHECK_THROWS_AS(tiny(ModelKind::SeraNet, RegType::A, 1).validate(), ConfigError);
    CHECK_THROWS_AS(tiny(ModelKind::Joint, RegType::A, 0).validate(), ConfigError);
    CHECK_NOTHROW(tiny(ModelKind::OneStep, RegType::A, 0).validate());
    CHECK_NOTHROW(tiny(ModelKind::Joint, RegType::A, 1).validate());
    CHECK_THROWS_AS(Network(tiny(ModelKind::SeraNet, RegType::A, 1)), ConfigError);

    const auto c = tiny(ModelKind::SeraNet, RegType::B, 3, 2);
    const auto back = ModelConfig::from_json(c.to_json());
    CHECK(back.diff(c).empty());
    auto other = c;
    other.n_blocks = 4;
    other.reg_type = RegType::A;
    const auto d = c.diff(other);
    CHECK(d.size() == 2u);

    CHECK(parse_model_kind("twostep") == ModelKind::TwoStep);
    CHECK(parse_model_kind("one-step") == ModelKind::OneStep);
    CHECK(parse_model_kind("seranet") == ModelKind::SeraNet);
    CHECK_THROWS_AS(parse_model_kind("unet"), InvalidArgument);
    CHECK_THROWS_AS(parse_reg_type("C"), InvalidArgument);
}

TEST_CASE("weights are shared by name across model kinds") {
    Network sera(tiny(ModelKind::SeraNet));
    Network joint(tiny(ModelKind::Joint));
    const auto a = sera->named_parameters();
    for (const auto& item : joint->named_parameters()) CHECK(torch::equal(item.value(), a[item.key()]));
    Network reseeded([] {
        auto c = tiny(ModelKind::Joint);
        c.weight_seed = 6;
        return c;
    }());
    CHECK_FALSE(torch::equal(reseeded->named_parameters()["recon0.conv0.weight"], joint->named_parameters()["recon0.conv0.weight"]));
}

TEST_CASE("checkpoint roundtrip and corruption") {
    const auto dir = fs::temp_directory_path() / "seranet_test_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto path = dir / "net.bin";

    torch::manual_seed(9);
    Network net(tiny(ModelKind::SeraNet, RegType::B));
    save_checkpoint(path, net);
    CHECK(read_checkpoint_config(path).diff(net->config()).empty());
    auto loaded = load_checkpoint(path);
    const auto a = net->named_parameters();
    for (const auto& item : loaded->named_parameters()) CHECK(torch::equal(item.value(), a[item.key()]));

    const auto mask = torch::ones({1, 1, 32});
    const auto y = fft2c(torch::randn({1, 2, 32, 32}));
    CHECK(torch::equal(net->forward(y, mask).final_segmentation(), loaded->forward(y, mask).final_segmentation()));

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) { std::ofstream(path, std::ios::binary | std::ios::trunc) << b; };
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    write(flipped);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    write(bad_magic);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    write(bytes.substr(0, bytes.size() - 9));
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    fs::remove_all(dir);
}
