#include "doctest_torch.hpp"

#include <cmath>
#include <set>

#include "seranet/common.hpp"
#include "seranet/phantom.hpp"

using namespace seranet;

TEST_CASE("label map contains every class and is deterministic") {
    const auto a = generate_label_map(7, 64, 64);
    const auto b = generate_label_map(7, 64, 64);
    REQUIRE(a.labels.size() == 64u * 64u);
    CHECK(a.labels == b.labels);
    const std::set<std::uint8_t> seen(a.labels.begin(), a.labels.end());
    CHECK(seen == std::set<std::uint8_t>({0, 1, 2, 3}));
    CHECK(generate_label_map(8, 64, 64).labels != a.labels);
}

TEST_CASE("label maps cover all classes across many seeds and sizes") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const int h = 32 + static_cast<int>(seed % 5) * 16;
        const int w = 32 + static_cast<int>(seed % 3) * 24;
        const auto m = generate_label_map(seed, h, w);
        const auto counts = m.class_counts();
        for (int c = 0; c < kNumClasses; ++c) CHECK_MESSAGE(counts[c] > 0, "seed " << seed << " class " << c);
        // Border stays background.
        for (int col = 0; col < w; ++col) {
            CHECK(m(0, col) == 0);
            CHECK(m(h - 1, col) == 0);
        }
    }
}

TEST_CASE("too-small phantoms are rejected") {
    CHECK_THROWS_AS(generate_label_map(1, kMinPhantomSize - 1, 64), InvalidArgument);
    CHECK_THROWS_AS(generate_label_map(1, 64, 0), InvalidArgument);
}

TEST_CASE("sequence parameters stay in range") {
    for (std::uint64_t s = 0; s < 500; ++s) {
        const auto p = sample_sequence_params(s);
        CHECK(p.te >= 0.076);
        CHECK(p.te <= 0.084);
        CHECK(p.tr >= 2.85);
        CHECK(p.tr <= 3.15);
    }
    const auto a = sample_sequence_params(42);
    const auto b = sample_sequence_params(42);
    CHECK(a.te == b.te);
    CHECK(a.tr == b.tr);
}

TEST_CASE("spin echo signal") {
    SUBCASE("saturated limit") {
        CHECK(spin_echo_signal({Tissue::CSF, 2.0, 0.3, 1.0}, {0.0, 1e9}) == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("reference point") {
        // (1 - e^-3) e^-0.8 evaluated to 30 digits with mpmath.
        const double expected = 0.426958192261055976690766;
        CHECK(std::abs(spin_echo_signal({Tissue::GM, 1.0, 0.1, 1.0}, {0.08, 3.0}) - expected) < 1e-12);
    }
    SUBCASE("long echo decays to zero") {
        CHECK(spin_echo_signal({Tissue::WM, 1.0, 0.1, 0.8}, {100.0, 3.0}) < 1e-300);
    }
    SUBCASE("bad parameters") {
        CHECK_THROWS_AS(spin_echo_signal({Tissue::WM, 0.0, 0.1, 0.8}, {0.08, 3.0}), InvalidArgument);
        CHECK_THROWS_AS(spin_echo_signal({Tissue::WM, 1.0, -0.1, 0.8}, {0.08, 3.0}), InvalidArgument);
        CHECK_THROWS_AS(spin_echo_signal({Tissue::WM, 1.0, 0.1, 0.8}, {0.08, 0.0}), InvalidArgument);
        CHECK_THROWS_AS(spin_echo_signal({Tissue::WM, 1.0, 0.1, 0.8}, {-0.01, 3.0}), InvalidArgument);
    }
}

TEST_CASE("tissue table") {
    const auto t = TissueTable::defaults();
    CHECK_NOTHROW(t.validate());
    CHECK(t.at(Tissue::CSF).t1 == 2.569);
    CHECK(t.at(Tissue::GM).pd == 0.86);
    CHECK(t.at(Tissue::Background).pd == 0.0);

    auto bad = t;
    bad.set({Tissue::GM, 0.05, 0.083, 0.86});
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = t;
    bad.set({Tissue::WM, 0.5, 0.07, 0.0});
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = t;
    bad.set({Tissue::CSF, 2.5, 0.3, 1.2});
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);

    const auto parsed = parse_tissue_table(R"({"tissues": [{"name": "WM", "T1": 0.6, "T2": 0.08, "PD": 0.7}]})");
    CHECK(parsed.at(Tissue::WM).t1 == 0.6);
    CHECK(parsed.at(Tissue::CSF).t1 == 2.569);
    CHECK_THROWS_AS(parse_tissue_table(R"({"tissues": [{"name": "bone", "T1": 1, "T2": 0.1, "PD": 1}]})"),
                    InvalidArgument);
    CHECK_THROWS_AS(parse_tissue_table("not json"), InvalidArgument);
}

TEST_CASE("complex image synthesis") {
    const auto labels = generate_label_map(3, 48, 40);
    const auto table = TissueTable::defaults();
    const SequenceParams seq{0.08, 3.0};

    SUBCASE("zero phase gives a real image equal to the tissue signal") {
        const auto img = synthesize_complex_image(labels, table, seq, PhaseField{});
        REQUIRE(img.sizes() == torch::IntArrayRef({2, 48, 40}));
        CHECK(img[1].abs().max().item<double>() == 0.0);
        const auto re_t = img[0].contiguous();
        auto re = re_t.accessor<double, 2>();
        for (int r = 0; r < 48; ++r)
            for (int c = 0; c < 40; ++c) {
                const auto t = static_cast<Tissue>(labels(r, c));
                CHECK(re[r][c] == doctest::Approx(spin_echo_signal(table.at(t), seq)).epsilon(1e-14));
            }
    }
    SUBCASE("magnitude does not depend on the phase field") {
        const auto a = synthesize_complex_image(labels, table, seq, 11);
        const auto b = synthesize_complex_image(labels, table, seq, PhaseField{});
        const auto mag = (a[0].pow(2) + a[1].pow(2)).sqrt();
        CHECK(torch::allclose(mag, b[0].abs(), 1e-12, 1e-14));
        CHECK(torch::equal(a, synthesize_complex_image(labels, table, seq, 11)));
    }
    SUBCASE("phase coefficients are bounded") {
        for (std::uint64_t s = 0; s < 200; ++s)
            for (double c : PhaseField::sample(s).coeffs) CHECK(std::abs(c) <= std::numbers::pi / 4);
    }
}

TEST_CASE("one-hot encoding and argmax") {
    LabelMap zeros{4, 5, 0, 0, 0, std::vector<std::uint8_t>(20, 0)};
    const auto oh = labels_to_onehot(zeros);
    CHECK(oh.sizes() == torch::IntArrayRef({4, 4, 5}));
    CHECK(oh[0].min().item<float>() == 1.0f);
    CHECK(oh.slice(0, 1).abs().max().item<float>() == 0.0f);

    auto m = zeros;
    m(2, 3) = 2;
    const auto v = labels_to_onehot(m).index({torch::indexing::Slice(), 2, 3});
    CHECK(torch::equal(v, torch::tensor({0.f, 0.f, 1.f, 0.f})));
    CHECK(argmax_labels(labels_to_onehot(m)) == m.labels);

    m(0, 0) = 4;
    CHECK_THROWS_AS(labels_to_onehot(m), InvalidArgument);

    // Ties go to the lowest index.
    const auto uniform = torch::full({4, 2, 2}, 0.25);
    for (auto l : argmax_labels(uniform)) CHECK(l == 0);
    auto tie = torch::zeros({4, 1, 1});
    tie[2][0][0] = 0.5;
    tie[3][0][0] = 0.5;
    CHECK(argmax_labels(tie)[0] == 2);
}
