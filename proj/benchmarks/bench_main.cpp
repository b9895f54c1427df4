#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "seranet/dataset.hpp"
#include "seranet/kspace.hpp"
#include "seranet/network.hpp"

using namespace seranet;

namespace {

ModelConfig bench_model(ModelKind kind, int recurrences = 2) {
    ModelConfig c;
    c.kind = kind;
    c.recurrences = recurrences;
    c.reg_channels = 32;
    c.unet_base_channels = 16;
    c.lstm_hidden_channels = 32;
    return c;
}

void BM_fft2c(benchmark::State& state) {
    const auto n = state.range(0);
    const auto x = torch::randn({1, 2, n, n});
    for (auto _ : state) benchmark::DoNotOptimize(fft2c(x));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_fft2c)->Arg(64)->Arg(96)->Arg(192);

void BM_data_consistency(benchmark::State& state) {
    const auto mask = make_cartesian_mask(216, 0.3, 16, 1).as_tensor();
    const auto y = apply_mask(fft2c(torch::randn({1, 2, 180, 216})), mask);
    const auto x = torch::randn({1, 2, 180, 216});
    for (auto _ : state) benchmark::DoNotOptimize(data_consistency(x, y, mask));
}
BENCHMARK(BM_data_consistency);

void BM_reg_block(benchmark::State& state) {
    torch::NoGradGuard g;
    auto block = make_reg_block(state.range(0) == 0 ? RegType::A : RegType::B, 2, 32);
    const auto x = torch::randn({1, 2, 96, 96});
    for (auto _ : state) benchmark::DoNotOptimize(block->forward(x));
}
BENCHMARK(BM_reg_block)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_segment_step(benchmark::State& state) {
    torch::NoGradGuard g;
    Network net(bench_model(ModelKind::OneStep));
    const auto x = torch::randn({1, 2, 96, 96});
    for (auto _ : state) benchmark::DoNotOptimize(net->segment_step(x, RecurrentState{}));
}
BENCHMARK(BM_segment_step)->Unit(benchmark::kMillisecond);

void BM_forward(benchmark::State& state) {
    torch::NoGradGuard g;
    Network net(bench_model(static_cast<ModelKind>(state.range(0))));
    const auto mask = make_cartesian_mask(96, 0.3, 16, 1).as_tensor();
    const auto y = apply_mask(fft2c(torch::randn({1, 2, 96, 96})), mask);
    for (auto _ : state) benchmark::DoNotOptimize(net->forward(y, mask));
    state.SetLabel(to_string(net->config().kind));
}
BENCHMARK(BM_forward)
    ->Arg(static_cast<int>(ModelKind::OneStep))
    ->Arg(static_cast<int>(ModelKind::Joint))
    ->Arg(static_cast<int>(ModelKind::SeraNet))
    ->Unit(benchmark::kMillisecond);

void BM_make_sample(benchmark::State& state) {
    DatasetConfig cfg;
    std::int64_t slice = 0;
    for (auto _ : state) benchmark::DoNotOptimize(make_sample(cfg, 0, slice++, Split::Train));
}
BENCHMARK(BM_make_sample)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
