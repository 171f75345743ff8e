#include <benchmark/benchmark.h>

#include "styleplane/generator.hpp"
#include "styleplane/triplane.hpp"

using namespace styleplane;
namespace o = styleplane::ops;

namespace {

void bm_conv2d(benchmark::State& state) {
    const int C = static_cast<int>(state.range(0));
    Rng rng(1);
    Varf x = Varf::constant(Tensorf::randn({C, 32, 32}, rng));
    Varf w = Varf::constant(Tensorf::randn({C, C, 3, 3}, rng, 0.1f));
    Varf b = Varf::constant(Tensorf({C}, 0.0f));
    for (auto _ : state) {
        benchmark::DoNotOptimize(o::conv2d(x, w, b, 1, 1).value()[0]);
    }
}
BENCHMARK(bm_conv2d)->Arg(8)->Arg(16)->Arg(32);

void bm_bilinear_sample(benchmark::State& state) {
    Rng rng(2);
    Varf plane = Varf::constant(Tensorf::randn({8, 32, 32}, rng));
    Varf uv = Varf::constant(Tensorf::uniform({4096, 2}, rng, -1.0f, 1.0f));
    for (auto _ : state) {
        benchmark::DoNotOptimize(o::bilinear_sample(plane, uv).value()[0]);
    }
}
BENCHMARK(bm_bilinear_sample);

void bm_render(benchmark::State& state) {
    const int S = static_cast<int>(state.range(0));
    Rng rng(3);
    Triplane tp = Triplane::constant(Tensorf::randn({8, 32, 32}, rng),
                                     Tensorf::randn({8, 32, 32}, rng),
                                     Tensorf::randn({8, 32, 32}, rng));
    DecoderMLP dec = DecoderMLP::create(8, 16, 4, false);
    SuperResolver sr = SuperResolver::create(9);
    CameraView cam;
    cam.width = cam.height = 16;
    RenderOptions opt;
    opt.n_samples = S;
    for (auto _ : state) {
        benchmark::DoNotOptimize(render(tp, dec, sr, cam, opt).image.value()[0]);
    }
}
BENCHMARK(bm_render)->Arg(16)->Arg(32)->Arg(64);

void bm_generate(benchmark::State& state) {
    GeneratorModel model(GeneratorConfig{}, 42);
    Rng rng(4);
    Tensorf img = Tensorf::uniform({3, 64, 64}, rng, 0.0f, 1.0f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.generate(img).detached().xy.value()[0]);
    }
}
BENCHMARK(bm_generate);

}  // namespace

BENCHMARK_MAIN();
