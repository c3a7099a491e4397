#include <benchmark/benchmark.h>

#include "ndesteer/intervene.hpp"
#include "ndesteer/nde.hpp"
#include "ndesteer/pca.hpp"
#include "ndesteer/perturb.hpp"
#include "ndesteer/rng.hpp"
#include "ndesteer/scg.hpp"
#include "ndesteer/synthetic.hpp"

using namespace ndesteer;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Xorshift64Star rng(seed);
    Tensor t({rows, cols});
    for (auto& x : t.data()) x = static_cast<float>(rng.next_gaussian());
    return t;
}

std::vector<TokenId> prompt_for(const Model& m) {
    std::vector<TokenId> ids{m.vocab().bos()};
    for (auto id : m.vocab().tokenize("is there a red dog on the grass")) ids.push_back(id);
    return ids;
}

}  // namespace

static void bm_forward(benchmark::State& state) {
    const Model m = init_seeded(synthetic::demo_config(1));
    ForwardRequest req;
    req.vision = Image{synthetic::random_images(m.config(), 1, 2)[0]};
    req.text_ids = prompt_for(m);
    for (auto _ : state) benchmark::DoNotOptimize(forward(m, req));
}
BENCHMARK(bm_forward);

static void bm_forward_steered(benchmark::State& state) {
    const Model m = init_seeded(synthetic::demo_config(1));
    DirectionSet ds;
    ds.meta.model_digest = m.digest();
    for (std::size_t l = 1; l <= m.config().n_layers; ++l)
        for (Family f : {Family::vision, Family::text, Family::crossmodal})
            ds.set(l, f, random_unit_vector(m.config().d_model, l * 3 + static_cast<std::size_t>(f)));
    const Intervention hook(m, ds, InterventionConfig{});
    ForwardRequest req;
    req.vision = Image{synthetic::random_images(m.config(), 1, 2)[0]};
    req.text_ids = prompt_for(m);
    req.hook = &hook;
    for (auto _ : state) benchmark::DoNotOptimize(forward(m, req));
}
BENCHMARK(bm_forward_steered);

static void bm_generate(benchmark::State& state) {
    const Model m = init_seeded(synthetic::demo_config(1));
    const VisionInput vision = null_visual(m.config());
    const auto prompt = prompt_for(m);
    for (auto _ : state) benchmark::DoNotOptimize(generate_greedy(m, vision, prompt, 8));
}
BENCHMARK(bm_generate);

static void bm_pca(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor x = random_matrix(n, 64, 7);
    for (auto _ : state) benchmark::DoNotOptimize(pca_principal_directions(x, 1));
}
BENCHMARK(bm_pca)->Arg(50)->Arg(800);

static void bm_apply_intervention(benchmark::State& state) {
    DirectionSet ds;
    ds.set(1, Family::vision, random_unit_vector(64, 1));
    ds.set(1, Family::text, random_unit_vector(64, 2));
    ds.set(1, Family::crossmodal, random_unit_vector(64, 3));
    const std::vector<float> h(64, 0.5f);
    const InterventionConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(apply_intervention(h, PositionRole::text, 1, ds, cfg));
}
BENCHMARK(bm_apply_intervention);

static void bm_estimate_vision(benchmark::State& state) {
    const Model m = init_seeded(synthetic::demo_config(1));
    const auto images = synthetic::random_images(m.config(), static_cast<std::size_t>(state.range(0)), 5);
    for (auto _ : state) benchmark::DoNotOptimize(estimate_nde_v(m, images, MaskSpec{}, 1));
}
BENCHMARK(bm_estimate_vision)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
