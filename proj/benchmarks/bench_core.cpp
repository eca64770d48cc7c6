// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "duallm/corpus.hpp"
#include "duallm/evals.hpp"
#include "duallm/fixtures.hpp"
#include "duallm/gpr.hpp"
#include "duallm/model.hpp"
#include "duallm/objectives.hpp"
#include "duallm/rng.hpp"
#include "duallm/training.hpp"

namespace {

using namespace duallm;

ModelConfig desk_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.hidden_size = 64;
    c.n_heads = 4;
    c.ffn_inner = 172;
    c.vocab_size = 384;
    c.max_len = 64;
    return c;
}

std::vector<TokenSequence> random_batch(std::size_t batch, std::size_t len, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TokenSequence> out(batch, TokenSequence(len));
    for (auto& s : out) {
        s[0] = special::kBos;
        for (std::size_t i = 1; i < len; ++i) {
            s[i] = static_cast<TokenId>(rng.below(256));
        }
    }
    return out;
}

void BM_Forward(benchmark::State& state) {
    const auto config = desk_config();
    const Transformer<float> model(config, 1);
    const auto seqs = random_batch(16, config.max_len, 2);
    std::vector<SequenceInput> batch;
    for (const auto& s : seqs) {
        batch.push_back({s, AttentionMode::causal()});
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.forward_batch(batch));
    }
    state.SetItemsProcessed(state.iterations() * 16 * static_cast<std::int64_t>(config.max_len));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
    const auto config = desk_config();
    const Transformer<float> model(config, 1);
    const auto seqs = random_batch(16, config.max_len, 2);
    std::vector<SequenceInput> batch;
    for (const auto& s : seqs) {
        batch.push_back({s, AttentionMode::causal()});
    }
    auto grads = init_params<float>(config, 0);
    const auto loss = [&](std::size_t i, const Transformer<float>::LogitsRef& logits,
                          Transformer<float>::GradRef dlogits) {
        return ar_loss_grad<float>(logits, seqs[i], 1.0, dlogits);
    };
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.loss_and_grad(batch, loss, grads));
    }
    state.SetItemsProcessed(state.iterations() * 16 * static_cast<std::int64_t>(config.max_len));
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_NewtonSchulz(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    Rng rng(3);
    Matrix<float> g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        g.data()[i] = static_cast<float>(rng.normal());
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(newton_schulz<float>(g));
    }
}
BENCHMARK(BM_NewtonSchulz)->Arg(64)->Arg(172)->Arg(256);

void BM_TrainBpe(benchmark::State& state) {
    const auto docs = fixtures::corpus(static_cast<std::size_t>(state.range(0)), 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(train_bpe(docs, 384));
    }
}
BENCHMARK(BM_TrainBpe)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
    const auto docs = fixtures::corpus(200, 1);
    const auto vocab = train_bpe(docs, 384);
    std::size_t bytes = 0;
    for (const auto& d : docs) {
        bytes += d.size();
    }
    for (auto _ : state) {
        for (const auto& d : docs) {
            benchmark::DoNotOptimize(vocab.encode(d));
        }
    }
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_Encode)->Unit(benchmark::kMillisecond);

void BM_GprFit(benchmark::State& state) {
    Eigen::MatrixXd x(49, 2);
    Eigen::VectorXd y(49);
    int k = 0;
    for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 7; ++j, ++k) {
            const double reps = std::exp2(i);
            const double frac = j / 6.0;
            x.row(k) = sweep_features(reps, frac).transpose();
            y(k) = fixtures::sweep_surface(reps, frac);
        }
    }
    FitOptions options;
    options.restarts = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(fit(x, y, options));
    }
}
BENCHMARK(BM_GprFit)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
