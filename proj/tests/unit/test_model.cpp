// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "alum/error.hpp"
#include "alum/model.hpp"

using namespace alum;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.vocab_size = 20;
    c.max_positions = 8;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 12;
    c.dropout = 0.0;
    c.num_classes = 3;
    return c;
}

TokenBatch make_batch(const std::vector<std::vector<std::int32_t>>& rows, std::size_t seq_len) {
    TokenBatch b;
    b.batch = rows.size();
    b.seq_len = seq_len;
    for (const auto& r : rows) {
        for (std::size_t t = 0; t < seq_len; ++t) {
            const bool real = t < r.size();
            b.input_ids.push_back(real ? r[t] : 0);
            b.segment_ids.push_back(0);
            b.attention_mask.push_back(real ? 1 : 0);
        }
    }
    return b;
}

using Mat = std::vector<std::vector<double>>;

Mat linear_ref(const Mat& x, const Tensor& w, const Tensor& b) {
    const std::size_t in = w.dim(0), out = w.dim(1);
    Mat y(x.size(), std::vector<double>(out));
    for (std::size_t r = 0; r < x.size(); ++r) {
        for (std::size_t j = 0; j < out; ++j) {
            double acc = b[j];
            for (std::size_t k = 0; k < in; ++k) {
                acc += x[r][k] * w[k * out + j];
            }
            y[r][j] = acc;
        }
    }
    return y;
}

void layer_norm_ref(Mat& x, const Tensor& g, const Tensor& b) {
    for (auto& row : x) {
        double mu = 0, var = 0;
        for (double v : row) mu += v;
        mu /= static_cast<double>(row.size());
        for (double v : row) var += (v - mu) * (v - mu);
        var /= static_cast<double>(row.size());
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] = (row[j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j];
        }
    }
}

/// Straight-line re-implementation of one sequence's classification logits.
std::vector<double> reference_logits(const Parameters& p, const ModelConfig& c, const std::vector<std::int32_t>& ids) {
    const std::size_t T = ids.size(), d = c.d_model, H = c.n_heads, dh = d / H;
    Mat x(T, std::vector<double>(d));
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
            x[t][j] = p.at("emb.tok")[ids[t] * d + j] + p.at("emb.pos")[t * d + j] + p.at("emb.seg")[j];
        }
    }
    layer_norm_ref(x, p.at("emb.ln.g"), p.at("emb.ln.b"));
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string L = "l" + std::to_string(l) + ".";
        const Mat q = linear_ref(x, p.at(L + "attn.q.w"), p.at(L + "attn.q.b"));
        const Mat k = linear_ref(x, p.at(L + "attn.k.w"), p.at(L + "attn.k.b"));
        const Mat v = linear_ref(x, p.at(L + "attn.v.w"), p.at(L + "attn.v.b"));
        Mat ctx(T, std::vector<double>(d, 0.0));
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < T; ++i) {
                std::vector<double> s(T);
                double mx = -1e300;
                for (std::size_t j = 0; j < T; ++j) {
                    double acc = 0;
                    for (std::size_t e = 0; e < dh; ++e) acc += q[i][h * dh + e] * k[j][h * dh + e];
                    s[j] = acc / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, s[j]);
                }
                double z = 0;
                for (auto& sj : s) z += (sj = std::exp(sj - mx));
                for (std::size_t j = 0; j < T; ++j) {
                    for (std::size_t e = 0; e < dh; ++e) ctx[i][h * dh + e] += s[j] / z * v[j][h * dh + e];
                }
            }
        }
        const Mat att = linear_ref(ctx, p.at(L + "attn.o.w"), p.at(L + "attn.o.b"));
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j) x[t][j] += att[t][j];
        layer_norm_ref(x, p.at(L + "ln1.g"), p.at(L + "ln1.b"));
        Mat f = linear_ref(x, p.at(L + "ff1.w"), p.at(L + "ff1.b"));
        for (auto& row : f)
            for (auto& v : row) v = 0.5 * v * (1 + std::erf(v / std::sqrt(2.0)));
        const Mat f2 = linear_ref(f, p.at(L + "ff2.w"), p.at(L + "ff2.b"));
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j) x[t][j] += f2[t][j];
        layer_norm_ref(x, p.at(L + "ln2.g"), p.at(L + "ln2.b"));
    }
    Mat pooled = linear_ref({x[0]}, p.at("pool.w"), p.at("pool.b"));
    for (auto& v : pooled[0]) v = std::tanh(v);
    return linear_ref(pooled, p.at("cls.w"), p.at("cls.b"))[0];
}

Tensor classify_logits(const Parameters& params, const ModelConfig& cfg, const TokenBatch& b, DropoutPlan* plan = nullptr) {
    Graph g;
    BoundParams bp = bind(g, params, false);
    ForwardContext ctx{plan, nullptr};
    return forward_from_embeddings(bp, cfg, embed(g, bp, cfg, b), b, Task::classify, ctx).cls.value();
}

/// Larger-than-init weights so every path matters.
Parameters noisy_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    Parameters p = init_parameters(cfg, seed);
    Rng rng = make_rng(seed, {99});
    for (auto& [name, t] : p.tensors) {
        Tensor n(t.shape());
        fill_normal(n, 0.3, rng);
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] += n[i];
    }
    return p;
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("forward matches a straight-line reference") {
    const ModelConfig cfg = small_config();
    const Parameters p = noisy_parameters(cfg, 3);
    const std::vector<std::int32_t> ids = {2, 7, 9, 11, 3};
    const Tensor logits = classify_logits(p, cfg, make_batch({ids}, ids.size()));
    const auto ref = reference_logits(p, cfg, ids);
    REQUIRE(logits.shape() == Shape{1, 3});
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(logits[k] == doctest::Approx(ref[k]).epsilon(1e-4));
    }
}

TEST_CASE("padding does not change the outputs of real tokens") {
    const ModelConfig cfg = small_config();
    const Parameters p = noisy_parameters(cfg, 4);
    const std::vector<std::int32_t> a = {2, 5, 6, 3};
    const std::vector<std::int32_t> b = {2, 8, 9, 10, 12, 13, 3};
    const Tensor alone = classify_logits(p, cfg, make_batch({a}, a.size()));
    const Tensor padded = classify_logits(p, cfg, make_batch({a, b}, 8));
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(padded[k] == doctest::Approx(alone[k]).epsilon(1e-5));
    }
}

TEST_CASE("initialization is deterministic and shape-checked") {
    const ModelConfig cfg = small_config();
    CHECK(init_parameters(cfg, 5) == init_parameters(cfg, 5));
    CHECK(init_parameters(cfg, 5).checksum() != init_parameters(cfg, 6).checksum());
    Parameters p = init_parameters(cfg, 5);
    check_parameters(p, cfg);
    p.at("cls.w") = Tensor::zeros({8, 4});
    CHECK_THROWS_AS(check_parameters(p, cfg), Error);
    p.tensors.erase("cls.w");
    CHECK_THROWS_AS(check_parameters(p, cfg), Error);
}

TEST_CASE("dropout masks replay after rewind") {
    ModelConfig cfg = small_config();
    cfg.dropout = 0.3;
    const Parameters p = noisy_parameters(cfg, 6);
    const TokenBatch b = make_batch({{2, 5, 6, 7, 3}}, 5);
    DropoutPlan plan(cfg.dropout, make_rng(1));
    const Tensor first = classify_logits(p, cfg, b, &plan);
    const Tensor second = classify_logits(p, cfg, b, &plan);
    CHECK(first == second);
    DropoutPlan other(cfg.dropout, make_rng(2));
    CHECK(classify_logits(p, cfg, b, &other) != first);
    CHECK(classify_logits(p, cfg, b) != first);
}

TEST_CASE("pre-training heads select masked rows") {
    const ModelConfig cfg = small_config();
    const Parameters p = init_parameters(cfg, 7);
    TokenBatch b = make_batch({{2, 1, 6, 3}, {2, 5, 1, 3}}, 4);
    b.mlm_targets.assign(8, kNotPredicted);
    b.mlm_targets[1] = 9;
    b.mlm_targets[6] = 10;
    b.nsp_labels = {0, 1};
    Graph g;
    BoundParams bp = bind(g, p, false);
    PassCounters counters;
    ForwardContext ctx{nullptr, &counters};
    const HeadOutputs out = forward_from_embeddings(bp, cfg, embed(g, bp, cfg, b), b, Task::pretrain, ctx);
    CHECK(out.mlm.shape() == Shape{2, 20});
    CHECK(out.nsp.shape() == Shape{2, 2});
    CHECK(counters.forward_passes == 1);
    // Near-uniform logits at init: CE is about log(V) + log(2).
    CHECK(task_loss(out, b, Task::pretrain).value().item() == doctest::Approx(std::log(20.0) + std::log(2.0)).epsilon(0.05));
}

TEST_CASE("missing supervision is rejected") {
    const ModelConfig cfg = small_config();
    const Parameters p = init_parameters(cfg, 8);
    const TokenBatch b = make_batch({{2, 5, 3}}, 3);
    Graph g;
    BoundParams bp = bind(g, p, false);
    ForwardContext ctx;
    const HeadOutputs cls = forward_from_embeddings(bp, cfg, embed(g, bp, cfg, b), b, Task::classify, ctx);
    CHECK_THROWS_AS(task_loss(cls, b, Task::classify), Error);
    const HeadOutputs pre = forward_from_embeddings(bp, cfg, embed(g, bp, cfg, b), b, Task::pretrain, ctx);
    CHECK_THROWS_AS(task_loss(pre, b, Task::pretrain), Error);
}

TEST_CASE("out-of-range tokens and over-long batches are rejected") {
    const ModelConfig cfg = small_config();
    const Parameters p = init_parameters(cfg, 9);
    Graph g;
    BoundParams bp = bind(g, p, false);
    CHECK_THROWS_AS(embed(g, bp, cfg, make_batch({{2, 25, 3}}, 3)), Error);
    CHECK_THROWS_AS(embed(g, bp, cfg, make_batch({{2, 4, 4, 4, 4, 4, 4, 4, 3}}, 9)), Error);
}

TEST_CASE("invalid model configs are rejected") {
    ModelConfig c = small_config();
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), Error);
    c = small_config();
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), Error);
}


TEST_CASE("zero perturbation is bit-identical to the standard forward") {
    const ModelConfig cfg = small_config();
    const Parameters p = noisy_parameters(cfg, 21);
    const TokenBatch b = make_batch({{2, 7, 8, 9, 3}, {2, 10, 3}}, 5);
    const Tensor plain = classify_logits(p, cfg, b);
    Graph g;
    BoundParams bp = bind(g, p, false);
    const Var e = embed(g, bp, cfg, b);
    const Var pert = add(e, g.constant(Tensor(e.shape())));
    ForwardContext ctx;
    CHECK(forward_from_embeddings(bp, cfg, pert, b, Task::classify, ctx).cls.value() == plain);
}

TEST_CASE("logit change shrinks with the perturbation radius") {
    const ModelConfig cfg = small_config();
    const Parameters p = noisy_parameters(cfg, 22);
    const TokenBatch b = make_batch({{2, 7, 8, 9, 3}, {2, 10, 11, 12, 3}}, 5);
    const Tensor clean = classify_logits(p, cfg, b);
    Rng rng = make_rng(23);
    std::vector<double> mean_change;
    for (double eps : {1e-5, 5e-6, 2.5e-6}) {
        double total = 0.0;
        for (int draw = 0; draw < 100; ++draw) {
            Graph g;
            BoundParams bp = bind(g, p, false);
            const Var e = embed(g, bp, cfg, b);
            Tensor d(e.shape());
            for (std::size_t i = 0; i < d.numel(); ++i) {
                d[i] = static_cast<Real>(eps * (2.0 * static_cast<double>(rng() % 100001) / 100000.0 - 1.0));
            }
            ForwardContext ctx;
            const Tensor out = forward_from_embeddings(bp, cfg, add(e, g.constant(d)), b, Task::classify, ctx).cls.value();
            double worst = 0.0;
            for (std::size_t i = 0; i < out.numel(); ++i) worst = std::max(worst, std::fabs(double(out[i]) - clean[i]));
            total += worst;
        }
        mean_change.push_back(total / 100.0);
    }
    CHECK(mean_change[0] > 0.0);
    CHECK(mean_change[0] > mean_change[1]);
    CHECK(mean_change[1] > mean_change[2]);
}

TEST_CASE("encoder is permutation-equivariant without position embeddings") {
    const ModelConfig cfg = small_config();
    Parameters p = noisy_parameters(cfg, 24);
    Tensor& pos = p.tensors.at("emb.pos");
    for (std::size_t i = 0; i < pos.numel(); ++i) pos[i] = 0;
    const std::vector<std::int32_t> ids = {2, 7, 8, 9, 3};
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    std::vector<std::int32_t> permuted(ids.size());
    for (std::size_t t = 0; t < ids.size(); ++t) permuted[t] = ids[perm[t]];
    auto states = [&](const std::vector<std::int32_t>& seq) {
        const TokenBatch b = make_batch({seq}, seq.size());
        Graph g;
        BoundParams bp = bind(g, p, false);
        ForwardContext ctx;
        return encode(bp, cfg, embed(g, bp, cfg, b), b, ctx).value();
    };
    const Tensor a = states(ids);
    const Tensor c = states(permuted);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        for (std::size_t j = 0; j < cfg.d_model; ++j) {
            CHECK(c[t * cfg.d_model + j] == doctest::Approx(a[perm[t] * cfg.d_model + j]).epsilon(1e-5));
        }
    }
}

TEST_CASE("zero head weights give uniform distributions") {
    ModelConfig cfg = small_config();
    Parameters p = noisy_parameters(cfg, 25);
    for (const char* name : {"cls.w", "cls.b", "nsp.w", "nsp.b", "mlm.out.w", "mlm.out.b"}) {
        Tensor& t = p.tensors.at(name);
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = 0;
    }
    TokenBatch b = make_batch({{2, 7, 8, 3}}, 4);
    b.mlm_targets = {kNotPredicted, 7, kNotPredicted, kNotPredicted};
    b.nsp_labels = {1};
    b.class_labels = {0};
    Graph g;
    BoundParams bp = bind(g, p, false);
    ForwardContext ctx;
    const Var states = encode(bp, cfg, embed(g, bp, cfg, b), b, ctx);
    for (const Var& logits : {head_classify(bp, cfg, states, ctx), head_nsp(bp, cfg, states, ctx), head_mlm(bp, cfg, states)}) {
        const Tensor probs = softmax(logits).value();
        const std::size_t k = probs.shape().back();
        for (std::size_t i = 0; i < probs.numel(); ++i) CHECK(probs[i] == doctest::Approx(1.0 / double(k)).epsilon(1e-6));
    }
}

TEST_CASE("MLM loss equals cross-entropy over masked positions only") {
    const ModelConfig cfg = small_config();
    const Parameters p = noisy_parameters(cfg, 26);
    TokenBatch b = make_batch({{2, 1, 8, 1, 3}, {2, 9, 1, 3}}, 5);
    b.mlm_targets.assign(10, kNotPredicted);
    b.mlm_targets[1] = 11;
    b.mlm_targets[3] = 12;
    b.mlm_targets[7] = 13;
    Graph g;
    BoundParams bp = bind(g, p, false);
    ForwardContext ctx;
    const HeadOutputs out = forward_from_embeddings(bp, cfg, embed(g, bp, cfg, b), b, Task::pretrain, ctx);
    REQUIRE_FALSE(out.nsp.valid());
    const Tensor all = head_mlm(bp, cfg, out.states).value();
    double ce = 0.0;
    std::size_t n = 0;
    for (std::size_t pos = 0; pos < 10; ++pos) {
        if (b.mlm_targets[pos] == kNotPredicted) continue;
        const Real* row = all.data() + pos * cfg.vocab_size;
        double mx = row[0], z = 0.0;
        for (std::size_t v = 0; v < cfg.vocab_size; ++v) mx = std::max(mx, double(row[v]));
        for (std::size_t v = 0; v < cfg.vocab_size; ++v) z += std::exp(row[v] - mx);
        ce += -(row[b.mlm_targets[pos]] - mx - std::log(z));
        ++n;
    }
    CHECK(task_loss(out, b, Task::pretrain).value().item() == doctest::Approx(ce / double(n)).epsilon(1e-5));
}

}
