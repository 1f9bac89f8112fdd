// SPDX-License-Identifier: Apache-2.0
#include "alum/model.hpp"

#include <cmath>
#include <cstring>
#include <string_view>

#include "alum/error.hpp"

namespace alum {

namespace {

constexpr Real kLayerNormEps = 1e-5f;
constexpr double kInitStd = 0.02;

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string layer(std::size_t i, const char* suffix) { return "l" + std::to_string(i) + "." + suffix; }

struct ParamSpec {
    std::string name;
    Shape shape;
    enum { normal, zeros, ones } init;
};

std::vector<ParamSpec> body_specs(const ModelConfig& c) {
    const std::size_t d = c.d_model;
    std::vector<ParamSpec> s = {
        {"emb.tok", {c.vocab_size, d}, ParamSpec::normal},
        {"emb.pos", {c.max_positions, d}, ParamSpec::normal},
        {"emb.seg", {c.n_segments, d}, ParamSpec::normal},
        {"emb.ln.g", {d}, ParamSpec::ones},
        {"emb.ln.b", {d}, ParamSpec::zeros},
    };
    for (std::size_t i = 0; i < c.n_layers; ++i) {
        for (const char* p : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
            s.push_back({layer(i, p) + ".w", {d, d}, ParamSpec::normal});
            s.push_back({layer(i, p) + ".b", {d}, ParamSpec::zeros});
        }
        s.push_back({layer(i, "ln1.g"), {d}, ParamSpec::ones});
        s.push_back({layer(i, "ln1.b"), {d}, ParamSpec::zeros});
        s.push_back({layer(i, "ff1.w"), {d, c.d_ff}, ParamSpec::normal});
        s.push_back({layer(i, "ff1.b"), {c.d_ff}, ParamSpec::zeros});
        s.push_back({layer(i, "ff2.w"), {c.d_ff, d}, ParamSpec::normal});
        s.push_back({layer(i, "ff2.b"), {d}, ParamSpec::zeros});
        s.push_back({layer(i, "ln2.g"), {d}, ParamSpec::ones});
        s.push_back({layer(i, "ln2.b"), {d}, ParamSpec::zeros});
    }
    if (c.mlm_head) {
        s.push_back({"mlm.dense.w", {d, d}, ParamSpec::normal});
        s.push_back({"mlm.dense.b", {d}, ParamSpec::zeros});
        s.push_back({"mlm.ln.g", {d}, ParamSpec::ones});
        s.push_back({"mlm.ln.b", {d}, ParamSpec::zeros});
        s.push_back({"mlm.out.w", {d, c.vocab_size}, ParamSpec::normal});
        s.push_back({"mlm.out.b", {c.vocab_size}, ParamSpec::zeros});
    }
    if (c.nsp_head || c.num_classes > 0) {
        s.push_back({"pool.w", {d, d}, ParamSpec::normal});
        s.push_back({"pool.b", {d}, ParamSpec::zeros});
    }
    if (c.nsp_head) {
        s.push_back({"nsp.w", {d, 2}, ParamSpec::normal});
        s.push_back({"nsp.b", {2}, ParamSpec::zeros});
    }
    return s;
}

std::vector<ParamSpec> classifier_specs(const ModelConfig& c) {
    if (c.num_classes == 0) {
        return {};
    }
    return {{"cls.w", {c.d_model, c.num_classes}, ParamSpec::normal},
            {"cls.b", {c.num_classes}, ParamSpec::zeros}};
}

Tensor make_param(const ParamSpec& spec, std::uint64_t seed) {
    Tensor t(spec.shape);
    if (spec.init == ParamSpec::normal) {
        // One stream per name: adding a head later leaves the body untouched.
        Rng rng = make_rng(seed, {fnv1a(spec.name)});
        fill_normal(t, kInitStd, rng);
    } else if (spec.init == ParamSpec::ones) {
        t.fill(Real{1});
    }
    return t;
}

Var apply_dropout(const Var& x, ForwardContext& ctx) {
    if (ctx.dropout == nullptr || !ctx.dropout->active()) {
        return x;
    }
    const Tensor& mask = ctx.dropout->next(x.shape());
    return mul(x, x.graph().constant(mask));
}

Var linear(const BoundParams& p, const std::string& prefix, const Var& x) {
    return add_bias(matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

void require_finite(const Var& v, const std::string& where) {
    if (!v.value().all_finite()) {
        throw Error(ErrorKind::non_finite, "encode: non-finite activations at " + where);
    }
}

Var first_position(const Var& states) {
    const auto& s = states.shape();
    std::vector<std::size_t> rows(s[0]);
    for (std::size_t b = 0; b < s[0]; ++b) {
        rows[b] = b * s[1];
    }
    return gather_rows(states, rows);
}

Var pooled(const BoundParams& p, const Var& states, ForwardContext& ctx) {
    return apply_dropout(tanh(linear(p, "pool", first_position(states))), ctx);
}

} // namespace

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::invalid_config, "model: " + m); };
    if (vocab_size == 0) fail("vocab_size must be positive");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
    if (max_positions == 0) fail("max_positions must be positive");
    if (n_segments == 0) fail("n_segments must be positive");
    if (d_ff == 0) fail("d_ff must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

const Tensor& Parameters::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw Error(ErrorKind::invalid_input, "parameters: no tensor named '" + name + "'");
    }
    return it->second;
}

Tensor& Parameters::at(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const Parameters&>(*this).at(name));
}

std::size_t Parameters::total_numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) {
        n += t.numel();
    }
    return n;
}

bool Parameters::all_finite() const {
    for (const auto& [_, t] : tensors) {
        if (!t.all_finite()) {
            return false;
        }
    }
    return true;
}

std::uint64_t Parameters::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : tensors) {
        h = fnv1a(name, h);
        h = fnv1a(shape_str(t.shape()), h);
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(Real)), h);
    }
    return h;
}

Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Parameters p;
    for (const auto& spec : body_specs(cfg)) {
        p.tensors.emplace(spec.name, make_param(spec, seed));
    }
    for (const auto& spec : classifier_specs(cfg)) {
        p.tensors.emplace(spec.name, make_param(spec, seed));
    }
    return p;
}

void init_classifier_head(Parameters& params, const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.num_classes == 0) {
        throw Error(ErrorKind::invalid_config, "model: classification head needs num_classes > 0");
    }
    ParamSpec pool_w{"pool.w", {cfg.d_model, cfg.d_model}, ParamSpec::normal};
    ParamSpec pool_b{"pool.b", {cfg.d_model}, ParamSpec::zeros};
    for (const auto& spec : {pool_w, pool_b}) {
        if (!params.contains(spec.name)) {
            params.tensors.emplace(spec.name, make_param(spec, seed));
        }
    }
    for (const auto& spec : classifier_specs(cfg)) {
        params.tensors.insert_or_assign(spec.name, make_param(spec, seed));
    }
}

void check_parameters(const Parameters& params, const ModelConfig& cfg) {
    cfg.validate();
    auto specs = body_specs(cfg);
    for (auto& s : classifier_specs(cfg)) {
        specs.push_back(std::move(s));
    }
    for (const auto& spec : specs) {
        auto it = params.tensors.find(spec.name);
        if (it == params.tensors.end()) {
            throw Error(ErrorKind::invalid_input, "parameters: missing '" + spec.name + "'");
        }
        if (it->second.shape() != spec.shape) {
            throw Error(ErrorKind::shape_mismatch, "parameters: '" + spec.name + "' has shape " +
                                                       shape_str(it->second.shape()) + ", config expects " +
                                                       shape_str(spec.shape));
        }
    }
}

const Tensor& DropoutPlan::next(const Shape& shape) {
    if (cursor_ < masks_.size()) {
        const Tensor& m = masks_[cursor_++];
        if (m.shape() != shape) {
            throw Error(ErrorKind::shape_mismatch,
                        "dropout: replayed mask " + shape_str(m.shape()) + " vs site " + shape_str(shape));
        }
        return m;
    }
    Tensor m(shape);
    std::bernoulli_distribution keep(1.0 - rate_);
    const Real scale_kept = static_cast<Real>(1.0 / (1.0 - rate_));
    for (auto& v : m.values()) {
        v = keep(rng_) ? scale_kept : Real{0};
    }
    masks_.push_back(std::move(m));
    ++cursor_;
    return masks_.back();
}

const Var& BoundParams::operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) {
        throw Error(ErrorKind::invalid_config, "model: parameter '" + name + "' is not configured");
    }
    return it->second;
}

BoundParams bind(Graph& graph, const Parameters& params, bool requires_grad) {
    BoundParams b;
    for (const auto& [name, t] : params.tensors) {
        b.vars.emplace(name, graph.leaf(t, requires_grad));
    }
    return b;
}

Var embed(Graph& graph, const BoundParams& p, const ModelConfig& cfg, const TokenBatch& batch) {
    batch.validate();
    if (batch.seq_len > cfg.max_positions) {
        throw Error(ErrorKind::invalid_input, "embed: sequence length " + std::to_string(batch.seq_len) +
                                                  " exceeds max_positions " + std::to_string(cfg.max_positions));
    }
    for (auto id : batch.input_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
            throw Error(ErrorKind::invalid_input, "embed: token id " + std::to_string(id) + " out of range");
        }
    }
    std::vector<std::int32_t> positions(batch.tokens());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        positions[i] = static_cast<std::int32_t>(i % batch.seq_len);
    }
    Var tok = embedding(p["emb.tok"], batch.input_ids);
    Var pos = embedding(p["emb.pos"], positions);
    Var seg = embedding(p["emb.seg"], batch.segment_ids);
    (void)graph;
    return reshape(add(add(tok, pos), seg), {batch.batch, batch.seq_len, cfg.d_model});
}

Var encode(const BoundParams& p, const ModelConfig& cfg, const Var& embedded, const TokenBatch& batch,
           ForwardContext& ctx) {
    const std::size_t B = batch.batch, T = batch.seq_len, d = cfg.d_model, H = cfg.n_heads, dh = d / H;
    if (embedded.shape() != Shape{B, T, d}) {
        throw Error(ErrorKind::shape_mismatch, "encode: embedded batch " + shape_str(embedded.shape()) +
                                                   " does not match " + shape_str({B, T, d}));
    }
    require_finite(embedded, "input");
    Var x = layer_norm(reshape(embedded, {B * T, d}), p["emb.ln.g"], p["emb.ln.b"], kLayerNormEps);
    x = apply_dropout(x, ctx);
    const Real att_scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
    auto heads = [&](const Var& v) { return reshape(swap_axes12(reshape(v, {B, T, H, dh})), {B * H, T, dh}); };
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        Var q = heads(linear(p, layer(i, "attn.q"), x));
        Var k = heads(linear(p, layer(i, "attn.k"), x));
        Var v = heads(linear(p, layer(i, "attn.v"), x));
        Var probs = attention_softmax(scale(bmm(q, k, true), att_scale), batch.attention_mask, H);
        Var ctxv = reshape(swap_axes12(reshape(bmm(probs, v, false), {B, H, T, dh})), {B * T, d});
        Var att = apply_dropout(linear(p, layer(i, "attn.o"), ctxv), ctx);
        x = layer_norm(add(x, att), p[layer(i, "ln1.g")], p[layer(i, "ln1.b")], kLayerNormEps);
        Var ff = linear(p, layer(i, "ff2"), gelu(linear(p, layer(i, "ff1"), x)));
        ff = apply_dropout(ff, ctx);
        x = layer_norm(add(x, ff), p[layer(i, "ln2.g")], p[layer(i, "ln2.b")], kLayerNormEps);
        require_finite(x, "layer " + std::to_string(i));
    }
    return reshape(x, {B, T, d});
}

Var head_mlm(const BoundParams& p, const ModelConfig& cfg, const Var& states,
             std::optional<std::span<const std::size_t>> rows) {
    if (!cfg.mlm_head) {
        throw Error(ErrorKind::invalid_config, "head_mlm: MLM head not configured");
    }
    const auto& s = states.shape();
    Var h = rows ? gather_rows(states, *rows) : reshape(states, {s[0] * s[1], s[2]});
    h = layer_norm(gelu(linear(p, "mlm.dense", h)), p["mlm.ln.g"], p["mlm.ln.b"], kLayerNormEps);
    Var logits = linear(p, "mlm.out", h);
    return rows ? logits : reshape(logits, {s[0], s[1], cfg.vocab_size});
}

Var head_nsp(const BoundParams& p, const ModelConfig& cfg, const Var& states, ForwardContext& ctx) {
    if (!cfg.nsp_head) {
        throw Error(ErrorKind::invalid_config, "head_nsp: NSP head not configured");
    }
    return linear(p, "nsp", pooled(p, states, ctx));
}

Var head_classify(const BoundParams& p, const ModelConfig& cfg, const Var& states, ForwardContext& ctx) {
    if (cfg.num_classes == 0) {
        throw Error(ErrorKind::invalid_config, "head_classify: classification head not configured");
    }
    return linear(p, "cls", pooled(p, states, ctx));
}

HeadOutputs forward_from_embeddings(const BoundParams& p, const ModelConfig& cfg, const Var& embedded,
                                    const TokenBatch& batch, Task task, ForwardContext& ctx) {
    if (ctx.counters) {
        ++ctx.counters->forward_passes;
    }
    if (ctx.dropout) {
        ctx.dropout->rewind();
    }
    Var states = encode(p, cfg, embedded, batch, ctx);
    HeadOutputs out;
    out.states = states;
    if (task == Task::pretrain) {
        const auto rows = batch.masked_positions();
        if (!rows.empty()) {
            out.mlm = head_mlm(p, cfg, states, std::span<const std::size_t>(rows));
        }
        if (cfg.nsp_head && !batch.nsp_labels.empty()) {
            out.nsp = head_nsp(p, cfg, states, ctx);
        }
    } else {
        out.cls = head_classify(p, cfg, states, ctx);
    }
    return out;
}

Var task_loss(const HeadOutputs& out, const TokenBatch& batch, Task task) {
    if (task == Task::classify) {
        if (batch.class_labels.size() != batch.batch || !out.cls.valid()) {
            throw Error(ErrorKind::invalid_input, "task_loss: classification batch without class labels");
        }
        return cross_entropy(out.cls, batch.class_labels);
    }
    Var loss;
    if (out.mlm.valid()) {
        std::vector<std::int32_t> targets;
        targets.reserve(out.mlm.shape()[0]);
        for (auto t : batch.mlm_targets) {
            if (t != kNotPredicted) {
                targets.push_back(t);
            }
        }
        loss = cross_entropy(out.mlm, targets);
    }
    if (out.nsp.valid()) {
        Var nsp = cross_entropy(out.nsp, batch.nsp_labels);
        loss = loss.valid() ? add(loss, nsp) : nsp;
    }
    if (!loss.valid()) {
        if (batch.mlm_targets.empty()) {
            throw Error(ErrorKind::invalid_input, "task_loss: pre-training batch has no MLM targets or NSP labels");
        }
        // Supervised batch where corruption happened to select nothing.
        return out.states.graph().constant(Tensor::scalar(Real{0}));
    }
    return loss;
}

Var divergence_logits(const HeadOutputs& out, Task task) { return task == Task::classify ? out.cls : out.mlm; }

} // namespace alum
