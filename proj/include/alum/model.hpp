// SPDX-License-Identifier: Apache-2.0
//
// Post-LN transformer encoder with MLM, NSP and sequence-classification heads.
//
// The forward pass is split at the embedding sum so a perturbation can be
// added to the [batch, seq, d_model] block before the encoder runs:
//
//     e      = embed(batch)                        token + position + segment
//     states = encode(e + delta)                   input LN, n_layers blocks
//     logits = head(states)
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alum/batch.hpp"
#include "alum/graph.hpp"
#include "alum/tensor.hpp"

namespace alum {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t max_positions = 64;
    std::size_t n_segments = 2;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_ff = 128;
    double dropout = 0.1;
    bool mlm_head = true;
    bool nsp_head = true;
    /// Arity of the classification head; 0 means no classification head.
    std::size_t num_classes = 0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// Named model tensors, ordered by name.
class Parameters {
public:
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    bool contains(const std::string& name) const { return tensors.count(name) != 0; }
    std::size_t total_numel() const;
    bool all_finite() const;
    /// FNV-1a over names, shapes and raw bytes.
    std::uint64_t checksum() const;

    bool operator==(const Parameters&) const = default;
};

Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Adds (or replaces) a freshly initialized classification head with
/// cfg.num_classes outputs.
void init_classifier_head(Parameters& params, const ModelConfig& cfg, std::uint64_t seed);

/// Checks names and shapes against the config.
void check_parameters(const Parameters& params, const ModelConfig& cfg);

/// Counts passes through the network; used to check the per-step cost of
/// adversarial training.
struct PassCounters {
    std::size_t forward_passes = 0;
    std::size_t backward_passes = 0;
    std::size_t ascent_iterations = 0;
};

/// Dropout masks for one training step. The first forward pass draws masks in
/// site order; after rewind() later passes replay the same masks, so clean and
/// perturbed outer passes see identical dropout.
class DropoutPlan {
public:
    DropoutPlan(double rate, Rng rng) : rate_(rate), rng_(std::move(rng)) {}

    bool active() const noexcept { return rate_ > 0.0; }
    const Tensor& next(const Shape& shape);
    void rewind() noexcept { cursor_ = 0; }

private:
    double rate_;
    Rng rng_;
    std::vector<Tensor> masks_;
    std::size_t cursor_ = 0;
};

struct ForwardContext {
    /// nullptr disables dropout.
    DropoutPlan* dropout = nullptr;
    PassCounters* counters = nullptr;
};

/// Parameters placed on a graph as leaves.
struct BoundParams {
    std::map<std::string, Var> vars;
    const Var& operator[](const std::string& name) const;
};

BoundParams bind(Graph& graph, const Parameters& params, bool requires_grad);

enum class Task { pretrain, classify };

/// [batch, seq, d_model] = tok_emb[id] + pos_emb[t] + seg_emb[segment].
Var embed(Graph& graph, const BoundParams& params, const ModelConfig& cfg, const TokenBatch& batch);

/// Contextual states, same shape as the embedded input. Keys with
/// attention_mask == 0 get exactly zero attention weight.
Var encode(const BoundParams& params, const ModelConfig& cfg, const Var& embedded, const TokenBatch& batch,
           ForwardContext& ctx);

/// Vocabulary logits. With no rows: [batch, seq, vocab]; otherwise one row per
/// listed flat position, [rows, vocab].
Var head_mlm(const BoundParams& params, const ModelConfig& cfg, const Var& states,
             std::optional<std::span<const std::size_t>> rows = std::nullopt);
/// [batch, 2] from the first-position state.
Var head_nsp(const BoundParams& params, const ModelConfig& cfg, const Var& states, ForwardContext& ctx);
/// [batch, num_classes] from the first-position state.
Var head_classify(const BoundParams& params, const ModelConfig& cfg, const Var& states, ForwardContext& ctx);

struct HeadOutputs {
    Var states; ///< encoder output
    Var mlm; ///< rows at masked positions; invalid when the batch has none
    Var nsp; ///< invalid unless NSP labels are present and the head exists
    Var cls; ///< classification logits for Task::classify
};

/// encode + heads on an already embedded (and possibly perturbed) batch.
/// Counts one forward pass.
HeadOutputs forward_from_embeddings(const BoundParams& params, const ModelConfig& cfg, const Var& embedded,
                                    const TokenBatch& batch, Task task, ForwardContext& ctx);

/// Empirical-risk term: MLM (+ NSP) cross-entropy for pre-training, class
/// cross-entropy for classification. Throws when the batch lacks supervision.
Var task_loss(const HeadOutputs& out, const TokenBatch& batch, Task task);

/// Logits that the adversarial divergence compares: MLM rows for
/// pre-training, class logits for classification. May be invalid (no rows).
Var divergence_logits(const HeadOutputs& out, Task task);

} // namespace alum
