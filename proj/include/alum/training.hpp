// SPDX-License-Identifier: Apache-2.0
//
// Training regimes: pre-training from scratch with a standard -> adversarial
// curriculum, continual pre-training from a checkpoint, and (adversarial)
// fine-tuning with dev-set model selection.
//
// Every random draw in a step comes from make_rng(seed, {stream, step}), so a
// run resumed from a saved TrainState follows the uninterrupted trajectory
// bit for bit without storing generator state.
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alum/adversarial.hpp"
#include "alum/checkpoint.hpp"
#include "alum/data.hpp"
#include "alum/eval.hpp"
#include "alum/optim.hpp"

namespace alum {

/// Random streams. Values are part of the reproducibility contract.
enum Stream : std::uint64_t {
    kStreamBatch = 11,
    kStreamCorrupt = 12,
    kStreamDropout = 13,
    kStreamAdversarial = 14,
    kStreamShuffle = 15,
    kStreamHead = 16,
    kStreamInit = 17,
};

struct CurriculumConfig {
    std::size_t standard_steps = 2000;
    std::size_t adversarial_steps = 2000;
    /// Restart the warmup/decay schedule for the adversarial phase.
    bool restart_lr = false;
    /// Restart mask-rate progress for the adversarial phase.
    bool restart_mask_schedule = false;

    std::size_t total() const noexcept { return standard_steps + adversarial_steps; }
};

struct MetricsRecord {
    std::size_t step = 0; ///< 1-based update index
    double lr = 0.0;
    double task_loss = 0.0;
    double adv_loss = 0.0;
    double mask_rate = 0.0;
    double wall_time = 0.0; ///< seconds since the run started
    double grad_norm = 0.0;
    bool skipped = false;

    std::string to_json() const;
};

struct EpochRecord {
    std::size_t epoch = 0; ///< 1-based
    double train_task_loss = 0.0;
    double train_adv_loss = 0.0;
    double dev_accuracy = 0.0;
    double wall_time = 0.0;

    std::string to_json() const;
};

/// Appends one JSON object per line.
class MetricsSink {
public:
    MetricsSink() = default;
    explicit MetricsSink(std::filesystem::path path, bool append = false);

    void write(const std::string& json_line);
    bool enabled() const noexcept { return !path_.empty(); }

private:
    std::filesystem::path path_;
};

struct StepResult {
    LossComponents loss;
    AdamReport update;
};

/// One optimizer update on `batch`: forward, optional ascent, backward, Adam.
/// Random streams are derived from (seed, step).
StepResult train_step(Parameters& params, AdamState& adam, const ModelConfig& model, const TokenBatch& batch,
                      Task task, const AlumConfig& alum, const OptimizerConfig& optim, double lr,
                      std::uint64_t seed, std::uint64_t step, PassCounters* counters = nullptr);

/// Gradient of the training objective without updating anything.
GradMap loss_gradients(const Parameters& params, const ModelConfig& model, const TokenBatch& batch, Task task,
                       const AlumConfig& alum, std::uint64_t seed, std::uint64_t step, LossComponents* loss = nullptr,
                       PassCounters* counters = nullptr);

// --- pre-training ------------------------------------------------------------

struct PretrainConfig {
    ModelConfig model;
    OptimizerConfig optim;
    AlumConfig alum = AlumConfig::pretraining();
    CurriculumConfig curriculum;
    MaskSchedule mask;
    std::size_t seq_len = 64;
    bool nsp = true;
    std::uint64_t seed = 1;
    std::size_t log_every = 10;
    /// Write a resumable state checkpoint after this many updates (0: never).
    std::size_t save_state_at = 0;
    std::filesystem::path state_path;
    /// Stop after this many updates (0: run to the end). For branching runs.
    std::size_t stop_at = 0;
};

struct TrainOutcome {
    Checkpoint checkpoint;
    std::vector<MetricsRecord> metrics;
    PassCounters counters;
    std::size_t skipped_steps = 0;
};

/// Builds the step's batch: NSP pairs, corruption at the scheduled rate.
TokenBatch pretrain_batch(std::span<const EncodedDocument> docs, const PretrainConfig& cfg, std::size_t vocab_size,
                          std::size_t step);

/// Mask rate for update `step` (0-based) under the curriculum.
double scheduled_mask_rate(const PretrainConfig& cfg, std::size_t step);
/// Learning rate for update `step` (0-based) under the curriculum.
double scheduled_lr(const PretrainConfig& cfg, std::size_t step);
/// Adversarial mode for update `step` (0-based).
AdvMode scheduled_mode(const PretrainConfig& cfg, std::size_t step);

/// From scratch (or from `resume`, a checkpoint holding a TrainState).
/// cfg.optim.total_steps must equal the curriculum total.
TrainOutcome pretrain(const std::vector<TextDocument>& corpus, const Vocab& vocab, const PretrainConfig& cfg,
                      const std::optional<Checkpoint>& resume = std::nullopt, MetricsSink* sink = nullptr);

/// Same loop from a trained checkpoint with fresh optimizer state, no
/// curriculum: every step uses cfg.alum.mode. Zero steps returns the input.
TrainOutcome continual_pretrain(const Checkpoint& start, const std::vector<TextDocument>& corpus,
                                const PretrainConfig& cfg, MetricsSink* sink = nullptr);

// --- fine-tuning -------------------------------------------------------------

struct FinetuneConfig {
    OptimizerConfig optim; ///< total_steps is derived from epochs
    AlumConfig alum = AlumConfig::finetuning();
    std::size_t epochs = 3;
    std::size_t max_len = 64;
    std::uint64_t seed = 1;
    std::size_t eval_batch = 128;
};

struct FinetuneOutcome {
    Checkpoint checkpoint; ///< best dev epoch (epoch 0 is the input model)
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> epochs;
    std::vector<MetricsRecord> metrics;
    PassCounters counters;
};

/// Examples with class labels; `dev` selects the best epoch (max accuracy,
/// earliest on ties). A missing classification head is created; one with the
/// wrong arity is rejected.
FinetuneOutcome finetune(const Checkpoint& start, std::span<const Example> train, std::span<const Example> dev,
                         std::size_t num_classes, const FinetuneConfig& cfg, MetricsSink* sink = nullptr,
                         MetricsSink* epoch_sink = nullptr);

/// Number of updates for an epoch-based run.
std::size_t finetune_total_steps(std::size_t n_train, std::size_t batch_size, std::size_t epochs);

} // namespace alum
