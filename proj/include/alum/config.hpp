// SPDX-License-Identifier: Apache-2.0
//
// Flat key = value configuration covering every tunable of every regime.
// Files hold one "key = value" per line; '#' starts a comment. Unknown keys
// are errors, never silently ignored.
#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "alum/adversarial.hpp"
#include "alum/data.hpp"
#include "alum/eval.hpp"
#include "alum/optim.hpp"
#include "alum/training.hpp"

namespace alum {

struct RunConfig {
    std::uint64_t seed = 1;
    ModelConfig model;
    OptimizerConfig optim;
    /// Unset: 1e-4 from scratch and for fine-tuning, 4e-5 for continual pre-training.
    std::optional<double> peak_lr;
    /// Unset: curriculum total for pre-training, 4000 for continual pre-training.
    std::optional<std::size_t> total_steps;
    AlumConfig alum;
    /// Unset: 10 for pre-training, 1 for fine-tuning.
    std::optional<double> alpha;
    CurriculumConfig curriculum;
    MaskSchedule mask;

    std::size_t seq_len = 64;
    bool nsp = true;
    std::size_t log_every = 10;
    std::size_t save_state_at = 0;
    std::size_t stop_at = 0;

    std::size_t epochs = 3;
    std::size_t max_len = 64;

    std::vector<double> eval_epsilons = {1e-5, 1e-3, 1e-1};
    std::vector<int> eval_ks = {1, 5};
    std::size_t eval_seeds = 5;
    double eval_step_size = 0.0;
    std::size_t eval_batch = 128;

    double attack_epsilon = 1e-3;
    int attack_k = 5;
    double attack_step_size = 0.0;

    std::string corpus;
    std::string vocab;
    std::size_t vocab_size = 256;
    std::string train;
    std::string dev;
    std::string test;
    std::vector<std::string> labels;
    std::uint64_t shuffle_seed = 0;
    std::string checkpoint;
    std::string resume;

    SyntheticConfig synthetic;

    /// Keys set by a file or override, in the order first seen.
    std::set<std::string> explicit_keys;

    bool is_explicit(const std::string& key) const { return explicit_keys.count(key) != 0; }
};

/// Sets one key from its text form. Unknown keys and malformed values throw
/// invalid-config.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// "key=value" as given on the command line.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Applies a config file on top of `cfg`. Errors name the file and line.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<text>");

/// Every key, sorted, one "key = value" per line; parseable by apply_config_text.
std::string dump_config(const RunConfig& cfg);

std::vector<std::string> config_keys();
/// Key list with defaults and descriptions.
std::string config_help();

// --- per-regime views ----------------------------------------------------------

PretrainConfig pretrain_config(const RunConfig& cfg);
PretrainConfig continual_config(const RunConfig& cfg);
FinetuneConfig finetune_config(const RunConfig& cfg);
std::vector<AttackSpec> attack_grid(const RunConfig& cfg);
std::vector<std::uint64_t> attack_seeds(const RunConfig& cfg);

} // namespace alum
