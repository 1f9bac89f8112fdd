// SPDX-License-Identifier: Apache-2.0
//
// Standard and robust accuracy, the robustness-gap report, and metric export.
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "alum/adversarial.hpp"
#include "alum/data.hpp"

namespace alum {

struct ExampleRecord {
    std::size_t index = 0;
    std::int32_t label = 0;
    std::int32_t prediction = 0;
    bool correct = false;
};

struct StandardResult {
    std::size_t n = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    std::vector<ExampleRecord> records;
};

/// Clean accuracy in dataset order. Rejects an empty dataset.
StandardResult evaluate_standard(const Parameters& params, const ModelConfig& model, std::span<const Example> data,
                                 std::size_t batch_size = 128);

struct AttackSpec {
    double epsilon = 1e-3;
    int k_steps = 5;
    double step_size = 0.0; ///< <= 0: 2.5 * epsilon / k_steps
};

/// Default grid: epsilon in {1e-5, 1e-3, 1e-1} times k in {1, 5}.
std::vector<AttackSpec> default_attack_grid();

struct RobustCell {
    AttackSpec attack;
    std::vector<double> accuracy_per_seed;
    double mean = 0.0;
    double stddev = 0.0; ///< sample standard deviation over seeds (0 for one seed)
    double gap = 0.0;    ///< standard_accuracy - mean
    /// Robust accuracy per class, averaged over seeds.
    std::vector<double> per_class;
};

struct EvalReport {
    std::size_t n_examples = 0;
    std::vector<std::string> label_names;
    std::vector<std::size_t> class_counts;
    double standard_accuracy = 0.0;
    std::vector<double> per_class_standard;
    std::vector<std::uint64_t> seeds;
    std::vector<RobustCell> robust;

    std::string to_json() const;
    std::string to_text() const;
};

/// Mean and sample standard deviation.
std::pair<double, double> mean_stddev(std::span<const double> xs);

/// Robust accuracy for every attack config and seed. Attack randomness for a
/// batch comes from make_rng(seed, {batch_index}).
EvalReport evaluate_robust(const Parameters& params, const ModelConfig& model, std::span<const Example> data,
                           std::span<const AttackSpec> attacks, std::span<const std::uint64_t> seeds,
                           std::vector<std::string> label_names = {}, std::size_t batch_size = 128);

/// Like evaluate_robust but accepts an empty attack list (clean accuracy only).
EvalReport evaluate_report(const Parameters& params, const ModelConfig& model, std::span<const Example> data,
                           std::span<const AttackSpec> attacks, std::span<const std::uint64_t> seeds,
                           std::vector<std::string> label_names = {}, std::size_t batch_size = 128);

/// Robust accuracy for one attack and one seed, with per-example records.
StandardResult attack_dataset(const Parameters& params, const ModelConfig& model, std::span<const Example> data,
                              const AttackSpec& attack, std::uint64_t seed, std::size_t batch_size = 128);

/// Writes one TSV per series under `out_dir` from the run's metrics.jsonl and
/// epochs.jsonl. Each file starts with a header line naming its columns.
/// Returns the written files in order.
std::vector<std::filesystem::path> export_metrics(const std::filesystem::path& run_dir,
                                                  const std::filesystem::path& out_dir);

/// Series names exported from metrics.jsonl and epochs.jsonl.
std::span<const char* const> step_series();
std::span<const char* const> epoch_series();

} // namespace alum
