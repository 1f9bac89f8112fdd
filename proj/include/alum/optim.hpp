// SPDX-License-Identifier: Apache-2.0
//
// Adam with global-norm clipping and a linear warmup / linear decay schedule.
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "alum/model.hpp"

namespace alum {

struct OptimizerConfig {
    double peak_lr = 1e-4;
    double warmup_fraction = 0.01;
    std::size_t total_steps = 4000;
    std::size_t batch_size = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-6;
    double clip_norm = 1.0;
    /// Skip a step whose gradients are not finite; false makes it an error.
    bool skip_non_finite = true;

    void validate() const;
};

/// Rises linearly from 0 at step 0 to peak_lr at warmup_fraction * T, then
/// falls linearly to 0 at step T. Rejects step > T.
double lr_at(std::size_t step, const OptimizerConfig& cfg);

using GradMap = std::map<std::string, Tensor>;

struct AdamState {
    std::uint64_t t = 0; ///< applied updates
    GradMap m;
    GradMap v;

    bool operator==(const AdamState&) const = default;
};

struct AdamReport {
    bool applied = false;
    double grad_norm = 0.0;  ///< before clipping
    double clip_scale = 1.0; ///< factor applied to every gradient
};

/// One clipped Adam update with bias correction. Gradients are clipped to a
/// global L2 norm of cfg.clip_norm before the moments see them.
AdamReport adam_step(Parameters& params, AdamState& state, const GradMap& grads, double lr,
                     const OptimizerConfig& cfg);

/// FNV-1a over the moment tensors and the update count.
std::uint64_t checksum(const AdamState& state);

} // namespace alum
