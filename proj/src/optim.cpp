// SPDX-License-Identifier: Apache-2.0
#include "alum/optim.hpp"

#include <cmath>

#include "alum/error.hpp"

namespace alum {

void OptimizerConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::invalid_config, "optim: " + m); };
    if (!(peak_lr >= 0.0)) fail("peak_lr must be >= 0");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction must be in (0, 1)");
    if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
    if (batch_size == 0) fail("batch_size must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
}

double lr_at(std::size_t step, const OptimizerConfig& cfg) {
    if (step > cfg.total_steps) {
        throw Error(ErrorKind::invalid_input, "lr_at: step " + std::to_string(step) + " beyond total " +
                                                  std::to_string(cfg.total_steps));
    }
    const double t = static_cast<double>(cfg.total_steps);
    const double s = static_cast<double>(step);
    const double warmup = cfg.warmup_fraction * t;
    if (s <= warmup) {
        // Ratio first so the boundary and mid-decay points are exact.
        return warmup > 0.0 ? cfg.peak_lr * (s / warmup) : 0.0;
    }
    return cfg.peak_lr * ((t - s) / (t - warmup));
}

AdamReport adam_step(Parameters& params, AdamState& state, const GradMap& grads, double lr,
                     const OptimizerConfig& cfg) {
    AdamReport rep;
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        if (!params.contains(name) || params.at(name).shape() != g.shape()) {
            throw Error(ErrorKind::shape_mismatch, "adam_step: gradient '" + name + "' does not match parameters");
        }
        for (Real v : g.values()) {
            sq += static_cast<double>(v) * v;
        }
    }
    rep.grad_norm = std::sqrt(sq);
    if (!std::isfinite(rep.grad_norm)) {
        if (!cfg.skip_non_finite) {
            throw Error(ErrorKind::non_finite, "adam_step: non-finite gradient at update " + std::to_string(state.t + 1));
        }
        return rep;
    }
    rep.clip_scale = rep.grad_norm > cfg.clip_norm ? cfg.clip_norm / rep.grad_norm : 1.0;

    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        auto [mit, m_new] = state.m.try_emplace(name, Tensor(g.shape()));
        auto [vit, v_new] = state.v.try_emplace(name, Tensor(g.shape()));
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double gi = rep.clip_scale * g[i];
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<Real>(mi);
            v[i] = static_cast<Real>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            p[i] = static_cast<Real>(p[i] - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
        }
    }
    rep.applied = true;
    return rep;
}

std::uint64_t checksum(const AdamState& state) {
    Parameters m{state.m}, v{state.v};
    std::uint64_t h = m.checksum();
    h = h * 1099511628211ull ^ v.checksum();
    return h * 1099511628211ull ^ state.t;
}

} // namespace alum
