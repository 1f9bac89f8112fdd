// SPDX-License-Identifier: Apache-2.0
//
// Virtual adversarial regularization in embedding space.
//
// One adversarial step on a batch x with supervision y:
//
//   1. outer clean pass      p = f(x; theta)                  (differentiable)
//   2. delta ~ N(0, sigma^2 I), projected into the L-inf ball of radius eps
//   3. K times:  g = d/d(delta) l(stop_grad(p), f(x + delta; theta))
//                delta = clamp(delta + eta * g, -eps, eps)
//   4. outer perturbed pass  q = f(x + delta; theta)          (differentiable)
//   5. loss = task(p, y) + alpha * l(p, q)
//
// The clean branch is a constant during the ascent and live in the outer
// loss, so the parameter gradient carries both terms of the adversarial
// divergence. Parameters are never modified here.
#pragma once

#include <string>
#include <vector>

#include "alum/graph.hpp"
#include "alum/model.hpp"

namespace alum {

enum class AdvMode {
    off,          ///< plain empirical risk
    virtual_adv,  ///< divergence between clean and perturbed outputs
    conventional, ///< task loss at the perturbed input
};

enum class VatLoss { kl_forward, kl_reverse, kl_symmetric };

std::string to_string(AdvMode mode);
std::string to_string(VatLoss loss);
AdvMode parse_adv_mode(const std::string& s);
VatLoss parse_vat_loss(const std::string& s);

struct AlumConfig {
    double alpha = 10.0;
    double epsilon = 1e-5;
    double eta = 1e-3;
    double sigma = 1e-5;
    int k_steps = 1;
    VatLoss vat_loss = VatLoss::kl_symmetric;
    /// Scale each position's ascent gradient to unit max-norm before the step.
    bool normalize_ascent = false;
    AdvMode mode = AdvMode::virtual_adv;

    void validate() const;

    static AlumConfig pretraining() { return AlumConfig{}; }
    static AlumConfig finetuning() {
        AlumConfig c;
        c.alpha = 1.0;
        return c;
    }
};

struct Perturbation {
    Tensor delta;
};

/// Clamps every entry into [-epsilon, epsilon].
void project_linf(Tensor& delta, double epsilon);
Tensor projected_linf(Tensor delta, double epsilon);

/// iid N(0, sigma^2) entries, then projected into the epsilon ball.
Perturbation init_delta(const Shape& shape, double sigma, double epsilon, Rng& rng);

/// Mean over rows of the selected divergence between probability rows,
/// computed in double. Rows must sum to 1 within 1e-5.
double vat_divergence(const Tensor& p_clean, const Tensor& p_pert, VatLoss kind);

/// Same divergence on logits, on the graph.
Var vat_divergence_logits(const Var& clean_logits, const Var& pert_logits, VatLoss kind);

struct AscentTrace {
    std::vector<double> objective;     ///< ascent objective before each step
    std::vector<double> delta_max_abs; ///< max |delta| after each projection
};

/// delta <- clamp(delta + eta * grad, -eps, eps). With normalize_ascent the
/// gradient is first scaled to unit L-inf norm per row of `row_dim` entries.
/// Rejects a non-finite gradient.
void ascent_update(Tensor& delta, Tensor grad, const AlumConfig& cfg, std::size_t row_dim);

/// K projected ascent steps on delta. `teacher_logits`, when given, is the
/// detached clean output to compare against (virtual mode); otherwise one
/// clean forward pass computes it. No dropout is applied inside the ascent.
Perturbation inner_ascent(const Parameters& params, const ModelConfig& model, const TokenBatch& batch, Task task,
                          const AlumConfig& cfg, Rng& rng, PassCounters* counters = nullptr,
                          const Tensor* teacher_logits = nullptr, AscentTrace* trace = nullptr);

struct LossComponents {
    double task_loss = 0.0;
    double adv_term = 0.0;
    double total = 0.0;
};

struct AlumLoss {
    Var total;
    LossComponents components;
    Perturbation delta; ///< empty when mode is off
};

/// Builds the full training objective on `graph` (params bound with gradients).
/// `frozen_delta` replaces the ascent with a fixed perturbation.
AlumLoss alum_loss(Graph& graph, const BoundParams& bound, const Parameters& params, const ModelConfig& model,
                   const TokenBatch& batch, Task task, const AlumConfig& cfg, Rng& rng, ForwardContext& ctx,
                   const Tensor* frozen_delta = nullptr);

// --- evaluation attack -------------------------------------------------------

struct AttackConfig {
    double epsilon = 1e-3;
    /// <= 0 selects 2.5 * epsilon / k_steps.
    double step_size = 0.0;
    int k_steps = 5;
    bool random_start = true;
};

struct AttackResult {
    std::vector<std::int32_t> clean_pred;
    std::vector<std::int32_t> adv_pred;
    std::vector<std::uint8_t> clean_correct;
    /// Correct on the clean input and at the attacked point.
    std::vector<std::uint8_t> robust_correct;
    Tensor adv_logits;
};

/// L-inf PGD on the true-label cross-entropy w.r.t. the embeddings of a
/// classification batch, with sign-gradient steps. k_steps == 0 returns the
/// clean predictions.
AttackResult pgd_attack(const Parameters& params, const ModelConfig& model, const TokenBatch& batch,
                        const AttackConfig& attack, Rng& rng, PassCounters* counters = nullptr);

/// Arg-max per row of a [rows, classes] tensor.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);

} // namespace alum
