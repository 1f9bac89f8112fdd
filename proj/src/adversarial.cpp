// SPDX-License-Identifier: Apache-2.0
#include "alum/adversarial.hpp"

#include <algorithm>
#include <cmath>

#include "alum/error.hpp"

namespace alum {

std::string to_string(AdvMode mode) {
    switch (mode) {
    case AdvMode::off: return "off";
    case AdvMode::virtual_adv: return "virtual";
    case AdvMode::conventional: return "conventional";
    }
    return "?";
}

std::string to_string(VatLoss loss) {
    switch (loss) {
    case VatLoss::kl_forward: return "kl_forward";
    case VatLoss::kl_reverse: return "kl_reverse";
    case VatLoss::kl_symmetric: return "kl_symmetric";
    }
    return "?";
}

AdvMode parse_adv_mode(const std::string& s) {
    if (s == "off") return AdvMode::off;
    if (s == "virtual") return AdvMode::virtual_adv;
    if (s == "conventional") return AdvMode::conventional;
    throw Error(ErrorKind::invalid_config, "alum.mode: expected off|virtual|conventional, got '" + s + "'");
}

VatLoss parse_vat_loss(const std::string& s) {
    if (s == "kl_forward") return VatLoss::kl_forward;
    if (s == "kl_reverse") return VatLoss::kl_reverse;
    if (s == "kl_symmetric") return VatLoss::kl_symmetric;
    throw Error(ErrorKind::invalid_config,
                "alum.vat_loss: expected kl_forward|kl_reverse|kl_symmetric, got '" + s + "'");
}

void AlumConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::invalid_config, "alum: " + m); };
    if (!(alpha >= 0.0)) fail("alpha must be >= 0");
    if (!(epsilon > 0.0)) fail("epsilon must be > 0");
    if (!(eta > 0.0)) fail("eta must be > 0");
    if (!(sigma > 0.0)) fail("sigma must be > 0");
    if (k_steps < 1) fail("k_steps must be >= 1");
}

void project_linf(Tensor& delta, double epsilon) {
    const Real hi = static_cast<Real>(epsilon);
    for (auto& v : delta.values()) {
        v = std::clamp(v, -hi, hi);
    }
}

Tensor projected_linf(Tensor delta, double epsilon) {
    project_linf(delta, epsilon);
    return delta;
}

Perturbation init_delta(const Shape& shape, double sigma, double epsilon, Rng& rng) {
    Perturbation p{Tensor(shape)};
    fill_normal(p.delta, sigma, rng);
    project_linf(p.delta, epsilon);
    return p;
}

double vat_divergence(const Tensor& p_clean, const Tensor& p_pert, VatLoss kind) {
    if (p_clean.shape() != p_pert.shape() || p_clean.rank() != 2 || p_clean.dim(0) == 0) {
        throw Error(ErrorKind::shape_mismatch, "vat_divergence: shapes " + shape_str(p_clean.shape()) + " and " +
                                                   shape_str(p_pert.shape()));
    }
    const std::size_t rows = p_clean.dim(0), c = p_clean.dim(1);
    for (const Tensor* t : {&p_clean, &p_pert}) {
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double v = (*t)[r * c + j];
                if (!(v >= 0.0)) {
                    throw Error(ErrorKind::invalid_input, "vat_divergence: negative or non-finite probability");
                }
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-5) {
                throw Error(ErrorKind::invalid_input,
                            "vat_divergence: row " + std::to_string(r) + " sums to " + std::to_string(s));
            }
        }
    }
    auto kl = [&](const Tensor& p, const Tensor& q) {
        double total = 0.0;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double pi = p[i];
            if (pi > 0.0) {
                total += pi * (std::log(pi) - std::log(static_cast<double>(q[i])));
            }
        }
        return total / static_cast<double>(rows);
    };
    switch (kind) {
    case VatLoss::kl_forward: return kl(p_clean, p_pert);
    case VatLoss::kl_reverse: return kl(p_pert, p_clean);
    case VatLoss::kl_symmetric: return 0.5 * (kl(p_clean, p_pert) + kl(p_pert, p_clean));
    }
    return 0.0;
}

Var vat_divergence_logits(const Var& clean_logits, const Var& pert_logits, VatLoss kind) {
    switch (kind) {
    case VatLoss::kl_forward: return kl_divergence(clean_logits, pert_logits);
    case VatLoss::kl_reverse: return kl_divergence(pert_logits, clean_logits);
    case VatLoss::kl_symmetric:
        return scale(add(kl_divergence(clean_logits, pert_logits), kl_divergence(pert_logits, clean_logits)),
                     Real{0.5});
    }
    throw Error(ErrorKind::invalid_config, "vat_divergence_logits: unknown kind");
}

namespace {

/// Embedding sum as a plain tensor.
Tensor embedded_value(const Parameters& params, const ModelConfig& model, const TokenBatch& batch) {
    Graph g;
    BoundParams bp;
    for (const char* name : {"emb.tok", "emb.pos", "emb.seg"}) {
        bp.vars.emplace(name, g.constant(params.at(name)));
    }
    return embed(g, bp, model, batch).value();
}

Var ascent_objective(const HeadOutputs& pert, const Var& teacher, const TokenBatch& batch, Task task,
                     const AlumConfig& cfg) {
    if (cfg.mode == AdvMode::conventional) {
        return task_loss(pert, batch, task);
    }
    return vat_divergence_logits(teacher, divergence_logits(pert, task), cfg.vat_loss);
}

void normalize_rows_linf(Tensor& g, std::size_t d) {
    for (std::size_t r = 0; r < g.numel() / d; ++r) {
        Real m = 0;
        for (std::size_t j = 0; j < d; ++j) {
            m = std::max(m, std::abs(g[r * d + j]));
        }
        if (m > 0) {
            for (std::size_t j = 0; j < d; ++j) {
                g[r * d + j] /= m;
            }
        }
    }
}

} // namespace

void ascent_update(Tensor& delta, Tensor grad, const AlumConfig& cfg, std::size_t row_dim) {
    if (grad.shape() != delta.shape()) {
        throw Error(ErrorKind::shape_mismatch, "ascent_update: gradient " + shape_str(grad.shape()) +
                                                   " vs perturbation " + shape_str(delta.shape()));
    }
    if (!grad.all_finite()) {
        throw Error(ErrorKind::non_finite, "inner_ascent: non-finite gradient");
    }
    if (cfg.normalize_ascent) {
        normalize_rows_linf(grad, row_dim);
    }
    const Real eta = static_cast<Real>(cfg.eta);
    for (std::size_t i = 0; i < grad.numel(); ++i) {
        delta[i] += eta * grad[i];
    }
    project_linf(delta, cfg.epsilon);
}

Perturbation inner_ascent(const Parameters& params, const ModelConfig& model, const TokenBatch& batch, Task task,
                          const AlumConfig& cfg, Rng& rng, PassCounters* counters, const Tensor* teacher_logits,
                          AscentTrace* trace) {
    cfg.validate();
    if (cfg.mode == AdvMode::off) {
        throw Error(ErrorKind::invalid_config, "inner_ascent: adversarial mode is off");
    }
    const Tensor base = embedded_value(params, model, batch);
    Perturbation p = init_delta(base.shape(), cfg.sigma, cfg.epsilon, rng);
    ForwardContext ctx{nullptr, counters};

    Tensor teacher;
    if (cfg.mode == AdvMode::virtual_adv) {
        if (teacher_logits != nullptr) {
            teacher = *teacher_logits;
        } else {
            Graph g;
            BoundParams bp = bind(g, params, false);
            teacher = divergence_logits(forward_from_embeddings(bp, model, g.constant(base), batch, task, ctx), task)
                          .value();
        }
        if (teacher.empty()) {
            // Nothing to compare (e.g. no masked positions): the ascent has
            // no signal and delta stays at its projected initialization.
            if (counters) {
                counters->ascent_iterations += static_cast<std::size_t>(cfg.k_steps);
            }
            return p;
        }
    }

    for (int m = 0; m < cfg.k_steps; ++m) {
        Graph g;
        BoundParams bp = bind(g, params, false);
        Var delta = g.leaf(p.delta, true);
        Var e = add(g.constant(base), delta);
        HeadOutputs out = forward_from_embeddings(bp, model, e, batch, task, ctx);
        Var t = cfg.mode == AdvMode::virtual_adv ? g.constant(teacher) : Var{};
        Var obj = ascent_objective(out, t, batch, task, cfg);
        g.backward(obj);
        if (counters) {
            ++counters->backward_passes;
            ++counters->ascent_iterations;
        }
        try {
            ascent_update(p.delta, g.grad(delta), cfg, model.d_model);
        } catch (const Error& e) {
            throw Error(e.kind(), std::string(e.what()) + " at iteration " + std::to_string(m + 1));
        }
        if (trace) {
            trace->objective.push_back(obj.value().item());
            trace->delta_max_abs.push_back(p.delta.max_abs());
        }
    }
    return p;
}

AlumLoss alum_loss(Graph& graph, const BoundParams& bound, const Parameters& params, const ModelConfig& model,
                   const TokenBatch& batch, Task task, const AlumConfig& cfg, Rng& rng, ForwardContext& ctx,
                   const Tensor* frozen_delta) {
    Var e = embed(graph, bound, model, batch);
    HeadOutputs clean = forward_from_embeddings(bound, model, e, batch, task, ctx);
    Var task_term = task_loss(clean, batch, task);

    AlumLoss out;
    out.components.task_loss = task_term.value().item();
    if (cfg.mode == AdvMode::off) {
        out.total = task_term;
        out.components.total = out.components.task_loss;
        return out;
    }
    cfg.validate();

    Var clean_logits = divergence_logits(clean, task);
    if (frozen_delta != nullptr) {
        out.delta.delta = *frozen_delta;
    } else {
        // Reusing the outer clean logits as the ascent teacher is only exact
        // when the outer pass ran without dropout.
        const bool reuse = ctx.dropout == nullptr || !ctx.dropout->active();
        Tensor teacher;
        if (reuse && clean_logits.valid()) {
            teacher = clean_logits.value();
        }
        out.delta = inner_ascent(params, model, batch, task, cfg, rng, ctx.counters,
                                 reuse ? &teacher : nullptr);
    }

    Var pert_e = add(e, graph.constant(out.delta.delta));
    HeadOutputs pert = forward_from_embeddings(bound, model, pert_e, batch, task, ctx);
    Var adv;
    if (cfg.mode == AdvMode::conventional) {
        adv = task_loss(pert, batch, task);
    } else if (clean_logits.valid()) {
        adv = vat_divergence_logits(clean_logits, divergence_logits(pert, task), cfg.vat_loss);
    }
    if (!adv.valid()) {
        out.total = task_term;
        out.components.total = out.components.task_loss;
        return out;
    }
    out.components.adv_term = adv.value().item();
    out.total = add(task_term, scale(adv, static_cast<Real>(cfg.alpha)));
    out.components.total = out.total.value().item();
    return out;
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
    const std::size_t c = logits.shape().back();
    const std::size_t rows = logits.numel() / c;
    std::vector<std::int32_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* x = logits.data() + r * c;
        out[r] = static_cast<std::int32_t>(std::max_element(x, x + c) - x);
    }
    return out;
}

AttackResult pgd_attack(const Parameters& params, const ModelConfig& model, const TokenBatch& batch,
                        const AttackConfig& attack, Rng& rng, PassCounters* counters) {
    if (batch.class_labels.size() != batch.batch) {
        throw Error(ErrorKind::invalid_input, "pgd_attack: batch has no class labels");
    }
    if (attack.k_steps < 0 || !(attack.epsilon >= 0.0)) {
        throw Error(ErrorKind::invalid_config, "pgd_attack: need k_steps >= 0 and epsilon >= 0");
    }
    const Tensor base = embedded_value(params, model, batch);
    ForwardContext ctx{nullptr, counters};
    auto logits_at = [&](const Tensor& delta) {
        Graph g;
        BoundParams bp = bind(g, params, false);
        Var e = g.constant(base);
        if (!delta.empty()) {
            e = add(e, g.constant(delta));
        }
        return forward_from_embeddings(bp, model, e, batch, Task::classify, ctx).cls.value();
    };

    AttackResult res;
    const Tensor clean_logits = logits_at(Tensor());
    res.clean_pred = argmax_rows(clean_logits);
    res.clean_correct.resize(batch.batch);
    for (std::size_t i = 0; i < batch.batch; ++i) {
        res.clean_correct[i] = res.clean_pred[i] == batch.class_labels[i];
    }
    if (attack.k_steps == 0) {
        res.adv_pred = res.clean_pred;
        res.robust_correct = res.clean_correct;
        res.adv_logits = clean_logits;
        return res;
    }

    const double step = attack.step_size > 0.0 ? attack.step_size : 2.5 * attack.epsilon / attack.k_steps;
    Tensor delta(base.shape());
    if (attack.random_start && attack.epsilon > 0.0) {
        std::uniform_real_distribution<double> u(-attack.epsilon, attack.epsilon);
        for (auto& v : delta.values()) {
            v = static_cast<Real>(u(rng));
        }
        project_linf(delta, attack.epsilon);
    }
    for (int m = 0; m < attack.k_steps; ++m) {
        Graph g;
        BoundParams bp = bind(g, params, false);
        Var d = g.leaf(delta, true);
        Var e = add(g.constant(base), d);
        Var loss = cross_entropy(forward_from_embeddings(bp, model, e, batch, Task::classify, ctx).cls,
                                 batch.class_labels);
        g.backward(loss);
        if (counters) {
            ++counters->backward_passes;
        }
        const Tensor grad = g.grad(d);
        if (!grad.all_finite()) {
            throw Error(ErrorKind::non_finite, "pgd_attack: non-finite gradient at step " + std::to_string(m + 1));
        }
        for (std::size_t i = 0; i < grad.numel(); ++i) {
            const Real s = grad[i] > 0 ? Real{1} : (grad[i] < 0 ? Real{-1} : Real{0});
            delta[i] += static_cast<Real>(step) * s;
        }
        project_linf(delta, attack.epsilon);
    }
    res.adv_logits = logits_at(delta);
    res.adv_pred = argmax_rows(res.adv_logits);
    res.robust_correct.resize(batch.batch);
    for (std::size_t i = 0; i < batch.batch; ++i) {
        res.robust_correct[i] = res.clean_correct[i] && res.adv_pred[i] == batch.class_labels[i];
    }
    return res;
}

} // namespace alum
