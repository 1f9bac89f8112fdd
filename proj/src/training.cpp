// SPDX-License-Identifier: Apache-2.0
#include "alum/training.hpp"

#include <chrono>
#include <fstream>

#include <json.hpp>

#include "alum/error.hpp"

namespace alum {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
    ModelConfig x = a;
    x.dropout = b.dropout;
    return x == b;
}

void check_corpus(const std::vector<TextDocument>& corpus, const Vocab& vocab, const ModelConfig& model) {
    if (vocab.size() != model.vocab_size) {
        throw Error(ErrorKind::invalid_config, "pretrain: model.vocab_size is " + std::to_string(model.vocab_size) +
                                                   " but the vocabulary has " + std::to_string(vocab.size()));
    }
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        for (const auto& s : corpus[d]) {
            if (!vocab.covers(s)) {
                throw Error(ErrorKind::invalid_input, "pretrain: corpus document " + std::to_string(d + 1) +
                                                          " has characters outside the vocabulary");
            }
        }
    }
}

/// Shared loop over updates [begin, end).
void run_pretrain_loop(Parameters& params, AdamState& adam, std::span<const EncodedDocument> docs,
                       const PretrainConfig& cfg, std::size_t begin, std::size_t end, MetricsSink* sink,
                       TrainOutcome& out) {
    const auto t0 = Clock::now();
    for (std::size_t s = begin; s < end; ++s) {
        const TokenBatch batch = pretrain_batch(docs, cfg, cfg.model.vocab_size, s);
        AlumConfig alum = cfg.alum;
        alum.mode = scheduled_mode(cfg, s);
        const double lr = scheduled_lr(cfg, s);
        const StepResult r =
            train_step(params, adam, cfg.model, batch, Task::pretrain, alum, cfg.optim, lr, cfg.seed, s, &out.counters);
        out.skipped_steps += r.update.applied ? 0 : 1;
        const bool log = cfg.log_every == 0 || (s + 1) % cfg.log_every == 0 || s + 1 == end || !r.update.applied;
        if (log) {
            MetricsRecord m{s + 1, lr, r.loss.task_loss, r.loss.adv_term, scheduled_mask_rate(cfg, s),
                            seconds_since(t0), r.update.grad_norm, !r.update.applied};
            if (sink) {
                sink->write(m.to_json());
            }
            out.metrics.push_back(m);
        }
        if (cfg.save_state_at != 0 && s + 1 == cfg.save_state_at) {
            if (cfg.state_path.empty()) {
                throw Error(ErrorKind::invalid_config, "pretrain: save_state_at needs a state path");
            }
            Checkpoint c{cfg.model, out.checkpoint.vocab, params, TrainState{s + 1, adam}};
            save_checkpoint(c, cfg.state_path);
        }
    }
}

} // namespace

std::string MetricsRecord::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["lr"] = lr;
    j["task_loss"] = task_loss;
    j["adv_loss"] = adv_loss;
    j["mask_rate"] = mask_rate;
    j["grad_norm"] = grad_norm;
    j["wall_time"] = wall_time;
    if (skipped) {
        j["skipped"] = true;
    }
    return j.dump();
}

std::string EpochRecord::to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["train_task_loss"] = train_task_loss;
    j["train_adv_loss"] = train_adv_loss;
    j["dev_accuracy"] = dev_accuracy;
    j["wall_time"] = wall_time;
    return j.dump();
}

MetricsSink::MetricsSink(std::filesystem::path path, bool append) : path_(std::move(path)) {
    std::ofstream os(path_, append ? std::ios::app : std::ios::trunc);
    if (!os) {
        throw Error(ErrorKind::io_error, "metrics: cannot open " + path_.string());
    }
}

void MetricsSink::write(const std::string& json_line) {
    if (!enabled()) {
        return;
    }
    std::ofstream os(path_, std::ios::app);
    os << json_line << '\n';
}

GradMap loss_gradients(const Parameters& params, const ModelConfig& model, const TokenBatch& batch, Task task,
                       const AlumConfig& alum, std::uint64_t seed, std::uint64_t step, LossComponents* loss,
                       PassCounters* counters) {
    Graph g;
    BoundParams bp = bind(g, params, true);
    std::optional<DropoutPlan> plan;
    if (model.dropout > 0.0) {
        plan.emplace(model.dropout, make_rng(seed, {kStreamDropout, step}));
    }
    ForwardContext ctx{plan ? &*plan : nullptr, counters};
    Rng adv_rng = make_rng(seed, {kStreamAdversarial, step});
    AlumLoss l = alum_loss(g, bp, params, model, batch, task, alum, adv_rng, ctx);
    g.backward(l.total);
    if (counters) {
        ++counters->backward_passes;
    }
    GradMap grads;
    for (const auto& [name, v] : bp.vars) {
        grads.emplace(name, g.grad(v));
    }
    if (loss) {
        *loss = l.components;
    }
    return grads;
}

StepResult train_step(Parameters& params, AdamState& adam, const ModelConfig& model, const TokenBatch& batch,
                      Task task, const AlumConfig& alum, const OptimizerConfig& optim, double lr,
                      std::uint64_t seed, std::uint64_t step, PassCounters* counters) {
    StepResult r;
    const GradMap grads = loss_gradients(params, model, batch, task, alum, seed, step, &r.loss, counters);
    r.update = adam_step(params, adam, grads, lr, optim);
    return r;
}

// --- pre-training ------------------------------------------------------------

double scheduled_mask_rate(const PretrainConfig& cfg, std::size_t step) {
    const auto& c = cfg.curriculum;
    std::size_t pos = step, len = c.total();
    if (c.restart_mask_schedule) {
        if (step < c.standard_steps) {
            len = c.standard_steps;
        } else {
            pos = step - c.standard_steps;
            len = c.adversarial_steps;
        }
    }
    return cfg.mask.rate(len == 0 ? 0.0 : static_cast<double>(pos) / static_cast<double>(len));
}

double scheduled_lr(const PretrainConfig& cfg, std::size_t step) {
    const auto& c = cfg.curriculum;
    if (!c.restart_lr) {
        return lr_at(step, cfg.optim);
    }
    OptimizerConfig phase = cfg.optim;
    if (step < c.standard_steps) {
        phase.total_steps = c.standard_steps;
        return lr_at(step, phase);
    }
    phase.total_steps = c.adversarial_steps;
    return lr_at(step - c.standard_steps, phase);
}

AdvMode scheduled_mode(const PretrainConfig& cfg, std::size_t step) {
    return step < cfg.curriculum.standard_steps ? AdvMode::off : cfg.alum.mode;
}

TokenBatch pretrain_batch(std::span<const EncodedDocument> docs, const PretrainConfig& cfg, std::size_t vocab_size,
                          std::size_t step) {
    Rng rng = make_rng(cfg.seed, {kStreamBatch, step});
    const auto pairs = make_nsp_pairs(docs, cfg.optim.batch_size, rng);
    Rng crng = make_rng(cfg.seed, {kStreamCorrupt, step});
    const double rate = scheduled_mask_rate(cfg, step);
    std::vector<Example> examples;
    examples.reserve(pairs.size());
    for (const auto& p : pairs) {
        Example e = pair_example(p.span_a, p.span_b, cfg.seq_len);
        e.nsp_label = cfg.nsp ? p.label : -1;
        Corruption c = corrupt_mlm(e.ids, rate, vocab_size, crng);
        e.ids = std::move(c.input_ids);
        e.mlm_targets = std::move(c.mlm_targets);
        examples.push_back(std::move(e));
    }
    return collate(examples);
}

TrainOutcome pretrain(const std::vector<TextDocument>& corpus, const Vocab& vocab, const PretrainConfig& cfg,
                      const std::optional<Checkpoint>& resume, MetricsSink* sink) {
    cfg.model.validate();
    cfg.optim.validate();
    if (cfg.curriculum.adversarial_steps > 0 && cfg.alum.mode != AdvMode::off) {
        cfg.alum.validate();
    }
    if (cfg.optim.total_steps != cfg.curriculum.total()) {
        throw Error(ErrorKind::invalid_config, "pretrain: curriculum " + std::to_string(cfg.curriculum.standard_steps) +
                                                   "+" + std::to_string(cfg.curriculum.adversarial_steps) +
                                                   " does not sum to optim.total_steps " +
                                                   std::to_string(cfg.optim.total_steps));
    }
    if (cfg.seq_len > cfg.model.max_positions) {
        throw Error(ErrorKind::invalid_config, "pretrain: seq_len exceeds model.max_positions");
    }
    if (!cfg.model.mlm_head) {
        throw Error(ErrorKind::invalid_config, "pretrain: model.mlm_head must be enabled");
    }
    if (cfg.nsp && !cfg.model.nsp_head) {
        throw Error(ErrorKind::invalid_config, "pretrain: nsp needs model.nsp_head");
    }
    check_corpus(corpus, vocab, cfg.model);
    const auto docs = encode_corpus(corpus, vocab);

    TrainOutcome out;
    out.checkpoint.model = cfg.model;
    out.checkpoint.vocab = vocab;
    Parameters params;
    AdamState adam;
    std::size_t begin = 0;
    if (resume) {
        if (!resume->state) {
            throw Error(ErrorKind::invalid_input, "pretrain: resume checkpoint holds no training state");
        }
        if (!(resume->model == cfg.model) || !(resume->vocab == vocab)) {
            throw Error(ErrorKind::invalid_config, "pretrain: resume checkpoint does not match model or vocabulary");
        }
        if (resume->state->step > cfg.optim.total_steps) {
            throw Error(ErrorKind::invalid_config, "pretrain: resume step beyond total_steps");
        }
        params = resume->params;
        adam = resume->state->adam;
        begin = resume->state->step;
    } else {
        params = init_parameters(cfg.model, cfg.seed);
    }
    const std::size_t end = cfg.stop_at != 0 ? std::min(cfg.stop_at, cfg.optim.total_steps) : cfg.optim.total_steps;
    run_pretrain_loop(params, adam, docs, cfg, begin, std::max(begin, end), sink, out);
    out.checkpoint.params = std::move(params);
    out.checkpoint.state = TrainState{std::max(begin, end), std::move(adam)};
    return out;
}

TrainOutcome continual_pretrain(const Checkpoint& start, const std::vector<TextDocument>& corpus,
                                const PretrainConfig& cfg, MetricsSink* sink) {
    if (!same_architecture(start.model, cfg.model)) {
        throw Error(ErrorKind::invalid_config, "continual-pretrain: model config differs from the checkpoint's");
    }
    PretrainConfig c = cfg;
    c.curriculum = {0, cfg.optim.total_steps, false, false};
    c.model.num_classes = start.model.num_classes;
    c.nsp = cfg.nsp && start.model.nsp_head;
    c.model.validate();
    if (c.seq_len > c.model.max_positions) {
        throw Error(ErrorKind::invalid_config, "continual-pretrain: seq_len exceeds model.max_positions");
    }
    if (cfg.optim.total_steps > 0) {
        c.optim.validate();
        if (c.alum.mode != AdvMode::off) {
            c.alum.validate();
        }
    }
    check_corpus(corpus, start.vocab, c.model);

    TrainOutcome out;
    out.checkpoint.model = c.model;
    out.checkpoint.vocab = start.vocab;
    Parameters params = start.params;
    check_parameters(params, c.model);
    AdamState adam;
    if (c.optim.total_steps > 0) {
        const auto docs = encode_corpus(corpus, start.vocab);
        run_pretrain_loop(params, adam, docs, c, 0, c.optim.total_steps, sink, out);
    }
    out.checkpoint.model.dropout = start.model.dropout;
    out.checkpoint.params = std::move(params);
    return out;
}

// --- fine-tuning -------------------------------------------------------------

std::size_t finetune_total_steps(std::size_t n_train, std::size_t batch_size, std::size_t epochs) {
    return epochs * ((n_train + batch_size - 1) / batch_size);
}

FinetuneOutcome finetune(const Checkpoint& start, std::span<const Example> train, std::span<const Example> dev,
                         std::size_t num_classes, const FinetuneConfig& cfg, MetricsSink* sink,
                         MetricsSink* epoch_sink) {
    if (num_classes < 2) {
        throw Error(ErrorKind::invalid_input, "finetune: need at least two classes");
    }
    if (start.model.num_classes != 0 && start.model.num_classes != num_classes) {
        throw Error(ErrorKind::invalid_config, "finetune: checkpoint head has " +
                                                   std::to_string(start.model.num_classes) + " classes, dataset has " +
                                                   std::to_string(num_classes));
    }
    if (train.empty() && cfg.epochs > 0) {
        throw Error(ErrorKind::invalid_input, "finetune: training set is empty");
    }
    if (dev.empty()) {
        throw Error(ErrorKind::invalid_input, "finetune: dev set is empty");
    }
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train[i].class_label < 0 || static_cast<std::size_t>(train[i].class_label) >= num_classes) {
            throw Error(ErrorKind::invalid_input, "finetune: training example " + std::to_string(i) +
                                                      " has a label outside the head");
        }
    }

    ModelConfig model = start.model;
    Parameters params = start.params;
    if (model.num_classes == 0) {
        model.num_classes = num_classes;
        init_classifier_head(params, model, cfg.seed);
    }
    check_parameters(params, model);

    OptimizerConfig optim = cfg.optim;
    const std::size_t per_epoch = (train.size() + optim.batch_size - 1) / optim.batch_size;
    optim.total_steps = cfg.epochs * per_epoch;
    FinetuneOutcome out;
    if (cfg.epochs > 0) {
        optim.validate();
        if (cfg.alum.mode != AdvMode::off) {
            cfg.alum.validate();
        }
    }

    Parameters best = params;
    double best_acc = -1.0;
    AdamState adam;
    const auto t0 = Clock::now();
    std::vector<std::size_t> order(train.size());
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        Rng shuffle_rng = make_rng(cfg.seed, {kStreamShuffle, e});
        shuffle_in_place(order, shuffle_rng);
        double task_sum = 0.0, adv_sum = 0.0;
        for (std::size_t j = 0; j < per_epoch; ++j) {
            const std::size_t s = (e - 1) * per_epoch + j;
            std::vector<Example> ex;
            for (std::size_t k = j * optim.batch_size; k < std::min(order.size(), (j + 1) * optim.batch_size); ++k) {
                ex.push_back(train[order[k]]);
            }
            const TokenBatch batch = collate(ex);
            const double lr = lr_at(s, optim);
            const StepResult r =
                train_step(params, adam, model, batch, Task::classify, cfg.alum, optim, lr, cfg.seed, s, &out.counters);
            task_sum += r.loss.task_loss;
            adv_sum += r.loss.adv_term;
            MetricsRecord m{s + 1, lr, r.loss.task_loss, r.loss.adv_term, 0.0, seconds_since(t0),
                            r.update.grad_norm, !r.update.applied};
            if (sink) {
                sink->write(m.to_json());
            }
            out.metrics.push_back(m);
        }
        EpochRecord rec;
        rec.epoch = e;
        rec.train_task_loss = task_sum / static_cast<double>(per_epoch);
        rec.train_adv_loss = adv_sum / static_cast<double>(per_epoch);
        rec.dev_accuracy = evaluate_standard(params, model, dev, cfg.eval_batch).accuracy;
        rec.wall_time = seconds_since(t0);
        if (epoch_sink) {
            epoch_sink->write(rec.to_json());
        }
        out.epochs.push_back(rec);
        if (rec.dev_accuracy > best_acc) {
            best_acc = rec.dev_accuracy;
            best = params;
            out.best_epoch = e;
        }
    }
    out.checkpoint = Checkpoint{model, start.vocab, std::move(best), std::nullopt};
    return out;
}

} // namespace alum
