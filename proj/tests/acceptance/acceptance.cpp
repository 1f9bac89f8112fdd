// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Each criterion prints one line "criterion N: PASS|FAIL ..."
// and the process exit code reflects it.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "alum/adversarial.hpp"
#include "alum/checkpoint.hpp"
#include "alum/cli.hpp"
#include "alum/config.hpp"
#include "alum/data.hpp"
#include "alum/error.hpp"
#include "alum/eval.hpp"
#include "alum/optim.hpp"
#include "alum/training.hpp"
#include "gradcheck.hpp"

using namespace alum;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Collects sub-checks; the criterion passes when all of them hold.
class Verdict {
public:
    void check(bool ok, const std::string& what) {
        if (!ok) {
            failed_.push_back(what);
            std::cout << "  failed: " << what << "\n";
        }
    }
    bool ok() const { return failed_.empty(); }
    std::string summary() const {
        std::string s;
        for (const auto& f : failed_) s += (s.empty() ? "" : "; ") + f;
        return s;
    }

private:
    std::vector<std::string> failed_;
};

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// --- shared toy setup --------------------------------------------------------

ModelConfig toy_model(double dropout = 0.0) {
    ModelConfig c;
    c.vocab_size = 24;
    c.max_positions = 8;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 16;
    c.dropout = dropout;
    c.num_classes = 3;
    return c;
}

TokenBatch toy_batch(Rng& rng, std::size_t batch = 4, std::size_t len = 6) {
    TokenBatch b;
    b.batch = batch;
    b.seq_len = len;
    for (std::size_t i = 0; i < batch * len; ++i) {
        b.input_ids.push_back(static_cast<std::int32_t>(kNumSpecials + rng() % (24 - kNumSpecials)));
        b.segment_ids.push_back(0);
        b.attention_mask.push_back(1);
    }
    for (std::size_t i = 0; i < batch; ++i) {
        b.input_ids[i * len] = kCls;
        b.class_labels.push_back(static_cast<std::int32_t>(rng() % 3));
    }
    return b;
}

Parameters noisy_params(const ModelConfig& cfg, std::uint64_t seed, double scale) {
    Parameters p = init_parameters(cfg, seed);
    Rng rng = make_rng(seed, {99});
    for (auto& [_, t] : p.tensors) {
        Tensor n(t.shape());
        fill_normal(n, scale, rng);
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] += n[i];
    }
    return p;
}

// --- 1: gradient fidelity ----------------------------------------------------

bool criterion_1() {
    const auto t0 = Clock::now();
    gradcheck::Summary s = gradcheck::check_ops(101, 8);
    s.merge(gradcheck::check_model(102, 3));
    s.merge(gradcheck::check_perturbation_gradient(103, 10));
    const double t = seconds_since(t0);
    Verdict v;
    for (const auto& f : s.failed) v.check(false, f);
    v.check(s.cases >= 200, "fewer than 200 cases");
    v.check(t < 120.0, "runtime over 2 min");
    std::cout << "criterion 1: " << (v.ok() ? "PASS" : "FAIL") << " gradient fidelity: " << s.cases
              << " cases, worst error/tolerance " << fmt("%.3f", s.worst_ratio) << ", " << fmt("%.1f", t)
              << " s\n";
    return v.ok();
}

// --- 2: ascent conformance ---------------------------------------------------

bool criterion_2() {
    Verdict v;
    const ModelConfig cfg = toy_model();
    Rng data_rng = make_rng(201);

    // (a) + (b): ball membership after every iteration, K iterations counted.
    {
        const Parameters p = noisy_params(cfg, 202, 0.2);
        bool in_ball = true, counted = true;
        for (int k : {1, 2, 5}) {
            for (bool normalize : {false, true}) {
                AlumConfig a = AlumConfig::finetuning();
                a.epsilon = 1e-2;
                a.sigma = 5e-3;
                a.eta = normalize ? 7e-3 : 50.0;
                a.k_steps = k;
                a.normalize_ascent = normalize;
                const TokenBatch b = toy_batch(data_rng);
                PassCounters c;
                AscentTrace trace;
                Rng rng = make_rng(203, {static_cast<std::uint64_t>(k)});
                const Perturbation d = inner_ascent(p, cfg, b, Task::classify, a, rng, &c, nullptr, &trace);
                const double bound = static_cast<Real>(a.epsilon);
                for (double m : trace.delta_max_abs) in_ball = in_ball && m <= bound;
                in_ball = in_ball && d.delta.max_abs() <= bound;
                counted = counted && c.ascent_iterations == static_cast<std::size_t>(k) &&
                          trace.delta_max_abs.size() == static_cast<std::size_t>(k) &&
                          c.backward_passes == static_cast<std::size_t>(k);
            }
        }
        v.check(in_ball, "(a) delta left the epsilon ball");
        v.check(counted, "(b) ascent iteration count");
    }

    // (c) alpha = 0 leaves the task loss bit for bit.
    {
        const Parameters p = noisy_params(cfg, 204, 0.2);
        bool same = true;
        for (int rep = 0; rep < 5; ++rep) {
            const TokenBatch b = toy_batch(data_rng);
            AlumConfig a = AlumConfig::finetuning();
            a.alpha = 0.0;
            a.epsilon = 1e-2;
            Graph g;
            BoundParams bp = bind(g, p, true);
            Rng rng = make_rng(205, {static_cast<std::uint64_t>(rep)});
            ForwardContext ctx;
            const AlumLoss l = alum_loss(g, bp, p, cfg, b, Task::classify, a, rng, ctx);

            Graph g2;
            BoundParams bp2 = bind(g2, p, true);
            ForwardContext ctx2;
            const Var plain = task_loss(forward_from_embeddings(bp2, cfg, embed(g2, bp2, cfg, b), b, Task::classify, ctx2),
                                        b, Task::classify);
            same = same && l.components.adv_term > 0.0 && l.total.value().item() == plain.value().item();
        }
        v.check(same, "(c) alpha=0 total differs from the task loss");
    }

    // (d) mode off equals a loop that never builds an adversarial graph.
    {
        const ModelConfig dcfg = toy_model(0.1);
        Parameters via_step = noisy_params(dcfg, 206, 0.1);
        Parameters plain = via_step;
        AdamState s1, s2;
        OptimizerConfig o;
        o.total_steps = 8;
        AlumConfig off;
        off.mode = AdvMode::off;
        for (std::size_t step = 0; step < 8; ++step) {
            const TokenBatch b = toy_batch(data_rng);
            const double lr = lr_at(step, o);
            train_step(via_step, s1, dcfg, b, Task::classify, off, o, lr, 207, step);

            Graph g;
            BoundParams bp = bind(g, plain, true);
            DropoutPlan plan(dcfg.dropout, make_rng(207, {kStreamDropout, step}));
            ForwardContext ctx{&plan, nullptr};
            g.backward(task_loss(forward_from_embeddings(bp, dcfg, embed(g, bp, dcfg, b), b, Task::classify, ctx), b,
                                 Task::classify));
            GradMap grads;
            for (const auto& [name, var] : bp.vars) grads.emplace(name, g.grad(var));
            adam_step(plain, s2, grads, lr, o);
        }
        v.check(via_step == plain && s1 == s2, "(d) mode=off differs from the plain loop");
    }

    // (e) the virtual perturbation does not depend on labels.
    {
        const Parameters p = noisy_params(cfg, 208, 0.2);
        bool invariant = true;
        for (int rep = 0; rep < 5; ++rep) {
            TokenBatch b = toy_batch(data_rng);
            AlumConfig a = AlumConfig::finetuning();
            a.k_steps = 2;
            a.epsilon = 1e-2;
            a.eta = 1.0;
            Rng r1 = make_rng(209, {static_cast<std::uint64_t>(rep)});
            const Tensor d1 = inner_ascent(p, cfg, b, Task::classify, a, r1).delta;
            std::vector<std::int32_t> perm = {2, 0, 1};
            for (auto& y : b.class_labels) y = perm[static_cast<std::size_t>(y)];
            Rng r2 = make_rng(209, {static_cast<std::uint64_t>(rep)});
            invariant = invariant && inner_ascent(p, cfg, b, Task::classify, a, r2).delta == d1;
        }
        v.check(invariant, "(e) delta changed under a label permutation");
    }

    // (f) one adversarial step at K=1 costs +2 forward and +1 backward.
    {
        const Parameters start = noisy_params(cfg, 210, 0.2);
        const TokenBatch b = toy_batch(data_rng);
        OptimizerConfig o;
        AlumConfig off;
        off.mode = AdvMode::off;
        AlumConfig on = AlumConfig::finetuning();
        on.k_steps = 1;
        PassCounters c_off, c_on;
        Parameters p1 = start, p2 = start;
        AdamState a1, a2;
        train_step(p1, a1, cfg, b, Task::classify, off, o, 1e-4, 211, 0, &c_off);
        train_step(p2, a2, cfg, b, Task::classify, on, o, 1e-4, 211, 0, &c_on);
        v.check(c_on.forward_passes == c_off.forward_passes + 2 && c_on.backward_passes == c_off.backward_passes + 1,
                "(f) pass counts " + std::to_string(c_off.forward_passes) + "F/" +
                    std::to_string(c_off.backward_passes) + "B -> " + std::to_string(c_on.forward_passes) + "F/" +
                    std::to_string(c_on.backward_passes) + "B");
    }

    std::cout << "criterion 2: " << (v.ok() ? "PASS" : "FAIL") << " ascent conformance (a)-(f)"
              << (v.ok() ? "" : ": " + v.summary()) << "\n";
    return v.ok();
}

// --- 3: schedules ------------------------------------------------------------

bool criterion_3() {
    Verdict v;
    const std::pair<double, double> table[] = {{0.0, 0.05}, {0.25, 0.10}, {0.5, 0.15}, {0.7, 0.20}, {1.0, 0.25}};
    for (const auto& [progress, rate] : table) {
        v.check(mask_rate(progress) == rate, "mask_rate(" + fmt("%g", progress) + ")");
    }

    OptimizerConfig o;
    o.peak_lr = 1e-4;
    o.warmup_fraction = 0.01;
    for (std::size_t total : {4000u, 1000u, 100u}) {
        o.total_steps = total;
        const std::size_t w = total / 100;
        const std::string tag = " (T=" + std::to_string(total) + ")";
        v.check(lr_at(0, o) == 0.0, "lr_at(0)" + tag);
        v.check(lr_at(w, o) == 1e-4, "peak at the 1% boundary" + tag);
        v.check(lr_at(total, o) == 0.0, "lr_at(T)" + tag);
        // Exact halves of the peak on both sides of the boundary.
        if (w % 2 == 0) v.check(lr_at(w / 2, o) == 5e-5, "warmup midpoint" + tag);
        if ((total - w) % 2 == 0) v.check(lr_at(w + (total - w) / 2, o) == 5e-5, "decay midpoint" + tag);
        // Linear pieces, checked against integer ratios in long double.
        double worst = 0.0;
        for (std::size_t s = 0; s <= total; ++s) {
            const long double ref = s <= w ? 1e-4L * static_cast<long double>(s) / static_cast<long double>(w)
                                           : 1e-4L * static_cast<long double>(total - s) /
                                                 static_cast<long double>(total - w);
            const double err = static_cast<double>(std::fabs(static_cast<long double>(lr_at(s, o)) - ref));
            worst = std::max(worst, err / 1e-4);
        }
        v.check(worst <= 4 * std::numeric_limits<double>::epsilon(), "linear shape" + tag);
    }
    std::cout << "criterion 3: " << (v.ok() ? "PASS" : "FAIL") << " mask-rate table and lr warmup/decay exact"
              << (v.ok() ? "" : ": " + v.summary()) << "\n";
    return v.ok();
}

// --- 4: corruption statistics ------------------------------------------------

bool criterion_4() {
    const auto t0 = Clock::now();
    const std::size_t vocab = 1000;
    std::vector<std::int32_t> seq(1000);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        seq[i] = static_cast<std::int32_t>(kNumSpecials + (i * 37) % (vocab - kNumSpecials));
    }
    Rng rng = make_rng(401);
    std::size_t total = 0, selected = 0, masked = 0, kept = 0, random = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const Corruption c = corrupt_mlm(seq, 0.15, vocab, rng);
        for (std::size_t i = 0; i < seq.size(); ++i) {
            ++total;
            if (c.mlm_targets[i] == kNotPredicted) continue;
            ++selected;
            if (c.input_ids[i] == kMask) ++masked;
            else if (c.input_ids[i] == seq[i]) ++kept;
            else ++random;
        }
    }
    const double t = seconds_since(t0);
    const double sel = static_cast<double>(selected) / static_cast<double>(total);
    const double fm = static_cast<double>(masked) / static_cast<double>(selected);
    const double fk = static_cast<double>(kept) / static_cast<double>(selected);
    const double fr = static_cast<double>(random) / static_cast<double>(selected);
    Verdict v;
    v.check(total == 100000, "token count");
    v.check(std::fabs(sel - 0.15) <= 0.005, "selection fraction");
    v.check(std::fabs(fm - 0.8) <= 0.01, "mask share");
    v.check(std::fabs(fk - 0.1) <= 0.01, "keep share");
    v.check(std::fabs(fr - 0.1) <= 0.01, "random share");
    v.check(t < 60.0, "runtime over 1 min");
    std::cout << "criterion 4: " << (v.ok() ? "PASS" : "FAIL") << " corruption over " << total
              << " tokens: selected " << fmt("%.4f", sel) << ", mask/keep/random " << fmt("%.4f", fm) << "/"
              << fmt("%.4f", fk) << "/" << fmt("%.4f", fr) << ", " << fmt("%.2f", t) << " s\n";
    return v.ok();
}

// --- 5: ascent effectiveness -------------------------------------------------

double vat_at(const Parameters& p, const ModelConfig& cfg, const TokenBatch& b, const AlumConfig& a,
              const Tensor& delta) {
    Graph g;
    BoundParams bp = bind(g, p, false);
    Rng unused = make_rng(0);
    ForwardContext ctx;
    return alum_loss(g, bp, p, cfg, b, Task::classify, a, unused, ctx, &delta).components.adv_term;
}

bool criterion_5() {
    Verdict v;
    // Quadratic surrogate f(d) = b.d - 0.5 d'Hd with known curvature: a raw
    // gradient step increases f for every 0 < eta < 2 / lambda_max.
    {
        Rng rng = make_rng(501);
        std::size_t trials = 0, ascended = 0;
        for (int inst = 0; inst < 20; ++inst) {
            const std::size_t n = 8;
            std::vector<double> h(n), bv(n);
            for (std::size_t i = 0; i < n; ++i) {
                h[i] = 0.1 + 4.9 * static_cast<double>(rng() % 1000) / 1000.0;
                bv[i] = static_cast<double>(static_cast<std::int64_t>(rng() % 2001) - 1000) / 500.0;
            }
            const double bound = 2.0 / *std::max_element(h.begin(), h.end());
            auto f = [&](const Tensor& d) {
                double val = 0;
                for (std::size_t i = 0; i < n; ++i) val += bv[i] * d[i] - 0.5 * h[i] * d[i] * d[i];
                return val;
            };
            for (double frac : {0.01, 0.25, 0.5, 0.75, 0.99}) {
                AlumConfig a;
                a.epsilon = 1e6;
                a.eta = frac * bound;
                Tensor d({n});
                fill_normal(d, 2.0, rng);
                Tensor grad({n});
                for (std::size_t i = 0; i < n; ++i) grad[i] = static_cast<Real>(bv[i] - h[i] * d[i]);
                const double before = f(d);
                ascent_update(d, grad, a, n);
                ++trials;
                ascended += f(d) > before;
            }
        }
        v.check(ascended == trials, "quadratic surrogate: " + std::to_string(trials - ascended) + " of " +
                                        std::to_string(trials) + " steps did not ascend");
    }

    // Toy transformer: the ascended perturbation beats a random one of equal norm.
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ModelConfig cfg = toy_model();
        const Parameters p = noisy_params(cfg, 510 + seed, 0.3);
        AlumConfig a = AlumConfig::finetuning();
        a.epsilon = 1e-2;
        a.sigma = 1e-3;
        a.eta = 1e-2;
        a.k_steps = 1;
        a.normalize_ascent = true;
        Rng data_rng = make_rng(520 + seed);
        double after = 0.0, random = 0.0;
        for (int batch = 0; batch < 100; ++batch) {
            const TokenBatch b = toy_batch(data_rng);
            Rng rng = make_rng(530 + seed, {static_cast<std::uint64_t>(batch)});
            const Tensor d = inner_ascent(p, cfg, b, Task::classify, a, rng).delta;
            Tensor r(d.shape());
            fill_normal(r, 1.0, rng);
            double nd = 0.0, nr = 0.0;
            for (std::size_t i = 0; i < d.numel(); ++i) {
                nd += static_cast<double>(d[i]) * d[i];
                nr += static_cast<double>(r[i]) * r[i];
            }
            const double scale = std::sqrt(nd / nr);
            for (std::size_t i = 0; i < r.numel(); ++i) r[i] = static_cast<Real>(r[i] * scale);
            after += vat_at(p, cfg, b, a, d) / 100.0;
            random += vat_at(p, cfg, b, a, r) / 100.0;
        }
        per_seed += (per_seed.empty() ? "" : ", ") + fmt("%.3g", after) + " vs " + fmt("%.3g", random);
        v.check(after > random, "seed " + std::to_string(seed) + ": ascent " + fmt("%.3g", after) +
                                    " <= random " + fmt("%.3g", random));
    }
    std::cout << "criterion 5: " << (v.ok() ? "PASS" : "FAIL")
              << " ascent effectiveness: quadratic surrogate ascends below the bound; mean divergence after ascent vs "
                 "random per seed: "
              << per_seed << "\n";
    return v.ok();
}

// --- 6: directional robustness experiment ------------------------------------

// The experiment's configuration beyond make-synthetic defaults.
constexpr const char* kExperimentConfig = R"(
curriculum.standard_steps = 2000
curriculum.adversarial_steps = 2000
alum.epsilon = 1e-3
alum.eta = 1e-3
alum.sigma = 1e-5
alum.k_steps = 1
alum.normalize_ascent = true
eval.batch_size = 256
)";

// Applied on top for the fine-tuning runs only.
constexpr const char* kFinetuneConfig = R"(
finetune.epochs = 10
alum.alpha = 10
)";

struct CellResult {
    std::vector<double> standard, robust;
};

/// Everything the pre-trained checkpoints depend on.
std::string pretrain_key(const RunConfig& rc) {
    const PretrainConfig pc = pretrain_config(rc);
    std::ostringstream os;
    os << model_config_json(pc.model) << " seed " << pc.seed << " lr " << pc.optim.peak_lr << " steps "
       << pc.curriculum.standard_steps << "+" << pc.curriculum.adversarial_steps << " batch " << pc.optim.batch_size
       << " seq " << pc.seq_len << " alum " << pc.alum.alpha << " " << pc.alum.epsilon << " " << pc.alum.eta << " "
       << pc.alum.sigma << " " << pc.alum.k_steps << " " << pc.alum.normalize_ascent << " "
       << to_string(pc.alum.vat_loss) << " " << to_string(pc.alum.mode) << "\n"
       << get_config_value(rc, "data.vocab_size") << " " << get_config_value(rc, "synthetic.seed");
    return os.str();
}

double pooled_sd(const std::vector<double>& a, const std::vector<double>& b) {
    const double sa = mean_stddev(a).second, sb = mean_stddev(b).second;
    return std::sqrt(0.5 * (sa * sa + sb * sb));
}

double mean_of(const std::vector<double>& a) { return mean_stddev(a).first; }

struct ExperimentArgs {
    std::size_t seeds = 5;
    std::uint64_t first_seed = 1;
    /// Pilot runs only: reuse pre-trained checkpoints from an earlier run with
    /// the same configuration.
    bool reuse_pretrain = false;
    std::vector<std::string> overrides;
    std::vector<std::string> finetune_overrides;
};

bool criterion_6(const fs::path& work, const ExperimentArgs& args) {
    const std::size_t n_seeds = args.seeds;
    const auto t0 = Clock::now();
    RunConfig rc;
    apply_config_text(rc, kExperimentConfig, "experiment");
    for (const auto& o : args.overrides) apply_override(rc, o);
    RunConfig ft_rc = rc;
    apply_config_text(ft_rc, kFinetuneConfig, "finetune");
    for (const auto& o : args.finetune_overrides) apply_override(ft_rc, o);
    const double attack_eps = 1e-3;
    const int attack_k = 5;

    const SyntheticTask task = make_synthetic(rc.synthetic);
    std::vector<std::string> lines;
    for (const auto& d : task.corpus) lines.insert(lines.end(), d.begin(), d.end());
    const Vocab vocab = train_bpe(lines, rc.vocab_size);
    rc.model.vocab_size = vocab.size();
    const std::size_t max_len = std::min(ft_rc.max_len, rc.model.max_positions);
    const auto train = encode_classification(task.train, vocab, max_len);
    const auto dev = encode_classification(task.dev, vocab, max_len);
    const auto test = encode_classification(task.test, vocab, max_len);
    std::cout << "  task: " << train.size() << " train, " << dev.size() << " dev, " << test.size() << " test, "
              << task.corpus.size() << " documents, vocabulary " << vocab.size() << std::endl;

    const fs::path dir = work / "criterion_6";
    fs::create_directories(dir);
    // cells[pre][ft]: pre 0 standard, 1 ALUM; ft 0 standard, 1 adversarial.
    CellResult cells[2][2];
    nlohmann::json log = nlohmann::json::array();
    const std::vector<AttackSpec> attacks = {{attack_eps, attack_k, 0.0}};

    for (std::uint64_t seed = args.first_seed; seed < args.first_seed + n_seeds; ++seed) {
        rc.seed = seed;
        ft_rc.seed = seed;
        const std::string tag = "seed" + std::to_string(seed);
        const fs::path cached[2] = {dir / ("standard_" + tag + ".ckpt"), dir / ("alum_" + tag + ".ckpt")};
        const fs::path cached_cfg = dir / ("pretrain_" + tag + ".cfg");
        Checkpoint pre[2];
        if (args.reuse_pretrain && fs::exists(cached_cfg) && slurp(cached_cfg) == pretrain_key(rc)) {
            pre[0] = load_checkpoint(cached[0]);
            pre[1] = load_checkpoint(cached[1]);
            std::cout << "  seed " << seed << ": reusing pre-trained checkpoints" << std::endl;
        } else {
            PretrainConfig standard = pretrain_config(rc);
            const std::size_t branch = standard.curriculum.standard_steps;
            standard.curriculum = {standard.optim.total_steps, 0, false, false};
            standard.save_state_at = branch;
            standard.state_path = dir / ("branch_" + tag + ".ckpt");
            const auto tp = Clock::now();
            TrainOutcome std_out = pretrain(task.corpus, vocab, standard);
            // The ALUM arm shares the first `branch` standard steps bit for bit
            // and continues adversarially from the saved state.
            TrainOutcome alum_out =
                pretrain(task.corpus, vocab, pretrain_config(rc), load_checkpoint(standard.state_path));
            std::cout << "  seed " << seed << ": pre-training " << fmt("%.0f", seconds_since(tp))
                      << " s (final MLM+NSP loss " << fmt("%.3f", std_out.metrics.back().task_loss) << " standard, "
                      << fmt("%.3f", alum_out.metrics.back().task_loss) << " ALUM)" << std::endl;
            pre[0] = std::move(std_out.checkpoint);
            pre[1] = std::move(alum_out.checkpoint);
            pre[0].state.reset();
            pre[1].state.reset();
            save_checkpoint(pre[0], cached[0]);
            save_checkpoint(pre[1], cached[1]);
            std::ofstream(cached_cfg) << pretrain_key(rc);
        }

        for (int i = 0; i < 2; ++i) {
            const Checkpoint& start = pre[i];
            for (int j = 0; j < 2; ++j) {
                const auto tf = Clock::now();
                FinetuneConfig fc = finetune_config(ft_rc);
                fc.alum.mode = j == 0 ? AdvMode::off : AdvMode::virtual_adv;
                const FinetuneOutcome fo = finetune(start, train, dev, task.train.label_names.size(), fc);
                const std::vector<std::uint64_t> seeds = {seed};
                const EvalReport rep =
                    evaluate_robust(fo.checkpoint.params, fo.checkpoint.model, test, attacks, seeds, {}, rc.eval_batch);
                cells[i][j].standard.push_back(rep.standard_accuracy);
                cells[i][j].robust.push_back(rep.robust[0].mean);
                std::cout << "    " << (i ? "ALUM" : "standard") << " pre-train + " << (j ? "adversarial" : "standard")
                          << " fine-tune: standard " << fmt("%.4f", rep.standard_accuracy) << ", robust "
                          << fmt("%.4f", rep.robust[0].mean) << " (best epoch " << fo.best_epoch << ", "
                          << fmt("%.0f", seconds_since(tf)) << " s)" << std::endl;
                log.push_back({{"seed", seed},
                               {"pretrain", i ? "alum" : "standard"},
                               {"finetune", j ? "adversarial" : "standard"},
                               {"standard_accuracy", rep.standard_accuracy},
                               {"robust_accuracy", rep.robust[0].mean},
                               {"best_epoch", fo.best_epoch}});
            }
        }
        std::ofstream(dir / "results.json") << log.dump(2) << "\n";
    }
    const double t = seconds_since(t0);

    Verdict v;
    auto& sp = cells[0][0];
    auto& ap = cells[1][0];
    auto& combo = cells[1][1];
    // (a) pre-training effect under standard fine-tuning.
    const double sd_a = pooled_sd(ap.robust, sp.robust);
    const double gain = mean_of(ap.robust) - mean_of(sp.robust);
    v.check(gain > sd_a, "(a) robust gain of ALUM pre-training " + fmt("%.4f", gain) + " <= pooled sd " +
                             fmt("%.4f", sd_a));
    // (b) no standard-accuracy loss beyond one pooled sd.
    const double sd_b = pooled_sd(ap.standard, sp.standard);
    const double loss = mean_of(sp.standard) - mean_of(ap.standard);
    v.check(loss <= sd_b, "(b) standard accuracy loss " + fmt("%.4f", loss) + " > pooled sd " + fmt("%.4f", sd_b));
    // (c) the combined cell beats every other cell by more than a pooled sd.
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            if (i == 1 && j == 1) continue;
            const double sd = pooled_sd(combo.robust, cells[i][j].robust);
            const double margin = mean_of(combo.robust) - mean_of(cells[i][j].robust);
            v.check(margin > sd, std::string("(c) combined vs ") + (i ? "ALUM" : "standard") + "+" +
                                     (j ? "adversarial" : "standard") + " robust margin " + fmt("%.4f", margin) +
                                     " <= pooled sd " + fmt("%.4f", sd));
        }
    }
    v.check(n_seeds >= 2, "need at least two seeds for a standard deviation");
    v.check(t < 7200.0, "runtime over 2 h");

    std::ostringstream table;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const auto [ms, ss] = mean_stddev(cells[i][j].standard);
            const auto [mr, sr] = mean_stddev(cells[i][j].robust);
            table << "  " << (i ? "ALUM    " : "standard") << " pre + " << (j ? "adversarial" : "standard   ")
                  << " fine-tune: standard " << fmt("%.4f", ms) << " +- " << fmt("%.4f", ss) << ", robust "
                  << fmt("%.4f", mr) << " +- " << fmt("%.4f", sr) << "\n";
        }
    }
    std::cout << table.str();
    std::cout << "criterion 6: " << (v.ok() ? "PASS" : "FAIL") << " directional robustness over " << n_seeds
              << " seeds (epsilon " << attack_eps << ", k " << attack_k << "), " << fmt("%.0f", t) << " s"
              << (v.ok() ? "" : ": " + v.summary()) << "\n";
    return v.ok();
}

// --- 7: manifest reruns ------------------------------------------------------

bool criterion_7(const fs::path& work) {
    const fs::path dir = work / "criterion_7";
    fs::remove_all(dir);
    fs::create_directories(dir);
    Verdict v;
    auto run = [&](std::vector<std::string> args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        v.check(code == 0, args[0] + " exited " + std::to_string(code) + ": " + err.str());
        return code == 0;
    };
    auto rerun = [&](const std::string& cmd, const std::string& name, const std::vector<std::string>& files) {
        const fs::path a = dir / name;
        const fs::path b = dir / (name + "_rerun");
        if (!run({cmd, "--manifest", (a / "manifest.json").string(), "--out", b.string()})) return;
        for (const auto& f : files) {
            const bool same = fs::exists(a / f) && slurp(a / f) == slurp(b / f);
            v.check(same, cmd + ": " + f + " differs on rerun");
        }
    };
    const std::string data = (dir / "data").string();
    const std::vector<std::string> model = {
        "--set", "model.d_model=16",          "--set", "model.n_layers=1",         "--set", "model.d_ff=32",
        "--set", "model.max_positions=32",    "--set", "pretrain.seq_len=32",      "--set", "optim.batch_size=8",
        "--set", "curriculum.standard_steps=10", "--set", "curriculum.adversarial_steps=10",
        "--set", "data.vocab_size=120",       "--set", "alum.epsilon=1e-3",        "--set", "alum.normalize_ascent=true"};
    auto with = [](std::vector<std::string> a, const std::vector<std::string>& b) {
        a.insert(a.end(), b.begin(), b.end());
        return a;
    };

    if (run({"make-synthetic", "--out", data, "--set", "synthetic.n_train=200", "--set", "synthetic.n_dev=50",
             "--set", "synthetic.n_test=50", "--set", "synthetic.n_docs=60"})) {
        rerun("make-synthetic", "data", {"corpus.txt", "train.tsv", "dev.tsv", "test.tsv", "synthetic.json"});
    }
    if (run({"train-bpe", "--corpus", data + "/corpus.txt", "--set", "data.vocab_size=120", "--out",
             (dir / "bpe").string()})) {
        rerun("train-bpe", "bpe", {"vocab.txt"});
    }
    if (run(with({"pretrain", "--corpus", data + "/corpus.txt", "--out", (dir / "pre").string()}, model))) {
        rerun("pretrain", "pre", {"model.ckpt", "vocab.txt"});
    }
    const std::string ck = (dir / "pre" / "model.ckpt").string();
    if (run({"continual-pretrain", "--checkpoint", ck, "--corpus", data + "/corpus.txt", "--set",
             "optim.total_steps=6", "--set", "alum.epsilon=1e-3", "--out", (dir / "cont").string()})) {
        rerun("continual-pretrain", "cont", {"model.ckpt"});
    }
    const std::vector<std::string> grid = {"--set", "eval.epsilons=1e-3", "--set", "eval.ks=1,5", "--set",
                                           "eval.seeds=2"};
    if (run(with({"finetune", "--checkpoint", ck, "--train", data + "/train.tsv", "--dev", data + "/dev.tsv",
                  "--test", data + "/test.tsv", "--set", "finetune.epochs=2", "--set", "alum.epsilon=1e-3",
                  "--out", (dir / "ft").string()},
                 grid))) {
        rerun("finetune", "ft", {"model.ckpt", "report.json", "report.txt", "selection.json"});
    }
    const std::string ft = (dir / "ft" / "model.ckpt").string();
    if (run(with({"evaluate", "--checkpoint", ft, "--test", data + "/test.tsv", "--out", (dir / "ev").string()},
                 grid))) {
        rerun("evaluate", "ev", {"report.json", "report.txt"});
    }
    if (run({"attack", "--checkpoint", ft, "--test", data + "/test.tsv", "--out", (dir / "at").string()})) {
        rerun("attack", "at", {"attack.json"});
    }
    if (run({"export-metrics", "--run", (dir / "pre").string(), "--out", (dir / "ex").string()})) {
        rerun("export-metrics", "ex", {"step_lr.tsv", "step_task_loss.tsv"});
    }
    std::cout << "criterion 7: " << (v.ok() ? "PASS" : "FAIL")
              << " every subcommand rerun from its manifest reproduces its checkpoints and reports bit for bit"
              << (v.ok() ? "" : ": " + v.summary()) << "\n";
    return v.ok();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    int criterion = 0;
    std::string work = "acceptance_work";
    ExperimentArgs experiment;
    app.add_option("--criterion", criterion, "criterion number (1-7)")->required()->check(CLI::Range(1, 7));
    app.add_option("--work", work, "scratch directory");
    app.add_option("--seeds", experiment.seeds, "criterion 6: number of training seeds");
    app.add_option("--first-seed", experiment.first_seed, "criterion 6: first training seed");
    app.add_option("--set", experiment.overrides, "criterion 6: configuration override (key=value)");
    app.add_option("--ft-set", experiment.finetune_overrides,
                   "criterion 6: configuration override for the fine-tuning runs only (key=value)");
    app.add_flag("--reuse-pretrain", experiment.reuse_pretrain,
                 "criterion 6: reuse cached pre-trained checkpoints (pilot runs only)");
    CLI11_PARSE(app, argc, argv);

    try {
        fs::create_directories(work);
        bool ok = false;
        switch (criterion) {
        case 1: ok = criterion_1(); break;
        case 2: ok = criterion_2(); break;
        case 3: ok = criterion_3(); break;
        case 4: ok = criterion_4(); break;
        case 5: ok = criterion_5(); break;
        case 6: ok = criterion_6(work, experiment); break;
        case 7: ok = criterion_7(work); break;
        }
        return ok ? 0 : 1;
    } catch (const std::exception& e) {
        std::cout << "criterion " << criterion << ": FAIL error: " << e.what() << "\n";
        return 1;
    }
}
