// SPDX-License-Identifier: Apache-2.0
#include "alum/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "alum/error.hpp"

namespace alum {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw Error(ErrorKind::invalid_config, "config: " + key + " expects " + expected + ", got '" + value + "'");
}

// --- text <-> value ----------------------------------------------------------

std::string fmt(double v) {
    // Shortest text that parses back to the same double.
    char buf[40];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const std::string& v) { return v; }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(AdvMode v) { return to_string(v); }
std::string fmt(VatLoss v) { return to_string(v); }
template <class T>
std::string fmt(const std::optional<T>& v) {
    return v ? fmt(*v) : "auto";
}
template <class T>
std::string fmt(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + fmt(v[i]);
    }
    return out;
}

template <class Int>
void parse_int(const std::string& key, const std::string& s, Int& out) {
    Int v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
        bad_value(key, s, "an integer");
    }
    out = v;
}
void parse(const std::string& key, const std::string& s, std::size_t& out) {
    if (!s.empty() && s[0] == '-') {
        bad_value(key, s, "a non-negative integer");
    }
    parse_int(key, s, out);
}
void parse(const std::string& key, const std::string& s, int& out) { parse_int(key, s, out); }
void parse(const std::string& key, const std::string& s, double& out) {
    try {
        std::size_t used = 0;
        out = std::stod(s, &used);
        if (used != s.size()) {
            bad_value(key, s, "a number");
        }
    } catch (const std::logic_error&) {
        bad_value(key, s, "a number");
    }
}
void parse(const std::string& key, const std::string& s, bool& out) {
    if (s == "true" || s == "1" || s == "yes") {
        out = true;
    } else if (s == "false" || s == "0" || s == "no") {
        out = false;
    } else {
        bad_value(key, s, "true or false");
    }
}
void parse(const std::string&, const std::string& s, std::string& out) { out = s; }
void parse(const std::string&, const std::string& s, AdvMode& out) { out = parse_adv_mode(s); }
void parse(const std::string&, const std::string& s, VatLoss& out) { out = parse_vat_loss(s); }
template <class T>
void parse(const std::string& key, const std::string& s, std::optional<T>& out) {
    if (s == "auto") {
        out.reset();
        return;
    }
    T v{};
    parse(key, s, v);
    out = v;
}
template <class T>
void parse(const std::string& key, const std::string& s, std::vector<T>& out) {
    out.clear();
    if (s.empty()) {
        return;
    }
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        T v{};
        parse(key, item, v);
        out.push_back(v);
    }
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// --- registry ----------------------------------------------------------------

struct Entry {
    std::string help;
    std::function<std::string(RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <class Ref>
Entry field(std::string help, Ref ref) {
    Entry e;
    e.help = std::move(help);
    e.get = [ref](RunConfig& c) { return fmt(ref(c)); };
    e.set = [ref](RunConfig& c, const std::string& key, const std::string& v) { parse(key, v, ref(c)); };
    return e;
}

#define ALUM_FIELD(key, expr, help) \
    r.emplace(key, field(help, [](RunConfig& c) -> auto& { return expr; }))

const std::map<std::string, Entry>& registry() {
    static const std::map<std::string, Entry> reg = [] {
        std::map<std::string, Entry> r;
        ALUM_FIELD("seed", c.seed, "run seed for initialization, batching, dropout and perturbations");

        ALUM_FIELD("model.vocab_size", c.model.vocab_size, "vocabulary size (0: take it from the vocabulary)");
        ALUM_FIELD("model.max_positions", c.model.max_positions, "position table length");
        ALUM_FIELD("model.n_segments", c.model.n_segments, "segment table length");
        ALUM_FIELD("model.d_model", c.model.d_model, "hidden width");
        ALUM_FIELD("model.n_layers", c.model.n_layers, "encoder blocks");
        ALUM_FIELD("model.n_heads", c.model.n_heads, "attention heads (must divide d_model)");
        ALUM_FIELD("model.d_ff", c.model.d_ff, "feed-forward width");
        ALUM_FIELD("model.dropout", c.model.dropout, "dropout rate in [0, 1)");
        ALUM_FIELD("model.mlm_head", c.model.mlm_head, "masked-token prediction head");
        ALUM_FIELD("model.nsp_head", c.model.nsp_head, "next-sentence head");

        ALUM_FIELD("optim.peak_lr", c.peak_lr, "peak learning rate (auto: 1e-4, continual pre-training 4e-5)");
        ALUM_FIELD("optim.warmup_fraction", c.optim.warmup_fraction, "share of steps spent warming up");
        ALUM_FIELD("optim.total_steps", c.total_steps,
                   "updates (auto: curriculum total; continual pre-training 4000; fine-tuning from epochs)");
        ALUM_FIELD("optim.batch_size", c.optim.batch_size, "examples per update");
        ALUM_FIELD("optim.beta1", c.optim.beta1, "Adam first-moment decay");
        ALUM_FIELD("optim.beta2", c.optim.beta2, "Adam second-moment decay");
        ALUM_FIELD("optim.adam_eps", c.optim.adam_eps, "Adam denominator epsilon");
        ALUM_FIELD("optim.clip_norm", c.optim.clip_norm, "global gradient-norm clip");
        ALUM_FIELD("optim.skip_non_finite", c.optim.skip_non_finite,
                   "skip updates with non-finite gradients (false: abort)");

        ALUM_FIELD("alum.mode", c.alum.mode, "off | virtual | conventional");
        ALUM_FIELD("alum.alpha", c.alpha, "weight of the adversarial term (auto: 10 pre-training, 1 fine-tuning)");
        ALUM_FIELD("alum.epsilon", c.alum.epsilon, "L-inf radius of the embedding perturbation");
        ALUM_FIELD("alum.eta", c.alum.eta, "ascent step size");
        ALUM_FIELD("alum.sigma", c.alum.sigma, "std of the initial perturbation");
        ALUM_FIELD("alum.k_steps", c.alum.k_steps, "ascent iterations per update");
        ALUM_FIELD("alum.vat_loss", c.alum.vat_loss, "kl_forward | kl_reverse | kl_symmetric");
        ALUM_FIELD("alum.normalize_ascent", c.alum.normalize_ascent, "scale ascent gradients to unit max-norm");

        ALUM_FIELD("curriculum.standard_steps", c.curriculum.standard_steps, "pre-training updates without ALUM");
        ALUM_FIELD("curriculum.adversarial_steps", c.curriculum.adversarial_steps,
                   "pre-training updates with ALUM after the standard phase");
        ALUM_FIELD("curriculum.restart_lr", c.curriculum.restart_lr, "restart the lr schedule at the switch");
        ALUM_FIELD("curriculum.restart_mask_schedule", c.curriculum.restart_mask_schedule,
                   "restart the mask-rate schedule at the switch");

        ALUM_FIELD("mask.start_rate", c.mask.start_rate, "initial masking rate");
        ALUM_FIELD("mask.end_rate", c.mask.end_rate, "final masking rate");
        ALUM_FIELD("mask.increment", c.mask.increment, "rate increase per phase");
        ALUM_FIELD("mask.phase_fraction", c.mask.phase_fraction, "share of training per phase");

        ALUM_FIELD("pretrain.seq_len", c.seq_len, "maximum pre-training sequence length");
        ALUM_FIELD("pretrain.nsp", c.nsp, "add the next-sentence loss");
        ALUM_FIELD("pretrain.log_every", c.log_every, "metrics record interval in updates");
        ALUM_FIELD("pretrain.save_state_at", c.save_state_at, "write state.ckpt after this update (0: never)");
        ALUM_FIELD("pretrain.stop_at", c.stop_at, "stop after this update (0: run to the end)");

        ALUM_FIELD("finetune.epochs", c.epochs, "fine-tuning epochs");
        ALUM_FIELD("finetune.max_len", c.max_len, "maximum classification sequence length");

        ALUM_FIELD("eval.epsilons", c.eval_epsilons, "attack radii for the robustness grid");
        ALUM_FIELD("eval.ks", c.eval_ks, "attack step counts for the robustness grid");
        ALUM_FIELD("eval.seeds", c.eval_seeds, "attack seeds per grid cell");
        ALUM_FIELD("eval.step_size", c.eval_step_size, "attack step (0: 2.5 * epsilon / k)");
        ALUM_FIELD("eval.batch_size", c.eval_batch, "evaluation batch size");

        ALUM_FIELD("attack.epsilon", c.attack_epsilon, "attack radius for the attack command");
        ALUM_FIELD("attack.k", c.attack_k, "attack steps for the attack command");
        ALUM_FIELD("attack.step_size", c.attack_step_size, "attack step (0: 2.5 * epsilon / k)");

        ALUM_FIELD("data.corpus", c.corpus, "pre-training corpus (blank lines separate documents)");
        ALUM_FIELD("data.vocab", c.vocab, "vocabulary file (empty: train one from the corpus)");
        ALUM_FIELD("data.vocab_size", c.vocab_size, "target size when training a vocabulary");
        ALUM_FIELD("data.train", c.train, "training TSV");
        ALUM_FIELD("data.dev", c.dev, "dev TSV used for model selection");
        ALUM_FIELD("data.test", c.test, "test TSV");
        ALUM_FIELD("data.labels", c.labels, "label names in class order (empty: sorted labels of data.train)");
        ALUM_FIELD("data.shuffle_seed", c.shuffle_seed, "dataset shuffle seed (0: file order)");
        ALUM_FIELD("init.checkpoint", c.checkpoint, "input checkpoint");
        ALUM_FIELD("init.resume", c.resume, "state checkpoint to resume pre-training from");

        ALUM_FIELD("synthetic.seed", c.synthetic.seed, "generator seed");
        ALUM_FIELD("synthetic.n_train", c.synthetic.n_train, "training examples");
        ALUM_FIELD("synthetic.n_dev", c.synthetic.n_dev, "dev examples");
        ALUM_FIELD("synthetic.n_test", c.synthetic.n_test, "test examples");
        ALUM_FIELD("synthetic.n_docs", c.synthetic.n_docs, "unlabeled documents");
        ALUM_FIELD("synthetic.sentences_per_doc", c.synthetic.sentences_per_doc, "sentences per document");
        ALUM_FIELD("synthetic.n_words", c.synthetic.n_words, "pseudo-word inventory");
        ALUM_FIELD("synthetic.min_words", c.synthetic.min_words, "shortest sentence");
        ALUM_FIELD("synthetic.max_words", c.synthetic.max_words, "longest sentence");
        ALUM_FIELD("synthetic.rule", c.synthetic.rule, "order | presence");
        return r;
    }();
    return reg;
}

#undef ALUM_FIELD

const Entry& lookup(const std::string& key) {
    auto it = registry().find(key);
    if (it == registry().end()) {
        throw Error(ErrorKind::invalid_config, "config: unknown key '" + key + "'");
    }
    return it->second;
}

} // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    lookup(key).set(cfg, key, value);
    cfg.explicit_keys.insert(key);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
    return lookup(key).get(const_cast<RunConfig&>(cfg));
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw Error(ErrorKind::invalid_config, "config: expected key=value, got '" + assignment + "'");
    }
    set_config_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    std::size_t no = 0;
    while (std::getline(is, line)) {
        ++no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        try {
            apply_override(cfg, line);
        } catch (const Error& e) {
            throw Error(e.kind(), origin + ":" + std::to_string(no) + ": " + e.what());
        }
    }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw Error(ErrorKind::input_not_found, "config: no such file " + path.string());
    }
    apply_config_text(cfg, read_text_file(path), path.string());
}

std::string dump_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, entry] : registry()) {
        out += key + " = " + entry.get(const_cast<RunConfig&>(cfg)) + "\n";
    }
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [key, entry] : registry()) {
        keys.push_back(key);
    }
    return keys;
}

std::string config_help() {
    RunConfig defaults;
    std::string out = "Configuration keys (set with --set key=value or in a --config file):\n";
    for (const auto& [key, entry] : registry()) {
        std::string line = "  " + key;
        line.resize(std::max<std::size_t>(line.size() + 1, 34), ' ');
        line += entry.help + " [" + entry.get(defaults) + "]\n";
        out += line;
    }
    return out;
}

PretrainConfig pretrain_config(const RunConfig& c) {
    PretrainConfig p;
    p.model = c.model;
    p.optim = c.optim;
    p.optim.peak_lr = c.peak_lr.value_or(1e-4);
    p.optim.total_steps = c.total_steps.value_or(c.curriculum.total());
    p.alum = c.alum;
    p.alum.alpha = c.alpha.value_or(AlumConfig::pretraining().alpha);
    p.curriculum = c.curriculum;
    p.mask = c.mask;
    p.seq_len = c.seq_len;
    p.nsp = c.nsp && c.model.nsp_head;
    p.seed = c.seed;
    p.log_every = c.log_every;
    p.save_state_at = c.save_state_at;
    p.stop_at = c.stop_at;
    return p;
}

PretrainConfig continual_config(const RunConfig& c) {
    PretrainConfig p = pretrain_config(c);
    p.optim.peak_lr = c.peak_lr.value_or(4e-5);
    p.optim.total_steps = c.total_steps.value_or(4000);
    p.curriculum = {0, p.optim.total_steps, false, false};
    return p;
}

FinetuneConfig finetune_config(const RunConfig& c) {
    FinetuneConfig f;
    f.optim = c.optim;
    f.optim.peak_lr = c.peak_lr.value_or(1e-4);
    f.alum = c.alum;
    f.alum.alpha = c.alpha.value_or(AlumConfig::finetuning().alpha);
    f.epochs = c.epochs;
    f.max_len = c.max_len;
    f.seed = c.seed;
    f.eval_batch = c.eval_batch;
    return f;
}

std::vector<AttackSpec> attack_grid(const RunConfig& c) {
    std::vector<AttackSpec> grid;
    for (double eps : c.eval_epsilons) {
        for (int k : c.eval_ks) {
            grid.push_back({eps, k, c.eval_step_size});
        }
    }
    return grid;
}

std::vector<std::uint64_t> attack_seeds(const RunConfig& c) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < c.eval_seeds; ++i) {
        seeds.push_back(c.seed + i);
    }
    return seeds;
}

} // namespace alum
