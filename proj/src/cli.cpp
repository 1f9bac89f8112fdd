// SPDX-License-Identifier: Apache-2.0
#include "alum/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>

#include <CLI11.hpp>
#include <json.hpp>

#include "alum/config.hpp"
#include "alum/error.hpp"

namespace alum {

namespace fs = std::filesystem;

namespace {

using ojson = nlohmann::ordered_json;

#ifndef ALUM_VERSION
#define ALUM_VERSION "dev"
#endif

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os || !(os << text)) {
        throw Error(ErrorKind::io_error, "cannot write " + path.string());
    }
}

fs::path require_file(const std::string& path, const char* what) {
    if (path.empty()) {
        throw Error(ErrorKind::invalid_config, std::string(what) + " is not set");
    }
    if (!fs::is_regular_file(path)) {
        throw Error(ErrorKind::input_not_found, std::string(what) + ": no such file " + path);
    }
    return path;
}

/// Options shared by every subcommand.
struct CommonArgs {
    std::string config;
    std::string manifest;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
    // Shorthands for data.* / init.* keys.
    std::string corpus, vocab, checkpoint, train, dev, test, resume, run;
};

/// Records what a run read, how it was configured and when it ran.
class Manifest {
public:
    Manifest(std::string command, const fs::path& out_dir) : path_(out_dir / "manifest.json") {
        j_["command"] = std::move(command);
        j_["code_version"] = ALUM_VERSION;
        j_["start_time"] = utc_now();
        j_["end_time"] = nullptr;
        j_["status"] = "running";
    }

    void set_config(const RunConfig& cfg) {
        ojson c = ojson::object();
        for (const auto& key : config_keys()) {
            c[key] = get_config_value(cfg, key);
        }
        j_["seed"] = cfg.seed;
        j_["config"] = c;
    }
    void add_input(const std::string& role, const fs::path& path) {
        j_["inputs"][role] = {{"path", path.string()}, {"fnv1a64", file_hash(path)}};
    }
    void add_output(const std::string& role, const fs::path& path) { j_["outputs"][role] = path.string(); }
    void set_field(const std::string& key, const std::string& value) { j_[key] = value; }
    void write() const { write_text(path_, j_.dump(2) + "\n"); }
    void finish() {
        j_["end_time"] = utc_now();
        j_["status"] = "ok";
        write();
    }

private:
    fs::path path_;
    ojson j_;
};

struct Context {
    std::string command;
    RunConfig cfg;
    fs::path out_dir;
    std::ostream& out;
};

std::string absolute_or_empty(const std::string& p) {
    return p.empty() ? p : fs::absolute(p).lexically_normal().string();
}

void make_paths_absolute(RunConfig& cfg) {
    for (std::string* p : {&cfg.corpus, &cfg.vocab, &cfg.train, &cfg.dev, &cfg.test, &cfg.checkpoint, &cfg.resume}) {
        *p = absolute_or_empty(*p);
    }
}

void finish_run(Context& ctx, Manifest& m) {
    write_text(ctx.out_dir / "config.resolved", dump_config(ctx.cfg));
    m.finish();
}

/// Model keys given explicitly must agree with the checkpoint (dropout may change).
ModelConfig model_from_checkpoint(const RunConfig& cfg, const Checkpoint& ck) {
    ModelConfig m = ck.model;
    for (const auto& key : config_keys()) {
        if (key.rfind("model.", 0) != 0 || !cfg.is_explicit(key) || key == "model.dropout") {
            continue;
        }
        RunConfig probe;
        probe.model = ck.model;
        if (get_config_value(probe, key) != get_config_value(cfg, key)) {
            throw Error(ErrorKind::invalid_config, "config: " + key + " = " + get_config_value(cfg, key) +
                                                       " conflicts with the checkpoint's " +
                                                       get_config_value(probe, key));
        }
    }
    if (cfg.is_explicit("model.dropout")) {
        m.dropout = cfg.model.dropout;
    }
    return m;
}

std::vector<std::string> corpus_lines(const std::vector<TextDocument>& docs) {
    std::vector<std::string> lines;
    for (const auto& d : docs) {
        lines.insert(lines.end(), d.begin(), d.end());
    }
    return lines;
}

// --- subcommands -------------------------------------------------------------

void cmd_make_synthetic(Context& ctx) {
    Manifest m(ctx.command, ctx.out_dir);
    ctx.cfg.synthetic.validate();
    m.set_config(ctx.cfg);
    m.write();
    const SyntheticTask task = make_synthetic(ctx.cfg.synthetic);
    write_synthetic(task, ctx.cfg.synthetic, ctx.out_dir);
    for (const char* f : {"corpus.txt", "train.tsv", "dev.tsv", "test.tsv", "synthetic.json"}) {
        m.add_output(f, ctx.out_dir / f);
    }
    ctx.out << "wrote synthetic task to " << ctx.out_dir.string() << " (" << task.train.size() << " train, "
            << task.dev.size() << " dev, " << task.test.size() << " test, " << task.corpus.size() << " documents)\n";
    finish_run(ctx, m);
}

void cmd_train_bpe(Context& ctx) {
    Manifest m(ctx.command, ctx.out_dir);
    const auto corpus_path = require_file(ctx.cfg.corpus, "data.corpus");
    m.set_config(ctx.cfg);
    m.add_input("corpus", corpus_path);
    m.write();
    const Vocab vocab = train_bpe(corpus_lines(read_corpus(corpus_path)), ctx.cfg.vocab_size);
    vocab.save(ctx.out_dir / "vocab.txt");
    m.add_output("vocab", ctx.out_dir / "vocab.txt");
    ctx.out << "vocabulary of " << vocab.size() << " entries (" << vocab.merges().size() << " merges)\n";
    finish_run(ctx, m);
}

/// Loads data.vocab or trains one on the corpus and stores it in the run dir.
Vocab resolve_vocab(Context& ctx, const std::vector<TextDocument>& corpus, Manifest& m) {
    if (!ctx.cfg.vocab.empty()) {
        const auto p = require_file(ctx.cfg.vocab, "data.vocab");
        m.add_input("vocab", p);
        return Vocab::load(p);
    }
    Vocab v = train_bpe(corpus_lines(corpus), ctx.cfg.vocab_size);
    v.save(ctx.out_dir / "vocab.txt");
    m.add_output("vocab", ctx.out_dir / "vocab.txt");
    return v;
}

void report_training(Context& ctx, const TrainOutcome& o) {
    if (!o.metrics.empty()) {
        const auto& last = o.metrics.back();
        ctx.out << "step " << last.step << "  task_loss " << last.task_loss << "  adv_loss " << last.adv_loss
                << "\n";
    }
    ctx.out << "passes: " << o.counters.forward_passes << " forward, " << o.counters.backward_passes
            << " backward, " << o.counters.ascent_iterations << " ascent iterations; " << o.skipped_steps
            << " skipped updates\n";
}

void cmd_pretrain(Context& ctx) {
    Manifest m(ctx.command, ctx.out_dir);
    const auto corpus_path = require_file(ctx.cfg.corpus, "data.corpus");
    m.add_input("corpus", corpus_path);
    const auto corpus = read_corpus(corpus_path);
    const Vocab vocab = resolve_vocab(ctx, corpus, m);
    if (ctx.cfg.model.vocab_size == 0) {
        ctx.cfg.model.vocab_size = vocab.size();
    }
    std::optional<Checkpoint> resume;
    if (!ctx.cfg.resume.empty()) {
        const auto p = require_file(ctx.cfg.resume, "init.resume");
        m.add_input("resume", p);
        resume = load_checkpoint(p);
    }
    PretrainConfig pc = pretrain_config(ctx.cfg);
    ctx.cfg.peak_lr = pc.optim.peak_lr;
    ctx.cfg.total_steps = pc.optim.total_steps;
    ctx.cfg.alpha = pc.alum.alpha;
    if (pc.save_state_at) {
        pc.state_path = ctx.out_dir / "state.ckpt";
        m.add_output("state", pc.state_path);
    }
    m.set_config(ctx.cfg);
    m.write();
    MetricsSink sink(ctx.out_dir / "metrics.jsonl");
    TrainOutcome o = pretrain(corpus, vocab, pc, resume, &sink);
    o.checkpoint.state.reset();
    save_checkpoint(o.checkpoint, ctx.out_dir / "model.ckpt");
    m.add_output("checkpoint", ctx.out_dir / "model.ckpt");
    m.add_output("metrics", ctx.out_dir / "metrics.jsonl");
    report_training(ctx, o);
    finish_run(ctx, m);
}

void cmd_continual(Context& ctx) {
    Manifest m(ctx.command, ctx.out_dir);
    const auto ck_path = require_file(ctx.cfg.checkpoint, "init.checkpoint");
    const auto corpus_path = require_file(ctx.cfg.corpus, "data.corpus");
    m.add_input("checkpoint", ck_path);
    m.add_input("corpus", corpus_path);
    const Checkpoint start = load_checkpoint(ck_path);
    ctx.cfg.model = model_from_checkpoint(ctx.cfg, start);
    if (!ctx.cfg.is_explicit("pretrain.seq_len")) {
        ctx.cfg.seq_len = std::min(ctx.cfg.seq_len, start.model.max_positions);
    }
    PretrainConfig pc = continual_config(ctx.cfg);
    ctx.cfg.peak_lr = pc.optim.peak_lr;
    ctx.cfg.total_steps = pc.optim.total_steps;
    ctx.cfg.alpha = pc.alum.alpha;
    m.set_config(ctx.cfg);
    m.write();
    MetricsSink sink(ctx.out_dir / "metrics.jsonl");
    TrainOutcome o = continual_pretrain(start, read_corpus(corpus_path), pc, &sink);
    save_checkpoint(o.checkpoint, ctx.out_dir / "model.ckpt");
    m.add_output("checkpoint", ctx.out_dir / "model.ckpt");
    report_training(ctx, o);
    finish_run(ctx, m);
}

struct LoadedSplits {
    std::vector<std::string> labels;
    std::vector<Example> train, dev, test;
};

std::vector<Example> load_split(const RunConfig& cfg, const std::string& path, const char* key,
                                std::vector<std::string>& labels, const Vocab& vocab, std::size_t max_len,
                                Manifest& m) {
    const auto p = require_file(path, key);
    m.add_input(key, p);
    ClassificationDataset ds = load_classification_dataset(p, labels, cfg.shuffle_seed);
    labels = ds.label_names;
    return encode_classification(ds, vocab, max_len);
}

void write_report(Context& ctx, Manifest& m, const EvalReport& rep, const std::string& stem) {
    write_text(ctx.out_dir / (stem + ".json"), rep.to_json());
    write_text(ctx.out_dir / (stem + ".txt"), rep.to_text());
    m.add_output(stem, ctx.out_dir / (stem + ".json"));
    ctx.out << rep.to_text();
}

void cmd_finetune(Context& ctx) {
    Manifest m(ctx.command, ctx.out_dir);
    const auto ck_path = require_file(ctx.cfg.checkpoint, "init.checkpoint");
    m.add_input("checkpoint", ck_path);
    const Checkpoint start = load_checkpoint(ck_path);
    std::vector<std::string> labels = ctx.cfg.labels;
    const std::size_t max_len = std::min(ctx.cfg.max_len, start.model.max_positions);
    auto train = load_split(ctx.cfg, ctx.cfg.train, "data.train", labels, start.vocab, max_len, m);
    auto dev = load_split(ctx.cfg, ctx.cfg.dev, "data.dev", labels, start.vocab, max_len, m);
    std::vector<Example> test;
    if (!ctx.cfg.test.empty()) {
        test = load_split(ctx.cfg, ctx.cfg.test, "data.test", labels, start.vocab, max_len, m);
    }
    ctx.cfg.labels = labels;
    ctx.cfg.model = model_from_checkpoint(ctx.cfg, start);
    Checkpoint init = start;
    init.model = ctx.cfg.model;
    FinetuneConfig fc = finetune_config(ctx.cfg);
    ctx.cfg.peak_lr = fc.optim.peak_lr;
    ctx.cfg.alpha = fc.alum.alpha;
    ctx.cfg.total_steps = finetune_total_steps(train.size(), fc.optim.batch_size, fc.epochs);
    m.set_config(ctx.cfg);
    m.write();

    MetricsSink sink(ctx.out_dir / "metrics.jsonl");
    MetricsSink epoch_sink(ctx.out_dir / "epochs.jsonl");
    FinetuneOutcome o = finetune(init, train, dev, labels.size(), fc, &sink, &epoch_sink);
    save_checkpoint(o.checkpoint, ctx.out_dir / "model.ckpt");
    m.add_output("checkpoint", ctx.out_dir / "model.ckpt");

    ojson sel;
    sel["best_epoch"] = o.best_epoch;
    sel["dev_accuracy"] = ojson::array();
    for (const auto& e : o.epochs) {
        sel["dev_accuracy"].push_back(e.dev_accuracy);
    }
    write_text(ctx.out_dir / "selection.json", sel.dump(2) + "\n");
    ctx.out << "best epoch " << o.best_epoch << "\n";

    const auto& eval_set = test.empty() ? dev : test;
    const auto grid = attack_grid(ctx.cfg);
    const auto seeds = attack_seeds(ctx.cfg);
    write_report(ctx, m,
                 evaluate_report(o.checkpoint.params, o.checkpoint.model, eval_set, grid, seeds, labels,
                                 ctx.cfg.eval_batch),
                 "report");
    finish_run(ctx, m);
}

void cmd_evaluate(Context& ctx) {
    Manifest m(ctx.command, ctx.out_dir);
    const auto ck_path = require_file(ctx.cfg.checkpoint, "init.checkpoint");
    m.add_input("checkpoint", ck_path);
    const Checkpoint ck = load_checkpoint(ck_path);
    ctx.cfg.model = model_from_checkpoint(ctx.cfg, ck);
    std::vector<std::string> labels = ctx.cfg.labels;
    const auto data = load_split(ctx.cfg, ctx.cfg.test, "data.test", labels, ck.vocab,
                                 std::min(ctx.cfg.max_len, ck.model.max_positions), m);
    ctx.cfg.labels = labels;
    m.set_config(ctx.cfg);
    m.write();
    write_report(ctx, m,
                 evaluate_report(ck.params, ck.model, data, attack_grid(ctx.cfg), attack_seeds(ctx.cfg), labels,
                                 ctx.cfg.eval_batch),
                 "report");
    finish_run(ctx, m);
}

void cmd_attack(Context& ctx) {
    Manifest m(ctx.command, ctx.out_dir);
    const auto ck_path = require_file(ctx.cfg.checkpoint, "init.checkpoint");
    m.add_input("checkpoint", ck_path);
    const Checkpoint ck = load_checkpoint(ck_path);
    ctx.cfg.model = model_from_checkpoint(ctx.cfg, ck);
    std::vector<std::string> labels = ctx.cfg.labels;
    const auto data = load_split(ctx.cfg, ctx.cfg.test, "data.test", labels, ck.vocab,
                                 std::min(ctx.cfg.max_len, ck.model.max_positions), m);
    ctx.cfg.labels = labels;
    m.set_config(ctx.cfg);
    m.write();
    const AttackSpec spec{ctx.cfg.attack_epsilon, ctx.cfg.attack_k, ctx.cfg.attack_step_size};
    const StandardResult clean = evaluate_standard(ck.params, ck.model, data, ctx.cfg.eval_batch);
    const StandardResult r = attack_dataset(ck.params, ck.model, data, spec, ctx.cfg.seed, ctx.cfg.eval_batch);
    ojson j;
    j["epsilon"] = spec.epsilon;
    j["k"] = spec.k_steps;
    j["step_size"] = spec.step_size;
    j["seed"] = ctx.cfg.seed;
    j["n_examples"] = r.n;
    j["standard_accuracy"] = clean.accuracy;
    j["robust_accuracy"] = r.accuracy;
    j["gap"] = clean.accuracy - r.accuracy;
    ojson recs = ojson::array();
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        const auto& a = r.records[i];
        recs.push_back({{"index", a.index},
                        {"label", labels.at(static_cast<std::size_t>(a.label))},
                        {"clean_prediction", labels.at(static_cast<std::size_t>(clean.records[i].prediction))},
                        {"attacked_prediction", labels.at(static_cast<std::size_t>(a.prediction))},
                        {"robust_correct", a.correct}});
    }
    j["records"] = recs;
    write_text(ctx.out_dir / "attack.json", j.dump(2) + "\n");
    m.add_output("attack", ctx.out_dir / "attack.json");
    ctx.out << "standard " << clean.accuracy << "  robust " << r.accuracy << "  (epsilon " << spec.epsilon
            << ", k " << spec.k_steps << ")\n";
    finish_run(ctx, m);
}

void cmd_export_metrics(Context& ctx, const fs::path& run_dir) {
    if (!fs::is_directory(run_dir)) {
        throw Error(ErrorKind::input_not_found, "export-metrics: no run directory " + run_dir.string());
    }
    Manifest m(ctx.command, ctx.out_dir);
    m.set_config(ctx.cfg);
    m.set_field("run", fs::absolute(run_dir).lexically_normal().string());
    for (const char* f : {"metrics.jsonl", "epochs.jsonl"}) {
        if (fs::exists(run_dir / f)) {
            m.add_input(f, run_dir / f);
        }
    }
    m.write();
    for (const auto& p : export_metrics(run_dir, ctx.out_dir)) {
        m.add_output(p.filename().string(), p);
        ctx.out << p.string() << "\n";
    }
    finish_run(ctx, m);
}

/// Applies a previous run's manifest config as if every key were --set.
/// Returns the whole manifest.
ojson apply_manifest(RunConfig& cfg, const std::string& command, const fs::path& path) {
    const auto p = require_file(path.string(), "--manifest");
    ojson j;
    try {
        j = ojson::parse(read_text_file(p));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::invalid_input, "manifest: " + std::string(e.what()));
    }
    if (j.value("command", "") != command) {
        throw Error(ErrorKind::invalid_config,
                    "manifest: recorded command '" + j.value("command", "") + "' differs from '" + command + "'");
    }
    for (const auto& [key, value] : j.at("config").items()) {
        set_config_value(cfg, key, value.get<std::string>());
    }
    return j;
}

} // namespace

std::string file_hash(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error(ErrorKind::input_not_found, "cannot open " + path.string());
    }
    std::uint64_t h = 1469598103934665603ull;
    char buf[1 << 16];
    while (is.read(buf, sizeof buf) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h = (h ^ static_cast<unsigned char>(buf[i])) * 1099511628211ull;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Adversarial pre-training and fine-tuning of toy transformer encoders"};
    app.require_subcommand(1);
    app.footer(config_help());

    CommonArgs a;
    std::string command;
    struct Sub {
        const char* name;
        const char* help;
        std::vector<std::string CommonArgs::*> paths;
    };
    const Sub subs[] = {
        {"make-synthetic", "generate the synthetic classification task", {}},
        {"train-bpe", "train a BPE vocabulary on a corpus", {&CommonArgs::corpus}},
        {"pretrain", "pre-train from scratch with the standard -> adversarial curriculum",
         {&CommonArgs::corpus, &CommonArgs::vocab, &CommonArgs::resume}},
        {"continual-pretrain", "continue pre-training a checkpoint", {&CommonArgs::corpus, &CommonArgs::checkpoint}},
        {"finetune", "fine-tune a checkpoint on a labeled dataset",
         {&CommonArgs::checkpoint, &CommonArgs::train, &CommonArgs::dev, &CommonArgs::test}},
        {"evaluate", "standard and robust accuracy over the attack grid",
         {&CommonArgs::checkpoint, &CommonArgs::test}},
        {"attack", "single embedding-space attack with per-example records",
         {&CommonArgs::checkpoint, &CommonArgs::test}},
        {"export-metrics", "write one TSV per metric series of a run", {&CommonArgs::run}},
    };
    const std::map<std::string, std::pair<const char*, const char*>> path_flags = {
        {"corpus", {"--corpus", "data.corpus"}},         {"vocab", {"--vocab", "data.vocab"}},
        {"checkpoint", {"--checkpoint", "init.checkpoint"}}, {"train", {"--train", "data.train"}},
        {"dev", {"--dev", "data.dev"}},                  {"test", {"--test", "data.test"}},
        {"resume", {"--resume", "init.resume"}},         {"run", {"--run", "run directory"}},
    };
    auto flag_of = [&](std::string CommonArgs::*p) -> std::pair<const char*, const char*> {
        if (p == &CommonArgs::corpus) return path_flags.at("corpus");
        if (p == &CommonArgs::vocab) return path_flags.at("vocab");
        if (p == &CommonArgs::checkpoint) return path_flags.at("checkpoint");
        if (p == &CommonArgs::train) return path_flags.at("train");
        if (p == &CommonArgs::dev) return path_flags.at("dev");
        if (p == &CommonArgs::test) return path_flags.at("test");
        if (p == &CommonArgs::resume) return path_flags.at("resume");
        return path_flags.at("run");
    };
    for (const auto& s : subs) {
        CLI::App* sc = app.add_subcommand(s.name, s.help);
        sc->add_option("--config", a.config, "configuration file");
        sc->add_option("--manifest", a.manifest, "repeat the configuration recorded in a manifest.json");
        sc->add_option("--set", a.sets, "override one key (key=value); repeatable");
        sc->add_option("--seed", a.seed, s.name == std::string("make-synthetic") ? "synthetic.seed" : "seed");
        sc->add_option("--out", a.out, std::string("output directory (default: $") + kRunRootEnv + "/" + s.name + ")");
        for (auto p : s.paths) {
            const auto [flag, key] = flag_of(p);
            sc->add_option(flag, a.*p, std::string("shorthand for ") + key);
        }
        sc->callback([&command, name = std::string(s.name)] { command = name; });
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << error_class(ErrorKind::invalid_config) << ": " << e.what() << "\n";
        return 2;
    }
    if (command.empty()) {
        for (auto* sc : app.get_subcommands()) {
            command = sc->get_name();
        }
    }

    try {
        RunConfig cfg;
        if (!a.manifest.empty()) {
            const ojson recorded = apply_manifest(cfg, command, a.manifest);
            if (command == "export-metrics" && a.run.empty()) {
                a.run = recorded.value("run", "");
            }
        }
        if (!a.config.empty()) {
            apply_config_file(cfg, a.config);
        }
        for (const auto& s : a.sets) {
            apply_override(cfg, s);
        }
        if (a.seed) {
            set_config_value(cfg, command == "make-synthetic" ? "synthetic.seed" : "seed", std::to_string(*a.seed));
        }
        const std::pair<std::string*, const char*> shorthands[] = {
            {&a.corpus, "data.corpus"}, {&a.vocab, "data.vocab"}, {&a.checkpoint, "init.checkpoint"},
            {&a.train, "data.train"},   {&a.dev, "data.dev"},     {&a.test, "data.test"},
            {&a.resume, "init.resume"},
        };
        for (const auto& [value, key] : shorthands) {
            if (!value->empty()) {
                set_config_value(cfg, key, *value);
            }
        }
        make_paths_absolute(cfg);

        fs::path out_dir = a.out;
        if (out_dir.empty()) {
            const char* root = std::getenv(kRunRootEnv);
            out_dir = fs::path(root && *root ? root : "runs") / command;
            if (command == "export-metrics" && !a.run.empty()) {
                out_dir = fs::path(a.run) / "series";
            }
        }
        fs::create_directories(out_dir);

        Context ctx{command, std::move(cfg), out_dir, out};
        if (command == "make-synthetic") {
            cmd_make_synthetic(ctx);
        } else if (command == "train-bpe") {
            cmd_train_bpe(ctx);
        } else if (command == "pretrain") {
            cmd_pretrain(ctx);
        } else if (command == "continual-pretrain") {
            cmd_continual(ctx);
        } else if (command == "finetune") {
            cmd_finetune(ctx);
        } else if (command == "evaluate") {
            cmd_evaluate(ctx);
        } else if (command == "attack") {
            cmd_attack(ctx);
        } else if (command == "export-metrics") {
            if (a.run.empty()) {
                throw Error(ErrorKind::invalid_config, "export-metrics: --run is required");
            }
            cmd_export_metrics(ctx, a.run);
        }
    } catch (const Error& e) {
        err << "error: " << error_class(e.kind()) << ": " << e.what() << "\n";
        return e.kind() == ErrorKind::input_not_found ? 3 : 2;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << error_class(ErrorKind::io_error) << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace alum
