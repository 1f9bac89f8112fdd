// SPDX-License-Identifier: Apache-2.0
#include "alum/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "alum/error.hpp"

namespace alum {

namespace {

using ojson = nlohmann::ordered_json;

constexpr const char* kStepSeries[] = {"lr", "task_loss", "adv_loss", "mask_rate", "grad_norm", "wall_time"};
constexpr const char* kEpochSeries[] = {"train_task_loss", "train_adv_loss", "dev_accuracy", "wall_time"};

void check_data(std::span<const Example> data, const ModelConfig& model) {
    if (data.empty()) {
        throw Error(ErrorKind::invalid_input, "evaluate: dataset is empty");
    }
    if (model.num_classes == 0) {
        throw Error(ErrorKind::invalid_config, "evaluate: model has no classification head");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto y = data[i].class_label;
        if (y < 0 || static_cast<std::size_t>(y) >= model.num_classes) {
            throw Error(ErrorKind::invalid_input, "evaluate: example " + std::to_string(i) + " has label " +
                                                      std::to_string(y) + " outside the head's " +
                                                      std::to_string(model.num_classes) + " classes");
        }
    }
}

template <class Fn>
void for_each_batch(std::size_t n, std::size_t batch_size, Fn&& fn) {
    if (batch_size == 0) {
        throw Error(ErrorKind::invalid_config, "evaluate: batch size must be > 0");
    }
    for (std::size_t b = 0, start = 0; start < n; ++b, start += batch_size) {
        fn(b, start, std::min(n, start + batch_size));
    }
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

} // namespace

StandardResult evaluate_standard(const Parameters& params, const ModelConfig& model, std::span<const Example> data,
                                 std::size_t batch_size) {
    check_data(data, model);
    StandardResult res;
    res.n = data.size();
    for_each_batch(data.size(), batch_size, [&](std::size_t, std::size_t lo, std::size_t hi) {
        const TokenBatch batch = collate(data.subspan(lo, hi - lo));
        Graph g;
        BoundParams bp = bind(g, params, false);
        ForwardContext ctx;
        const auto pred = argmax_rows(
            forward_from_embeddings(bp, model, embed(g, bp, model, batch), batch, Task::classify, ctx).cls.value());
        for (std::size_t i = lo; i < hi; ++i) {
            ExampleRecord r{i, data[i].class_label, pred[i - lo], pred[i - lo] == data[i].class_label};
            res.correct += r.correct;
            res.records.push_back(r);
        }
    });
    res.accuracy = static_cast<double>(res.correct) / static_cast<double>(res.n);
    return res;
}

std::vector<AttackSpec> default_attack_grid() {
    std::vector<AttackSpec> grid;
    for (double eps : {1e-5, 1e-3, 1e-1}) {
        for (int k : {1, 5}) {
            grid.push_back({eps, k, 0.0});
        }
    }
    return grid;
}

std::pair<double, double> mean_stddev(std::span<const double> xs) {
    if (xs.empty()) {
        return {0.0, 0.0};
    }
    double mean = 0.0;
    for (double x : xs) {
        mean += x;
    }
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) {
        return {mean, 0.0};
    }
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - mean) * (x - mean);
    }
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

StandardResult attack_dataset(const Parameters& params, const ModelConfig& model, std::span<const Example> data,
                              const AttackSpec& attack, std::uint64_t seed, std::size_t batch_size) {
    check_data(data, model);
    StandardResult res;
    res.n = data.size();
    AttackConfig ac{attack.epsilon, attack.step_size, attack.k_steps, true};
    for_each_batch(data.size(), batch_size, [&](std::size_t b, std::size_t lo, std::size_t hi) {
        const TokenBatch batch = collate(data.subspan(lo, hi - lo));
        Rng rng = make_rng(seed, {b});
        const AttackResult ar = pgd_attack(params, model, batch, ac, rng);
        for (std::size_t i = lo; i < hi; ++i) {
            ExampleRecord r{i, data[i].class_label, ar.adv_pred[i - lo], ar.robust_correct[i - lo] != 0};
            res.correct += r.correct;
            res.records.push_back(r);
        }
    });
    res.accuracy = static_cast<double>(res.correct) / static_cast<double>(res.n);
    return res;
}

EvalReport evaluate_robust(const Parameters& params, const ModelConfig& model, std::span<const Example> data,
                           std::span<const AttackSpec> attacks, std::span<const std::uint64_t> seeds,
                           std::vector<std::string> label_names, std::size_t batch_size) {
    if (attacks.empty()) {
        throw Error(ErrorKind::invalid_config, "evaluate_robust: no attack configurations");
    }
    return evaluate_report(params, model, data, attacks, seeds, std::move(label_names), batch_size);
}

EvalReport evaluate_report(const Parameters& params, const ModelConfig& model, std::span<const Example> data,
                           std::span<const AttackSpec> attacks, std::span<const std::uint64_t> seeds,
                           std::vector<std::string> label_names, std::size_t batch_size) {
    if (!attacks.empty() && seeds.empty()) {
        throw Error(ErrorKind::invalid_config, "evaluate_robust: no attack seeds");
    }
    const std::size_t c = model.num_classes;
    EvalReport rep;
    const StandardResult clean = evaluate_standard(params, model, data, batch_size);
    rep.n_examples = clean.n;
    rep.standard_accuracy = clean.accuracy;
    rep.seeds.assign(seeds.begin(), seeds.end());
    if (label_names.empty()) {
        for (std::size_t k = 0; k < c; ++k) {
            label_names.push_back(std::to_string(k));
        }
    }
    rep.label_names = std::move(label_names);
    rep.class_counts.assign(c, 0);
    std::vector<std::size_t> clean_hits(c, 0);
    for (const auto& r : clean.records) {
        ++rep.class_counts[static_cast<std::size_t>(r.label)];
        clean_hits[static_cast<std::size_t>(r.label)] += r.correct;
    }
    auto per_class = [&](const std::vector<std::size_t>& hits) {
        std::vector<double> out(c, 0.0);
        for (std::size_t k = 0; k < c; ++k) {
            out[k] = rep.class_counts[k] ? static_cast<double>(hits[k]) / static_cast<double>(rep.class_counts[k]) : 0.0;
        }
        return out;
    };
    rep.per_class_standard = per_class(clean_hits);

    for (const auto& attack : attacks) {
        RobustCell cell;
        cell.attack = attack;
        cell.per_class.assign(c, 0.0);
        for (auto seed : seeds) {
            const StandardResult r = attack_dataset(params, model, data, attack, seed, batch_size);
            cell.accuracy_per_seed.push_back(r.accuracy);
            std::vector<std::size_t> hits(c, 0);
            for (const auto& rec : r.records) {
                hits[static_cast<std::size_t>(rec.label)] += rec.correct;
            }
            const auto pc = per_class(hits);
            for (std::size_t k = 0; k < c; ++k) {
                cell.per_class[k] += pc[k] / static_cast<double>(seeds.size());
            }
        }
        std::tie(cell.mean, cell.stddev) = mean_stddev(cell.accuracy_per_seed);
        cell.gap = rep.standard_accuracy - cell.mean;
        rep.robust.push_back(std::move(cell));
    }
    return rep;
}

std::string EvalReport::to_json() const {
    ojson j;
    j["n_examples"] = n_examples;
    j["standard_accuracy"] = standard_accuracy;
    j["seeds"] = seeds;
    ojson classes = ojson::array();
    for (std::size_t k = 0; k < label_names.size(); ++k) {
        classes.push_back({{"label", label_names[k]},
                           {"count", k < class_counts.size() ? class_counts[k] : 0},
                           {"standard_accuracy", k < per_class_standard.size() ? per_class_standard[k] : 0.0}});
    }
    j["classes"] = classes;
    ojson cells = ojson::array();
    for (const auto& c : robust) {
        cells.push_back({{"epsilon", c.attack.epsilon},
                         {"k", c.attack.k_steps},
                         {"step_size", c.attack.step_size},
                         {"robust_accuracy", c.accuracy_per_seed},
                         {"mean", c.mean},
                         {"stddev", c.stddev},
                         {"gap", c.gap},
                         {"per_class", c.per_class}});
    }
    j["robust"] = cells;
    return j.dump(2) + "\n";
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os << "examples           " << n_examples << "\n";
    os << "standard accuracy  " << fmt(standard_accuracy) << "\n";
    for (std::size_t k = 0; k < label_names.size(); ++k) {
        os << "  class " << label_names[k] << "  n=" << class_counts[k] << "  acc=" << fmt(per_class_standard[k])
           << "\n";
    }
    os << "attack seeds      ";
    for (auto s : seeds) {
        os << ' ' << s;
    }
    os << "\n\n";
    os << "epsilon      k  robust(mean)  stddev      gap\n";
    for (const auto& c : robust) {
        char line[128];
        std::snprintf(line, sizeof line, "%-10.3g %3d  %-12.6f  %-10.6f  %.6f\n", c.attack.epsilon, c.attack.k_steps,
                      c.mean, c.stddev, c.gap);
        os << line;
    }
    return os.str();
}

std::span<const char* const> step_series() { return kStepSeries; }
std::span<const char* const> epoch_series() { return kEpochSeries; }

std::vector<std::filesystem::path> export_metrics(const std::filesystem::path& run_dir,
                                                  const std::filesystem::path& out_dir) {
    if (!std::filesystem::is_directory(run_dir)) {
        throw Error(ErrorKind::input_not_found, "export-metrics: no run directory " + run_dir.string());
    }
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;

    auto read_records = [&](const char* file) {
        std::vector<nlohmann::json> recs;
        std::ifstream is(run_dir / file);
        std::string line;
        std::size_t no = 0;
        while (std::getline(is, line)) {
            ++no;
            if (line.empty()) {
                continue;
            }
            try {
                recs.push_back(nlohmann::json::parse(line));
            } catch (const nlohmann::json::exception&) {
                throw Error(ErrorKind::invalid_input, std::string("export-metrics: bad record at ") + file + ":" +
                                                          std::to_string(no));
            }
        }
        return recs;
    };
    auto emit = [&](const std::vector<nlohmann::json>& recs, const char* key, std::span<const char* const> series,
                    const char* prefix) {
        for (const char* name : series) {
            const auto path = out_dir / (std::string(prefix) + name + ".tsv");
            std::ofstream os(path, std::ios::binary | std::ios::trunc);
            if (!os) {
                throw Error(ErrorKind::io_error, "export-metrics: cannot write " + path.string());
            }
            os << key << '\t' << name << '\n';
            for (const auto& r : recs) {
                if (r.contains(key) && r.contains(name)) {
                    os << r[key].get<std::size_t>() << '\t' << fmt(r[name].get<double>()) << '\n';
                }
            }
            written.push_back(path);
        }
    };
    emit(read_records("metrics.jsonl"), "step", kStepSeries, "step_");
    emit(read_records("epochs.jsonl"), "epoch", kEpochSeries, "epoch_");
    return written;
}

} // namespace alum
