// SPDX-License-Identifier: Apache-2.0
#include "alum/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "alum/error.hpp"

namespace alum {

// --- mask-rate schedule ------------------------------------------------------

double MaskSchedule::rate(double progress) const {
    if (!(progress >= 0.0 && progress <= 1.0)) {
        throw Error(ErrorKind::invalid_input, "mask_rate: progress " + std::to_string(progress) + " outside [0, 1]");
    }
    const double steps = std::round((end_rate - start_rate) / increment);
    double inv = 1.0 / phase_fraction;
    // 1/0.2 is 5 up to rounding; multiplying by the integer keeps phase
    // boundaries such as 0.6 exact.
    if (std::abs(inv - std::round(inv)) < 1e-9) {
        inv = std::round(inv);
    }
    const double phase = std::min(std::floor(progress * inv), steps);
    const double r = start_rate + phase * increment;
    return std::round(r * 1e12) / 1e12;
}

double mask_rate(double progress) { return MaskSchedule{}.rate(progress); }

// --- corruption --------------------------------------------------------------

Corruption corrupt_mlm(std::span<const std::int32_t> seq, double rate, std::size_t vocab_size, Rng& rng) {
    Corruption c;
    c.input_ids.assign(seq.begin(), seq.end());
    c.mlm_targets.assign(seq.size(), kNotPredicted);
    if (!(rate >= 0.0 && rate <= 1.0)) {
        throw Error(ErrorKind::invalid_config, "corrupt_mlm: rate must lie in [0, 1]");
    }
    if (rate == 0.0) {
        return c;
    }
    const bool can_replace = vocab_size > kNumSpecials;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (Vocab::is_special(seq[i]) || unit(rng) >= rate) {
            continue;
        }
        c.mlm_targets[i] = seq[i];
        const double u = unit(rng);
        if (u < 0.8) {
            c.input_ids[i] = kMask;
        } else if (u >= 0.9 && can_replace) {
            const auto span = vocab_size - kNumSpecials;
            c.input_ids[i] = static_cast<std::int32_t>(kNumSpecials + rng() % span);
        }
    }
    return c;
}

// --- corpus ------------------------------------------------------------------

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        const auto b = cur.find_first_not_of(" \t\r");
        if (b != std::string::npos) {
            const auto e = cur.find_last_not_of(" \t\r");
            out.push_back(cur.substr(b, e - b + 1));
        }
        cur.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\n') {
            flush();
            continue;
        }
        cur += c;
        if ((c == '.' || c == '!' || c == '?') && i + 1 < text.size() && text[i + 1] == ' ') {
            flush();
        }
    }
    flush();
    return out;
}

std::vector<TextDocument> parse_corpus(std::string_view text) {
    std::vector<TextDocument> docs;
    std::string block;
    auto flush = [&] {
        auto sentences = split_sentences(block);
        if (!sentences.empty()) {
            docs.push_back(std::move(sentences));
        }
        block.clear();
    };
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(start, end - start);
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
            flush();
        } else {
            block.append(line);
            block += '\n';
        }
        start = end + 1;
    }
    flush();
    return docs;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error(ErrorKind::input_not_found, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<TextDocument> read_corpus(const std::filesystem::path& path) {
    auto docs = parse_corpus(read_text_file(path));
    if (docs.empty()) {
        throw Error(ErrorKind::invalid_input, "corpus " + path.string() + " has no text");
    }
    return docs;
}

std::vector<EncodedDocument> encode_corpus(const std::vector<TextDocument>& docs, const Vocab& vocab) {
    std::vector<EncodedDocument> out;
    out.reserve(docs.size());
    for (const auto& d : docs) {
        EncodedDocument e;
        for (const auto& s : d) {
            auto ids = vocab.encode(s);
            if (!ids.empty()) {
                e.sentences.push_back(std::move(ids));
            }
        }
        if (!e.sentences.empty()) {
            out.push_back(std::move(e));
        }
    }
    return out;
}

std::vector<NspPair> make_nsp_pairs(std::span<const EncodedDocument> docs, std::size_t count, Rng& rng) {
    std::vector<std::pair<std::size_t, std::size_t>> anchors;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        for (std::size_t s = 0; s + 1 < docs[d].sentences.size(); ++s) {
            anchors.emplace_back(d, s);
        }
    }
    if (anchors.empty()) {
        throw Error(ErrorKind::invalid_input, "make_nsp_pairs: no document has two consecutive sentences");
    }
    if (docs.size() < 2) {
        throw Error(ErrorKind::invalid_input, "make_nsp_pairs: negatives need at least two documents");
    }
    std::vector<NspPair> pairs;
    pairs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto [d, s] = anchors[static_cast<std::size_t>(rng() % anchors.size())];
        NspPair p;
        p.span_a = docs[d].sentences[s];
        if (rng() & 1u) {
            p.label = 1;
            p.span_b = docs[d].sentences[s + 1];
        } else {
            std::size_t other = static_cast<std::size_t>(rng() % (docs.size() - 1));
            if (other >= d) {
                ++other;
            }
            const auto& os = docs[other].sentences;
            p.span_b = os[static_cast<std::size_t>(rng() % os.size())];
            p.label = 0;
        }
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// --- examples and batching ---------------------------------------------------

Example pair_example(std::span<const std::int32_t> a, std::span<const std::int32_t> b, std::size_t max_len) {
    if (max_len < 5) {
        throw Error(ErrorKind::invalid_config, "pair_example: max_len must be at least 5");
    }
    std::size_t la = a.size(), lb = b.size();
    while (la + lb + 3 > max_len) {
        if (la >= lb) {
            --la;
        } else {
            --lb;
        }
    }
    Example ex;
    ex.ids.push_back(kCls);
    ex.ids.insert(ex.ids.end(), a.begin(), a.begin() + static_cast<std::ptrdiff_t>(la));
    ex.ids.push_back(kSep);
    ex.segments.assign(ex.ids.size(), 0);
    ex.ids.insert(ex.ids.end(), b.begin(), b.begin() + static_cast<std::ptrdiff_t>(lb));
    ex.ids.push_back(kSep);
    ex.segments.resize(ex.ids.size(), 1);
    return ex;
}

Example single_example(std::span<const std::int32_t> ids, std::size_t max_len) {
    if (max_len < 3) {
        throw Error(ErrorKind::invalid_config, "single_example: max_len must be at least 3");
    }
    const std::size_t n = std::min(ids.size(), max_len - 2);
    Example ex;
    ex.ids.push_back(kCls);
    ex.ids.insert(ex.ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
    ex.ids.push_back(kSep);
    ex.segments.assign(ex.ids.size(), 0);
    return ex;
}

TokenBatch collate(std::span<const Example> examples) {
    if (examples.empty()) {
        throw Error(ErrorKind::invalid_input, "collate: empty batch");
    }
    TokenBatch b;
    b.batch = examples.size();
    bool any_mlm = false, any_nsp = false, any_cls = false;
    for (const auto& e : examples) {
        b.seq_len = std::max(b.seq_len, e.ids.size());
        any_mlm = any_mlm || !e.mlm_targets.empty();
        any_nsp = any_nsp || e.nsp_label >= 0;
        any_cls = any_cls || e.class_label >= 0;
    }
    const std::size_t n = b.tokens();
    b.input_ids.assign(n, kPad);
    b.segment_ids.assign(n, 0);
    b.attention_mask.assign(n, 0);
    if (any_mlm) {
        b.mlm_targets.assign(n, kNotPredicted);
    }
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        const std::size_t off = i * b.seq_len;
        std::copy(e.ids.begin(), e.ids.end(), b.input_ids.begin() + static_cast<std::ptrdiff_t>(off));
        std::copy(e.segments.begin(), e.segments.end(), b.segment_ids.begin() + static_cast<std::ptrdiff_t>(off));
        std::fill_n(b.attention_mask.begin() + static_cast<std::ptrdiff_t>(off), e.ids.size(), std::uint8_t{1});
        if (any_mlm && !e.mlm_targets.empty()) {
            std::copy(e.mlm_targets.begin(), e.mlm_targets.end(),
                      b.mlm_targets.begin() + static_cast<std::ptrdiff_t>(off));
        }
        if (any_nsp) {
            b.nsp_labels.push_back(e.nsp_label);
        }
        if (any_cls) {
            b.class_labels.push_back(e.class_label);
        }
    }
    return b;
}

// --- classification datasets -------------------------------------------------

ClassificationDataset load_classification_dataset(const std::filesystem::path& path,
                                                  std::vector<std::string> label_names,
                                                  std::uint64_t shuffle_seed) {
    const std::string text = read_text_file(path);
    struct Row {
        std::string text, label;
        std::size_t line;
    };
    std::vector<Row> rows;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) {
            throw Error(ErrorKind::invalid_input,
                        path.string() + ":" + std::to_string(line_no) + ": expected text<TAB>label");
        }
        rows.push_back({line.substr(0, tab), line.substr(tab + 1), line_no});
    }
    if (rows.empty()) {
        throw Error(ErrorKind::invalid_input, "dataset " + path.string() + " is empty");
    }
    if (label_names.empty()) {
        std::set<std::string> seen;
        for (const auto& r : rows) {
            seen.insert(r.label);
        }
        label_names.assign(seen.begin(), seen.end());
    }
    ClassificationDataset ds;
    ds.label_names = std::move(label_names);
    for (const auto& r : rows) {
        auto it = std::find(ds.label_names.begin(), ds.label_names.end(), r.label);
        if (it == ds.label_names.end()) {
            throw Error(ErrorKind::invalid_input,
                        path.string() + ":" + std::to_string(r.line) + ": unknown label '" + r.label + "'");
        }
        ds.examples.push_back({r.text, static_cast<std::int32_t>(it - ds.label_names.begin())});
    }
    if (shuffle_seed != 0) {
        Rng rng = make_rng(shuffle_seed, {0x5348554646ull});
        shuffle_in_place(ds.examples, rng);
    }
    return ds;
}

void write_classification_dataset(const ClassificationDataset& ds, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw Error(ErrorKind::io_error, "cannot write " + path.string());
    }
    for (const auto& e : ds.examples) {
        os << e.text << '\t' << ds.label_names.at(static_cast<std::size_t>(e.label)) << '\n';
    }
}

std::vector<Example> encode_classification(const ClassificationDataset& ds, const Vocab& vocab, std::size_t max_len) {
    std::vector<Example> out;
    out.reserve(ds.size());
    for (const auto& e : ds.examples) {
        Example ex = single_example(vocab.encode(e.text), max_len);
        ex.class_label = e.label;
        out.push_back(std::move(ex));
    }
    return out;
}

// --- synthetic task ----------------------------------------------------------

void SyntheticConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::invalid_config, "synthetic: " + m); };
    if (n_train == 0 || n_test == 0 || n_dev == 0) fail("split sizes must be positive");
    if (n_docs < 2 || sentences_per_doc < 2) fail("need at least two documents of two sentences");
    if (n_words < 4) fail("n_words must be at least 4");
    if (min_words == 0 || max_words < min_words) fail("need 0 < min_words <= max_words");
    if (rule != "order" && rule != "presence") fail("rule must be 'order' or 'presence'");
}

namespace {

std::string random_word(Rng& rng) {
    const std::size_t len = 2 + static_cast<std::size_t>(rng() % 3);
    std::string w;
    for (std::size_t i = 0; i < len; ++i) {
        w += static_cast<char>('a' + rng() % 16);
    }
    return w;
}

struct Chain {
    std::vector<std::string> words;
    std::vector<std::array<std::size_t, 3>> next;

    std::vector<std::string> sentence(std::size_t len, Rng& rng) const {
        std::vector<std::string> out;
        std::size_t cur = static_cast<std::size_t>(rng() % words.size());
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (std::size_t i = 0; i < len; ++i) {
            out.push_back(words[cur]);
            cur = unit(rng) < 0.8 ? next[cur][rng() % 3] : static_cast<std::size_t>(rng() % words.size());
        }
        return out;
    }
};

std::string join(const std::vector<std::string>& ws) {
    std::string s;
    for (std::size_t i = 0; i < ws.size(); ++i) {
        if (i) {
            s += ' ';
        }
        s += ws[i];
    }
    return s;
}

void insert_at_random(std::vector<std::string>& ws, const std::string& w, Rng& rng) {
    const auto pos = static_cast<std::ptrdiff_t>(rng() % (ws.size() + 1));
    ws.insert(ws.begin() + pos, w);
}

} // namespace

SyntheticTask make_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    Rng rng = make_rng(cfg.seed, {0x53594e5448ull});
    SyntheticTask task;
    std::set<std::string> used;
    while (task.words.size() < cfg.n_words + 2) {
        std::string w = random_word(rng);
        if (used.insert(w).second) {
            task.words.push_back(std::move(w));
        }
    }
    task.trigger_a = task.words[cfg.n_words];
    task.trigger_b = task.words[cfg.n_words + 1];
    task.words.resize(cfg.n_words);

    Chain chain;
    chain.words = task.words;
    for (std::size_t i = 0; i < chain.words.size(); ++i) {
        chain.next.push_back({static_cast<std::size_t>(rng() % cfg.n_words), static_cast<std::size_t>(rng() % cfg.n_words),
                              static_cast<std::size_t>(rng() % cfg.n_words)});
    }
    auto length = [&] { return cfg.min_words + static_cast<std::size_t>(rng() % (cfg.max_words - cfg.min_words + 1)); };

    // Labeled examples: class 1 iff trigger A precedes trigger B ("order") or
    // iff trigger A is the inserted trigger ("presence").
    auto labeled = [&](std::int32_t label) {
        auto ws = chain.sentence(length(), rng);
        if (cfg.rule == "order") {
            const std::string& first = label == 1 ? task.trigger_a : task.trigger_b;
            const std::string& second = label == 1 ? task.trigger_b : task.trigger_a;
            const auto i = static_cast<std::ptrdiff_t>(rng() % (ws.size() + 1));
            ws.insert(ws.begin() + i, first);
            const auto j = i + 1 + static_cast<std::ptrdiff_t>(rng() % (ws.size() - static_cast<std::size_t>(i)));
            ws.insert(ws.begin() + j, second);
        } else {
            insert_at_random(ws, label == 1 ? task.trigger_a : task.trigger_b, rng);
        }
        return LabeledText{join(ws), label};
    };
    auto split = [&](std::size_t n) {
        ClassificationDataset ds;
        ds.label_names = {"0", "1"};
        for (std::size_t i = 0; i < n; ++i) {
            ds.examples.push_back(labeled(static_cast<std::int32_t>(rng() & 1u)));
        }
        return ds;
    };
    task.train = split(cfg.n_train);
    task.dev = split(cfg.n_dev);
    task.test = split(cfg.n_test);

    // Unlabeled corpus from the same chain; half the sentences carry both
    // triggers in random order so pre-training sees them in context.
    for (std::size_t d = 0; d < cfg.n_docs; ++d) {
        TextDocument doc;
        for (std::size_t s = 0; s < cfg.sentences_per_doc; ++s) {
            auto ws = chain.sentence(length(), rng);
            if (rng() & 1u) {
                insert_at_random(ws, task.trigger_a, rng);
                insert_at_random(ws, task.trigger_b, rng);
            }
            doc.push_back(join(ws));
        }
        task.corpus.push_back(std::move(doc));
    }
    return task;
}

void write_synthetic(const SyntheticTask& task, const SyntheticConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "corpus.txt", std::ios::binary);
        if (!os) {
            throw Error(ErrorKind::io_error, "cannot write " + (dir / "corpus.txt").string());
        }
        for (std::size_t d = 0; d < task.corpus.size(); ++d) {
            if (d) {
                os << '\n';
            }
            for (const auto& s : task.corpus[d]) {
                os << s << '\n';
            }
        }
    }
    write_classification_dataset(task.train, dir / "train.tsv");
    write_classification_dataset(task.dev, dir / "dev.tsv");
    write_classification_dataset(task.test, dir / "test.tsv");
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["n_train"] = cfg.n_train;
    j["n_dev"] = cfg.n_dev;
    j["n_test"] = cfg.n_test;
    j["n_docs"] = cfg.n_docs;
    j["sentences_per_doc"] = cfg.sentences_per_doc;
    j["n_words"] = cfg.n_words;
    j["min_words"] = cfg.min_words;
    j["max_words"] = cfg.max_words;
    j["rule"] = cfg.rule;
    j["trigger_a"] = task.trigger_a;
    j["trigger_b"] = task.trigger_b;
    std::ofstream os(dir / "synthetic.json", std::ios::binary);
    os << j.dump(2) << '\n';
}

} // namespace alum
