// SPDX-License-Identifier: Apache-2.0
//
// Corpus ingestion, MLM corruption with the progressive mask-rate schedule,
// NSP pair construction, batching and classification datasets.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "alum/batch.hpp"
#include "alum/tensor.hpp"
#include "alum/vocab.hpp"

namespace alum {

// --- mask-rate schedule ------------------------------------------------------

/// Step function: start_rate for the first phase_fraction of training, then
/// +increment per phase until end_rate.
struct MaskSchedule {
    double start_rate = 0.05;
    double end_rate = 0.25;
    double increment = 0.05;
    double phase_fraction = 0.20;

    double rate(double progress) const;
};

/// Default schedule: 5% -> 25% in 5% steps, one step per 20% of training.
double mask_rate(double progress);

// --- corruption --------------------------------------------------------------

struct Corruption {
    std::vector<std::int32_t> input_ids;
    std::vector<std::int32_t> mlm_targets; ///< original id where selected, else kNotPredicted
};

/// Selects each non-special token with probability `rate`; selected tokens
/// become [MASK] (80%), stay unchanged (10%) or become a uniformly drawn
/// non-special token (10%).
Corruption corrupt_mlm(std::span<const std::int32_t> seq, double rate, std::size_t vocab_size, Rng& rng);

// --- corpus and NSP ----------------------------------------------------------

/// Plain text documents; each document is its list of sentences.
using TextDocument = std::vector<std::string>;

/// Splits on newlines and on sentence-final '.', '!' or '?' followed by a space.
std::vector<std::string> split_sentences(std::string_view text);
/// Blank lines separate documents.
std::vector<TextDocument> parse_corpus(std::string_view text);
std::vector<TextDocument> read_corpus(const std::filesystem::path& path);

struct EncodedDocument {
    std::vector<std::vector<std::int32_t>> sentences;
};

std::vector<EncodedDocument> encode_corpus(const std::vector<TextDocument>& docs, const Vocab& vocab);

/// Label 1: span_b follows span_a in its document; label 0: span_b comes from a
/// different document.
struct NspPair {
    std::vector<std::int32_t> span_a;
    std::vector<std::int32_t> span_b;
    std::int32_t label = 0;
};

/// Draws `count` pairs, positive and negative with probability 1/2 each.
/// Throws when no document has two sentences or there is only one document.
std::vector<NspPair> make_nsp_pairs(std::span<const EncodedDocument> docs, std::size_t count, Rng& rng);

// --- examples and batching ---------------------------------------------------

struct Example {
    std::vector<std::int32_t> ids;
    std::vector<std::int32_t> segments;
    std::vector<std::int32_t> mlm_targets; ///< empty when not corrupted
    std::int32_t nsp_label = -1;
    std::int32_t class_label = -1;
};

/// [CLS] a [SEP] b [SEP] with segment 0 up to and including the first [SEP].
/// The longer span is trimmed from the end until the result fits max_len.
Example pair_example(std::span<const std::int32_t> a, std::span<const std::int32_t> b, std::size_t max_len);
/// [CLS] ids [SEP], trimmed to max_len.
Example single_example(std::span<const std::int32_t> ids, std::size_t max_len);

/// Pads to the longest example; attention_mask marks real tokens.
TokenBatch collate(std::span<const Example> examples);

// --- classification datasets -------------------------------------------------

struct LabeledText {
    std::string text;
    std::int32_t label = 0;
};

struct ClassificationDataset {
    std::vector<std::string> label_names;
    std::vector<LabeledText> examples;

    std::size_t size() const noexcept { return examples.size(); }
};

/// Tab-separated "text<TAB>label" lines. With a non-empty `label_names` any
/// other label is rejected with its line number; otherwise the sorted set of
/// labels seen is used. A non-zero shuffle_seed permutes examples
/// deterministically.
ClassificationDataset load_classification_dataset(const std::filesystem::path& path,
                                                  std::vector<std::string> label_names = {},
                                                  std::uint64_t shuffle_seed = 0);
void write_classification_dataset(const ClassificationDataset& ds, const std::filesystem::path& path);

/// Fisher-Yates with a portable index draw.
template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

std::vector<Example> encode_classification(const ClassificationDataset& ds, const Vocab& vocab, std::size_t max_len);

// --- synthetic task ----------------------------------------------------------

/// Sequences of pseudo-words from a sparse Markov chain. Each labeled example
/// carries two trigger words; with rule "order" the class is whether trigger
/// A precedes trigger B, with rule "presence" only one trigger is inserted and
/// the class says which.
struct SyntheticConfig {
    std::uint64_t seed = 7;
    std::size_t n_train = 5000;
    std::size_t n_dev = 500;
    std::size_t n_test = 1000;
    std::size_t n_docs = 600;
    std::size_t sentences_per_doc = 8;
    std::size_t n_words = 24;
    std::size_t min_words = 6;
    std::size_t max_words = 12;
    std::string rule = "order";

    void validate() const;
};

struct SyntheticTask {
    std::vector<TextDocument> corpus;
    ClassificationDataset train;
    ClassificationDataset dev;
    ClassificationDataset test;
    std::vector<std::string> words;
    std::string trigger_a;
    std::string trigger_b;
};

SyntheticTask make_synthetic(const SyntheticConfig& cfg);

/// corpus.txt, train.tsv, dev.tsv, test.tsv and synthetic.json (generator
/// parameters) under `dir`.
void write_synthetic(const SyntheticTask& task, const SyntheticConfig& cfg, const std::filesystem::path& dir);

std::string read_text_file(const std::filesystem::path& path);

} // namespace alum
