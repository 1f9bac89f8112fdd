// SPDX-License-Identifier: Apache-2.0
//
// Minimal byte-pair-encoding vocabulary over UTF-8 code points.
//
// Lines are pre-split before every ASCII space (" word" chunks, GPT-2 style)
// and merges never cross a chunk boundary, so decoding is plain
// concatenation and any line made of known characters round-trips exactly.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace alum {

enum SpecialToken : std::int32_t { kPad = 0, kMask = 1, kCls = 2, kSep = 3, kUnk = 4 };
inline constexpr std::size_t kNumSpecials = 5;
inline constexpr std::string_view kSpecialNames[kNumSpecials] = {"[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]"};

/// Splits into UTF-8 code points (invalid bytes become single-byte symbols).
std::vector<std::string> utf8_symbols(std::string_view text);
/// Splits before every ASCII space.
std::vector<std::string_view> pretokenize(std::string_view line);

class Vocab {
public:
    using Merge = std::pair<std::string, std::string>;

    Vocab() = default;
    /// Ids: specials, then alphabet in the given order, then one per merge.
    Vocab(std::vector<std::string> alphabet, std::vector<Merge> merges);

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& alphabet() const noexcept { return alphabet_; }
    const std::vector<Merge>& merges() const noexcept { return merges_; }
    const std::string& token(std::int32_t id) const;
    /// Looks up a non-special token string.
    std::optional<std::int32_t> id_of(std::string_view token) const;
    static bool is_special(std::int32_t id) noexcept { return id >= 0 && id < static_cast<std::int32_t>(kNumSpecials); }

    std::vector<std::int32_t> encode(std::string_view text) const;
    /// Concatenates token strings; PAD is dropped, other specials print by name.
    std::string decode(std::span<const std::int32_t> ids) const;
    /// True when every code point of `text` is in the alphabet.
    bool covers(std::string_view text) const;

    std::string serialize() const;
    static Vocab parse(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    bool operator==(const Vocab& o) const { return alphabet_ == o.alphabet_ && merges_ == o.merges_; }

private:
    std::vector<std::string> alphabet_;
    std::vector<Merge> merges_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> ids_;
    std::unordered_map<std::string, std::size_t> merge_rank_;
};

/// Learns merges until the vocabulary holds target_size entries (specials
/// included) or no adjacent pair is left. Ties between equally frequent pairs
/// go to the lexicographically smallest (left, right).
Vocab train_bpe(std::span<const std::string> lines, std::size_t target_size);

} // namespace alum
