// SPDX-License-Identifier: Apache-2.0
#include "alum/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "alum/error.hpp"

namespace alum {

namespace {

constexpr std::string_view kHeader = "alum-vocab 1";

std::string merge_key(const std::string& a, const std::string& b) {
    std::string k;
    k.reserve(a.size() + b.size() + 1);
    k += a;
    k += '\x1f';
    k += b;
    return k;
}

std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case ' ': out += "\\s"; break;
        case '\t': out += "\\t"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        default: out += c;
        }
    }
    return out;
}

std::string unescape(std::string_view s, std::size_t line_no) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out += s[i];
            continue;
        }
        if (++i >= s.size()) {
            throw Error(ErrorKind::invalid_input, "vocab: dangling escape on line " + std::to_string(line_no));
        }
        switch (s[i]) {
        case '\\': out += '\\'; break;
        case 's': out += ' '; break;
        case 't': out += '\t'; break;
        case 'n': out += '\n'; break;
        case 'r': out += '\r'; break;
        default:
            throw Error(ErrorKind::invalid_input, "vocab: unknown escape on line " + std::to_string(line_no));
        }
    }
    return out;
}

/// Merges every left-to-right occurrence of (a, b) in place.
void apply_merge(std::vector<std::string>& syms, const std::string& a, const std::string& b) {
    std::vector<std::string> out;
    out.reserve(syms.size());
    for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
            out.push_back(a + b);
            ++i;
        } else {
            out.push_back(std::move(syms[i]));
        }
    }
    syms = std::move(out);
}

bool is_special_name(std::string_view s) {
    return std::find(std::begin(kSpecialNames), std::end(kSpecialNames), s) != std::end(kSpecialNames);
}

} // namespace

std::vector<std::string> utf8_symbols(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (c >= 0xF0 && c < 0xF8) {
            len = 4;
        } else if (c >= 0xE0) {
            len = 3;
        } else if (c >= 0xC0) {
            len = 2;
        }
        if (c >= 0xF8 || i + len > text.size()) {
            len = 1;
        }
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
                len = 1;
                break;
            }
        }
        out.emplace_back(text.substr(i, len));
        i += len;
    }
    return out;
}

std::vector<std::string_view> pretokenize(std::string_view line) {
    std::vector<std::string_view> chunks;
    std::size_t start = 0;
    for (std::size_t i = 1; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ' ') {
            if (i > start) {
                chunks.push_back(line.substr(start, i - start));
            }
            start = i;
        }
    }
    return chunks;
}

Vocab::Vocab(std::vector<std::string> alphabet, std::vector<Merge> merges)
    : alphabet_(std::move(alphabet)), merges_(std::move(merges)) {
    for (auto name : kSpecialNames) {
        tokens_.emplace_back(name);
    }
    auto add = [this](const std::string& t) {
        if (is_special_name(t)) {
            throw Error(ErrorKind::invalid_input, "vocab: token '" + t + "' collides with a special token");
        }
        if (!ids_.emplace(t, static_cast<std::int32_t>(tokens_.size())).second) {
            throw Error(ErrorKind::invalid_input, "vocab: duplicate token '" + escape(t) + "'");
        }
        tokens_.push_back(t);
    };
    for (const auto& a : alphabet_) {
        add(a);
    }
    for (std::size_t r = 0; r < merges_.size(); ++r) {
        const auto& [a, b] = merges_[r];
        if (!ids_.count(a) || !ids_.count(b)) {
            throw Error(ErrorKind::invalid_input, "vocab: merge " + std::to_string(r) + " uses unknown parts");
        }
        add(a + b);
        merge_rank_.emplace(merge_key(a, b), r);
    }
}

const std::string& Vocab::token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw Error(ErrorKind::invalid_input, "vocab: id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<std::int32_t> Vocab::id_of(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::vector<std::int32_t> Vocab::encode(std::string_view text) const {
    std::vector<std::int32_t> ids;
    for (auto chunk : pretokenize(text)) {
        std::vector<std::string> syms = utf8_symbols(chunk);
        while (syms.size() > 1) {
            std::size_t best = std::numeric_limits<std::size_t>::max();
            std::size_t best_i = 0;
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                auto it = merge_rank_.find(merge_key(syms[i], syms[i + 1]));
                if (it != merge_rank_.end() && it->second < best) {
                    best = it->second;
                    best_i = i;
                }
            }
            if (best == std::numeric_limits<std::size_t>::max()) {
                break;
            }
            const Merge m = {syms[best_i], syms[best_i + 1]};
            apply_merge(syms, m.first, m.second);
        }
        for (const auto& s : syms) {
            auto it = ids_.find(s);
            ids.push_back(it == ids_.end() ? kUnk : it->second);
        }
    }
    return ids;
}

std::string Vocab::decode(std::span<const std::int32_t> ids) const {
    std::string out;
    for (auto id : ids) {
        if (id == kPad) {
            continue;
        }
        out += token(id);
    }
    return out;
}

bool Vocab::covers(std::string_view text) const {
    for (const auto& s : utf8_symbols(text)) {
        if (!ids_.count(s)) {
            return false;
        }
    }
    return true;
}

std::string Vocab::serialize() const {
    std::ostringstream os;
    os << kHeader << '\n';
    for (auto name : kSpecialNames) {
        os << "special " << name << '\n';
    }
    for (const auto& a : alphabet_) {
        os << "char " << escape(a) << '\n';
    }
    for (const auto& [a, b] : merges_) {
        os << "merge " << escape(a) << ' ' << escape(b) << '\n';
    }
    return os.str();
}

Vocab Vocab::parse(std::string_view text) {
    std::istringstream is{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> alphabet;
    std::vector<Merge> merges;
    std::size_t specials = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line_no == 1) {
            if (line != kHeader) {
                throw Error(ErrorKind::invalid_input, "vocab: missing '" + std::string(kHeader) + "' header");
            }
            continue;
        }
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string kind, a, b;
        ls >> kind >> a;
        if (kind == "special") {
            if (specials >= kNumSpecials || a != kSpecialNames[specials]) {
                throw Error(ErrorKind::invalid_input, "vocab: unexpected special on line " + std::to_string(line_no));
            }
            ++specials;
        } else if (kind == "char") {
            alphabet.push_back(unescape(a, line_no));
        } else if (kind == "merge") {
            ls >> b;
            if (b.empty()) {
                throw Error(ErrorKind::invalid_input, "vocab: merge needs two parts on line " + std::to_string(line_no));
            }
            merges.emplace_back(unescape(a, line_no), unescape(b, line_no));
        } else {
            throw Error(ErrorKind::invalid_input, "vocab: unknown entry '" + kind + "' on line " + std::to_string(line_no));
        }
    }
    if (specials != kNumSpecials) {
        throw Error(ErrorKind::invalid_input, "vocab: expected " + std::to_string(kNumSpecials) + " specials");
    }
    return Vocab(std::move(alphabet), std::move(merges));
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw Error(ErrorKind::io_error, "vocab: cannot write " + path.string());
    }
    os << serialize();
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error(ErrorKind::input_not_found, "vocab: cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

Vocab train_bpe(std::span<const std::string> lines, std::size_t target_size) {
    if (lines.empty()) {
        throw Error(ErrorKind::invalid_input, "train_bpe: corpus is empty");
    }
    std::map<std::string, std::size_t> chunk_counts;
    std::set<std::string> alphabet_set;
    for (const auto& line : lines) {
        for (auto chunk : pretokenize(line)) {
            ++chunk_counts[std::string(chunk)];
            for (auto& s : utf8_symbols(chunk)) {
                alphabet_set.insert(std::move(s));
            }
        }
    }
    if (alphabet_set.empty()) {
        throw Error(ErrorKind::invalid_input, "train_bpe: corpus has no characters");
    }
    std::vector<std::string> alphabet(alphabet_set.begin(), alphabet_set.end());
    const std::size_t base = kNumSpecials + alphabet.size();
    if (target_size < base) {
        throw Error(ErrorKind::invalid_config, "train_bpe: target size " + std::to_string(target_size) +
                                                   " is below specials + alphabet (" + std::to_string(base) + ")");
    }

    struct Word {
        std::vector<std::string> syms;
        std::size_t count;
    };
    std::vector<Word> words;
    words.reserve(chunk_counts.size());
    for (const auto& [chunk, count] : chunk_counts) {
        words.push_back({utf8_symbols(chunk), count});
    }

    std::vector<Vocab::Merge> merges;
    std::set<std::string> known(alphabet.begin(), alphabet.end());
    while (base + merges.size() < target_size) {
        std::map<Vocab::Merge, std::size_t> pair_counts;
        for (const auto& w : words) {
            for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
                pair_counts[{w.syms[i], w.syms[i + 1]}] += w.count;
            }
        }
        const Vocab::Merge* best = nullptr;
        std::size_t best_count = 0;
        // std::map iterates pairs in lexicographic order, so a strict '>'
        // keeps the smallest pair among equal counts.
        for (const auto& [pair, count] : pair_counts) {
            const std::string joined = pair.first + pair.second;
            if (count > best_count && !is_special_name(joined) && !known.count(joined)) {
                best = &pair;
                best_count = count;
            }
        }
        if (best == nullptr) {
            break;
        }
        const Vocab::Merge m = *best;
        for (auto& w : words) {
            apply_merge(w.syms, m.first, m.second);
        }
        known.insert(m.first + m.second);
        merges.push_back(m);
    }
    return Vocab(std::move(alphabet), std::move(merges));
}

} // namespace alum
