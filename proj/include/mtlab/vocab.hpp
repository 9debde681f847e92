#pragma once

// Shared vocabulary across all languages: special tokens, per-language <2xx>
// target tags, whitespace word-level tokenization, and a minimal BPE for
// external text. Vocabularies are immutable after training; encode/decode are
// pure.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlab/rng.hpp"
#include "mtlab/text.hpp"

namespace mtlab::vocab {

enum class Mode { word, bpe };

inline std::string to_string(Mode m) { return m == Mode::word ? "word" : "bpe"; }
inline Mode mode_from_string(const std::string& s) {
    if (s == "word") return Mode::word;
    if (s == "bpe") return Mode::bpe;
    throw std::invalid_argument("unknown vocab mode: " + s);
}

constexpr const char* kEndOfWord = "</w>";

struct BPEModel {
    std::vector<std::pair<std::string, std::string>> merges;

    // Lower rank = earlier merge = higher priority.
    std::map<std::pair<std::string, std::string>, int> ranks;

    void rebuild_ranks() {
        ranks.clear();
        for (std::size_t i = 0; i < merges.size(); ++i) ranks[merges[i]] = static_cast<int>(i);
    }

    // Segments one word into BPE symbols. The last character carries the
    // end-of-word marker.
    std::vector<std::string> segment(const std::string& word) const {
        std::vector<std::string> syms = utf8_chars(word);
        if (syms.empty()) return syms;
        syms.back() += kEndOfWord;
        while (syms.size() > 1) {
            int best_rank = std::numeric_limits<int>::max();
            std::size_t best_pos = 0;
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                auto it = ranks.find({syms[i], syms[i + 1]});
                if (it != ranks.end() && it->second < best_rank) {
                    best_rank = it->second;
                    best_pos = i;
                }
            }
            if (best_rank == std::numeric_limits<int>::max()) break;
            syms[best_pos] += syms[best_pos + 1];
            syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
        }
        return syms;
    }

    std::string serialize() const {
        std::string out = "mtlab-bpe\tv1\n";
        for (const auto& [a, b] : merges) out += a + "\t" + b + "\n";
        return out;
    }

    static BPEModel deserialize(const std::string& content) {
        BPEModel model;
        const auto lines = split_on(content, '\n');
        if (lines.empty() || lines[0].rfind("mtlab-bpe\tv1", 0) != 0)
            throw std::invalid_argument("bad BPE merges file header");
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            const auto parts = split_on(lines[i], '\t');
            if (parts.size() != 2) throw std::invalid_argument("bad BPE merge line: " + lines[i]);
            model.merges.emplace_back(parts[0], parts[1]);
        }
        model.rebuild_ranks();
        return model;
    }
};

class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;
    static constexpr int kMask = 3;

    Vocabulary() = default;

    Vocabulary(Mode mode, std::vector<std::string> languages, std::vector<std::string> text_tokens)
        : mode_(mode), languages_(std::move(languages)) {
        std::sort(languages_.begin(), languages_.end());
        add("<pad>");
        add("<eos>");
        add("<unk>");
        add("<mask>");
        for (const auto& lang : languages_) add("<2" + lang + ">");
        num_specials_ = static_cast<int>(tokens_.size());
        for (auto& t : text_tokens) add(std::move(t));
    }

    Mode mode() const { return mode_; }
    int size() const { return static_cast<int>(tokens_.size()); }
    int num_specials() const { return num_specials_; }
    bool is_special(int id) const { return id >= 0 && id < num_specials_; }
    const std::vector<std::string>& languages() const { return languages_; }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw std::out_of_range("token id out of range: " + std::to_string(id));
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::optional<int> id_of(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    int tag_id(const std::string& lang) const {
        auto id = id_of("<2" + lang + ">");
        if (!id) throw std::invalid_argument("no <2xx> tag for language: " + lang);
        return *id;
    }

    std::string serialize() const {
        std::string out = "mtlab-vocab\tv1\t" + to_string(mode_) + "\n";
        for (const auto& t : tokens_) out += t + "\n";
        return out;
    }

    std::uint64_t content_hash() const { return fnv1a(serialize()); }

    static Vocabulary deserialize(const std::string& content) {
        const auto lines = split_on(content, '\n');
        if (lines.empty()) throw std::invalid_argument("empty vocabulary file");
        const auto header = split_on(lines[0], '\t');
        if (header.size() != 3 || header[0] != "mtlab-vocab" || header[1] != "v1")
            throw std::invalid_argument("bad vocabulary file header");
        Vocabulary v;
        v.mode_ = mode_from_string(header[2]);
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty() && i + 1 == lines.size()) break;  // trailing newline
            v.add(lines[i]);
        }
        if (v.size() < 4 || v.token(kPad) != "<pad>" || v.token(kEos) != "<eos>" ||
            v.token(kUnk) != "<unk>" || v.token(kMask) != "<mask>")
            throw std::invalid_argument("vocabulary file missing special tokens");
        for (int id = 4; id < v.size(); ++id) {
            const auto& t = v.token(id);
            if (t.rfind("<2", 0) == 0 && t.back() == '>')
                v.languages_.push_back(t.substr(2, t.size() - 3));
            else
                break;
        }
        v.num_specials_ = 4 + static_cast<int>(v.languages_.size());
        return v;
    }

  private:
    void add(std::string token) {
        index_.emplace(token, static_cast<int>(tokens_.size()));
        tokens_.push_back(std::move(token));
    }

    Mode mode_ = Mode::word;
    std::vector<std::string> languages_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    int num_specials_ = 4;
};

// Vocabulary plus the BPE model when applicable.
class Tokenizer {
  public:
    Tokenizer() = default;
    Tokenizer(Vocabulary vocab, BPEModel bpe = {}) : vocab_(std::move(vocab)), bpe_(std::move(bpe)) {
        bpe_.rebuild_ranks();
    }

    const Vocabulary& vocab() const { return vocab_; }
    const BPEModel& bpe() const { return bpe_; }

    // Text tokens only: no tag, no EOS. Used by the MASS objective which
    // masks raw token sequences.
    std::vector<int> encode_text(const std::string& text) const {
        std::vector<int> ids;
        for (const auto& word : split_ws(text)) {
            if (vocab_.mode() == Mode::word) {
                auto id = vocab_.id_of(word);
                ids.push_back(id ? *id : Vocabulary::kUnk);
            } else {
                for (const auto& piece : bpe_.segment(word)) {
                    if (auto id = vocab_.id_of(piece)) {
                        ids.push_back(*id);
                        continue;
                    }
                    // Character fallback, then UNK for unseen characters. The
                    // end-of-word marker stays attached to the last character.
                    std::string body = piece;
                    const std::string marker = kEndOfWord;
                    bool has_marker = body.size() >= marker.size() &&
                                      body.compare(body.size() - marker.size(), marker.size(), marker) == 0;
                    if (has_marker) body.resize(body.size() - marker.size());
                    auto chars = utf8_chars(body);
                    if (has_marker && !chars.empty()) chars.back() += marker;
                    for (const auto& ch : chars) {
                        auto cid = vocab_.id_of(ch);
                        ids.push_back(cid ? *cid : Vocabulary::kUnk);
                    }
                }
            }
        }
        return ids;
    }

    // Full encoder input: [<2tgt>] + subword ids + [EOS].
    std::vector<int> encode(const std::string& text, const std::optional<std::string>& target_lang) const {
        std::vector<int> ids;
        if (target_lang) ids.push_back(vocab_.tag_id(*target_lang));
        auto body = encode_text(text);
        ids.insert(ids.end(), body.begin(), body.end());
        ids.push_back(Vocabulary::kEos);
        return ids;
    }

    // Drops specials and joins subwords.
    std::string decode(const std::vector<int>& ids) const {
        if (vocab_.mode() == Mode::word) {
            std::vector<std::string> words;
            for (int id : ids)
                if (!vocab_.is_special(id)) words.push_back(vocab_.token(id));
            return join(words);
        }
        std::string glued;
        for (int id : ids)
            if (!vocab_.is_special(id)) glued += vocab_.token(id);
        // Replace end-of-word markers with spaces.
        std::string out;
        std::size_t i = 0;
        const std::string marker = kEndOfWord;
        while (i < glued.size()) {
            if (glued.compare(i, marker.size(), marker) == 0) {
                out += ' ';
                i += marker.size();
            } else {
                out += glued[i++];
            }
        }
        return trim(out);
    }

    void save(const std::string& vocab_path, const std::string& merges_path = "") const {
        write_file(vocab_path, vocab_.serialize());
        if (vocab_.mode() == Mode::bpe) {
            if (merges_path.empty()) throw std::invalid_argument("bpe vocabulary requires a merges path");
            write_file(merges_path, bpe_.serialize());
        }
    }

    static Tokenizer load(const std::string& vocab_path, const std::string& merges_path = "") {
        Vocabulary v = Vocabulary::deserialize(read_file(vocab_path));
        BPEModel bpe;
        if (v.mode() == Mode::bpe) bpe = BPEModel::deserialize(read_file(merges_path));
        return Tokenizer(std::move(v), std::move(bpe));
    }

  private:
    Vocabulary vocab_;
    BPEModel bpe_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Counts the characters a symbol spans in the original text, ignoring the
// end-of-word marker so a cap applies uniformly to word-final pieces.
inline int piece_char_length(const std::string& sym) {
    std::string_view v(sym);
    const std::string_view marker(kEndOfWord);
    if (v.size() >= marker.size() && v.substr(v.size() - marker.size()) == marker)
        v.remove_suffix(marker.size());
    int n = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if ((static_cast<unsigned char>(v[i]) & 0xC0) != 0x80) ++n;
    return n;
}

// `max_piece_chars` (0 = unlimited) caps how many text characters a merged
// BPE piece may span, like SentencePiece's max piece length. Small caps keep
// long words segmented into reusable sub-pieces instead of whole-word tokens.
inline Tokenizer train_vocab(const std::vector<std::string>& lines, const std::vector<std::string>& languages,
                             int size, Mode mode, int max_piece_chars = 0) {
    const int num_specials = 4 + static_cast<int>(languages.size());
    if (size <= num_specials)
        throw std::invalid_argument("vocabulary size must exceed the number of special tokens");

    std::map<std::string, std::int64_t> word_counts;  // ordered for determinism
    for (const auto& line : lines)
        for (const auto& w : split_ws(line)) ++word_counts[w];
    if (word_counts.empty()) throw std::invalid_argument("cannot train a vocabulary on an empty corpus");

    if (mode == Mode::word) {
        std::vector<std::pair<std::string, std::int64_t>> sorted(word_counts.begin(), word_counts.end());
        std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        std::vector<std::string> tokens;
        const int budget = size - num_specials;
        for (const auto& [w, c] : sorted) {
            if (static_cast<int>(tokens.size()) >= budget) break;
            tokens.push_back(w);
        }
        return Tokenizer(Vocabulary(mode, languages, std::move(tokens)));
    }

    // BPE: start from single characters (last carries the end-of-word marker)
    // and greedily merge the highest-count adjacent pair, ties broken
    // lexicographically, until the vocabulary budget is reached.
    std::vector<std::pair<std::vector<std::string>, std::int64_t>> words;
    std::map<std::string, std::int64_t> symbol_counts;
    for (const auto& [w, c] : word_counts) {
        auto syms = utf8_chars(w);
        if (syms.empty()) continue;
        syms.back() += kEndOfWord;
        for (const auto& s : syms) symbol_counts[s] += c;
        words.emplace_back(std::move(syms), c);
    }

    std::vector<std::string> tokens;  // final text tokens, base chars first
    for (const auto& [s, c] : symbol_counts) tokens.push_back(s);

    BPEModel bpe;
    while (static_cast<int>(tokens.size()) + num_specials < size) {
        std::map<std::pair<std::string, std::string>, std::int64_t> pair_counts;
        for (const auto& [syms, c] : words)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) pair_counts[{syms[i], syms[i + 1]}] += c;
        if (pair_counts.empty()) break;
        // Max count; map iteration order gives the lexicographically smallest
        // pair among ties because we only replace on strictly greater counts.
        auto best = pair_counts.end();
        for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
            if (max_piece_chars > 0 &&
                piece_char_length(it->first.first) + piece_char_length(it->first.second) > max_piece_chars)
                continue;
            if (best == pair_counts.end() || it->second > best->second) best = it;
        }
        if (best == pair_counts.end() || best->second < 2) break;  // nothing left worth merging
        const auto [a, b] = best->first;
        bpe.merges.emplace_back(a, b);
        tokens.push_back(a + b);
        for (auto& [syms, c] : words) {
            for (std::size_t i = 0; i + 1 < syms.size();) {
                if (syms[i] == a && syms[i + 1] == b) {
                    syms[i] += syms[i + 1];
                    syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(i) + 1);
                } else {
                    ++i;
                }
            }
        }
    }
    bpe.rebuild_ranks();
    return Tokenizer(Vocabulary(mode, languages, std::move(tokens)), std::move(bpe));
}

}  // namespace mtlab::vocab
