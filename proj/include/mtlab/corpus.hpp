#pragma once

// Synthetic multilingual corpus generation with exact ground-truth
// translations, plus ingestion of external plain-text corpora.
//
// Every synthetic language is a deterministic cipher over a shared
// "interlingua" of concept ids: a bijective lexicon maps concepts to surface
// words, a word-order transform permutes the sentence, and an optional suffix
// is appended to every word. Because each step is invertible, any sentence
// can be translated exactly between any two languages.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlab/rng.hpp"
#include "mtlab/text.hpp"

namespace mtlab::corpus {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Domain and language specifications
// ---------------------------------------------------------------------------

struct DomainSpec {
    std::string id;
    int concept_vocab_size = 0;
    int length_min = 0;
    int length_max = 0;
    double zipf_exponent = 0.0;

    void validate() const {
        if (concept_vocab_size <= 0) throw std::invalid_argument("domain " + id + ": concept_vocab_size must be positive");
        if (length_min <= 0 || length_max <= 0) throw std::invalid_argument("domain " + id + ": lengths must be positive");
        if (length_min > length_max) throw std::invalid_argument("domain " + id + ": length_min > length_max");
        if (concept_vocab_size < length_max) throw std::invalid_argument("domain " + id + ": concept_vocab_size < length_max");
        if (zipf_exponent < 0.0) throw std::invalid_argument("domain " + id + ": zipf_exponent must be nonnegative");
    }
};

// Built-in domains: a broad "news" analog and a narrow, skewed "bible" analog.
inline DomainSpec news_domain(int vocab = 100) { return {"news", vocab, 6, 16, 1.1}; }
inline DomainSpec bible_domain(int vocab = 50) { return {"bible", vocab, 4, 10, 1.6}; }
// Small / short-sentence domain sized so desk-scale models train in minutes.
inline DomainSpec desk_domain(int vocab = 60) { return {"desk", vocab, 3, 8, 1.2}; }

enum class OrderTransform { identity, reverse, swap_adjacent, rotate_k };

inline std::string to_string(OrderTransform t) {
    switch (t) {
        case OrderTransform::identity: return "identity";
        case OrderTransform::reverse: return "reverse";
        case OrderTransform::swap_adjacent: return "swap_adjacent";
        case OrderTransform::rotate_k: return "rotate_k";
    }
    return "identity";
}

inline OrderTransform order_transform_from_string(const std::string& s) {
    if (s == "identity") return OrderTransform::identity;
    if (s == "reverse") return OrderTransform::reverse;
    if (s == "swap_adjacent") return OrderTransform::swap_adjacent;
    if (s == "rotate_k") return OrderTransform::rotate_k;
    throw std::invalid_argument("unknown order transform: " + s);
}

// An alphabet is a disjoint consonant/vowel character set used to build
// pronounceable surface words. Disjointness across alphabets is what makes
// character-level LangID learnable.
struct Alphabet {
    std::vector<std::string> consonants;  // UTF-8 code points
    std::vector<std::string> vowels;
};

inline const Alphabet& alphabet_by_id(const std::string& id) {
    static const std::map<std::string, Alphabet> table = {
        {"argic", {{"p", "t", "k", "w"}, {"a", "o"}}},
        {"belic", {{"s", "z", "r", "l"}, {"i", "u"}}},
        {"carel", {{"b", "d", "g", "v"}, {"e", "y"}}},
        {"dorn", {{"m", "n", "f", "h"}, {"ä", "ö"}}},
    };
    auto it = table.find(id);
    if (it == table.end()) throw std::invalid_argument("unknown alphabet_id: " + id);
    return it->second;
}

struct LanguageSpec {
    std::string tag;
    std::uint64_t lexicon_seed = 0;
    OrderTransform order_transform = OrderTransform::identity;
    int rotate_k = 0;  // only used when order_transform == rotate_k
    std::string suffix;
    std::string family_id;
    std::string alphabet_id = "argic";
};

inline void apply_order(OrderTransform t, int k, std::vector<int>& seq) {
    const std::size_t n = seq.size();
    switch (t) {
        case OrderTransform::identity: break;
        case OrderTransform::reverse: std::reverse(seq.begin(), seq.end()); break;
        case OrderTransform::swap_adjacent:
            for (std::size_t i = 0; i + 1 < n; i += 2) std::swap(seq[i], seq[i + 1]);
            break;
        case OrderTransform::rotate_k: {
            if (n == 0) break;
            const std::size_t shift = static_cast<std::size_t>(((k % static_cast<int>(n)) + static_cast<int>(n))) % n;
            std::rotate(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(shift), seq.end());
            break;
        }
    }
}

inline void invert_order(OrderTransform t, int k, std::vector<int>& seq) {
    if (t == OrderTransform::rotate_k) {
        apply_order(OrderTransform::rotate_k, -k, seq);
    } else {
        apply_order(t, k, seq);  // reverse and swap_adjacent are involutions
    }
}

// ---------------------------------------------------------------------------
// Lexicon: deterministic bijection concept id -> surface word
// ---------------------------------------------------------------------------

class Lexicon {
  public:
    Lexicon(const LanguageSpec& spec) : spec_(spec), rng_(spec.lexicon_seed) {}

    // Words are generated sequentially from one stream, so extending the
    // lexicon never changes earlier entries.
    void ensure(int size) {
        if (size > capacity())
            throw std::invalid_argument("lexicon for " + spec_.tag + " cannot hold " + std::to_string(size) +
                                        " words; alphabet capacity is " + std::to_string(capacity()));
        const auto& alpha = alphabet_by_id(spec_.alphabet_id);
        while (static_cast<int>(words_.size()) < size) {
            std::string w;
            do {
                w = make_word(alpha);
            } while (reverse_.count(w));
            reverse_.emplace(w, static_cast<int>(words_.size()));
            words_.push_back(std::move(w));
        }
    }

    const std::string& word(int concept_id) {
        if (concept_id < 0) throw std::out_of_range("negative concept id");
        ensure(concept_id + 1);
        return words_[static_cast<std::size_t>(concept_id)];
    }

    // Returns the concept id for a bare stem (suffix already stripped).
    std::optional<int> concept_of(const std::string& stem) const {
        auto it = reverse_.find(stem);
        if (it == reverse_.end()) return std::nullopt;
        return it->second;
    }

    // Like concept_of, but grows the lexicon (up to the alphabet's capacity)
    // until the stem is found, so a fresh Language can invert text that was
    // realized by another instance of the same language.
    std::optional<int> lookup(const std::string& stem) {
        for (;;) {
            if (auto c = concept_of(stem)) return c;
            const int size = static_cast<int>(words_.size());
            if (size >= capacity()) return std::nullopt;
            ensure(std::min(capacity(), size + 64));
        }
    }

    // Number of distinct CVCV... words of length 3-6 the alphabet can form;
    // ensure() past this point would loop forever looking for a fresh word.
    int capacity() const {
        const auto& alpha = alphabet_by_id(spec_.alphabet_id);
        const double c = static_cast<double>(alpha.consonants.size());
        const double v = static_cast<double>(alpha.vowels.size());
        double total = 0.0;
        for (int len = 3; len <= 6; ++len)
            total += std::pow(c, (len + 1) / 2) * std::pow(v, len / 2);
        return static_cast<int>(total);
    }

  private:
    std::string make_word(const Alphabet& alpha) {
        // Pronounceable CVCV... pattern, 3-6 letters.
        const int len = static_cast<int>(rng_.uniform_int(3, 6));
        std::string w;
        for (int i = 0; i < len; ++i) {
            const auto& set = (i % 2 == 0) ? alpha.consonants : alpha.vowels;
            w += set[rng_.uniform_u64(set.size())];
        }
        return w;
    }

    LanguageSpec spec_;
    Rng rng_;
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> reverse_;
};

// A language bundles its spec with a lazily grown lexicon.
class Language {
  public:
    explicit Language(LanguageSpec spec) : spec_(std::move(spec)), lexicon_(spec_) {}

    const LanguageSpec& spec() const { return spec_; }
    const std::string& tag() const { return spec_.tag; }
    Lexicon& lexicon() { return lexicon_; }

    std::string realize(const std::vector<int>& concepts) {
        std::vector<int> seq = concepts;
        apply_order(spec_.order_transform, spec_.rotate_k, seq);
        std::vector<std::string> words;
        words.reserve(seq.size());
        for (int c : seq) words.push_back(lexicon_.word(c) + spec_.suffix);
        return join(words);
    }

    std::vector<int> invert(const std::string& text) {
        std::vector<int> seq;
        for (const auto& w : split_ws(text)) {
            std::string stem = w;
            if (!spec_.suffix.empty()) {
                if (stem.size() <= spec_.suffix.size() ||
                    stem.compare(stem.size() - spec_.suffix.size(), spec_.suffix.size(), spec_.suffix) != 0) {
                    throw std::invalid_argument("word '" + w + "' lacks suffix of language " + spec_.tag);
                }
                stem.resize(stem.size() - spec_.suffix.size());
            }
            auto c = lexicon_.lookup(stem);
            if (!c) throw std::invalid_argument("word '" + w + "' not in lexicon of language " + spec_.tag);
            seq.push_back(*c);
        }
        invert_order(spec_.order_transform, spec_.rotate_k, seq);
        return seq;
    }

  private:
    LanguageSpec spec_;
    Lexicon lexicon_;
};

inline std::string ground_truth_translate(const std::string& text, Language& from, Language& to) {
    return to.realize(from.invert(text));
}

// ---------------------------------------------------------------------------
// Interlingua generation
// ---------------------------------------------------------------------------

// Zipf sampler over [0, vocab) via inverse CDF on a precomputed table.
class ZipfSampler {
  public:
    ZipfSampler(int vocab, double exponent) {
        cdf_.resize(static_cast<std::size_t>(vocab));
        double total = 0.0;
        for (int i = 0; i < vocab; ++i) {
            total += std::pow(static_cast<double>(i + 1), -exponent);
            cdf_[static_cast<std::size_t>(i)] = total;
        }
        for (auto& v : cdf_) v /= total;
    }

    int sample(Rng& rng) const {
        const double u = rng.uniform_real();
        auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
        if (it == cdf_.end()) --it;
        return static_cast<int>(it - cdf_.begin());
    }

  private:
    std::vector<double> cdf_;
};

inline std::vector<std::vector<int>> gen_interlingua(const DomainSpec& domain, int n, std::uint64_t seed) {
    domain.validate();
    if (n < 0) throw std::invalid_argument("gen_interlingua: n must be >= 0");
    ZipfSampler zipf(domain.concept_vocab_size, domain.zipf_exponent);
    Rng rng(seed);
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int len = static_cast<int>(rng.uniform_int(domain.length_min, domain.length_max));
        std::vector<int> sent(static_cast<std::size_t>(len));
        for (auto& c : sent) c = zipf.sample(rng);
        out.push_back(std::move(sent));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Examples and manifest
// ---------------------------------------------------------------------------

struct ParallelExample {
    std::string src_lang, tgt_lang;
    std::string src_text, tgt_text;
};

struct MonoExample {
    std::string lang;
    std::string text;
};

struct ParallelEntry {
    std::string src, tgt, domain;
    int count = 0;
};

struct MonoEntry {
    std::string lang, domain;
    int count = 0;
};

struct CorpusManifest {
    static constexpr int kSchemaVersion = 1;

    std::uint64_t seed = 0;
    std::vector<DomainSpec> domains;
    std::vector<LanguageSpec> languages;
    std::vector<ParallelEntry> parallel;
    std::vector<MonoEntry> mono;

    const DomainSpec& domain(const std::string& id) const {
        for (const auto& d : domains)
            if (d.id == id) return d;
        throw std::invalid_argument("manifest references unknown domain: " + id);
    }

    const LanguageSpec& language(const std::string& tag) const {
        for (const auto& l : languages)
            if (l.tag == tag) return l;
        throw std::invalid_argument("manifest references unknown language: " + tag);
    }

    void validate() const {
        for (const auto& d : domains) d.validate();
        for (const auto& l : languages) {
            alphabet_by_id(l.alphabet_id);
            // Family coherence: same family implies same transform and alphabet.
            for (const auto& o : languages) {
                if (o.family_id == l.family_id &&
                    (o.order_transform != l.order_transform || o.rotate_k != l.rotate_k ||
                     o.alphabet_id != l.alphabet_id)) {
                    throw std::invalid_argument("family " + l.family_id +
                                                " languages disagree on transform/alphabet");
                }
            }
        }
        for (const auto& p : parallel) {
            if (p.count < 0) throw std::invalid_argument("negative parallel count");
            if (p.src == p.tgt) throw std::invalid_argument("parallel pair with src == tgt");
            language(p.src);
            language(p.tgt);
            domain(p.domain);
        }
        for (const auto& m : mono) {
            if (m.count < 0) throw std::invalid_argument("negative mono count");
            language(m.lang);
            domain(m.domain);
        }
    }

    Json to_json() const {
        Json j;
        j["schema_version"] = kSchemaVersion;
        j["seed"] = seed;
        for (const auto& d : domains)
            j["domains"].push_back({{"id", d.id},
                                    {"concept_vocab_size", d.concept_vocab_size},
                                    {"length_min", d.length_min},
                                    {"length_max", d.length_max},
                                    {"zipf_exponent", d.zipf_exponent}});
        for (const auto& l : languages)
            j["languages"].push_back({{"tag", l.tag},
                                      {"lexicon_seed", l.lexicon_seed},
                                      {"order_transform", to_string(l.order_transform)},
                                      {"rotate_k", l.rotate_k},
                                      {"suffix", l.suffix},
                                      {"family_id", l.family_id},
                                      {"alphabet_id", l.alphabet_id}});
        j["parallel"] = Json::array();
        for (const auto& p : parallel)
            j["parallel"].push_back({{"src", p.src}, {"tgt", p.tgt}, {"domain", p.domain}, {"count", p.count}});
        j["mono"] = Json::array();
        for (const auto& m : mono)
            j["mono"].push_back({{"lang", m.lang}, {"domain", m.domain}, {"count", m.count}});
        return j;
    }

    static CorpusManifest from_json(const Json& j) {
        if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kSchemaVersion)
            throw std::invalid_argument("manifest: missing or unsupported schema_version");
        CorpusManifest m;
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& d : j.at("domains"))
            m.domains.push_back({d.at("id").get<std::string>(), d.at("concept_vocab_size").get<int>(),
                                 d.at("length_min").get<int>(), d.at("length_max").get<int>(),
                                 d.at("zipf_exponent").get<double>()});
        for (const auto& l : j.at("languages")) {
            LanguageSpec s;
            s.tag = l.at("tag").get<std::string>();
            s.lexicon_seed = l.at("lexicon_seed").get<std::uint64_t>();
            s.order_transform = order_transform_from_string(l.at("order_transform").get<std::string>());
            s.rotate_k = l.value("rotate_k", 0);
            s.suffix = l.value("suffix", std::string());
            s.family_id = l.at("family_id").get<std::string>();
            s.alphabet_id = l.at("alphabet_id").get<std::string>();
            m.languages.push_back(std::move(s));
        }
        for (const auto& p : j.value("parallel", Json::array()))
            m.parallel.push_back({p.at("src").get<std::string>(), p.at("tgt").get<std::string>(),
                                  p.at("domain").get<std::string>(), p.at("count").get<int>()});
        for (const auto& e : j.value("mono", Json::array()))
            m.mono.push_back({e.at("lang").get<std::string>(), e.at("domain").get<std::string>(),
                              e.at("count").get<int>()});
        m.validate();
        return m;
    }

    static CorpusManifest load(const std::string& path) { return from_json(Json::parse(read_file(path))); }
};

// ---------------------------------------------------------------------------
// Corpus build and ingestion
// ---------------------------------------------------------------------------

inline std::string mono_filename(const MonoEntry& e) { return "mono/" + e.lang + "." + e.domain + ".txt"; }
inline std::string parallel_filename(const ParallelEntry& e) {
    return "parallel/" + e.src + "-" + e.tgt + "." + e.domain + ".tsv";
}

// Writes the corpus tree described by the manifest. Each file's randomness
// derives only from hash(manifest.seed, file path), so files can be produced
// in any order (or concurrently) with identical results.
inline void build_corpus(const CorpusManifest& manifest, const std::string& root) {
    manifest.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(root) / "mono");
    fs::create_directories(fs::path(root) / "parallel");

    std::map<std::string, Language> langs;
    for (const auto& l : manifest.languages) langs.emplace(l.tag, Language(l));

    for (const auto& e : manifest.mono) {
        const std::string rel = mono_filename(e);
        const auto sents = gen_interlingua(manifest.domain(e.domain), e.count, derive_seed(manifest.seed, rel));
        std::string out;
        auto& lang = langs.at(e.lang);
        for (const auto& s : sents) {
            out += lang.realize(s);
            out += '\n';
        }
        write_file((fs::path(root) / rel).string(), out);
    }
    for (const auto& e : manifest.parallel) {
        const std::string rel = parallel_filename(e);
        const auto sents = gen_interlingua(manifest.domain(e.domain), e.count, derive_seed(manifest.seed, rel));
        std::string out;
        auto& src = langs.at(e.src);
        auto& tgt = langs.at(e.tgt);
        for (const auto& s : sents) {
            out += src.realize(s);
            out += '\t';
            out += tgt.realize(s);
            out += '\n';
        }
        write_file((fs::path(root) / rel).string(), out);
    }
    write_file((fs::path(root) / "manifest.json").string(), manifest.to_json().dump(2) + "\n");
}

enum class IngestLayout { mono_lines, parallel_tsv };

struct IngestSummary {
    std::size_t files = 0;
    std::size_t examples = 0;
    std::size_t blank_skipped = 0;
    std::size_t malformed_skipped = 0;
};

// Streams examples out of a directory (or single file) of corpus files.
// Blank lines are skipped; malformed TSV rows are counted and skipped.
class IngestStream {
  public:
    IngestStream(const std::string& path, IngestLayout layout) : layout_(layout) {
        namespace fs = std::filesystem;
        if (fs::is_directory(path)) {
            for (const auto& entry : fs::directory_iterator(path))
                if (entry.is_regular_file()) files_.push_back(entry.path().string());
            std::sort(files_.begin(), files_.end());
        } else {
            files_.push_back(path);
        }
        summary_.files = files_.size();
    }

    // Language tags are taken from the file name stem ("<lang>.<domain>" or
    // "<src>-<tgt>.<domain>"), matching build_corpus output.
    std::optional<MonoExample> next_mono() {
        std::string line;
        while (fetch_line(line)) {
            if (trim(line).empty()) {
                ++summary_.blank_skipped;
                continue;
            }
            ++summary_.examples;
            return MonoExample{current_stem_part(0), line};
        }
        return std::nullopt;
    }

    std::optional<ParallelExample> next_parallel() {
        std::string line;
        while (fetch_line(line)) {
            if (trim(line).empty()) {
                ++summary_.blank_skipped;
                continue;
            }
            const auto fields = split_on(line, '\t');
            if (fields.size() != 2 || trim(fields[0]).empty() || trim(fields[1]).empty()) {
                ++summary_.malformed_skipped;
                continue;
            }
            ++summary_.examples;
            return ParallelExample{current_stem_part(0), current_stem_part(1), fields[0], fields[1]};
        }
        return std::nullopt;
    }

    const IngestSummary& summary() const { return summary_; }
    IngestLayout layout() const { return layout_; }

  private:
    bool fetch_line(std::string& line) {
        for (;;) {
            if (in_.is_open() && std::getline(in_, line)) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return true;
            }
            if (file_index_ >= files_.size()) return false;
            in_.close();
            in_.clear();
            current_ = files_[file_index_++];
            in_.open(current_, std::ios::binary);
            if (!in_) throw std::runtime_error("cannot open file: " + current_);
        }
    }

    std::string current_stem_part(int idx) const {
        std::string stem = std::filesystem::path(current_).filename().string();
        const auto dot = stem.find('.');
        if (dot != std::string::npos) stem.resize(dot);
        if (layout_ == IngestLayout::mono_lines) return stem;
        const auto dash = stem.find('-');
        if (dash == std::string::npos) return idx == 0 ? stem : std::string();
        return idx == 0 ? stem.substr(0, dash) : stem.substr(dash + 1);
    }

    IngestLayout layout_;
    std::vector<std::string> files_;
    std::size_t file_index_ = 0;
    std::string current_;
    std::ifstream in_;
    IngestSummary summary_;
};

inline std::vector<MonoExample> read_all_mono(const std::string& path, IngestSummary* summary = nullptr) {
    IngestStream stream(path, IngestLayout::mono_lines);
    std::vector<MonoExample> out;
    while (auto ex = stream.next_mono()) out.push_back(std::move(*ex));
    if (summary) *summary = stream.summary();
    return out;
}

inline std::vector<ParallelExample> read_all_parallel(const std::string& path, IngestSummary* summary = nullptr) {
    IngestStream stream(path, IngestLayout::parallel_tsv);
    std::vector<ParallelExample> out;
    while (auto ex = stream.next_parallel()) out.push_back(std::move(*ex));
    if (summary) *summary = stream.summary();
    return out;
}

}  // namespace mtlab::corpus
