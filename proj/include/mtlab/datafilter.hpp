#pragma once

// Monolingual data cleaning: Naive Bayes character n-gram language
// identification plus indicative-wordlist (term frequency / inverse union
// frequency) filtering, producing noisy/clean two-tier datasets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtlab/text.hpp"

namespace mtlab::datafilter {

// ---------------------------------------------------------------------------
// Language identification
// ---------------------------------------------------------------------------

struct LangIdModel {
    int n_max = 3;
    double smoothing = 1.0;
    std::vector<std::string> languages;
    std::vector<double> log_priors;
    // Per language: raw n-gram counts plus totals per order; log-probs are
    // computed lazily with additive smoothing over the global n-gram alphabet.
    std::vector<std::map<std::string, std::int64_t>> counts;  // all orders mixed; key prefixed by order
    std::vector<std::vector<std::int64_t>> order_totals;      // [lang][order-1]
    std::vector<std::int64_t> alphabet_size;                  // distinct grams per order (global), [order-1]

    int lang_index(const std::string& lang) const {
        for (std::size_t i = 0; i < languages.size(); ++i)
            if (languages[i] == lang) return static_cast<int>(i);
        return -1;
    }
};

namespace detail {

inline std::vector<std::string> char_ngrams(const std::string& line, int n) {
    const auto chars = utf8_chars(line);
    std::vector<std::string> out;
    if (static_cast<int>(chars.size()) < n) return out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= chars.size(); ++i) {
        std::string g = std::to_string(n) + ":";
        for (int j = 0; j < n; ++j) g += chars[i + static_cast<std::size_t>(j)];
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace detail

// Supervised Naive Bayes over character n-grams (orders 1..n_max) with
// additive smoothing. `labeled` maps language tag -> lines.
inline LangIdModel train_langid(const std::map<std::string, std::vector<std::string>>& labeled,
                                double smoothing = 1.0, int n_max = 3) {
    if (labeled.size() < 2) throw std::invalid_argument("train_langid: need at least two languages");
    if (smoothing <= 0.0) throw std::invalid_argument("train_langid: smoothing must be positive");
    LangIdModel m;
    m.n_max = n_max;
    m.smoothing = smoothing;
    std::int64_t total_lines = 0;
    std::vector<std::set<std::string>> global(static_cast<std::size_t>(n_max));
    for (const auto& [lang, lines] : labeled) {
        if (lines.empty()) throw std::invalid_argument("train_langid: language '" + lang + "' has no data");
        m.languages.push_back(lang);
        m.counts.emplace_back();
        m.order_totals.emplace_back(static_cast<std::size_t>(n_max), 0);
        auto& c = m.counts.back();
        auto& tot = m.order_totals.back();
        for (const auto& line : lines) {
            for (int n = 1; n <= n_max; ++n) {
                for (auto& g : detail::char_ngrams(line, n)) {
                    global[static_cast<std::size_t>(n - 1)].insert(g);
                    ++c[g];
                    ++tot[static_cast<std::size_t>(n - 1)];
                }
            }
        }
        total_lines += static_cast<std::int64_t>(lines.size());
    }
    for (const auto& [lang, lines] : labeled)
        m.log_priors.push_back(std::log(static_cast<double>(lines.size()) / static_cast<double>(total_lines)));
    for (int n = 1; n <= n_max; ++n)
        m.alphabet_size.push_back(static_cast<std::int64_t>(global[static_cast<std::size_t>(n - 1)].size()) + 1);
    return m;
}

struct Classification {
    std::string lang;
    double posterior = 0.0;
    std::vector<double> posteriors;  // aligned with model.languages
};

inline Classification classify(const LangIdModel& m, const std::string& text) {
    const std::size_t L = m.languages.size();
    std::vector<double> logp(m.log_priors.begin(), m.log_priors.end());
    for (int n = 1; n <= m.n_max; ++n) {
        for (const auto& g : detail::char_ngrams(text, n)) {
            for (std::size_t l = 0; l < L; ++l) {
                const auto& c = m.counts[l];
                auto it = c.find(g);
                const double cnt = it == c.end() ? 0.0 : static_cast<double>(it->second);
                const double denom = static_cast<double>(m.order_totals[l][static_cast<std::size_t>(n - 1)]) +
                                     m.smoothing * static_cast<double>(m.alphabet_size[static_cast<std::size_t>(n - 1)]);
                logp[l] += std::log((cnt + m.smoothing) / denom);
            }
        }
    }
    // Normalize: posteriors over supported languages.
    const double mx = *std::max_element(logp.begin(), logp.end());
    double z = 0.0;
    for (double v : logp) z += std::exp(v - mx);
    Classification out;
    out.posteriors.resize(L);
    std::size_t best = 0;
    for (std::size_t l = 0; l < L; ++l) {
        out.posteriors[l] = std::exp(logp[l] - mx) / z;
        if (out.posteriors[l] > out.posteriors[best]) best = l;
    }
    out.lang = m.languages[best];
    out.posterior = out.posteriors[best];
    return out;
}

// ---------------------------------------------------------------------------
// Indicative wordlists
// ---------------------------------------------------------------------------

struct WordScore {
    std::string word;
    double score = 0.0;
};

struct Wordlist {
    std::string lang;
    std::vector<WordScore> entries;  // scores nonincreasing
    bool short_list = false;         // fewer eligible words than requested K

    bool contains(const std::string& w) const {
        for (const auto& e : entries)
            if (e.word == w) return true;
        return false;
    }

    std::string to_tsv() const {
        std::ostringstream out;
        for (const auto& e : entries) out << e.word << '\t' << e.score << '\n';
        return out.str();
    }

    static Wordlist from_tsv(const std::string& lang, const std::string& tsv) {
        Wordlist wl;
        wl.lang = lang;
        std::istringstream in(tsv);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto parts = split_on(line, '\t');
            if (parts.size() != 2) throw std::invalid_argument("wordlist: malformed TSV line: " + line);
            wl.entries.push_back({parts[0], std::stod(parts[1])});
        }
        return wl;
    }
};

// score(w, lang) = relative frequency of w in lang / relative frequency of w
// in the union of all languages. Words with count < min_count in lang are
// ineligible; ties broken lexicographically.
inline Wordlist tfiif_wordlist(const std::map<std::string, std::vector<std::string>>& corpora,
                               const std::string& lang, int k, int min_count = 3) {
    auto it = corpora.find(lang);
    if (it == corpora.end() || it->second.empty())
        throw std::invalid_argument("tfiif_wordlist: corpus for '" + lang + "' is empty");
    if (k < 1) throw std::invalid_argument("tfiif_wordlist: K must be >= 1");

    std::map<std::string, std::int64_t> lang_counts, union_counts;
    std::int64_t lang_total = 0, union_total = 0;
    for (const auto& [tag, lines] : corpora) {
        for (const auto& line : lines) {
            for (const auto& w : split_ws(line)) {
                ++union_counts[w];
                ++union_total;
                if (tag == lang) {
                    ++lang_counts[w];
                    ++lang_total;
                }
            }
        }
    }

    std::vector<WordScore> scored;
    for (const auto& [w, c] : lang_counts) {
        if (c < min_count) continue;
        const double tf = static_cast<double>(c) / static_cast<double>(lang_total);
        const double uf = static_cast<double>(union_counts.at(w)) / static_cast<double>(union_total);
        scored.push_back({w, tf / uf});
    }
    std::sort(scored.begin(), scored.end(), [](const WordScore& a, const WordScore& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.word < b.word;
    });

    Wordlist wl;
    wl.lang = lang;
    if (static_cast<int>(scored.size()) <= k) {
        wl.entries = std::move(scored);
        wl.short_list = static_cast<int>(wl.entries.size()) < k;
    } else {
        wl.entries.assign(scored.begin(), scored.begin() + k);
    }
    return wl;
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

enum class FilterMode { loose, tight };

struct FilterReport {
    std::int64_t input_lines = 0;
    std::int64_t kept = 0;
    std::int64_t dropped_langid = 0;
    std::int64_t dropped_coverage = 0;

    void check_conservation() const {
        if (kept + dropped_langid + dropped_coverage != input_lines)
            throw std::logic_error("filter report does not conserve counts");
    }

    std::string to_text() const {
        std::ostringstream out;
        out << "input_lines\t" << input_lines << "\n"
            << "kept\t" << kept << "\n"
            << "dropped_langid\t" << dropped_langid << "\n"
            << "dropped_coverage\t" << dropped_coverage << "\n";
        return out.str();
    }
};

// loose: keep iff classify argmax == lang.
// tight: additionally require >= coverage_threshold of tokens in the wordlist.
inline std::pair<std::vector<std::string>, FilterReport> filter_mono(const std::vector<std::string>& corpus,
                                                                     const std::string& lang, const LangIdModel& langid,
                                                                     const Wordlist& wordlist, FilterMode mode,
                                                                     double coverage_threshold = 0.2) {
    std::set<std::string> wl_words;
    for (const auto& e : wordlist.entries) wl_words.insert(e.word);

    std::vector<std::string> clean;
    FilterReport report;
    report.input_lines = static_cast<std::int64_t>(corpus.size());
    for (const auto& line : corpus) {
        if (classify(langid, line).lang != lang) {
            ++report.dropped_langid;
            continue;
        }
        if (mode == FilterMode::tight) {
            const auto toks = split_ws(line);
            std::size_t in_list = 0;
            for (const auto& t : toks)
                if (wl_words.count(t)) ++in_list;
            const double cov = toks.empty() ? 0.0 : static_cast<double>(in_list) / static_cast<double>(toks.size());
            if (cov < coverage_threshold) {
                ++report.dropped_coverage;
                continue;
            }
        }
        ++report.kept;
        clean.push_back(line);
    }
    report.check_conservation();
    return {std::move(clean), report};
}

}  // namespace mtlab::datafilter
