#pragma once

// Corpus-level translation quality metrics (BLEU, chrF) and evaluation
// report assembly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtlab/text.hpp"

namespace mtlab::eval {

namespace detail {

inline std::map<std::string, std::int64_t> ngram_counts(const std::vector<std::string>& tokens, int n) {
    std::map<std::string, std::int64_t> out;
    if (static_cast<int>(tokens.size()) < n) return out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) {
            if (j) key += '\x1f';
            key += tokens[i + static_cast<std::size_t>(j)];
        }
        ++out[key];
    }
    return out;
}

inline std::map<std::string, std::int64_t> char_ngram_counts(const std::vector<std::string>& chars, int n) {
    std::map<std::string, std::int64_t> out;
    if (static_cast<int>(chars.size()) < n) return out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= chars.size(); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) key += chars[i + static_cast<std::size_t>(j)];
        ++out[key];
    }
    return out;
}

}  // namespace detail

struct BleuOptions {
    int max_n = 4;
    bool smooth = false;  // add-epsilon on orders >= 2 when a precision is zero
    double smooth_eps = 0.1;
};

// Corpus BLEU over whitespace-tokenized hypotheses/references, in [0,100].
inline double bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                   BleuOptions opt = {}) {
    if (hypotheses.size() != references.size())
        throw std::invalid_argument("bleu: hypothesis/reference count mismatch");
    if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");

    const int max_n = opt.max_n;
    std::vector<double> matches(static_cast<std::size_t>(max_n), 0.0);
    std::vector<double> totals(static_cast<std::size_t>(max_n), 0.0);
    double hyp_len = 0.0, ref_len = 0.0;

    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const auto hyp = split_ws(hypotheses[i]);
        const auto ref = split_ws(references[i]);
        if (ref.empty()) throw std::invalid_argument("bleu: empty reference line at index " + std::to_string(i));
        hyp_len += static_cast<double>(hyp.size());
        ref_len += static_cast<double>(ref.size());
        for (int n = 1; n <= max_n; ++n) {
            const auto hc = detail::ngram_counts(hyp, n);
            const auto rc = detail::ngram_counts(ref, n);
            for (const auto& [gram, cnt] : hc) {
                auto it = rc.find(gram);
                const std::int64_t clipped = it == rc.end() ? 0 : std::min(cnt, it->second);
                matches[static_cast<std::size_t>(n - 1)] += static_cast<double>(clipped);
                totals[static_cast<std::size_t>(n - 1)] += static_cast<double>(cnt);
            }
        }
    }

    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        double m = matches[static_cast<std::size_t>(n - 1)];
        const double t = totals[static_cast<std::size_t>(n - 1)];
        if (t == 0.0) return 0.0;  // hypotheses too short for this order
        if (m == 0.0) {
            if (opt.smooth && n >= 2)
                m = opt.smooth_eps;
            else
                return 0.0;
        }
        log_sum += std::log(m / t);
    }
    const double geo = std::exp(log_sum / max_n);
    const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
    return 100.0 * geo * bp;
}

struct ChrfOptions {
    int n_max = 6;
    double beta = 2.0;
};

// Corpus chrF: character n-gram F_beta, whitespace stripped, orders 1..n_max,
// per-order sufficient statistics aggregated over the corpus, F averaged over
// orders. Result in [0,100].
inline double chrf(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                   ChrfOptions opt = {}) {
    if (hypotheses.size() != references.size())
        throw std::invalid_argument("chrf: hypothesis/reference count mismatch");
    if (hypotheses.empty()) throw std::invalid_argument("chrf: empty corpus");

    const int n_max = opt.n_max;
    std::vector<double> matches(static_cast<std::size_t>(n_max), 0.0);
    std::vector<double> hyp_total(static_cast<std::size_t>(n_max), 0.0);
    std::vector<double> ref_total(static_cast<std::size_t>(n_max), 0.0);

    auto strip_ws = [](const std::string& s) {
        std::string out;
        for (char c : s)
            if (!std::isspace(static_cast<unsigned char>(c))) out += c;
        return out;
    };

    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        if (trim(references[i]).empty())
            throw std::invalid_argument("chrf: empty reference line at index " + std::to_string(i));
        const auto hchars = utf8_chars(strip_ws(hypotheses[i]));
        const auto rchars = utf8_chars(strip_ws(references[i]));
        for (int n = 1; n <= n_max; ++n) {
            const auto hc = detail::char_ngram_counts(hchars, n);
            const auto rc = detail::char_ngram_counts(rchars, n);
            for (const auto& [gram, cnt] : hc) {
                hyp_total[static_cast<std::size_t>(n - 1)] += static_cast<double>(cnt);
                auto it = rc.find(gram);
                if (it != rc.end())
                    matches[static_cast<std::size_t>(n - 1)] += static_cast<double>(std::min(cnt, it->second));
            }
            for (const auto& [gram, cnt] : rc)
                ref_total[static_cast<std::size_t>(n - 1)] += static_cast<double>(cnt);
        }
    }

    const double b2 = opt.beta * opt.beta;
    double f_sum = 0.0;
    int effective_orders = 0;  // orders with no n-grams on either side are skipped
    for (int n = 1; n <= n_max; ++n) {
        const std::size_t k = static_cast<std::size_t>(n - 1);
        if (hyp_total[k] == 0.0 && ref_total[k] == 0.0) continue;
        ++effective_orders;
        const double p = hyp_total[k] > 0.0 ? matches[k] / hyp_total[k] : 0.0;
        const double r = ref_total[k] > 0.0 ? matches[k] / ref_total[k] : 0.0;
        if (p > 0.0 && r > 0.0) f_sum += (1.0 + b2) * p * r / (b2 * p + r);
    }
    if (effective_orders == 0) return 0.0;
    return 100.0 * f_sum / effective_orders;
}

struct EvalRow {
    std::string src_lang;
    std::string tgt_lang;
    double bleu = 0.0;
    double chrf = 0.0;
    int sentences = 0;
    std::string decode_mode;
    std::string checkpoint_id;
};

struct EvalReport {
    std::vector<EvalRow> rows;

    void validate() const {
        for (const auto& r : rows) {
            if (r.sentences <= 0) throw std::invalid_argument("eval report: sentence count must be positive");
            if (r.bleu < 0.0 || r.bleu > 100.0 || r.chrf < 0.0 || r.chrf > 100.0)
                throw std::invalid_argument("eval report: metric outside [0,100]");
        }
    }

    // Stable CSV with metrics at two decimals.
    std::string to_csv() const {
        validate();
        std::ostringstream out;
        out << "src_lang,tgt_lang,bleu,chrf,sentences,decode_mode,checkpoint_id\n";
        out.setf(std::ios::fixed);
        out.precision(2);
        for (const auto& r : rows)
            out << r.src_lang << ',' << r.tgt_lang << ',' << r.bleu << ',' << r.chrf << ',' << r.sentences << ','
                << r.decode_mode << ',' << r.checkpoint_id << '\n';
        return out.str();
    }

    void write_csv(const std::string& path) const { write_file(path, to_csv()); }
};

// Scores one language pair given already-decoded hypotheses.
inline EvalRow score_pair(const std::string& src_lang, const std::string& tgt_lang,
                          const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                          const std::string& decode_mode, const std::string& checkpoint_id,
                          BleuOptions bleu_opt = {}, ChrfOptions chrf_opt = {}) {
    EvalRow row;
    row.src_lang = src_lang;
    row.tgt_lang = tgt_lang;
    row.bleu = bleu(hypotheses, references, bleu_opt);
    row.chrf = chrf(hypotheses, references, chrf_opt);
    row.sentences = static_cast<int>(hypotheses.size());
    row.decode_mode = decode_mode;
    row.checkpoint_id = checkpoint_id;
    return row;
}

}  // namespace mtlab::eval
