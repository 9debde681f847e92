#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "mtlab/eval.hpp"

using namespace mtlab;
using namespace mtlab::eval;

namespace {

// Independent n-gram counter over token vectors (different data structure
// from the implementation's joined-string keys).
std::map<std::vector<std::string>, int> ref_ngrams(const std::vector<std::string>& toks, int n) {
    std::map<std::vector<std::string>, int> out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i)
        ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                       toks.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    return out;
}

// Brute-force corpus BLEU built directly from the definition.
double ref_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
    double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
    double hlen = 0, rlen = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto h = split_ws(hyps[i]);
        const auto r = split_ws(refs[i]);
        hlen += static_cast<double>(h.size());
        rlen += static_cast<double>(r.size());
        for (int n = 1; n <= 4; ++n) {
            auto hc = ref_ngrams(h, n);
            auto rc = ref_ngrams(r, n);
            for (const auto& [g, c] : hc) {
                totals[n - 1] += c;
                auto it = rc.find(g);
                if (it != rc.end()) matches[n - 1] += std::min(c, it->second);
            }
        }
    }
    double log_sum = 0;
    for (int n = 0; n < 4; ++n) {
        if (totals[n] == 0 || matches[n] == 0) return 0.0;
        log_sum += std::log(matches[n] / totals[n]);
    }
    const double bp = hlen < rlen ? std::exp(1.0 - rlen / hlen) : 1.0;
    return 100.0 * bp * std::exp(log_sum / 4.0);
}

// Brute-force corpus chrF with effective-order averaging.
double ref_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs, int n_max = 6,
                double beta = 2.0) {
    std::vector<double> m(static_cast<std::size_t>(n_max), 0.0), ht(m), rt(m);
    auto chars_of = [](const std::string& s) {
        std::vector<std::string> out;
        for (const auto& c : utf8_chars(s))
            if (c != " " && c != "\t") out.push_back(c);
        return out;
    };
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto h = chars_of(hyps[i]);
        const auto r = chars_of(refs[i]);
        for (int n = 1; n <= n_max; ++n) {
            auto hc = ref_ngrams(h, n);
            auto rc = ref_ngrams(r, n);
            for (const auto& [g, c] : hc) {
                ht[static_cast<std::size_t>(n - 1)] += c;
                auto it = rc.find(g);
                if (it != rc.end()) m[static_cast<std::size_t>(n - 1)] += std::min(c, it->second);
            }
            for (const auto& [g, c] : rc) rt[static_cast<std::size_t>(n - 1)] += c;
        }
    }
    double f_sum = 0;
    int orders = 0;
    for (int n = 0; n < n_max; ++n) {
        if (ht[static_cast<std::size_t>(n)] == 0 && rt[static_cast<std::size_t>(n)] == 0) continue;
        ++orders;
        const double p = ht[static_cast<std::size_t>(n)] > 0 ? m[static_cast<std::size_t>(n)] / ht[static_cast<std::size_t>(n)] : 0;
        const double rr = rt[static_cast<std::size_t>(n)] > 0 ? m[static_cast<std::size_t>(n)] / rt[static_cast<std::size_t>(n)] : 0;
        if (p > 0 && rr > 0) f_sum += (1 + beta * beta) * p * rr / (beta * beta * p + rr);
    }
    return orders == 0 ? 0.0 : 100.0 * f_sum / orders;
}

}  // namespace

TEST_CASE("BLEU matches the hand-derived single-sentence case") {
    // precisions 5/6, 3/5, 2/4, 1/3; product 1/12; BP = 1 (equal lengths).
    const double got = bleu({"the cat sat on the mat"}, {"the cat sat on a mat"});
    CHECK(std::abs(got - 100.0 * std::pow(1.0 / 12.0, 0.25)) < 1e-9);
    CHECK(std::abs(got - 53.73) < 0.01);
}

TEST_CASE("BLEU is zero when any n-gram order has no match") {
    CHECK(bleu({"a b c d"}, {"a b c e"}) == 0.0);
}

TEST_CASE("identical corpora score exactly 100") {
    const std::vector<std::string> lines = {"x y", "a b c d e", "q"};
    CHECK(bleu(lines, lines, {.max_n = 4, .smooth = true}) == 100.0);
    CHECK(chrf(lines, lines) == 100.0);
}

TEST_CASE("BLEU brevity penalty follows exp(1 - r/c)") {
    // hyp 2 tokens all matching, ref 4 tokens: p1 = 1, p2 = 1 within hyp.
    const double got = bleu({"a b"}, {"a b c d"}, {.max_n = 2});
    CHECK(std::abs(got - 100.0 * std::exp(1.0 - 4.0 / 2.0)) < 1e-9);
    // No penalty when the hypothesis is longer.
    const double longer = bleu({"a b c d e"}, {"a b c d"}, {.max_n = 1});
    CHECK(std::abs(longer - 100.0 * 4.0 / 5.0) < 1e-9);
}

TEST_CASE("clipping caps repeated hypothesis n-grams at the reference count") {
    // hyp "the the the": 1-gram matches clipped to 1 occurrence in the ref;
    // the hypothesis is longer than the reference, so no brevity penalty.
    const double got = bleu({"the the the"}, {"the cat"}, {.max_n = 1});
    CHECK(std::abs(got - 100.0 / 3.0) < 1e-9);
}

TEST_CASE("smoothing rescues zero precisions on orders two and above") {
    const double smoothed = bleu({"a b c d"}, {"a b c e"}, {.max_n = 4, .smooth = true});
    CHECK(smoothed > 0.0);
    CHECK(smoothed < 60.0);
    // Order-1 zero precision still yields zero: nothing matched at all.
    CHECK(bleu({"q r"}, {"a b"}, {.max_n = 2, .smooth = true}) == 0.0);
}

TEST_CASE("corpus BLEU agrees with a brute-force oracle on random-ish corpora") {
    const std::vector<std::string> hyps = {"the cat sat on the mat", "a quick brown fox jumps", "hello world",
                                           "one two three four five six seven", "repeat repeat repeat repeat"};
    const std::vector<std::string> refs = {"the cat sat on a mat", "the quick brown fox jumped high", "hello there world",
                                           "one two three four five six seven", "repeat repeat twice"};
    CHECK(std::abs(bleu(hyps, refs) - ref_bleu(hyps, refs)) < 1e-9);
}

TEST_CASE("BLEU input validation") {
    CHECK_THROWS_AS(bleu({"a"}, {}), std::invalid_argument);
    CHECK_THROWS_AS(bleu({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(bleu({"a"}, {" "}), std::invalid_argument);
}

TEST_CASE("chrF agrees with a brute-force oracle to 1e-6") {
    const std::vector<std::string> hyps = {"lurizusi lilusi", "sizil zusus rilus", "ab", "wokok potowa"};
    const std::vector<std::string> refs = {"lurizuzu lilusi", "sizil zusus", "abcd", "wokok pak potowa"};
    CHECK(std::abs(chrf(hyps, refs) - ref_chrf(hyps, refs)) < 1e-6);
    // A different beta changes the balance but still matches the oracle.
    CHECK(std::abs(chrf(hyps, refs, {.n_max = 4, .beta = 1.0}) - ref_chrf(hyps, refs, 4, 1.0)) < 1e-6);
}

TEST_CASE("chrF scores identical short corpora 100 via effective orders") {
    // Shorter than the max n-gram order: empty orders are skipped, not zeroed.
    CHECK(chrf({"x y"}, {"x y"}) == 100.0);
    CHECK(chrf({"ab"}, {"ab"}) == 100.0);
}

TEST_CASE("chrF ignores whitespace differences") {
    CHECK(chrf({"ab cd"}, {"abcd"}) == 100.0);
}

TEST_CASE("chrF recall sensitivity: beta weights recall over precision") {
    // hyp covers half the ref; a pure-precision score would be 100.
    const double f2 = chrf({"abab"}, {"abababab"});
    CHECK(f2 < 100.0);
    const double f_precision = chrf({"abab"}, {"abababab"}, {.n_max = 6, .beta = 0.001});
    CHECK(f_precision > f2);
}

TEST_CASE("eval report validates and formats CSV at two decimals") {
    EvalReport rep;
    rep.rows.push_back({"aa", "pv", 53.728523, 70.1, 128, "greedy", "ck1"});
    const auto csv = rep.to_csv();
    CHECK(csv.find("src_lang,tgt_lang,bleu,chrf,sentences,decode_mode,checkpoint_id\n") == 0);
    CHECK(csv.find("aa,pv,53.73,70.10,128,greedy,ck1\n") != std::string::npos);

    EvalReport bad;
    bad.rows.push_back({"aa", "pv", 101.0, 50.0, 10, "greedy", "ck1"});
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.rows[0].bleu = 50.0;
    bad.rows[0].sentences = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("score_pair bundles both metrics with metadata") {
    const auto row = score_pair("aa", "pv", {"x y z"}, {"x y w"}, "beam4", "ck9", {.max_n = 2});
    CHECK(row.src_lang == "aa");
    CHECK(row.tgt_lang == "pv");
    CHECK(row.sentences == 1);
    CHECK(row.decode_mode == "beam4");
    CHECK(row.bleu == bleu({"x y z"}, {"x y w"}, {.max_n = 2}));
    CHECK(row.chrf == chrf({"x y z"}, {"x y w"}));
}
