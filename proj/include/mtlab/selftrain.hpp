#pragma once

// Iterative back-translation stage: generate pseudo-parallel pairs from
// monolingual text with the current model, filter copies/repetitions, and
// fine-tune on a mixture of back-translation, self-training, genuine parallel
// and masked-denoising tasks.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtlab/model.hpp"
#include "mtlab/sampler.hpp"
#include "mtlab/vocab.hpp"

namespace mtlab::selftrain {

using vocab::Tokenizer;
using vocab::Vocabulary;

enum class Provenance { back_translation, self_training };

inline std::string to_string(Provenance p) {
    return p == Provenance::back_translation ? "back_translation" : "self_training";
}

struct SyntheticPair {
    std::string source;   // training orientation
    std::string target;
    std::string genuine;  // byte-identical copy of the originating mono line
    Provenance provenance = Provenance::back_translation;
    std::string decode_mode;
    std::int64_t model_step = 0;
    bool terminated = true;
};

struct FilterRules {
    double max_token_share = 0.4;     // any single output token type above this → repetition
    int max_bigram_repeat = 4;        // a 2-gram repeated this many times consecutively → repetition
    double max_length_ratio = 3.0;    // token-length ratio bound; lower bound is the reciprocal
};

struct FilterReport {
    std::int64_t total = 0;
    std::int64_t kept = 0;
    std::int64_t dropped_copy = 0;
    std::int64_t dropped_repetition = 0;
    std::int64_t dropped_length_ratio = 0;
    std::int64_t dropped_nonterminated = 0;

    void check_conservation() const {
        if (kept + dropped_copy + dropped_repetition + dropped_length_ratio + dropped_nonterminated != total)
            throw std::logic_error("synthetic filter report does not conserve counts");
    }
    FilterReport& operator+=(const FilterReport& o) {
        total += o.total;
        kept += o.kept;
        dropped_copy += o.dropped_copy;
        dropped_repetition += o.dropped_repetition;
        dropped_length_ratio += o.dropped_length_ratio;
        dropped_nonterminated += o.dropped_nonterminated;
        return *this;
    }
    std::string to_text() const {
        std::ostringstream out;
        out << "total\t" << total << "\nkept\t" << kept << "\ndropped_copy\t" << dropped_copy
            << "\ndropped_repetition\t" << dropped_repetition << "\ndropped_length_ratio\t" << dropped_length_ratio
            << "\ndropped_nonterminated\t" << dropped_nonterminated << "\n";
        return out.str();
    }
};

// Token ids the decoder may never emit: every special except EOS, including
// all language tags.
inline std::vector<int> decode_banned_ids(const Vocabulary& v) {
    std::vector<int> banned;
    for (int id = 0; id < v.num_specials(); ++id)
        if (id != Vocabulary::kEos) banned.push_back(id);
    return banned;
}

// Translates each genuine mono line (language `mono_lang`) into `other_lang`
// with the model, then orients the pair by provenance:
//   back_translation: (synthetic other) -> (genuine mono), trains other->mono
//   self_training:    (genuine mono) -> (synthetic other), trains mono->other
template <typename S>
std::vector<SyntheticPair> generate_synthetic(model::Transformer<S>& m, const Tokenizer& tok,
                                              const std::vector<std::string>& mono_lines,
                                              const std::string& mono_lang, const std::string& other_lang,
                                              Provenance provenance, const model::DecodeOptions& opt = {}) {
    (void)mono_lang;
    const auto banned = decode_banned_ids(tok.vocab());
    std::vector<SyntheticPair> out;
    out.reserve(mono_lines.size());
    for (const auto& line : mono_lines) {
        if (trim(line).empty()) continue;
        const auto src_ids = tok.encode(line, other_lang);
        const auto result = m.decode(src_ids, opt, banned);
        SyntheticPair p;
        p.genuine = line;
        p.provenance = provenance;
        p.decode_mode = opt.beam > 1 ? "beam" + std::to_string(opt.beam) : "greedy";
        p.model_step = m.step();
        p.terminated = result.terminated;
        const std::string synthetic = tok.decode(result.ids);
        if (provenance == Provenance::back_translation) {
            p.source = synthetic;
            p.target = line;
        } else {
            p.source = line;
            p.target = synthetic;
        }
        out.push_back(std::move(p));
    }
    return out;
}

namespace detail {

inline bool is_repetitive(const std::vector<std::string>& toks, const FilterRules& rules) {
    if (toks.empty()) return true;
    std::map<std::string, int> counts;
    for (const auto& t : toks) ++counts[t];
    for (const auto& [t, c] : counts)
        if (static_cast<double>(c) > rules.max_token_share * static_cast<double>(toks.size())) return true;
    // Consecutively repeating 2-gram.
    int run = 1;
    for (std::size_t i = 2; i + 1 < toks.size(); i += 2) {
        if (toks[i] == toks[i - 2] && toks[i + 1] == toks[i - 1])
            ++run;
        else
            run = 1;
        if (run >= rules.max_bigram_repeat) return true;
    }
    run = 1;
    for (std::size_t i = 3; i + 1 < toks.size(); i += 2) {
        if (toks[i] == toks[i - 2] && toks[i + 1] == toks[i - 1])
            ++run;
        else
            run = 1;
        if (run >= rules.max_bigram_repeat) return true;
    }
    return false;
}

}  // namespace detail

inline std::pair<std::vector<SyntheticPair>, FilterReport> filter_synthetic(const std::vector<SyntheticPair>& pairs,
                                                                            const FilterRules& rules = {}) {
    std::vector<SyntheticPair> kept;
    FilterReport report;
    report.total = static_cast<std::int64_t>(pairs.size());
    for (const auto& p : pairs) {
        if (!p.terminated) {
            ++report.dropped_nonterminated;
            continue;
        }
        const std::string src = trim(p.source);
        const std::string tgt = trim(p.target);
        if (src == tgt) {
            ++report.dropped_copy;
            continue;
        }
        // The synthetic (model-produced) side is the one to screen for degeneracy.
        const std::string& synthetic = p.provenance == Provenance::back_translation ? p.source : p.target;
        const auto syn_toks = split_ws(synthetic);
        if (detail::is_repetitive(syn_toks, rules)) {
            ++report.dropped_repetition;
            continue;
        }
        const double ns = static_cast<double>(split_ws(src).size());
        const double nt = static_cast<double>(split_ws(tgt).size());
        if (ns == 0.0 || nt == 0.0 || ns / nt > rules.max_length_ratio || nt / ns > rules.max_length_ratio) {
            ++report.dropped_length_ratio;
            continue;
        }
        ++report.kept;
        kept.push_back(p);
    }
    report.check_conservation();
    return {std::move(kept), report};
}

// ---------------------------------------------------------------------------
// Fine-tuning with the BT : ST : parallel : MASS mixture
// ---------------------------------------------------------------------------

struct IbtConfig {
    int steps = 2000;
    int refresh_every = 500;  // regenerate synthetic pools this often
    double weight_bt = 0.25;
    double weight_st = 0.25;
    double weight_parallel = 0.25;
    double weight_mass = 0.25;
    std::string pivot;                   // pivot language tag
    std::vector<std::string> zero_resource;  // languages trained from mono only
    model::DecodeOptions decode;
    FilterRules filter_rules;
    sampler::BatchOptions batch;
    int max_mono_per_refresh = 0;  // 0 = use the full mono pool each refresh
};

struct IbtResult {
    std::vector<FilterReport> refresh_reports;
    std::vector<double> losses;
    std::vector<std::string> warnings;
};

// Fine-tunes in place. `store` holds genuine parallel + mono pools. Synthetic
// pools are regenerated from the zero-resource languages' mono data every
// refresh_every steps with the current model. When every synthetic pair of a
// task is filtered away, that task's weight is redistributed across the rest.
template <typename S>
IbtResult finetune_ibt(model::Transformer<S>& m, const sampler::CorpusStore& store, const Tokenizer& tok,
                       const IbtConfig& cfg, Rng& rng) {
    if (cfg.steps < 0) throw std::invalid_argument("finetune_ibt: negative step count");
    const double wsum = cfg.weight_bt + cfg.weight_st + cfg.weight_parallel + cfg.weight_mass;
    if (wsum <= 0.0) throw std::invalid_argument("finetune_ibt: mixture weights must sum to a positive value");

    IbtResult result;
    if (cfg.steps == 0) return result;

    // Genuine-parallel task list (both directions of every stored pair).
    std::vector<sampler::Task> parallel_tasks;
    for (const auto& [key, pool] : store.parallel) {
        if (pool.empty()) continue;
        parallel_tasks.push_back(sampler::Task::translation(key.first, key.second));
        parallel_tasks.push_back(sampler::Task::translation(key.second, key.first));
    }
    std::vector<std::string> mass_langs;
    for (const auto& [lang, pool] : store.mono)
        if (!pool.empty()) mass_langs.push_back(lang);

    // Synthetic pools keyed by (src, tgt) training direction.
    sampler::CorpusStore bt_store, st_store;

    auto subsample = [&](std::vector<std::string> lines) {
        if (cfg.max_mono_per_refresh > 0 && static_cast<int>(lines.size()) > cfg.max_mono_per_refresh) {
            // Deterministic subsample without replacement.
            for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.max_mono_per_refresh); ++i) {
                const std::size_t j = i + rng.uniform_u64(lines.size() - i);
                std::swap(lines[i], lines[j]);
            }
            lines.resize(static_cast<std::size_t>(cfg.max_mono_per_refresh));
        }
        return lines;
    };

    auto refresh_pools = [&]() {
        bt_store.parallel.clear();
        st_store.parallel.clear();
        FilterReport combined;
        const auto pivot_it = store.mono.find(cfg.pivot);
        for (const auto& xx : cfg.zero_resource) {
            auto it = store.mono.find(xx);
            if (it == store.mono.end() || it->second.empty()) {
                result.warnings.push_back("no mono data for zero-resource language " + xx);
                continue;
            }
            const auto lines = subsample(it->second);
            auto bt_raw = generate_synthetic(m, tok, lines, xx, cfg.pivot, Provenance::back_translation, cfg.decode);
            auto [bt_pairs, bt_report] = filter_synthetic(bt_raw, cfg.filter_rules);
            combined += bt_report;
            auto& bt_pool = bt_store.parallel[{cfg.pivot, xx}];
            for (auto& p : bt_pairs) bt_pool.emplace_back(p.source, p.target);

            // Back-translation of pivot mono through pivot->xx gives synthetic
            // xx sources paired with genuine pivot targets, training xx->pivot.
            if (pivot_it != store.mono.end() && !pivot_it->second.empty()) {
                const auto pv_lines = subsample(pivot_it->second);
                auto rev_raw =
                    generate_synthetic(m, tok, pv_lines, cfg.pivot, xx, Provenance::back_translation, cfg.decode);
                auto [rev_pairs, rev_report] = filter_synthetic(rev_raw, cfg.filter_rules);
                combined += rev_report;
                auto& rev_pool = bt_store.parallel[{xx, cfg.pivot}];
                for (auto& p : rev_pairs) rev_pool.emplace_back(p.source, p.target);
            }

            auto st_raw = generate_synthetic(m, tok, lines, xx, cfg.pivot, Provenance::self_training, cfg.decode);
            auto [st_pairs, st_report] = filter_synthetic(st_raw, cfg.filter_rules);
            combined += st_report;
            auto& st_pool = st_store.parallel[{xx, cfg.pivot}];
            for (auto& p : st_pairs) st_pool.emplace_back(p.source, p.target);

            if (bt_pool.empty())
                result.warnings.push_back("all back-translation pairs filtered away for " + xx +
                                          "; weight redistributed");
            if (st_pool.empty())
                result.warnings.push_back("all self-training pairs filtered away for " + xx +
                                          "; weight redistributed");
        }
        result.refresh_reports.push_back(combined);
    };

    auto pool_tasks = [](const sampler::CorpusStore& s) {
        std::vector<sampler::Task> tasks;
        for (const auto& [key, pool] : s.parallel)
            if (!pool.empty()) tasks.push_back(sampler::Task::translation(key.first, key.second));
        return tasks;
    };

    refresh_pools();
    for (int step = 0; step < cfg.steps; ++step) {
        if (step > 0 && cfg.refresh_every > 0 && step % cfg.refresh_every == 0) refresh_pools();

        const auto bt_tasks = pool_tasks(bt_store);
        const auto st_tasks = pool_tasks(st_store);
        double wb = bt_tasks.empty() ? 0.0 : cfg.weight_bt;
        double ws = st_tasks.empty() ? 0.0 : cfg.weight_st;
        double wp = parallel_tasks.empty() ? 0.0 : cfg.weight_parallel;
        double wm = mass_langs.empty() ? 0.0 : cfg.weight_mass;
        const double total = wb + ws + wp + wm;
        if (total <= 0.0) throw std::runtime_error("finetune_ibt: no task has any data");

        const double u = rng.uniform_real() * total;
        const sampler::CorpusStore* batch_store = &store;
        sampler::Task task = sampler::Task::mass(cfg.pivot);
        if (u < wb) {
            batch_store = &bt_store;
            task = bt_tasks[rng.uniform_u64(bt_tasks.size())];
        } else if (u < wb + ws) {
            batch_store = &st_store;
            task = st_tasks[rng.uniform_u64(st_tasks.size())];
        } else if (u < wb + ws + wp) {
            task = parallel_tasks[rng.uniform_u64(parallel_tasks.size())];
        } else {
            task = sampler::Task::mass(mass_langs[rng.uniform_u64(mass_langs.size())]);
        }
        const auto batch = sampler::make_batch(task, *batch_store, cfg.batch, rng, tok);
        result.losses.push_back(m.train_step(batch, rng));
    }
    return result;
}

}  // namespace mtlab::selftrain
