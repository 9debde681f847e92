#pragma once

// Sampling schedules (temperature-balanced parallel tasks, uniform mono
// tasks, 50/50 task mixture) and token-budgeted batch assembly.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtlab/objectives.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/vocab.hpp"

namespace mtlab::sampler {

using objectives::MaskPolicy;
using vocab::Tokenizer;
using vocab::Vocabulary;

// p_k = n_k^(1/T) / sum_j n_j^(1/T)
inline std::map<std::string, double> temperature_weights(const std::map<std::string, std::int64_t>& sizes,
                                                         double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (sizes.empty()) throw std::invalid_argument("temperature_weights: empty size map");
    std::map<std::string, double> probs;
    double total = 0.0;
    for (const auto& [k, n] : sizes) {
        if (n <= 0) throw std::invalid_argument("temperature_weights: nonpositive count for " + k);
        const double w = std::pow(static_cast<double>(n), 1.0 / temperature);
        probs[k] = w;
        total += w;
    }
    for (auto& [k, p] : probs) p /= total;
    return probs;
}

struct Task {
    enum class Kind { translation, mass };
    Kind kind = Kind::translation;
    std::string src, tgt;  // mass tasks use src as the language, tgt empty

    static Task translation(std::string src, std::string tgt) {
        return {Kind::translation, std::move(src), std::move(tgt)};
    }
    static Task mass(std::string lang) { return {Kind::mass, std::move(lang), {}}; }

    std::string label() const {
        return kind == Kind::mass ? "mass(" + src + ")" : "translation(" + src + "->" + tgt + ")";
    }
    bool operator==(const Task& o) const = default;
};

struct SamplingSchedule {
    std::vector<std::pair<Task, double>> parallel_probs;  // directed tasks
    std::vector<std::pair<std::string, double>> mono_probs;
    double mono_fraction = 0.5;

    void validate() const {
        auto check = [](const auto& probs, const char* what) {
            double total = 0.0;
            for (const auto& [k, p] : probs) {
                if (p < 0.0) throw std::invalid_argument(std::string(what) + ": negative probability");
                total += p;
            }
            if (!probs.empty() && std::abs(total - 1.0) > 1e-9)
                throw std::invalid_argument(std::string(what) + ": probabilities do not sum to 1");
        };
        check(parallel_probs, "parallel_probs");
        check(mono_probs, "mono_probs");
        if (mono_fraction < 0.0 || mono_fraction > 1.0)
            throw std::invalid_argument("mono_fraction outside [0,1]");
    }

    std::string dump_tsv() const {
        std::string out = "task\tprobability\n";
        char buf[64];
        for (const auto& [task, p] : parallel_probs) {
            std::snprintf(buf, sizeof buf, "%.10f", p * (1.0 - mono_fraction));
            out += task.label() + "\t" + buf + "\n";
        }
        for (const auto& [lang, p] : mono_probs) {
            std::snprintf(buf, sizeof buf, "%.10f", p * mono_fraction);
            out += Task::mass(lang).label() + "\t" + buf + "\n";
        }
        return out;
    }
};

// Builds the schedule from corpus sizes. Parallel pairs are temperature
// balanced and each pair's probability is split equally between its two
// directions; monolingual languages are sampled uniformly.
inline SamplingSchedule make_schedule(const std::map<std::pair<std::string, std::string>, std::int64_t>& parallel_sizes,
                                      const std::map<std::string, std::int64_t>& mono_sizes, double temperature,
                                      double mono_fraction) {
    SamplingSchedule s;
    s.mono_fraction = mono_fraction;
    if (!parallel_sizes.empty()) {
        std::map<std::string, std::int64_t> keyed;
        for (const auto& [pair, n] : parallel_sizes) keyed[pair.first + "\t" + pair.second] = n;
        auto probs = temperature_weights(keyed, temperature);
        for (const auto& [key, p] : probs) {
            const auto parts = split_on(key, '\t');
            s.parallel_probs.emplace_back(Task::translation(parts[0], parts[1]), p / 2.0);
            s.parallel_probs.emplace_back(Task::translation(parts[1], parts[0]), p / 2.0);
        }
    }
    for (const auto& [lang, n] : mono_sizes) {
        if (n <= 0) throw std::invalid_argument("make_schedule: nonpositive mono count for " + lang);
        s.mono_probs.emplace_back(lang, 1.0 / static_cast<double>(mono_sizes.size()));
    }
    s.validate();
    return s;
}

inline Task next_task(const SamplingSchedule& schedule, Rng& rng) {
    const bool pick_mono = schedule.mono_fraction > 0.0 && rng.bernoulli(schedule.mono_fraction);
    if (pick_mono) {
        if (schedule.mono_probs.empty())
            throw std::runtime_error("next_task: mono side selected but schedule has no mono corpora");
        std::vector<double> w;
        w.reserve(schedule.mono_probs.size());
        for (const auto& [lang, p] : schedule.mono_probs) w.push_back(p);
        return Task::mass(schedule.mono_probs[rng.categorical(w)].first);
    }
    if (schedule.parallel_probs.empty())
        throw std::runtime_error("next_task: parallel side selected but schedule has no parallel corpora");
    std::vector<double> w;
    w.reserve(schedule.parallel_probs.size());
    for (const auto& [task, p] : schedule.parallel_probs) w.push_back(p);
    return schedule.parallel_probs[rng.categorical(w)].first;
}

// In-memory corpus handle for batch assembly.
struct CorpusStore {
    // Keyed by (src, tgt) as stored on disk; a task in the opposite direction
    // reads the same pool with sides swapped.
    std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::string, std::string>>> parallel;
    std::map<std::string, std::vector<std::string>> mono;

    const std::vector<std::pair<std::string, std::string>>* find_pair(const std::string& a, const std::string& b,
                                                                      bool& swapped) const {
        if (auto it = parallel.find({a, b}); it != parallel.end()) {
            swapped = false;
            return &it->second;
        }
        if (auto it = parallel.find({b, a}); it != parallel.end()) {
            swapped = true;
            return &it->second;
        }
        return nullptr;
    }
};

struct Batch {
    Task task;
    std::vector<std::vector<int>> encoder_ids;
    std::vector<std::vector<int>> decoder_input_ids;
    std::vector<std::vector<int>> decoder_target_ids;
    std::vector<std::vector<int>> decoder_positions;
    std::vector<std::vector<bool>> loss_mask;  // aligned with decoder_target_ids
    std::vector<int> enc_lengths, dec_lengths;

    std::size_t rows() const { return encoder_ids.size(); }

    std::int64_t supervised_tokens() const {
        std::int64_t n = 0;
        for (const auto& row : loss_mask)
            for (bool b : row) n += b ? 1 : 0;
        return n;
    }
};

struct BatchOptions {
    int batch_size_tokens = 4096;
    int max_len = 64;
    double mass_fraction = 0.5;
    MaskPolicy mask_policy = MaskPolicy::mass_80_10_10;
};

namespace detail {

inline void pad_to_rect(std::vector<std::vector<int>>& rows, int width) {
    for (auto& r : rows) r.resize(static_cast<std::size_t>(width), Vocabulary::kPad);
}

inline void finalize(Batch& b) {
    int enc_w = 0, dec_w = 0;
    for (const auto& r : b.encoder_ids) enc_w = std::max(enc_w, static_cast<int>(r.size()));
    for (const auto& r : b.decoder_target_ids) dec_w = std::max(dec_w, static_cast<int>(r.size()));
    pad_to_rect(b.encoder_ids, enc_w);
    for (std::size_t i = 0; i < b.rows(); ++i) {
        b.loss_mask.emplace_back(b.decoder_target_ids[i].size(), true);
        b.loss_mask.back().resize(static_cast<std::size_t>(dec_w), false);
        // Pad decoder positions by continuing past the last real position so
        // sinusoidal lookups stay in range.
        auto& pos = b.decoder_positions[i];
        int next = pos.empty() ? 0 : pos.back() + 1;
        while (static_cast<int>(pos.size()) < dec_w) pos.push_back(next++);
    }
    pad_to_rect(b.decoder_input_ids, dec_w);
    pad_to_rect(b.decoder_target_ids, dec_w);
}

}  // namespace detail

// Packs examples for `task` until adding another would exceed the token
// budget on either the encoder or the decoder side.
inline Batch make_batch(const Task& task, const CorpusStore& store, const BatchOptions& opt, Rng& rng,
                        const Tokenizer& tok) {
    Batch batch;
    batch.task = task;
    std::int64_t enc_tokens = 0, dec_tokens = 0;

    auto push = [&](std::vector<int> enc, std::vector<int> dec_in, std::vector<int> dec_tgt,
                    std::vector<int> dec_pos) {
        const auto e = static_cast<std::int64_t>(enc.size());
        const auto d = static_cast<std::int64_t>(dec_tgt.size());
        if (!batch.encoder_ids.empty() &&
            (enc_tokens + e > opt.batch_size_tokens || dec_tokens + d > opt.batch_size_tokens))
            return false;
        enc_tokens += e;
        dec_tokens += d;
        batch.enc_lengths.push_back(static_cast<int>(e));
        batch.dec_lengths.push_back(static_cast<int>(d));
        batch.encoder_ids.push_back(std::move(enc));
        batch.decoder_input_ids.push_back(std::move(dec_in));
        batch.decoder_target_ids.push_back(std::move(dec_tgt));
        batch.decoder_positions.push_back(std::move(dec_pos));
        return true;
    };

    if (task.kind == Task::Kind::mass) {
        auto it = store.mono.find(task.src);
        if (it == store.mono.end() || it->second.empty())
            throw std::runtime_error("make_batch: no mono corpus for " + task.src);
        const auto& pool = it->second;
        for (;;) {
            const auto& text = pool[rng.uniform_u64(pool.size())];
            auto ids = tok.encode_text(text);
            if (ids.empty()) continue;
            if (static_cast<int>(ids.size()) > opt.max_len) ids.resize(static_cast<std::size_t>(opt.max_len));
            auto ex = objectives::mass_mask(ids, opt.mass_fraction, rng, opt.mask_policy, task.src, tok.vocab());
            if (!push(std::move(ex.encoder_ids), std::move(ex.decoder_input_ids), std::move(ex.decoder_target_ids),
                      std::move(ex.original_positions)))
                break;
        }
    } else {
        bool swapped = false;
        const auto* pool = store.find_pair(task.src, task.tgt, swapped);
        if (!pool || pool->empty())
            throw std::runtime_error("make_batch: no parallel corpus for " + task.label());
        for (;;) {
            const auto& pair = (*pool)[rng.uniform_u64(pool->size())];
            const std::string& src_text = swapped ? pair.second : pair.first;
            const std::string& tgt_text = swapped ? pair.first : pair.second;
            if (trim(src_text).empty() || trim(tgt_text).empty()) continue;
            auto ex = objectives::make_translation_example(src_text, tgt_text, task.tgt, tok, opt.max_len);
            std::vector<int> pos(ex.decoder_target_ids.size());
            for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
            if (!push(std::move(ex.encoder_ids), std::move(ex.decoder_input_ids), std::move(ex.decoder_target_ids),
                      std::move(pos)))
                break;
        }
    }
    detail::finalize(batch);
    return batch;
}

}  // namespace mtlab::sampler
