#pragma once

// Training-example construction for the two objectives: masked span
// reconstruction on monolingual text and tagged translation on parallel text.
// All functions are pure given their inputs and an explicit rng.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtlab/rng.hpp"
#include "mtlab/vocab.hpp"

namespace mtlab::objectives {

using vocab::Tokenizer;
using vocab::Vocabulary;

enum class MaskPolicy { always_mask, mass_80_10_10 };

struct MaskedExample {
    std::vector<int> encoder_ids;         // [<2lang>] + masked tokens + [EOS]
    std::vector<int> decoder_input_ids;   // EOS then previous fragment tokens
    std::vector<int> decoder_target_ids;  // the original span
    std::vector<int> original_positions;  // span positions, for decoder positional encoding
    int span_start = 0;
    int span_len = 0;
};

struct TranslationExample {
    std::vector<int> encoder_ids;         // source with <2tgt> prepended, EOS-terminated
    std::vector<int> decoder_input_ids;   // EOS-shifted target
    std::vector<int> decoder_target_ids;  // target + EOS
};

// Masks a contiguous span of `fraction` of the sentence. `ids` holds text
// tokens only (no tag, no EOS); the returned encoder input carries the
// language's own <2xx> tag, which signals reconstruction in that language.
inline MaskedExample mass_mask(const std::vector<int>& ids, double fraction, Rng& rng, MaskPolicy policy,
                               const std::string& lang, const Vocabulary& vocab) {
    if (ids.empty()) throw std::invalid_argument("mass_mask: empty input");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("mass_mask: fraction must be in (0, 1]");

    const int len = static_cast<int>(ids.size());
    int span_len = static_cast<int>(std::ceil(fraction * len));
    if (span_len < 1) span_len = 1;
    if (span_len > len) span_len = len;
    const int span_start = static_cast<int>(rng.uniform_int(0, len - span_len));

    MaskedExample ex;
    ex.span_start = span_start;
    ex.span_len = span_len;

    std::vector<int> masked = ids;
    for (int i = span_start; i < span_start + span_len; ++i) {
        auto& slot = masked[static_cast<std::size_t>(i)];
        if (policy == MaskPolicy::always_mask) {
            slot = Vocabulary::kMask;
        } else {
            const double u = rng.uniform_real();
            if (u < 0.8) {
                slot = Vocabulary::kMask;
            } else if (u < 0.9) {
                // Random non-special token.
                const int n_text = vocab.size() - vocab.num_specials();
                slot = vocab.num_specials() + static_cast<int>(rng.uniform_u64(static_cast<std::uint64_t>(n_text)));
            }  // else keep the original token
        }
    }

    ex.encoder_ids.push_back(vocab.tag_id(lang));
    ex.encoder_ids.insert(ex.encoder_ids.end(), masked.begin(), masked.end());
    ex.encoder_ids.push_back(Vocabulary::kEos);

    ex.decoder_target_ids.assign(ids.begin() + span_start, ids.begin() + span_start + span_len);
    // Previous-fragment-token feeding: position i is conditioned on the
    // original token at span_start + i - 1 (EOS at the span boundary).
    ex.decoder_input_ids.push_back(span_start > 0 ? ids[static_cast<std::size_t>(span_start - 1)]
                                                  : Vocabulary::kEos);
    for (int i = 1; i < span_len; ++i)
        ex.decoder_input_ids.push_back(ids[static_cast<std::size_t>(span_start + i - 1)]);
    for (int i = 0; i < span_len; ++i) ex.original_positions.push_back(span_start + i);
    return ex;
}

enum class Direction { forward, reverse };  // forward: src -> tgt as stored

inline TranslationExample make_translation_example(const std::string& src_text, const std::string& tgt_text,
                                                   const std::string& tgt_lang, const Tokenizer& tok,
                                                   int max_len = 0) {
    TranslationExample ex;
    auto source = tok.encode_text(src_text);
    auto target = tok.encode_text(tgt_text);
    if (source.empty()) throw std::invalid_argument("make_translation_example: empty source after tokenization");
    if (target.empty()) throw std::invalid_argument("make_translation_example: empty target after tokenization");
    if (max_len > 0) {
        if (static_cast<int>(source.size()) > max_len) source.resize(static_cast<std::size_t>(max_len));
        if (static_cast<int>(target.size()) > max_len) target.resize(static_cast<std::size_t>(max_len));
    }
    ex.encoder_ids.push_back(tok.vocab().tag_id(tgt_lang));
    ex.encoder_ids.insert(ex.encoder_ids.end(), source.begin(), source.end());
    ex.encoder_ids.push_back(Vocabulary::kEos);
    target.push_back(Vocabulary::kEos);
    ex.decoder_target_ids = target;
    ex.decoder_input_ids.push_back(Vocabulary::kEos);
    ex.decoder_input_ids.insert(ex.decoder_input_ids.end(), target.begin(), target.end() - 1);
    return ex;
}

// Target ids plus per-position supervision mask. Padding happens later, in
// batch assembly; at the example level every target position is supervised.
inline std::pair<std::vector<int>, std::vector<bool>> loss_targets(const MaskedExample& ex) {
    return {ex.decoder_target_ids, std::vector<bool>(ex.decoder_target_ids.size(), true)};
}

inline std::pair<std::vector<int>, std::vector<bool>> loss_targets(const TranslationExample& ex) {
    return {ex.decoder_target_ids, std::vector<bool>(ex.decoder_target_ids.size(), true)};
}

}  // namespace mtlab::objectives
