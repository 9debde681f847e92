#pragma once

// Experiment harness: builds synthetic translation worlds, trains models with
// the co-training mixture, runs named scenarios (E1..E7, F2) and emits CSV
// results plus SVG scatter plots.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mtlab/corpus.hpp"
#include "mtlab/datafilter.hpp"
#include "mtlab/eval.hpp"
#include "mtlab/model.hpp"
#include "mtlab/objectives.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/sampler.hpp"
#include "mtlab/selftrain.hpp"
#include "mtlab/vocab.hpp"

namespace mtlab::harness {

using PairKey = std::pair<std::string, std::string>;

// ---------------------------------------------------------------------------
// Worlds
// ---------------------------------------------------------------------------

struct WorldConfig {
    std::uint64_t seed = 1;
    std::string pivot;
    std::vector<corpus::LanguageSpec> languages;  // includes the pivot

    corpus::DomainSpec mono_domain = corpus::desk_domain();
    corpus::DomainSpec parallel_domain = corpus::desk_domain();
    corpus::DomainSpec eval_domain = corpus::desk_domain();

    std::map<std::string, int> mono_counts;     // lang -> mono lines (absent = none)
    std::map<PairKey, int> parallel_counts;     // (src, tgt) -> pairs (absent = none)
    int dev_per_pair = 64;
    int test_per_pair = 128;

    int vocab_size = 512;
    vocab::Mode vocab_mode = vocab::Mode::bpe;
    int max_piece_chars = 0;  // 0 = unlimited; small caps keep related languages' subwords aligned
};

struct World {
    WorldConfig cfg;
    std::map<std::string, corpus::Language> langs;
    sampler::CorpusStore store;  // training data only
    std::map<PairKey, std::vector<std::pair<std::string, std::string>>> dev, test;
    vocab::Tokenizer tok;

    corpus::Language& lang(const std::string& tag) {
        auto it = langs.find(tag);
        if (it == langs.end()) throw std::invalid_argument("unknown language: " + tag);
        return it->second;
    }

    std::map<std::string, std::int64_t> mono_sizes() const {
        std::map<std::string, std::int64_t> out;
        for (const auto& [lang, pool] : store.mono) out[lang] = static_cast<std::int64_t>(pool.size());
        return out;
    }
    std::map<PairKey, std::int64_t> parallel_sizes() const {
        std::map<PairKey, std::int64_t> out;
        for (const auto& [key, pool] : store.parallel) out[key] = static_cast<std::int64_t>(pool.size());
        return out;
    }
};

// Builds every corpus deterministically from the world seed; dev/test splits
// use seeds disjoint from training data.
inline World build_world(const WorldConfig& cfg) {
    World w;
    w.cfg = cfg;
    for (const auto& spec : cfg.languages) w.langs.emplace(spec.tag, corpus::Language(spec));
    if (!w.langs.count(cfg.pivot)) throw std::invalid_argument("pivot language missing from language list");

    for (const auto& [lang, n] : cfg.mono_counts) {
        auto& L = w.lang(lang);
        const auto concepts = corpus::gen_interlingua(cfg.mono_domain, n, derive_seed(cfg.seed, "mono/" + lang));
        auto& pool = w.store.mono[lang];
        pool.reserve(concepts.size());
        for (const auto& c : concepts) pool.push_back(L.realize(c));
    }
    for (const auto& [key, n] : cfg.parallel_counts) {
        auto& src = w.lang(key.first);
        auto& tgt = w.lang(key.second);
        const auto concepts =
            corpus::gen_interlingua(cfg.parallel_domain, n, derive_seed(cfg.seed, "par/" + key.first + "-" + key.second));
        auto& pool = w.store.parallel[key];
        pool.reserve(concepts.size());
        for (const auto& c : concepts) pool.emplace_back(src.realize(c), tgt.realize(c));
    }
    // Dev/test: generated for every ordered pair involving the pivot.
    for (const auto& spec : cfg.languages) {
        if (spec.tag == cfg.pivot) continue;
        auto& xx = w.lang(spec.tag);
        auto& pv = w.lang(cfg.pivot);
        for (int split = 0; split < 2; ++split) {
            const std::string name = split == 0 ? "dev" : "test";
            const int n = split == 0 ? cfg.dev_per_pair : cfg.test_per_pair;
            const auto concepts =
                corpus::gen_interlingua(cfg.eval_domain, n, derive_seed(cfg.seed, name + "/" + spec.tag));
            auto& fwd = (split == 0 ? w.dev : w.test)[{spec.tag, cfg.pivot}];
            auto& bwd = (split == 0 ? w.dev : w.test)[{cfg.pivot, spec.tag}];
            for (const auto& c : concepts) {
                const std::string sx = xx.realize(c);
                const std::string sp = pv.realize(c);
                fwd.emplace_back(sx, sp);
                bwd.emplace_back(sp, sx);
            }
        }
    }
    // Tokenizer trained on all training-side text.
    std::vector<std::string> lines;
    for (const auto& [lang, pool] : w.store.mono) lines.insert(lines.end(), pool.begin(), pool.end());
    for (const auto& [key, pool] : w.store.parallel)
        for (const auto& [s, t] : pool) {
            lines.push_back(s);
            lines.push_back(t);
        }
    std::vector<std::string> tags;
    for (const auto& spec : cfg.languages) tags.push_back(spec.tag);
    w.tok = vocab::train_vocab(lines, tags, cfg.vocab_size, cfg.vocab_mode, cfg.max_piece_chars);
    return w;
}

// The standard desk world: one pivot plus two families. Family members share
// stems (same lexicon seed and alphabet) and differ by a per-word suffix, so
// subword units transfer across family mates.
inline std::vector<corpus::LanguageSpec> default_languages() {
    std::vector<corpus::LanguageSpec> specs;
    corpus::LanguageSpec pv;
    pv.tag = "pv";
    pv.lexicon_seed = 11;
    pv.order_transform = corpus::OrderTransform::identity;
    pv.family_id = "piv";
    pv.alphabet_id = "argic";
    specs.push_back(pv);
    const std::vector<std::pair<std::string, std::string>> rom = {
        {"ra", "si"}, {"rb", "zu"}, {"rc", "ri"}, {"rd", "lu"}, {"re", "zi"}};
    for (const auto& [tag, suffix] : rom) {
        corpus::LanguageSpec s;
        s.tag = tag;
        s.lexicon_seed = 22;  // shared within the family
        s.order_transform = corpus::OrderTransform::reverse;
        s.suffix = suffix;
        s.family_id = "rom";
        s.alphabet_id = "belic";
        specs.push_back(s);
    }
    const std::vector<std::pair<std::string, std::string>> tur = {{"ta", "be"}, {"tb", "de"}};
    for (const auto& [tag, suffix] : tur) {
        corpus::LanguageSpec s;
        s.tag = tag;
        s.lexicon_seed = 33;  // shared within the family
        s.order_transform = corpus::OrderTransform::swap_adjacent;
        s.suffix = suffix;
        s.family_id = "tur";
        s.alphabet_id = "carel";
        specs.push_back(s);
    }
    return specs;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainParams {
    model::ModelConfig model;  // vocab_size is filled in from the world
    model::OptimizerConfig optim;
    sampler::BatchOptions batch;
    int steps = 1500;
    int dev_every = 200;
    bool pick_best_by_dev = true;
    bool pick_by_bleu = false;  // dev BLEU instead of dev loss for checkpoint picking
    double temperature = 5.0;
    double mono_fraction = 0.5;
    std::uint64_t seed = 1;
    std::vector<PairKey> dev_pairs;  // directions used for dev scoring; empty = all dev pairs

    TrainParams() {
        model.layers_enc = 2;
        model.layers_dec = 2;
        model.d_model = 64;
        model.heads = 4;
        model.d_ff = 128;
        model.max_positions = 96;
        model.dropout_rate = 0.0;  // desk-scale runs are short; dropout only slows convergence
        model.label_smoothing = 0.1;
        optim.peak_lr = 3e-3;
        optim.warmup_steps = 300;
        batch.batch_size_tokens = 768;
        batch.max_len = 48;
    }
};

struct TrainLog {
    std::vector<double> losses;
    std::vector<std::pair<int, double>> dev_losses;  // (step, dev metric)
    int best_step = 0;
};

// Deterministic dev loss: mean label-smoothed cross-entropy over the given
// dev translation pairs.
template <typename S>
double dev_loss(model::Transformer<S>& m, World& w, const std::vector<PairKey>& pairs,
                const sampler::BatchOptions& bopt) {
    double total = 0.0;
    std::int64_t tokens = 0;
    for (const auto& key : pairs) {
        auto it = w.dev.find(key);
        if (it == w.dev.end()) throw std::invalid_argument("no dev set for pair " + key.first + "-" + key.second);
        sampler::Batch batch;
        batch.task = sampler::Task::translation(key.first, key.second);
        for (const auto& [src, tgt] : it->second) {
            auto ex = objectives::make_translation_example(src, tgt, key.second, w.tok, bopt.max_len);
            batch.encoder_ids.push_back(ex.encoder_ids);
            batch.decoder_input_ids.push_back(ex.decoder_input_ids);
            batch.decoder_target_ids.push_back(ex.decoder_target_ids);
            std::vector<int> pos(ex.decoder_input_ids.size());
            for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
            batch.decoder_positions.push_back(std::move(pos));
            batch.enc_lengths.push_back(static_cast<int>(ex.encoder_ids.size()));
            batch.dec_lengths.push_back(static_cast<int>(ex.decoder_input_ids.size()));
            if (batch.rows() >= 32) {
                sampler::detail::finalize(batch);
                const auto st = m.forward_loss(batch, model::Mode::eval);
                total += st.loss * static_cast<double>(st.tokens);
                tokens += st.tokens;
                batch = sampler::Batch{};
                batch.task = sampler::Task::translation(key.first, key.second);
            }
        }
        if (batch.rows() > 0) {
            sampler::detail::finalize(batch);
            const auto st = m.forward_loss(batch, model::Mode::eval);
            total += st.loss * static_cast<double>(st.tokens);
            tokens += st.tokens;
        }
    }
    if (tokens == 0) throw std::runtime_error("dev_loss: no dev tokens");
    return total / static_cast<double>(tokens);
}

// Decodes one test/dev pair and scores it.
template <typename S>
eval::EvalRow evaluate_pair(model::Transformer<S>& m, World& w, const PairKey& key, bool use_test = true,
                            const model::DecodeOptions& dopt = {.beam = 1, .max_len = 48},
                            const std::string& checkpoint_id = "in-memory") {
    const auto& sets = use_test ? w.test : w.dev;
    auto it = sets.find(key);
    if (it == sets.end()) throw std::invalid_argument("no eval set for pair " + key.first + "-" + key.second);
    const auto banned = selftrain::decode_banned_ids(w.tok.vocab());
    std::vector<std::string> hyps, refs;
    for (const auto& [src, tgt] : it->second) {
        const auto ids = w.tok.encode(src, key.second);
        hyps.push_back(w.tok.decode(m.decode(ids, dopt, banned).ids));
        refs.push_back(tgt);
    }
    eval::BleuOptions bopt;
    bopt.smooth = true;  // tiny eval sets: avoid hard zeros from one bad order
    return eval::score_pair(key.first, key.second, hyps, refs,
                            dopt.beam > 1 ? "beam" + std::to_string(dopt.beam) : "greedy", checkpoint_id, bopt);
}

template <typename S>
TrainLog train_model(model::Transformer<S>& m, World& w, const TrainParams& params) {
    std::vector<PairKey> dev_pairs = params.dev_pairs;
    if (dev_pairs.empty())
        for (const auto& [key, pool] : w.dev) dev_pairs.push_back(key);

    const auto schedule = sampler::make_schedule(w.parallel_sizes(), w.mono_sizes(), params.temperature,
                                                 w.store.mono.empty() ? 0.0 : params.mono_fraction);
    Rng rng(derive_seed(params.seed, "train"));
    TrainLog log;
    double best_metric = std::numeric_limits<double>::infinity();
    std::vector<typename model::Transformer<S>::Mat> best_params;

    auto consider_checkpoint = [&](int step) {
        double metric;
        if (params.pick_by_bleu) {
            double bleu_sum = 0.0;
            for (const auto& key : dev_pairs) bleu_sum += evaluate_pair(m, w, key, /*use_test=*/false).bleu;
            metric = -bleu_sum;  // lower is better
        } else {
            metric = dev_loss(m, w, dev_pairs, params.batch);
        }
        log.dev_losses.emplace_back(step, metric);
        if (params.pick_best_by_dev && metric < best_metric) {
            best_metric = metric;
            log.best_step = step;
            best_params.clear();
            for (const auto& t : m.tensors()) best_params.push_back(t.value);
        }
    };

    for (int step = 1; step <= params.steps; ++step) {
        const auto task = sampler::next_task(schedule, rng);
        const auto batch = sampler::make_batch(task, w.store, params.batch, rng, w.tok);
        log.losses.push_back(m.train_step(batch, rng));
        if (params.dev_every > 0 && (step % params.dev_every == 0 || step == params.steps)) consider_checkpoint(step);
    }
    if (params.pick_best_by_dev && !best_params.empty()) {
        auto& ts = m.tensors();
        for (std::size_t i = 0; i < ts.size(); ++i) ts[i].value = best_params[i];
    }
    return log;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct ResultRow {
    std::string scenario;
    std::string sub_run;
    std::string src_lang, tgt_lang;
    double bleu = 0.0;
    double chrf = 0.0;
    int sentences = 0;
    std::int64_t mono_size = 0;      // mono lines available for src (or tgt) language
    std::int64_t parallel_size = 0;  // genuine parallel pairs for this language
    int steps = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string status = "ok";
};

inline std::string results_to_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    out << "scenario,sub_run,src_lang,tgt_lang,bleu,chrf,sentences,mono_size,parallel_size,steps,seed,config_hash,"
           "status\n";
    out.setf(std::ios::fixed);
    out.precision(2);
    for (const auto& r : rows)
        out << r.scenario << ',' << r.sub_run << ',' << r.src_lang << ',' << r.tgt_lang << ',' << r.bleu << ','
            << r.chrf << ',' << r.sentences << ',' << r.mono_size << ',' << r.parallel_size << ',' << r.steps << ','
            << r.seed << ',' << r.config_hash << ',' << r.status << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string scenario;  // E1..E7 or F2
    std::string out_dir = ".";
    std::uint64_t seed = 1;

    // Scale knobs shared by the scenarios.
    int parallel_per_pair = 3000;
    int mono_per_lang = 3000;
    int steps_stage1 = 4000;
    int steps_ibt = 3000;
    int ibt_refresh_every = 300;
    int ibt_mono_per_refresh = 512;
    int test_per_pair = 128;
    int dev_per_pair = 64;
    int vocab_size = 160;
    int max_piece_chars = 4;
    TrainParams train;

    std::string hash() const {
        std::ostringstream s;
        s << scenario << '|' << seed << '|' << parallel_per_pair << '|' << mono_per_lang << '|' << steps_stage1 << '|'
          << steps_ibt << '|' << ibt_refresh_every << '|' << ibt_mono_per_refresh << '|' << test_per_pair << '|'
          << dev_per_pair << '|' << vocab_size << '|' << max_piece_chars << '|' << train.steps << '|' << train.model.d_model << '|'
          << train.model.layers_enc << '|' << train.model.d_ff << '|' << train.batch.batch_size_tokens << '|'
          << train.temperature << '|' << train.mono_fraction;
        std::ostringstream hex;
        hex << std::hex << fnv1a(s.str());
        return hex.str();
    }
};

// A world where `supervised` languages have pivot parallel data, every listed
// language has mono data, and `zero_resource` has mono only.
inline WorldConfig scenario_world(const ExperimentConfig& cfg, const std::vector<std::string>& supervised,
                                  const std::vector<std::string>& mono_langs,
                                  std::optional<int> parallel_override = std::nullopt) {
    WorldConfig w;
    w.seed = derive_seed(cfg.seed, "world");
    w.pivot = "pv";
    w.languages = default_languages();
    w.vocab_size = cfg.vocab_size;
    w.max_piece_chars = cfg.max_piece_chars;
    w.dev_per_pair = cfg.dev_per_pair;
    w.test_per_pair = cfg.test_per_pair;
    const int per_pair = parallel_override.value_or(cfg.parallel_per_pair);
    for (const auto& lang : supervised) w.parallel_counts[{lang, "pv"}] = per_pair;
    for (const auto& lang : mono_langs) w.mono_counts[lang] = cfg.mono_per_lang;
    return w;
}

template <typename S = float>
struct ScenarioRun {
    World world;
    model::Transformer<S> model;
    TrainLog log;
};

// Builds a world, trains a stage-1 model with the co-training mixture.
inline ScenarioRun<float> run_stage1(const ExperimentConfig& cfg, const WorldConfig& wcfg,
                                     const std::vector<PairKey>& dev_pairs = {}) {
    World w = build_world(wcfg);
    TrainParams tp = cfg.train;
    tp.steps = cfg.steps_stage1;
    tp.seed = derive_seed(cfg.seed, "stage1");
    tp.model.vocab_size = w.tok.vocab().size();
    tp.model.seed = derive_seed(cfg.seed, "init");
    tp.dev_pairs = dev_pairs;
    model::TransformerF m(tp.model, tp.optim);
    TrainLog log = train_model(m, w, tp);
    return {std::move(w), std::move(m), std::move(log)};
}

inline selftrain::IbtConfig make_ibt_config(const ExperimentConfig& cfg, const std::vector<std::string>& zero_resource) {
    selftrain::IbtConfig ic;
    ic.steps = cfg.steps_ibt;
    ic.refresh_every = cfg.ibt_refresh_every;
    ic.max_mono_per_refresh = cfg.ibt_mono_per_refresh;
    ic.pivot = "pv";
    ic.zero_resource = zero_resource;
    ic.batch = cfg.train.batch;
    ic.decode.max_len = cfg.train.batch.max_len;
    return ic;
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

namespace detail {

// Checkpoint picking must not see the zero-resource direction, so dev pairs
// for zero-resource runs come from the supervised languages only.
inline std::vector<PairKey> sup_dev_pairs(const std::vector<std::string>& supervised) {
    std::vector<PairKey> pairs;
    for (const auto& l : supervised) pairs.push_back({l, "pv"});
    return pairs;
}

inline ResultRow row_from_eval(const ExperimentConfig& cfg, const std::string& sub_run, const eval::EvalRow& e,
                               World& w, int steps) {
    ResultRow r;
    r.scenario = cfg.scenario;
    r.sub_run = sub_run;
    r.src_lang = e.src_lang;
    r.tgt_lang = e.tgt_lang;
    r.bleu = e.bleu;
    r.chrf = e.chrf;
    r.sentences = e.sentences;
    const std::string& xx = e.src_lang == "pv" ? e.tgt_lang : e.src_lang;
    if (auto it = w.store.mono.find(xx); it != w.store.mono.end())
        r.mono_size = static_cast<std::int64_t>(it->second.size());
    for (const auto& [key, pool] : w.store.parallel)
        if (key.first == xx || key.second == xx) r.parallel_size += static_cast<std::int64_t>(pool.size());
    r.steps = steps;
    r.seed = cfg.seed;
    r.config_hash = cfg.hash();
    return r;
}

}  // namespace detail

// E1: zero-resource vs supervised. Trains (a) a supervised model on the
// zero-resource language's family mate and (b) a co-trained model where "rc"
// has mono only; evaluates both directions.
inline std::vector<ResultRow> scenario_e1(const ExperimentConfig& cfg) {
    std::vector<ResultRow> rows;
    // Supervised reference: ra <-> pv with parallel data.
    {
        auto wcfg = scenario_world(cfg, {"ra"}, {});
        auto run = run_stage1(cfg, wcfg, {{"ra", "pv"}});
        rows.push_back(detail::row_from_eval(cfg, "supervised", evaluate_pair(run.model, run.world, {"ra", "pv"}),
                                             run.world, cfg.steps_stage1));
        rows.push_back(detail::row_from_eval(cfg, "supervised", evaluate_pair(run.model, run.world, {"pv", "ra"}),
                                             run.world, cfg.steps_stage1));
    }
    // Zero-resource: parallel for ra,rb,ta,tb; mono only for rc.
    {
        auto wcfg = scenario_world(cfg, {"ra", "rb", "ta", "tb"}, {"pv", "ra", "rb", "rc", "ta", "tb"});
        auto run = run_stage1(cfg, wcfg, {{"ra", "pv"}, {"rb", "pv"}});
        rows.push_back(detail::row_from_eval(cfg, "zero_resource", evaluate_pair(run.model, run.world, {"rc", "pv"}),
                                             run.world, cfg.steps_stage1));
        rows.push_back(detail::row_from_eval(cfg, "zero_resource", evaluate_pair(run.model, run.world, {"pv", "rc"}),
                                             run.world, cfg.steps_stage1));
    }
    return rows;
}

// E2: supervised-language count sweep at fixed total parallel examples. The
// sweep expands within the zero-resource language's family so the count axis
// is not confounded with family composition, and every sub-run carries the
// same mono data (pivot + whole family) so only the supervision structure
// varies.
inline std::vector<ResultRow> scenario_e2(const ExperimentConfig& cfg) {
    std::vector<ResultRow> rows;
    const std::vector<std::vector<std::string>> sweeps = {{"ra"}, {"ra", "rb"}, {"ra", "rb", "rd", "re"}};
    const std::vector<std::string> mono = {"pv", "ra", "rb", "rc", "rd", "re"};
    const int total_parallel = cfg.parallel_per_pair * 4;
    for (const auto& supervised : sweeps) {
        auto wcfg =
            scenario_world(cfg, supervised, mono, total_parallel / static_cast<int>(supervised.size()));
        auto run = run_stage1(cfg, wcfg, detail::sup_dev_pairs(supervised));
        const std::string sub = "supervised_" + std::to_string(supervised.size());
        rows.push_back(detail::row_from_eval(cfg, sub, evaluate_pair(run.model, run.world, {"rc", "pv"}), run.world,
                                             cfg.steps_stage1));
    }
    return rows;
}

// E3: supervised/self-supervised trade at fixed per-language parallel size;
// the pivot and the whole family always carry mono data (self-supervised).
inline std::vector<ResultRow> scenario_e3(const ExperimentConfig& cfg) {
    std::vector<ResultRow> rows;
    const std::vector<std::vector<std::string>> sweeps = {{"ra"}, {"ra", "rb"}, {"ra", "rb", "rd", "re"}};
    const std::vector<std::string> mono = {"pv", "ra", "rb", "rc", "rd", "re"};
    for (const auto& supervised : sweeps) {
        auto wcfg = scenario_world(cfg, supervised, mono);
        auto run = run_stage1(cfg, wcfg, detail::sup_dev_pairs(supervised));
        const std::string sub = "supervised_" + std::to_string(supervised.size());
        rows.push_back(detail::row_from_eval(cfg, sub, evaluate_pair(run.model, run.world, {"rc", "pv"}), run.world,
                                             cfg.steps_stage1));
    }
    return rows;
}

// E4: family similarity — supervise with the zero-resource language's family
// mate vs a different-family language.
inline std::vector<ResultRow> scenario_e4(const ExperimentConfig& cfg) {
    std::vector<ResultRow> rows;
    const std::vector<std::pair<std::string, std::string>> arms = {{"same_family", "ra"}, {"diff_family", "ta"}};
    for (const auto& [name, supervised] : arms) {
        auto wcfg = scenario_world(cfg, {supervised}, {"pv", supervised, "rc"});
        auto run = run_stage1(cfg, wcfg, {{supervised, "pv"}});
        rows.push_back(detail::row_from_eval(cfg, name, evaluate_pair(run.model, run.world, {"rc", "pv"}), run.world,
                                             cfg.steps_stage1));
    }
    return rows;
}

// E5: mono-size sweep for the zero-resource language (feeds the F2 scatter).
inline std::vector<ResultRow> scenario_e5(const ExperimentConfig& cfg) {
    std::vector<ResultRow> rows;
    const std::vector<int> mono_sizes = {cfg.mono_per_lang / 16, cfg.mono_per_lang / 4, cfg.mono_per_lang};
    for (int n : mono_sizes) {
        auto wcfg = scenario_world(cfg, {"ra", "rb", "ta", "tb"}, {"pv", "ra", "rb", "ta", "tb"});
        wcfg.mono_counts["rc"] = n;
        auto run = run_stage1(cfg, wcfg, {{"ra", "pv"}, {"rb", "pv"}});
        rows.push_back(detail::row_from_eval(cfg, "mono_" + std::to_string(n),
                                             evaluate_pair(run.model, run.world, {"rc", "pv"}), run.world,
                                             cfg.steps_stage1));
    }
    return rows;
}

// E6: domain-mismatch grid. Eval domain fixed; training mono domain and
// parallel domain each vary over {matched, mismatched}.
inline std::vector<ResultRow> scenario_e6(const ExperimentConfig& cfg) {
    std::vector<ResultRow> rows;
    const corpus::DomainSpec matched = corpus::desk_domain();
    const corpus::DomainSpec mismatched = corpus::bible_domain();
    for (int mono_matched = 1; mono_matched >= 0; --mono_matched) {
        for (int par_matched = 1; par_matched >= 0; --par_matched) {
            auto wcfg = scenario_world(cfg, {"ra", "rb", "ta", "tb"}, {"pv", "ra", "rb", "rc", "ta", "tb"});
            wcfg.mono_domain = mono_matched ? matched : mismatched;
            wcfg.parallel_domain = par_matched ? matched : mismatched;
            wcfg.eval_domain = matched;
            auto run = run_stage1(cfg, wcfg, {{"ra", "pv"}, {"rb", "pv"}});
            const std::string sub = std::string("mono_") + (mono_matched ? "match" : "mismatch") + "_par_" +
                                    (par_matched ? "match" : "mismatch");
            rows.push_back(detail::row_from_eval(cfg, sub, evaluate_pair(run.model, run.world, {"rc", "pv"}),
                                                 run.world, cfg.steps_stage1));
        }
    }
    return rows;
}

// E7: objective-stacking strategies on the zero-resource pair.
inline std::vector<ResultRow> scenario_e7(const ExperimentConfig& cfg) {
    std::vector<ResultRow> rows;
    const std::vector<std::string> supervised = {"ra", "rb", "ta", "tb"};
    const std::vector<std::string> mono = {"pv", "ra", "rb", "rc", "ta", "tb"};

    // (a) pretrain on mono only, then fine-tune on parallel only.
    {
        auto wcfg = scenario_world(cfg, supervised, mono);
        World w = build_world(wcfg);
        TrainParams tp = cfg.train;
        tp.model.vocab_size = w.tok.vocab().size();
        tp.model.seed = derive_seed(cfg.seed, "init");
        tp.dev_pairs = {{"ra", "pv"}, {"rb", "pv"}};

        // Phase 1: MASS only.
        World mass_only = w;  // shares generated data; store view restricted below
        mass_only.store.parallel.clear();
        tp.steps = cfg.steps_stage1 / 2;
        tp.seed = derive_seed(cfg.seed, "pretrain");
        tp.mono_fraction = 1.0;
        model::TransformerF m(tp.model, tp.optim);
        train_model(m, mass_only, tp);
        // Phase 2: translation only.
        World par_only = w;
        par_only.store.mono.clear();
        tp.steps = cfg.steps_stage1 - cfg.steps_stage1 / 2;
        tp.seed = derive_seed(cfg.seed, "finetune");
        tp.mono_fraction = 0.0;
        train_model(m, par_only, tp);
        rows.push_back(detail::row_from_eval(cfg, "pretrain_finetune", evaluate_pair(m, w, {"rc", "pv"}), w,
                                             cfg.steps_stage1));
        rows.push_back(detail::row_from_eval(cfg, "pretrain_finetune", evaluate_pair(m, w, {"pv", "rc"}), w,
                                             cfg.steps_stage1));
    }

    // (b) co-training, then IBT variants on top of the shared checkpoint.
    {
        auto wcfg = scenario_world(cfg, supervised, mono);
        auto run = run_stage1(cfg, wcfg, detail::sup_dev_pairs(supervised));
        rows.push_back(detail::row_from_eval(cfg, "cotrain", evaluate_pair(run.model, run.world, {"rc", "pv"}),
                                             run.world, cfg.steps_stage1));
        rows.push_back(detail::row_from_eval(cfg, "cotrain", evaluate_pair(run.model, run.world, {"pv", "rc"}),
                                             run.world, cfg.steps_stage1));

        auto run_ibt = [&](const std::string& name, bool keep_parallel_mono) {
            model::TransformerF m = run.model;  // copy of the stage-1 checkpoint
            auto ic = make_ibt_config(cfg, {"rc"});
            if (!keep_parallel_mono) {
                ic.weight_parallel = 0.0;
                ic.weight_mass = 0.0;
                ic.weight_bt = 0.5;
                ic.weight_st = 0.5;
            }
            Rng rng(derive_seed(cfg.seed, "ibt/" + name));
            selftrain::finetune_ibt(m, run.world.store, run.world.tok, ic, rng);
            rows.push_back(detail::row_from_eval(cfg, name, evaluate_pair(m, run.world, {"rc", "pv"}), run.world,
                                                 cfg.steps_stage1 + cfg.steps_ibt));
            rows.push_back(detail::row_from_eval(cfg, name, evaluate_pair(m, run.world, {"pv", "rc"}), run.world,
                                                 cfg.steps_stage1 + cfg.steps_ibt));
        };
        run_ibt("cotrain_ibt_full", true);
        run_ibt("cotrain_ibt_only", false);
    }
    return rows;
}

// F2: metric-vs-mono-size scatter built from the E5 sweep.
inline std::vector<ResultRow> scenario_f2(const ExperimentConfig& cfg) {
    ExperimentConfig sub = cfg;
    sub.scenario = "F2";
    return scenario_e5(sub);
}

inline std::vector<ResultRow> run_scenario(const ExperimentConfig& cfg) {
    if (cfg.scenario == "E1") return scenario_e1(cfg);
    if (cfg.scenario == "E2") return scenario_e2(cfg);
    if (cfg.scenario == "E3") return scenario_e3(cfg);
    if (cfg.scenario == "E4") return scenario_e4(cfg);
    if (cfg.scenario == "E5") return scenario_e5(cfg);
    if (cfg.scenario == "E6") return scenario_e6(cfg);
    if (cfg.scenario == "E7") return scenario_e7(cfg);
    if (cfg.scenario == "F2") return scenario_f2(cfg);
    throw std::invalid_argument("unknown scenario: " + cfg.scenario);
}

// Runs a scenario and writes its CSV; on failure, preserves partial results
// with a failure marker row, then rethrows.
inline std::string run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::string path = (fs::path(cfg.out_dir) / (cfg.scenario + "_results.csv")).string();
    std::vector<ResultRow> rows;
    try {
        rows = run_scenario(cfg);
    } catch (const std::exception& e) {
        ResultRow marker;
        marker.scenario = cfg.scenario;
        marker.sub_run = "FAILED";
        marker.src_lang = marker.tgt_lang = "-";
        marker.sentences = 1;
        marker.seed = cfg.seed;
        marker.config_hash = cfg.hash();
        marker.status = std::string("failed: ") + e.what();
        rows.push_back(marker);
        write_file(path, results_to_csv(rows));
        throw;
    }
    write_file(path, results_to_csv(rows));
    return path;
}

// ---------------------------------------------------------------------------
// Scatter plot
// ---------------------------------------------------------------------------

// Static SVG scatter with log-scaled x; labels come from `label_col`.
// Byte-stable for identical CSV input.
inline std::string plot_scatter(const std::string& csv, const std::string& x_col = "mono_size",
                                const std::string& y_col = "bleu", const std::string& label_col = "src_lang") {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line.empty()) throw std::invalid_argument("plot_scatter: empty CSV");
    const auto header = split_on(line, ',');
    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw std::invalid_argument("plot_scatter: missing column " + name);
    };
    const int xi = col(x_col), yi = col(y_col), li = col(label_col);

    struct Point {
        double x, y;
        std::string label;
    };
    std::vector<Point> pts;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto f = split_on(line, ',');
        const double x = std::stod(f[static_cast<std::size_t>(xi)]);
        const double y = std::stod(f[static_cast<std::size_t>(yi)]);
        if (x <= 0.0) continue;  // log axis
        pts.push_back({x, y, f[static_cast<std::size_t>(li)]});
    }
    if (pts.empty()) throw std::invalid_argument("plot_scatter: no plottable rows");

    double lx_min = std::log10(pts[0].x), lx_max = lx_min, y_min = pts[0].y, y_max = y_min;
    for (const auto& p : pts) {
        lx_min = std::min(lx_min, std::log10(p.x));
        lx_max = std::max(lx_max, std::log10(p.x));
        y_min = std::min(y_min, p.y);
        y_max = std::max(y_max, p.y);
    }
    // 5% margins; degenerate ranges get a unit pad.
    double lx_span = lx_max - lx_min, y_span = y_max - y_min;
    if (lx_span <= 0.0) lx_span = 1.0;
    if (y_span <= 0.0) y_span = 1.0;
    lx_min -= 0.05 * lx_span;
    lx_max += 0.05 * lx_span;
    y_min -= 0.05 * y_span;
    y_max += 0.05 * y_span;

    const double W = 640, H = 480, ML = 60, MR = 20, MT = 20, MB = 50;
    auto sx = [&](double x) { return ML + (std::log10(x) - lx_min) / (lx_max - lx_min) * (W - ML - MR); };
    auto sy = [&](double y) { return H - MB - (y - y_min) / (y_max - y_min) * (H - MT - MB); };

    std::ostringstream svg;
    svg.setf(std::ios::fixed);
    svg.precision(2);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    svg << "<!-- x-range-log10 " << lx_min << " " << lx_max << " y-range " << y_min << " " << y_max << " -->\n";
    svg << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\"" << H - MB
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << (W / 2) << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"13\">" << x_col
        << " (log scale)</text>\n";
    svg << "<text x=\"16\" y=\"" << (H / 2) << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
        << (H / 2) << ")\">" << y_col << "</text>\n";
    for (const auto& p : pts) {
        svg << "<circle class=\"pt\" cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y)
            << "\" r=\"4\" fill=\"steelblue\"/>\n";
        svg << "<text x=\"" << sx(p.x) + 6 << "\" y=\"" << sy(p.y) - 6 << "\" font-size=\"11\">" << p.label
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace mtlab::harness
