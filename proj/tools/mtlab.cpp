// Command-line front end for the translation laboratory: corpus generation
// and ingestion, vocabulary training, model training, iterative
// back-translation, data filtering, evaluation, experiment scenarios, plots.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "mtlab/corpus.hpp"
#include "mtlab/datafilter.hpp"
#include "mtlab/eval.hpp"
#include "mtlab/harness.hpp"
#include "mtlab/model.hpp"
#include "mtlab/sampler.hpp"
#include "mtlab/selftrain.hpp"
#include "mtlab/vocab.hpp"

namespace fs = std::filesystem;
using namespace mtlab;

namespace {

// Output root: --out wins, then MTLAB_OUT, then the current directory.
std::string resolve_out(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("MTLAB_OUT"); env && *env) return env;
    return ".";
}

sampler::CorpusStore load_store(const std::string& corpus_dir) {
    sampler::CorpusStore store;
    const fs::path root(corpus_dir);
    if (fs::is_directory(root / "mono")) {
        corpus::IngestStream stream((root / "mono").string(), corpus::IngestLayout::mono_lines);
        while (auto ex = stream.next_mono()) store.mono[ex->lang].push_back(ex->text);
    }
    if (fs::is_directory(root / "parallel")) {
        corpus::IngestStream stream((root / "parallel").string(), corpus::IngestLayout::parallel_tsv);
        while (auto ex = stream.next_parallel())
            store.parallel[{ex->src_lang, ex->tgt_lang}].emplace_back(ex->src_text, ex->tgt_text);
    }
    return store;
}

vocab::Tokenizer load_tokenizer(const std::string& prefix) {
    const std::string merges = prefix + ".merges";
    return vocab::Tokenizer::load(prefix + ".vocab", fs::exists(merges) ? merges : "");
}

std::vector<std::string> manifest_languages(const std::string& corpus_dir) {
    const auto manifest = corpus::CorpusManifest::load((fs::path(corpus_dir) / "manifest.json").string());
    std::vector<std::string> tags;
    for (const auto& spec : manifest.languages) tags.push_back(spec.tag);
    return tags;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic multilingual translation laboratory"};
    app.require_subcommand(1);
    std::string out_flag;
    app.add_option("--out", out_flag, "Output root (default: $MTLAB_OUT or .)");

    // ---------------- corpus ----------------
    auto* corpus_cmd = app.add_subcommand("corpus", "Corpus generation and ingestion");
    corpus_cmd->require_subcommand(1);

    std::string gen_manifest, gen_dir;
    auto* corpus_gen = corpus_cmd->add_subcommand("gen", "Generate a corpus from a manifest");
    corpus_gen->add_option("--manifest", gen_manifest, "Manifest JSON path")->required();
    corpus_gen->add_option("--dir", gen_dir, "Corpus directory name")->default_val("corpus");

    std::string ingest_path, ingest_layout = "mono";
    auto* corpus_ingest = corpus_cmd->add_subcommand("ingest", "Validate and summarize corpus files");
    corpus_ingest->add_option("--path", ingest_path, "File or directory")->required();
    corpus_ingest->add_option("--layout", ingest_layout, "mono|parallel")->check(CLI::IsMember({"mono", "parallel"}));

    // ---------------- vocab ----------------
    auto* vocab_cmd = app.add_subcommand("vocab", "Vocabulary operations");
    vocab_cmd->require_subcommand(1);
    std::string vt_corpus, vt_mode = "bpe", vt_prefix = "tokenizer";
    int vt_size = 512;
    auto* vocab_train = vocab_cmd->add_subcommand("train", "Train a vocabulary on a corpus directory");
    vocab_train->add_option("--corpus", vt_corpus, "Corpus directory (with manifest.json)")->required();
    vocab_train->add_option("--size", vt_size, "Vocabulary size");
    vocab_train->add_option("--mode", vt_mode, "word|bpe")->check(CLI::IsMember({"word", "bpe"}));
    vocab_train->add_option("--prefix", vt_prefix, "Output file prefix");

    // ---------------- train ----------------
    std::string tr_corpus, tr_vocab, tr_ckpt = "checkpoint";
    int tr_steps = 1500;
    std::uint64_t tr_seed = 1;
    double tr_temp = 5.0, tr_monofrac = 0.5;
    harness::TrainParams tr_params;
    auto* train_cmd = app.add_subcommand("train", "Co-train translation + masked denoising");
    train_cmd->add_option("--corpus", tr_corpus, "Corpus directory")->required();
    train_cmd->add_option("--vocab", tr_vocab, "Tokenizer prefix")->required();
    train_cmd->add_option("--checkpoint", tr_ckpt, "Checkpoint directory name");
    train_cmd->add_option("--steps", tr_steps, "Training steps");
    train_cmd->add_option("--seed", tr_seed, "Seed");
    train_cmd->add_option("--temperature", tr_temp, "Parallel sampling temperature");
    train_cmd->add_option("--mono-fraction", tr_monofrac, "Fraction of MASS batches");
    train_cmd->add_option("--d-model", tr_params.model.d_model, "Model width");
    train_cmd->add_option("--layers", tr_params.model.layers_enc, "Encoder/decoder layer count");
    train_cmd->add_option("--batch-tokens", tr_params.batch.batch_size_tokens, "Tokens per batch side");

    // ---------------- ibt ----------------
    std::string ibt_corpus, ibt_vocab, ibt_in, ibt_out = "checkpoint_ibt", ibt_zero;
    int ibt_steps = 300, ibt_refresh = 150;
    std::uint64_t ibt_seed = 1;
    auto* ibt_cmd = app.add_subcommand("ibt", "Iterative back-translation fine-tuning");
    ibt_cmd->add_option("--corpus", ibt_corpus, "Corpus directory")->required();
    ibt_cmd->add_option("--vocab", ibt_vocab, "Tokenizer prefix")->required();
    ibt_cmd->add_option("--checkpoint", ibt_in, "Stage-1 checkpoint directory")->required();
    ibt_cmd->add_option("--out-checkpoint", ibt_out, "Fine-tuned checkpoint directory name");
    ibt_cmd->add_option("--pivot", ibt_zero, "unused placeholder")->group("");  // hidden
    std::string ibt_pivot = "pv";
    std::vector<std::string> ibt_zero_langs;
    ibt_cmd->add_option("--pivot-lang", ibt_pivot, "Pivot language tag");
    ibt_cmd->add_option("--zero-resource", ibt_zero_langs, "Zero-resource language tags")->required();
    ibt_cmd->add_option("--steps", ibt_steps, "Fine-tune steps");
    ibt_cmd->add_option("--refresh-every", ibt_refresh, "Synthetic pool refresh interval");
    ibt_cmd->add_option("--seed", ibt_seed, "Seed");

    // ---------------- filter ----------------
    std::string fl_input, fl_lang, fl_corpus, fl_mode = "loose", fl_clean = "clean.txt", fl_report = "filter_report.txt";
    int fl_wordlist_k = 50;
    auto* filter_cmd = app.add_subcommand("filter", "LangID + wordlist monolingual filtering");
    filter_cmd->add_option("--input", fl_input, "Noisy mono file")->required();
    filter_cmd->add_option("--lang", fl_lang, "Target language tag")->required();
    filter_cmd->add_option("--corpus", fl_corpus, "Clean corpus directory for model training")->required();
    filter_cmd->add_option("--mode", fl_mode, "loose|tight")->check(CLI::IsMember({"loose", "tight"}));
    filter_cmd->add_option("--wordlist-k", fl_wordlist_k, "Wordlist size");
    filter_cmd->add_option("--clean", fl_clean, "Clean output file name");
    filter_cmd->add_option("--report", fl_report, "Report file name");

    // ---------------- eval ----------------
    std::string ev_vocab, ev_ckpt, ev_test, ev_csv = "eval_report.csv";
    int ev_beam = 1, ev_max_len = 48;
    auto* eval_cmd = app.add_subcommand("eval", "Decode test sets and score BLEU/chrF");
    eval_cmd->add_option("--vocab", ev_vocab, "Tokenizer prefix")->required();
    eval_cmd->add_option("--checkpoint", ev_ckpt, "Checkpoint directory")->required();
    eval_cmd->add_option("--test-dir", ev_test, "Directory of parallel TSV test files")->required();
    eval_cmd->add_option("--beam", ev_beam, "Beam width (1 = greedy)");
    eval_cmd->add_option("--max-len", ev_max_len, "Decode length budget");
    eval_cmd->add_option("--csv", ev_csv, "Report CSV name");

    // ---------------- experiment ----------------
    auto* exp_cmd = app.add_subcommand("experiment", "Run a named scenario");
    exp_cmd->require_subcommand(1);
    harness::ExperimentConfig exp_cfg;
    auto* exp_run = exp_cmd->add_subcommand("run", "Run scenario <id> (E1..E7, F2)");
    exp_run->add_option("id", exp_cfg.scenario, "Scenario id")->required();
    exp_run->add_option("--seed", exp_cfg.seed, "Seed");
    exp_run->add_option("--steps", exp_cfg.steps_stage1, "Stage-1 steps");
    exp_run->add_option("--ibt-steps", exp_cfg.steps_ibt, "IBT steps");
    exp_run->add_option("--parallel-per-pair", exp_cfg.parallel_per_pair, "Parallel pairs per supervised language");
    exp_run->add_option("--mono-per-lang", exp_cfg.mono_per_lang, "Mono lines per language");
    exp_run->add_option("--vocab-size", exp_cfg.vocab_size, "Vocabulary size");
    exp_run->add_option("--test-per-pair", exp_cfg.test_per_pair, "Test sentences per pair");

    // ---------------- plot ----------------
    std::string pl_csv, pl_x = "mono_size", pl_y = "bleu", pl_label = "src_lang", pl_svg = "scatter.svg";
    auto* plot_cmd = app.add_subcommand("plot", "Scatter plot (log x) from a results CSV");
    plot_cmd->add_option("--csv", pl_csv, "Input CSV")->required();
    plot_cmd->add_option("--x", pl_x, "X column");
    plot_cmd->add_option("--y", pl_y, "Y column");
    plot_cmd->add_option("--label", pl_label, "Label column");
    plot_cmd->add_option("--svg", pl_svg, "Output SVG name");

    CLI11_PARSE(app, argc, argv);
    const fs::path out_root = resolve_out(out_flag);

    try {
        if (*corpus_gen) {
            const auto manifest = corpus::CorpusManifest::load(gen_manifest);
            const auto dir = (out_root / gen_dir).string();
            corpus::build_corpus(manifest, dir);
            std::cout << "corpus written to " << dir << "\n";
        } else if (*corpus_ingest) {
            corpus::IngestSummary summary;
            if (ingest_layout == "mono")
                corpus::read_all_mono(ingest_path, &summary);
            else
                corpus::read_all_parallel(ingest_path, &summary);
            std::cout << "files\t" << summary.files << "\nexamples\t" << summary.examples << "\nblank_skipped\t"
                      << summary.blank_skipped << "\nmalformed_skipped\t" << summary.malformed_skipped << "\n";
        } else if (*vocab_train) {
            const auto store = load_store(vt_corpus);
            std::vector<std::string> lines;
            for (const auto& [lang, pool] : store.mono) lines.insert(lines.end(), pool.begin(), pool.end());
            for (const auto& [key, pool] : store.parallel)
                for (const auto& [s, t] : pool) {
                    lines.push_back(s);
                    lines.push_back(t);
                }
            const auto tok = vocab::train_vocab(lines, manifest_languages(vt_corpus), vt_size,
                                                vt_mode == "bpe" ? vocab::Mode::bpe : vocab::Mode::word);
            const auto prefix = (out_root / vt_prefix).string();
            tok.save(prefix + ".vocab", vt_mode == "bpe" ? prefix + ".merges" : "");
            std::cout << "vocabulary of " << tok.vocab().size() << " tokens written to " << prefix << ".vocab\n";
        } else if (*train_cmd) {
            const auto tok = load_tokenizer(tr_vocab);
            harness::World w;
            w.store = load_store(tr_corpus);
            w.tok = tok;
            tr_params.steps = tr_steps;
            tr_params.seed = tr_seed;
            tr_params.temperature = tr_temp;
            tr_params.mono_fraction = w.store.mono.empty() ? 0.0 : tr_monofrac;
            tr_params.model.layers_dec = tr_params.model.layers_enc;
            tr_params.model.vocab_size = tok.vocab().size();
            tr_params.model.seed = derive_seed(tr_seed, "init");
            tr_params.pick_best_by_dev = false;  // no dev split in file-based training
            tr_params.dev_every = 0;
            model::TransformerF m(tr_params.model, tr_params.optim);
            const auto log = harness::train_model(m, w, tr_params);
            Rng ckpt_rng(derive_seed(tr_seed, "train"));
            const auto dir = (out_root / tr_ckpt).string();
            m.save_checkpoint(dir, tok.vocab().content_hash(), ckpt_rng);
            std::ostringstream trace;
            trace.precision(17);
            for (std::size_t i = 0; i < log.losses.size(); ++i) trace << i + 1 << '\t' << log.losses[i] << '\n';
            write_file((fs::path(dir) / "loss_trace.tsv").string(), trace.str());
            std::cout << "trained " << tr_steps << " steps; final loss "
                      << (log.losses.empty() ? 0.0 : log.losses.back()) << "; checkpoint at " << dir << "\n";
        } else if (*ibt_cmd) {
            const auto tok = load_tokenizer(ibt_vocab);
            Rng rng(derive_seed(ibt_seed, "ibt"));
            auto m = model::TransformerF::load_checkpoint(ibt_in, tok.vocab().content_hash(), nullptr);
            auto store = load_store(ibt_corpus);
            selftrain::IbtConfig ic;
            ic.steps = ibt_steps;
            ic.refresh_every = ibt_refresh;
            ic.pivot = ibt_pivot;
            ic.zero_resource = ibt_zero_langs;
            const auto result = selftrain::finetune_ibt(m, store, tok, ic, rng);
            const auto dir = (out_root / ibt_out).string();
            m.save_checkpoint(dir, tok.vocab().content_hash(), rng);
            for (const auto& warn : result.warnings) std::cerr << "warning: " << warn << "\n";
            std::ostringstream reports;
            for (std::size_t i = 0; i < result.refresh_reports.size(); ++i)
                reports << "refresh " << i << "\n" << result.refresh_reports[i].to_text();
            write_file((fs::path(dir) / "ibt_filter_reports.txt").string(), reports.str());
            std::cout << "fine-tuned " << ibt_steps << " steps; checkpoint at " << dir << "\n";
        } else if (*filter_cmd) {
            const auto store = load_store(fl_corpus);
            if (store.mono.size() < 2) throw std::runtime_error("filter: corpus must hold mono data for >= 2 languages");
            const auto langid = datafilter::train_langid(store.mono);
            const auto wordlist = datafilter::tfiif_wordlist(store.mono, fl_lang, fl_wordlist_k);
            std::vector<std::string> noisy;
            for (const auto& line : read_lines(fl_input))
                if (!trim(line).empty()) noisy.push_back(line);
            const auto mode = fl_mode == "tight" ? datafilter::FilterMode::tight : datafilter::FilterMode::loose;
            const auto [clean, report] = datafilter::filter_mono(noisy, fl_lang, langid, wordlist, mode);
            write_file((out_root / fl_clean).string(), join(clean, "\n") + (clean.empty() ? "" : "\n"));
            write_file((out_root / fl_report).string(), report.to_text());
            std::cout << report.to_text();
        } else if (*eval_cmd) {
            const auto tok = load_tokenizer(ev_vocab);
            auto m = model::TransformerF::load_checkpoint(ev_ckpt, tok.vocab().content_hash(), nullptr);
            const auto banned = selftrain::decode_banned_ids(tok.vocab());
            model::DecodeOptions dopt;
            dopt.beam = ev_beam;
            dopt.max_len = ev_max_len;
            eval::EvalReport report;
            std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::string, std::string>>> sets;
            corpus::IngestStream stream(ev_test, corpus::IngestLayout::parallel_tsv);
            while (auto ex = stream.next_parallel())
                sets[{ex->src_lang, ex->tgt_lang}].emplace_back(ex->src_text, ex->tgt_text);
            eval::BleuOptions bopt;
            bopt.smooth = true;
            for (const auto& [key, pairs] : sets) {
                std::vector<std::string> hyps, refs;
                for (const auto& [src, ref] : pairs) {
                    hyps.push_back(tok.decode(m.decode(tok.encode(src, key.second), dopt, banned).ids));
                    refs.push_back(ref);
                }
                report.rows.push_back(eval::score_pair(key.first, key.second, hyps, refs,
                                                       ev_beam > 1 ? "beam" + std::to_string(ev_beam) : "greedy",
                                                       ev_ckpt, bopt));
            }
            report.write_csv((out_root / ev_csv).string());
            std::cout << report.to_csv();
        } else if (*exp_run) {
            exp_cfg.out_dir = out_root.string();
            const auto path = harness::run_experiment(exp_cfg);
            std::cout << "results at " << path << "\n";
        } else if (*plot_cmd) {
            const auto svg = harness::plot_scatter(read_file(pl_csv), pl_x, pl_y, pl_label);
            write_file((out_root / pl_svg).string(), svg);
            std::cout << "plot at " << (out_root / pl_svg).string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
