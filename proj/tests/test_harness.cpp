// Tests for the experiment harness: world construction, training-loop
// plumbing, result serialization, experiment orchestration and the scatter
// plot. Scenario runs here use deliberately tiny worlds and step counts; the
// full-scale behavior is exercised by the acceptance binary.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mtlab/harness.hpp"

using namespace mtlab;
using harness::PairKey;

namespace {

harness::WorldConfig tiny_world_config(std::uint64_t seed = 7) {
    harness::WorldConfig cfg;
    cfg.seed = seed;
    cfg.pivot = "pv";
    cfg.languages = harness::default_languages();
    cfg.mono_counts = {{"pv", 60}, {"rc", 60}};
    cfg.parallel_counts = {{{"ra", "pv"}, 80}};
    cfg.dev_per_pair = 8;
    cfg.test_per_pair = 12;
    cfg.vocab_size = 120;
    cfg.max_piece_chars = 4;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("default_languages defines one pivot and two coherent families") {
    const auto specs = harness::default_languages();
    REQUIRE(specs.size() == 8);

    std::map<std::string, std::vector<corpus::LanguageSpec>> by_family;
    for (const auto& s : specs) by_family[s.family_id].push_back(s);
    REQUIRE(by_family.count("piv") == 1);
    REQUIRE(by_family["piv"].size() == 1);
    CHECK(by_family["piv"][0].tag == "pv");
    CHECK(by_family["piv"][0].suffix.empty());
    REQUIRE(by_family["rom"].size() == 5);
    REQUIRE(by_family["tur"].size() == 2);

    for (const auto& [fam, members] : by_family) {
        if (members.size() < 2) continue;
        std::set<std::string> suffixes;
        for (const auto& m : members) {
            // Family mates share stems (same lexicon seed and alphabet) and
            // are told apart by per-language suffixes.
            CHECK(m.lexicon_seed == members[0].lexicon_seed);
            CHECK(m.alphabet_id == members[0].alphabet_id);
            CHECK(m.order_transform == members[0].order_transform);
            CHECK(!m.suffix.empty());
            suffixes.insert(m.suffix);
        }
        CHECK(suffixes.size() == members.size());
    }

    // Families use disjoint alphabets, otherwise LangID by character
    // distribution would be degenerate across families.
    std::set<std::string> alphabets;
    for (const auto& [fam, members] : by_family) alphabets.insert(members[0].alphabet_id);
    CHECK(alphabets.size() == 3);

    // The whole set validates as a manifest-style language list.
    for (const auto& s : specs) CHECK_NOTHROW(corpus::Language(s));
}

TEST_CASE("build_world is deterministic and seed-sensitive") {
    const auto cfg = tiny_world_config();
    harness::World a = harness::build_world(cfg);
    harness::World b = harness::build_world(cfg);

    REQUIRE(a.store.mono == b.store.mono);
    REQUIRE(a.store.parallel == b.store.parallel);
    REQUIRE(a.dev == b.dev);
    REQUIRE(a.test == b.test);
    REQUIRE(a.tok.vocab().content_hash() == b.tok.vocab().content_hash());

    auto cfg2 = cfg;
    cfg2.seed = cfg.seed + 1;
    harness::World c = harness::build_world(cfg2);
    CHECK(a.store.mono != c.store.mono);
    CHECK(a.tok.vocab().content_hash() != c.tok.vocab().content_hash());
}

TEST_CASE("build_world realizes the requested pools and eval splits") {
    const auto cfg = tiny_world_config();
    harness::World w = harness::build_world(cfg);

    REQUIRE(w.store.mono.size() == 2);
    CHECK(w.store.mono.at("pv").size() == 60);
    CHECK(w.store.mono.at("rc").size() == 60);
    REQUIRE(w.store.parallel.size() == 1);
    CHECK(w.store.parallel.at({"ra", "pv"}).size() == 80);

    CHECK(w.mono_sizes().at("rc") == 60);
    CHECK(w.parallel_sizes().at({"ra", "pv"}) == 80);

    // Dev/test exist for every non-pivot language in both directions, even
    // those without training data.
    for (const std::string xx : {"ra", "rb", "rc", "ta", "tb"}) {
        for (int split = 0; split < 2; ++split) {
            const auto& sets = split == 0 ? w.dev : w.test;
            const int n = split == 0 ? cfg.dev_per_pair : cfg.test_per_pair;
            REQUIRE(sets.count({xx, "pv"}) == 1);
            REQUIRE(sets.count({"pv", xx}) == 1);
            CHECK(sets.at({xx, "pv"}).size() == static_cast<std::size_t>(n));
            // Both directions are the same sentences with sides swapped.
            const auto& fwd = sets.at({xx, "pv"});
            const auto& bwd = sets.at({"pv", xx});
            for (std::size_t i = 0; i < fwd.size(); ++i) {
                CHECK(fwd[i].first == bwd[i].second);
                CHECK(fwd[i].second == bwd[i].first);
            }
        }
    }

    // Eval rows are genuine translations: inverting both sides through the
    // languages recovers the same concept sequence.
    auto& rc = w.lang("rc");
    auto& pv = w.lang("pv");
    for (const auto& [src, tgt] : w.test.at({"rc", "pv"})) {
        CHECK(rc.invert(src) == pv.invert(tgt));
    }

    CHECK_THROWS_AS(w.lang("zz"), std::invalid_argument);
}

TEST_CASE("dev and test splits are disjoint from training data") {
    // A larger domain makes accidental sentence collisions essentially
    // impossible, so set-disjointness is a meaningful check of seed routing.
    auto cfg = tiny_world_config();
    cfg.mono_domain = cfg.parallel_domain = cfg.eval_domain = corpus::news_domain();
    harness::World w = harness::build_world(cfg);

    std::set<std::string> train_lines;
    for (const auto& [lang, pool] : w.store.mono) train_lines.insert(pool.begin(), pool.end());
    for (const auto& [key, pool] : w.store.parallel)
        for (const auto& [s, t] : pool) {
            train_lines.insert(s);
            train_lines.insert(t);
        }
    for (const auto& sets : {w.dev, w.test})
        for (const auto& [key, pool] : sets)
            for (const auto& [src, tgt] : pool) CHECK(train_lines.count(src) == 0);

    // Dev and test are also disjoint from each other.
    std::set<std::string> dev_lines;
    for (const auto& [key, pool] : w.dev)
        for (const auto& [src, tgt] : pool) dev_lines.insert(src);
    for (const auto& [key, pool] : w.test)
        for (const auto& [src, tgt] : pool) CHECK(dev_lines.count(src) == 0);
}

TEST_CASE("build_world rejects a missing pivot") {
    auto cfg = tiny_world_config();
    cfg.pivot = "nope";
    CHECK_THROWS_AS(harness::build_world(cfg), std::invalid_argument);
}

TEST_CASE("scenario_world copies scale knobs into the world config") {
    harness::ExperimentConfig cfg;
    cfg.scenario = "E1";
    cfg.seed = 5;
    cfg.parallel_per_pair = 123;
    cfg.mono_per_lang = 77;
    cfg.vocab_size = 99;
    cfg.max_piece_chars = 3;
    cfg.dev_per_pair = 6;
    cfg.test_per_pair = 9;

    auto w = harness::scenario_world(cfg, {"ra", "ta"}, {"pv", "rc"});
    CHECK(w.pivot == "pv");
    CHECK(w.languages.size() == 8);
    CHECK(w.vocab_size == 99);
    CHECK(w.max_piece_chars == 3);
    CHECK(w.dev_per_pair == 6);
    CHECK(w.test_per_pair == 9);
    REQUIRE(w.parallel_counts.size() == 2);
    CHECK(w.parallel_counts.at({"ra", "pv"}) == 123);
    CHECK(w.parallel_counts.at({"ta", "pv"}) == 123);
    REQUIRE(w.mono_counts.size() == 2);
    CHECK(w.mono_counts.at("rc") == 77);

    // Per-pair override used by the fixed-total sweeps.
    auto w2 = harness::scenario_world(cfg, {"ra"}, {}, 456);
    CHECK(w2.parallel_counts.at({"ra", "pv"}) == 456);
    CHECK(w2.mono_counts.empty());

    // Worlds derive their seed from the experiment seed.
    CHECK(w.seed == derive_seed(cfg.seed, "world"));
}

TEST_CASE("ExperimentConfig hash is stable and sensitive") {
    harness::ExperimentConfig a;
    a.scenario = "E1";
    harness::ExperimentConfig b = a;
    CHECK(a.hash() == b.hash());

    auto flip = [&](auto mutate) {
        harness::ExperimentConfig c = a;
        mutate(c);
        CHECK(c.hash() != a.hash());
    };
    flip([](auto& c) { c.scenario = "E2"; });
    flip([](auto& c) { c.seed += 1; });
    flip([](auto& c) { c.parallel_per_pair += 1; });
    flip([](auto& c) { c.mono_per_lang += 1; });
    flip([](auto& c) { c.steps_stage1 += 1; });
    flip([](auto& c) { c.steps_ibt += 1; });
    flip([](auto& c) { c.vocab_size += 1; });
    flip([](auto& c) { c.max_piece_chars += 1; });
    flip([](auto& c) { c.train.temperature += 1.0; });
    flip([](auto& c) { c.train.mono_fraction = 0.25; });
}

TEST_CASE("dev_loss equals ln(V) for a uniform-logit model") {
    auto cfg = tiny_world_config();
    harness::World w = harness::build_world(cfg);

    harness::TrainParams tp;
    tp.model.vocab_size = w.tok.vocab().size();
    tp.model.seed = 3;
    model::TransformerF m(tp.model, tp.optim);
    // Tied embeddings: zeroing them forces all logits to zero, so the
    // predictive distribution is exactly uniform and the label-smoothed
    // cross-entropy is ln(V) no matter what the targets are.
    for (auto& t : m.tensors())
        if (t.name == "embed") t.value.setZero();

    const double got = harness::dev_loss(m, w, {{"ra", "pv"}, {"pv", "ra"}}, tp.batch);
    CHECK(got == Catch::Approx(std::log(static_cast<double>(tp.model.vocab_size))).epsilon(1e-9));

    CHECK_THROWS_AS(harness::dev_loss(m, w, {{"pv", "zz"}}, tp.batch), std::invalid_argument);
}

TEST_CASE("train_model runs, logs and is deterministic") {
    auto cfg = tiny_world_config();
    harness::World w = harness::build_world(cfg);

    harness::TrainParams tp;
    tp.model.vocab_size = w.tok.vocab().size();
    tp.model.seed = 3;
    tp.steps = 8;
    tp.dev_every = 4;
    tp.seed = 11;
    tp.dev_pairs = {{"ra", "pv"}};

    model::TransformerF m1(tp.model, tp.optim);
    auto log1 = harness::train_model(m1, w, tp);
    REQUIRE(log1.losses.size() == 8);
    REQUIRE(log1.dev_losses.size() == 2);
    CHECK(log1.dev_losses[0].first == 4);
    CHECK(log1.dev_losses[1].first == 8);
    CHECK(log1.best_step > 0);
    for (double l : log1.losses) CHECK(std::isfinite(l));

    model::TransformerF m2(tp.model, tp.optim);
    auto log2 = harness::train_model(m2, w, tp);
    CHECK(log1.losses == log2.losses);
    CHECK(log1.dev_losses == log2.dev_losses);
    CHECK(m1.params_hash() == m2.params_hash());

    // A different training seed gives a different trajectory.
    tp.seed = 12;
    model::TransformerF m3(tp.model, tp.optim);
    auto log3 = harness::train_model(m3, w, tp);
    CHECK(log1.losses != log3.losses);
}

TEST_CASE("train_model restores the best dev checkpoint") {
    auto cfg = tiny_world_config();
    harness::World w = harness::build_world(cfg);

    harness::TrainParams tp;
    tp.model.vocab_size = w.tok.vocab().size();
    tp.model.seed = 3;
    tp.steps = 8;
    tp.dev_every = 4;
    tp.dev_pairs = {{"ra", "pv"}};

    model::TransformerF m(tp.model, tp.optim);
    auto log = harness::train_model(m, w, tp);
    double best = std::numeric_limits<double>::infinity();
    int best_step = 0;
    for (const auto& [step, metric] : log.dev_losses)
        if (metric < best) {
            best = metric;
            best_step = step;
        }
    CHECK(log.best_step == best_step);
    // The restored parameters reproduce the recorded best dev metric.
    const double now = harness::dev_loss(m, w, tp.dev_pairs, tp.batch);
    CHECK(now == Catch::Approx(best).epsilon(1e-9));
}

TEST_CASE("evaluate_pair scores a decodeable pair") {
    auto cfg = tiny_world_config();
    harness::World w = harness::build_world(cfg);

    harness::TrainParams tp;
    tp.model.vocab_size = w.tok.vocab().size();
    tp.model.seed = 3;
    model::TransformerF m(tp.model, tp.optim);

    auto row = harness::evaluate_pair(m, w, {"ra", "pv"});
    CHECK(row.src_lang == "ra");
    CHECK(row.tgt_lang == "pv");
    CHECK(row.sentences == cfg.test_per_pair);
    CHECK(row.decode_mode == "greedy");
    CHECK(row.bleu >= 0.0);
    CHECK(row.bleu <= 100.0);

    auto dev_row = harness::evaluate_pair(m, w, {"ra", "pv"}, /*use_test=*/false);
    CHECK(dev_row.sentences == cfg.dev_per_pair);

    model::DecodeOptions beam;
    beam.beam = 3;
    beam.max_len = 32;
    auto beam_row = harness::evaluate_pair(m, w, {"ra", "pv"}, true, beam);
    CHECK(beam_row.decode_mode == "beam3");

    CHECK_THROWS_AS(harness::evaluate_pair(m, w, {"zz", "pv"}), std::invalid_argument);
}

TEST_CASE("results_to_csv formats rows with two decimals") {
    harness::ResultRow r;
    r.scenario = "E1";
    r.sub_run = "zero_resource";
    r.src_lang = "rc";
    r.tgt_lang = "pv";
    r.bleu = 53.7295;
    r.chrf = 60.505;
    r.sentences = 128;
    r.mono_size = 3000;
    r.parallel_size = 0;
    r.steps = 4000;
    r.seed = 1;
    r.config_hash = "abc123";

    const std::string csv = harness::results_to_csv({r});
    std::istringstream in(csv);
    std::string header, line;
    REQUIRE(std::getline(in, header));
    CHECK(header ==
          "scenario,sub_run,src_lang,tgt_lang,bleu,chrf,sentences,mono_size,parallel_size,steps,seed,config_hash,"
          "status");
    REQUIRE(std::getline(in, line));
    CHECK(line == "E1,zero_resource,rc,pv,53.73,60.51,128,3000,0,4000,1,abc123,ok");
}

TEST_CASE("run_experiment writes a CSV for a micro scenario and is reproducible") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mtlab_harness_e1";
    fs::remove_all(dir);

    harness::ExperimentConfig cfg;
    cfg.scenario = "E4";  // two tiny stage-1 runs
    cfg.out_dir = (dir / "run1").string();
    cfg.seed = 3;
    cfg.parallel_per_pair = 60;
    cfg.mono_per_lang = 40;
    cfg.steps_stage1 = 4;
    cfg.dev_per_pair = 4;
    cfg.test_per_pair = 6;
    cfg.vocab_size = 120;
    cfg.train.dev_every = 4;
    cfg.train.batch.batch_size_tokens = 256;

    const std::string path1 = harness::run_experiment(cfg);
    REQUIRE(fs::exists(path1));
    const std::string csv1 = slurp(path1);

    // Two sub-runs, one row each, all ok.
    std::istringstream in(csv1);
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::string> subs;
    while (std::getline(in, line)) {
        CHECK(line.find(",ok") != std::string::npos);
        subs.push_back(line.substr(line.find(',') + 1, line.find(',', line.find(',') + 1) - line.find(',') - 1));
    }
    REQUIRE(subs.size() == 2);
    CHECK(subs[0] == "same_family");
    CHECK(subs[1] == "diff_family");

    // Bit-identical CSV on a second run.
    cfg.out_dir = (dir / "run2").string();
    const std::string csv2 = slurp(harness::run_experiment(cfg));
    CHECK(csv1 == csv2);
}

TEST_CASE("run_experiment preserves a failure marker row") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mtlab_harness_fail";
    fs::remove_all(dir);

    harness::ExperimentConfig cfg;
    cfg.scenario = "E9";  // unknown
    cfg.out_dir = dir.string();
    CHECK_THROWS_AS(harness::run_experiment(cfg), std::invalid_argument);

    const std::string csv = slurp((dir / "E9_results.csv").string());
    CHECK(csv.find("FAILED") != std::string::npos);
    CHECK(csv.find("failed: unknown scenario") != std::string::npos);
}

TEST_CASE("plot_scatter emits a parseable SVG with 5% margins") {
    const std::string csv =
        "scenario,sub_run,src_lang,tgt_lang,bleu,chrf,sentences,mono_size,parallel_size,steps,seed,config_hash,"
        "status\n"
        "E5,mono_100,rc,pv,10.00,20.00,64,100,0,100,1,x,ok\n"
        "E5,mono_1000,rc,pv,30.00,40.00,64,1000,0,100,1,x,ok\n"
        "E5,mono_10000,rc,pv,50.00,60.00,64,10000,0,100,1,x,ok\n";

    const std::string svg = harness::plot_scatter(csv);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(std::count(svg.begin(), svg.end(), '\n') > 5);

    // The comment row records the padded ranges: log10 x in [2,4] and
    // y in [10,50], each padded by 5% of the span.
    std::istringstream in(svg);
    std::string line;
    bool found = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok1, tok2;
        ls >> tok1 >> tok2;
        if (tok1 == "<!--" && tok2 == "x-range-log10") {
            double lx0, lx1, y0, y1;
            std::string ylab;
            ls >> lx0 >> lx1 >> ylab >> y0 >> y1;
            CHECK(lx0 == Catch::Approx(2.0 - 0.1).margin(1e-6));
            CHECK(lx1 == Catch::Approx(4.0 + 0.1).margin(1e-6));
            CHECK(y0 == Catch::Approx(10.0 - 2.0).margin(1e-6));
            CHECK(y1 == Catch::Approx(50.0 + 2.0).margin(1e-6));
            found = true;
        }
    }
    CHECK(found);

    // Byte-stable for identical input.
    CHECK(harness::plot_scatter(csv) == harness::plot_scatter(csv));

    CHECK_THROWS_AS(harness::plot_scatter(""), std::invalid_argument);
    CHECK_THROWS_AS(harness::plot_scatter("a,b\n1,2\n", "missing"), std::invalid_argument);
    CHECK_THROWS_AS(harness::plot_scatter(csv.substr(0, csv.find('\n') + 1)), std::invalid_argument);
}
