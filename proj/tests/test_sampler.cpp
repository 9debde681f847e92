#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "mtlab/sampler.hpp"

using namespace mtlab;
using namespace mtlab::sampler;

namespace {

Tokenizer toy_tokenizer() {
    return vocab::train_vocab({"aa bb cc dd ee ff gg hh", "ii jj kk ll mm nn"}, {"xx", "yy", "pv"}, 64,
                              vocab::Mode::word);
}

CorpusStore toy_store() {
    CorpusStore store;
    for (int i = 0; i < 16; ++i) {
        store.parallel[{"xx", "pv"}].push_back({"aa bb cc dd", "ee ff gg"});
        store.parallel[{"yy", "pv"}].push_back({"hh ii jj", "kk ll mm nn"});
        store.mono["xx"].push_back("aa bb cc dd ee ff");
        store.mono["yy"].push_back("gg hh ii jj kk");
    }
    return store;
}

}  // namespace

TEST_CASE("temperature weights match the closed form") {
    // n = {100, 1}, T = 5: p moth = 100^(1/5) / (100^(1/5) + 1).
    const auto p = temperature_weights({{"big", 100}, {"small", 1}}, 5.0);
    const double w = std::pow(100.0, 0.2);
    CHECK(std::abs(p.at("big") - w / (w + 1.0)) < 1e-9);
    CHECK(std::abs(p.at("small") - 1.0 / (w + 1.0)) < 1e-9);
    CHECK(std::abs(p.at("big") - 0.7152) < 5e-4);
    CHECK(std::abs(p.at("small") - 0.2848) < 5e-4);
}

TEST_CASE("temperature one is proportional and high temperature flattens") {
    const auto p1 = temperature_weights({{"a", 300}, {"b", 100}}, 1.0);
    CHECK(std::abs(p1.at("a") - 0.75) < 1e-12);
    const auto phi = temperature_weights({{"a", 300}, {"b", 100}}, 1e6);
    CHECK(std::abs(phi.at("a") - 0.5) < 1e-3);
}

TEST_CASE("temperature weights validate inputs") {
    CHECK_THROWS_AS(temperature_weights({{"a", 1}}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(temperature_weights({}, 5.0), std::invalid_argument);
    CHECK_THROWS_AS(temperature_weights({{"a", 0}}, 5.0), std::invalid_argument);
}

TEST_CASE("make_schedule splits pairs across directions and mono uniformly") {
    const auto s = make_schedule({{{"xx", "pv"}, 100}, {{"yy", "pv"}, 1}}, {{"xx", 7}, {"yy", 9}, {"pv", 1}}, 5.0, 0.5);
    s.validate();
    REQUIRE(s.parallel_probs.size() == 4);
    std::map<std::string, double> by_label;
    for (const auto& [t, p] : s.parallel_probs) by_label[t.label()] = p;
    const double w = std::pow(100.0, 0.2);
    CHECK(std::abs(by_label.at("translation(xx->pv)") - w / (w + 1.0) / 2.0) < 1e-9);
    CHECK(std::abs(by_label.at("translation(pv->xx)") - w / (w + 1.0) / 2.0) < 1e-9);
    CHECK(std::abs(by_label.at("translation(yy->pv)") - 1.0 / (w + 1.0) / 2.0) < 1e-9);
    REQUIRE(s.mono_probs.size() == 3);
    for (const auto& [lang, p] : s.mono_probs) CHECK(std::abs(p - 1.0 / 3.0) < 1e-12);
    CHECK(s.dump_tsv().find("mass(xx)") != std::string::npos);
}

TEST_CASE("empirical task frequencies track the schedule within one percent") {
    const auto s = make_schedule({{{"xx", "pv"}, 100}, {{"yy", "pv"}, 1}}, {{"xx", 7}, {"yy", 9}}, 5.0, 0.5);
    Rng rng(11);
    std::map<std::string, int> hist;
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++hist[next_task(s, rng).label()];
    for (const auto& [t, p] : s.parallel_probs)
        CHECK(std::abs(hist[t.label()] / static_cast<double>(n) - p * 0.5) < 0.01);
    for (const auto& [lang, p] : s.mono_probs)
        CHECK(std::abs(hist[Task::mass(lang).label()] / static_cast<double>(n) - p * 0.5) < 0.01);
}

TEST_CASE("mono_fraction zero or one restricts the task kind") {
    const auto par_only = make_schedule({{{"xx", "pv"}, 10}}, {{"xx", 5}}, 5.0, 0.0);
    const auto mono_only = make_schedule({{{"xx", "pv"}, 10}}, {{"xx", 5}}, 5.0, 1.0);
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
        CHECK(next_task(par_only, rng).kind == Task::Kind::translation);
        CHECK(next_task(mono_only, rng).kind == Task::Kind::mass);
    }
}

TEST_CASE("schedule validation rejects bad probability vectors") {
    SamplingSchedule s;
    s.parallel_probs = {{Task::translation("a", "b"), 0.7}, {Task::translation("b", "a"), 0.7}};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.parallel_probs = {{Task::translation("a", "b"), -0.1}, {Task::translation("b", "a"), 1.1}};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.parallel_probs.clear();
    s.mono_fraction = 1.5;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("translation batches are rectangular, budgeted, and well-formed") {
    auto tok = toy_tokenizer();
    auto store = toy_store();
    BatchOptions opt;
    opt.batch_size_tokens = 64;
    opt.max_len = 16;
    Rng rng(13);
    const auto b = make_batch(Task::translation("xx", "pv"), store, opt, rng, tok);
    REQUIRE(b.rows() > 0);

    std::int64_t enc_tokens = 0, dec_tokens = 0;
    for (int n : b.enc_lengths) enc_tokens += n;
    for (int n : b.dec_lengths) dec_tokens += n;
    CHECK(enc_tokens <= opt.batch_size_tokens);
    CHECK(dec_tokens <= opt.batch_size_tokens);

    const auto enc_w = b.encoder_ids[0].size();
    const auto dec_w = b.decoder_target_ids[0].size();
    for (std::size_t r = 0; r < b.rows(); ++r) {
        CHECK(b.encoder_ids[r].size() == enc_w);
        CHECK(b.decoder_input_ids[r].size() == dec_w);
        CHECK(b.decoder_target_ids[r].size() == dec_w);
        CHECK(b.decoder_positions[r].size() == dec_w);
        CHECK(b.loss_mask[r].size() == dec_w);
        // Real prefix: tag first; padding after the recorded length.
        CHECK(b.encoder_ids[r][0] == tok.vocab().tag_id("pv"));
        for (std::size_t i = static_cast<std::size_t>(b.enc_lengths[r]); i < enc_w; ++i)
            CHECK(b.encoder_ids[r][i] == Vocabulary::kPad);
        // Loss mask covers exactly the real target positions.
        int supervised = 0;
        for (std::size_t i = 0; i < dec_w; ++i) {
            if (b.loss_mask[r][i]) ++supervised;
            if (i >= static_cast<std::size_t>(b.dec_lengths[r])) {
                CHECK_FALSE(b.loss_mask[r][i]);
                CHECK(b.decoder_target_ids[r][i] == Vocabulary::kPad);
            }
        }
        CHECK(supervised == b.dec_lengths[r]);
        // Positions increase by one, continuing past the real suffix.
        for (std::size_t i = 1; i < dec_w; ++i)
            CHECK(b.decoder_positions[r][i] == b.decoder_positions[r][i - 1] + 1);
    }
    CHECK(b.supervised_tokens() == dec_tokens);
}

TEST_CASE("reverse-direction tasks read the same pool with sides swapped") {
    auto tok = toy_tokenizer();
    auto store = toy_store();  // stored as (xx, pv)
    BatchOptions opt;
    opt.batch_size_tokens = 48;
    Rng rng(14);
    const auto b = make_batch(Task::translation("pv", "xx"), store, opt, rng, tok);
    REQUIRE(b.rows() > 0);
    // Source text is the pv side ("ee ff gg"), tag is <2xx>.
    CHECK(b.encoder_ids[0][0] == tok.vocab().tag_id("xx"));
    CHECK(b.encoder_ids[0][1] == tok.encode_text("ee")[0]);
}

TEST_CASE("mass batches mask the encoder and supervise the span") {
    auto tok = toy_tokenizer();
    auto store = toy_store();
    BatchOptions opt;
    opt.batch_size_tokens = 64;
    opt.mask_policy = objectives::MaskPolicy::always_mask;
    Rng rng(15);
    const auto b = make_batch(Task::mass("xx"), store, opt, rng, tok);
    REQUIRE(b.rows() > 0);
    for (std::size_t r = 0; r < b.rows(); ++r) {
        CHECK(b.encoder_ids[r][0] == tok.vocab().tag_id("xx"));
        int masks = 0;
        for (int id : b.encoder_ids[r]) masks += id == Vocabulary::kMask ? 1 : 0;
        CHECK(masks == b.dec_lengths[r]);  // span length equals supervised positions
        // Decoder positions start at the span offset, not at zero necessarily.
        CHECK(b.decoder_positions[r][0] >= 0);
    }
}

TEST_CASE("make_batch reports missing corpora") {
    auto tok = toy_tokenizer();
    CorpusStore empty;
    BatchOptions opt;
    Rng rng(16);
    CHECK_THROWS_AS(make_batch(Task::translation("xx", "pv"), empty, opt, rng, tok), std::runtime_error);
    CHECK_THROWS_AS(make_batch(Task::mass("xx"), empty, opt, rng, tok), std::runtime_error);
}
