#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dmtv/io_util.hpp"
#include "dmtv/pilot.hpp"
#include "dmtv/synthdata.hpp"

using namespace dmtv;

namespace {

std::vector<std::string> split_on_spaces(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

int word_diff_count(const std::string& a, const std::string& b) {
    const auto wa = split_on_spaces(a), wb = split_on_spaces(b);
    REQUIRE(wa.size() == wb.size());
    int diff = 0;
    for (size_t i = 0; i < wa.size(); ++i) diff += wa[i] != wb[i] ? 1 : 0;
    return diff;
}

// Vocabulary covering every word a grammar can emit, for in-vocab probing.
Vocab vocab_for(const PosGrammar& g) {
    std::set<std::string> words = {"a", "the", "toward", "on", "background"};
    for (const auto& s : g.slots)
        for (const auto& w : s.words) words.insert(w);
    return Vocab::build(std::vector<std::string>(words.begin(), words.end()));
}

TextEncoderConfig small_text_config() {
    TextEncoderConfig cfg;
    cfg.seq_len = 16;
    cfg.d = 16;
    cfg.blocks = 1;
    cfg.heads = 2;
    cfg.mlp_mult = 2;
    return cfg;
}

Tensor rows_from(const std::vector<std::vector<double>>& rows) {
    const int64_t n = static_cast<int64_t>(rows.size());
    const int64_t d = static_cast<int64_t>(rows.front().size());
    Tensor t({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) t[i * d + j] = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return t;
}

}  // namespace

TEST_SUITE("pilot") {

TEST_CASE("built-in grammars render and count as documented") {
    const PosGrammar probe = probe_grammar();
    validate_grammar(probe);
    REQUIRE(probe.slots.size() == 6);
    for (const auto& s : probe.slots) CHECK(s.words.size() == 8);
    CHECK(probe.prompt_count() == 262144);
    CHECK(probe.slot_index("VERB") == 2);
    CHECK(probe.slot_index("COLOR") == -1);
    CHECK(render_prompt(probe, {0, 0, 0, 0, 0, 0}) == "a big cat walk quickly across the river");
    CHECK(render_prompt(probe, {7, 7, 7, 7, 7, 7}) ==
          "a old fish climb clumsily near the forest");

    const PosGrammar corpus = corpus_grammar();
    validate_grammar(corpus);
    REQUIRE(corpus.slots.size() == 7);
    CHECK(corpus.prompt_count() == 2048);

    // rendering the corpus grammar reproduces the corpus captions themselves
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        const SceneSpec spec = sample_spec(rng);
        const std::vector<int64_t> choice = {
            static_cast<int64_t>(spec.size),      static_cast<int64_t>(spec.color),
            static_cast<int64_t>(spec.shape),     static_cast<int64_t>(spec.motion),
            static_cast<int64_t>(spec.speed),     static_cast<int64_t>(spec.direction),
            static_cast<int64_t>(spec.background)};
        CHECK(render_prompt(corpus, choice) == render_caption(spec));
    }
}

TEST_CASE("grammar validation rejects malformed templates") {
    PosGrammar g;
    g.template_text = "a [X] then [Y]";
    g.slots = {{"X", {"one", "two"}}, {"Y", {"three"}}};
    CHECK_NOTHROW(validate_grammar(g));

    PosGrammar bad = g;
    bad.slots[1].name = "X";
    CHECK_THROWS_AS(validate_grammar(bad), std::invalid_argument);

    bad = g;
    bad.slots[1].name = "Z";
    CHECK_THROWS_AS(validate_grammar(bad), std::invalid_argument);

    bad = g;
    bad.template_text = "a [X] then [X] [Y]";
    CHECK_THROWS_AS(validate_grammar(bad), std::invalid_argument);

    bad = g;
    bad.slots[0].words.clear();
    CHECK_THROWS_AS(validate_grammar(bad), std::invalid_argument);

    bad.slots.clear();
    CHECK_THROWS_AS(validate_grammar(bad), std::invalid_argument);

    CHECK_THROWS_AS(render_prompt(g, {0}), std::invalid_argument);
    CHECK_THROWS_AS(render_prompt(g, {0, 5}), std::out_of_range);
}

TEST_CASE("groups fix the context and sweep the target slot") {
    const PosGrammar probe = probe_grammar();
    const auto groups = enumerate_groups(probe, "ADJ", 12, 9);
    REQUIRE(groups.size() == 12);
    std::unordered_set<std::string> contexts;
    for (const auto& g : groups) {
        REQUIRE(g.prompts.size() == 8);
        for (size_t i = 0; i < g.prompts.size(); ++i)
            for (size_t j = i + 1; j < g.prompts.size(); ++j)
                CHECK(word_diff_count(g.prompts[i], g.prompts[j]) == 1);
        contexts.insert(g.prompts.front());
    }
    // without replacement: every sampled context is distinct
    CHECK(contexts.size() == groups.size());

    // deterministic under seed, sensitive to it
    const auto again = enumerate_groups(probe, "ADJ", 12, 9);
    REQUIRE(again.size() == groups.size());
    for (size_t i = 0; i < groups.size(); ++i) CHECK(again[i].prompts == groups[i].prompts);
    const auto other = enumerate_groups(probe, "ADJ", 12, 10);
    bool any_difference = false;
    for (size_t i = 0; i < groups.size(); ++i)
        any_difference = any_difference || other[i].prompts != groups[i].prompts;
    CHECK(any_difference);

    CHECK_THROWS_AS(enumerate_groups(probe, "COLOR", 4, 1), std::invalid_argument);
    CHECK_THROWS_AS(enumerate_groups(probe, "ADJ", 0, 1), std::invalid_argument);
}

TEST_CASE("context spaces have exactly the product-of-other-slots size") {
    const PosGrammar probe = probe_grammar();
    // 8^5 contexts per slot: the full request succeeds, one more does not
    const auto full = enumerate_groups(probe, "VERB", 32768, 2);
    CHECK(full.size() == 32768);
    CHECK_THROWS_AS(enumerate_groups(probe, "VERB", 32769, 2), std::invalid_argument);

    const PosGrammar corpus = corpus_grammar();
    // 2048 / 4 color words = 512 contexts
    const auto colors = enumerate_groups(corpus, "COLOR", 512, 2);
    CHECK(colors.size() == 512);
    std::unordered_set<std::string> contexts;
    for (const auto& g : colors) contexts.insert(g.prompts.front());
    CHECK(contexts.size() == 512);
    CHECK_THROWS_AS(enumerate_groups(corpus, "COLOR", 513, 2), std::invalid_argument);
}

TEST_CASE("embedding sensitivity matches hand-computed pair means") {
    // identical rows: similarity 1, sensitivity 0 up to the cosine epsilon
    const Tensor same = rows_from({{0.3, 0.4}, {0.3, 0.4}, {0.3, 0.4}});
    CHECK(std::abs(embedding_sensitivity(same)) < 1e-6);

    // pairwise orthogonal rows: similarity 0, sensitivity 1
    const Tensor ortho = rows_from({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    CHECK(embedding_sensitivity(ortho) == doctest::Approx(1.0).epsilon(1e-9));

    // cosines {1, 0.5, 0.5} -> 1 - 2/3
    const double c = 0.5, s = std::sqrt(3.0) / 2.0;
    const Tensor third = rows_from({{1, 0}, {1, 0}, {c, s}});
    CHECK(embedding_sensitivity(third) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));

    // cosine is scale invariant, so sensitivity is too
    Tensor scaled = third.clone();
    for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= 37.5;
    CHECK(embedding_sensitivity(scaled) ==
          doctest::Approx(embedding_sensitivity(third)).epsilon(1e-7));

    CHECK_THROWS_AS(embedding_sensitivity(rows_from({{1, 2}})), std::invalid_argument);
    CHECK_THROWS_AS(embedding_sensitivity(Tensor({4}, 1.0)), std::invalid_argument);
}

TEST_CASE("group sensitivity is zero for repeated prompts and order invariant") {
    const PosGrammar corpus = corpus_grammar();
    const Vocab vocab = vocab_for(corpus);
    ParamStore ps;
    Rng rng(33);
    TextEncoder enc(ps, "content.", small_text_config(), vocab.size(), rng);

    PromptGroup same;
    same.prompts = {"a big red circle moves slowly toward the left on the plain background",
                    "a big red circle moves slowly toward the left on the plain background",
                    "a big red circle moves slowly toward the left on the plain background"};
    CHECK(std::abs(group_sensitivity(same, enc, vocab)) < 1e-6);

    auto groups = enumerate_groups(corpus, "MOTION", 3, 4);
    const double before = group_sensitivity(groups[0], enc, vocab);
    CHECK(before > 0.0);
    CHECK(before <= 1.0);
    std::reverse(groups[0].prompts.begin(), groups[0].prompts.end());
    CHECK(group_sensitivity(groups[0], enc, vocab) == doctest::Approx(before).epsilon(1e-12));

    PromptGroup single;
    single.prompts = {"a"};
    CHECK_THROWS_AS(group_sensitivity(single, enc, vocab), std::invalid_argument);
}

TEST_CASE("pilot report covers the grammar read-only and deterministically") {
    const PosGrammar corpus = corpus_grammar();
    const Vocab vocab = vocab_for(corpus);
    ParamStore ps;
    Rng rng(71);
    TextEncoder enc(ps, "content.", small_text_config(), vocab.size(), rng);

    std::vector<Tensor> before;
    for (const Param* p : ps.all()) before.push_back(p->val.clone());

    PilotOptions opts;
    opts.n_contexts = 8;
    opts.seed = 3;
    const SensitivityReport rep = run_pilot(corpus, enc, vocab, opts);
    CHECK(rep.encoder_tag == "content");
    CHECK(rep.seed == 3);
    CHECK(rep.n_contexts == 8);
    REQUIRE(rep.slots.size() == corpus.slots.size());
    for (size_t i = 0; i < rep.slots.size(); ++i) {
        CHECK(rep.slots[i].slot == corpus.slots[i].name);
        CHECK(rep.slots[i].groups == 8);
        CHECK(rep.slots[i].sensitivity >= 0.0);
        CHECK(rep.slots[i].sensitivity <= 1.0);
        CHECK(rep.slots[i].similarity_variance >= 0.0);
    }

    // weights untouched
    size_t k = 0;
    for (const Param* p : ps.all()) CHECK(max_abs_diff(p->val, before[k++]) == 0.0);

    // bitwise repeatable
    const SensitivityReport rep2 = run_pilot(corpus, enc, vocab, opts);
    for (size_t i = 0; i < rep.slots.size(); ++i) {
        CHECK(rep2.slots[i].sensitivity == rep.slots[i].sensitivity);
        CHECK(rep2.slots[i].similarity_variance == rep.slots[i].similarity_variance);
    }

    PilotOptions filtered = opts;
    filtered.slot_filter = "MOTION";
    const SensitivityReport one = run_pilot(corpus, enc, vocab, filtered);
    REQUIRE(one.slots.size() == 1);
    CHECK(one.slots[0].slot == "MOTION");
    CHECK(one.slots[0].sensitivity == rep.slots[3].sensitivity);

    filtered.slot_filter = "NOPE";
    CHECK_THROWS_AS(run_pilot(corpus, enc, vocab, filtered), std::invalid_argument);

    PilotOptions huge = opts;
    huge.n_contexts = 2000;  // SIZE offers only 1024 contexts
    CHECK_THROWS_AS(run_pilot(corpus, enc, vocab, huge), std::invalid_argument);

    CHECK(mean_slot_sensitivity(rep, {"MOTION", "SPEED", "DIRECTION"}) ==
          doctest::Approx((rep.slots[3].sensitivity + rep.slots[4].sensitivity +
                           rep.slots[5].sensitivity) /
                          3.0)
              .epsilon(1e-15));
    CHECK_THROWS_AS(mean_slot_sensitivity(rep, {"MOTION", "NOPE"}), std::invalid_argument);
    CHECK_THROWS_AS(mean_slot_sensitivity(rep, {}), std::invalid_argument);
}

TEST_CASE("sampled contexts approximate the full enumeration") {
    const PosGrammar corpus = corpus_grammar();
    const Vocab vocab = vocab_for(corpus);
    ParamStore ps;
    Rng rng(15);
    TextEncoder enc(ps, "content.", small_text_config(), vocab.size(), rng);

    PilotOptions full;
    full.n_contexts = 512;  // everything COLOR offers
    full.seed = 1;
    full.slot_filter = "COLOR";
    PilotOptions sampled = full;
    sampled.n_contexts = 128;

    const double sens_full = run_pilot(corpus, enc, vocab, full).slots[0].sensitivity;
    const double sens_sampled = run_pilot(corpus, enc, vocab, sampled).slots[0].sensitivity;
    CHECK(std::abs(sens_full - sens_sampled) < 0.05);
}

TEST_CASE("report serialization round-trips and charts render") {
    const PosGrammar corpus = corpus_grammar();
    const Vocab vocab = vocab_for(corpus);
    ParamStore ps;
    Rng rng(90);
    TextEncoder content(ps, "content.", small_text_config(), vocab.size(), rng);
    TextEncoder motion(ps, "motion.", small_text_config(), vocab.size(), rng);

    PilotOptions opts;
    opts.n_contexts = 4;
    opts.seed = 8;
    const SensitivityReport ra = run_pilot(corpus, content, vocab, opts);
    const SensitivityReport rb = run_pilot(corpus, motion, vocab, opts);

    std::filesystem::create_directories("test_tmp");
    const std::string csv = "test_tmp/pilot_report.csv";
    write_sensitivity_csv(csv, ra);
    const std::vector<uint8_t> bytes = read_file_bytes(csv);
    std::string text(bytes.begin(), bytes.end());
    std::istringstream is(text);
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "encoder,seed,contexts,slot,sensitivity,groups,similarity_variance");
    size_t data_rows = 0;
    while (std::getline(is, line)) {
        std::istringstream row(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(row, field, ',')) fields.push_back(field);
        REQUIRE(fields.size() == 7);
        CHECK(fields[0] == "content");
        CHECK(fields[3] == ra.slots[data_rows].slot);
        CHECK(std::stod(fields[4]) == ra.slots[data_rows].sensitivity);
        ++data_rows;
    }
    CHECK(data_rows == ra.slots.size());

    const std::string chart = "test_tmp/pilot_chart.bmp";
    write_sensitivity_chart(chart, {ra, rb});
    CHECK(read_file_bytes(chart).size() > 100);

    CHECK_THROWS_AS(write_sensitivity_chart(chart, {}), std::invalid_argument);
    SensitivityReport trimmed = rb;
    trimmed.slots.pop_back();
    CHECK_THROWS_AS(write_sensitivity_chart(chart, {ra, trimmed}), std::invalid_argument);
}

TEST_CASE("slot partition separates movement words from content words") {
    const PosGrammar probe = probe_grammar();
    CHECK(motion_slots(probe) == std::vector<std::string>{"VERB", "ADV", "ADP"});
    CHECK(content_slots(probe) == std::vector<std::string>{"ADJ", "NOUN1", "NOUN2"});

    const PosGrammar corpus = corpus_grammar();
    CHECK(motion_slots(corpus) ==
          std::vector<std::string>{"MOTION", "SPEED", "DIRECTION"});
    CHECK(content_slots(corpus) ==
          std::vector<std::string>{"SIZE", "COLOR", "SHAPE", "BACKGROUND"});
}

}
