#include "support.hpp"

#include <catch_amalgamated.hpp>

using namespace ragmark;
using namespace ragmark::testing;

namespace {

/// Chat model driven by a callback; records every user message it sees.
class FunctionModel : public ChatModel {
public:
    explicit FunctionModel(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
    std::string name() const override { return "fn"; }
    Completion complete(const ChatPrompt& prompt, const FirstByteCallback&) override {
        seen.push_back(prompt.user);
        return {fn_(prompt.user), 0.0};
    }
    std::vector<std::string> seen;

private:
    std::function<std::string(const std::string&)> fn_;
};

ResultRow row_with(QuestionCategory category, std::string question, std::size_t k, double value, double latency) {
    ResultRow r;
    r.question = std::move(question);
    r.category = category;
    r.k = k;
    r.model = "m";
    r.record.latency_seconds = latency;
    for (const auto& f : kHeadlineMetrics) r.scores.*(f.member) = value;
    for (const auto& f : kSecondaryMetrics) r.scores.*(f.member) = value;
    return r;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        out.push_back(text.substr(pos, nl - pos));
        pos = nl == std::string::npos ? text.size() : nl + 1;
    }
    return out;
}

/// CSV field count honouring double-quoted fields.
std::size_t csv_fields(const std::string& line) {
    std::size_t n = 1;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) ++n;
    }
    return n;
}

} // namespace

// ---------------------------------------------------------------------------
// Lexical metrics

TEST_CASE("lexical metric examples", "[lexical]") {
    CHECK(unigram_precision("the cat sat", "the cat sat") == 1.0);
    CHECK(unigram_precision("dog", "cat") == 0.0);
    CHECK(unigram_precision("a a b", "a c") == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK_FALSE(unigram_precision("", "a"));
    CHECK_FALSE(unigram_precision("...", "a"));
    CHECK(unigram_recall("a", "a b") == 0.5);
    CHECK_FALSE(unigram_recall("a", ""));
    const auto same = rouge1("x y z", "x y z");
    REQUIRE(same);
    CHECK(same->f1 == 1.0);
    const auto half = rouge1("a b", "a c");
    REQUIRE(half);
    CHECK(half->precision == 0.5);
    CHECK(half->recall == 0.5);
    CHECK(half->f1 == 0.5);
    CHECK(rouge1("a", "b")->f1 == 0.0);
    CHECK_FALSE(rouge1("", "b"));
}

TEST_CASE("lexical metrics match the brute-force oracle; recall is dual to precision", "[lexical][oracle][property]") {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 500; ++i) {
        const auto x = random_token_string(rng, 20, 8);
        const auto y = random_token_string(rng, 20, 8);
        const auto expected = oracle_lexical(x, y);
        CHECK(unigram_precision(x, y) == expected.precision);
        CHECK(unigram_recall(x, y) == expected.recall);
        const auto r = rouge1(x, y);
        CHECK(r.has_value() == expected.f1.has_value());
        if (r && expected.f1) CHECK(r->f1 == *expected.f1);
        CHECK(unigram_recall(x, y) == unigram_precision(y, x));
    }
}

// ---------------------------------------------------------------------------
// Embedding metrics

TEST_CASE("query/context similarity and csga", "[embedding-metrics]") {
    const auto embedder = deterministic_embedder();
    auto c = judge_case("What are tuition fees?", "Fees are 9,800 dollars.", {"What are tuition fees?"});
    const auto self = query_context_similarity(c.question, c.record.retrieval, embedder);
    REQUIRE(self);
    CHECK(self->whole == Catch::Approx(1.0).margin(1e-6));
    CHECK(self->chunk_mean == Catch::Approx(1.0).margin(1e-6));

    CHECK_FALSE(query_context_similarity("q", RetrievalResult{}, embedder));
    CHECK(*csga("the same words", "the same words", embedder) == Catch::Approx(1.0).margin(1e-6));
    CHECK_FALSE(csga("", "x", embedder));
    CHECK_FALSE(csga("x", "  ", embedder));
}

TEST_CASE("disjoint vocabularies are near-orthogonal across seeds", "[embedding-metrics][property]") {
    const std::vector<std::string> words{"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"};
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::set<std::uint64_t> buckets;
        for (const auto& w : words) buckets.insert(hash::seeded64(w, seed) % 256);
        if (buckets.size() < words.size()) continue;  // a collision makes the cosine a multiple of 1/4
        ++checked;
        const auto embedder = deterministic_embedder(256, seed);
        const auto c = judge_case("alpha beta gamma delta", "", {"epsilon zeta eta theta"});
        const auto sim = query_context_similarity(c.question, c.record.retrieval, embedder);
        REQUIRE(sim);
        CHECK(std::abs(sim->whole) < 0.1);
    }
    CHECK(checked > 80);
}

// ---------------------------------------------------------------------------
// Judges and judge-based metrics

TEST_CASE("mock judge", "[judge]") {
    CHECK(mock_judge("solar panels", "solar panels", 1.0));
    CHECK_FALSE(mock_judge("geese marsh frozen", "pottery kilns clay", 0.3));
    CHECK(mock_judge("anything", "anything", 0.0));
    MockJudge judge;
    CHECK(judge.statements("One. Two.") == std::vector<std::string>{"One.", "Two."});
    CHECK(judge.attributable("Two.", {"One. Two."}));
    CHECK_FALSE(judge.attributable("Tolls fund lighting.", {"One. Two."}));
}

TEST_CASE("contextual precision fixtures", "[judge][precision]") {
    MockJudge judge;
    const auto p = contextual_precision(precision_fixture(), judge);
    REQUIRE(p);
    CHECK(std::abs(p->plain - 0.4) <= 1e-12);
    CHECK(std::abs(p->rank_weighted - 5.0 / 6.0) <= 1e-12);

    const auto all = precision_from_labels({true, true, true});
    CHECK(all.plain == 1.0);
    CHECK(all.rank_weighted == 1.0);
    const auto none = precision_from_labels({false, false});
    CHECK(none.plain == 0.0);
    CHECK(none.rank_weighted == 0.0);
    CHECK_FALSE(contextual_precision(judge_case("q", "x", {}), judge));
}

TEST_CASE("contextual recall fixtures", "[judge][recall]") {
    MockJudge judge;
    CHECK(contextual_recall(recall_fixture(), judge) == 0.75);
    const std::string fact = "The Harbor Library was founded in 1911.";
    CHECK(contextual_recall(judge_case("q", fact, {"Hours vary. " + fact}), judge) == 1.0);
    CHECK(contextual_recall(judge_case("q", "Glaciers carve granite valleys.", {fact}), judge) == 0.0);
    CHECK_FALSE(contextual_recall(judge_case("q", "...", {fact}), judge));
}

TEST_CASE("contextual and answer relevancy", "[judge][relevancy]") {
    MockJudge judge;
    const std::string q = "Why is the observatory on the north hill?";
    const std::string rel1 = "The observatory sits on the north hill.";
    const std::string rel2 = "The north hill observatory is above the fog.";
    const std::string irr1 = "Bakers knead dough before dawn.";
    const std::string irr2 = "Violin strings vibrate softly.";
    CHECK(contextual_relevancy(judge_case(q, "", {rel1}), judge) == 1.0);
    CHECK(contextual_relevancy(judge_case(q, "", {rel1 + " " + irr1, rel2 + " " + irr2}), judge) == 0.5);
    CHECK_FALSE(contextual_relevancy(judge_case(q, "", {}), judge));

    CHECK(answer_relevancy(judge_case(q, "", {}, rel1), judge) == 1.0);
    CHECK(answer_relevancy(judge_case(q, "", {}, rel1 + " " + irr1 + " " + rel2 + " " + irr2), judge) == 0.5);
    CHECK_FALSE(answer_relevancy(judge_case(q, "", {}, ""), judge));
}

TEST_CASE("LLM judge parses replies and reports bad responses", "[judge][llm]") {
    FunctionModel model([](const std::string& user) -> std::string {
        if (user.find("JSON array") != std::string::npos) return "Sure: [\"A.\", \"B.\"]";
        return user.find("fog") != std::string::npos ? " Yes." : "no";
    });
    LlmJudge judge(model);
    CHECK(judge.relevant("fog text", "ref"));
    CHECK_FALSE(judge.relevant("clear", "ref"));
    CHECK(judge.statements("A. B.") == std::vector<std::string>{"A.", "B."});
    CHECK(model.seen.at(0).find("fog text") != std::string::npos);

    FunctionModel broken([](const std::string&) { return std::string("I cannot do that"); });
    LlmJudge bad(broken);
    CHECK_THROWS_AS(bad.statements("x"), LlmError);
    const auto scores = score_case(judge_case("q", "Expected sentence.", {"ctx"}, "answer"), deterministic_embedder(), bad);
    CHECK_FALSE(scores.contextual_recall);
    REQUIRE_FALSE(scores.errors.empty());
    CHECK(scores.errors.front().starts_with("contextual_recall:"));
}

TEST_CASE("score_case fills every metric and is deterministic", "[judge][score]") {
    const auto embedder = deterministic_embedder();
    MockJudge judge;
    const auto c = judge_case("When was the Harbor Library founded?", "The Harbor Library was founded in 1911.",
                              {"The Harbor Library was founded in 1911 by merchants."}, "It was founded in 1911.");
    const auto s = score_case(c, embedder, judge);
    for (const auto& f : kHeadlineMetrics) {
        INFO(f.name);
        REQUIRE((s.*(f.member)).has_value());
        CHECK(*(s.*(f.member)) >= 0.0);
        CHECK(*(s.*(f.member)) <= 1.0);
    }
    CHECK(s.errors.empty());
    const nlohmann::json a = s, b = score_case(c, embedder, judge);
    CHECK(a.dump() == b.dump());
    CHECK(a.at("csga_raw").is_number());
}

// ---------------------------------------------------------------------------
// Question sets and k lists

TEST_CASE("question sets and k lists", "[experiment]") {
    const auto qs = load_question_set(fixtures_dir() / "truth.jsonl");
    CHECK(qs.entries.size() == 4);
    std::set<QuestionCategory> cats;
    for (const auto& e : qs.entries) cats.insert(e.category);
    CHECK(cats.size() == 4);
    CHECK(qs.find("When was the Harbor Library founded?"));

    CHECK(parse_k_values("1..4") == std::vector<std::size_t>{1, 2, 3, 4});
    CHECK(parse_k_values("1,3,5") == std::vector<std::size_t>{1, 3, 5});
    CHECK(parse_k_values("7") == std::vector<std::size_t>{7});
    CHECK_THROWS_AS(parse_k_values("0..3"), ConfigError);
    CHECK_THROWS_AS(parse_k_values("3,2"), ConfigError);
    CHECK_THROWS_AS(parse_k_values("a"), ConfigError);
    CHECK_THROWS_AS(parse_category("factual"), ConfigError);

    QuestionSet dup{"d", {{"q", QuestionCategory::factual_dense, ""}, {"q", QuestionCategory::factual_dense, ""}}};
    CHECK_THROWS_AS(dup.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

struct SmallSweep {
    Embedder embedder = deterministic_embedder();
    HybridIndex index = index_over({"Solar panels on the roof cut energy costs.", "The wind farm has forty turbines.",
                                    "Tuition is 9,800 dollars per year.", "The library opened in 1911."},
                                   embedder);
    MockJudge judge;
    QuestionSet qs{"small",
                   {{"How much is tuition?", QuestionCategory::factual_dense, "Tuition is 9,800 dollars per year."},
                    {"Why use solar panels?", QuestionCategory::reason_dense, "Solar panels cut energy costs."}}};
    SweepConfig cfg = [] {
        SweepConfig c;
        c.k_values = {1, 2, 3};
        return c;
    }();
};

} // namespace

TEST_CASE("sweep produces one row per (question, k, model)", "[sweep]") {
    SmallSweep s;
    TempDir dir("sweep");
    EchoStubModel model;
    SweepPipeline pipeline{&s.index, &s.embedder, {&model}, &s.judge, "mock"};
    const auto out = run_sweep(s.qs, s.cfg, pipeline, dir.path() / "results.jsonl");
    CHECK(out.rows.size() == 6);
    CHECK(out.invocations == 6);
    CHECK(model.calls() == 6);
    CHECK(load_results(dir.path() / "results.jsonl").size() == 6);
    for (const auto& r : out.rows) {
        CHECK(r.record.retrieval.fused.size() <= r.k);
        CHECK(r.record.timestamp == 0);
        CHECK(r.scores.errors.empty());
    }

    // two models share one retrieval per (question, k)
    EchoStubModel second;
    ScriptedStubModel scripted({{"How much is tuition?", {"9,800 dollars.", 1.5}}, {"Why use solar panels?", {"Costs.", 2.0}}});
    SweepPipeline both{&s.index, &s.embedder, {&second, &scripted}, &s.judge, "mock"};
    const auto two = run_sweep(s.qs, s.cfg, both, dir.path() / "two.jsonl");
    CHECK(two.rows.size() == 12);
    CHECK(two.rows[0].model == "echo-stub");
    CHECK(two.rows[1].model == "scripted-stub");
    CHECK(two.rows[1].record.latency_seconds == 1.5);
}

TEST_CASE("sweep resumes after an interruption", "[sweep]") {
    SmallSweep s;
    TempDir dir("resume");
    const auto file = dir.path() / "results.jsonl";
    EchoStubModel model;
    SweepPipeline pipeline{&s.index, &s.embedder, {&model}, &s.judge, "mock"};
    run_sweep(s.qs, s.cfg, pipeline, file);
    const auto full = read_file_bytes(file);

    // keep four complete rows plus half of the fifth
    const auto lines = lines_of(full);
    std::string cut;
    for (int i = 0; i < 4; ++i) cut += lines[static_cast<std::size_t>(i)] + "\n";
    cut += lines[4].substr(0, lines[4].size() / 2);
    write_file_atomic(file, cut);

    EchoStubModel fresh;
    SweepPipeline resumed{&s.index, &s.embedder, {&fresh}, &s.judge, "mock"};
    const auto out = run_sweep(s.qs, s.cfg, resumed, file);
    CHECK(out.invocations == 2);
    CHECK(fresh.calls() == 2);
    CHECK(out.resumed == 4);
    CHECK(read_file_bytes(file) == full);

    EchoStubModel idle;
    SweepPipeline done{&s.index, &s.embedder, {&idle}, &s.judge, "mock"};
    CHECK(run_sweep(s.qs, s.cfg, done, file).invocations == 0);
}

TEST_CASE("sweep records failures without dropping rows", "[sweep]") {
    SmallSweep s;
    TempDir dir("fail");
    ScriptedStubModel partial({{"How much is tuition?", {"9,800 dollars.", 0.5}}});
    SweepPipeline pipeline{&s.index, &s.embedder, {&partial}, &s.judge, "mock"};
    const auto out = run_sweep(s.qs, s.cfg, pipeline, dir.path() / "r.jsonl");
    REQUIRE(out.rows.size() == 6);
    std::size_t errored = 0;
    for (const auto& r : out.rows) {
        if (r.record.error) {
            ++errored;
            CHECK(r.record.answer.empty());
            CHECK_FALSE(r.scores.answer_relevancy);
        }
    }
    CHECK(errored == 3);
    CHECK_THROWS_AS(run_sweep(s.qs, s.cfg, SweepPipeline{}, dir.path() / "x.jsonl"), ConfigError);
}

TEST_CASE("concurrent sweeps give the same rows as serial ones", "[sweep]") {
    SmallSweep s;
    TempDir dir("par");
    EchoStubModel a, b;
    SweepPipeline p1{&s.index, &s.embedder, {&a}, &s.judge, "mock"};
    SweepPipeline p2{&s.index, &s.embedder, {&b}, &s.judge, "mock"};
    run_sweep(s.qs, s.cfg, p1, dir.path() / "serial.jsonl");
    auto cfg = s.cfg;
    cfg.max_in_flight = 3;
    run_sweep(s.qs, cfg, p2, dir.path() / "parallel.jsonl");
    CHECK(read_file_bytes(dir.path() / "serial.jsonl") == read_file_bytes(dir.path() / "parallel.jsonl"));
}

TEST_CASE("per-chunk relevance plateaus beyond the relevant chunks", "[sweep][plateau]") {
    TempDir dir("plateau");
    const auto means = plateau_chunk_means(dir.path(), 10);
    REQUIRE(means.size() == 10);
    for (std::size_t k = 3; k < means.size(); ++k) {
        INFO("k = " << k + 1);
        CHECK(means[k] <= means[k - 1] + 1e-6);
    }
    CHECK(means[9] < means[2]);
}

// ---------------------------------------------------------------------------
// Aggregation and reports

TEST_CASE("summarize and aggregate", "[aggregate]") {
    const auto s = summarize({0.2, std::nullopt, 0.4, 0.9});
    CHECK(*s.average == Catch::Approx(0.5).epsilon(1e-15));
    CHECK(*s.median == 0.4);
    CHECK(s.count == 3);
    CHECK(s.excluded == 1);
    CHECK(*summarize({0.1, 0.3}).median == 0.1);
    CHECK_FALSE(summarize({std::nullopt}).average);

    const std::vector<ResultRow> rows{row_with(QuestionCategory::factual_dense, "q", 1, 0.7, 2.0)};
    const auto one = aggregate(rows, QuestionCategory::factual_dense, "m");
    CHECK(*one.metrics.at("csga").average == 0.7);
    CHECK(*one.metrics.at("csga").median == 0.7);
    REQUIRE(one.csga_range);
    CHECK(one.csga_range->first == 0.7);
    CHECK(one.csga_range->second == 0.7);
    CHECK(*one.latency.average == 2.0);
    CHECK_THROWS_AS(aggregate(rows, QuestionCategory::reason_dense, "m"), Error);
}

TEST_CASE("latency histogram", "[aggregate]") {
    const auto bins = latency_histogram({1.0, 1.2, 2.9});
    REQUIRE(bins.size() == 4);
    CHECK(bins[0].lower == 1.0);
    CHECK(bins[0].count == 2);
    CHECK(bins[1].count == 0);
    CHECK(bins[2].count == 0);
    CHECK(bins[3].lower == 2.5);
    CHECK(bins[3].count == 1);
    CHECK(latency_histogram({}).empty());
}

TEST_CASE("report files have the table layout and are reproducible", "[report]") {
    std::vector<ResultRow> rows;
    const std::array<double, 4> base{0.1, 0.2, 0.3, 0.4};
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t k = 1; k <= 3; ++k) {
            rows.push_back(row_with(kAllCategories[c], "q" + std::to_string(c), k, base[c] * static_cast<double>(k), 1.0 + 0.3 * static_cast<double>(k)));
        }
    }
    rows[0].scores.csga.reset();
    const auto reports = aggregate_all(rows);
    REQUIRE(reports.size() == 4);
    CHECK(reports[0].metrics.at("csga").excluded == 1);

    TempDir dir("report");
    const auto written = emit_report(reports, dir.path() / "a");
    CHECK(written.size() == 5);
    const auto table = lines_of(read_file_bytes(dir.path() / "a" / "table_m.csv"));
    REQUIRE(table.size() == 1 + 9 * 2 + 3);
    CHECK(table[0] == kTableHeader);
    for (const auto& line : table) CHECK(csv_fields(line) == 6);
    CHECK(table[1].starts_with("unigram_precision,average,0.2,0.4,0.6,0.8"));
    CHECK(table.back() == "csga,range,\"[0.2,0.3]\",\"[0.2,0.6]\",\"[0.3,0.9]\",\"[0.4,1.2]\"");

    const auto secondary = lines_of(read_file_bytes(dir.path() / "a" / "table_m_secondary.csv"));
    CHECK(secondary.size() == 1 + 7 * 2);
    const auto curves = lines_of(read_file_bytes(dir.path() / "a" / "curves_m.csv"));
    CHECK(curves.size() == 1 + rows.size());
    const auto hist = lines_of(read_file_bytes(dir.path() / "a" / "latency_histogram_m.csv"));
    CHECK(hist.front() == "bin_start,bin_end,count");

    const auto summary = nlohmann::json::parse(read_file_bytes(dir.path() / "a" / "summary.json"));
    CHECK(summary.at("rows") == 12);
    CHECK(summary.at("models").at("m").size() == 4);

    emit_report(reports, dir.path() / "b");
    for (const auto& f : written) CHECK(read_file_bytes(f) == read_file_bytes(dir.path() / "b" / f.filename()));
}
