// Acceptance gate: one PASS/FAIL line per criterion with its runtime. Exit status is nonzero
// when any criterion fails or exceeds its time budget.

#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

using namespace ragmark;
using namespace ragmark::testing;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

int failures = 0;

void criterion(const char* id, const char* title, double budget_seconds, const std::function<void(Outcome&)>& body) {
    Outcome out;
    const auto start = std::chrono::steady_clock::now();
    try {
        body(out);
    } catch (const std::exception& e) {
        out.require(false, std::string("exception: ") + e.what());
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (elapsed >= budget_seconds) out.require(false, "over time budget");
    std::printf("%s %s %.3fs (budget %.0fs) %s%s%s\n", id, out.ok ? "PASS" : "FAIL", elapsed, budget_seconds, title,
                out.ok ? "" : ": ", out.detail.c_str());
    std::fflush(stdout);
    if (!out.ok) ++failures;
}

std::vector<std::string> ids_of(const std::vector<RankedItem>& items) {
    std::vector<std::string> out;
    for (const auto& i : items) out.push_back(i.chunk_id);
    return out;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::size_t csv_fields(const std::string& line) {
    std::size_t n = 1;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) ++n;
    }
    return n;
}

/// Crawl, index, sweep k = 1..5 over the truth set and emit the report into `work`.
std::vector<ResultRow> offline_pipeline(const fs::path& work, std::size_t& crawled) {
    const auto loaded = build_fixture_index(work, &crawled);
    const auto embedder = deterministic_embedder();
    check_provider(loaded.meta, embedder);
    EchoStubModel model;
    MockJudge judge;
    const auto qs = load_question_set(fixtures_dir() / "truth.jsonl");
    SweepConfig cfg;
    cfg.k_values = {1, 2, 3, 4, 5};
    cfg.splitter = fixture_splitter();
    const SweepPipeline pipeline{&loaded.index, &embedder, {&model}, &judge, judge.name()};
    const auto outcome = run_sweep(qs, cfg, pipeline, work / "run" / "results.jsonl");
    const auto rows = load_results(work / "run" / "results.jsonl");
    emit_report(aggregate_all(rows), work / "run", sweep_config_json(cfg, pipeline));
    return outcome.rows;
}

} // namespace

int main() {
    criterion("AC1", "lexical metrics equal the clipped-count oracle; recall/precision duality", 5, [](Outcome& out) {
        std::mt19937_64 rng(1001);
        for (int i = 0; i < 500; ++i) {
            const auto x = random_token_string(rng, 25, 10);
            const auto y = random_token_string(rng, 25, 10);
            const auto o = oracle_lexical(x, y);
            const auto r = rouge1(x, y);
            out.require(unigram_precision(x, y) == o.precision, "precision mismatch on pair " + std::to_string(i));
            out.require(unigram_recall(x, y) == o.recall, "recall mismatch on pair " + std::to_string(i));
            out.require(r.has_value() == o.f1.has_value() && (!r || r->f1 == *o.f1), "rouge1 mismatch on pair " + std::to_string(i));
            out.require(unigram_recall(x, y) == unigram_precision(y, x), "duality broken on pair " + std::to_string(i));
        }
    });

    criterion("AC2", "BM25 equals direct formula evaluation (50 corpora, 1e-9, ranking and ties)", 10, [](Outcome& out) {
        std::mt19937_64 rng(1002);
        for (int round = 0; round < 50; ++round) {
            const std::size_t n = 1 + rng() % 20;
            std::vector<Chunk> chunks;
            std::vector<std::string> ids;
            std::vector<std::vector<std::string>> terms_of;
            for (std::size_t i = 0; i < n; ++i) {
                char id[8];
                std::snprintf(id, sizeof id, "d%02zu", i);
                // duplicated documents produce exact score ties
                auto text = (i > 0 && rng() % 5 == 0) ? chunks[i - 1].text : random_token_string(rng, 25, 30) + " pad";
                chunks.push_back({id, "doc", text, tokenize(text).size(), i});
                ids.push_back(id);
                terms_of.push_back(oracle_terms(text));
            }
            const auto index = bm25_build(chunks);
            for (int q = 0; q < 5; ++q) {
                const auto query = random_token_string(rng, 6, 30);
                const std::size_t k = 1 + rng() % 20;
                const auto got = bm25_score(index, query, k);
                const auto want = oracle_bm25(ids, terms_of, oracle_terms(query), k);
                out.require(ids_of(got.items) == ids_of(want), "ranking differs in corpus " + std::to_string(round));
                for (std::size_t i = 0; i < std::min(got.size(), want.size()); ++i) {
                    out.require(std::abs(got.items[i].score - want[i].score) <= 1e-9, "score differs in corpus " + std::to_string(round));
                }
            }
        }
    });

    criterion("AC3", "exact vector search equals the full-sort oracle; prefix property", 10, [](Outcome& out) {
        std::mt19937_64 rng(1003);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t n = 1 + rng() % 200;
            const std::size_t dim = 8 + rng() % 57;
            std::vector<VectorEntry> entries;
            for (std::size_t i = 0; i < n; ++i) {
                char id[8];
                std::snprintf(id, sizeof id, "v%03zu", i);
                auto v = (i > 0 && rng() % 10 == 0) ? entries[rng() % i].values : random_unit_vector(rng, dim);
                entries.push_back({id, std::move(v)});
            }
            const VectorIndex index(entries, dim);
            const auto q = random_unit_vector(rng, dim);
            const std::size_t k = 1 + rng() % 20;
            const auto got = ids_of(vector_search(index, q, k).items);
            out.require(got == ids_of(oracle_vector_search(entries, q, k)), "order differs in trial " + std::to_string(trial));
            const auto next = ids_of(vector_search(index, q, k + 1).items);
            out.require(got.size() <= next.size() && std::equal(got.begin(), got.end(), next.begin()),
                        "prefix property broken in trial " + std::to_string(trial));
        }
    });

    criterion("AC4", "fusion: agreement, weight-scale invariance, worked value 0.5/61", 5, [](Outcome& out) {
        std::mt19937_64 rng(1004);
        std::vector<std::string> pool;
        for (int i = 0; i < 30; ++i) pool.push_back("p" + std::to_string(i));
        std::uniform_real_distribution<double> weight(0.05, 3.0), alpha(0.01, 100.0);
        for (int trial = 0; trial < 200; ++trial) {
            auto a = random_ranked_list(rng, pool, 20, RankSource::bm25);
            auto b = random_ranked_list(rng, pool, 20, RankSource::vector);
            if (trial % 2 == 0 && !a.empty() && !b.empty()) {
                // move a's top item to the top of b as well
                const auto top = a.items[0].chunk_id;
                std::erase_if(b.items, [&](const RankedItem& it) { return it.chunk_id == top; });
                b.items.insert(b.items.begin(), {top, 1e9});
            }
            const double wa = weight(rng), wb = weight(rng), s = alpha(rng);
            const auto fused = fuse(a, b, wa, wb, 60);
            if (!a.empty() && !b.empty() && a.items[0].chunk_id == b.items[0].chunk_id) {
                out.require(fused.items.at(0).chunk_id == a.items[0].chunk_id, "agreement broken in trial " + std::to_string(trial));
            }
            out.require(ids_of(fuse(a, b, wa * s, wb * s, 60).items) == ids_of(fused.items),
                        "scaling changed the order in trial " + std::to_string(trial));
        }
        const auto x = fuse(RankedList{{{"x", 1.0}}, RankSource::bm25}, RankedList{{{"y", 1.0}}, RankSource::vector}, 0.5, 0.5, 60);
        out.require(x.size() == 2 && x.items[0].chunk_id == "x" && x.items[1].chunk_id == "y", "singleton tie order");
        for (const auto& it : x.items) out.require(std::abs(it.score - 0.5 / 61.0) <= 1e-12, "worked RRF value");
    });

    criterion("AC5", "chunker: max_tokens, complete coverage, overlap bounds, [600, 702, 702]", 10, [](Outcome& out) {
        std::mt19937_64 rng(1005);
        for (int round = 0; round < 100; ++round) {
            const auto gen = random_document(rng, 1 + rng() % 10, 14, 45);
            const Document doc{"g" + std::to_string(round), "http://x/", gen.text, 0};
            const std::size_t total = tokenize(gen.text).size();
            SplitterConfig cfg;
            cfg.max_tokens = 40 + rng() % 400;
            cfg.overlap_tokens = cfg.max_tokens / 10;
            for (auto strategy : {SplitStrategy::recursive, SplitStrategy::sentence}) {
                cfg.strategy = strategy;
                const auto chunks = split_document(doc, cfg);
                const auto ranges = locate_chunks(doc.text, chunks);
                const auto tag = std::string(to_string(strategy)) + " doc " + std::to_string(round);
                out.require(!ranges.empty() && ranges.front().begin == 0 && ranges.back().end == total, "coverage ends, " + tag);
                for (std::size_t i = 0; i < ranges.size(); ++i) {
                    out.require(chunks[i].token_count <= cfg.max_tokens, "max_tokens exceeded, " + tag);
                    if (i == 0) continue;
                    out.require(ranges[i].begin <= ranges[i - 1].end && ranges[i].end > ranges[i - 1].end, "coverage gap, " + tag);
                    const auto shared = ranges[i - 1].end - ranges[i].begin;
                    if (strategy == SplitStrategy::sentence) {
                        out.require(shared == 0, "sentence chunks overlap, " + tag);
                        continue;
                    }
                    const auto prev_len = ranges[i - 1].end - ranges[i - 1].begin;
                    out.require(shared >= std::min(cfg.overlap_tokens, prev_len), "overlap too short, " + tag);
                    out.require(shared <= cfg.overlap_tokens + cfg.overlap_slack, "overlap too long, " + tag);
                }
            }
        }
        SplitterConfig cfg;
        const auto worked = split_recursive({"w", "http://x/", uniform_paragraphs(3, 600), 0}, cfg);
        std::vector<std::size_t> sizes;
        for (const auto& c : worked) sizes.push_back(c.token_count);
        out.require(sizes == std::vector<std::size_t>{600, 702, 702}, "worked example sizes");
    });

    criterion("AC6", "offline end-to-end sweep k=1..5 x 4 questions, report shape, byte-identical rerun", 60, [](Outcome& out) {
        TempDir first("ac6a"), second("ac6b");
        std::size_t crawled = 0;
        const auto rows = offline_pipeline(first.path(), crawled);
        out.require(crawled >= 6, "fewer than 6 pages crawled");
        out.require(rows.size() == 20, "expected 20 result rows, got " + std::to_string(rows.size()));
        for (const auto& line : lines_of(read_file_bytes(first.path() / "run" / "results.jsonl"))) {
            const auto scores = nlohmann::json::parse(line).at("scores");
            for (const auto& f : kHeadlineMetrics) {
                const auto key = std::string(f.name);
                out.require(scores.contains(key) && (scores[key].is_number() || scores[key].is_null()), "metric field " + key);
            }
        }
        std::set<QuestionCategory> cats;
        for (const auto& r : rows) cats.insert(r.category);
        out.require(cats.size() == 4, "one question per category");

        const auto table = lines_of(read_file_bytes(first.path() / "run" / "table_echo-stub.csv"));
        out.require(table.size() == 1 + 9 * 2 + 3, "table row count");
        out.require(!table.empty() && table[0] == kTableHeader, "table header");
        for (const auto& line : table) out.require(csv_fields(line) == 6, "table columns: " + line);

        std::size_t crawled_again = 0;
        offline_pipeline(second.path(), crawled_again);
        for (const auto& entry : fs::directory_iterator(first.path() / "run")) {
            const auto other = second.path() / "run" / entry.path().filename();
            out.require(fs::exists(other) && read_file_bytes(entry.path()) == read_file_bytes(other),
                        "rerun differs: " + entry.path().filename().string());
        }
    });

    criterion("AC7", "per-chunk query/context cosine is non-increasing beyond the 3 relevant chunks", 5, [](Outcome& out) {
        TempDir dir("ac7");
        const auto means = plateau_chunk_means(dir.path(), 10);
        out.require(means.size() == 10, "sweep rows");
        for (std::size_t k = 4; k <= means.size(); ++k) {
            out.require(means[k - 1] <= means[k - 2] + 1e-6, "increase at k=" + std::to_string(k));
        }
    });

    criterion("AC8", "judge fixtures: precision 0.4 and 5/6, recall 0.75", 5, [](Outcome& out) {
        MockJudge judge;
        const auto p = contextual_precision(precision_fixture(), judge);
        out.require(p.has_value(), "precision absent");
        if (p) {
            out.require(std::abs(p->plain - 0.4) <= 1e-12, "plain precision " + std::to_string(p->plain));
            out.require(std::abs(p->rank_weighted - 5.0 / 6.0) <= 1e-12, "rank-weighted precision " + std::to_string(p->rank_weighted));
        }
        const auto r = contextual_recall(recall_fixture(), judge);
        out.require(r && *r == 0.75, "recall");
    });

    std::printf("%s: %d criterion(s) failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
