#pragma once

// Test-only helpers: brute-force oracles written independently of the library
// algorithms, random input generators and the offline fixture pipeline.

#include "ragmark/chunk.hpp"
#include "ragmark/embed.hpp"
#include "ragmark/evaluate.hpp"
#include "ragmark/experiment.hpp"
#include "ragmark/generate.hpp"
#include "ragmark/ingest.hpp"
#include "ragmark/retrieve.hpp"
#include "ragmark/store.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace ragmark::testing {

namespace fs = std::filesystem;

inline fs::path fixtures_dir() { return fs::path(RAGMARK_FIXTURES); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<unsigned> counter{0};
        path_ = fs::temp_directory_path() /
                ("ragmark-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

// ---------------------------------------------------------------------------
// Random inputs

/// Space-separated words over a small vocabulary, with occasional punctuation tokens and capitals.
inline std::string random_token_string(std::mt19937_64& rng, std::size_t max_tokens, std::size_t vocab) {
    std::uniform_int_distribution<std::size_t> len(0, max_tokens);
    std::uniform_int_distribution<std::size_t> word(0, vocab - 1);
    std::uniform_int_distribution<int> pct(0, 99);
    static const char* punct[] = {",", ".", "!", "-", ";", "?"};
    std::string out;
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
        if (!out.empty()) out += ' ';
        const int roll = pct(rng);
        if (roll < 10) {
            out += punct[static_cast<std::size_t>(roll) % 6];
        } else {
            std::string w = "w" + std::to_string(word(rng));
            if (roll < 20) w[0] = 'W';
            out += w;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lexical oracle: split at ASCII characters other than letters, digits and apostrophes (bytes
// of multi-byte UTF-8 sequences count as letters), lowercase ASCII, drop tokens without a letter
// or digit, then clipped counts by exhaustive pairing.

inline std::vector<std::string> oracle_terms(const std::string& text) {
    auto word_byte = [](unsigned char c) { return c >= 0x80 || std::isalnum(c) != 0 || c == '\''; };
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        const bool has_alnum = std::any_of(cur.begin(), cur.end(), [](unsigned char c) { return c >= 0x80 || std::isalnum(c) != 0; });
        if (has_alnum) {
            std::transform(cur.begin(), cur.end(), cur.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            out.push_back(cur);
        }
        cur.clear();
    };
    for (char c : text) {
        if (word_byte(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        } else {
            flush();
        }
    }
    flush();
    return out;
}

/// Greedy one-to-one matching of candidate tokens to unused reference tokens.
inline std::size_t oracle_clipped_matches(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
    std::vector<bool> used(ref.size(), false);
    std::size_t matches = 0;
    for (const auto& c : cand) {
        for (std::size_t j = 0; j < ref.size(); ++j) {
            if (!used[j] && ref[j] == c) {
                used[j] = true;
                ++matches;
                break;
            }
        }
    }
    return matches;
}

struct OracleLexical {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
};

inline OracleLexical oracle_lexical(const std::string& candidate, const std::string& reference) {
    const auto c = oracle_terms(candidate);
    const auto r = oracle_terms(reference);
    const auto m = static_cast<double>(oracle_clipped_matches(c, r));
    OracleLexical out;
    if (!c.empty()) out.precision = m / static_cast<double>(c.size());
    if (!r.empty()) out.recall = m / static_cast<double>(r.size());
    if (out.precision && out.recall) {
        const double p = *out.precision, q = *out.recall;
        out.f1 = (p + q) > 0 ? 2 * p * q / (p + q) : 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// BM25 oracle: the scoring formula evaluated per document with no index.

inline std::vector<RankedItem> oracle_bm25(const std::vector<std::string>& ids, const std::vector<std::vector<std::string>>& docs,
                                           const std::vector<std::string>& query, std::size_t k, double k1 = 1.5,
                                           double b = 0.75) {
    const double n = static_cast<double>(docs.size());
    double total = 0.0;
    for (const auto& d : docs) total += static_cast<double>(d.size());
    const double avg = total / n;
    std::vector<RankedItem> all;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        double score = 0.0;
        for (const auto& q : query) {
            double df = 0.0;
            for (const auto& d : docs) {
                if (std::find(d.begin(), d.end(), q) != d.end()) df += 1.0;
            }
            const double tf = static_cast<double>(std::count(docs[i].begin(), docs[i].end(), q));
            if (tf == 0.0) continue;
            const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
            const double len = static_cast<double>(docs[i].size());
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
        }
        if (score > 0.0) all.push_back({ids[i], score});
    }
    std::stable_sort(all.begin(), all.end(), [](const RankedItem& x, const RankedItem& y) {
        if (x.score != y.score) return x.score > y.score;
        return x.chunk_id < y.chunk_id;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

// ---------------------------------------------------------------------------
// Vector search oracle: every inner product, then a full sort.

inline std::vector<RankedItem> oracle_vector_search(const std::vector<VectorEntry>& entries, const std::vector<float>& q,
                                                    std::size_t k) {
    std::vector<RankedItem> all;
    for (const auto& e : entries) {
        double s = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) s += static_cast<double>(e.values[i]) * static_cast<double>(q[i]);
        all.push_back({e.chunk_id, s});
    }
    std::sort(all.begin(), all.end(), [](const RankedItem& x, const RankedItem& y) {
        return x.score != y.score ? x.score > y.score : x.chunk_id < y.chunk_id;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

inline std::vector<float> random_unit_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(g(rng));
    normalize_l2(v);
    return v;
}

// ---------------------------------------------------------------------------
// Fusion oracle

inline std::map<std::string, double> oracle_rrf(const RankedList& a, const RankedList& b, double wa, double wb, double c) {
    std::map<std::string, double> scores;
    for (std::size_t i = 0; i < a.items.size(); ++i) scores[a.items[i].chunk_id] += wa / (c + static_cast<double>(i + 1));
    for (std::size_t i = 0; i < b.items.size(); ++i) scores[b.items[i].chunk_id] += wb / (c + static_cast<double>(i + 1));
    return scores;
}

/// A ranked list over distinct ids drawn from `pool`, with strictly decreasing scores.
inline RankedList random_ranked_list(std::mt19937_64& rng, const std::vector<std::string>& pool, std::size_t max_len,
                                     RankSource source) {
    std::vector<std::string> ids = pool;
    std::shuffle(ids.begin(), ids.end(), rng);
    std::uniform_int_distribution<std::size_t> len(0, std::min(max_len, ids.size()));
    ids.resize(len(rng));
    RankedList list{{}, source};
    for (std::size_t i = 0; i < ids.size(); ++i) list.items.push_back({ids[i], static_cast<double>(ids.size() - i)});
    return list;
}

// ---------------------------------------------------------------------------
// Chunk geometry: locate each chunk's tokens in its document by exhaustive search.

struct ChunkRange {
    std::size_t begin;
    std::size_t end;
};

inline std::vector<ChunkRange> locate_chunks(const std::string& doc_text, const std::vector<Chunk>& chunks) {
    const auto doc_tokens = tokenize(doc_text);
    std::vector<ChunkRange> out;
    std::size_t from = 0;
    for (const auto& c : chunks) {
        const auto toks = tokenize(c.text);
        bool found = false;
        for (std::size_t s = from; s + toks.size() <= doc_tokens.size(); ++s) {
            if (std::equal(toks.begin(), toks.end(), doc_tokens.begin() + static_cast<std::ptrdiff_t>(s))) {
                out.push_back({s, s + toks.size()});
                from = s;
                found = true;
                break;
            }
        }
        if (!found) out.push_back({doc_tokens.size() + 1, doc_tokens.size() + 1});
    }
    return out;
}

/// A generated document plus its known structure: tokens per sentence, per paragraph.
struct GeneratedDoc {
    std::string text;
    std::vector<std::vector<std::size_t>> paragraphs;
};

/// Paragraphs of sentences "Tn tn ... tn." with random word counts.
inline GeneratedDoc random_document(std::mt19937_64& rng, std::size_t paragraphs, std::size_t max_sentences,
                                    std::size_t max_words) {
    std::uniform_int_distribution<std::size_t> sentences(1, max_sentences);
    std::uniform_int_distribution<std::size_t> words(1, max_words);
    std::uniform_int_distribution<int> vocab(0, 499);
    GeneratedDoc doc;
    for (std::size_t p = 0; p < paragraphs; ++p) {
        if (p) doc.text += "\n\n";
        doc.paragraphs.emplace_back();
        const auto ns = sentences(rng);
        for (std::size_t s = 0; s < ns; ++s) {
            if (s) doc.text += ' ';
            const auto nw = words(rng);
            for (std::size_t w = 0; w < nw; ++w) {
                std::string word = "t" + std::to_string(vocab(rng));
                if (w == 0) word[0] = 'T';
                if (w) doc.text += ' ';
                doc.text += word;
            }
            doc.text += '.';
            doc.paragraphs.back().push_back(nw + 1);
        }
    }
    return doc;
}

/// Boundary level before each token (and at the end) derived from the known structure:
/// 2 = paragraph start, 1 = sentence start, 0 = inside a sentence.
inline std::vector<int> structure_levels(const GeneratedDoc& doc) {
    std::vector<int> levels;
    for (const auto& para : doc.paragraphs) {
        bool first = true;
        for (auto len : para) {
            levels.push_back(first ? 2 : 1);
            first = false;
            for (std::size_t i = 1; i < len; ++i) levels.push_back(0);
        }
    }
    levels.push_back(2);
    return levels;
}

/// Step-through simulation of the recursive packing rule over structure levels.
inline std::vector<ChunkRange> oracle_pack(const std::vector<int>& levels, std::size_t max_tokens, std::size_t overlap,
                                           std::size_t slack, int cap) {
    const std::size_t n = levels.size() - 1;
    std::vector<ChunkRange> out;
    if (n == 0) return out;
    std::size_t start = 0, prev_end = 0;
    for (;;) {
        const std::size_t hi = std::min(n, start + max_tokens);
        int best_level = -1;
        std::size_t end = hi;
        for (std::size_t e = prev_end + 1; e <= hi; ++e) {
            const int lv = std::min(levels[e], cap);
            if (lv >= best_level) {
                best_level = lv;
                end = e;
            }
        }
        out.push_back({start, end});
        if (end == n) break;
        prev_end = end;
        if (overlap == 0 || end - start <= overlap) {
            start = overlap == 0 ? end : start;
            continue;
        }
        const std::size_t target = end - overlap;
        std::size_t lo = target >= slack ? target - slack : 0;
        lo = std::max(lo, start);
        if (end + 1 > max_tokens) lo = std::max(lo, end + 1 - max_tokens);
        std::size_t chosen = target;
        for (std::size_t b = lo; b <= target; ++b) {
            if (std::min(levels[b], cap) >= 1) chosen = b;
        }
        start = chosen;
    }
    return out;
}

/// `paragraphs` single-sentence paragraphs of exactly `tokens` tokens each (the final period
/// included).
inline std::string uniform_paragraphs(std::size_t paragraphs, std::size_t tokens) {
    std::string text;
    for (std::size_t p = 0; p < paragraphs; ++p) {
        if (p) text += "\n\n";
        for (std::size_t w = 0; w + 1 < tokens; ++w) {
            if (w) text += ' ';
            text += (w == 0 ? "P" : "p") + std::to_string(p) + "w" + std::to_string(w);
        }
        text += '.';
    }
    return text;
}

// ---------------------------------------------------------------------------
// Offline fixture pipeline: local site -> crawl -> chunk -> deterministic embeddings -> index.

inline SplitterConfig fixture_splitter() {
    SplitterConfig cfg;
    cfg.max_tokens = 40;
    cfg.overlap_tokens = 6;
    return cfg;
}

inline LoadedIndex build_fixture_index(const fs::path& work, std::size_t* crawled = nullptr) {
    DirectoryFetcher fetcher(fixtures_dir() / "site");
    CrawlLimits limits;
    limits.max_concurrent_fetches = 1;
    CrawlOptions options;
    options.clock = [] { return std::int64_t{1700000000}; };
    const auto seeds = parse_sitemap(read_file_bytes(fixtures_dir() / "site" / "sitemap.xml"));
    auto docs = crawl(seeds, fetcher, limits, work / "corpus", options);
    if (crawled) *crawled = docs.size();
    docs = load_corpus(work / "corpus");
    std::sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) { return a.id < b.id; });
    std::vector<Chunk> chunks;
    for (const auto& d : docs) {
        for (auto& c : split_document(d, fixture_splitter())) chunks.push_back(std::move(c));
    }
    auto provider = std::make_shared<DeterministicProvider>(256, 0);
    Embedder embedder(provider, std::make_shared<EmbeddingCache>(work / "cache"));
    std::vector<std::string> texts;
    for (const auto& c : chunks) texts.push_back(c.text);
    const auto vectors = embedder.embed(texts);
    VectorTable table{embedder.provider_id(), {}};
    for (std::size_t i = 0; i < chunks.size(); ++i) table.entries.push_back({chunks[i].chunk_id, vectors[i].values});
    auto loaded = build_index(std::move(chunks), table);
    save_index(work / "index", loaded);
    return load_index(work / "index");
}

/// A hybrid index over literal chunk texts (ids "c00", "c01", ...) with the deterministic embedder.
inline HybridIndex index_over(const std::vector<std::string>& texts, const Embedder& embedder) {
    std::vector<Chunk> chunks;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "c%02zu", i);
        chunks.push_back({id, "doc", texts[i], tokenize(texts[i]).size(), i});
    }
    return build_hybrid_index(std::move(chunks), embedder.embed(texts));
}

inline Embedder deterministic_embedder(std::size_t dim = 256, std::uint64_t seed = 0) {
    return Embedder(std::make_shared<DeterministicProvider>(dim, seed));
}

/// Three chunks sharing the query's vocabulary plus distractors over disjoint vocabulary.
struct PlateauFixture {
    std::string question = "How efficient are the rooftop solar panels?";
    std::vector<std::string> chunks{
        "The rooftop solar panels are efficient and convert sunlight well.",
        "Efficient rooftop solar panels lower the energy bill.",
        "How the solar panels on the rooftop became so efficient.",
        "Migrating geese rest beside the frozen marsh.",
        "Pottery kilns fire clay vessels overnight.",
        "Violin strings vibrate against a spruce bridge.",
        "Glaciers carve valleys through granite mountains.",
        "Bakers knead dough before dawn.",
        "Submarine sonar pings echo off trenches.",
        "Chess grandmasters memorize opening variations.",
    };
};

/// Runs the plateau fixture through a k = 1..k_max sweep (echo model, mock judge) and returns the
/// per-chunk mean query/context cosine for each k.
inline std::vector<double> plateau_chunk_means(const fs::path& work, std::size_t k_max) {
    PlateauFixture fx;
    const auto embedder = deterministic_embedder();
    const auto index = index_over(fx.chunks, embedder);
    EchoStubModel model;
    MockJudge judge;
    QuestionSet qs{"plateau", {{fx.question, QuestionCategory::reason_dense, fx.chunks[0]}}};
    SweepConfig cfg;
    cfg.k_values.clear();
    for (std::size_t k = 1; k <= k_max; ++k) cfg.k_values.push_back(k);
    SweepPipeline pipeline{&index, &embedder, {&model}, &judge, judge.name()};
    const auto outcome = run_sweep(qs, cfg, pipeline, work / "plateau.jsonl");
    std::vector<double> means;
    for (const auto& row : outcome.rows) means.push_back(row.scores.query_context_chunk_mean.value_or(-1.0));
    return means;
}

// ---------------------------------------------------------------------------
// Judge-metric fixtures

/// An evaluation case whose record carries `contexts` as its fused retrieval.
inline EvalCase judge_case(std::string question, std::string expected, const std::vector<std::string>& contexts,
                           std::string answer = {}) {
    EvalCase c;
    c.question = std::move(question);
    c.expected_output = std::move(expected);
    c.record.question = c.question;
    c.record.answer = std::move(answer);
    c.record.retrieval.query = c.question;
    c.record.retrieval.k = contexts.size();
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        c.record.retrieval.fused.items.push_back({"c" + std::to_string(i), 1.0 / static_cast<double>(i + 1)});
        c.record.retrieval.contexts.push_back(contexts[i]);
        if (i) c.record.retrieval.context_text += "\n\n";
        c.record.retrieval.context_text += contexts[i];
    }
    return c;
}

/// Five chunks; the ones at ranks 1 and 3 repeat the expected output verbatim, the rest share no
/// vocabulary with it.
inline EvalCase precision_fixture() {
    const std::string expected = "The museum opens at nine every morning.";
    return judge_case("When does the museum open?", expected,
                      {expected, "Tidal currents shift sandbars along estuaries.", expected,
                       "Blacksmiths quench glowing iron in oil.", "Orchids thrive under humid greenhouse glass."});
}

/// Four expected statements; the context repeats three of them and omits the fourth.
inline EvalCase recall_fixture() {
    const std::string s1 = "The bridge spans four hundred meters.";
    const std::string s2 = "Engineers painted it bright orange.";
    const std::string s3 = "Ferries stopped running after its opening.";
    const std::string s4 = "Tolls fund nightly lighting displays.";
    return judge_case("Tell me about the bridge.", s1 + " " + s2 + " " + s3 + " " + s4, {s1 + " " + s2, s3});
}

} // namespace ragmark::testing
