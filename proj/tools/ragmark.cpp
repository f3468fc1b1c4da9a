// ragmark command-line front end.

#include "ragmark/chunk.hpp"
#include "ragmark/config.hpp"
#include "ragmark/embed.hpp"
#include "ragmark/evaluate.hpp"
#include "ragmark/experiment.hpp"
#include "ragmark/generate.hpp"
#include "ragmark/http.hpp"
#include "ragmark/ingest.hpp"
#include "ragmark/retrieve.hpp"
#include "ragmark/serialize.hpp"
#include "ragmark/store.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ragmark;

namespace {

struct Options {
    std::string config_file;
    Config config;

    // crawl
    std::string sitemap;
    std::string out;
    std::size_t max_pages = 1000;
    std::size_t concurrency = 4;
    long timeout_ms = 10000;
    unsigned retries = 2;
    long delay_ms = 0;
    std::optional<std::int64_t> fixed_time;

    // chunk
    std::string corpus;
    std::optional<std::string> strategy;
    std::optional<std::size_t> max_tokens;
    std::optional<std::size_t> overlap;

    // embedding provider
    std::string chunks;
    std::string provider;
    std::string cache;
    std::optional<std::size_t> dim;
    std::optional<std::uint64_t> seed;

    // index / query
    std::string vectors;
    std::string index;
    std::string query;
    std::size_t k = 5;
    std::optional<std::size_t> bm25_k;
    bool json_output = false;

    // generation
    std::vector<std::string> models;
    std::string questions;
    std::size_t parallel = 1;

    // evaluation
    std::string records;
    std::string truth;
    std::string judge;
    std::string k_values = "1..10";
    std::string in;
};

// ---------------------------------------------------------------------------
// Component construction from flags + config

EmbeddingProviderSpec provider_spec(const Options& o, const std::optional<IndexMeta>& meta) {
    EmbeddingProviderSpec spec;
    std::string kind = o.provider.empty() ? o.config.get_or("embed.provider", "") : o.provider;
    spec.dim = o.config.get_uint("embed.dim", 256);
    spec.seed = o.config.get_uint("embed.seed", 0);
    if (kind.empty() && meta) {
        std::size_t dim = 0;
        unsigned long long seed = 0;
        if (std::sscanf(meta->provider_id.c_str(), "deterministic:d%zu:s%llu", &dim, &seed) == 2) {
            kind = "deterministic";
            spec.dim = dim;
            spec.seed = seed;
        } else {
            kind = "http";
        }
    }
    if (kind.empty() || kind == "deterministic") {
        spec.kind = ProviderKind::deterministic_test;
    } else if (kind == "http") {
        spec.kind = ProviderKind::http_api;
        spec.endpoint = o.config.get_or("embed.endpoint", "");
        spec.model_name = o.config.get_or("embed.model", spec.model_name);
    } else {
        throw ConfigError("unknown embedding provider: " + kind + " (expected deterministic or http)");
    }
    if (o.dim) spec.dim = *o.dim;
    if (o.seed) spec.seed = *o.seed;
    return spec;
}

Embedder make_embedder(const Options& o, const std::optional<IndexMeta>& meta = std::nullopt) {
    auto provider = make_embedding_provider(provider_spec(o, meta));
    const std::string cache_dir = o.cache.empty() ? o.config.get_or("embed.cache", "") : o.cache;
    std::shared_ptr<EmbeddingCache> cache;
    if (!cache_dir.empty()) cache = std::make_shared<EmbeddingCache>(cache_dir);
    EmbedOptions options;
    options.batch_size = o.config.get_uint("embed.batch_size", options.batch_size);
    options.retries = static_cast<unsigned>(o.config.get_uint("embed.retries", options.retries));
    return Embedder(provider, cache, options, o.config.get_or("embed.query_prefix", ""));
}

LlmSpec llm_spec(const Config& c, const std::string& prefix, const std::string& model_name) {
    LlmSpec spec;
    spec.endpoint = c.get_or(prefix + ".endpoint", c.get_or("llm.endpoint", ""));
    spec.model_name = model_name;
    spec.temperature = c.get_double(prefix + ".temperature", c.get_double("llm.temperature", spec.temperature));
    spec.max_output_tokens = static_cast<unsigned>(c.get_uint("llm.max_tokens", spec.max_output_tokens));
    spec.timeout = std::chrono::milliseconds(c.get_uint("llm.timeout_ms", static_cast<std::uint64_t>(spec.timeout.count())));
    spec.retries = static_cast<unsigned>(c.get_uint("llm.retries", spec.retries));
    spec.backoff_base = std::chrono::milliseconds(c.get_uint("llm.backoff_ms", static_cast<std::uint64_t>(spec.backoff_base.count())));
    spec.backoff_factor = c.get_double("llm.backoff_factor", spec.backoff_factor);
    return spec;
}

std::unique_ptr<ChatModel> load_script_model(const fs::path& file) {
    std::unordered_map<std::string, ScriptedStubModel::Line> script;
    for (const auto& j : read_jsonl(file)) {
        script[j.at("question").get<std::string>()] = {j.at("answer").get<std::string>(), j.value("latency_seconds", 0.0)};
    }
    return std::make_unique<ScriptedStubModel>(std::move(script), "script:" + file.filename().string());
}

/// "echo-stub", "script:<file>" or the name of a model behind the configured endpoint.
std::unique_ptr<ChatModel> make_model(const Options& o, const std::string& name) {
    if (name == "echo-stub") return std::make_unique<EchoStubModel>();
    if (name.starts_with("script:")) return load_script_model(name.substr(7));
    return std::make_unique<HttpChatModel>(llm_spec(o.config, "llm", name));
}

std::vector<std::string> model_names(const Options& o) {
    if (!o.models.empty()) return o.models;
    return {o.config.get_or("llm.model", "echo-stub")};
}

struct JudgeHandle {
    std::unique_ptr<ChatModel> model;
    std::unique_ptr<Judge> judge;
};

JudgeHandle make_judge(const Options& o) {
    JudgeHandle h;
    const std::string kind = o.judge.empty() ? o.config.get_or("judge", "mock") : o.judge;
    if (kind == "mock") {
        h.judge = std::make_unique<MockJudge>(o.config.get_double("judge.threshold", 0.3));
    } else if (kind == "llm") {
        const auto name = o.config.get_or("judge.model", "");
        if (name.empty()) throw ConfigError("the llm judge needs judge.model in the config file");
        h.model = make_model(o, name);
        JudgeTemplates templates;
        templates.version = o.config.get_or("judge.template_version", templates.version);
        h.judge = std::make_unique<LlmJudge>(*h.model, templates);
    } else {
        throw ConfigError("unknown judge: " + kind + " (expected mock or llm)");
    }
    return h;
}

std::string index_dir(const Options& o) {
    const auto dir = o.index.empty() ? o.config.get_or("index", "") : o.index;
    if (dir.empty()) throw ConfigError("--index is required");
    return dir;
}

RetrieveOptions retrieve_options(const Options& o) {
    RetrieveOptions r;
    r.bm25_k = o.bm25_k;
    if (!r.bm25_k && o.config.contains("retrieve.bm25_k")) r.bm25_k = o.config.get_uint("retrieve.bm25_k", 5);
    r.fusion.weight_a = o.config.get_double("retrieve.weight_bm25", r.fusion.weight_a);
    r.fusion.weight_b = o.config.get_double("retrieve.weight_vector", r.fusion.weight_b);
    r.fusion.rrf_c = o.config.get_double("retrieve.rrf_c", r.fusion.rrf_c);
    return r;
}

PromptTemplate prompt_template(const Options& o) {
    PromptTemplate t;
    t.version = o.config.get_or("prompt.version", t.version);
    return t;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_crawl(const Options& o) {
    CrawlLimits limits;
    limits.max_pages = o.max_pages;
    limits.max_concurrent_fetches = o.concurrency;
    limits.per_request_timeout = std::chrono::milliseconds(o.timeout_ms);
    limits.retry_count = o.retries;
    limits.politeness_delay = std::chrono::milliseconds(o.delay_ms);
    CrawlOptions options;
    if (o.fixed_time) options.clock = [t = *o.fixed_time] { return t; };

    std::vector<Document> docs;
    if (is_absolute_http_url(o.sitemap)) {
        HttpFetcher fetcher;
        docs = crawl({{o.sitemap, true}}, fetcher, limits, o.out, options);
    } else {
        // A local sitemap: its page URLs are served from the sitemap's directory by URL path.
        const fs::path file = fs::absolute(o.sitemap);
        const auto seeds = parse_sitemap(read_file_bytes(file));
        if (seeds.empty()) throw CrawlError("sitemap lists no URLs: " + file.string());
        DirectoryFetcher fetcher(file.parent_path());
        docs = crawl(seeds, fetcher, limits, o.out, options);
    }
    std::cout << "crawled " << docs.size() << " documents into " << o.out << "\n";
    return 0;
}

int cmd_chunk(const Options& o) {
    SplitterConfig cfg;
    cfg.strategy = parse_split_strategy(o.strategy.value_or(o.config.get_or("chunk.strategy", "recursive")));
    cfg.max_tokens = o.max_tokens.value_or(o.config.get_uint("chunk.max_tokens", cfg.max_tokens));
    cfg.overlap_tokens = cfg.strategy == SplitStrategy::sentence
                             ? 0
                             : o.overlap.value_or(o.config.get_uint("chunk.overlap", cfg.overlap_tokens));
    cfg.validate();
    auto docs = load_corpus(o.corpus);
    std::sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) { return a.id < b.id; });
    std::vector<Chunk> chunks;
    for (const auto& d : docs) {
        for (auto& c : split_document(d, cfg)) chunks.push_back(std::move(c));
    }
    write_jsonl(o.out, chunks);
    std::cout << "wrote " << chunks.size() << " chunks from " << docs.size() << " documents to " << o.out << "\n";
    return 0;
}

int cmd_embed(const Options& o) {
    const auto chunks = read_jsonl_as<Chunk>(o.chunks);
    if (chunks.empty()) throw EmbedError("no chunks in " + o.chunks);
    const auto embedder = make_embedder(o);
    std::vector<std::string> texts;
    for (const auto& c : chunks) texts.push_back(c.text);
    const auto vectors = embedder.embed(texts);
    VectorTable table{embedder.provider_id(), {}};
    for (std::size_t i = 0; i < chunks.size(); ++i) table.entries.push_back({chunks[i].chunk_id, vectors[i].values});
    write_vector_table(o.vectors, table);
    std::cout << "wrote " << table.entries.size() << " vectors (" << table.provider_id << ") to " << o.vectors << "\n";
    return 0;
}

int cmd_index(const Options& o) {
    auto chunks = read_jsonl_as<Chunk>(o.chunks);
    const auto table = read_vector_table(o.vectors);
    Bm25Params params;
    params.k1 = o.config.get_double("bm25.k1", params.k1);
    params.b = o.config.get_double("bm25.b", params.b);
    const auto loaded = build_index(std::move(chunks), table, params);
    save_index(o.out, loaded);
    std::cout << "indexed " << loaded.meta.chunk_count << " chunks into " << o.out << "\n";
    return 0;
}

struct OpenIndex {
    LoadedIndex loaded;
    Embedder embedder;
};

OpenIndex open_index(const Options& o) {
    auto loaded = load_index(index_dir(o));
    auto embedder = make_embedder(o, loaded.meta);
    check_provider(loaded.meta, embedder);
    return {std::move(loaded), std::move(embedder)};
}

int cmd_query(const Options& o) {
    auto idx = open_index(o);
    const auto result = retrieve(o.query, o.k, idx.loaded.index, idx.embedder, retrieve_options(o));
    if (o.json_output) {
        std::cout << json(result).dump(2) << "\n";
        return 0;
    }
    for (std::size_t i = 0; i < result.fused.size(); ++i) {
        const auto& item = result.fused.items[i];
        std::string preview = result.contexts[i].substr(0, 160);
        std::replace(preview.begin(), preview.end(), '\n', ' ');
        std::printf("%zu\t%.6f\t%s\t%s\n", i + 1, item.score, item.chunk_id.c_str(), preview.c_str());
    }
    return 0;
}

int cmd_ask(const Options& o) {
    auto idx = open_index(o);
    auto model = make_model(o, model_names(o).front());
    AnswerOptions options;
    options.retrieve = retrieve_options(o);
    options.prompt = prompt_template(o);
    const auto record = answer_question(o.query, o.k, idx.loaded.index, idx.embedder, *model, options);
    if (o.json_output) {
        std::cout << json(record).dump(2) << "\n";
    } else {
        std::cout << record.answer << "\n\nsources:";
        for (const auto& id : record.sources()) std::cout << " " << id;
        std::cout << "\n";
    }
    if (record.error) {
        std::cerr << "error: " << *record.error << "\n";
        return 1;
    }
    return 0;
}

int cmd_run(const Options& o) {
    auto idx = open_index(o);
    const auto qs = load_question_set(o.questions);
    auto model = make_model(o, model_names(o).front());
    AnswerOptions options;
    options.retrieve = retrieve_options(o);
    options.prompt = prompt_template(o);
    std::vector<std::string> questions;
    for (const auto& e : qs.entries) questions.push_back(e.question);
    const auto records = answer_all(questions, o.k, idx.loaded.index, idx.embedder, *model, options, o.parallel);
    write_jsonl(o.out, records);
    const auto failed = std::count_if(records.begin(), records.end(), [](const QARecord& r) { return r.error.has_value(); });
    std::cout << "wrote " << records.size() << " records to " << o.out << " (" << failed << " failed)\n";
    return 0;
}

int cmd_eval(const Options& o) {
    const auto records = read_jsonl_as<QARecord>(o.records);
    const auto truth = load_question_set(o.truth);
    const auto embedder = make_embedder(o);
    auto judge = make_judge(o);
    std::vector<json> rows;
    for (const auto& record : records) {
        const auto* entry = truth.find(record.question);
        if (!entry) throw ConfigError("no ground truth for question: " + record.question);
        const EvalCase c{record.question, entry->category, entry->expected_output, record};
        const auto scores = score_case(c, embedder, *judge.judge);
        rows.push_back(json{{"question", record.question},
                            {"category", std::string(to_string(entry->category))},
                            {"k", record.k},
                            {"model", record.model_name},
                            {"scores", scores}});
    }
    write_jsonl(o.out, rows);
    std::cout << "scored " << rows.size() << " records into " << o.out << "\n";
    return 0;
}

int cmd_report(const fs::path& in, const fs::path& out) {
    const auto rows = load_results(in / "results.jsonl");
    json config = json::object();
    if (fs::exists(in / "sweep_config.json")) config = json::parse(read_file_bytes(in / "sweep_config.json"));
    const auto files = emit_report(aggregate_all(rows), out, config);
    std::cout << "wrote " << files.size() << " report files to " << out.string() << "\n";
    return 0;
}

int cmd_sweep(const Options& o) {
    auto idx = open_index(o);
    const auto qs = load_question_set(o.questions);
    std::vector<std::unique_ptr<ChatModel>> models;
    for (const auto& name : model_names(o)) models.push_back(make_model(o, name));
    auto judge = make_judge(o);

    SweepConfig cfg;
    cfg.k_values = parse_k_values(o.k_values);
    const auto r = retrieve_options(o);
    cfg.bm25_pinned_k = r.bm25_k;
    cfg.fusion = r.fusion;
    cfg.prompt = prompt_template(o);
    cfg.max_in_flight = o.parallel;
    cfg.splitter.strategy = parse_split_strategy(o.config.get_or("chunk.strategy", "recursive"));
    cfg.splitter.max_tokens = o.config.get_uint("chunk.max_tokens", cfg.splitter.max_tokens);
    cfg.splitter.overlap_tokens = o.config.get_uint("chunk.overlap", cfg.splitter.overlap_tokens);

    SweepPipeline pipeline{&idx.loaded.index, &idx.embedder, {}, judge.judge.get(), judge.judge->name()};
    for (auto& m : models) pipeline.models.push_back(m.get());

    const fs::path out(o.out);
    fs::create_directories(out);
    write_file_atomic(out / "sweep_config.json", sweep_config_json(cfg, pipeline).dump(2) + "\n");
    const auto outcome = run_sweep(qs, cfg, pipeline, out / "results.jsonl");
    std::cout << "sweep: " << outcome.rows.size() << " rows (" << outcome.resumed << " resumed, " << outcome.invocations
              << " model calls)\n";
    return cmd_report(out, out);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ragmark: build and evaluate retrieval-augmented QA over a crawled website"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config_file, "key = value configuration file")->check(CLI::ExistingFile);

    auto* crawl = app.add_subcommand("crawl", "Fetch the pages listed in a sitemap into a corpus directory");
    crawl->add_option("--sitemap", o.sitemap, "Sitemap URL or local sitemap file")->required();
    crawl->add_option("--out", o.out, "Corpus directory")->required();
    crawl->add_option("--max-pages", o.max_pages, "Maximum pages to store")->check(CLI::PositiveNumber);
    crawl->add_option("--concurrency", o.concurrency, "Concurrent fetches")->check(CLI::PositiveNumber);
    crawl->add_option("--timeout-ms", o.timeout_ms, "Per-request timeout");
    crawl->add_option("--retries", o.retries, "Retries for 5xx, 429 and transport errors");
    crawl->add_option("--delay-ms", o.delay_ms, "Minimum gap between requests to one host");
    crawl->add_option("--fixed-time", o.fixed_time, "Record this epoch time as fetched_at (reproducible manifests)");

    auto* chunk = app.add_subcommand("chunk", "Split a corpus into chunks");
    chunk->add_option("--corpus", o.corpus, "Corpus directory")->required();
    chunk->add_option("--strategy", o.strategy, "recursive or sentence")->check(CLI::IsMember({"recursive", "sentence"}));
    chunk->add_option("--max-tokens", o.max_tokens, "Token limit per chunk")->check(CLI::PositiveNumber);
    chunk->add_option("--overlap", o.overlap, "Overlap tokens (recursive splitter)");
    chunk->add_option("--out", o.out, "Output chunk file (JSON lines)")->required();

    auto add_provider = [&](CLI::App* cmd) {
        cmd->add_option("--provider", o.provider, "Embedding provider: deterministic or http");
        cmd->add_option("--cache", o.cache, "Embedding cache directory");
        cmd->add_option("--dim", o.dim, "Embedding dimension");
        cmd->add_option("--seed", o.seed, "Deterministic provider seed");
    };

    auto* embed = app.add_subcommand("embed", "Embed chunks into a vector file");
    embed->add_option("--chunks", o.chunks, "Chunk file")->required();
    embed->add_option("--out", o.vectors, "Output vector file")->required();
    add_provider(embed);

    auto* index = app.add_subcommand("index", "Build the hybrid index directory");
    index->add_option("--chunks", o.chunks, "Chunk file")->required();
    index->add_option("--vectors", o.vectors, "Vector file")->required();
    index->add_option("--out", o.out, "Index directory")->required();

    auto add_retrieval = [&](CLI::App* cmd) {
        cmd->add_option("--index", o.index, "Index directory");
        cmd->add_option("--bm25-k", o.bm25_k, "Pin the BM25 candidate count")->check(CLI::PositiveNumber);
        add_provider(cmd);
    };

    auto* query = app.add_subcommand("query", "Hybrid retrieval for one query");
    add_retrieval(query);
    query->add_option("--q", o.query, "Query text")->required();
    query->add_option("--k", o.k, "Number of chunks")->check(CLI::PositiveNumber);
    query->add_flag("--json", o.json_output, "Print the full retrieval result as JSON");

    auto* ask = app.add_subcommand("ask", "Answer one question");
    add_retrieval(ask);
    ask->add_option("--q", o.query, "Question")->required();
    ask->add_option("--k", o.k, "Number of chunks")->check(CLI::PositiveNumber);
    ask->add_option("--model", o.models, "echo-stub, script:<file> or a model name at llm.endpoint");
    ask->add_flag("--json", o.json_output, "Print the QA record as JSON");

    auto* run = app.add_subcommand("run", "Answer a question file into QA records");
    add_retrieval(run);
    run->add_option("--questions", o.questions, "Question file (JSON lines)")->required();
    run->add_option("--k", o.k, "Number of chunks")->check(CLI::PositiveNumber);
    run->add_option("--model", o.models, "Model selector");
    run->add_option("--parallel", o.parallel, "Concurrent model calls")->check(CLI::PositiveNumber);
    run->add_option("--out", o.out, "Output records file (JSON lines)")->required();

    auto* eval = app.add_subcommand("eval", "Score QA records against ground truth");
    eval->add_option("--records", o.records, "QA records file")->required();
    eval->add_option("--truth", o.truth, "Truth file: question, category, expected_output")->required();
    eval->add_option("--judge", o.judge, "mock or llm");
    eval->add_option("--out", o.out, "Output scores file (JSON lines)")->required();
    add_provider(eval);

    auto* sweep = app.add_subcommand("sweep", "Top-k sweep with scoring and report");
    add_retrieval(sweep);
    sweep->add_option("--questions", o.questions, "Truth file")->required();
    sweep->add_option("--k", o.k_values, "k values: 1..10 or 1,3,5");
    sweep->add_option("--model", o.models, "Model selector (repeatable)");
    sweep->add_option("--judge", o.judge, "mock or llm");
    sweep->add_option("--parallel", o.parallel, "Concurrent (question, k) pairs")->check(CLI::PositiveNumber);
    sweep->add_option("--out", o.out, "Output directory")->required();

    auto* report = app.add_subcommand("report", "Aggregate sweep results into report files");
    report->add_option("--in", o.in, "Sweep directory holding results.jsonl")->required();
    report->add_option("--out", o.out, "Report directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (!o.config_file.empty()) o.config = Config::load(o.config_file);
        if (*crawl) return cmd_crawl(o);
        if (*chunk) return cmd_chunk(o);
        if (*embed) return cmd_embed(o);
        if (*index) return cmd_index(o);
        if (*query) return cmd_query(o);
        if (*ask) return cmd_ask(o);
        if (*run) return cmd_run(o);
        if (*eval) return cmd_eval(o);
        if (*sweep) return cmd_sweep(o);
        if (*report) return cmd_report(o.in, o.out);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
