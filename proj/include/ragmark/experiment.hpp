#pragma once

// Top-k sweeps over category-tagged question sets, per-category aggregation and
// report emission (metric tables, top-k curves, latency histogram, run summary).

#include "ragmark/error.hpp"
#include "ragmark/evaluate.hpp"
#include "ragmark/generate.hpp"
#include "ragmark/retrieve.hpp"
#include "ragmark/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace ragmark {

inline constexpr std::string_view kRagmarkVersion = "0.1.0";

struct TruthEntry {
    std::string question;
    QuestionCategory category = QuestionCategory::factual_dense;
    std::string expected_output;
};

struct QuestionSet {
    std::string name;
    std::vector<TruthEntry> entries;

    void validate() const {
        if (entries.empty()) throw ConfigError("question set '" + name + "' is empty");
        std::set<std::string> seen;
        for (const auto& e : entries) {
            if (trim(e.question).empty()) throw ConfigError("question set '" + name + "' has an empty question");
            if (!seen.insert(e.question).second) throw ConfigError("duplicate question: " + e.question);
        }
    }

    const TruthEntry* find(const std::string& question) const {
        for (const auto& e : entries) {
            if (e.question == question) return &e;
        }
        return nullptr;
    }
};

/// JSON-lines with question, category and expected_output (expected_output may be empty).
inline QuestionSet load_question_set(const std::filesystem::path& file) {
    QuestionSet qs;
    qs.name = file.stem().string();
    for (const auto& j : read_jsonl(file)) {
        try {
            TruthEntry e;
            e.question = j.at("question").get<std::string>();
            e.category = parse_category(j.at("category").get<std::string>());
            e.expected_output = j.value("expected_output", "");
            qs.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw ConfigError(file.string() + ": " + ex.what());
        }
    }
    qs.validate();
    return qs;
}

/// "1..10", "1,3,5" or "5". Result is strictly increasing and positive.
inline std::vector<std::size_t> parse_k_values(std::string_view spec) {
    auto number = [&](std::string_view s) -> std::size_t {
        const auto t = trim(s);
        std::size_t v = 0;
        if (t.empty()) throw ConfigError("bad k list: " + std::string(spec));
        for (char c : t) {
            if (c < '0' || c > '9') throw ConfigError("bad k list: " + std::string(spec));
            v = v * 10 + static_cast<std::size_t>(c - '0');
        }
        if (v == 0) throw ConfigError("k values must be positive");
        return v;
    };
    std::vector<std::size_t> ks;
    if (const auto dots = spec.find(".."); dots != std::string_view::npos) {
        const auto lo = number(spec.substr(0, dots));
        const auto hi = number(spec.substr(dots + 2));
        if (hi < lo) throw ConfigError("empty k range: " + std::string(spec));
        for (auto k = lo; k <= hi; ++k) ks.push_back(k);
        return ks;
    }
    std::size_t start = 0;
    for (;;) {
        const auto comma = spec.find(',', start);
        ks.push_back(number(spec.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    for (std::size_t i = 1; i < ks.size(); ++i) {
        if (ks[i] <= ks[i - 1]) throw ConfigError("k values must be strictly increasing");
    }
    return ks;
}

struct SweepConfig {
    std::vector<std::size_t> k_values{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    /// Splitter the index was built with; recorded in the summary.
    SplitterConfig splitter;
    std::optional<std::size_t> bm25_pinned_k;
    FusionParams fusion;
    PromptTemplate prompt;
    /// Concurrent (question, k) pairs.
    std::size_t max_in_flight = 1;

    void validate() const {
        if (k_values.empty()) throw ConfigError("sweep needs at least one k value");
        for (std::size_t i = 0; i < k_values.size(); ++i) {
            if (k_values[i] == 0) throw ConfigError("k values must be positive");
            if (i > 0 && k_values[i] <= k_values[i - 1]) throw ConfigError("k values must be strictly increasing");
        }
        if (bm25_pinned_k && *bm25_pinned_k == 0) throw ConfigError("bm25 pinned k must be positive");
        if (max_in_flight == 0) throw ConfigError("max_in_flight must be positive");
    }
};

/// Everything a sweep needs at run time. Models are answered over one shared retrieval per
/// (question, k).
struct SweepPipeline {
    const HybridIndex* index = nullptr;
    const Embedder* embedder = nullptr;
    std::vector<ChatModel*> models;
    Judge* judge = nullptr;
    std::string judge_name;
};

struct ResultRow {
    std::string question;
    QuestionCategory category = QuestionCategory::factual_dense;
    std::size_t k = 0;
    std::string model;
    QARecord record;
    MetricScores scores;
};

using RowKey = std::tuple<std::string, std::size_t, std::string>;

inline RowKey key_of(const ResultRow& r) { return {r.question, r.k, r.model}; }

inline void to_json(json& j, const ResultRow& r) {
    j = json{{"question", r.question}, {"category", std::string(to_string(r.category))},
             {"k", r.k},               {"model", r.model},
             {"record", r.record},     {"scores", r.scores}};
}

inline void from_json(const json& j, ResultRow& r) {
    j.at("question").get_to(r.question);
    r.category = parse_category(j.at("category").get<std::string>());
    j.at("k").get_to(r.k);
    j.at("model").get_to(r.model);
    j.at("record").get_to(r.record);
    j.at("scores").get_to(r.scores);
}

inline json sweep_config_json(const SweepConfig& cfg, const SweepPipeline& pipeline) {
    std::vector<std::string> models;
    for (auto* m : pipeline.models) models.push_back(m->name());
    return json{{"k_values", cfg.k_values},
                {"splitter",
                 {{"strategy", std::string(to_string(cfg.splitter.strategy))},
                  {"max_tokens", cfg.splitter.max_tokens},
                  {"overlap_tokens", cfg.splitter.overlap_tokens}}},
                {"bm25_pinned_k", cfg.bm25_pinned_k ? json(*cfg.bm25_pinned_k) : json(nullptr)},
                {"fusion", {{"weight_bm25", cfg.fusion.weight_a}, {"weight_vector", cfg.fusion.weight_b}, {"rrf_c", cfg.fusion.rrf_c}}},
                {"prompt_version", cfg.prompt.version},
                {"models", models},
                {"judge", pipeline.judge_name},
                {"embedding_provider", pipeline.embedder ? pipeline.embedder->provider_id() : std::string()},
                {"max_in_flight", cfg.max_in_flight}};
}

struct SweepOutcome {
    /// All rows of the sweep in canonical order (question, k, model), resumed ones included.
    std::vector<ResultRow> rows;
    /// Model calls made by this invocation.
    std::size_t invocations = 0;
    std::size_t resumed = 0;
};

namespace detail {

/// Reads completed rows; an unterminated or unparsable final line (an interrupted write) is
/// dropped and the file truncated to the last complete row.
inline std::vector<ResultRow> read_completed_rows(const std::filesystem::path& file) {
    std::vector<ResultRow> rows;
    if (!std::filesystem::exists(file)) return rows;
    const auto bytes = read_file_bytes(file);
    std::size_t pos = 0;
    std::size_t good_end = 0;
    while (pos < bytes.size()) {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) break;
        const auto line = std::string_view(bytes).substr(pos, nl - pos);
        if (!trim(line).empty()) {
            try {
                rows.push_back(json::parse(line).get<ResultRow>());
            } catch (const std::exception&) {
                break;
            }
        }
        pos = nl + 1;
        good_end = pos;
    }
    if (good_end != bytes.size()) std::filesystem::resize_file(file, good_end);
    return rows;
}

} // namespace detail

/// Runs every (question, k) pair: one retrieval, then each model's answer and all metrics.
/// Rows are appended to `results_file` as they complete (in canonical order within each batch);
/// rows already present are skipped. On completion the file is rewritten in canonical order.
inline SweepOutcome run_sweep(const QuestionSet& qs, const SweepConfig& cfg, const SweepPipeline& pipeline,
                              const std::filesystem::path& results_file) {
    qs.validate();
    cfg.validate();
    if (!pipeline.index || !pipeline.embedder || !pipeline.judge || pipeline.models.empty()) {
        throw ConfigError("sweep pipeline is incomplete");
    }
    if (results_file.has_parent_path()) std::filesystem::create_directories(results_file.parent_path());

    std::map<RowKey, ResultRow> done;
    for (auto& row : detail::read_completed_rows(results_file)) {
        auto key = key_of(row);
        done.emplace(std::move(key), std::move(row));
    }

    struct Pair {
        const TruthEntry* entry;
        std::size_t k;
    };
    std::vector<Pair> pending;
    std::size_t resumed = 0;
    for (const auto& e : qs.entries) {
        for (auto k : cfg.k_values) {
            bool missing = false;
            for (auto* m : pipeline.models) {
                if (done.contains({e.question, k, m->name()})) {
                    ++resumed;
                } else {
                    missing = true;
                }
            }
            if (missing) pending.push_back({&e, k});
        }
    }

    AnswerOptions answer_options;
    answer_options.retrieve.fusion = cfg.fusion;
    answer_options.retrieve.bm25_k = cfg.bm25_pinned_k;
    answer_options.prompt = cfg.prompt;
    answer_options.clock = {};

    std::atomic<std::size_t> invocations{0};
    auto run_pair = [&](const Pair& pair) {
        std::vector<ResultRow> rows;
        std::optional<RetrievalResult> retrieval;
        std::string retrieval_error;
        try {
            retrieval = retrieve(pair.entry->question, pair.k, *pipeline.index, *pipeline.embedder, answer_options.retrieve);
        } catch (const std::exception& e) {
            retrieval_error = std::string("retrieval failed: ") + e.what();
        }
        for (auto* model : pipeline.models) {
            if (done.contains({pair.entry->question, pair.k, model->name()})) continue;
            ResultRow row{pair.entry->question, pair.entry->category, pair.k, model->name(), {}, {}};
            if (retrieval) {
                ++invocations;
                row.record = answer_with_retrieval(*retrieval, *model, answer_options);
            } else {
                row.record.question = row.question;
                row.record.k = row.k;
                row.record.model_name = row.model;
                row.record.retrieval.query = row.question;
                row.record.retrieval.k = row.k;
                row.record.error = retrieval_error;
            }
            const EvalCase c{row.question, row.category, pair.entry->expected_output, row.record};
            try {
                row.scores = score_case(c, *pipeline.embedder, *pipeline.judge);
            } catch (const std::exception& e) {
                row.scores.errors.push_back(std::string("scoring failed: ") + e.what());
            }
            rows.push_back(std::move(row));
        }
        return rows;
    };

    {
        std::ofstream out(results_file, std::ios::binary | std::ios::app);
        if (!out) throw Error("cannot append to " + results_file.string());
        for (std::size_t begin = 0; begin < pending.size(); begin += cfg.max_in_flight) {
            const auto end = std::min(pending.size(), begin + cfg.max_in_flight);
            std::vector<std::vector<ResultRow>> batch(end - begin);
            parallel_for(batch.size(), cfg.max_in_flight, [&](std::size_t i) { batch[i] = run_pair(pending[begin + i]); });
            for (auto& rows : batch) {
                for (auto& row : rows) {
                    out << json(row).dump() << '\n';
                    out.flush();
                    if (!out) throw Error("write failed: " + results_file.string());
                    auto key = key_of(row);
                    done.emplace(std::move(key), std::move(row));
                }
            }
        }
    }

    SweepOutcome outcome;
    outcome.invocations = invocations.load();
    outcome.resumed = resumed;
    for (const auto& e : qs.entries) {
        for (auto k : cfg.k_values) {
            for (auto* m : pipeline.models) outcome.rows.push_back(done.at({e.question, k, m->name()}));
        }
    }
    std::string canonical;
    for (const auto& row : outcome.rows) canonical += json(row).dump() + '\n';
    write_file_atomic(results_file, canonical);
    return outcome;
}

inline std::vector<ResultRow> load_results(const std::filesystem::path& file) { return read_jsonl_as<ResultRow>(file); }

// ---------------------------------------------------------------------------
// Aggregation

struct Statistic {
    std::optional<double> average;
    /// Lower-middle element for even counts, so always an observed value.
    std::optional<double> median;
    std::optional<double> min;
    std::optional<double> max;
    std::size_t count = 0;
    std::size_t excluded = 0;
};

inline Statistic summarize(const std::vector<std::optional<double>>& values) {
    Statistic s;
    std::vector<double> present;
    for (const auto& v : values) {
        if (v) {
            present.push_back(*v);
        } else {
            ++s.excluded;
        }
    }
    s.count = present.size();
    if (present.empty()) return s;
    double sum = 0.0;
    for (double v : present) sum += v;
    s.average = sum / static_cast<double>(present.size());
    std::sort(present.begin(), present.end());
    s.median = present[(present.size() - 1) / 2];
    s.min = present.front();
    s.max = present.back();
    return s;
}

struct CategoryReport {
    QuestionCategory category = QuestionCategory::factual_dense;
    std::string model;
    /// Keyed by metric name; headline and secondary metrics.
    std::map<std::string, Statistic> metrics;
    Statistic latency;
    std::optional<std::pair<double, double>> csga_range;
    /// Raw (question, k) matrix the statistics were computed from.
    std::vector<ResultRow> rows;
};

/// Statistics over the rows of one category (and one model). Latency skips errored records.
inline CategoryReport aggregate(const std::vector<ResultRow>& rows, QuestionCategory category, const std::string& model) {
    CategoryReport report;
    report.category = category;
    report.model = model;
    for (const auto& r : rows) {
        if (r.category == category && r.model == model) report.rows.push_back(r);
    }
    if (report.rows.empty()) {
        throw Error("no rows for category " + std::string(to_string(category)) + " and model " + model);
    }
    auto collect = [&](std::optional<double> MetricScores::*member) {
        std::vector<std::optional<double>> values;
        for (const auto& r : report.rows) values.push_back(r.scores.*member);
        return summarize(values);
    };
    for (const auto& f : kHeadlineMetrics) report.metrics[std::string(f.name)] = collect(f.member);
    for (const auto& f : kSecondaryMetrics) report.metrics[std::string(f.name)] = collect(f.member);
    std::vector<std::optional<double>> latencies;
    for (const auto& r : report.rows) {
        latencies.push_back(r.record.error ? std::nullopt : std::optional<double>(r.record.latency_seconds));
    }
    report.latency = summarize(latencies);
    const auto& csga_stat = report.metrics.at("csga");
    if (csga_stat.min) report.csga_range = std::pair{*csga_stat.min, *csga_stat.max};
    return report;
}

/// One report per (model, category) present in `rows`, models in first-seen order.
inline std::vector<CategoryReport> aggregate_all(const std::vector<ResultRow>& rows) {
    std::vector<std::string> models;
    for (const auto& r : rows) {
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    }
    std::vector<CategoryReport> reports;
    for (const auto& m : models) {
        for (auto c : kAllCategories) {
            const bool any = std::any_of(rows.begin(), rows.end(), [&](const ResultRow& r) { return r.model == m && r.category == c; });
            if (any) reports.push_back(aggregate(rows, c, m));
        }
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Report emission

inline constexpr double kLatencyBinWidth = 0.5;

struct HistogramBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
};

/// Bins [i*w, (i+1)*w) from the lowest to the highest occupied bin, empty bins included.
inline std::vector<HistogramBin> latency_histogram(const std::vector<double>& values, double width = kLatencyBinWidth) {
    if (!(width > 0.0)) throw ConfigError("histogram bin width must be positive");
    std::vector<HistogramBin> bins;
    if (values.empty()) return bins;
    std::map<long long, std::size_t> counts;
    for (double v : values) ++counts[static_cast<long long>(std::floor(v / width))];
    for (long long i = counts.begin()->first; i <= counts.rbegin()->first; ++i) {
        auto it = counts.find(i);
        bins.push_back({static_cast<double>(i) * width, static_cast<double>(i + 1) * width, it == counts.end() ? 0 : it->second});
    }
    return bins;
}

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

inline std::string format_range(const std::pair<double, double>& r) {
    return "[" + format_number(r.first) + "," + format_number(r.second) + "]";
}

inline std::string sanitize_file_part(std::string_view name) {
    std::string out;
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
        out.push_back(ok ? c : '_');
    }
    return out.empty() ? "model" : out;
}

inline constexpr std::string_view kTableHeader = "metric,statistic,reason_dense,reason_sparse,factual_dense,factual_sparse";

/// Metrics x {average, median} by category, then latency and the CSGA range row.
inline std::string render_table(const std::vector<const CategoryReport*>& by_model,
                                const std::vector<MetricField>& metrics, bool include_latency_and_range) {
    auto report_for = [&](QuestionCategory c) -> const CategoryReport* {
        for (auto* r : by_model) {
            if (r->category == c) return r;
        }
        return nullptr;
    };
    std::string out(kTableHeader);
    out += '\n';
    auto row = [&](std::string_view metric, std::string_view statistic, auto&& cell) {
        out += std::string(metric) + "," + std::string(statistic);
        for (auto c : kAllCategories) {
            out += ',';
            if (auto* r = report_for(c)) out += cell(*r);
        }
        out += '\n';
    };
    for (const auto& f : metrics) {
        const std::string name(f.name);
        row(name, "average", [&](const CategoryReport& r) { return format_optional(r.metrics.at(name).average); });
        row(name, "median", [&](const CategoryReport& r) { return format_optional(r.metrics.at(name).median); });
    }
    if (include_latency_and_range) {
        row("latency_seconds", "average", [](const CategoryReport& r) { return format_optional(r.latency.average); });
        row("latency_seconds", "median", [](const CategoryReport& r) { return format_optional(r.latency.median); });
        row("csga", "range", [](const CategoryReport& r) {
            return r.csga_range ? "\"" + format_range(*r.csga_range) + "\"" : std::string();
        });
    }
    return out;
}

inline std::string render_curves(const std::vector<const CategoryReport*>& by_model) {
    std::string out =
        "question,category,k,cosine_with_context,chunk_mean_cosine,unigram_precision,unigram_recall,csga,"
        "unigram_precision_context,unigram_recall_context\n";
    std::vector<const ResultRow*> rows;
    for (auto* r : by_model) {
        for (const auto& row : r->rows) rows.push_back(&row);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const ResultRow* a, const ResultRow* b) {
        return std::tie(a->question, a->k) < std::tie(b->question, b->k);
    });
    for (const auto* row : rows) {
        std::string q = row->question;
        std::string escaped = "\"";
        for (char c : q) {
            if (c == '"') escaped += '"';
            escaped += (c == '\n' || c == '\r') ? ' ' : c;
        }
        escaped += '"';
        const auto& s = row->scores;
        out += escaped + "," + std::string(to_string(row->category)) + "," + std::to_string(row->k) + "," +
               format_optional(s.query_context_cosine) + "," + format_optional(s.query_context_chunk_mean) + "," +
               format_optional(s.unigram_precision) + "," + format_optional(s.unigram_recall) + "," +
               format_optional(s.csga) + "," + format_optional(s.unigram_precision_context) + "," +
               format_optional(s.unigram_recall_context) + "\n";
    }
    return out;
}

inline std::string render_histogram(const std::vector<const CategoryReport*>& by_model) {
    std::vector<double> latencies;
    for (auto* r : by_model) {
        for (const auto& row : r->rows) {
            if (!row.record.error) latencies.push_back(row.record.latency_seconds);
        }
    }
    std::string out = "bin_start,bin_end,count\n";
    for (const auto& b : latency_histogram(latencies)) {
        out += format_number(b.lower) + "," + format_number(b.upper) + "," + std::to_string(b.count) + "\n";
    }
    return out;
}

inline json statistic_json(const Statistic& s) {
    return json{{"average", optional_json(s.average)}, {"median", optional_json(s.median)},
                {"min", optional_json(s.min)},         {"max", optional_json(s.max)},
                {"count", s.count},                    {"excluded", s.excluded}};
}

inline json render_summary(const std::vector<CategoryReport>& reports, const json& config) {
    json models = json::object();
    std::size_t total_rows = 0;
    std::size_t errored = 0;
    double latency_total = 0.0;
    for (const auto& r : reports) {
        json metrics = json::object();
        for (const auto& [name, stat] : r.metrics) metrics[name] = statistic_json(stat);
        json category{{"rows", r.rows.size()},
                      {"metrics", metrics},
                      {"latency_seconds", statistic_json(r.latency)},
                      {"csga_range", r.csga_range ? json::array({r.csga_range->first, r.csga_range->second}) : json(nullptr)}};
        models[r.model][std::string(to_string(r.category))] = category;
        total_rows += r.rows.size();
        for (const auto& row : r.rows) {
            if (row.record.error) {
                ++errored;
            } else {
                latency_total += row.record.latency_seconds;
            }
        }
    }
    return json{{"version", std::string(kRagmarkVersion)},
                {"config", config},
                {"rows", total_rows},
                {"errored_rows", errored},
                {"latency_total_seconds", latency_total},
                {"models", models}};
}

/// Writes, per model: table_<m>.csv, table_<m>_secondary.csv, curves_<m>.csv and
/// latency_histogram_<m>.csv; plus summary.json. Output depends only on the inputs.
inline std::vector<std::filesystem::path> emit_report(const std::vector<CategoryReport>& reports,
                                                      const std::filesystem::path& out_dir, const json& config = json::object()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error("cannot create report directory " + out_dir.string());
    std::vector<std::string> models;
    for (const auto& r : reports) {
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    }
    const std::vector<MetricField> headline(kHeadlineMetrics.begin(), kHeadlineMetrics.end());
    const std::vector<MetricField> secondary(kSecondaryMetrics.begin(), kSecondaryMetrics.end());
    std::vector<std::filesystem::path> written;
    auto write = [&](const std::filesystem::path& file, const std::string& bytes) {
        write_file_atomic(file, bytes);
        written.push_back(file);
    };
    for (const auto& m : models) {
        std::vector<const CategoryReport*> by_model;
        for (const auto& r : reports) {
            if (r.model == m) by_model.push_back(&r);
        }
        const auto stem = sanitize_file_part(m);
        write(out_dir / ("table_" + stem + ".csv"), render_table(by_model, headline, true));
        write(out_dir / ("table_" + stem + "_secondary.csv"), render_table(by_model, secondary, false));
        write(out_dir / ("curves_" + stem + ".csv"), render_curves(by_model));
        write(out_dir / ("latency_histogram_" + stem + ".csv"), render_histogram(by_model));
    }
    write(out_dir / "summary.json", render_summary(reports, config).dump(2) + "\n");
    return written;
}

} // namespace ragmark
