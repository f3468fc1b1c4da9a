#pragma once

// Answer-quality metrics: clipped unigram overlap (ROUGE-1), embedding cosines
// against the query and the ground truth, and judge-labelled contextual metrics.
// Every metric yields a value in [0,1] or std::nullopt ("absent"); never a
// silent default.

#include "ragmark/embed.hpp"
#include "ragmark/error.hpp"
#include "ragmark/generate.hpp"
#include "ragmark/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ragmark {

enum class QuestionCategory { reason_dense, reason_sparse, factual_dense, factual_sparse };

inline constexpr std::array<QuestionCategory, 4> kAllCategories = {
    QuestionCategory::reason_dense, QuestionCategory::reason_sparse, QuestionCategory::factual_dense,
    QuestionCategory::factual_sparse};

inline std::string_view to_string(QuestionCategory c) {
    switch (c) {
    case QuestionCategory::reason_dense: return "reason_dense";
    case QuestionCategory::reason_sparse: return "reason_sparse";
    case QuestionCategory::factual_dense: return "factual_dense";
    case QuestionCategory::factual_sparse: return "factual_sparse";
    }
    return "?";
}

inline QuestionCategory parse_category(std::string_view name) {
    for (auto c : kAllCategories) {
        if (to_string(c) == name) return c;
    }
    throw ConfigError("unknown question category: " + std::string(name));
}

struct EvalCase {
    std::string question;
    QuestionCategory category = QuestionCategory::factual_dense;
    std::string expected_output;
    QARecord record;
};

// ---------------------------------------------------------------------------
// Lexical overlap

using TermCounts = std::unordered_map<std::string, std::size_t>;

inline TermCounts term_counts(std::string_view text) {
    TermCounts counts;
    for (auto& t : terms(text)) ++counts[std::move(t)];
    return counts;
}

inline std::size_t total(const TermCounts& counts) {
    std::size_t n = 0;
    for (const auto& [_, c] : counts) n += c;
    return n;
}

/// Sum over terms of min(count_a, count_b).
inline std::size_t clipped_overlap(const TermCounts& a, const TermCounts& b) {
    const auto& small = a.size() <= b.size() ? a : b;
    const auto& large = a.size() <= b.size() ? b : a;
    std::size_t n = 0;
    for (const auto& [term, count] : small) {
        if (auto it = large.find(term); it != large.end()) n += std::min(count, it->second);
    }
    return n;
}

/// Clipped overlap / candidate term count. Absent when the candidate has no terms.
inline std::optional<double> unigram_precision(std::string_view candidate, std::string_view reference) {
    const auto cand = term_counts(candidate);
    const auto n = total(cand);
    if (n == 0) return std::nullopt;
    return static_cast<double>(clipped_overlap(cand, term_counts(reference))) / static_cast<double>(n);
}

/// Clipped overlap / reference term count. Absent when the reference has no terms.
inline std::optional<double> unigram_recall(std::string_view candidate, std::string_view reference) {
    const auto ref = term_counts(reference);
    const auto n = total(ref);
    if (n == 0) return std::nullopt;
    return static_cast<double>(clipped_overlap(term_counts(candidate), ref)) / static_cast<double>(n);
}

struct Rouge1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline std::optional<Rouge1> rouge1(std::string_view candidate, std::string_view reference) {
    const auto cand = term_counts(candidate);
    const auto ref = term_counts(reference);
    const auto nc = total(cand);
    const auto nr = total(ref);
    if (nc == 0 || nr == 0) return std::nullopt;
    const auto overlap = static_cast<double>(clipped_overlap(cand, ref));
    Rouge1 r{overlap / static_cast<double>(nc), overlap / static_cast<double>(nr), 0.0};
    if (r.precision + r.recall > 0.0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

// ---------------------------------------------------------------------------
// Embedding metrics

struct ContextSimilarity {
    /// cosine(embed(question), embed(context_text)).
    double whole = 0.0;
    /// Mean of cosine(embed(question), embed(chunk)) over retrieved chunks.
    double chunk_mean = 0.0;
};

inline std::optional<ContextSimilarity> query_context_similarity(const std::string& question,
                                                                 const RetrievalResult& retrieval,
                                                                 const Embedder& embedder) {
    if (trim(retrieval.context_text).empty() || retrieval.contexts.empty()) return std::nullopt;
    std::vector<std::string> texts{question, retrieval.context_text};
    texts.insert(texts.end(), retrieval.contexts.begin(), retrieval.contexts.end());
    const auto vectors = embedder.embed(texts);
    ContextSimilarity out;
    out.whole = cosine(vectors[0], vectors[1]);
    double sum = 0.0;
    for (std::size_t i = 2; i < vectors.size(); ++i) sum += cosine(vectors[0], vectors[i]);
    out.chunk_mean = sum / static_cast<double>(vectors.size() - 2);
    return out;
}

/// Cosine similarity of the generated answer with the ground-truth answer (raw, in [-1,1]).
inline std::optional<double> csga(const std::string& answer, const std::string& expected_output, const Embedder& embedder) {
    if (trim(answer).empty() || trim(expected_output).empty()) return std::nullopt;
    const auto vectors = embedder.embed({answer, expected_output});
    return cosine(vectors[0], vectors[1]);
}

// ---------------------------------------------------------------------------
// Judges

class Judge {
public:
    virtual ~Judge() = default;
    virtual std::string name() const = 0;
    /// Is `text` relevant to `reference` (a question or an expected answer)?
    virtual bool relevant(const std::string& text, const std::string& reference) = 0;
    /// Atomic statements of `text`.
    virtual std::vector<std::string> statements(const std::string& text) = 0;
    /// Can `statement` be attributed to the retrieved contexts?
    virtual bool attributable(const std::string& statement, const std::vector<std::string>& contexts) = 0;
};

/// Absorbs rounding so that identical texts are relevant at threshold 1.
inline constexpr double kMockJudgeTolerance = 1e-9;

/// relevant iff the hashed bag-of-words cosine reaches `threshold`.
inline bool mock_judge(std::string_view text_a, std::string_view text_b, double threshold = 0.3, std::size_t dim = 256,
                       std::uint64_t seed = 0) {
    return cosine(deterministic_embed(text_a, dim, seed), deterministic_embed(text_b, dim, seed)) >=
           threshold - kMockJudgeTolerance;
}

/// Offline judge built on mock_judge. Statements are sentences; a statement is attributable when
/// it is relevant to some sentence of some retrieved context.
class MockJudge : public Judge {
public:
    explicit MockJudge(double threshold = 0.3, std::size_t dim = 256, std::uint64_t seed = 0)
        : threshold_(threshold), dim_(dim), seed_(seed) {}

    std::string name() const override { return "mock"; }

    bool relevant(const std::string& text, const std::string& reference) override {
        return mock_judge(text, reference, threshold_, dim_, seed_);
    }

    /// Sentences that carry at least one term.
    std::vector<std::string> statements(const std::string& text) override {
        auto sentences = split_sentences(text);
        std::erase_if(sentences, [](const std::string& s) { return terms(s).empty(); });
        return sentences;
    }

    bool attributable(const std::string& statement, const std::vector<std::string>& contexts) override {
        for (const auto& context : contexts) {
            for (const auto& sentence : split_sentences(context)) {
                if (mock_judge(statement, sentence, threshold_, dim_, seed_)) return true;
            }
        }
        return false;
    }

private:
    double threshold_;
    std::size_t dim_;
    std::uint64_t seed_;
};

struct JudgeTemplates {
    std::string version = "judge-v1";
    std::string system = "You are a strict evaluator of retrieval-augmented question answering. Follow the output format exactly.";
    std::string relevance =
        "Reference:\n{reference}\n\nText:\n{text}\n\nDoes the text contain information relevant to the reference? "
        "Reply with exactly one word: yes or no.";
    std::string statements =
        "Break the following text into short, self-contained factual statements. Reply with a JSON array of "
        "strings and nothing else.\n\nText:\n{text}";
    std::string attribution =
        "Context:\n{context}\n\nStatement:\n{text}\n\nCan the statement be attributed to the context? Reply with "
        "exactly one word: yes or no.";
};

/// Judge backed by a chat model; prompts are versioned in JudgeTemplates.
class LlmJudge : public Judge {
public:
    LlmJudge(ChatModel& model, JudgeTemplates templates = {}) : model_(model), templates_(std::move(templates)) {}

    std::string name() const override { return "llm:" + model_.name(); }

    bool relevant(const std::string& text, const std::string& reference) override {
        return yes(ask(fill(templates_.relevance, {{"{reference}", reference}, {"{text}", text}})));
    }

    std::vector<std::string> statements(const std::string& text) override {
        const auto reply = ask(fill(templates_.statements, {{"{text}", text}}));
        const auto open = reply.find('[');
        const auto close = reply.rfind(']');
        if (open != std::string::npos && close != std::string::npos && close > open) {
            try {
                return nlohmann::json::parse(reply.substr(open, close - open + 1)).get<std::vector<std::string>>();
            } catch (const nlohmann::json::exception&) {
            }
        }
        throw LlmError(LlmError::Kind::bad_response, "judge did not return a JSON array of statements");
    }

    bool attributable(const std::string& statement, const std::vector<std::string>& contexts) override {
        std::string joined;
        for (const auto& c : contexts) {
            if (!joined.empty()) joined += "\n\n";
            joined += c;
        }
        return yes(ask(fill(templates_.attribution, {{"{context}", joined}, {"{text}", statement}})));
    }

private:
    static std::string fill(std::string pattern, std::initializer_list<std::pair<std::string_view, std::string_view>> vars) {
        std::string out;
        std::size_t i = 0;
        while (i < pattern.size()) {
            bool replaced = false;
            for (const auto& [key, value] : vars) {
                if (std::string_view(pattern).substr(i).starts_with(key)) {
                    out += value;
                    i += key.size();
                    replaced = true;
                    break;
                }
            }
            if (!replaced) out.push_back(pattern[i++]);
        }
        return out;
    }

    std::string ask(const std::string& user) {
        ChatPrompt prompt{templates_.system, user, user, {}};
        return model_.complete(prompt, {}).text;
    }

    static bool yes(std::string_view reply) {
        const auto word = to_lower(trim(reply));
        return word.starts_with("yes");
    }

    ChatModel& model_;
    JudgeTemplates templates_;
};

// ---------------------------------------------------------------------------
// Judge-based metrics

struct ContextualPrecision {
    /// Relevant chunks / retrieved chunks.
    double plain = 0.0;
    /// Mean over relevant positions i of (relevant in 1..i) / i; 0 when nothing is relevant.
    double rank_weighted = 0.0;
};

inline ContextualPrecision precision_from_labels(const std::vector<bool>& relevant) {
    ContextualPrecision out;
    if (relevant.empty()) return out;
    std::size_t hits = 0;
    double weighted = 0.0;
    for (std::size_t i = 0; i < relevant.size(); ++i) {
        if (!relevant[i]) continue;
        ++hits;
        weighted += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    out.plain = static_cast<double>(hits) / static_cast<double>(relevant.size());
    out.rank_weighted = hits ? weighted / static_cast<double>(hits) : 0.0;
    return out;
}

inline std::optional<ContextualPrecision> contextual_precision(const EvalCase& c, Judge& judge) {
    const auto& contexts = c.record.retrieval.contexts;
    if (contexts.empty() || trim(c.expected_output).empty()) return std::nullopt;
    std::vector<bool> labels;
    for (const auto& chunk : contexts) labels.push_back(judge.relevant(chunk, c.expected_output));
    return precision_from_labels(labels);
}

inline std::optional<double> contextual_recall(const EvalCase& c, Judge& judge) {
    const auto& contexts = c.record.retrieval.contexts;
    if (contexts.empty() || trim(c.expected_output).empty()) return std::nullopt;
    const auto statements = judge.statements(c.expected_output);
    if (statements.empty()) return std::nullopt;
    std::size_t attributable = 0;
    for (const auto& s : statements) {
        if (judge.attributable(s, contexts)) ++attributable;
    }
    return static_cast<double>(attributable) / static_cast<double>(statements.size());
}

namespace detail {

inline std::optional<double> relevant_sentence_fraction(const std::vector<std::string>& sentences,
                                                        const std::string& question, Judge& judge) {
    if (sentences.empty()) return std::nullopt;
    std::size_t hits = 0;
    for (const auto& s : sentences) {
        if (judge.relevant(s, question)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(sentences.size());
}

} // namespace detail

/// Fraction of retrieved-context sentences relevant to the question.
inline std::optional<double> contextual_relevancy(const EvalCase& c, Judge& judge) {
    std::vector<std::string> sentences;
    for (const auto& chunk : c.record.retrieval.contexts) {
        for (auto& s : split_sentences(chunk)) sentences.push_back(std::move(s));
    }
    return detail::relevant_sentence_fraction(sentences, c.question, judge);
}

/// Fraction of answer sentences relevant to the question.
inline std::optional<double> answer_relevancy(const EvalCase& c, Judge& judge) {
    return detail::relevant_sentence_fraction(split_sentences(c.record.answer), c.question, judge);
}

// ---------------------------------------------------------------------------
// Aggregate scoring of one case

/// Reported values are in [0,1]; cosines are clamped at 0 for reporting with the raw value kept.
struct MetricScores {
    // Against the expected (ground-truth) answer.
    std::optional<double> unigram_precision;
    std::optional<double> unigram_recall;
    std::optional<double> rouge1_f;
    std::optional<double> query_context_cosine;
    std::optional<double> csga;
    std::optional<double> contextual_precision;
    std::optional<double> contextual_recall;
    std::optional<double> contextual_relevancy;
    std::optional<double> answer_relevancy;

    // Same lexical metrics against the retrieved context.
    std::optional<double> unigram_precision_context;
    std::optional<double> unigram_recall_context;
    std::optional<double> rouge1_f_context;

    std::optional<double> query_context_cosine_raw;
    std::optional<double> query_context_chunk_mean;
    std::optional<double> csga_raw;
    std::optional<double> contextual_precision_weighted;

    std::vector<std::string> errors;
};

struct MetricField {
    std::string_view name;
    std::optional<double> MetricScores::*member;
};

/// The nine headline metrics, in report order.
inline constexpr std::array<MetricField, 9> kHeadlineMetrics = {{
    {"unigram_precision", &MetricScores::unigram_precision},
    {"unigram_recall", &MetricScores::unigram_recall},
    {"rouge1_f", &MetricScores::rouge1_f},
    {"query_context_cosine", &MetricScores::query_context_cosine},
    {"csga", &MetricScores::csga},
    {"contextual_precision", &MetricScores::contextual_precision},
    {"contextual_recall", &MetricScores::contextual_recall},
    {"contextual_relevancy", &MetricScores::contextual_relevancy},
    {"answer_relevancy", &MetricScores::answer_relevancy},
}};

inline constexpr std::array<MetricField, 7> kSecondaryMetrics = {{
    {"unigram_precision_context", &MetricScores::unigram_precision_context},
    {"unigram_recall_context", &MetricScores::unigram_recall_context},
    {"rouge1_f_context", &MetricScores::rouge1_f_context},
    {"query_context_cosine_raw", &MetricScores::query_context_cosine_raw},
    {"query_context_chunk_mean", &MetricScores::query_context_chunk_mean},
    {"csga_raw", &MetricScores::csga_raw},
    {"contextual_precision_weighted", &MetricScores::contextual_precision_weighted},
}};

namespace detail {

template <class Fn>
void guarded(MetricScores& scores, std::string_view metric, Fn&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        scores.errors.push_back(std::string(metric) + ": " + e.what());
    }
}

inline std::optional<double> clamp_report(std::optional<double> raw) {
    if (!raw) return std::nullopt;
    return std::clamp(*raw, 0.0, 1.0);
}

} // namespace detail

inline MetricScores score_case(const EvalCase& c, const Embedder& embedder, Judge& judge) {
    MetricScores s;
    const auto& answer = c.record.answer;
    const auto& context = c.record.retrieval.context_text;
    if (c.record.error) s.errors.push_back("record: " + *c.record.error);

    s.unigram_precision = unigram_precision(answer, c.expected_output);
    s.unigram_recall = unigram_recall(answer, c.expected_output);
    if (auto r = rouge1(answer, c.expected_output)) s.rouge1_f = r->f1;
    s.unigram_precision_context = unigram_precision(answer, context);
    s.unigram_recall_context = unigram_recall(answer, context);
    if (auto r = rouge1(answer, context)) s.rouge1_f_context = r->f1;

    detail::guarded(s, "query_context_cosine", [&] {
        if (auto sim = query_context_similarity(c.question, c.record.retrieval, embedder)) {
            s.query_context_cosine_raw = sim->whole;
            s.query_context_cosine = detail::clamp_report(sim->whole);
            s.query_context_chunk_mean = sim->chunk_mean;
        }
    });
    detail::guarded(s, "csga", [&] {
        s.csga_raw = csga(answer, c.expected_output, embedder);
        s.csga = detail::clamp_report(s.csga_raw);
    });
    detail::guarded(s, "contextual_precision", [&] {
        if (auto p = contextual_precision(c, judge)) {
            s.contextual_precision = p->plain;
            s.contextual_precision_weighted = p->rank_weighted;
        }
    });
    detail::guarded(s, "contextual_recall", [&] { s.contextual_recall = contextual_recall(c, judge); });
    detail::guarded(s, "contextual_relevancy", [&] { s.contextual_relevancy = contextual_relevancy(c, judge); });
    detail::guarded(s, "answer_relevancy", [&] { s.answer_relevancy = answer_relevancy(c, judge); });
    return s;
}

} // namespace ragmark
