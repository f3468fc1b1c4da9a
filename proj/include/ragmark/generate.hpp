#pragma once

// Answer generation: prompt assembly, the chat-model interface with offline
// stubs, and the question -> retrieval -> prompt -> completion chain.

#include "ragmark/error.hpp"
#include "ragmark/retrieve.hpp"
#include "ragmark/text.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

namespace ragmark {

struct LlmSpec {
    std::string endpoint;
    std::string model_name;
    double temperature = 0.0;
    unsigned max_output_tokens = 512;
    std::chrono::milliseconds timeout{60000};
    unsigned retries = 2;
    std::chrono::milliseconds backoff_base{1000};
    double backoff_factor = 2.0;
    /// Overrides RAGMARK_LLM_API_KEY when set.
    std::optional<std::string> api_key;
};

/// Retryability decides whether llm_complete backs off and tries again.
class LlmError : public Error {
public:
    enum class Kind { non_retryable, retryable_exhausted, bad_response, config };

    LlmError(Kind kind, const std::string& what, int status = 0) : Error(what), kind_(kind), status_(status) {}

    Kind kind() const noexcept { return kind_; }
    int status() const noexcept { return status_; }

private:
    Kind kind_;
    int status_;
};

// ---------------------------------------------------------------------------
// Prompt

struct ChatPrompt {
    std::string system;
    std::string user;
    std::string question;
    std::string context;

    /// The full prompt as recorded in QARecords.
    std::string text() const { return system + "\n\n" + user; }
};

/// `{context}` and `{question}` are substituted in a single pass, so placeholder-like text inside
/// the inputs is left alone.
struct PromptTemplate {
    std::string version = "qa-v1";
    std::string system =
        "You are a question-answering assistant for an organization's website. Answer ONLY using the "
        "information in the provided context. If the context is insufficient to answer, reply \"I don't know\".";
    std::string with_context = "Context:\n{context}\n\nQuestion: {question}\nAnswer:";
    std::string without_context = "No context was retrieved.\n\nQuestion: {question}\nAnswer:";
};

namespace detail {

inline std::string substitute(std::string_view pattern, std::string_view question, std::string_view context) {
    std::string out;
    std::size_t i = 0;
    while (i < pattern.size()) {
        if (pattern.substr(i).starts_with("{question}")) {
            out += question;
            i += 10;
        } else if (pattern.substr(i).starts_with("{context}")) {
            out += context;
            i += 9;
        } else {
            out.push_back(pattern[i++]);
        }
    }
    return out;
}

} // namespace detail

inline ChatPrompt build_prompt(const std::string& question, const std::string& context_text,
                               const PromptTemplate& tmpl = {}) {
    if (trim(question).empty()) throw ConfigError("build_prompt: empty question");
    const bool has_context = !trim(context_text).empty();
    ChatPrompt prompt;
    prompt.system = tmpl.system;
    prompt.user = detail::substitute(has_context ? tmpl.with_context : tmpl.without_context, question, context_text);
    prompt.question = question;
    prompt.context = context_text;
    return prompt;
}

// ---------------------------------------------------------------------------
// Models

struct Completion {
    std::string text;
    double latency_seconds = 0.0;
};

using FirstByteCallback = std::function<void()>;

class ChatModel {
public:
    virtual ~ChatModel() = default;
    virtual std::string name() const = 0;
    /// Calls `on_first_byte` (when set) as soon as the response starts arriving.
    virtual Completion complete(const ChatPrompt& prompt, const FirstByteCallback& on_first_byte) = 0;
};

/// Simulated latency of the offline stubs: base + per_token * answer tokens.
struct SimulatedLatency {
    double base_seconds = 1.0;
    double per_token_seconds = 0.02;

    double for_answer(std::string_view answer) const {
        return base_seconds + per_token_seconds * static_cast<double>(token_spans(answer).size());
    }
};

inline constexpr std::string_view kDontKnow = "I don't know";

/// Answers with the first sentence of the retrieved context; deterministic.
class EchoStubModel : public ChatModel {
public:
    explicit EchoStubModel(SimulatedLatency latency = {}) : latency_(latency) {}

    std::string name() const override { return "echo-stub"; }

    Completion complete(const ChatPrompt& prompt, const FirstByteCallback& on_first_byte) override {
        ++calls_;
        if (on_first_byte) on_first_byte();
        const auto sentences = split_sentences(prompt.context);
        std::string answer = sentences.empty() ? std::string(kDontKnow) : sentences.front();
        return {answer, latency_.for_answer(answer)};
    }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    SimulatedLatency latency_;
    std::atomic<std::size_t> calls_{0};
};

/// Plays back answers keyed by question text. Unknown questions raise an error.
class ScriptedStubModel : public ChatModel {
public:
    struct Line {
        std::string answer;
        double latency_seconds = 0.0;
    };

    explicit ScriptedStubModel(std::unordered_map<std::string, Line> script, std::string name = "scripted-stub")
        : script_(std::move(script)), name_(std::move(name)) {}

    std::string name() const override { return name_; }

    Completion complete(const ChatPrompt& prompt, const FirstByteCallback& on_first_byte) override {
        ++calls_;
        auto it = script_.find(prompt.question);
        if (it == script_.end()) throw LlmError(LlmError::Kind::non_retryable, "no scripted answer for: " + prompt.question);
        if (on_first_byte) on_first_byte();
        return {it->second.answer, it->second.latency_seconds};
    }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    std::unordered_map<std::string, Line> script_;
    std::string name_;
    std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Question answering

struct QARecord {
    std::string question;
    std::size_t k = 0;
    RetrievalResult retrieval;
    std::string prompt;
    std::string answer;
    double latency_seconds = 0.0;
    std::string model_name;
    std::int64_t timestamp = 0;
    std::optional<std::string> error;

    /// Chunk ids backing the answer, in fused rank order.
    std::vector<std::string> sources() const {
        std::vector<std::string> ids;
        for (const auto& item : retrieval.fused.items) ids.push_back(item.chunk_id);
        return ids;
    }
};

enum class PipelineEventKind { retrieval_done, prompt_built, llm_first_byte, llm_done };

inline std::string_view to_string(PipelineEventKind kind) {
    switch (kind) {
    case PipelineEventKind::retrieval_done: return "retrieval-done";
    case PipelineEventKind::prompt_built: return "prompt-built";
    case PipelineEventKind::llm_first_byte: return "llm-first-byte";
    case PipelineEventKind::llm_done: return "llm-done";
    }
    return "?";
}

struct PipelineEvent {
    PipelineEventKind kind;
    std::string question;
    std::size_t k = 0;
    std::string detail;
};

using EventSink = std::function<void(const PipelineEvent&)>;

struct AnswerOptions {
    RetrieveOptions retrieve;
    PromptTemplate prompt;
    EventSink events;
    std::function<std::int64_t()> clock = [] {
        return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
            .count();
    };
};

/// Builds a record from an already computed retrieval (lets several models share one retrieval).
inline QARecord answer_with_retrieval(RetrievalResult retrieval, ChatModel& model, const AnswerOptions& options = {}) {
    QARecord record;
    record.question = retrieval.query;
    record.k = retrieval.k;
    record.model_name = model.name();
    record.timestamp = options.clock ? options.clock() : 0;
    record.retrieval = std::move(retrieval);
    auto emit = [&](PipelineEventKind kind, std::string detail) {
        if (options.events) options.events({kind, record.question, record.k, std::move(detail)});
    };
    try {
        const auto prompt = build_prompt(record.question, record.retrieval.context_text, options.prompt);
        record.prompt = prompt.text();
        emit(PipelineEventKind::prompt_built, options.prompt.version);
        const auto completion = model.complete(prompt, [&] { emit(PipelineEventKind::llm_first_byte, model.name()); });
        record.answer = completion.text;
        record.latency_seconds = std::max(0.0, completion.latency_seconds);
        emit(PipelineEventKind::llm_done, model.name());
    } catch (const std::exception& e) {
        record.error = e.what();
        emit(PipelineEventKind::llm_done, std::string("error: ") + e.what());
    }
    return record;
}

/// retrieve -> build_prompt -> complete. Retrieval and model failures land in `error`.
inline QARecord answer_question(const std::string& question, std::size_t k, const HybridIndex& index,
                                const Embedder& embedder, ChatModel& model, const AnswerOptions& options = {}) {
    if (k == 0) throw ConfigError("answer_question: k must be positive");
    RetrievalResult retrieval;
    try {
        retrieval = retrieve(question, k, index, embedder, options.retrieve);
    } catch (const std::exception& e) {
        QARecord record;
        record.question = question;
        record.k = k;
        record.retrieval.query = question;
        record.retrieval.k = k;
        record.model_name = model.name();
        record.timestamp = options.clock ? options.clock() : 0;
        record.error = std::string("retrieval failed: ") + e.what();
        return record;
    }
    if (options.events) options.events({PipelineEventKind::retrieval_done, question, k, std::to_string(retrieval.fused.size())});
    return answer_with_retrieval(std::move(retrieval), model, options);
}

/// Runs `fn(i)` for i in [0, count) on up to `workers` threads.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) fn(i);
        });
    }
}

/// Answers every question with up to `max_in_flight` concurrent model calls; records come back
/// in input order.
inline std::vector<QARecord> answer_all(const std::vector<std::string>& questions, std::size_t k,
                                        const HybridIndex& index, const Embedder& embedder, ChatModel& model,
                                        const AnswerOptions& options = {}, std::size_t max_in_flight = 1) {
    if (k == 0) throw ConfigError("answer_all: k must be positive");
    std::vector<QARecord> records(questions.size());
    parallel_for(questions.size(), max_in_flight,
                 [&](std::size_t i) { records[i] = answer_question(questions[i], k, index, embedder, model, options); });
    return records;
}

} // namespace ragmark
