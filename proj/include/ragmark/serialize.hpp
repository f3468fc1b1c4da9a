#pragma once

// JSON encodings for the on-disk artifacts (chunk files, QA records, score rows).
// nlohmann::json orders object keys, so dumps are byte-stable.

#include "ragmark/chunk.hpp"
#include "ragmark/error.hpp"
#include "ragmark/evaluate.hpp"
#include "ragmark/generate.hpp"
#include "ragmark/retrieve.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace ragmark {

using nlohmann::json;

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<double> optional_double(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<double>();
}

inline void to_json(json& j, const Chunk& c) {
    j = json{{"chunk_id", c.chunk_id}, {"doc_id", c.doc_id}, {"text", c.text}, {"token_count", c.token_count},
             {"ordinal", c.ordinal}};
}

inline void from_json(const json& j, Chunk& c) {
    j.at("chunk_id").get_to(c.chunk_id);
    j.at("doc_id").get_to(c.doc_id);
    j.at("text").get_to(c.text);
    j.at("token_count").get_to(c.token_count);
    j.at("ordinal").get_to(c.ordinal);
}

inline void to_json(json& j, const RankedList& list) {
    j = json::array();
    for (const auto& item : list.items) j.push_back({{"chunk_id", item.chunk_id}, {"score", item.score}});
}

inline RankedList ranked_list_from_json(const json& j, RankSource source) {
    RankedList list{{}, source};
    for (const auto& item : j) list.items.push_back({item.at("chunk_id").get<std::string>(), item.at("score").get<double>()});
    return list;
}

inline void to_json(json& j, const RetrievalResult& r) {
    j = json{{"query", r.query}, {"k", r.k}, {"fused", r.fused}, {"bm25", r.bm25}, {"vector", r.vector},
             {"contexts", r.contexts}};
}

inline void from_json(const json& j, RetrievalResult& r) {
    j.at("query").get_to(r.query);
    j.at("k").get_to(r.k);
    r.fused = ranked_list_from_json(j.at("fused"), RankSource::fused);
    r.bm25 = ranked_list_from_json(j.at("bm25"), RankSource::bm25);
    r.vector = ranked_list_from_json(j.at("vector"), RankSource::vector);
    j.at("contexts").get_to(r.contexts);
    r.context_text.clear();
    for (std::size_t i = 0; i < r.contexts.size(); ++i) {
        if (i) r.context_text += kContextSeparator;
        r.context_text += r.contexts[i];
    }
}

/// A zero timestamp is omitted so deterministic runs stay byte-identical.
inline void to_json(json& j, const QARecord& r) {
    j = json{{"question", r.question},
             {"k", r.k},
             {"model", r.model_name},
             {"prompt", r.prompt},
             {"answer", r.answer},
             {"latency_seconds", r.latency_seconds},
             {"sources", r.sources()},
             {"retrieval", r.retrieval},
             {"error", r.error ? json(*r.error) : json(nullptr)}};
    if (r.timestamp != 0) j["timestamp"] = r.timestamp;
}

inline void from_json(const json& j, QARecord& r) {
    j.at("question").get_to(r.question);
    j.at("k").get_to(r.k);
    j.at("model").get_to(r.model_name);
    r.prompt = j.value("prompt", "");
    j.at("answer").get_to(r.answer);
    r.latency_seconds = j.value("latency_seconds", 0.0);
    r.timestamp = j.value("timestamp", std::int64_t{0});
    if (j.contains("retrieval")) j.at("retrieval").get_to(r.retrieval);
    auto err = j.find("error");
    r.error = (err == j.end() || err->is_null()) ? std::nullopt : std::optional<std::string>(err->get<std::string>());
}

inline void to_json(json& j, const MetricScores& s) {
    j = json::object();
    for (const auto& f : kHeadlineMetrics) j[std::string(f.name)] = optional_json(s.*f.member);
    for (const auto& f : kSecondaryMetrics) j[std::string(f.name)] = optional_json(s.*f.member);
    j["errors"] = s.errors;
}

inline void from_json(const json& j, MetricScores& s) {
    for (const auto& f : kHeadlineMetrics) s.*f.member = optional_double(j, std::string(f.name).c_str());
    for (const auto& f : kSecondaryMetrics) s.*f.member = optional_double(j, std::string(f.name).c_str());
    s.errors = j.value("errors", std::vector<std::string>{});
}

// ---------------------------------------------------------------------------
// JSON-lines files

template <class T>
void write_jsonl(const std::filesystem::path& file, const std::vector<T>& items) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + file.string());
    for (const auto& item : items) out << json(item).dump() << '\n';
    if (!out) throw Error("write failed: " + file.string());
}

/// Parses every non-blank line; a malformed line raises ParseError with its byte offset.
inline std::vector<json> read_jsonl(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("cannot open " + file.string());
    std::vector<json> out;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const auto line_offset = offset;
        offset += line.size() + 1;
        if (trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw ParseError(file.string() + ": " + e.what(), line_offset + (e.byte > 0 ? e.byte - 1 : 0));
        }
    }
    return out;
}

template <class T>
std::vector<T> read_jsonl_as(const std::filesystem::path& file) {
    std::vector<T> out;
    for (const auto& j : read_jsonl(file)) {
        try {
            out.push_back(j.get<T>());
        } catch (const json::exception& e) {
            throw Error(file.string() + ": " + e.what());
        }
    }
    return out;
}

} // namespace ragmark
