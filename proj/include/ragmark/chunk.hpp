#pragma once

// Document chunking. Both splitters work on the word-level token stream from
// tokenize(); a chunk's text is the exact source substring covering its tokens,
// so re-tokenizing a chunk reproduces its token_count.

#include "ragmark/error.hpp"
#include "ragmark/ingest.hpp"
#include "ragmark/text.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace ragmark {

enum class SplitStrategy { sentence, recursive };

inline std::string_view to_string(SplitStrategy s) { return s == SplitStrategy::sentence ? "sentence" : "recursive"; }

inline SplitStrategy parse_split_strategy(std::string_view name) {
    if (name == "sentence") return SplitStrategy::sentence;
    if (name == "recursive") return SplitStrategy::recursive;
    throw ConfigError("unknown split strategy: " + std::string(name));
}

struct SplitterConfig {
    SplitStrategy strategy = SplitStrategy::recursive;
    std::size_t max_tokens = 1024;
    std::size_t overlap_tokens = 102;
    /// Overlap may extend backwards this far to start on a sentence boundary.
    std::size_t overlap_slack = 20;

    void validate() const {
        if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
        if (overlap_tokens >= max_tokens) throw ConfigError("overlap_tokens must be smaller than max_tokens");
    }
};

struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    std::string text;
    std::size_t token_count = 0;
    std::size_t ordinal = 0;

    friend bool operator==(const Chunk&, const Chunk&) = default;
};

inline std::string make_chunk_id(std::string_view doc_id, std::size_t ordinal) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%05zu", ordinal);
    return std::string(doc_id) + buf;
}

/// Boundary strength in front of a token.
enum class Boundary : std::uint8_t { word = 0, sentence = 1, paragraph = 2 };

/// Token spans plus the boundary level preceding each token. `levels` has one extra entry for
/// the end of text, which counts as a paragraph boundary.
struct TokenStream {
    std::vector<TextSpan> tokens;
    std::vector<Boundary> levels;
};

inline TokenStream analyze_tokens(std::string_view text) {
    TokenStream stream;
    stream.tokens = token_spans(text);
    stream.levels.assign(stream.tokens.size() + 1, Boundary::word);
    stream.levels.back() = Boundary::paragraph;
    std::size_t t = 0;
    for (const auto& segment : sentence_segments(text)) {
        while (t < stream.tokens.size() && stream.tokens[t].begin < segment.span.begin) ++t;
        if (t == stream.tokens.size()) break;
        const auto level = segment.starts_paragraph ? Boundary::paragraph : Boundary::sentence;
        stream.levels[t] = std::max(stream.levels[t], level);
    }
    if (!stream.tokens.empty()) stream.levels[0] = Boundary::paragraph;
    return stream;
}

namespace detail {

struct TokenRange {
    std::size_t begin;
    std::size_t end;
};

/// Greedy packing over boundary levels. Each chunk ends at the furthest boundary of the highest
/// available level (capped at `top`) that fits in max_tokens and extends past the previous chunk.
/// With overlap, the next chunk starts overlap_tokens before the previous end, pulled back to a
/// sentence start when one lies within overlap_slack tokens.
inline std::vector<TokenRange> pack_ranges(const TokenStream& stream, std::size_t max_tokens, std::size_t overlap,
                                           std::size_t slack, Boundary top) {
    std::vector<TokenRange> ranges;
    const std::size_t n = stream.tokens.size();
    auto level_at = [&](std::size_t i) { return std::min(stream.levels[i], top); };
    std::size_t start = 0;
    std::size_t prev_end = 0;
    while (prev_end < n) {
        const std::size_t limit = std::min(n, start + max_tokens);
        std::size_t end = limit;
        for (int want = static_cast<int>(top); want >= 0; --want) {
            std::size_t found = 0;
            for (std::size_t e = limit; e > prev_end; --e) {
                if (static_cast<int>(level_at(e)) >= want) {
                    found = e;
                    break;
                }
            }
            if (found) {
                end = found;
                break;
            }
        }
        ranges.push_back({start, end});
        prev_end = end;
        if (end == n) break;
        if (overlap == 0) {
            start = end;
            continue;
        }
        std::size_t next = start;
        if (end - start > overlap) {
            next = end - overlap;
            const std::size_t earliest = std::max({start, end - overlap - std::min(slack, end - overlap),
                                                   end >= max_tokens ? end - max_tokens + 1 : std::size_t{0}});
            for (std::size_t b = end - overlap + 1; b-- > earliest;) {
                if (level_at(b) >= Boundary::sentence) {
                    next = b;
                    break;
                }
            }
        }
        start = next;
    }
    return ranges;
}

inline std::vector<Chunk> materialize(const Document& doc, const TokenStream& stream,
                                      const std::vector<TokenRange>& ranges) {
    std::vector<Chunk> chunks;
    chunks.reserve(ranges.size());
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        const auto& r = ranges[i];
        const auto begin = stream.tokens[r.begin].begin;
        const auto end = stream.tokens[r.end - 1].end;
        chunks.push_back({make_chunk_id(doc.id, i), doc.id, doc.text.substr(begin, end - begin), r.end - r.begin, i});
    }
    return chunks;
}

} // namespace detail

/// Packs whole paragraphs, then sentences, then words into chunks of at most max_tokens; each
/// chunk after the first repeats the tail of its predecessor.
inline std::vector<Chunk> split_recursive(const Document& doc, const SplitterConfig& cfg) {
    cfg.validate();
    if (cfg.strategy != SplitStrategy::recursive) throw ConfigError("split_recursive requires the recursive strategy");
    const auto stream = analyze_tokens(doc.text);
    if (stream.tokens.empty()) return {};
    const auto ranges =
        detail::pack_ranges(stream, cfg.max_tokens, cfg.overlap_tokens, cfg.overlap_slack, Boundary::paragraph);
    return detail::materialize(doc, stream, ranges);
}

/// Packs whole sentences greedily without overlap; only a sentence longer than max_tokens is
/// cut at word boundaries.
inline std::vector<Chunk> split_sentencewise(const Document& doc, const SplitterConfig& cfg) {
    cfg.validate();
    if (cfg.strategy != SplitStrategy::sentence) throw ConfigError("split_sentencewise requires the sentence strategy");
    const auto stream = analyze_tokens(doc.text);
    if (stream.tokens.empty()) return {};
    const auto ranges = detail::pack_ranges(stream, cfg.max_tokens, 0, 0, Boundary::sentence);
    return detail::materialize(doc, stream, ranges);
}

inline std::vector<Chunk> split_document(const Document& doc, const SplitterConfig& cfg) {
    return cfg.strategy == SplitStrategy::recursive ? split_recursive(doc, cfg) : split_sentencewise(doc, cfg);
}

} // namespace ragmark
