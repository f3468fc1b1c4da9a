#pragma once

// Unicode-aware text primitives shared by every stage: word tokenization,
// case folding, NFC normalization and sentence/paragraph segmentation.
//
// All positions are byte offsets into UTF-8 input. Ill-formed UTF-8 never
// throws; each bad byte is treated as an opaque punctuation character.

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ragmark {

struct TextSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - begin; }
    std::string_view of(std::string_view text) const { return text.substr(begin, end - begin); }
    friend bool operator==(const TextSpan&, const TextSpan&) = default;
};

namespace utf8 {

/// Decodes one code point at `pos`, advancing it. Returns a negative value for ill-formed input
/// (in which case exactly one byte is consumed).
inline std::int32_t next(std::string_view text, std::size_t& pos) {
    const auto* s = reinterpret_cast<const std::uint8_t*>(text.data());
    const auto length = static_cast<std::int32_t>(text.size());
    auto i = static_cast<std::int32_t>(pos);
    UChar32 c = 0;
    U8_NEXT(s, i, length, c);
    pos = static_cast<std::size_t>(i);
    return c;
}

/// Decodes the code point that ends just before `pos`, moving `pos` back to its start.
inline std::int32_t prev(std::string_view text, std::size_t& pos) {
    const auto* s = reinterpret_cast<const std::uint8_t*>(text.data());
    auto i = static_cast<std::int32_t>(pos);
    UChar32 c = 0;
    U8_PREV(s, 0, i, c);
    pos = static_cast<std::size_t>(i);
    return c;
}

inline void append(std::string& out, std::int32_t cp) {
    char buf[U8_MAX_LENGTH];
    std::int32_t n = 0;
    UBool error = false;
    U8_APPEND(reinterpret_cast<std::uint8_t*>(buf), n, U8_MAX_LENGTH, cp, error);
    if (!error) out.append(buf, static_cast<std::size_t>(n));
}

} // namespace utf8

inline bool is_apostrophe(std::int32_t cp) noexcept { return cp == U'\'' || cp == 0x2019; }

inline bool is_space(std::int32_t cp) noexcept { return cp >= 0 && u_isUWhiteSpace(cp); }

/// Letters, digits and combining marks; marks keep decomposed accents inside their word.
inline bool is_alnum(std::int32_t cp) noexcept {
    if (cp < 0) return false;
    if (u_isalnum(cp)) return true;
    const auto mask = U_GET_GC_MASK(cp);
    return (mask & U_GC_M_MASK) != 0;
}

inline bool is_word_char(std::int32_t cp) noexcept { return is_alnum(cp) || is_apostrophe(cp); }

/// Tokens are maximal runs of letters/digits/apostrophes; any other non-space code point is a
/// token of its own.
inline std::vector<TextSpan> token_spans(std::string_view text) {
    std::vector<TextSpan> spans;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t start = pos;
        const auto cp = utf8::next(text, pos);
        if (is_space(cp)) continue;
        if (is_word_char(cp)) {
            std::size_t end = pos;
            while (pos < text.size()) {
                std::size_t look = pos;
                if (!is_word_char(utf8::next(text, look))) break;
                pos = end = look;
            }
            spans.push_back({start, end});
        } else {
            spans.push_back({start, pos});
        }
    }
    return spans;
}

inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& span : token_spans(text)) out.emplace_back(span.of(text));
    return out;
}

/// True when the token has no letter or digit (".", "--", "'").
inline bool is_punctuation_token(std::string_view token) {
    std::size_t pos = 0;
    while (pos < token.size()) {
        if (is_alnum(utf8::next(token, pos))) return false;
    }
    return true;
}

inline std::string to_lower(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t start = pos;
        const auto cp = utf8::next(text, pos);
        if (cp < 0) {
            out.append(text.substr(start, pos - start));
        } else {
            utf8::append(out, u_tolower(cp));
        }
    }
    return out;
}

/// Lowercased tokens with pure-punctuation tokens removed. The normalization used by BM25,
/// the lexical metrics and the hashed test embedder.
inline std::vector<std::string> terms(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& span : token_spans(text)) {
        const auto token = span.of(text);
        if (!is_punctuation_token(token)) out.push_back(to_lower(token));
    }
    return out;
}

/// NFC normalization. Ill-formed sequences are replaced by U+FFFD by ICU.
inline std::string normalize_nfc(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) return std::string(text);
    const auto source = icu::UnicodeString::fromUTF8(
        icu::StringPiece(text.data(), static_cast<std::int32_t>(text.size())));
    const auto normalized = nfc->normalize(source, status);
    if (U_FAILURE(status)) return std::string(text);
    std::string out;
    normalized.toUTF8String(out);
    return out;
}

inline std::string_view trim(std::string_view text) {
    std::size_t begin = 0;
    while (begin < text.size()) {
        std::size_t pos = begin;
        if (!is_space(utf8::next(text, pos))) break;
        begin = pos;
    }
    std::size_t end = text.size();
    while (end > begin) {
        std::size_t pos = end;
        if (!is_space(utf8::prev(text, pos))) break;
        end = pos;
    }
    return text.substr(begin, end - begin);
}

// ---------------------------------------------------------------------------
// Segmentation

/// A sentence (or paragraph) span, trimmed of surrounding whitespace.
struct Segment {
    TextSpan span;
    bool starts_paragraph = false;
};

namespace detail {

inline TextSpan trimmed_span(std::string_view text, std::size_t begin, std::size_t end) {
    const auto inner = trim(text.substr(begin, end - begin));
    if (inner.empty()) return {end, end};
    const auto offset = static_cast<std::size_t>(inner.data() - text.data());
    return {offset, offset + inner.size()};
}

inline bool is_closing(std::int32_t cp) noexcept {
    return cp == U'"' || cp == U'\'' || cp == U')' || cp == U']' || cp == 0x2019 || cp == 0x201D;
}

inline bool is_opening(std::int32_t cp) noexcept {
    return cp == U'"' || cp == U'\'' || cp == U'(' || cp == U'[' || cp == 0x2018 || cp == 0x201C;
}

inline constexpr std::array<std::string_view, 8> kAbbreviations = {
    "dr", "mr", "mrs", "ms", "prof", "e.g", "i.e", "vs"};

/// The whitespace-delimited word ending at byte `end`, minus leading opening punctuation.
inline bool is_abbreviation(std::string_view text, std::size_t begin, std::size_t end) {
    std::size_t start = end;
    while (start > begin) {
        std::size_t pos = start;
        if (is_space(utf8::prev(text, pos))) break;
        start = pos;
    }
    while (start < end) {
        std::size_t pos = start;
        if (!is_opening(utf8::next(text, pos))) break;
        start = pos;
    }
    const auto word = to_lower(text.substr(start, end - start));
    return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

/// Paragraphs are separated by one or more blank (whitespace-only) lines.
inline std::vector<TextSpan> paragraph_ranges(std::string_view text) {
    std::vector<TextSpan> paragraphs;
    std::size_t para_begin = 0;
    std::size_t line_begin = 0;
    bool para_has_content = false;
    while (line_begin <= text.size()) {
        auto nl = text.find('\n', line_begin);
        const std::size_t line_end = nl == std::string_view::npos ? text.size() : nl;
        const bool blank = trim(text.substr(line_begin, line_end - line_begin)).empty();
        if (blank) {
            if (para_has_content) paragraphs.push_back({para_begin, line_begin});
            para_has_content = false;
            para_begin = line_end;
        } else {
            para_has_content = true;
        }
        if (nl == std::string_view::npos) break;
        line_begin = nl + 1;
    }
    if (para_has_content) paragraphs.push_back({para_begin, text.size()});
    return paragraphs;
}

} // namespace detail

/// Splits on . ! ? followed by whitespace and an uppercase letter (or end of text). Blank lines
/// always end a sentence. A single period after Dr, Mr, Mrs, Ms, Prof, e.g, i.e or vs does not.
inline std::vector<Segment> sentence_segments(std::string_view text) {
    std::vector<Segment> out;
    for (const auto& para : detail::paragraph_ranges(text)) {
        std::size_t sentence_begin = para.begin;
        bool first = true;
        auto emit = [&](std::size_t end) {
            const auto span = detail::trimmed_span(text, sentence_begin, end);
            if (span.size() > 0) {
                out.push_back({span, first});
                first = false;
            }
            sentence_begin = end;
        };
        std::size_t pos = para.begin;
        while (pos < para.end) {
            const std::size_t at = pos;
            const auto cp = utf8::next(text, pos);
            if (cp != U'.' && cp != U'!' && cp != U'?') continue;
            std::size_t run_end = pos;
            bool single_period = cp == U'.';
            while (run_end < para.end) {
                std::size_t look = run_end;
                const auto c = utf8::next(text, look);
                if (c != U'.' && c != U'!' && c != U'?') break;
                single_period = false;
                run_end = look;
            }
            std::size_t close_end = run_end;
            while (close_end < para.end) {
                std::size_t look = close_end;
                if (!detail::is_closing(utf8::next(text, look))) break;
                close_end = look;
            }
            pos = close_end;
            if (close_end < para.end) {
                std::size_t look = close_end;
                if (!is_space(utf8::next(text, look))) continue;
            }
            std::size_t next_start = close_end;
            while (next_start < para.end) {
                std::size_t look = next_start;
                if (!is_space(utf8::next(text, look))) break;
                next_start = look;
            }
            if (next_start < para.end) {
                std::size_t look = next_start;
                const auto next_cp = utf8::next(text, look);
                if (!(u_isupper(next_cp) || u_istitle(next_cp))) continue;
            }
            if (single_period && detail::is_abbreviation(text, para.begin, at)) continue;
            emit(close_end);
        }
        emit(para.end);
    }
    return out;
}

inline std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& segment : sentence_segments(text)) out.emplace_back(segment.span.of(text));
    return out;
}

} // namespace ragmark
