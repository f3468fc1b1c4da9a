#pragma once

// Corpus ingestion: sitemap parsing, HTML-to-text extraction, URL-derived file
// names and a breadth-first crawler that persists one text file per page.

#include "ragmark/error.hpp"
#include "ragmark/hash.hpp"
#include "ragmark/text.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace ragmark {

struct SitemapEntry {
    std::string url;
    /// Set for <loc> children of a <sitemap> element (sitemap index); fetch and parse recursively.
    bool is_sitemap = false;

    friend bool operator==(const SitemapEntry&, const SitemapEntry&) = default;
};

struct Document {
    std::string id;
    std::string url;
    std::string text;
    std::int64_t fetched_at = 0;
};

struct CrawlLimits {
    std::size_t max_pages = 1000;
    std::size_t max_concurrent_fetches = 4;
    std::chrono::milliseconds per_request_timeout{10000};
    unsigned retry_count = 2;
    /// Minimum gap between two requests to the same host.
    std::chrono::milliseconds politeness_delay{0};

    void validate() const {
        if (max_pages < 1) throw ConfigError("max_pages must be >= 1");
        if (max_concurrent_fetches < 1) throw ConfigError("max_concurrent_fetches must be >= 1");
    }
};

inline bool is_absolute_http_url(std::string_view url) {
    auto rest = url;
    if (rest.starts_with("http://")) {
        rest.remove_prefix(7);
    } else if (rest.starts_with("https://")) {
        rest.remove_prefix(8);
    } else {
        return false;
    }
    const auto host_end = rest.find_first_of("/?#");
    const auto host = rest.substr(0, host_end);
    return !host.empty() && host.find_first_of(" \t\r\n") == std::string_view::npos;
}

inline std::string url_host(std::string_view url) {
    const auto scheme = url.find("://");
    auto rest = scheme == std::string_view::npos ? url : url.substr(scheme + 3);
    return std::string(rest.substr(0, rest.find_first_of("/?#")));
}

// ---------------------------------------------------------------------------
// Sitemap XML

namespace detail {

inline void append_code_point(std::string& out, std::uint32_t cp) {
    if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return;
    utf8::append(out, static_cast<std::int32_t>(cp));
}

/// Parses a numeric character reference body ("#123" / "#x7b"). Returns false if malformed.
inline bool decode_numeric_entity(std::string_view body, std::uint32_t& cp) {
    if (body.size() < 2 || body[0] != '#') return false;
    int base = 10;
    std::size_t i = 1;
    if (body[1] == 'x' || body[1] == 'X') {
        base = 16;
        i = 2;
    }
    if (i >= body.size() || body.size() - i > 8) return false;
    std::uint32_t value = 0;
    for (; i < body.size(); ++i) {
        const char c = body[i];
        int digit;
        if (c >= '0' && c <= '9') {
            digit = c - '0';
        } else if (base == 16 && c >= 'a' && c <= 'f') {
            digit = c - 'a' + 10;
        } else if (base == 16 && c >= 'A' && c <= 'F') {
            digit = c - 'A' + 10;
        } else {
            return false;
        }
        value = value * static_cast<std::uint32_t>(base) + static_cast<std::uint32_t>(digit);
    }
    cp = value;
    return true;
}

class XmlScanner {
public:
    explicit XmlScanner(std::string_view xml) : xml_(xml) {}

    std::vector<SitemapEntry> run() {
        if (xml_.starts_with("\xEF\xBB\xBF")) pos_ = 3;
        bool seen_root = false;
        while (pos_ < xml_.size()) {
            if (xml_[pos_] != '<') {
                if (!is_xml_space(xml_[pos_])) fail(stack_.empty() ? "text outside root element" : "unexpected text");
                ++pos_;
                continue;
            }
            if (starts("<?")) {
                skip_past("?>", "unterminated processing instruction");
            } else if (starts("<!--")) {
                skip_past("-->", "unterminated comment");
            } else if (starts("<!DOCTYPE")) {
                skip_doctype();
            } else if (starts("</")) {
                fail("unexpected closing tag");
            } else {
                if (seen_root) fail("multiple root elements");
                seen_root = true;
                parse_element();
            }
        }
        if (!seen_root) fail("no root element");
        return std::move(entries_);
    }

private:
    [[noreturn]] void fail(const std::string& what) const { throw ParseError("malformed sitemap XML: " + what, pos_); }

    static bool is_xml_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

    static bool is_name_start(char c) {
        return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_' || c == ':' ||
               static_cast<unsigned char>(c) >= 0x80;
    }

    static bool is_name_char(char c) {
        return is_name_start(c) || (c >= '0' && c <= '9') || c == '-' || c == '.';
    }

    bool starts(std::string_view prefix) const { return xml_.substr(pos_).starts_with(prefix); }

    void skip_past(std::string_view terminator, const char* error) {
        const auto end = xml_.find(terminator, pos_);
        if (end == std::string_view::npos) {
            pos_ = xml_.size();
            fail(error);
        }
        pos_ = end + terminator.size();
    }

    void skip_doctype() {
        int bracket = 0;
        while (pos_ < xml_.size()) {
            const char c = xml_[pos_++];
            if (c == '[') ++bracket;
            if (c == ']') --bracket;
            if (c == '>' && bracket <= 0) return;
        }
        fail("unterminated DOCTYPE");
    }

    void skip_space() {
        while (pos_ < xml_.size() && is_xml_space(xml_[pos_])) ++pos_;
    }

    std::string parse_name() {
        if (pos_ >= xml_.size() || !is_name_start(xml_[pos_])) fail("expected a name");
        const auto start = pos_;
        while (pos_ < xml_.size() && is_name_char(xml_[pos_])) ++pos_;
        return std::string(xml_.substr(start, pos_ - start));
    }

    void decode_entity(std::string* out) {
        const auto start = pos_;
        const auto semi = xml_.find(';', pos_);
        if (semi == std::string_view::npos || semi - pos_ > 12) fail("unterminated entity reference");
        const auto body = xml_.substr(pos_ + 1, semi - pos_ - 1);
        std::string decoded;
        if (body == "amp") {
            decoded = "&";
        } else if (body == "lt") {
            decoded = "<";
        } else if (body == "gt") {
            decoded = ">";
        } else if (body == "quot") {
            decoded = "\"";
        } else if (body == "apos") {
            decoded = "'";
        } else {
            std::uint32_t cp = 0;
            if (!decode_numeric_entity(body, cp)) {
                pos_ = start;
                fail("unknown entity &" + std::string(body) + ";");
            }
            append_code_point(decoded, cp);
        }
        if (out) *out += decoded;
        pos_ = semi + 1;
    }

    void parse_attributes() {
        std::unordered_set<std::string> names;
        while (true) {
            const bool had_space = pos_ < xml_.size() && is_xml_space(xml_[pos_]);
            skip_space();
            if (pos_ >= xml_.size()) fail("unterminated start tag");
            if (xml_[pos_] == '>' || starts("/>")) return;
            if (!had_space) fail("expected whitespace before attribute");
            auto name = parse_name();
            if (!names.insert(name).second) fail("duplicate attribute " + name);
            skip_space();
            if (pos_ >= xml_.size() || xml_[pos_] != '=') fail("expected '=' after attribute name");
            ++pos_;
            skip_space();
            if (pos_ >= xml_.size() || (xml_[pos_] != '"' && xml_[pos_] != '\'')) fail("expected quoted attribute value");
            const char quote = xml_[pos_++];
            while (true) {
                if (pos_ >= xml_.size()) fail("unterminated attribute value");
                const char c = xml_[pos_];
                if (c == quote) break;
                if (c == '<') fail("'<' in attribute value");
                if (c == '&') {
                    decode_entity(nullptr);
                } else {
                    ++pos_;
                }
            }
            ++pos_;
        }
    }

    // Iterative element walk; `stack_` holds open element names.
    void parse_element() {
        open_tag();
        while (!stack_.empty()) {
            if (pos_ >= xml_.size()) fail("unclosed element <" + stack_.back() + ">");
            const char c = xml_[pos_];
            if (c == '<') {
                if (starts("</")) {
                    close_tag();
                } else if (starts("<!--")) {
                    skip_past("-->", "unterminated comment");
                } else if (starts("<![CDATA[")) {
                    const auto begin = pos_ + 9;
                    skip_past("]]>", "unterminated CDATA section");
                    if (capturing_) text_ += xml_.substr(begin, pos_ - 3 - begin);
                } else if (starts("<?")) {
                    skip_past("?>", "unterminated processing instruction");
                } else {
                    open_tag();
                }
            } else if (c == '&') {
                decode_entity(capturing_ ? &text_ : nullptr);
            } else {
                if (capturing_) text_.push_back(c);
                ++pos_;
            }
        }
    }

    void open_tag() {
        const auto tag_start = pos_;
        ++pos_;
        auto name = parse_name();
        parse_attributes();
        const bool self_closing = starts("/>");
        pos_ += self_closing ? 2 : 1;
        if (name == "loc") {
            if (capturing_) fail("nested <loc>");
            loc_start_ = tag_start;
            loc_in_sitemap_ = !stack_.empty() && stack_.back() == "sitemap";
            if (self_closing) {
                finish_loc();
                return;
            }
            capturing_ = true;
            text_.clear();
        }
        if (!self_closing) stack_.push_back(std::move(name));
    }

    void close_tag() {
        pos_ += 2;
        const auto name = parse_name();
        skip_space();
        if (pos_ >= xml_.size() || xml_[pos_] != '>') fail("malformed closing tag");
        if (stack_.empty() || stack_.back() != name) {
            fail("mismatched closing tag </" + name + ">" +
                 (stack_.empty() ? std::string() : ", expected </" + stack_.back() + ">"));
        }
        ++pos_;
        stack_.pop_back();
        if (name == "loc") finish_loc();
    }

    void finish_loc() {
        capturing_ = false;
        std::string url(trim(text_));
        if (url.empty()) return;
        if (!is_absolute_http_url(url)) {
            throw ParseError("sitemap <loc> is not an absolute http(s) URL: " + url, loc_start_);
        }
        if (seen_.insert(url).second) entries_.push_back({std::move(url), loc_in_sitemap_});
    }

    std::string_view xml_;
    std::size_t pos_ = 0;
    std::vector<std::string> stack_;
    std::vector<SitemapEntry> entries_;
    std::unordered_set<std::string> seen_;
    std::string text_;
    bool capturing_ = false;
    bool loc_in_sitemap_ = false;
    std::size_t loc_start_ = 0;
};

} // namespace detail

/// Extracts every <loc> URL in document order, trimmed and de-duplicated (first occurrence wins).
/// Entries inside <sitemap> elements are flagged as nested sitemaps. Throws ParseError on
/// malformed XML.
inline std::vector<SitemapEntry> parse_sitemap(std::string_view xml_text) {
    return detail::XmlScanner(xml_text).run();
}

// ---------------------------------------------------------------------------
// HTML to text

namespace detail {

struct NamedEntity {
    std::string_view name;
    std::uint32_t code_point;
};

inline constexpr NamedEntity kNamedEntities[] = {
    {"amp", '&'},      {"lt", '<'},        {"gt", '>'},        {"quot", '"'},      {"apos", '\''},
    {"nbsp", 0xA0},    {"copy", 0xA9},     {"reg", 0xAE},      {"trade", 0x2122},  {"hellip", 0x2026},
    {"mdash", 0x2014}, {"ndash", 0x2013},  {"lsquo", 0x2018},  {"rsquo", 0x2019},  {"ldquo", 0x201C},
    {"rdquo", 0x201D}, {"bull", 0x2022},   {"middot", 0xB7},   {"laquo", 0xAB},    {"raquo", 0xBB},
    {"euro", 0x20AC},  {"pound", 0xA3},    {"yen", 0xA5},      {"cent", 0xA2},     {"sect", 0xA7},
    {"deg", 0xB0},     {"plusmn", 0xB1},   {"times", 0xD7},    {"divide", 0xF7},   {"frac12", 0xBD},
    {"frac14", 0xBC},  {"frac34", 0xBE},   {"para", 0xB6},     {"shy", 0xAD},      {"rupee", 0x20B9},
    {"eacute", 0xE9},  {"egrave", 0xE8},   {"agrave", 0xE0},   {"aacute", 0xE1},   {"iacute", 0xED},
    {"oacute", 0xF3},  {"uacute", 0xFA},   {"ouml", 0xF6},     {"uuml", 0xFC},     {"auml", 0xE4},
    {"ccedil", 0xE7},  {"ntilde", 0xF1},   {"szlig", 0xDF},    {"Eacute", 0xC9},   {"Auml", 0xC4},
    {"Ouml", 0xD6},    {"Uuml", 0xDC},     {"ensp", 0x2002},   {"emsp", 0x2003},   {"thinsp", 0x2009},
};

inline std::string decode_html_entities(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] != '&') {
            out.push_back(text[i++]);
            continue;
        }
        const auto semi = text.find(';', i + 1);
        if (semi != std::string_view::npos && semi - i <= 12) {
            const auto body = text.substr(i + 1, semi - i - 1);
            std::uint32_t cp = 0;
            bool known = decode_numeric_entity(body, cp);
            if (!known) {
                for (const auto& entity : kNamedEntities) {
                    if (entity.name == body) {
                        cp = entity.code_point;
                        known = true;
                        break;
                    }
                }
            }
            if (known) {
                append_code_point(out, cp);
                i = semi + 1;
                continue;
            }
        }
        out.push_back(text[i++]);
    }
    return out;
}

inline bool ascii_iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto lower = [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; };
        if (lower(a[i]) != lower(b[i])) return false;
    }
    return true;
}

inline bool is_ascii_alpha(char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); }

inline bool is_raw_text_element(std::string_view name) {
    return ascii_iequals(name, "script") || ascii_iequals(name, "style") || ascii_iequals(name, "noscript") ||
           ascii_iequals(name, "template");
}

inline bool is_block_element(std::string_view name) {
    static constexpr std::string_view kBlocks[] = {
        "address", "article", "aside", "blockquote", "br", "dd", "div", "dl", "dt", "figcaption",
        "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr", "li", "main",
        "nav", "ol", "option", "p", "pre", "section", "table", "td", "th", "title", "tr", "ul",
        "body", "head", "html", "img", "input", "button", "label", "select", "textarea", "caption"};
    for (auto block : kBlocks) {
        if (ascii_iequals(name, block)) return true;
    }
    return false;
}

/// Drops control characters and ill-formed bytes, NFC-normalizes, collapses every whitespace
/// run to one space and trims.
inline std::string clean_text(std::string_view raw) {
    std::string filtered;
    filtered.reserve(raw.size());
    std::size_t pos = 0;
    while (pos < raw.size()) {
        const auto cp = utf8::next(raw, pos);
        if (cp < 0) continue;
        if (is_space(cp)) {
            filtered.push_back(' ');
            continue;
        }
        if (u_charType(cp) == U_CONTROL_CHAR || cp == 0xAD) continue;
        utf8::append(filtered, cp);
    }
    const auto normalized = normalize_nfc(filtered);
    std::string out;
    out.reserve(normalized.size());
    bool pending_space = false;
    pos = 0;
    while (pos < normalized.size()) {
        const std::size_t start = pos;
        const auto cp = utf8::next(normalized, pos);
        if (is_space(cp)) {
            pending_space = true;
            continue;
        }
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        out.append(normalized.substr(start, pos - start));
    }
    return out;
}

} // namespace detail

/// Visible text of an HTML page: tags removed, script/style/noscript/template bodies dropped,
/// entities decoded, whitespace collapsed. Never throws on bad markup.
inline std::string extract_text(std::string_view html) {
    std::string raw;
    raw.reserve(html.size());
    std::size_t i = 0;
    const std::size_t n = html.size();
    while (i < n) {
        const char c = html[i];
        if (c != '<') {
            raw.push_back(c);
            ++i;
            continue;
        }
        if (html.substr(i).starts_with("<!--")) {
            const auto end = html.find("-->", i + 4);
            i = end == std::string_view::npos ? n : end + 3;
            continue;
        }
        if (i + 1 < n && (html[i + 1] == '!' || html[i + 1] == '?')) {
            const auto end = html.find('>', i + 2);
            i = end == std::string_view::npos ? n : end + 1;
            continue;
        }
        const bool closing = i + 1 < n && html[i + 1] == '/';
        const std::size_t name_start = i + (closing ? 2 : 1);
        if (name_start >= n || !detail::is_ascii_alpha(html[name_start])) {
            raw.push_back(c);
            ++i;
            continue;
        }
        std::size_t name_end = name_start;
        while (name_end < n && (std::isalnum(static_cast<unsigned char>(html[name_end])) || html[name_end] == '-' ||
                                html[name_end] == ':')) {
            ++name_end;
        }
        const auto name = html.substr(name_start, name_end - name_start);
        // Skip to the tag's closing '>' honoring quoted attribute values.
        std::size_t j = name_end;
        char quote = 0;
        bool self_closing = false;
        while (j < n) {
            const char d = html[j];
            if (quote) {
                if (d == quote) quote = 0;
            } else if (d == '"' || d == '\'') {
                quote = d;
            } else if (d == '>') {
                self_closing = j > name_end && html[j - 1] == '/';
                break;
            }
            ++j;
        }
        i = j < n ? j + 1 : n;
        if (detail::is_block_element(name)) raw.push_back(' ');
        if (!closing && !self_closing && detail::is_raw_text_element(name)) {
            // Skip raw text up to the matching end tag (case-insensitive).
            std::size_t k = i;
            while (k < n) {
                const auto lt = html.find("</", k);
                if (lt == std::string_view::npos) {
                    k = n;
                    break;
                }
                const auto candidate = html.substr(lt + 2, name.size());
                if (detail::ascii_iequals(candidate, name)) {
                    const auto gt = html.find('>', lt);
                    k = gt == std::string_view::npos ? n : gt + 1;
                    break;
                }
                k = lt + 2;
            }
            i = k;
            raw.push_back(' ');
        }
    }
    return detail::clean_text(detail::decode_html_entities(raw));
}

// ---------------------------------------------------------------------------
// File naming

/// Scheme stripped, every character outside [A-Za-z0-9.-] replaced by '_', ".txt" appended.
inline std::string url_to_filename(std::string_view url) {
    const auto scheme = url.find("://");
    if (scheme != std::string_view::npos) url.remove_prefix(scheme + 3);
    std::string out;
    out.reserve(url.size() + 4);
    std::size_t pos = 0;
    while (pos < url.size()) {
        const std::size_t start = pos;
        utf8::next(url, pos);
        const char c = url[start];
        const bool keep = pos - start == 1 &&
                          ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '.' || c == '-');
        out.push_back(keep ? c : '_');
    }
    if (out.empty()) out = "_";
    return out + ".txt";
}

/// Assigns collision-free file names: the first URL claiming a base name keeps it, later
/// distinct URLs get an 8-hex FNV-1a hash of the full URL appended before the suffix.
/// Thread-safe.
class FilenameAllocator {
public:
    std::string assign(const std::string& url) {
        std::lock_guard lock(mutex_);
        if (auto it = by_url_.find(url); it != by_url_.end()) return it->second;
        auto name = url_to_filename(url);
        if (owners_.contains(name)) {
            const auto stem = name.substr(0, name.size() - 4);
            name = stem + "_" + hash::hex32(hash::fnv1a32(url)) + ".txt";
            for (int extra = 2; owners_.contains(name); ++extra) {
                name = stem + "_" + hash::hex32(hash::fnv1a32(url)) + "_" + std::to_string(extra) + ".txt";
            }
        }
        owners_.emplace(name, url);
        by_url_.emplace(url, name);
        return name;
    }

private:
    std::mutex mutex_;
    std::unordered_map<std::string, std::string> owners_;
    std::unordered_map<std::string, std::string> by_url_;
};

inline std::string document_id_from_filename(std::string_view filename) {
    if (filename.ends_with(".txt")) filename.remove_suffix(4);
    return std::string(filename);
}

// ---------------------------------------------------------------------------
// Fetching

struct FetchResponse {
    int status = 0;
    std::string content_type;
    std::string body;
};

/// Transport-level failure (timeout, connection refused).
class FetchError : public Error {
public:
    FetchError(const std::string& what, bool timeout) : Error(what), timeout_(timeout) {}
    bool timeout() const noexcept { return timeout_; }

private:
    bool timeout_;
};

class Fetcher {
public:
    virtual ~Fetcher() = default;
    virtual FetchResponse fetch(const std::string& url, std::chrono::milliseconds timeout) = 0;
};

inline std::string content_type_for_path(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
    if (ext == ".xml") return "application/xml";
    if (ext == ".txt") return "text/plain; charset=utf-8";
    if (ext == ".pdf") return "application/pdf";
    return "application/octet-stream";
}

/// Serves URLs from a local directory: the URL path (host ignored) is resolved under `root`;
/// directories resolve to index.html. Missing files answer 404.
class DirectoryFetcher : public Fetcher {
public:
    explicit DirectoryFetcher(std::filesystem::path root) : root_(std::move(root)) {}

    FetchResponse fetch(const std::string& url, std::chrono::milliseconds) override {
        ++calls_;
        auto rest = std::string_view(url);
        if (const auto scheme = rest.find("://"); scheme != std::string_view::npos) rest.remove_prefix(scheme + 3);
        const auto slash = rest.find('/');
        std::string path = slash == std::string_view::npos ? std::string() : std::string(rest.substr(slash + 1));
        path = path.substr(0, path.find_first_of("?#"));
        if (path.find("..") != std::string::npos) return {403, "text/plain", "forbidden"};
        auto file = root_ / path;
        std::error_code ec;
        if (path.empty() || path.back() == '/' || std::filesystem::is_directory(file, ec)) file /= "index.html";
        std::ifstream in(file, std::ios::binary);
        if (!in) return {404, "text/plain", "not found"};
        std::ostringstream body;
        body << in.rdbuf();
        return {200, content_type_for_path(file), body.str()};
    }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    std::filesystem::path root_;
    std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRow {
    std::string url;
    std::string filename;
    std::string status;
    std::size_t bytes = 0;
    std::int64_t fetched_at = 0;
};

namespace detail {

inline std::string tsv_field(std::string_view value) {
    std::string out(value);
    std::replace_if(out.begin(), out.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
    return out;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
        if (tab == std::string_view::npos) break;
        start = tab + 1;
    }
    return fields;
}

} // namespace detail

inline constexpr std::string_view kManifestHeader = "url\tfilename\tstatus\tbytes\tfetched_at";

inline void write_manifest(const std::filesystem::path& file, const std::vector<ManifestRow>& rows) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw CrawlError("cannot write manifest " + file.string());
    out << kManifestHeader << '\n';
    for (const auto& row : rows) {
        out << detail::tsv_field(row.url) << '\t' << detail::tsv_field(row.filename) << '\t'
            << detail::tsv_field(row.status) << '\t' << row.bytes << '\t' << row.fetched_at << '\n';
    }
    if (!out) throw CrawlError("failed writing manifest " + file.string());
}

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("cannot open manifest " + file.string());
    std::vector<ManifestRow> rows;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        const auto fields = detail::split_tabs(line);
        if (fields.size() != 5) throw Error("malformed manifest row: " + line);
        rows.push_back({std::string(fields[0]), std::string(fields[1]), std::string(fields[2]),
                        static_cast<std::size_t>(std::stoull(std::string(fields[3]))),
                        static_cast<std::int64_t>(std::stoll(std::string(fields[4])))});
    }
    return rows;
}

/// Loads the "ok" documents of a crawled corpus directory, in manifest order.
inline std::vector<Document> load_corpus(const std::filesystem::path& dir) {
    std::vector<Document> docs;
    for (const auto& row : read_manifest(dir / "manifest.tsv")) {
        if (row.status != "ok") continue;
        std::ifstream in(dir / "docs" / row.filename, std::ios::binary);
        if (!in) throw Error("corpus file missing: " + row.filename);
        std::ostringstream text;
        text << in.rdbuf();
        docs.push_back({document_id_from_filename(row.filename), row.url, text.str(), row.fetched_at});
    }
    return docs;
}

// ---------------------------------------------------------------------------
// Crawl

inline std::int64_t unix_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

struct CrawlOptions {
    /// Seconds since the epoch, UTC. Injectable for reproducible manifests.
    std::function<std::int64_t()> clock = unix_now;
};

namespace detail {

inline bool is_textual_content_type(std::string_view content_type) {
    std::string lowered;
    for (char c : content_type) lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    const auto mime = std::string_view(lowered).substr(0, lowered.find(';'));
    return mime.empty() || trim(mime) == "text/html" || trim(mime) == "application/xhtml+xml" || trim(mime) == "text/plain";
}

inline bool is_retryable_status(int status) { return status >= 500 || status == 429; }

} // namespace detail

/// Breadth-first crawl of `seeds` (no in-page link following). Nested sitemaps are expanded at
/// the back of the queue. Each page is fetched at most once, cleaned with extract_text and
/// written to `<store_dir>/docs/<filename>`; `<store_dir>/manifest.tsv` records every attempted
/// URL. Stops after `limits.max_pages` successful page fetches. Returns documents in
/// completion order.
inline std::vector<Document> crawl(const std::vector<SitemapEntry>& seeds, Fetcher& fetcher, const CrawlLimits& limits,
                                   const std::filesystem::path& store_dir, const CrawlOptions& options = {}) {
    namespace fs = std::filesystem;
    limits.validate();
    if (seeds.empty()) throw CrawlError("crawl needs at least one seed URL");

    std::error_code ec;
    fs::create_directories(store_dir / "docs", ec);
    {
        std::ofstream probe(store_dir / "manifest.tsv", std::ios::binary | std::ios::trunc);
        if (ec || !probe) throw CrawlError("store directory is not writable: " + store_dir.string());
    }

    struct Item {
        SitemapEntry entry;
        bool seed = false;
    };

    std::mutex mutex;
    std::condition_variable cv;
    std::deque<Item> queue;
    std::unordered_set<std::string> seen;
    std::size_t ok_pages = 0;
    std::size_t pages_in_flight = 0;
    std::size_t in_flight = 0;
    std::size_t seed_failures = 0;
    std::size_t seed_count = 0;
    bool any_seed_ok = false;
    std::optional<std::string> fatal;
    std::vector<Document> documents;
    std::vector<ManifestRow> manifest;
    std::map<std::string, std::chrono::steady_clock::time_point> last_request;
    FilenameAllocator names;

    for (const auto& seed : seeds) {
        if (seen.insert(seed.url).second) {
            queue.push_back({seed, true});
            ++seed_count;
        }
    }

    auto fetch_with_retry = [&](const std::string& url) -> std::pair<std::optional<FetchResponse>, std::string> {
        std::string failure;
        for (unsigned attempt = 0; attempt <= limits.retry_count; ++attempt) {
            if (limits.politeness_delay.count() > 0) {
                std::chrono::steady_clock::time_point wake;
                {
                    std::lock_guard lock(mutex);
                    auto& last = last_request[url_host(url)];
                    const auto now = std::chrono::steady_clock::now();
                    wake = std::max(now, last + limits.politeness_delay);
                    last = wake;
                }
                std::this_thread::sleep_until(wake);
            }
            try {
                auto response = fetcher.fetch(url, limits.per_request_timeout);
                if (response.status >= 200 && response.status < 300) return {std::move(response), {}};
                failure = "failed:" + std::to_string(response.status);
                if (!detail::is_retryable_status(response.status)) break;
            } catch (const FetchError& e) {
                failure = e.timeout() ? "failed:timeout" : "failed:error";
            }
        }
        return {std::nullopt, failure};
    };

    auto worker = [&] {
        std::unique_lock lock(mutex);
        while (true) {
            cv.wait(lock, [&] {
                if (fatal || ok_pages >= limits.max_pages) return true;
                if (queue.empty()) return in_flight == 0;
                if (queue.front().entry.is_sitemap) return true;
                return ok_pages + pages_in_flight < limits.max_pages;
            });
            if (fatal || ok_pages >= limits.max_pages || queue.empty()) {
                cv.notify_all();
                return;
            }
            Item item = std::move(queue.front());
            queue.pop_front();
            const bool is_page = !item.entry.is_sitemap;
            ++in_flight;
            if (is_page) ++pages_in_flight;
            lock.unlock();

            auto [response, failure] = fetch_with_retry(item.entry.url);
            ManifestRow row{item.entry.url, "-", failure, 0, options.clock()};
            std::optional<Document> doc;
            std::vector<SitemapEntry> nested;
            std::optional<std::string> error;
            if (response) {
                if (item.entry.is_sitemap) {
                    try {
                        nested = parse_sitemap(response->body);
                        row.status = "sitemap";
                        row.bytes = response->body.size();
                    } catch (const ParseError& e) {
                        row.status = "failed:parse";
                    }
                } else if (!detail::is_textual_content_type(response->content_type)) {
                    row.status = "skipped:content-type";
                } else {
                    row.filename = names.assign(item.entry.url);
                    Document d{document_id_from_filename(row.filename), item.entry.url, extract_text(response->body),
                               row.fetched_at};
                    std::ofstream out(store_dir / "docs" / row.filename, std::ios::binary | std::ios::trunc);
                    out << d.text;
                    if (!out) {
                        error = "cannot write " + (store_dir / "docs" / row.filename).string();
                    } else {
                        row.status = "ok";
                        row.bytes = d.text.size();
                        doc = std::move(d);
                    }
                }
            }

            lock.lock();
            --in_flight;
            if (is_page) --pages_in_flight;
            if (error) fatal = error;
            const bool success = row.status == "ok" || row.status == "sitemap";
            if (item.seed) {
                if (success) {
                    any_seed_ok = true;
                } else {
                    ++seed_failures;
                }
            }
            for (auto& entry : nested) {
                if (seen.insert(entry.url).second) queue.push_back({std::move(entry), false});
            }
            if (doc) {
                ++ok_pages;
                documents.push_back(std::move(*doc));
            }
            manifest.push_back(std::move(row));
            cv.notify_all();
        }
    };

    {
        std::vector<std::jthread> workers;
        for (std::size_t i = 0; i < limits.max_concurrent_fetches; ++i) workers.emplace_back(worker);
    }

    write_manifest(store_dir / "manifest.tsv", manifest);
    if (fatal) throw CrawlError(*fatal);
    if (!any_seed_ok && seed_failures == seed_count) throw CrawlError("every seed URL failed to fetch");
    return documents;
}

} // namespace ragmark
