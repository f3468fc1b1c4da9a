#pragma once

// Key-value configuration file: one `key = value` per line, `#` starts a comment
// line, surrounding whitespace is trimmed, later keys override earlier ones.

#include "ragmark/error.hpp"
#include "ragmark/text.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

namespace ragmark {

class Config {
public:
    Config() = default;

    static Config parse(std::string_view content, const std::string& origin = "<config>") {
        Config cfg;
        std::size_t line_no = 0;
        std::size_t pos = 0;
        while (pos <= content.size()) {
            auto nl = content.find('\n', pos);
            if (nl == std::string_view::npos) nl = content.size();
            const auto line = trim(content.substr(pos, nl - pos));
            pos = nl + 1;
            ++line_no;
            if (line.empty() || line.front() == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) {
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
            }
            const auto key = trim(line.substr(0, eq));
            if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            cfg.values_[std::string(key)] = std::string(trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    static Config load(const std::filesystem::path& file) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw ConfigError("cannot read config file " + file.string());
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return parse(content, file.string());
    }

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    bool contains(const std::string& key) const { return values_.contains(key); }

    std::optional<std::string> get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    std::string get_or(const std::string& key, std::string fallback) const { return get(key).value_or(std::move(fallback)); }

    double get_double(const std::string& key, double fallback) const {
        auto v = get(key);
        if (!v) return fallback;
        double out = 0.0;
        auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
        if (ec != std::errc{} || p != v->data() + v->size()) throw ConfigError("config key " + key + " is not a number: " + *v);
        return out;
    }

    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
        auto v = get(key);
        if (!v) return fallback;
        std::uint64_t out = 0;
        auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
        if (ec != std::errc{} || p != v->data() + v->size()) {
            throw ConfigError("config key " + key + " is not a non-negative integer: " + *v);
        }
        return out;
    }

    const std::map<std::string, std::string>& values() const noexcept { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace ragmark
