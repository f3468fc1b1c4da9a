#pragma once

// Text embeddings: provider interface, an offline hashed bag-of-words provider,
// a content-addressed on-disk cache and vector arithmetic.

#include "ragmark/error.hpp"
#include "ragmark/hash.hpp"
#include "ragmark/text.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace ragmark {

struct EmbeddingVector {
    std::vector<float> values;
    std::string provider_id;

    std::size_t dim() const noexcept { return values.size(); }
};

inline double l2_norm(std::span<const float> v) {
    double sum = 0.0;
    for (float x : v) sum += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(sum);
}

inline double dot(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return sum;
}

/// (u.v) / (|u||v|), clamped to [-1, 1]. Throws on dimension mismatch or a zero vector.
inline double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) {
        throw EmbedError("cosine: dimension mismatch (" + std::to_string(u.size()) + " vs " + std::to_string(v.size()) + ")");
    }
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    if (nu == 0.0 || nv == 0.0) throw EmbedError("cosine: zero vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

inline double cosine(const EmbeddingVector& u, const EmbeddingVector& v) { return cosine(u.values, v.values); }

/// Scales to unit length in place. Throws on zero or non-finite input.
inline void normalize_l2(std::vector<float>& v) {
    for (float x : v) {
        if (!std::isfinite(x)) throw EmbedError("embedding contains a non-finite value");
    }
    const double norm = l2_norm(v);
    if (norm == 0.0) throw EmbedError("cannot normalize a zero embedding");
    for (float& x : v) x = static_cast<float>(static_cast<double>(x) / norm);
}

inline std::string deterministic_provider_id(std::size_t dim, std::uint64_t seed) {
    return "deterministic:d" + std::to_string(dim) + ":s" + std::to_string(seed);
}

/// Hashed bag-of-words embedding for offline use. Each normalized term lands in bucket
/// hash(seed, term) % dim with sign from an independent hash; the count vector is L2-normalized.
/// Text without terms maps to the unit vector on axis 0.
inline EmbeddingVector deterministic_embed(std::string_view text, std::size_t dim, std::uint64_t seed) {
    if (dim < 8) throw EmbedError("deterministic_embed: dim must be at least 8");
    std::vector<double> counts(dim, 0.0);
    bool any = false;
    for (const auto& term : terms(text)) {
        const auto bucket = hash::seeded64(term, seed) % dim;
        const double sign = (hash::seeded64(term, seed ^ 0x5bd1e9955bd1e995ull) & 1u) ? 1.0 : -1.0;
        counts[bucket] += sign;
        any = true;
    }
    EmbeddingVector out{std::vector<float>(dim, 0.0f), deterministic_provider_id(dim, seed)};
    double norm = 0.0;
    for (double c : counts) norm += c * c;
    norm = std::sqrt(norm);
    if (!any || norm == 0.0) {
        out.values[0] = 1.0f;
        return out;
    }
    for (std::size_t i = 0; i < dim; ++i) out.values[i] = static_cast<float>(counts[i] / norm);
    return out;
}

// ---------------------------------------------------------------------------
// Providers

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string id() const = 0;
    virtual std::size_t dim() const = 0;
    /// One raw (not necessarily normalized) vector per input, same order.
    virtual std::vector<std::vector<float>> embed_batch(const std::vector<std::string>& texts) = 0;
};

class DeterministicProvider : public EmbeddingProvider {
public:
    explicit DeterministicProvider(std::size_t dim = 256, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}

    std::string id() const override { return deterministic_provider_id(dim_, seed_); }
    std::size_t dim() const override { return dim_; }

    std::vector<std::vector<float>> embed_batch(const std::vector<std::string>& texts) override {
        ++calls_;
        std::vector<std::vector<float>> out;
        out.reserve(texts.size());
        for (const auto& text : texts) out.push_back(deterministic_embed(text, dim_, seed_).values);
        return out;
    }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    std::size_t dim_;
    std::uint64_t seed_;
    std::atomic<std::size_t> calls_{0};
};

enum class ProviderKind { http_api, deterministic_test };

struct EmbeddingProviderSpec {
    ProviderKind kind = ProviderKind::deterministic_test;
    std::string model_name = "hashed-bow";
    std::string endpoint;
    std::size_t dim = 256;
    std::uint64_t seed = 0;

    void validate() const {
        if (dim == 0) throw ConfigError("embedding dim must be positive");
        if (kind == ProviderKind::http_api && endpoint.empty()) throw ConfigError("http embedding provider needs an endpoint");
    }
};

// ---------------------------------------------------------------------------
// Binary vector records: u32 little-endian dim, then dim little-endian float32.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline bool get_u32(std::string_view in, std::size_t& pos, std::uint32_t& v) {
    if (pos > in.size() || in.size() - pos < 4) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return true;
}

} // namespace detail

inline void append_vector_record(std::string& out, std::span<const float> values) {
    detail::put_u32(out, static_cast<std::uint32_t>(values.size()));
    for (float x : values) detail::put_u32(out, std::bit_cast<std::uint32_t>(x));
}

inline bool read_vector_record(std::string_view in, std::size_t& pos, std::vector<float>& values) {
    std::uint32_t dim = 0;
    if (!detail::get_u32(in, pos, dim)) return false;
    if ((in.size() - pos) / 4 < dim) return false;
    values.resize(dim);
    for (auto& x : values) {
        std::uint32_t bits = 0;
        detail::get_u32(in, pos, bits);
        x = std::bit_cast<float>(bits);
    }
    return true;
}

inline std::string read_file_bytes(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("cannot open " + file.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Writes via a uniquely named temporary and rename, so concurrent writers never expose a
/// partial file.
inline void write_file_atomic(const std::filesystem::path& file, std::string_view bytes) {
    static std::atomic<std::uint64_t> counter{0};
    auto tmp = file;
    tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + "." +
           std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("cannot write " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, file, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error("cannot rename into " + file.string());
    }
}

/// Content-addressed store: one file per (provider id, text), named by SHA-256.
class EmbeddingCache {
public:
    explicit EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw EmbedError("cannot create cache directory " + dir_.string());
    }

    static std::string key(std::string_view provider_id, std::string_view text) {
        std::string material(provider_id);
        material.push_back('\0');
        material.append(text);
        return hash::sha256_hex(material);
    }

    std::filesystem::path path_for(std::string_view provider_id, std::string_view text) const {
        return dir_ / (key(provider_id, text) + ".vec");
    }

    std::optional<std::vector<float>> get(std::string_view provider_id, std::string_view text) const {
        const auto file = path_for(provider_id, text);
        std::error_code ec;
        if (!std::filesystem::exists(file, ec)) return std::nullopt;
        const auto bytes = read_file_bytes(file);
        std::size_t pos = 0;
        std::vector<float> values;
        if (!read_vector_record(bytes, pos, values) || pos != bytes.size()) return std::nullopt;
        return values;
    }

    void put(std::string_view provider_id, std::string_view text, std::span<const float> values) const {
        std::string bytes;
        append_vector_record(bytes, values);
        write_file_atomic(path_for(provider_id, text), bytes);
    }

    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
};

struct EmbedOptions {
    std::size_t batch_size = 32;
    unsigned retries = 2;
};

/// One L2-normalized vector per input text, in input order. Cached texts skip the provider;
/// misses are fetched in batches, normalized and written back.
inline std::vector<EmbeddingVector> embed_texts(const std::vector<std::string>& texts, EmbeddingProvider& provider,
                                                const EmbeddingCache* cache, const EmbedOptions& options = {}) {
    if (texts.empty()) throw EmbedError("embed_texts: no input texts");
    const auto provider_id = provider.id();
    const auto dim = provider.dim();
    std::vector<std::optional<std::vector<float>>> found(texts.size());
    std::vector<std::string> misses;
    std::unordered_map<std::string, std::size_t> miss_index;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (cache) {
            auto hit = cache->get(provider_id, texts[i]);
            if (hit && hit->size() == dim) {
                found[i] = std::move(hit);
                continue;
            }
        }
        if (miss_index.emplace(texts[i], misses.size()).second) misses.push_back(texts[i]);
    }

    std::vector<std::vector<float>> fetched(misses.size());
    const std::size_t batch_size = std::max<std::size_t>(1, options.batch_size);
    for (std::size_t begin = 0; begin < misses.size(); begin += batch_size) {
        const std::size_t end = std::min(misses.size(), begin + batch_size);
        const std::vector<std::string> batch(misses.begin() + static_cast<std::ptrdiff_t>(begin),
                                             misses.begin() + static_cast<std::ptrdiff_t>(end));
        const auto batch_label = "batch " + std::to_string(begin / batch_size) + " (texts " + std::to_string(begin) +
                                 ".." + std::to_string(end - 1) + ")";
        std::vector<std::vector<float>> result;
        std::string last_error;
        bool ok = false;
        for (unsigned attempt = 0; attempt <= options.retries && !ok; ++attempt) {
            try {
                result = provider.embed_batch(batch);
                ok = true;
            } catch (const std::exception& e) {
                last_error = e.what();
            }
        }
        if (!ok) throw EmbedError("embedding provider failed on " + batch_label + ": " + last_error);
        if (result.size() != batch.size()) {
            throw EmbedError("embedding provider returned " + std::to_string(result.size()) + " vectors for " +
                             std::to_string(batch.size()) + " inputs in " + batch_label);
        }
        for (std::size_t j = 0; j < result.size(); ++j) {
            if (result[j].size() != dim) {
                throw EmbedError("embedding dimension mismatch: provider returned " + std::to_string(result[j].size()) +
                                 ", expected " + std::to_string(dim));
            }
            normalize_l2(result[j]);
            if (cache) cache->put(provider_id, batch[j], result[j]);
            fetched[begin + j] = std::move(result[j]);
        }
    }

    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        auto values = found[i] ? std::move(*found[i]) : fetched[miss_index.at(texts[i])];
        out.push_back({std::move(values), provider_id});
    }
    return out;
}

/// Provider + optional cache + query prefix, the handle the retrieval and metric code uses.
class Embedder {
public:
    Embedder(std::shared_ptr<EmbeddingProvider> provider, std::shared_ptr<EmbeddingCache> cache = nullptr,
             EmbedOptions options = {}, std::string query_prefix = {})
        : provider_(std::move(provider)), cache_(std::move(cache)), options_(options),
          query_prefix_(std::move(query_prefix)) {}

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) const {
        return embed_texts(texts, *provider_, cache_.get(), options_);
    }

    EmbeddingVector embed_one(const std::string& text) const { return embed({text}).front(); }

    /// Queries are embedded verbatim unless a prefix (e.g. an instruction string) is configured.
    EmbeddingVector embed_query(const std::string& query) const { return embed_one(query_prefix_ + query); }

    std::size_t dim() const { return provider_->dim(); }
    std::string provider_id() const { return provider_->id(); }
    EmbeddingProvider& provider() const { return *provider_; }

private:
    std::shared_ptr<EmbeddingProvider> provider_;
    std::shared_ptr<EmbeddingCache> cache_;
    EmbedOptions options_;
    std::string query_prefix_;
};

} // namespace ragmark
