#pragma once

// Hybrid retrieval: exact cosine vector search, Okapi BM25 and weighted
// reciprocal-rank fusion of the two rankings.

#include "ragmark/chunk.hpp"
#include "ragmark/embed.hpp"
#include "ragmark/error.hpp"
#include "ragmark/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace ragmark {

enum class RankSource { bm25, vector, fused };

inline std::string_view to_string(RankSource s) {
    switch (s) {
    case RankSource::bm25: return "bm25";
    case RankSource::vector: return "vector";
    case RankSource::fused: return "fused";
    }
    return "?";
}

struct RankedItem {
    std::string chunk_id;
    double score = 0.0;

    friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

/// Scores non-increasing, ties by ascending chunk_id.
struct RankedList {
    std::vector<RankedItem> items;
    RankSource source = RankSource::fused;

    std::size_t size() const noexcept { return items.size(); }
    bool empty() const noexcept { return items.empty(); }
};

inline bool ranks_before(const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.chunk_id < b.chunk_id;
}

namespace detail {

inline void keep_top_k(std::vector<RankedItem>& items, std::size_t k) {
    if (items.size() > k) {
        std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(k), items.end(), ranks_before);
        items.resize(k);
    } else {
        std::sort(items.begin(), items.end(), ranks_before);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Chunk store

class ChunkStore {
public:
    ChunkStore() = default;
    explicit ChunkStore(std::vector<Chunk> chunks) : chunks_(std::move(chunks)) {
        for (std::size_t i = 0; i < chunks_.size(); ++i) {
            if (!by_id_.emplace(chunks_[i].chunk_id, i).second) throw IndexError("duplicate chunk id " + chunks_[i].chunk_id);
        }
    }

    const std::vector<Chunk>& chunks() const noexcept { return chunks_; }
    std::size_t size() const noexcept { return chunks_.size(); }

    const Chunk& at(const std::string& chunk_id) const {
        auto it = by_id_.find(chunk_id);
        if (it == by_id_.end()) throw IndexError("unknown chunk id " + chunk_id);
        return chunks_[it->second];
    }

    bool contains(const std::string& chunk_id) const { return by_id_.contains(chunk_id); }

private:
    std::vector<Chunk> chunks_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

// ---------------------------------------------------------------------------
// Vector index

struct VectorEntry {
    std::string chunk_id;
    std::vector<float> values;
};

/// Exact inner-product index over L2-normalized vectors.
class VectorIndex {
public:
    VectorIndex() = default;

    VectorIndex(std::vector<VectorEntry> entries, std::size_t dim) : entries_(std::move(entries)), dim_(dim) {
        if (dim_ == 0) throw IndexError("vector index dim must be positive");
        std::unordered_set<std::string> ids;
        for (const auto& e : entries_) {
            if (e.values.size() != dim_) throw IndexError("vector for " + e.chunk_id + " has wrong dimension");
            if (!ids.insert(e.chunk_id).second) throw IndexError("duplicate chunk id " + e.chunk_id);
        }
    }

    const std::vector<VectorEntry>& entries() const noexcept { return entries_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::vector<VectorEntry> entries_;
    std::size_t dim_ = 0;
};

/// Exact top-k by inner product, ties by chunk_id.
inline RankedList vector_search(const VectorIndex& index, std::span<const float> query, std::size_t k) {
    if (query.size() != index.dim()) {
        throw IndexError("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                         std::to_string(index.dim()));
    }
    RankedList out{{}, RankSource::vector};
    out.items.reserve(index.size());
    for (const auto& e : index.entries()) out.items.push_back({e.chunk_id, dot(e.values, query)});
    detail::keep_top_k(out.items, k);
    return out;
}

inline RankedList vector_search(const VectorIndex& index, const EmbeddingVector& query, std::size_t k) {
    return vector_search(index, std::span<const float>(query.values), k);
}

// ---------------------------------------------------------------------------
// BM25

struct Bm25Params {
    double k1 = 1.5;
    double b = 0.75;
};

struct Posting {
    std::uint32_t doc = 0;
    std::uint32_t tf = 0;
};

/// Inverted index over lowercased, punctuation-free terms. Documents are addressed internally
/// by position in `chunk_ids()`.
class Bm25Index {
public:
    Bm25Index() = default;

    const std::vector<std::string>& chunk_ids() const noexcept { return chunk_ids_; }
    const std::vector<std::uint32_t>& doc_lengths() const noexcept { return doc_lengths_; }
    const std::unordered_map<std::string, std::vector<Posting>>& postings() const noexcept { return postings_; }
    double avg_doc_length() const noexcept { return avg_doc_length_; }
    std::size_t doc_count() const noexcept { return chunk_ids_.size(); }
    const Bm25Params& params() const noexcept { return params_; }

    const std::vector<Posting>* postings_for(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? nullptr : &it->second;
    }

    /// Assembles an index from raw parts (used when loading from disk). Validates consistency.
    static Bm25Index from_parts(std::vector<std::string> chunk_ids, std::vector<std::uint32_t> doc_lengths,
                                std::unordered_map<std::string, std::vector<Posting>> postings, Bm25Params params) {
        if (chunk_ids.empty()) throw IndexError("BM25 index needs at least one chunk");
        if (chunk_ids.size() != doc_lengths.size()) throw IndexError("BM25 doc length table size mismatch");
        Bm25Index index;
        index.chunk_ids_ = std::move(chunk_ids);
        index.doc_lengths_ = std::move(doc_lengths);
        index.postings_ = std::move(postings);
        index.params_ = params;
        std::vector<std::uint64_t> totals(index.chunk_ids_.size(), 0);
        for (auto& [term, list] : index.postings_) {
            std::sort(list.begin(), list.end(), [](const Posting& a, const Posting& b) { return a.doc < b.doc; });
            for (const auto& p : list) {
                if (p.doc >= totals.size() || p.tf == 0) throw IndexError("BM25 posting out of range for term " + term);
                totals[p.doc] += p.tf;
            }
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < totals.size(); ++i) {
            if (totals[i] != index.doc_lengths_[i]) throw IndexError("BM25 postings disagree with doc length of " + index.chunk_ids_[i]);
            sum += index.doc_lengths_[i];
        }
        index.avg_doc_length_ = sum / static_cast<double>(index.doc_lengths_.size());
        return index;
    }

private:
    std::vector<std::string> chunk_ids_;
    std::vector<std::uint32_t> doc_lengths_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    double avg_doc_length_ = 0.0;
    Bm25Params params_;
};

inline Bm25Index bm25_build(const std::vector<Chunk>& chunks, Bm25Params params = {}) {
    if (chunks.empty()) throw IndexError("bm25_build: empty chunk list");
    if (!(params.k1 > 0.0) || params.b < 0.0 || params.b > 1.0) throw ConfigError("BM25 needs k1 > 0 and b in [0,1]");
    std::vector<std::string> ids;
    std::vector<std::uint32_t> lengths;
    std::unordered_map<std::string, std::vector<Posting>> postings;
    for (std::uint32_t doc = 0; doc < chunks.size(); ++doc) {
        ids.push_back(chunks[doc].chunk_id);
        std::map<std::string, std::uint32_t> tf;
        std::uint32_t length = 0;
        for (auto& term : terms(chunks[doc].text)) {
            ++tf[std::move(term)];
            ++length;
        }
        lengths.push_back(length);
        for (auto& [term, count] : tf) postings[term].push_back({doc, count});
    }
    return Bm25Index::from_parts(std::move(ids), std::move(lengths), std::move(postings), params);
}

/// ln(1 + (N - df + 0.5) / (df + 0.5)); non-negative for every df in [0, N].
inline double bm25_idf(std::size_t doc_count, std::size_t df) {
    const double n = static_cast<double>(doc_count);
    const double d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

/// Okapi BM25 summed over the query's terms (repeated query terms count repeatedly). Returns the
/// top-k chunks with positive score.
inline RankedList bm25_score(const Bm25Index& index, std::string_view query, std::size_t k) {
    RankedList out{{}, RankSource::bm25};
    if (index.doc_count() == 0 || k == 0) return out;
    const auto& p = index.params();
    std::vector<double> scores(index.doc_count(), 0.0);
    std::vector<bool> touched(index.doc_count(), false);
    for (const auto& term : terms(query)) {
        const auto* list = index.postings_for(term);
        if (!list) continue;
        const double idf = bm25_idf(index.doc_count(), list->size());
        for (const auto& posting : *list) {
            const double tf = posting.tf;
            const double len = index.doc_lengths()[posting.doc];
            const double norm = p.k1 * (1.0 - p.b + p.b * len / index.avg_doc_length());
            scores[posting.doc] += idf * tf * (p.k1 + 1.0) / (tf + norm);
            touched[posting.doc] = true;
        }
    }
    for (std::size_t doc = 0; doc < scores.size(); ++doc) {
        if (touched[doc] && scores[doc] > 0.0) out.items.push_back({index.chunk_ids()[doc], scores[doc]});
    }
    detail::keep_top_k(out.items, k);
    return out;
}

// ---------------------------------------------------------------------------
// Fusion

struct FusionParams {
    double weight_a = 0.5;
    double weight_b = 0.5;
    double rrf_c = 60.0;
};

/// Weighted reciprocal-rank fusion: score = w_a/(c + rank_a) + w_b/(c + rank_b), 1-based ranks,
/// absent items contribute nothing. Items whose fused score is zero are dropped.
inline RankedList fuse(const RankedList& a, const RankedList& b, double weight_a, double weight_b, double rrf_c) {
    if (weight_a < 0.0 || weight_b < 0.0 || !(weight_a + weight_b > 0.0)) {
        throw ConfigError("fusion weights must be non-negative with a positive sum");
    }
    if (!(rrf_c > 0.0)) throw ConfigError("rrf constant must be positive");
    std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> ranks;
    for (std::size_t i = 0; i < a.items.size(); ++i) ranks.try_emplace(a.items[i].chunk_id, 0, 0).first->second.first = i + 1;
    for (std::size_t i = 0; i < b.items.size(); ++i) ranks.try_emplace(b.items[i].chunk_id, 0, 0).first->second.second = i + 1;
    RankedList out{{}, RankSource::fused};
    out.items.reserve(ranks.size());
    for (const auto& [id, r] : ranks) {
        double score = 0.0;
        if (r.first) score += weight_a / (rrf_c + static_cast<double>(r.first));
        if (r.second) score += weight_b / (rrf_c + static_cast<double>(r.second));
        if (score > 0.0) out.items.push_back({id, score});
    }
    std::sort(out.items.begin(), out.items.end(), ranks_before);
    return out;
}

inline RankedList fuse(const RankedList& a, const RankedList& b, const FusionParams& params = {}) {
    return fuse(a, b, params.weight_a, params.weight_b, params.rrf_c);
}

// ---------------------------------------------------------------------------
// Hybrid retrieval

/// Both indices over the same chunk set.
struct HybridIndex {
    ChunkStore chunks;
    Bm25Index bm25;
    VectorIndex vectors;
};

inline HybridIndex build_hybrid_index(std::vector<Chunk> chunks, const std::vector<EmbeddingVector>& vectors,
                                      Bm25Params params = {}) {
    if (chunks.size() != vectors.size()) throw IndexError("chunk and vector counts differ");
    if (chunks.empty()) throw IndexError("cannot index an empty chunk list");
    std::vector<VectorEntry> entries;
    entries.reserve(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) entries.push_back({chunks[i].chunk_id, vectors[i].values});
    auto bm25 = bm25_build(chunks, params);
    const auto dim = vectors.front().dim();
    return {ChunkStore(std::move(chunks)), std::move(bm25), VectorIndex(std::move(entries), dim)};
}

struct RetrievalResult {
    std::string query;
    std::size_t k = 0;
    RankedList fused{{}, RankSource::fused};
    RankedList bm25{{}, RankSource::bm25};
    RankedList vector{{}, RankSource::vector};
    /// Texts of the fused top-k chunks, in rank order.
    std::vector<std::string> contexts;
    /// `contexts` joined by blank lines.
    std::string context_text;
};

struct RetrieveOptions {
    FusionParams fusion;
    /// Pins the BM25 candidate count (e.g. 5) independently of k.
    std::optional<std::size_t> bm25_k;
};

inline constexpr std::string_view kContextSeparator = "\n\n";

inline RetrievalResult retrieve(const std::string& query, std::size_t k, const HybridIndex& index,
                                const Embedder& embedder, const RetrieveOptions& options = {}) {
    if (k == 0) throw ConfigError("retrieve: k must be positive");
    RetrievalResult result;
    result.query = query;
    result.k = k;
    result.bm25 = bm25_score(index.bm25, query, options.bm25_k.value_or(k));
    result.vector = vector_search(index.vectors, embedder.embed_query(query), k);
    result.fused = fuse(result.bm25, result.vector, options.fusion);
    if (result.fused.items.size() > k) result.fused.items.resize(k);
    for (const auto& item : result.fused.items) {
        result.contexts.push_back(index.chunks.at(item.chunk_id).text);
        if (result.contexts.size() > 1) result.context_text += kContextSeparator;
        result.context_text += result.contexts.back();
    }
    return result;
}

} // namespace ragmark
