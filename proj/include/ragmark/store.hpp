#pragma once

// On-disk layout of vector tables and index directories.
//
// Vector table: magic "RMVT", u32 format version, u32 provider-id length + bytes, u32 count,
// then per entry u32 id length + id bytes + one vector record (u32 dim + float32 values).
//
// Index directory:
//   chunks.jsonl        one Chunk per line
//   vectors.bin         vector table in chunk order
//   bm25_postings.tsv   "term\tchunk_id\ttf", sorted by term then chunk_id
//   bm25_doclens.tsv    "chunk_id\tlength" in chunk order
//   index_meta.json     provider id, dim, BM25 parameters, counts

#include "ragmark/embed.hpp"
#include "ragmark/error.hpp"
#include "ragmark/retrieve.hpp"
#include "ragmark/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace ragmark {

inline constexpr std::string_view kVectorMagic = "RMVT";
inline constexpr std::uint32_t kVectorFormatVersion = 1;
inline constexpr int kIndexFormatVersion = 1;

struct VectorTable {
    std::string provider_id;
    std::vector<VectorEntry> entries;
};

inline std::string encode_vector_table(const VectorTable& table) {
    std::string out(kVectorMagic);
    detail::put_u32(out, kVectorFormatVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(table.provider_id.size()));
    out += table.provider_id;
    detail::put_u32(out, static_cast<std::uint32_t>(table.entries.size()));
    for (const auto& e : table.entries) {
        detail::put_u32(out, static_cast<std::uint32_t>(e.chunk_id.size()));
        out += e.chunk_id;
        append_vector_record(out, e.values);
    }
    return out;
}

inline VectorTable decode_vector_table(std::string_view bytes) {
    std::size_t pos = 0;
    auto fail = [&](const char* what) -> VectorTable { throw ParseError(std::string("vector table: ") + what, pos); };
    auto read_string = [&](std::string& s) {
        std::uint32_t len = 0;
        if (!detail::get_u32(bytes, pos, len) || bytes.size() - pos < len) return false;
        s.assign(bytes.substr(pos, len));
        pos += len;
        return true;
    };
    if (!bytes.starts_with(kVectorMagic)) return fail("bad magic");
    pos = kVectorMagic.size();
    std::uint32_t version = 0;
    if (!detail::get_u32(bytes, pos, version) || version != kVectorFormatVersion) return fail("unsupported version");
    VectorTable table;
    if (!read_string(table.provider_id)) return fail("truncated provider id");
    std::uint32_t count = 0;
    if (!detail::get_u32(bytes, pos, count)) return fail("truncated count");
    for (std::uint32_t i = 0; i < count; ++i) {
        VectorEntry e;
        if (!read_string(e.chunk_id)) return fail("truncated chunk id");
        if (!read_vector_record(bytes, pos, e.values)) return fail("truncated vector record");
        table.entries.push_back(std::move(e));
    }
    if (pos != bytes.size()) return fail("trailing bytes");
    return table;
}

inline void write_vector_table(const std::filesystem::path& file, const VectorTable& table) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    write_file_atomic(file, encode_vector_table(table));
}

inline VectorTable read_vector_table(const std::filesystem::path& file) { return decode_vector_table(read_file_bytes(file)); }

// ---------------------------------------------------------------------------
// Index directory

struct IndexMeta {
    std::string provider_id;
    std::size_t dim = 0;
    Bm25Params bm25;
    std::size_t chunk_count = 0;
};

struct LoadedIndex {
    HybridIndex index;
    IndexMeta meta;
};

/// Builds a hybrid index from chunks and a vector table keyed by chunk id.
inline LoadedIndex build_index(std::vector<Chunk> chunks, const VectorTable& table, Bm25Params params = {}) {
    std::unordered_map<std::string, const VectorEntry*> by_id;
    for (const auto& e : table.entries) by_id.emplace(e.chunk_id, &e);
    std::vector<EmbeddingVector> vectors;
    vectors.reserve(chunks.size());
    for (const auto& c : chunks) {
        auto it = by_id.find(c.chunk_id);
        if (it == by_id.end()) throw IndexError("no vector for chunk " + c.chunk_id);
        vectors.push_back({it->second->values, table.provider_id});
    }
    LoadedIndex out;
    out.meta = {table.provider_id, vectors.empty() ? 0 : vectors.front().dim(), params, chunks.size()};
    out.index = build_hybrid_index(std::move(chunks), vectors, params);
    return out;
}

inline void save_index(const std::filesystem::path& dir, const LoadedIndex& loaded) {
    std::filesystem::create_directories(dir);
    const auto& index = loaded.index;
    write_jsonl(dir / "chunks.jsonl", index.chunks.chunks());

    VectorTable table{loaded.meta.provider_id, index.vectors.entries()};
    write_vector_table(dir / "vectors.bin", table);

    const auto& ids = index.bm25.chunk_ids();
    std::vector<std::string> lines;
    for (const auto& [term, list] : index.bm25.postings()) {
        for (const auto& p : list) lines.push_back(term + '\t' + ids[p.doc] + '\t' + std::to_string(p.tf));
    }
    std::sort(lines.begin(), lines.end());
    std::string postings;
    for (const auto& l : lines) postings += l + '\n';
    write_file_atomic(dir / "bm25_postings.tsv", postings);

    std::string lengths;
    for (std::size_t i = 0; i < ids.size(); ++i) lengths += ids[i] + '\t' + std::to_string(index.bm25.doc_lengths()[i]) + '\n';
    write_file_atomic(dir / "bm25_doclens.tsv", lengths);

    const nlohmann::json meta{{"format_version", kIndexFormatVersion},
                              {"provider_id", loaded.meta.provider_id},
                              {"dim", loaded.meta.dim},
                              {"bm25_k1", loaded.meta.bm25.k1},
                              {"bm25_b", loaded.meta.bm25.b},
                              {"chunk_count", loaded.meta.chunk_count}};
    write_file_atomic(dir / "index_meta.json", meta.dump(2) + "\n");
}

namespace detail {

inline std::uint32_t parse_u32(std::string_view text, const std::string& where) {
    const std::string s(text);
    std::size_t used = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty() || v > 0xffffffffUL) throw IndexError("bad integer '" + s + "' in " + where);
    return static_cast<std::uint32_t>(v);
}

} // namespace detail

inline LoadedIndex load_index(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IndexError("index directory not found: " + dir.string());
    LoadedIndex out;
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file_bytes(dir / "index_meta.json"));
        out.meta.provider_id = meta.at("provider_id").get<std::string>();
        out.meta.dim = meta.at("dim").get<std::size_t>();
        out.meta.bm25 = {meta.at("bm25_k1").get<double>(), meta.at("bm25_b").get<double>()};
        out.meta.chunk_count = meta.at("chunk_count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IndexError(std::string("bad index_meta.json: ") + e.what());
    }

    auto chunks = read_jsonl_as<Chunk>(dir / "chunks.jsonl");
    if (chunks.size() != out.meta.chunk_count) throw IndexError("chunk count disagrees with index_meta.json");

    const auto table = read_vector_table(dir / "vectors.bin");
    if (table.provider_id != out.meta.provider_id) throw IndexError("vector table provider disagrees with index_meta.json");

    std::vector<std::string> ids;
    std::vector<std::uint32_t> lengths;
    std::unordered_map<std::string, std::uint32_t> position;
    {
        std::istringstream in(read_file_bytes(dir / "bm25_doclens.tsv"));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = detail::split_tabs(line);
            if (f.size() != 2) throw IndexError("bad line in bm25_doclens.tsv: " + line);
            position.emplace(std::string(f[0]), static_cast<std::uint32_t>(ids.size()));
            ids.emplace_back(f[0]);
            lengths.push_back(detail::parse_u32(f[1], "bm25_doclens.tsv"));
        }
    }
    std::unordered_map<std::string, std::vector<Posting>> postings;
    {
        std::istringstream in(read_file_bytes(dir / "bm25_postings.tsv"));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = detail::split_tabs(line);
            if (f.size() != 3) throw IndexError("bad line in bm25_postings.tsv: " + line);
            auto it = position.find(std::string(f[1]));
            if (it == position.end()) throw IndexError("posting references unknown chunk " + std::string(f[1]));
            postings[std::string(f[0])].push_back({it->second, detail::parse_u32(f[2], "bm25_postings.tsv")});
        }
    }
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (i >= ids.size() || ids[i] != chunks[i].chunk_id) throw IndexError("bm25_doclens.tsv out of step with chunks.jsonl");
    }

    std::vector<VectorEntry> entries = table.entries;
    out.index.bm25 = Bm25Index::from_parts(std::move(ids), std::move(lengths), std::move(postings), out.meta.bm25);
    out.index.vectors = VectorIndex(std::move(entries), out.meta.dim);
    out.index.chunks = ChunkStore(std::move(chunks));
    if (out.index.vectors.size() != out.index.chunks.size()) throw IndexError("vector count disagrees with chunk count");
    return out;
}

/// The embedder used for queries must be the one that produced the index vectors.
inline void check_provider(const IndexMeta& meta, const Embedder& embedder) {
    if (embedder.provider_id() != meta.provider_id) {
        throw IndexError("index was built with provider '" + meta.provider_id + "' but queries use '" +
                         embedder.provider_id() + "'");
    }
}

} // namespace ragmark
