#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "itercqr/common.hpp"
#include "itercqr/text.hpp"

namespace itercqr {

inline constexpr std::uint32_t kEmbeddingDim = 256;

using EmbeddingVector = std::vector<float>;

// Feature-hashing encoder: token unigrams plus adjacent bigrams, signed
// buckets, unit L2 norm. Pure function of the text bytes.
inline EmbeddingVector encode(const std::string& text, std::uint32_t dim = kEmbeddingDim) {
    if (dim == 0) {
        throw ValidationError("embedding dimension must be positive");
    }
    std::vector<std::string> tokens = tokenize(text);
    std::vector<double> acc(dim, 0.0);
    auto add_feature = [&](const std::string& f) {
        std::uint64_t h = fnv1a64(f);
        double sign = (h >> 63) ? -1.0 : 1.0;
        acc[h % dim] += sign;
    };
    for (const auto& t : tokens) {
        add_feature(t);
    }
    for (const auto& bg : token_ngrams(tokens, 2)) {
        add_feature(bg);
    }
    double norm_sq = 0.0;
    for (double v : acc) {
        norm_sq += v * v;
    }
    EmbeddingVector out(dim, 0.0f);
    if (norm_sq > 0.0) {
        double inv = 1.0 / std::sqrt(norm_sq);
        for (std::uint32_t i = 0; i < dim; ++i) {
            out[i] = static_cast<float>(acc[i] * inv);
        }
    }
    return out;
}

inline bool is_zero_vector(const EmbeddingVector& v) {
    for (float x : v) {
        if (x != 0.0f) {
            return false;
        }
    }
    return true;
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size()) {
        throw ValidationError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Embedding store: immutable after build, persisted little-endian.
// ---------------------------------------------------------------------------

struct EmbeddingStore {
    std::uint32_t dim = kEmbeddingDim;
    std::vector<float> matrix;  // row-major, rows() x dim
    std::map<std::string, std::uint64_t> id_to_row;

    std::uint64_t rows() const { return id_to_row.empty() ? matrix.size() / dim : id_to_row.size(); }

    bool has(const std::string& id) const { return id_to_row.count(id) != 0; }

    const float* row_ptr(const std::string& id) const {
        auto it = id_to_row.find(id);
        if (it == id_to_row.end()) {
            throw ValidationError("unknown embedding id: " + id);
        }
        return matrix.data() + it->second * dim;
    }

    EmbeddingVector vector_for(const std::string& id) const {
        const float* p = row_ptr(id);
        return EmbeddingVector(p, p + dim);
    }
};

template <typename PassageRange>
inline EmbeddingStore build_store(const PassageRange& passages, std::uint32_t dim = kEmbeddingDim) {
    EmbeddingStore store;
    store.dim = dim;
    std::uint64_t row = 0;
    for (const auto& p : passages) {
        if (!store.id_to_row.emplace(p.passage_id, row).second) {
            throw ValidationError("duplicate passage id in store: " + p.passage_id);
        }
        EmbeddingVector v = encode(p.text, dim);
        store.matrix.insert(store.matrix.end(), v.begin(), v.end());
        ++row;
    }
    return store;
}

namespace detail {

inline constexpr char kEmbMagic[8] = {'I', 'T', 'C', 'Q', 'E', 'M', 'B', '1'};

}  // namespace detail

inline void persist_store(const EmbeddingStore& store, const std::filesystem::path& path) {
    std::string out;
    out.append(detail::kEmbMagic, 8);
    detail::append_u32le(out, store.dim);
    detail::append_u64le(out, store.rows());
    for (float f : store.matrix) {
        detail::append_f32le(out, f);
    }
    json ids = json::object();
    for (const auto& [id, row] : store.id_to_row) {
        ids[id] = row;
    }
    out += ids.dump();
    write_file(path, out);
}

inline EmbeddingStore load_store(const std::filesystem::path& path) {
    std::string data = read_file(path);
    detail::ByteReader r{data, path.string()};
    r.require(8);
    if (std::memcmp(data.data(), detail::kEmbMagic, 8) != 0) {
        throw FormatError(path.string() + ": bad magic at byte offset 0");
    }
    r.offset = 8;
    EmbeddingStore store;
    store.dim = r.read_u32le();
    if (store.dim == 0) {
        throw FormatError(path.string() + ": zero dimension at byte offset 8");
    }
    std::uint64_t count = r.read_u64le();
    store.matrix.resize(count * store.dim);
    for (auto& f : store.matrix) {
        f = r.read_f32le();
    }
    json ids = json::parse(data.substr(r.offset), nullptr, false);
    if (ids.is_discarded() || !ids.is_object()) {
        throw FormatError(path.string() + ": bad id map at byte offset " + std::to_string(r.offset));
    }
    std::vector<bool> seen(count, false);
    for (const auto& [id, row] : ids.items()) {
        if (!row.is_number_unsigned() || row.get<std::uint64_t>() >= count) {
            throw FormatError(path.string() + ": row index out of range for id " + id);
        }
        std::uint64_t ri = row.get<std::uint64_t>();
        if (seen[ri]) {
            throw FormatError(path.string() + ": duplicate row index " + std::to_string(ri));
        }
        seen[ri] = true;
        store.id_to_row[id] = ri;
    }
    if (store.id_to_row.size() != count) {
        throw FormatError(path.string() + ": id map has " + std::to_string(store.id_to_row.size()) +
                          " entries, header says " + std::to_string(count));
    }
    return store;
}

}  // namespace itercqr
