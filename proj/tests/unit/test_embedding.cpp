#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "itercqr/data.hpp"
#include "itercqr/embedding.hpp"
#include "itercqr/text.hpp"

using namespace itercqr;

namespace {

// Independent re-derivation of one bucket's value from the hashing contract:
// unigrams plus adjacent bigrams, FNV-1a 64 bucketed mod dim, sign from the
// top hash bit, then L2 normalization.
std::vector<float> reference_encode(const std::string& text, std::uint32_t dim) {
    std::vector<double> acc(dim, 0.0);
    auto toks = tokenize(text);
    std::vector<std::string> feats = toks;
    for (const auto& bg : token_ngrams(toks, 2)) {
        feats.push_back(bg);
    }
    for (const auto& f : feats) {
        std::uint64_t h = fnv1a64(f);
        double sign = (h >> 63) ? -1.0 : 1.0;
        acc[h % dim] += sign;
    }
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<float> out(dim, 0.0f);
    if (norm > 0.0) {
        for (std::uint32_t i = 0; i < dim; ++i) {
            out[i] = static_cast<float>(acc[i] / norm);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("encode matches the hashing contract bit for bit") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 50; ++i) {
        std::string text = random_text(rng, 1 + static_cast<int>(rng() % 12));
        CHECK(encode(text, kEmbeddingDim) == reference_encode(text, kEmbeddingDim));
    }
    CHECK(encode("Alpha beta!", 32) == reference_encode("alpha beta", 32));
}

TEST_CASE("encode of empty or punctuation-only text is the zero vector") {
    CHECK(is_zero_vector(encode("", kEmbeddingDim)));
    CHECK(is_zero_vector(encode("!!! ???", kEmbeddingDim)));
    CHECK_FALSE(is_zero_vector(encode("word", kEmbeddingDim)));
    CHECK_THROWS_AS(encode("word", 0), ValidationError);
}

TEST_CASE("encoded vectors are unit length") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
        auto v = encode(random_text(rng, 6), kEmbeddingDim);
        double norm = 0.0;
        for (float x : v) norm += static_cast<double>(x) * x;
        CHECK(std::abs(norm - 1.0) < 1e-5);
    }
}

TEST_CASE("cosine handles zero vectors and dimension mismatches") {
    auto a = encode("alpha beta", kEmbeddingDim);
    auto zero = encode("", kEmbeddingDim);
    CHECK(cosine(a, a) == Catch::Approx(1.0).margin(1e-6));
    CHECK(cosine(a, zero) == 0.0);
    CHECK(cosine(zero, zero) == 0.0);
    CHECK_THROWS_AS(cosine(a, encode("alpha", 64)), ValidationError);
}

TEST_CASE("texts sharing tokens score higher than disjoint texts") {
    // hashing collisions can flip individual cases; the contract is statistical
    std::mt19937_64 rng(123);
    int wins = 0;
    const int trials = 100;
    for (int i = 0; i < trials; ++i) {
        std::vector<std::string> base_tokens;
        for (int w = 0; w < 6; ++w) {
            base_tokens.push_back(random_token(rng, 5));
        }
        std::string base = join_tokens(base_tokens);
        std::string overlapping = base_tokens[0] + " " + base_tokens[1] + " " +
                                  base_tokens[2] + " " + random_token(rng, 5);
        std::string disjoint = random_text(rng, 4);
        auto vb = encode(base, kEmbeddingDim);
        if (cosine(vb, encode(overlapping, kEmbeddingDim)) >
            cosine(vb, encode(disjoint, kEmbeddingDim))) {
            wins++;
        }
    }
    CHECK(wins >= 95);
}

TEST_CASE("store build rejects duplicate ids and serves rows") {
    std::vector<Passage> passages{{"p1", "alpha beta"}, {"p2", "gamma delta"}};
    EmbeddingStore store = build_store(passages);
    CHECK(store.rows() == 2);
    CHECK(store.has("p1"));
    CHECK_FALSE(store.has("p9"));
    CHECK(store.vector_for("p1") == encode("alpha beta", kEmbeddingDim));
    CHECK_THROWS_AS(store.vector_for("p9"), ValidationError);

    std::vector<Passage> dup{{"p1", "a"}, {"p1", "b"}};
    CHECK_THROWS_AS(build_store(dup), ValidationError);
}

TEST_CASE("store persistence round-trips bit-exact") {
    TempDir tmp;
    std::mt19937_64 rng(9);
    std::vector<Passage> passages;
    for (int i = 0; i < 17; ++i) {
        passages.push_back({"p" + std::to_string(i), random_text(rng, 8)});
    }
    EmbeddingStore store = build_store(passages);
    persist_store(store, tmp / "store.bin");
    EmbeddingStore loaded = load_store(tmp / "store.bin");
    CHECK(loaded.dim == store.dim);
    CHECK(loaded.id_to_row == store.id_to_row);
    REQUIRE(loaded.matrix.size() == store.matrix.size());
    for (std::size_t i = 0; i < store.matrix.size(); ++i) {
        CHECK(loaded.matrix[i] == store.matrix[i]);  // exact float equality
    }

    // writing twice yields identical bytes
    persist_store(store, tmp / "store2.bin");
    CHECK(read_file(tmp / "store.bin") == read_file(tmp / "store2.bin"));
}

TEST_CASE("store loader reports corruption with byte offsets") {
    TempDir tmp;
    EmbeddingStore store = build_store(std::vector<Passage>{{"p1", "alpha"}}, 8);
    persist_store(store, tmp / "store.bin");
    std::string bytes = read_file(tmp / "store.bin");

    SECTION("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        write_file(tmp / "bad.bin", bad);
        try {
            load_store(tmp / "bad.bin");
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("byte offset 0") != std::string::npos);
        }
    }
    SECTION("truncated payload") {
        write_file(tmp / "trunc.bin", bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(load_store(tmp / "trunc.bin"), FormatError);
    }
    SECTION("empty file") {
        write_file(tmp / "empty.bin", "");
        CHECK_THROWS_AS(load_store(tmp / "empty.bin"), FormatError);
    }
}
