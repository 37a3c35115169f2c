#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "itercqr/common.hpp"
#include "itercqr/text.hpp"

using namespace itercqr;

TEST_CASE("fnv1a64 matches published test vectors") {
    CHECK(to_hex(fnv1a64("")) == "cbf29ce484222325");
    CHECK(to_hex(fnv1a64("a")) == "af63dc4c8601ec8c");
    CHECK(to_hex(fnv1a64("foobar")) == "85944171f73967e8");
}

TEST_CASE("to_hex is fixed-width lowercase") {
    CHECK(to_hex(0) == "0000000000000000");
    CHECK(to_hex(0xdeadbeefull) == "00000000deadbeef");
}

TEST_CASE("write_file/read_file round-trips binary content and creates parents") {
    TempDir tmp;
    std::string payload("\x00\x01\xff binary \n\r data", 20);
    auto path = tmp / "nested";
    write_file(path / "file.bin", payload);
    CHECK(read_file(path / "file.bin") == payload);
    CHECK(fnv1a64_file_hex(path / "file.bin") == to_hex(fnv1a64(payload)));
}

TEST_CASE("read_file on a missing path raises IoError") {
    CHECK_THROWS_AS(read_file("/nonexistent/itercqr/file"), IoError);
}

TEST_CASE("read_numbered_lines skips blanks and keeps 1-based numbers") {
    TempDir tmp;
    write_file(tmp / "f.txt", "first\n\nthird\n   \nfifth");
    auto lines = read_numbered_lines(tmp / "f.txt");
    REQUIRE(lines.size() == 3);
    CHECK(lines[0].first == 1);
    CHECK(lines[0].second == "first");
    CHECK(lines[1].first == 3);
    CHECK(lines[2].first == 5);
    CHECK(lines[2].second == "fifth");
}

TEST_CASE("rand_uniform stays inside its bounds") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 10000; ++i) {
        double x = rand_uniform(rng, -0.08, 0.08);
        CHECK(x >= -0.08);
        CHECK(x < 0.08);
    }
}

TEST_CASE("deterministic_shuffle is a seed-stable permutation") {
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    std::mt19937_64 a(42);
    std::mt19937_64 b(42);
    auto va = v;
    auto vb = v;
    deterministic_shuffle(va, a);
    deterministic_shuffle(vb, b);
    CHECK(va == vb);
    auto sorted = va;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == v);

    std::mt19937_64 c(43);
    auto vc = v;
    deterministic_shuffle(vc, c);
    CHECK(vc != va);
}

TEST_CASE("parallel_for touches every index exactly once") {
    std::vector<std::atomic<int>> hits(257);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i].fetch_add(1); });
    for (const auto& h : hits) {
        CHECK(h.load() == 1);
    }
}

TEST_CASE("tokenize lowercases and splits on non-alphanumeric runs") {
    CHECK(tokenize("Hello, World!") == std::vector<std::string>{"hello", "world"});
    CHECK(tokenize("a-b_c 9x") == std::vector<std::string>{"a", "b", "c", "9x"});
    CHECK(tokenize("") == std::vector<std::string>{});
    CHECK(tokenize("  \t\n ") == std::vector<std::string>{});
    CHECK(tokenize("<sep>") == std::vector<std::string>{"sep"});
}

TEST_CASE("token_ngrams joins adjacent tokens with underscores") {
    std::vector<std::string> toks{"a", "b", "c"};
    CHECK(token_ngrams(toks, 2) == std::vector<std::string>{"a_b", "b_c"});
    CHECK(token_ngrams(toks, 3) == std::vector<std::string>{"a_b_c"});
    CHECK(token_ngrams(toks, 4) == std::vector<std::string>{});
    CHECK(token_ngrams({}, 2) == std::vector<std::string>{});
}

TEST_CASE("truncate_words caps at a whitespace word budget") {
    CHECK(truncate_words("one two three four", 2) == "one two");
    CHECK(truncate_words("one two", 5) == "one two");
    CHECK(truncate_words("", 3) == "");
}
