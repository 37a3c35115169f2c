#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

namespace itercqr {

using json = nlohmann::json;

// Error taxonomy maps onto the CLI exit-code contract:
// validation/parse/format/io -> 2, external service -> 3, invariant -> 4.
struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : PipelineError {
    using PipelineError::PipelineError;
};
struct ParseError : PipelineError {
    using PipelineError::PipelineError;
};
struct FormatError : PipelineError {
    using PipelineError::PipelineError;
};
struct IoError : PipelineError {
    using PipelineError::PipelineError;
};
struct ExternalError : PipelineError {
    using PipelineError::PipelineError;
};
struct InvariantError : PipelineError {
    using PipelineError::PipelineError;
};

inline void log_info(std::string_view msg) {
    std::cerr << "[itercqr] " << msg << "\n";
}

inline void log_warn(std::string_view msg) {
    std::cerr << "[itercqr] warning: " << msg << "\n";
}

inline void log_error(std::string_view msg) {
    std::cerr << "[itercqr] error: " << msg << "\n";
}

// FNV-1a, 64-bit. Fully specified so hashes are identical across platforms.
inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffsetBasis) {
    for (unsigned char c : bytes) {
        h ^= static_cast<std::uint64_t>(c);
        h *= kFnvPrime;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open file: " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open file for writing: " + path.string());
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

inline std::string fnv1a64_file_hex(const std::filesystem::path& path) {
    return to_hex(fnv1a64(read_file(path)));
}

// ---------------------------------------------------------------------------
// Little-endian byte serialization, identical bytes on every platform.
// ---------------------------------------------------------------------------

namespace detail {

inline void append_u32le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out += static_cast<char>((v >> (8 * i)) & 0xff);
    }
}

inline void append_u64le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out += static_cast<char>((v >> (8 * i)) & 0xff);
    }
}

inline void append_f32le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    append_u32le(out, bits);
}

inline void append_f64le(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    append_u64le(out, bits);
}

struct ByteReader {
    const std::string& data;
    const std::string path;
    std::size_t offset = 0;

    void require(std::size_t n) const {
        if (offset + n > data.size()) {
            throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
        }
    }
    std::uint32_t read_u32le() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[offset + i])) << (8 * i);
        }
        offset += 4;
        return v;
    }
    std::uint64_t read_u64le() {
        require(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[offset + i])) << (8 * i);
        }
        offset += 8;
        return v;
    }
    float read_f32le() {
        std::uint32_t bits = read_u32le();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    double read_f64le() {
        std::uint64_t bits = read_u64le();
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::string read_bytes(std::size_t n) {
        require(n);
        std::string s = data.substr(offset, n);
        offset += n;
        return s;
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Seeded randomness with fully specified arithmetic; std distributions are
// implementation-defined, so uniforms and shuffles are spelled out here.
// ---------------------------------------------------------------------------

inline double rand_uniform(std::mt19937_64& rng, double lo, double hi) {
    double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);  // [0, 1)
    return lo + u * (hi - lo);
}

template <typename T>
inline void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

// Non-blank lines with their 1-based line numbers; blank lines are skipped
// so trailing newlines never produce phantom records.
inline std::vector<std::pair<int, std::string>> read_numbered_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open file: " + path.string());
    }
    std::vector<std::pair<int, std::string>> lines;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        lines.emplace_back(lineno, line);
    }
    return lines;
}

// Runs fn(i) for i in [0, n) across threads. Work items must be independent;
// results keyed by index stay deterministic regardless of scheduling.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         unsigned max_threads = 0) {
    if (n == 0) {
        return;
    }
    unsigned hw = max_threads ? max_threads : std::thread::hardware_concurrency();
    if (hw <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    unsigned workers = static_cast<unsigned>(std::min<std::size_t>(hw, n));
    std::vector<std::thread> threads;
    threads.reserve(workers);
    std::atomic<std::size_t> next{0};
    for (unsigned w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) {
                    return;
                }
                fn(i);
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
}

}  // namespace itercqr
