#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

// Scratch directory removed at scope exit.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("itercqr_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path);
    }

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }

    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline std::string random_token(std::mt19937_64& rng, int len = 4) {
    std::string out;
    for (int i = 0; i < len; ++i) {
        out += static_cast<char>('a' + rng() % 26);
    }
    return out;
}

inline std::string random_text(std::mt19937_64& rng, int words) {
    std::string out;
    for (int i = 0; i < words; ++i) {
        if (i) out += ' ';
        out += random_token(rng, 2 + static_cast<int>(rng() % 5));
    }
    return out;
}
