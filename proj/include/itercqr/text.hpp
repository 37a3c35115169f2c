#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace itercqr {

// The one tokenizer shared by the vocabulary, the hashing encoder, BM25 and
// the overlap statistics: lowercase, split on runs of non-alphanumerics.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens, std::string_view sep = " ") {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) {
            out += sep;
        }
        out += tokens[i];
    }
    return out;
}

// Adjacent token n-grams, joined by '_'. Fewer than n tokens -> empty.
inline std::vector<std::string> token_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
    std::vector<std::string> grams;
    if (n == 0 || tokens.size() < n) {
        return grams;
    }
    grams.reserve(tokens.size() - n + 1);
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string g = tokens[i];
        for (std::size_t j = 1; j < n; ++j) {
            g += '_';
            g += tokens[i + j];
        }
        grams.push_back(std::move(g));
    }
    return grams;
}

// Keeps the first max_tokens whitespace-separated words of the original text,
// preserving their spelling (used to cap LLM rewrites at the query budget).
inline std::string truncate_words(std::string_view text, std::size_t max_tokens) {
    std::size_t count = 0;
    std::size_t i = 0;
    std::size_t end = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        if (i >= text.size()) {
            break;
        }
        if (count == max_tokens) {
            break;
        }
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        ++count;
        end = i;
    }
    std::string out(text.substr(0, end));
    return out;
}

}  // namespace itercqr
