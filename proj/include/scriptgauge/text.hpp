#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "scriptgauge/rating.hpp"
#include "scriptgauge/tensor.hpp"

namespace scriptgauge {

namespace detail {
// Multi-byte UTF-8 sequences count as word characters.
inline bool is_word_char(unsigned char c) {
    return std::isalnum(c) != 0 || c >= 0x80;
}
} // namespace detail

// Lowercase, split on whitespace, strip leading/trailing punctuation from
// each token, keep internal apostrophes, drop empty results.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < n && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i == start) continue;
        std::size_t lo = start, hi = i;
        while (lo < hi && !detail::is_word_char(static_cast<unsigned char>(text[lo]))) ++lo;
        while (hi > lo && !detail::is_word_char(static_cast<unsigned char>(text[hi - 1]))) --hi;
        if (lo >= hi) continue;
        std::string tok;
        tok.reserve(hi - lo);
        for (std::size_t k = lo; k < hi; ++k) {
            unsigned char c = static_cast<unsigned char>(text[k]);
            tok.push_back(c < 0x80 ? static_cast<char>(std::tolower(c))
                                   : static_cast<char>(c));
        }
        out.push_back(std::move(tok));
    }
    return out;
}

// Word -> index map with PAD=0 and UNK=1 reserved.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary() {
        index_to_word_ = {"<pad>", "<unk>"};
    }

    int size() const { return static_cast<int>(index_to_word_.size()); }

    int index_of(const std::string& word) const {
        auto it = word_to_index_.find(word);
        return it == word_to_index_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& word) const {
        return word_to_index_.count(word) != 0;
    }

    const std::string& word_at(int idx) const { return index_to_word_.at(idx); }

    // For deserialization; indices must arrive in order starting at 2.
    void add_word(const std::string& word) {
        int idx = size();
        word_to_index_.emplace(word, idx);
        index_to_word_.push_back(word);
    }

    const std::vector<std::string>& words() const { return index_to_word_; }

private:
    std::unordered_map<std::string, int> word_to_index_;
    std::vector<std::string> index_to_word_;
};

// Frequency-thresholded vocabulary with deterministic index assignment:
// descending frequency, then lexicographic.
inline Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& train_token_lists,
                                   int min_count = 1) {
    if (train_token_lists.empty())
        throw std::invalid_argument("build_vocabulary: empty training set");
    std::unordered_map<std::string, long long> freq;
    for (const auto& toks : train_token_lists)
        for (const auto& t : toks) ++freq[t];
    std::vector<std::pair<std::string, long long>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [word, count] : items)
        if (count >= min_count) vocab.add_word(word);
    return vocab;
}

// Fixed-length padded index sequence.
struct TokenSequence {
    std::vector<std::int32_t> indices; // length L, PAD after true_length
    int true_length = 0;

    int capacity() const { return static_cast<int>(indices.size()); }
};

inline TokenSequence encode_sequence(const std::vector<std::string>& tokens,
                                     const Vocabulary& vocab, int max_length) {
    if (max_length < 1)
        throw std::invalid_argument("encode_sequence: max_length must be >= 1");
    TokenSequence seq;
    seq.indices.assign(static_cast<std::size_t>(max_length), Vocabulary::kPad);
    seq.true_length = static_cast<int>(std::min<std::size_t>(tokens.size(),
                                                             static_cast<std::size_t>(max_length)));
    for (int i = 0; i < seq.true_length; ++i)
        seq.indices[static_cast<std::size_t>(i)] =
            vocab.index_of(tokens[static_cast<std::size_t>(i)]);
    return seq;
}

// V x d embedding matrix; PAD row forced to zero, missing words zero.
struct EmbeddingTable {
    Tensor2<float> weights;
    int dim = 0;
    int covered = 0; // vocabulary words found in the embedding file
};

inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, int dim) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_embeddings: cannot open " + path);
    EmbeddingTable table;
    table.dim = dim;
    table.weights = Tensor2<float>(vocab.size(), dim);
    std::string line;
    long long line_no = 0;
    std::set<int> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream iss(line);
        std::string word;
        iss >> word;
        int idx = vocab.contains(word) ? vocab.index_of(word) : -1;
        std::vector<float> vals;
        vals.reserve(static_cast<std::size_t>(dim));
        double v;
        while (iss >> v) vals.push_back(static_cast<float>(v));
        if (static_cast<int>(vals.size()) != dim)
            throw std::runtime_error("load_embeddings: dimension mismatch at line " +
                                     std::to_string(line_no) + " (" +
                                     std::to_string(vals.size()) + " values, expected " +
                                     std::to_string(dim) + ")");
        if (idx >= 2 && !seen.count(idx)) {
            for (int j = 0; j < dim; ++j) table.weights.at(idx, j) = vals[static_cast<std::size_t>(j)];
            seen.insert(idx);
        }
    }
    table.covered = static_cast<int>(seen.size());
    return table;
}

// 24-component multi-hot genre vector in the fixed Genre order.
inline std::vector<float> genre_multi_hot(const std::set<Genre>& genres) {
    if (genres.empty())
        throw std::invalid_argument("genre_multi_hot: empty genre set");
    std::vector<float> v(kNumGenres, 0.0f);
    for (Genre g : genres) v[static_cast<std::size_t>(g)] = 1.0f;
    return v;
}

} // namespace scriptgauge
