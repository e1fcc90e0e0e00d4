#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace scriptgauge {

// Eight emotions then two sentiments; the component order of every
// emotion vector.
inline constexpr std::array<std::string_view, 10> kEmotionCategories = {
    "anger", "anticipation", "joy",      "trust",    "disgust",
    "sadness", "surprise",   "fear",     "positive", "negative"};

inline constexpr std::size_t kNumEmotionCategories = 10;

inline int emotion_category_index(std::string_view name) {
    for (std::size_t i = 0; i < kEmotionCategories.size(); ++i)
        if (name == kEmotionCategories[i]) return static_cast<int>(i);
    return -1;
}

// word -> bitmask over the 10 categories
class EmotionLexicon {
public:
    void add(const std::string& word, int category) {
        mask_[word] |= static_cast<std::uint16_t>(1u << category);
    }

    std::uint16_t categories_of(const std::string& word) const {
        auto it = mask_.find(word);
        return it == mask_.end() ? 0 : it->second;
    }

    std::size_t size() const { return mask_.size(); }

private:
    std::unordered_map<std::string, std::uint16_t> mask_;
};

namespace detail {
inline std::string to_lower_ascii(std::string s) {
    for (char& c : s)
        if (static_cast<unsigned char>(c) < 0x80)
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}
} // namespace detail

// NRC distribution layout: word<TAB>category<TAB>{0|1}, one row per pair.
// Only flag-1 rows create entries.
inline EmotionLexicon load_emotion_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_emotion_lexicon: cannot open " + path);
    EmotionLexicon lex;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream iss(line);
        std::string word, category, flag;
        if (!std::getline(iss, word, '\t') || !std::getline(iss, category, '\t') ||
            !std::getline(iss, flag))
            throw std::runtime_error("load_emotion_lexicon: malformed row at line " +
                                     std::to_string(line_no));
        if (flag != "0" && flag != "1")
            throw std::runtime_error("load_emotion_lexicon: non-binary flag at line " +
                                     std::to_string(line_no));
        const int cat = emotion_category_index(detail::to_lower_ascii(category));
        if (cat < 0)
            throw std::runtime_error("load_emotion_lexicon: unknown category '" + category +
                                     "' at line " + std::to_string(line_no));
        if (flag == "1") lex.add(detail::to_lower_ascii(word), cat);
    }
    return lex;
}

// e_i = (tokens mapped to category i) / (total tokens)
inline std::array<double, kNumEmotionCategories> emotion_vector(
    const std::vector<std::string>& tokens, const EmotionLexicon& lexicon) {
    std::array<double, kNumEmotionCategories> e{};
    if (tokens.empty()) return e;
    std::array<long long, kNumEmotionCategories> counts{};
    for (const auto& tok : tokens) {
        const std::uint16_t mask = lexicon.categories_of(tok);
        if (!mask) continue;
        for (std::size_t i = 0; i < kNumEmotionCategories; ++i)
            if (mask & (1u << i)) ++counts[i];
    }
    const double total = static_cast<double>(tokens.size());
    for (std::size_t i = 0; i < kNumEmotionCategories; ++i)
        e[i] = static_cast<double>(counts[i]) / total;
    return e;
}

// Lowercased word/phrase set; phrases are stored as their token sequence.
class BadWordList {
public:
    void add(const std::string& entry) {
        std::istringstream iss(entry);
        std::vector<std::string> parts;
        std::string p;
        while (iss >> p) parts.push_back(detail::to_lower_ascii(p));
        if (parts.empty()) return;
        if (parts.size() == 1) {
            singles_.insert(parts[0]);
        } else {
            std::string joined = parts[0];
            for (std::size_t i = 1; i < parts.size(); ++i) joined += " " + parts[i];
            phrases_.insert(joined);
            max_phrase_len_ = std::max(max_phrase_len_, parts.size());
        }
    }

    bool contains_single(const std::string& token) const { return singles_.count(token) != 0; }
    bool contains_phrase(const std::string& joined) const { return phrases_.count(joined) != 0; }
    std::size_t max_phrase_len() const { return max_phrase_len_; }
    std::size_t size() const { return singles_.size() + phrases_.size(); }

    const std::set<std::string>& singles() const { return singles_; }

private:
    std::set<std::string> singles_;
    std::set<std::string> phrases_;
    std::size_t max_phrase_len_ = 1;
};

// Union of plain-text files, one entry per line, '#' comments skipped.
inline BadWordList load_bad_words(const std::vector<std::string>& paths) {
    BadWordList list;
    for (const auto& path : paths) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("load_bad_words: cannot open " + path);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto first = line.find_first_not_of(" \t");
            if (first == std::string::npos || line[first] == '#') continue;
            const auto last = line.find_last_not_of(" \t");
            list.add(line.substr(first, last - first + 1));
        }
    }
    return list;
}

// Number of bad-word matches; a multi-token phrase match counts once.
inline long long count_bad_words(const std::vector<std::string>& tokens,
                                 const BadWordList& list) {
    long long count = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (list.contains_single(tokens[i])) {
            ++count;
            continue;
        }
        std::string joined = tokens[i];
        for (std::size_t len = 2; len <= list.max_phrase_len() && i + len <= tokens.size();
             ++len) {
            joined += " " + tokens[i + len - 1];
            if (list.contains_phrase(joined)) {
                ++count;
                break;
            }
        }
    }
    return count;
}

inline double bad_word_ratio(const std::vector<std::string>& tokens, const BadWordList& list) {
    if (tokens.empty())
        throw std::invalid_argument("bad_word_ratio: empty token list");
    return static_cast<double>(count_bad_words(tokens, list)) /
           static_cast<double>(tokens.size());
}

} // namespace scriptgauge
