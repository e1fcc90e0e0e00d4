#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "scriptgauge/corpus.hpp"
#include "scriptgauge/lexicon.hpp"
#include "scriptgauge/rating.hpp"

namespace scriptgauge {

// rows = gold, columns = predicted
struct ConfusionMatrix {
    int n_classes = 0;
    std::vector<long long> counts; // n x n row-major

    explicit ConfusionMatrix(int n = 0)
        : n_classes(n), counts(static_cast<std::size_t>(n) * n, 0) {}

    long long& at(int gold, int pred) {
        return counts[static_cast<std::size_t>(gold) * n_classes + pred];
    }
    long long at(int gold, int pred) const {
        return counts[static_cast<std::size_t>(gold) * n_classes + pred];
    }
    long long total() const {
        long long t = 0;
        for (long long c : counts) t += c;
        return t;
    }
    long long row_sum(int gold) const {
        long long t = 0;
        for (int j = 0; j < n_classes; ++j) t += at(gold, j);
        return t;
    }
};

inline ConfusionMatrix confusion(const std::vector<int>& gold, const std::vector<int>& pred,
                                 int n_classes) {
    if (gold.size() != pred.size())
        throw std::invalid_argument("confusion: gold/predicted length mismatch");
    ConfusionMatrix cm(n_classes);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] < 0 || gold[i] >= n_classes || pred[i] < 0 || pred[i] >= n_classes)
            throw std::invalid_argument("confusion: label out of range");
        ++cm.at(gold[i], pred[i]);
    }
    return cm;
}

struct ClassF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long long support = 0;
};

inline std::vector<ClassF1> per_class_f1(const ConfusionMatrix& cm) {
    std::vector<ClassF1> out(static_cast<std::size_t>(cm.n_classes));
    for (int c = 0; c < cm.n_classes; ++c) {
        long long tp = cm.at(c, c), fp = 0, fn = 0;
        for (int j = 0; j < cm.n_classes; ++j) {
            if (j != c) {
                fp += cm.at(j, c);
                fn += cm.at(c, j);
            }
        }
        auto& e = out[static_cast<std::size_t>(c)];
        e.support = tp + fn;
        e.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        e.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        // zero-denominator F1 defined as 0
        e.f1 = (e.precision + e.recall) > 0.0
                   ? 2.0 * e.precision * e.recall / (e.precision + e.recall)
                   : 0.0;
    }
    return out;
}

inline double weighted_f1_from(const ConfusionMatrix& cm) {
    const auto per_class = per_class_f1(cm);
    const double n = static_cast<double>(cm.total());
    if (n == 0.0) throw std::invalid_argument("weighted_f1: empty input");
    double w = 0.0;
    for (const auto& e : per_class) w += static_cast<double>(e.support) / n * e.f1;
    return w;
}

// sum_c (support_c / N) * F1_c
inline double weighted_f1(const std::vector<int>& gold, const std::vector<int>& pred,
                          int n_classes) {
    if (gold.empty()) throw std::invalid_argument("weighted_f1: empty input");
    return weighted_f1_from(confusion(gold, pred, n_classes));
}

inline std::vector<int> to_labels(const std::vector<Rating>& ratings) {
    std::vector<int> out;
    out.reserve(ratings.size());
    for (Rating r : ratings) out.push_back(static_cast<int>(r));
    return out;
}

// Weighted F1 restricted to records carrying each genre; multi-genre movies
// count in every one of their genres.
inline std::map<Genre, double> per_genre_f1(const std::vector<MovieRecord>& records,
                                            const std::vector<int>& pred) {
    if (records.size() != pred.size())
        throw std::invalid_argument("per_genre_f1: length mismatch");
    std::map<Genre, std::pair<std::vector<int>, std::vector<int>>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (Genre g : records[i].genres) {
            groups[g].first.push_back(static_cast<int>(records[i].rating));
            groups[g].second.push_back(pred[i]);
        }
    }
    std::map<Genre, double> out;
    for (const auto& [g, pair] : groups)
        out[g] = weighted_f1(pair.first, pair.second, static_cast<int>(kNumRatings));
    return out;
}

struct EmotionGroupProfile {
    std::array<double, kNumEmotionCategories> mean{};
    long long count = 0;
};

// Mean emotion vector per (gold class, correctness); empty groups absent.
inline std::map<std::pair<int, bool>, EmotionGroupProfile> emotion_profile(
    const std::vector<int>& gold, const std::vector<int>& pred,
    const std::vector<std::array<double, kNumEmotionCategories>>& emotions) {
    if (gold.size() != pred.size() || gold.size() != emotions.size())
        throw std::invalid_argument("emotion_profile: length mismatch");
    std::map<std::pair<int, bool>, EmotionGroupProfile> out;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        auto& g = out[{gold[i], gold[i] == pred[i]}];
        for (std::size_t j = 0; j < kNumEmotionCategories; ++j) g.mean[j] += emotions[i][j];
        ++g.count;
    }
    for (auto& [key, g] : out)
        for (auto& v : g.mean) v /= static_cast<double>(g.count);
    return out;
}

struct RankedWord {
    std::string word;
    double value = 0.0;
};

// descending value, then lexicographic word
inline void sort_ranked(std::vector<RankedWord>& v) {
    std::sort(v.begin(), v.end(), [](const RankedWord& a, const RankedWord& b) {
        if (a.value != b.value) return a.value > b.value;
        return a.word < b.word;
    });
}

struct AttentionReportInput {
    int gold = 0;
    int predicted = 0;
    std::vector<std::string> tokens;  // non-PAD tokens, aligned with weights
    std::vector<double> weights;
};

// Per class r: TP group = {gold=r, pred=r}; FN∪FP group = {gold=r, pred≠r}
// ∪ {gold≠r, pred=r}. Mean attention weight per surface word, pooled across
// all occurrences in the group; top-k by mean weight.
inline std::map<std::pair<int, bool>, std::vector<RankedWord>> attention_word_report(
    const std::vector<AttentionReportInput>& inputs, int n_classes, std::size_t top_k = 10) {
    std::map<std::pair<int, bool>, std::vector<RankedWord>> out;
    for (int c = 0; c < n_classes; ++c) {
        for (bool tp : {true, false}) {
            std::unordered_map<std::string, std::pair<double, long long>> acc;
            for (const auto& in : inputs) {
                const bool is_tp = in.gold == c && in.predicted == c;
                const bool is_fnfp = (in.gold == c) != (in.predicted == c);
                if (!(tp ? is_tp : is_fnfp)) continue;
                const std::size_t n = std::min(in.tokens.size(), in.weights.size());
                for (std::size_t i = 0; i < n; ++i) {
                    auto& slot = acc[in.tokens[i]];
                    slot.first += in.weights[i];
                    ++slot.second;
                }
            }
            if (acc.empty()) continue;
            std::vector<RankedWord> ranked;
            ranked.reserve(acc.size());
            for (const auto& [word, sum_count] : acc)
                ranked.push_back({word, sum_count.first / static_cast<double>(sum_count.second)});
            sort_ranked(ranked);
            if (ranked.size() > top_k) ranked.resize(top_k);
            out[{c, tp}] = std::move(ranked);
        }
    }
    return out;
}

struct BadWordClassTable {
    std::vector<RankedWord> top; // (word, occurrences / class token total)
    double negativity = 0.0;     // all bad-word occurrences / class token total
};

// Per class: merge all scripts, rank bad words by occurrence ratio.
inline std::map<int, BadWordClassTable> bad_word_table(
    const std::map<int, std::vector<std::vector<std::string>>>& class_token_lists,
    const BadWordList& list, std::size_t top_k = 10) {
    std::map<int, BadWordClassTable> out;
    for (const auto& [cls, scripts] : class_token_lists) {
        long long total = 0;
        std::unordered_map<std::string, long long> counts;
        long long bad_total = 0;
        for (const auto& tokens : scripts) {
            total += static_cast<long long>(tokens.size());
            bad_total += count_bad_words(tokens, list); // singles + phrase matches
            for (const auto& tok : tokens)
                if (list.contains_single(tok)) ++counts[tok];
        }
        BadWordClassTable table;
        if (total > 0) {
            for (const auto& [word, c] : counts)
                table.top.push_back({word, static_cast<double>(c) / static_cast<double>(total)});
            sort_ranked(table.top);
            if (table.top.size() > top_k) table.top.resize(top_k);
            table.negativity = static_cast<double>(bad_total) / static_cast<double>(total);
        }
        out[cls] = std::move(table);
    }
    return out;
}

} // namespace scriptgauge
