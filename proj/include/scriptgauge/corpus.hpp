#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "scriptgauge/rating.hpp"
#include "scriptgauge/rng.hpp"

namespace scriptgauge {

struct MovieRecord {
    std::string id;
    std::string title;
    std::vector<std::string> script; // one utterance per element
    std::set<Genre> genres;
    std::set<std::string> directors;
    Rating rating = Rating::G;
};

struct LoadStats {
    long long skipped_malformed = 0;
    long long skipped_duplicates = 0;
};

namespace detail {

inline MovieRecord parse_record(const nlohmann::json& j, long long line_no) {
    auto fail = [line_no](const std::string& msg) -> std::runtime_error {
        return std::runtime_error("corpus line " + std::to_string(line_no) + ": " + msg);
    };
    if (!j.is_object()) throw fail("record is not an object");
    MovieRecord rec;
    for (const char* field : {"id", "title", "rating", "genres", "directors", "script"})
        if (!j.contains(field)) throw fail(std::string("missing field '") + field + "'");
    rec.id = j.at("id").get<std::string>();
    rec.title = j.at("title").get<std::string>();
    auto rating = parse_rating(j.at("rating").get<std::string>());
    if (!rating) throw fail("unknown rating label '" + j.at("rating").get<std::string>() + "'");
    rec.rating = *rating;
    for (const auto& g : j.at("genres")) {
        auto genre = parse_genre(g.get<std::string>());
        if (!genre) throw fail("unknown genre '" + g.get<std::string>() + "'");
        rec.genres.insert(*genre);
    }
    if (rec.genres.empty()) throw fail("empty genre set");
    for (const auto& d : j.at("directors")) rec.directors.insert(d.get<std::string>());
    bool any_text = false;
    for (const auto& u : j.at("script")) {
        std::string line = u.get<std::string>();
        if (line.find_first_not_of(" \t\r\n") != std::string::npos) any_text = true;
        rec.script.push_back(std::move(line));
    }
    if (!any_text) throw fail("script empty after whitespace trimming");
    return rec;
}

} // namespace detail

inline nlohmann::json record_to_json(const MovieRecord& rec) {
    nlohmann::json j;
    j["id"] = rec.id;
    j["title"] = rec.title;
    j["rating"] = std::string(to_string(rec.rating));
    auto genres = nlohmann::json::array();
    for (Genre g : rec.genres) genres.push_back(std::string(to_string(g)));
    j["genres"] = genres;
    auto directors = nlohmann::json::array();
    for (const auto& d : rec.directors) directors.push_back(d);
    j["directors"] = directors;
    j["script"] = rec.script;
    return j;
}

// Line-delimited JSON corpus. Strict mode aborts on any malformed line or
// duplicate id; lenient mode skips malformed lines, keeps the first record
// for a duplicated id, and counts both in stats.
inline std::vector<MovieRecord> load_corpus(const std::string& path, bool strict = true,
                                            LoadStats* stats = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_corpus: cannot open " + path);
    std::vector<MovieRecord> records;
    std::unordered_set<std::string> ids;
    LoadStats local;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        MovieRecord rec;
        try {
            rec = detail::parse_record(nlohmann::json::parse(line), line_no);
        } catch (const std::exception& e) {
            if (strict)
                throw std::runtime_error("load_corpus: " + std::string(e.what()));
            ++local.skipped_malformed;
            continue;
        }
        if (!ids.insert(rec.id).second) {
            if (strict)
                throw std::runtime_error("load_corpus: duplicate id '" + rec.id +
                                         "' at line " + std::to_string(line_no));
            ++local.skipped_duplicates;
            continue;
        }
        records.push_back(std::move(rec));
    }
    if (strict && records.empty())
        throw std::runtime_error("load_corpus: no records in " + path);
    if (stats) *stats = local;
    return records;
}

inline void save_corpus(const std::string& path, const std::vector<MovieRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_corpus: cannot open " + path + " for writing");
    for (const auto& rec : records) out << record_to_json(rec).dump() << "\n";
}

struct DatasetSplit {
    std::vector<MovieRecord> train;
    std::vector<MovieRecord> validation;
    std::vector<MovieRecord> test;
    std::uint64_t seed = 0;
};

// Per class: test gets floor(r_test*n) but at least 1, validation gets
// floor(r_val*n) but at least 1, train gets the remainder. Deterministic
// given the seed.
inline DatasetSplit stratified_split(const std::vector<MovieRecord>& corpus,
                                     double train_ratio, double val_ratio, double test_ratio,
                                     std::uint64_t seed) {
    if (std::fabs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw std::invalid_argument("stratified_split: ratios must sum to 1");
    std::map<Rating, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        by_class[corpus[i].rating].push_back(i);

    DatasetSplit split;
    split.seed = seed;
    Rng root(seed);
    for (auto& [rating, members] : by_class) {
        const auto n = members.size();
        if (n < 3)
            throw std::runtime_error("stratified_split: class " +
                                     std::string(to_string(rating)) + " has only " +
                                     std::to_string(n) + " members (need >= 3)");
        Rng rng = root.split(static_cast<std::uint64_t>(rating));
        rng.shuffle(members.begin(), members.end());
        auto n_test = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(test_ratio * static_cast<double>(n))));
        auto n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(val_ratio * static_cast<double>(n))));
        for (std::size_t k = 0; k < n; ++k) {
            const MovieRecord& rec = corpus[members[k]];
            if (k < n_test)
                split.test.push_back(rec);
            else if (k < n_test + n_val)
                split.validation.push_back(rec);
            else
                split.train.push_back(rec);
        }
    }
    // stable order for reproducible downstream iteration
    auto by_id = [](const MovieRecord& a, const MovieRecord& b) { return a.id < b.id; };
    std::sort(split.train.begin(), split.train.end(), by_id);
    std::sort(split.validation.begin(), split.validation.end(), by_id);
    std::sort(split.test.begin(), split.test.end(), by_id);
    return split;
}

struct ClassDistribution {
    std::map<Rating, long long> ratings;
    std::map<Genre, long long> genres;
};

inline ClassDistribution class_distribution(const std::vector<MovieRecord>& corpus) {
    ClassDistribution dist;
    for (const auto& rec : corpus) {
        ++dist.ratings[rec.rating];
        for (Genre g : rec.genres) ++dist.genres[g];
    }
    return dist;
}

} // namespace scriptgauge
