#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace scriptgauge {

// MPAA rating, ordered from most to least child-appropriate.
enum class Rating : int { G = 0, PG = 1, PG13 = 2, R = 3, NC17 = 4 };

inline constexpr std::size_t kNumRatings = 5;

inline constexpr std::array<std::string_view, kNumRatings> kRatingNames = {
    "G", "PG", "PG13", "R", "NC17"};

inline std::string_view to_string(Rating r) {
    return kRatingNames[static_cast<std::size_t>(r)];
}

// Accepts "PG-13"/"PG13" and "NC-17"/"NC17" as synonyms, case-insensitive.
inline std::optional<Rating> parse_rating(std::string_view s) {
    std::string up;
    up.reserve(s.size());
    for (char c : s) {
        if (c == '-') continue;
        up.push_back(c >= 'a' && c <= 'z' ? static_cast<char>(c - 32) : c);
    }
    if (up == "G") return Rating::G;
    if (up == "PG") return Rating::PG;
    if (up == "PG13") return Rating::PG13;
    if (up == "R") return Rating::R;
    if (up == "NC17") return Rating::NC17;
    return std::nullopt;
}

// Closed set of 24 movie genres in fixed order.
enum class Genre : int {
    ScienceFiction = 0,
    Action,
    Horror,
    Animation,
    Crime,
    Adventure,
    Romance,
    History,
    News,
    Western,
    Comedy,
    War,
    Thriller,
    Short,
    Mystery,
    FilmNoir,
    Musical,
    Drama,
    Documentary,
    Family,
    Sport,
    Biography,
    Fantasy,
    Music
};

inline constexpr std::size_t kNumGenres = 24;

inline constexpr std::array<std::string_view, kNumGenres> kGenreNames = {
    "Science-Fiction", "Action",  "Horror",    "Animation", "Crime",
    "Adventure",       "Romance", "History",   "News",      "Western",
    "Comedy",          "War",     "Thriller",  "Short",     "Mystery",
    "Film-Noir",       "Musical", "Drama",     "Documentary", "Family",
    "Sport",           "Biography", "Fantasy", "Music"};

inline std::string_view to_string(Genre g) {
    return kGenreNames[static_cast<std::size_t>(g)];
}

inline std::optional<Genre> parse_genre(std::string_view s) {
    auto fold = [](std::string_view v) {
        std::string out;
        for (char c : v) {
            if (c == '-' || c == ' ' || c == '_') continue;
            out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c + 32) : c);
        }
        return out;
    };
    const std::string key = fold(s);
    // "scifi" is a common alias in metadata dumps
    if (key == "scifi") return Genre::ScienceFiction;
    for (std::size_t i = 0; i < kNumGenres; ++i) {
        if (key == fold(kGenreNames[i])) return static_cast<Genre>(i);
    }
    return std::nullopt;
}

} // namespace scriptgauge
