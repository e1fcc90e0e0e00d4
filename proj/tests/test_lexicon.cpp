#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "scriptgauge/lexicon.hpp"
#include "scriptgauge/rng.hpp"

using namespace scriptgauge;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
    fs::path p = fs::temp_directory_path() / name;
    std::ofstream out(p);
    out << content;
    return p;
}

// brute-force recount, independent of the implementation's bitmask path
std::array<double, 10> brute_force_emotion(const std::vector<std::string>& tokens,
                                           const std::vector<std::pair<std::string, std::string>>& word_cats) {
    std::array<double, 10> e{};
    for (std::size_t cat = 0; cat < 10; ++cat) {
        long long count = 0;
        for (const auto& tok : tokens)
            for (const auto& [w, c] : word_cats)
                if (w == tok && c == kEmotionCategories[cat]) ++count;
        e[cat] = static_cast<double>(count) / static_cast<double>(tokens.size());
    }
    return e;
}

} // namespace

TEST_CASE("load_emotion_lexicon honors the binary flag") {
    auto path = temp_file("sg_nrc.tsv",
                          "abandon\tfear\t1\n"
                          "abandon\tjoy\t0\n"
                          "happy\tjoy\t1\n"
                          "happy\tpositive\t1\n");
    auto lex = load_emotion_lexicon(path.string());
    CHECK(lex.categories_of("abandon") == (1u << emotion_category_index("fear")));
    const auto happy = lex.categories_of("happy");
    CHECK((happy & (1u << emotion_category_index("joy"))) != 0);
    CHECK((happy & (1u << emotion_category_index("positive"))) != 0);
    CHECK(lex.categories_of("absent") == 0);
    fs::remove(path);
}

TEST_CASE("load_emotion_lexicon rejects malformed rows") {
    auto bad_flag = temp_file("sg_nrc_badflag.tsv", "word\tjoy\t2\n");
    CHECK_THROWS_AS(load_emotion_lexicon(bad_flag.string()), std::runtime_error);
    auto bad_cat = temp_file("sg_nrc_badcat.tsv", "word\televation\t1\n");
    CHECK_THROWS_AS(load_emotion_lexicon(bad_cat.string()), std::runtime_error);
    auto bad_arity = temp_file("sg_nrc_arity.tsv", "word\tjoy\n");
    CHECK_THROWS_AS(load_emotion_lexicon(bad_arity.string()), std::runtime_error);
    auto empty = temp_file("sg_nrc_empty.tsv", "");
    CHECK(load_emotion_lexicon(empty.string()).size() == 0);
    fs::remove(bad_flag);
    fs::remove(bad_cat);
    fs::remove(bad_arity);
    fs::remove(empty);
}

TEST_CASE("emotion_vector matches a hand count") {
    EmotionLexicon lex;
    lex.add("happy", emotion_category_index("joy"));
    lex.add("happy", emotion_category_index("positive"));
    lex.add("dead", emotion_category_index("sadness"));
    lex.add("dead", emotion_category_index("fear"));
    lex.add("dead", emotion_category_index("negative"));

    std::vector<std::string> tokens = {"happy", "happy", "dead"};
    auto e = emotion_vector(tokens, lex);
    CHECK(e[static_cast<std::size_t>(emotion_category_index("joy"))] == doctest::Approx(2.0 / 3).epsilon(1e-12));
    CHECK(e[static_cast<std::size_t>(emotion_category_index("positive"))] == doctest::Approx(2.0 / 3).epsilon(1e-12));
    CHECK(e[static_cast<std::size_t>(emotion_category_index("sadness"))] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(e[static_cast<std::size_t>(emotion_category_index("fear"))] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(e[static_cast<std::size_t>(emotion_category_index("negative"))] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(e[static_cast<std::size_t>(emotion_category_index("anger"))] == 0.0);

    // no lexicon hits: all-zero vector
    auto zero = emotion_vector({"the", "quick", "fox"}, lex);
    for (double v : zero) CHECK(v == 0.0);

    // duplication invariance
    std::vector<std::string> doubled = tokens;
    doubled.insert(doubled.end(), tokens.begin(), tokens.end());
    auto e2 = emotion_vector(doubled, lex);
    for (std::size_t i = 0; i < 10; ++i) CHECK(e[i] == doctest::Approx(e2[i]).epsilon(1e-15));
}

TEST_CASE("emotion_vector equals brute-force recount on random scripts") {
    const std::vector<std::pair<std::string, std::string>> word_cats = {
        {"kill", "anger"}, {"kill", "fear"}, {"kill", "negative"},
        {"smile", "joy"},  {"smile", "positive"}, {"wait", "anticipation"},
        {"rot", "disgust"}, {"cry", "sadness"}, {"gasp", "surprise"},
        {"friend", "trust"}, {"friend", "positive"}};
    EmotionLexicon lex;
    for (const auto& [w, c] : word_cats) lex.add(w, emotion_category_index(c));
    const std::vector<std::string> pool = {"kill", "smile", "wait", "rot", "cry",
                                           "gasp", "friend", "the", "a", "walk"};
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> tokens;
        const int len = 1 + static_cast<int>(rng.below(60));
        for (int i = 0; i < len; ++i) tokens.push_back(pool[rng.below(pool.size())]);
        auto got = emotion_vector(tokens, lex);
        auto want = brute_force_emotion(tokens, word_cats);
        for (std::size_t i = 0; i < 10; ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        // permutation invariance
        auto shuffled = tokens;
        rng.shuffle(shuffled.begin(), shuffled.end());
        auto perm = emotion_vector(shuffled, lex);
        for (std::size_t i = 0; i < 10; ++i) CHECK(perm[i] == got[i]);
    }
}

TEST_CASE("load_bad_words unions, folds case, and skips comments") {
    auto f1 = temp_file("sg_bad1.txt", "a\nb\n");
    auto f2 = temp_file("sg_bad2.txt", "b\nc\n");
    auto list = load_bad_words({f1.string(), f2.string()});
    CHECK(list.size() == 3);
    CHECK(list.contains_single("a"));
    CHECK(list.contains_single("b"));
    CHECK(list.contains_single("c"));

    auto f3 = temp_file("sg_bad3.txt", "Fuck\n");
    auto folded = load_bad_words({f3.string()});
    CHECK(folded.contains_single("fuck"));

    auto f4 = temp_file("sg_bad4.txt",
                        "# header comment\n"
                        "one\ntwo\nthree\n"
                        "\n"
                        "# another comment\n"
                        "four\nfive\nsix\nseven\n");
    CHECK(load_bad_words({f4.string()}).size() == 7);

    CHECK_THROWS_AS(load_bad_words({"/nonexistent/badwords.txt"}), std::runtime_error);
    fs::remove(f1);
    fs::remove(f2);
    fs::remove(f3);
    fs::remove(f4);
}

TEST_CASE("bad_word_ratio counts matches over total tokens") {
    BadWordList list;
    list.add("damn");
    std::vector<std::string> tokens(200, "fine");
    for (int i = 0; i < 4; ++i) tokens[static_cast<std::size_t>(i * 37)] = "damn";
    CHECK(bad_word_ratio(tokens, list) == doctest::Approx(0.02).epsilon(1e-15));
    CHECK(bad_word_ratio({"all", "clean"}, list) == 0.0);
    CHECK_THROWS_AS(bad_word_ratio({}, list), std::invalid_argument);

    // monotone: adding a bad token increases the match count
    const long long before = count_bad_words(tokens, list);
    tokens.push_back("damn");
    CHECK(count_bad_words(tokens, list) == before + 1);
}

TEST_CASE("multi-word bad entries match contiguous token runs") {
    BadWordList list;
    list.add("son of a gun");
    list.add("blow up");
    std::vector<std::string> tokens = {"you", "son", "of", "a", "gun", "blow", "up", "now"};
    CHECK(count_bad_words(tokens, list) == 2);
    std::vector<std::string> crossed = {"son", "of", "gun"};
    CHECK(count_bad_words(crossed, list) == 0);
}
