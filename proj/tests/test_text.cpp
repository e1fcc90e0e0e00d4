#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "scriptgauge/rng.hpp"
#include "scriptgauge/text.hpp"

using namespace scriptgauge;
namespace fs = std::filesystem;

TEST_CASE("tokenize lowercases, strips edge punctuation, keeps apostrophes") {
    CHECK(tokenize("Your wife was murdered.") ==
          std::vector<std::string>{"your", "wife", "was", "murdered"});
    CHECK(tokenize("") == std::vector<std::string>{});
    CHECK(tokenize("Don't -- STOP!") == std::vector<std::string>{"don't", "stop"});
    CHECK(tokenize("  spaced\tout\nlines ") == std::vector<std::string>{"spaced", "out", "lines"});
    CHECK(tokenize("'quoted'") == std::vector<std::string>{"quoted"});
    CHECK(tokenize("...") == std::vector<std::string>{});
}

TEST_CASE("build_vocabulary orders by frequency then lexicographically") {
    std::vector<std::vector<std::string>> train = {{"a", "a", "b"}, {"a"}};
    auto vocab = build_vocabulary(train, 1);
    CHECK(vocab.size() == 4); // PAD, UNK, a, b
    CHECK(vocab.index_of("a") == 2);
    CHECK(vocab.index_of("b") == 3);

    auto thresholded = build_vocabulary(train, 2);
    CHECK(thresholded.size() == 3);
    CHECK(thresholded.index_of("b") == Vocabulary::kUnk);

    CHECK_THROWS_AS(build_vocabulary({}, 1), std::invalid_argument);

    // frequency ties break lexicographically
    auto tied = build_vocabulary({{"zebra", "apple"}}, 1);
    CHECK(tied.index_of("apple") == 2);
    CHECK(tied.index_of("zebra") == 3);
}

TEST_CASE("encode_sequence pads, truncates, and maps OOV to UNK") {
    std::vector<std::vector<std::string>> train = {{"alpha", "beta", "gamma"}};
    auto vocab = build_vocabulary(train, 1);

    auto padded = encode_sequence({"alpha", "beta", "gamma"}, vocab, 5);
    CHECK(padded.true_length == 3);
    CHECK(padded.indices.size() == 5);
    CHECK(padded.indices[3] == Vocabulary::kPad);
    CHECK(padded.indices[4] == Vocabulary::kPad);

    std::vector<std::string> over(11, "alpha");
    auto truncated = encode_sequence(over, vocab, 10);
    CHECK(truncated.true_length == 10);
    CHECK(truncated.indices.size() == 10);

    auto oov = encode_sequence({"delta"}, vocab, 2);
    CHECK(oov.indices[0] == Vocabulary::kUnk);

    CHECK_THROWS_AS(encode_sequence({"alpha"}, vocab, 0), std::invalid_argument);
}

TEST_CASE("encode/decode round-trip for in-vocabulary tokens") {
    Rng rng(17);
    std::vector<std::string> pool = {"one", "two", "three", "four", "five", "six"};
    auto vocab = build_vocabulary({pool}, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::string> tokens;
        const int len = 1 + static_cast<int>(rng.below(8));
        for (int i = 0; i < len; ++i) tokens.push_back(pool[rng.below(pool.size())]);
        auto seq = encode_sequence(tokens, vocab, 8);
        std::vector<std::string> decoded;
        for (int i = 0; i < seq.true_length; ++i)
            decoded.push_back(vocab.word_at(seq.indices[static_cast<std::size_t>(i)]));
        CHECK(decoded == tokens);
    }
}

TEST_CASE("load_embeddings fills rows, zeroes PAD/UNK/misses, validates dims") {
    auto path = fs::temp_directory_path() / "sg_embed.txt";
    {
        std::ofstream out(path);
        out << "a 0.1 0.2\n";
        out << "zzz 9 9\n"; // not in vocab, ignored
    }
    auto vocab = build_vocabulary({{"a", "b"}}, 1);
    auto table = load_embeddings(path.string(), vocab, 2);
    CHECK(table.weights.at(vocab.index_of("a"), 0) == doctest::Approx(0.1f));
    CHECK(table.weights.at(vocab.index_of("a"), 1) == doctest::Approx(0.2f));
    CHECK(table.weights.at(Vocabulary::kPad, 0) == 0.0f);
    CHECK(table.weights.at(Vocabulary::kUnk, 0) == 0.0f);
    CHECK(table.weights.at(vocab.index_of("b"), 0) == 0.0f); // miss rule
    CHECK(table.covered == 1);

    {
        std::ofstream out(path);
        out << "a 0.1\n"; // d-1 numbers
    }
    CHECK_THROWS_WITH_AS(load_embeddings(path.string(), vocab, 2),
                         doctest::Contains("line 1"), std::runtime_error);
    fs::remove(path);
}

TEST_CASE("embedding coverage equals brute-force set intersection") {
    auto path = fs::temp_directory_path() / "sg_embed_cov.txt";
    std::vector<std::string> file_words = {"red", "green", "blue"};
    {
        std::ofstream out(path);
        for (const auto& w : file_words) out << w << " 1 2 3\n";
    }
    std::vector<std::string> corpus_words = {"red", "blue", "yellow", "purple"};
    auto vocab = build_vocabulary({corpus_words}, 1);
    auto table = load_embeddings(path.string(), vocab, 3);
    int expected = 0;
    for (const auto& w : corpus_words)
        if (std::find(file_words.begin(), file_words.end(), w) != file_words.end()) ++expected;
    CHECK(table.covered == expected);
    fs::remove(path);
}

TEST_CASE("genre_multi_hot popcount equals genre count") {
    auto one = genre_multi_hot({Genre::Drama});
    CHECK(one.size() == 24);
    CHECK(std::count(one.begin(), one.end(), 1.0f) == 1);
    CHECK(one[static_cast<std::size_t>(Genre::Drama)] == 1.0f);

    auto two = genre_multi_hot({Genre::Drama, Genre::Comedy});
    CHECK(std::count(two.begin(), two.end(), 1.0f) == 2);

    std::set<Genre> all;
    for (std::size_t i = 0; i < kNumGenres; ++i) all.insert(static_cast<Genre>(i));
    auto saturated = genre_multi_hot(all);
    CHECK(std::count(saturated.begin(), saturated.end(), 1.0f) == 24);

    CHECK_THROWS_AS(genre_multi_hot({}), std::invalid_argument);
}
