#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "scriptgauge/baselines.hpp"
#include "scriptgauge/grad_check.hpp"
#include "test_support.hpp"

using namespace scriptgauge;

namespace {

// Independent reference for the threshold search: enumerate every monotone
// 4-tuple over the candidate cuts and score it sample by sample.
ThresholdModel brute_fit(const std::vector<std::pair<double, Rating>>& train) {
    std::vector<double> ratios;
    for (const auto& [r, _] : train) ratios.push_back(r);
    std::sort(ratios.begin(), ratios.end());
    ratios.erase(std::unique(ratios.begin(), ratios.end()), ratios.end());
    std::vector<double> cands{0.0};
    for (std::size_t i = 0; i + 1 < ratios.size(); ++i)
        cands.push_back(0.5 * (ratios[i] + ratios[i + 1]));
    cands.push_back(1.0);
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());

    std::vector<int> gold;
    for (const auto& [_, g] : train) gold.push_back(static_cast<int>(g));

    ThresholdModel best;
    best.train_weighted_f1 = -1.0;
    const std::size_t m = cands.size();
    for (std::size_t i1 = 0; i1 < m; ++i1)
        for (std::size_t i2 = i1; i2 < m; ++i2)
            for (std::size_t i3 = i2; i3 < m; ++i3)
                for (std::size_t i4 = i3; i4 < m; ++i4) {
                    ThresholdModel cur;
                    cur.thresholds = {cands[i1], cands[i2], cands[i3], cands[i4]};
                    std::vector<int> pred;
                    pred.reserve(train.size());
                    for (const auto& [r, _] : train)
                        pred.push_back(static_cast<int>(threshold_predict(cur, r)));
                    const double f1 = weighted_f1(gold, pred, 5);
                    if (f1 > best.train_weighted_f1) {
                        best.train_weighted_f1 = f1;
                        best.thresholds = cur.thresholds;
                    }
                }
    return best;
}

std::vector<const Sample*> ptrs(const std::vector<Sample>& samples) {
    std::vector<const Sample*> out;
    for (const auto& s : samples) out.push_back(&s);
    return out;
}

CnnClassifier<double> make_cnn(CnnConfig cfg, int vocab_words, std::uint64_t emb_seed) {
    auto vocab = sgtest::make_vocab(vocab_words);
    auto emb = sgtest::make_embedding(vocab, cfg.base.emb_dim, emb_seed);
    return CnnClassifier<double>(std::move(cfg), std::move(vocab), std::move(emb));
}

CnnConfig tiny_cnn_config(std::uint64_t seed) {
    CnnConfig cfg;
    cfg.base = sgtest::tiny_config(9, 3, 4, 4, seed);
    cfg.kernel_widths = {2, 3};
    cfg.filters_per_width = 2;
    return cfg;
}

} // namespace

// ---------------------------------------------------------------------------
// threshold baseline
// ---------------------------------------------------------------------------

TEST_CASE("threshold prediction uses half-open intervals, higher class at cuts") {
    ThresholdModel m;
    m.thresholds = {0.1, 0.2, 0.3, 0.4};
    CHECK(threshold_predict(m, 0.0) == Rating::G);
    CHECK(threshold_predict(m, 0.09) == Rating::G);
    CHECK(threshold_predict(m, 0.1) == Rating::PG);   // boundary -> higher class
    CHECK(threshold_predict(m, 0.2) == Rating::PG13);
    CHECK(threshold_predict(m, 0.3) == Rating::R);
    CHECK(threshold_predict(m, 0.4) == Rating::NC17);
    CHECK(threshold_predict(m, 1.0) == Rating::NC17);
    CHECK_THROWS_AS(threshold_predict(m, -0.01), std::invalid_argument);
    CHECK_THROWS_AS(threshold_predict(m, 1.01), std::invalid_argument);
}

TEST_CASE("threshold prediction is monotone in the ratio") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        ThresholdModel m;
        std::array<double, 4> t{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
        std::sort(t.begin(), t.end());
        m.thresholds = t;
        int prev = 0;
        for (double r = 0.0; r <= 1.0; r += 0.01) {
            const int cur = static_cast<int>(threshold_predict(m, r));
            CHECK(cur >= prev);
            prev = cur;
        }
    }
}

TEST_CASE("threshold fit matches brute-force enumeration on small sets") {
    Rng rng(777);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(28)); // <= 30 samples
        std::vector<std::pair<double, Rating>> train;
        for (int i = 0; i < n; ++i)
            train.emplace_back(rng.uniform(), static_cast<Rating>(rng.below(kNumRatings)));
        auto fast = fit_thresholds(train);
        auto slow = brute_fit(train);
        CHECK(std::abs(fast.train_weighted_f1 - slow.train_weighted_f1) < 1e-12);
        for (int j = 0; j < 4; ++j) CHECK(fast.thresholds[j] == slow.thresholds[j]);
    }
}

TEST_CASE("threshold fit is exact on separable data") {
    // class bands with clear gaps
    std::vector<std::pair<double, Rating>> train;
    Rng rng(5);
    const double centers[5] = {0.05, 0.25, 0.45, 0.65, 0.9};
    for (int c = 0; c < 5; ++c)
        for (int i = 0; i < 6; ++i)
            train.emplace_back(centers[c] + 0.02 * (rng.uniform() - 0.5),
                               static_cast<Rating>(c));
    auto model = fit_thresholds(train);
    CHECK(model.train_weighted_f1 == doctest::Approx(1.0).epsilon(1e-12));
    for (const auto& [r, g] : train) CHECK(threshold_predict(model, r) == g);
}

TEST_CASE("threshold fit handles degenerate inputs") {
    CHECK_THROWS_AS(fit_thresholds({}), std::invalid_argument);
    // single sample: perfect score must be reachable
    auto m = fit_thresholds({{0.5, Rating::PG13}});
    CHECK(m.train_weighted_f1 == doctest::Approx(1.0));
    CHECK(threshold_predict(m, 0.5) == Rating::PG13);
    // all identical ratios, mixed labels
    auto m2 = fit_thresholds({{0.3, Rating::G}, {0.3, Rating::R}, {0.3, Rating::R}});
    CHECK(m2.train_weighted_f1 > 0.0);
}

TEST_CASE("candidate thinning keeps exact enumeration for small inputs") {
    std::vector<double> ratios{0.1, 0.2, 0.3, 0.2};
    auto cands = detail::threshold_candidates(ratios, 128);
    REQUIRE(cands.size() == 4);
    CHECK(cands[0] == 0.0);
    CHECK(cands[1] == 0.5 * (0.1 + 0.2));
    CHECK(cands[2] == 0.5 * (0.2 + 0.3));
    CHECK(cands[3] == 1.0);

    std::vector<double> many;
    Rng rng(3);
    for (int i = 0; i < 5000; ++i) many.push_back(rng.uniform());
    auto thinned = detail::threshold_candidates(many, 128);
    CHECK(thinned.size() <= 128);
    CHECK(thinned.front() == 0.0);
    CHECK(thinned.back() == 1.0);
    CHECK(std::is_sorted(thinned.begin(), thinned.end()));
}

// ---------------------------------------------------------------------------
// SVM baseline
// ---------------------------------------------------------------------------

TEST_CASE("svm separates one-hot classes perfectly") {
    // feature i fires exactly for class i
    std::vector<SparseVector> xs;
    std::vector<int> ys;
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        const int c = static_cast<int>(rng.below(kNumRatings));
        SparseVector x;
        x.entries = {{c, 1.0}, {5 + c, 0.5}};
        xs.push_back(std::move(x));
        ys.push_back(c);
    }
    auto model = svm_fit(xs, ys, {}, {}, 10);
    CHECK(model.val_weighted_f1 == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 0; i < xs.size(); ++i) CHECK(svm_predict(model, xs[i]) == ys[i]);
}

TEST_CASE("svm binary training never ends worse than the zero vector") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 20, dim = 6;
        std::vector<SparseVector> xs;
        std::vector<int> ys;
        for (int i = 0; i < n; ++i) {
            SparseVector x;
            for (int j = 0; j < dim; ++j)
                if (rng.uniform() < 0.5) x.entries.push_back({j, 2.0 * rng.uniform() - 1.0});
            xs.push_back(std::move(x));
            ys.push_back(rng.uniform() < 0.5 ? 1 : -1);
        }
        const double lambda = 0.05;
        auto [w, b] = detail::svm_train_binary(xs, ys, dim, lambda, 15, Rng(trial));
        const std::vector<double> zero(dim, 0.0);
        CHECK(detail::svm_objective(w, b, lambda, xs, ys) <=
              detail::svm_objective(zero, 0.0, lambda, xs, ys) + 1e-12);
    }
}

TEST_CASE("svm fit is deterministic given the seed") {
    Rng rng(3);
    std::vector<SparseVector> xs;
    std::vector<int> ys;
    for (int i = 0; i < 40; ++i) {
        SparseVector x;
        x.entries = {{static_cast<int>(rng.below(8)), rng.uniform()}};
        xs.push_back(std::move(x));
        ys.push_back(static_cast<int>(rng.below(kNumRatings)));
    }
    auto a = svm_fit(xs, ys, {}, {}, 8, {1, 10}, 5, 99);
    auto b = svm_fit(xs, ys, {}, {}, 8, {1, 10}, 5, 99);
    CHECK(a.chosen_c == b.chosen_c);
    for (std::size_t c = 0; c < a.weights.size(); ++c) {
        CHECK(a.weights[c] == b.weights[c]); // bitwise
        CHECK(a.bias[c] == b.bias[c]);
    }
}

TEST_CASE("svm fit validates its inputs") {
    CHECK_THROWS_AS(svm_fit({}, {}, {}, {}, 0), std::invalid_argument);
    SparseVector x;
    x.entries = {{0, 1.0}};
    CHECK_THROWS_AS(svm_fit({x}, {0}, {}, {}, 1, {}), std::invalid_argument);
}

TEST_CASE("svm feature space: normalized n-gram counts plus indicator features") {
    MovieRecord rec;
    rec.id = "m1";
    rec.title = "t";
    rec.script = {"the dog", "the cat"};
    rec.genres = {Genre::Horror};
    rec.directors = {"Jane Doe"};
    rec.rating = Rating::R;

    SvmFeatureSpace space;
    space.build({rec});
    // unigrams: the(x2 types once), dog, cat; bigrams: "the dog", "the cat";
    // genre + director indicators; plus 10 emotion slots
    CHECK(space.dim() == 5 + 2 + 10);

    std::array<double, kNumEmotionCategories> emotion{};
    emotion[3] = 0.25;
    auto vec = space.featurize(rec, emotion);

    // counts: the=2, dog=1, cat=1, the-dog=1, the-cat=1 -> L2 norm = sqrt(8)
    const double norm = std::sqrt(8.0);
    double the_val = 0.0, genre_val = 0.0, emo_val = 0.0;
    double sq_ngram = 0.0;
    int n_entries = 0;
    for (const auto& [idx, v] : vec.entries) {
        ++n_entries;
        if (idx < 5) sq_ngram += v * v;
        if (idx == 0) the_val = v;       // first interned key is "u:the"
        if (idx == 5) genre_val = v;     // then g:Horror
        if (idx == 7 + 3) emo_val = v;   // emotion block after 7 sparse keys
    }
    CHECK(n_entries == 5 + 1 + 1 + 1);
    CHECK(the_val == doctest::Approx(2.0 / norm));
    CHECK(sq_ngram == doctest::Approx(1.0).epsilon(1e-12)); // unit-normalized
    CHECK(genre_val == 1.0);
    CHECK(emo_val == doctest::Approx(0.25));

    // unseen vocabulary is ignored at featurize time
    MovieRecord other = rec;
    other.script = {"completely new words"};
    other.genres = {Genre::Comedy};
    other.directors = {"Nobody"};
    auto vec2 = space.featurize(other, {});
    CHECK(vec2.entries.empty());
}

// ---------------------------------------------------------------------------
// CNN baseline
// ---------------------------------------------------------------------------

TEST_CASE("cnn gradient check on a small batch") {
    // Same conditioning rules as the main model: draws are skipped when some
    // derivative sits below the central-difference noise floor, a dense
    // feature is ReLU-active for every sample (batch norm flattens its bias
    // direction exactly), or a pre-activation sits on the ReLU kink.
    int checked = 0;
    for (int attempt = 0; attempt < 100 && checked < 2; ++attempt) {
        auto cfg = tiny_cnn_config(11 + attempt);
        auto vocab = sgtest::make_vocab(10);
        auto emb = sgtest::make_embedding(vocab, cfg.base.emb_dim, 5 + attempt, 2.0f);
        CnnClassifier<double> model(cfg, vocab, emb);
        for (auto& p : model.conv_w)
            for (auto& v : p.value.data) v *= 3.0;
        for (auto& v : model.w1.value.data) v *= 3.0;
        for (auto& v : model.w2.value.data) v *= 4.0;
        Rng prng(70 + attempt);
        for (auto& v : model.b1.value.data) v += -0.4 + 0.4 * prng.uniform();
        for (auto* p : {&model.b2, &model.bn_beta})
            for (auto& v : p->value.data) v += 0.3 * (2.0 * prng.uniform() - 1.0);
        for (auto& p : model.conv_b)
            for (auto& v : p.value.data) v += 0.3 * (2.0 * prng.uniform() - 1.0);

        Rng rng(900 + attempt);
        std::vector<Sample> batch;
        for (int i = 0; i < 3; ++i)
            batch.push_back(sgtest::random_sample(rng, cfg.base, model.vocab.size(),
                                                  cfg.max_width() +
                                                      static_cast<int>(rng.below(5))));
        auto bp = ptrs(batch);

        CnnClassifier<double>::BatchTape tape;
        model.forward_batch(bp, Mode::Train, tape, nullptr, false);
        bool good = true;
        for (int j = 0; j < cfg.base.dense && good; ++j) {
            bool inactive = false;
            for (const auto& st : tape.samples) {
                if (std::abs(st.z1[j]) < 1e-3) {
                    good = false;
                    break;
                }
                if (st.z1[j] < 0.0) inactive = true;
            }
            if (!inactive) good = false;
        }
        if (!good) continue;
        model.zero_grads();
        model.batch_loss_and_grad(bp);
        for (auto* p : model.parameters())
            for (double g : p->grad.data)
                if (g != 0.0 && std::abs(g) < 2e-6) good = false;
        if (!good) continue;

        ++checked;
        auto report = grad_check<double>([&] { return model.batch_loss(bp); },
                                         model.parameters());
        INFO("attempt " << attempt << " max rel err " << report.max_rel_err);
        CHECK(report.passed);
    }
    CHECK(checked >= 1);
}

TEST_CASE("cnn rejects sequences shorter than the widest kernel") {
    auto cfg = tiny_cnn_config(4);
    auto model = make_cnn(cfg, 10, 6);
    Rng rng(2);
    auto s = sgtest::random_sample(rng, cfg.base, model.vocab.size(), cfg.max_width() - 1);
    CHECK_THROWS_WITH_AS(model.forward(s, Mode::Infer), doctest::Contains("kernel"),
                         std::invalid_argument);
    CnnClassifier<double>::BatchTape tape;
    CHECK_THROWS_AS(model.forward_batch({}, Mode::Infer, tape, nullptr, false),
                    std::invalid_argument);
}

TEST_CASE("cnn kernel width larger than max_length is rejected at construction") {
    auto cfg = tiny_cnn_config(4);
    cfg.kernel_widths = {cfg.base.max_length + 1};
    auto vocab = sgtest::make_vocab(10);
    auto emb = sgtest::make_embedding(vocab, cfg.base.emb_dim, 1);
    CHECK_THROWS_AS(CnnClassifier<double>(cfg, vocab, emb), std::invalid_argument);
}

TEST_CASE("cnn forward ignores trailing PAD capacity") {
    auto cfg_small = tiny_cnn_config(12);
    auto cfg_big = cfg_small;
    cfg_big.base.max_length = 30;
    auto vocab = sgtest::make_vocab(10);
    auto emb = sgtest::make_embedding(vocab, cfg_small.base.emb_dim, 44);
    CnnClassifier<double> a(cfg_small, vocab, emb);
    CnnClassifier<double> b(cfg_big, vocab, emb);
    Rng rng(15);
    auto s = sgtest::random_sample(rng, cfg_small.base, vocab.size(), 6);
    Sample s_long = s;
    s_long.seq.indices.resize(30, Vocabulary::kPad);
    auto fa = a.forward(s, Mode::Infer);
    auto fb = b.forward(s_long, Mode::Infer);
    for (std::size_t i = 0; i < fa.probs.size(); ++i)
        CHECK(fa.probs[i] == doctest::Approx(fb.probs[i]).epsilon(1e-12));
}

TEST_CASE("cnn max pooling: constant input makes length irrelevant") {
    auto cfg = tiny_cnn_config(22);
    auto model = make_cnn(cfg, 10, 9);
    Sample short_s, long_s;
    for (auto* s : {&short_s, &long_s}) {
        s->seq.indices.assign(static_cast<std::size_t>(cfg.base.max_length),
                              Vocabulary::kPad);
        s->emotion.fill(0.5);
        s->genre.assign(kNumGenres, 0.0f);
        s->label = 0;
    }
    // the same token everywhere: every window is identical, so the pooled
    // max cannot depend on how many windows there are
    short_s.seq.true_length = 4;
    long_s.seq.true_length = 9;
    for (int t = 0; t < 4; ++t) short_s.seq.indices[t] = 3;
    for (int t = 0; t < 9; ++t) long_s.seq.indices[t] = 3;
    auto fa = model.forward(short_s, Mode::Infer);
    auto fb = model.forward(long_s, Mode::Infer);
    for (std::size_t i = 0; i < fa.probs.size(); ++i)
        CHECK(fa.probs[i] == doctest::Approx(fb.probs[i]).epsilon(1e-12));
}

TEST_CASE("cnn with zeroed output layer is uniform") {
    auto cfg = tiny_cnn_config(7);
    auto model = make_cnn(cfg, 10, 3);
    model.w2.value.zero();
    model.b2.value.zero();
    Rng rng(1);
    auto s = sgtest::random_sample(rng, cfg.base, model.vocab.size(), 5);
    auto fwd = model.forward(s, Mode::Infer);
    for (double p : fwd.probs) CHECK(p == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("cnn trains: loss drops on a small separable set") {
    auto cfg = tiny_cnn_config(77);
    cfg.base.epochs = 60;
    cfg.base.batch_size = 5;
    cfg.base.learning_rate = 0.02;
    cfg.base.dropout = 0.0;
    cfg.base.l2_lambda = 0.0;
    cfg.base.use_emotion = false;
    cfg.base.use_genre = false;

    std::vector<Sample> train;
    Rng rng(6);
    for (int c = 0; c < 5; ++c)
        for (int rep = 0; rep < 2; ++rep) {
            Sample s;
            s.id = "c" + std::to_string(c);
            s.seq.indices.assign(static_cast<std::size_t>(cfg.base.max_length),
                                 Vocabulary::kPad);
            s.seq.true_length = 5;
            for (int t = 0; t < 5; ++t)
                s.seq.indices[t] = 2 + c * 3 + static_cast<int>(rng.below(3));
            s.label = c;
            train.push_back(std::move(s));
        }
    auto vocab = sgtest::make_vocab(17);
    auto emb = sgtest::make_embedding(vocab, cfg.base.emb_dim, 5, 2.0f);
    CnnClassifier<double> model(cfg, vocab, emb);
    auto history = train_model(model, train, train);
    CHECK(history.train_loss.back() < history.train_loss.front());
    CHECK(history.best_val_f1 > 0.6);
}
