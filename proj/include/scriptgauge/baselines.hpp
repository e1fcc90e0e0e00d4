#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "scriptgauge/eval.hpp"
#include "scriptgauge/model.hpp"
#include "scriptgauge/rating.hpp"

namespace scriptgauge {

// ---------------------------------------------------------------------------
// Threshold baseline: four monotone cut points over the bad-word ratio.
// ---------------------------------------------------------------------------

struct ThresholdModel {
    std::array<double, 4> thresholds{}; // t1 <= t2 <= t3 <= t4
    double train_weighted_f1 = 0.0;
};

// Half-open intervals: the higher class wins at equality.
inline Rating threshold_predict(const ThresholdModel& model, double ratio) {
    if (ratio < 0.0 || ratio > 1.0)
        throw std::invalid_argument("threshold_predict: ratio out of [0,1]");
    if (ratio < model.thresholds[0]) return Rating::G;
    if (ratio < model.thresholds[1]) return Rating::PG;
    if (ratio < model.thresholds[2]) return Rating::PG13;
    if (ratio < model.thresholds[3]) return Rating::R;
    return Rating::NC17;
}

namespace detail {

// Candidate cuts: 0, 1, and midpoints between consecutive distinct observed
// ratios. Large candidate sets are thinned to a quantile grid; exact
// enumeration is preserved for small inputs.
inline std::vector<double> threshold_candidates(std::vector<double> ratios,
                                                std::size_t max_candidates) {
    std::sort(ratios.begin(), ratios.end());
    ratios.erase(std::unique(ratios.begin(), ratios.end()), ratios.end());
    std::vector<double> cands;
    cands.push_back(0.0);
    for (std::size_t i = 0; i + 1 < ratios.size(); ++i)
        cands.push_back(0.5 * (ratios[i] + ratios[i + 1]));
    cands.push_back(1.0);
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    if (cands.size() > max_candidates) {
        std::vector<double> thinned;
        thinned.reserve(max_candidates);
        for (std::size_t k = 0; k < max_candidates; ++k) {
            const std::size_t i =
                k * (cands.size() - 1) / (max_candidates - 1);
            thinned.push_back(cands[i]);
        }
        thinned.erase(std::unique(thinned.begin(), thinned.end()), thinned.end());
        cands = std::move(thinned);
    }
    return cands;
}

} // namespace detail

// Exhaustive search over monotone candidate 4-tuples maximizing training
// weighted F1; ties resolved to the lexicographically smallest tuple.
inline ThresholdModel fit_thresholds(const std::vector<std::pair<double, Rating>>& train,
                                     std::size_t max_candidates = 128) {
    if (train.empty()) throw std::invalid_argument("fit_thresholds: empty training set");
    std::vector<double> ratios;
    ratios.reserve(train.size());
    for (const auto& [r, _] : train) ratios.push_back(r);
    const auto cands = detail::threshold_candidates(ratios, max_candidates);
    const std::size_t m = cands.size();

    // samples sorted by ratio; a threshold t splits at pos(t) = #{ratio < t}
    std::vector<std::pair<double, int>> sorted;
    sorted.reserve(train.size());
    for (const auto& [r, g] : train) sorted.emplace_back(r, static_cast<int>(g));
    std::sort(sorted.begin(), sorted.end());

    const int n = static_cast<int>(sorted.size());
    const int k = static_cast<int>(kNumRatings);
    // prefix[c][i] = count of gold class c among the first i sorted samples
    std::vector<std::vector<int>> prefix(static_cast<std::size_t>(k),
                                         std::vector<int>(static_cast<std::size_t>(n) + 1, 0));
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < k; ++c)
            prefix[static_cast<std::size_t>(c)][static_cast<std::size_t>(i) + 1] =
                prefix[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] +
                (sorted[static_cast<std::size_t>(i)].second == c ? 1 : 0);

    std::vector<int> pos(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double t = cands[i];
        pos[i] = static_cast<int>(
            std::lower_bound(sorted.begin(), sorted.end(), std::make_pair(t, -1)) -
            sorted.begin());
    }

    auto segment_count = [&](int c, int lo, int hi) {
        return prefix[static_cast<std::size_t>(c)][static_cast<std::size_t>(hi)] -
               prefix[static_cast<std::size_t>(c)][static_cast<std::size_t>(lo)];
    };

    ThresholdModel best;
    best.train_weighted_f1 = -1.0;
    ConfusionMatrix cm(k);
    for (std::size_t i1 = 0; i1 < m; ++i1)
        for (std::size_t i2 = i1; i2 < m; ++i2)
            for (std::size_t i3 = i2; i3 < m; ++i3)
                for (std::size_t i4 = i3; i4 < m; ++i4) {
                    const std::array<int, 6> bounds = {0, pos[i1], pos[i2], pos[i3], pos[i4], n};
                    for (int pred = 0; pred < k; ++pred)
                        for (int gold = 0; gold < k; ++gold)
                            cm.at(gold, pred) = segment_count(
                                gold, bounds[static_cast<std::size_t>(pred)],
                                bounds[static_cast<std::size_t>(pred) + 1]);
                    const double f1 = weighted_f1_from(cm);
                    if (f1 > best.train_weighted_f1) {
                        best.train_weighted_f1 = f1;
                        best.thresholds = {cands[i1], cands[i2], cands[i3], cands[i4]};
                    }
                }
    return best;
}

// ---------------------------------------------------------------------------
// SVM baseline: one-vs-rest linear classifiers, primal hinge subgradient.
// ---------------------------------------------------------------------------

struct SparseVector {
    std::vector<std::pair<int, double>> entries; // sorted by index
};

// Feature index map built from training data only. Unigram and bigram counts
// are L2-normalized per document; genres and directors are binary
// indicators; the 10 emotion components are appended raw.
class SvmFeatureSpace {
public:
    void build(const std::vector<MovieRecord>& train) {
        for (const auto& rec : train) {
            for (const auto& utterance : rec.script) {
                const auto toks = tokenize(utterance);
                for (const auto& t : toks) intern("u:" + t);
                for (std::size_t i = 0; i + 1 < toks.size(); ++i)
                    intern("b:" + toks[i] + " " + toks[i + 1]);
            }
            for (Genre g : rec.genres) intern("g:" + std::string(to_string(g)));
            for (const auto& d : rec.directors) intern("d:" + d);
        }
        emotion_offset_ = static_cast<int>(index_.size());
    }

    int dim() const { return emotion_offset_ + static_cast<int>(kNumEmotionCategories); }

    SparseVector featurize(const MovieRecord& rec,
                           const std::array<double, kNumEmotionCategories>& emotion) const {
        std::map<int, double> acc;
        double sq = 0.0;
        auto add_count = [&](const std::string& key) {
            auto it = index_.find(key);
            if (it != index_.end()) acc[it->second] += 1.0;
        };
        for (const auto& utterance : rec.script) {
            const auto toks = tokenize(utterance);
            for (const auto& t : toks) add_count("u:" + t);
            // bigrams never cross utterance boundaries
            for (std::size_t i = 0; i + 1 < toks.size(); ++i)
                add_count("b:" + toks[i] + " " + toks[i + 1]);
        }
        for (const auto& [idx, v] : acc) sq += v * v;
        const double norm = sq > 0.0 ? std::sqrt(sq) : 1.0;
        for (auto& [idx, v] : acc) v /= norm;
        for (Genre g : rec.genres) {
            auto it = index_.find("g:" + std::string(to_string(g)));
            if (it != index_.end()) acc[it->second] = 1.0;
        }
        for (const auto& d : rec.directors) {
            auto it = index_.find("d:" + d);
            if (it != index_.end()) acc[it->second] = 1.0;
        }
        for (std::size_t j = 0; j < kNumEmotionCategories; ++j)
            if (emotion[j] != 0.0) acc[emotion_offset_ + static_cast<int>(j)] = emotion[j];
        SparseVector out;
        out.entries.assign(acc.begin(), acc.end());
        return out;
    }

private:
    void intern(const std::string& key) {
        index_.emplace(key, static_cast<int>(index_.size()));
    }

    std::unordered_map<std::string, int> index_;
    int emotion_offset_ = 0;
};

struct SvmModel {
    std::vector<std::vector<double>> weights; // one per class
    std::vector<double> bias;
    double chosen_c = 0.0;
    double val_weighted_f1 = 0.0;
};

namespace detail {

inline double sparse_dot(const std::vector<double>& w, const SparseVector& x) {
    double s = 0.0;
    for (const auto& [i, v] : x.entries) s += w[static_cast<std::size_t>(i)] * v;
    return s;
}

// (lambda/2)||w||^2 + mean hinge
inline double svm_objective(const std::vector<double>& w, double b, double lambda,
                            const std::vector<SparseVector>& xs, const std::vector<int>& ys) {
    double sq = 0.0;
    for (double v : w) sq += v * v;
    double hinge = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double margin = ys[i] * (sparse_dot(w, xs[i]) + b);
        hinge += std::max(0.0, 1.0 - margin);
    }
    return 0.5 * lambda * sq + hinge / static_cast<double>(xs.size());
}

// Pegasos-style subgradient descent; the best iterate by training objective
// (the zero vector included) is returned.
inline std::pair<std::vector<double>, double> svm_train_binary(
    const std::vector<SparseVector>& xs, const std::vector<int>& ys, int dim, double lambda,
    int epochs, Rng rng) {
    std::vector<double> w(static_cast<std::size_t>(dim), 0.0);
    double b = 0.0;
    std::vector<double> best_w = w;
    double best_b = 0.0;
    double best_obj = svm_objective(w, b, lambda, xs, ys);
    std::vector<std::size_t> order(xs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    long long t = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        for (std::size_t idx : order) {
            ++t;
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            const double margin = ys[idx] * (sparse_dot(w, xs[idx]) + b);
            const double shrink = 1.0 - eta * lambda;
            for (double& v : w) v *= shrink;
            if (margin < 1.0) {
                for (const auto& [i, v] : xs[idx].entries)
                    w[static_cast<std::size_t>(i)] += eta * ys[idx] * v;
                b += eta * ys[idx];
            }
        }
        const double obj = svm_objective(w, b, lambda, xs, ys);
        if (obj < best_obj) {
            best_obj = obj;
            best_w = w;
            best_b = b;
        }
    }
    return {std::move(best_w), best_b};
}

} // namespace detail

inline int svm_predict(const SvmModel& model, const SparseVector& x) {
    int best = 0;
    double best_score = -1e300;
    for (std::size_t c = 0; c < model.weights.size(); ++c) {
        const double score = detail::sparse_dot(model.weights[c], x) + model.bias[c];
        if (score > best_score) {
            best_score = score;
            best = static_cast<int>(c);
        }
    }
    return best;
}

// Grid search over C by validation weighted F1 (ties -> smaller C).
inline SvmModel svm_fit(const std::vector<SparseVector>& train_x, const std::vector<int>& train_y,
                        const std::vector<SparseVector>& val_x, const std::vector<int>& val_y,
                        int dim, const std::vector<double>& c_grid = {1, 10, 100, 1000},
                        int epochs = 20, std::uint64_t seed = 0) {
    if (dim <= 0) throw std::invalid_argument("svm_fit: feature dimension is 0");
    if (c_grid.empty()) throw std::invalid_argument("svm_fit: empty C grid");
    const int k = static_cast<int>(kNumRatings);
    SvmModel best;
    best.val_weighted_f1 = -1.0;
    Rng root(seed);
    for (std::size_t ci = 0; ci < c_grid.size(); ++ci) {
        const double c = c_grid[ci];
        const double lambda = 1.0 / (c * static_cast<double>(train_x.size()));
        SvmModel model;
        model.chosen_c = c;
        model.weights.resize(static_cast<std::size_t>(k));
        model.bias.resize(static_cast<std::size_t>(k));
        for (int cls = 0; cls < k; ++cls) {
            std::vector<int> ys;
            ys.reserve(train_y.size());
            for (int y : train_y) ys.push_back(y == cls ? 1 : -1);
            auto [w, b] = detail::svm_train_binary(
                train_x, ys, dim, lambda, epochs,
                root.split((ci << 8) | static_cast<std::uint64_t>(cls)));
            model.weights[static_cast<std::size_t>(cls)] = std::move(w);
            model.bias[static_cast<std::size_t>(cls)] = b;
        }
        double f1;
        if (!val_x.empty()) {
            std::vector<int> pred;
            pred.reserve(val_x.size());
            for (const auto& x : val_x) pred.push_back(svm_predict(model, x));
            f1 = weighted_f1(val_y, pred, k);
        } else {
            std::vector<int> pred;
            pred.reserve(train_x.size());
            for (const auto& x : train_x) pred.push_back(svm_predict(model, x));
            f1 = weighted_f1(train_y, pred, k);
        }
        model.val_weighted_f1 = f1;
        if (f1 > best.val_weighted_f1) best = std::move(model);
    }
    return best;
}

// ---------------------------------------------------------------------------
// CNN baseline: text convolutions replace the LSTM-with-attention encoder;
// the fusion/dense stack matches the main model.
// ---------------------------------------------------------------------------

struct CnnConfig {
    ModelConfig base;
    std::vector<int> kernel_widths = {3, 4, 5};
    int filters_per_width = 100;

    int pooled_dim() const {
        return filters_per_width * static_cast<int>(kernel_widths.size());
    }
    int fusion_input_dim() const {
        return pooled_dim() + (base.use_emotion ? 10 : 0) + (base.use_genre ? 24 : 0);
    }
    int max_width() const {
        return *std::max_element(kernel_widths.begin(), kernel_widths.end());
    }
};

template <typename T>
class CnnClassifier {
public:
    using scalar_type = T;

    ModelConfig config; // train_model reads epochs/batch/lr/dropout from here
    CnnConfig cnn;
    Vocabulary vocab;
    EmbeddingTable embedding;

    std::vector<Parameter<T>> conv_w; // per width: filters x (width*emb)
    std::vector<Parameter<T>> conv_b; // per width: filters x 1
    Parameter<T> w1, b1, bn_gamma, bn_beta, w2, b2;
    Tensor2<T> running_mean, running_var;
    std::map<std::string, AdamState<T>> adam;

    static constexpr double kBnEps = 1e-5;
    static constexpr double kBnMomentum = 0.9;

    CnnClassifier() = default;

    CnnClassifier(CnnConfig cfg, Vocabulary v, EmbeddingTable emb)
        : config(cfg.base), cnn(std::move(cfg)), vocab(std::move(v)), embedding(std::move(emb)) {
        config.validate();
        if (embedding.weights.rows != vocab.size() || embedding.dim != config.emb_dim)
            throw std::invalid_argument("CnnClassifier: embedding/vocab shape mismatch");
        if (cnn.max_width() > config.max_length)
            throw std::invalid_argument("CnnClassifier: kernel width exceeds sequence length");
        const int e = config.emb_dim, d = config.dense, k = config.n_classes;
        Rng rng = Rng(config.seed).split(0xc22);
        for (std::size_t wi = 0; wi < cnn.kernel_widths.size(); ++wi) {
            const int width = cnn.kernel_widths[wi];
            conv_w.emplace_back("conv" + std::to_string(width) + ".w",
                                cnn.filters_per_width, width * e);
            conv_b.emplace_back("conv" + std::to_string(width) + ".b",
                                cnn.filters_per_width, 1);
            conv_w.back().value.init_uniform(rng, width * e);
        }
        w1 = Parameter<T>("dense1.w", d, cnn.fusion_input_dim());
        b1 = Parameter<T>("dense1.b", d, 1);
        bn_gamma = Parameter<T>("bn.gamma", d, 1);
        bn_beta = Parameter<T>("bn.beta", d, 1);
        w2 = Parameter<T>("dense2.w", k, d);
        b2 = Parameter<T>("dense2.b", k, 1);
        w1.value.init_uniform(rng, cnn.fusion_input_dim());
        bn_gamma.value.fill(T(1));
        w2.value.init_uniform(rng, d);
        running_mean = Tensor2<T>(d, 1);
        running_var = Tensor2<T>(d, 1);
        running_var.fill(T(1));
        for (auto* p : parameters()) adam[p->name].init(p->value);
    }

    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out;
        for (auto& p : conv_w) out.push_back(&p);
        for (auto& p : conv_b) out.push_back(&p);
        for (auto* p : {&w1, &b1, &bn_gamma, &bn_beta, &w2, &b2}) out.push_back(p);
        return out;
    }

    std::vector<Parameter<T>*> l2_parameters() {
        std::vector<Parameter<T>*> out;
        for (auto& p : conv_w) out.push_back(&p);
        out.push_back(&w1);
        out.push_back(&w2);
        return out;
    }

    double sum_squared_weights() {
        double s = 0.0;
        for (auto* p : l2_parameters())
            for (T v : p->value.data) s += static_cast<double>(v) * static_cast<double>(v);
        return s;
    }

    void zero_grads() {
        for (auto* p : parameters()) p->zero_grad();
    }

    void adam_step() {
        for (auto* p : parameters()) adam[p->name].step(*p, config.learning_rate);
    }

    struct SampleTape {
        const Sample* sample = nullptr;
        int len = 0;
        std::vector<T> embedded;   // len x emb
        std::vector<T> pooled;     // pooled_dim, post-ReLU max
        std::vector<int> argmax;   // pooled_dim, -1 when the max is <= 0
        std::vector<T> fusion_in, z1, relu, xhat, dropout_mask, dropped, probs;
    };

    struct BatchTape {
        std::vector<SampleTape> samples;
        std::vector<T> mean, inv_std;
        bool train_mode = false;
    };

    ForwardResult<T> forward(const Sample& sample, Mode mode, Rng* dropout_rng = nullptr) {
        BatchTape tape;
        forward_batch({&sample}, mode, tape, dropout_rng, false);
        ForwardResult<T> res;
        res.probs = tape.samples[0].probs;
        res.true_length = tape.samples[0].len;
        res.predicted = static_cast<int>(std::max_element(res.probs.begin(), res.probs.end()) -
                                         res.probs.begin());
        return res;
    }

    void forward_batch(const std::vector<const Sample*>& batch, Mode mode, BatchTape& tape,
                       Rng* dropout_rng, bool update_running) {
        if (batch.empty()) throw std::invalid_argument("forward_batch: empty batch");
        const int e = config.emb_dim, d = config.dense, k = config.n_classes;
        const int pd = cnn.pooled_dim(), fin = cnn.fusion_input_dim();
        tape.train_mode = (mode == Mode::Train);
        tape.samples.clear();
        tape.samples.resize(batch.size());
        for (std::size_t bi = 0; bi < batch.size(); ++bi) {
            const Sample& s = *batch[bi];
            auto& st = tape.samples[bi];
            st.sample = &s;
            st.len = s.seq.true_length;
            if (st.len < cnn.max_width())
                throw std::invalid_argument(
                    "cnn forward: sequence shorter than the widest kernel");
            st.embedded.assign(static_cast<std::size_t>(st.len) * e, T(0));
            for (int t = 0; t < st.len; ++t) {
                const float* row =
                    embedding.weights.data.data() +
                    static_cast<std::size_t>(s.seq.indices[static_cast<std::size_t>(t)]) * e;
                for (int j = 0; j < e; ++j)
                    st.embedded[static_cast<std::size_t>(t) * e + j] = static_cast<T>(row[j]);
            }
            st.pooled.assign(static_cast<std::size_t>(pd), T(0));
            st.argmax.assign(static_cast<std::size_t>(pd), -1);
            int out_off = 0;
            for (std::size_t wi = 0; wi < cnn.kernel_widths.size(); ++wi) {
                const int width = cnn.kernel_widths[wi];
                const auto& W = conv_w[wi].value;
                const auto& B = conv_b[wi].value;
                for (int f = 0; f < cnn.filters_per_width; ++f) {
                    T best = T(0);
                    int best_pos = -1;
                    const T* wf = W.data.data() + static_cast<std::size_t>(f) * W.cols;
                    for (int p = 0; p + width <= st.len; ++p) {
                        T acc = B.data[static_cast<std::size_t>(f)];
                        const T* x = st.embedded.data() + static_cast<std::size_t>(p) * e;
                        for (int j = 0; j < width * e; ++j) acc += wf[j] * x[j];
                        if (acc > best) {
                            best = acc;
                            best_pos = p;
                        }
                    }
                    st.pooled[static_cast<std::size_t>(out_off + f)] = best;
                    st.argmax[static_cast<std::size_t>(out_off + f)] = best_pos;
                }
                out_off += cnn.filters_per_width;
            }
            st.fusion_in.assign(static_cast<std::size_t>(fin), T(0));
            std::copy(st.pooled.begin(), st.pooled.end(), st.fusion_in.begin());
            int off = pd;
            if (config.use_emotion) {
                for (std::size_t j = 0; j < kNumEmotionCategories; ++j)
                    st.fusion_in[static_cast<std::size_t>(off) + j] = static_cast<T>(s.emotion[j]);
                off += static_cast<int>(kNumEmotionCategories);
            }
            if (config.use_genre) {
                if (s.genre.size() != kNumGenres)
                    throw std::invalid_argument("cnn forward: sample lacks genre vector");
                for (std::size_t j = 0; j < kNumGenres; ++j)
                    st.fusion_in[static_cast<std::size_t>(off) + j] = static_cast<T>(s.genre[j]);
            }
            st.z1.assign(static_cast<std::size_t>(d), T(0));
            for (int i = 0; i < d; ++i) st.z1[static_cast<std::size_t>(i)] = b1.value.data[static_cast<std::size_t>(i)];
            matvec_add(w1.value, st.fusion_in.data(), st.z1.data());
            st.relu = st.z1;
            for (auto& v : st.relu) v = std::max(v, T(0));
        }

        const auto bsz = static_cast<T>(batch.size());
        if (tape.train_mode) {
            tape.mean.assign(static_cast<std::size_t>(d), T(0));
            tape.inv_std.assign(static_cast<std::size_t>(d), T(0));
            std::vector<T> var(static_cast<std::size_t>(d), T(0));
            for (const auto& st : tape.samples)
                for (int j = 0; j < d; ++j) tape.mean[static_cast<std::size_t>(j)] += st.relu[static_cast<std::size_t>(j)];
            for (auto& m : tape.mean) m /= bsz;
            for (const auto& st : tape.samples)
                for (int j = 0; j < d; ++j) {
                    const T diff = st.relu[static_cast<std::size_t>(j)] - tape.mean[static_cast<std::size_t>(j)];
                    var[static_cast<std::size_t>(j)] += diff * diff;
                }
            for (auto& v : var) v /= bsz;
            for (int j = 0; j < d; ++j)
                tape.inv_std[static_cast<std::size_t>(j)] =
                    T(1) / std::sqrt(var[static_cast<std::size_t>(j)] + static_cast<T>(kBnEps));
            if (update_running) {
                for (int j = 0; j < d; ++j) {
                    running_mean.data[static_cast<std::size_t>(j)] =
                        static_cast<T>(kBnMomentum) * running_mean.data[static_cast<std::size_t>(j)] +
                        static_cast<T>(1.0 - kBnMomentum) * tape.mean[static_cast<std::size_t>(j)];
                    running_var.data[static_cast<std::size_t>(j)] =
                        static_cast<T>(kBnMomentum) * running_var.data[static_cast<std::size_t>(j)] +
                        static_cast<T>(1.0 - kBnMomentum) * var[static_cast<std::size_t>(j)];
                }
            }
        }
        for (auto& st : tape.samples) {
            st.xhat.assign(static_cast<std::size_t>(d), T(0));
            std::vector<T> bn(static_cast<std::size_t>(d), T(0));
            for (int j = 0; j < d; ++j) {
                T xh;
                if (tape.train_mode)
                    xh = (st.relu[static_cast<std::size_t>(j)] - tape.mean[static_cast<std::size_t>(j)]) *
                         tape.inv_std[static_cast<std::size_t>(j)];
                else
                    xh = (st.relu[static_cast<std::size_t>(j)] - running_mean.data[static_cast<std::size_t>(j)]) /
                         std::sqrt(running_var.data[static_cast<std::size_t>(j)] + static_cast<T>(kBnEps));
                st.xhat[static_cast<std::size_t>(j)] = xh;
                bn[static_cast<std::size_t>(j)] = bn_gamma.value.data[static_cast<std::size_t>(j)] * xh +
                                                  bn_beta.value.data[static_cast<std::size_t>(j)];
            }
            st.dropped = bn;
            if (tape.train_mode && dropout_rng && config.dropout > 0.0) {
                st.dropout_mask.assign(static_cast<std::size_t>(d), T(0));
                const T keep_scale = static_cast<T>(1.0 / (1.0 - config.dropout));
                for (int j = 0; j < d; ++j) {
                    if (dropout_rng->uniform() >= config.dropout)
                        st.dropout_mask[static_cast<std::size_t>(j)] = keep_scale;
                    st.dropped[static_cast<std::size_t>(j)] =
                        bn[static_cast<std::size_t>(j)] * st.dropout_mask[static_cast<std::size_t>(j)];
                }
            }
            st.probs.assign(static_cast<std::size_t>(k), T(0));
            for (int i = 0; i < k; ++i) st.probs[static_cast<std::size_t>(i)] = b2.value.data[static_cast<std::size_t>(i)];
            matvec_add(w2.value, st.dropped.data(), st.probs.data());
            softmax_inplace(st.probs);
        }
    }

    double batch_loss(const std::vector<const Sample*>& batch, Mode mode = Mode::Train) {
        BatchTape tape;
        forward_batch(batch, mode, tape, nullptr, false);
        double ce = 0.0;
        for (const auto& st : tape.samples)
            ce += static_cast<double>(cross_entropy(st.probs, st.sample->label));
        return ce / static_cast<double>(batch.size()) +
               config.l2_lambda * sum_squared_weights();
    }

    double batch_loss_and_grad(const std::vector<const Sample*>& batch,
                               Rng* dropout_rng = nullptr, bool update_running = false) {
        BatchTape tape;
        forward_batch(batch, Mode::Train, tape, dropout_rng, update_running);
        const int e = config.emb_dim, d = config.dense, k = config.n_classes;
        const auto bsz = static_cast<T>(batch.size());
        double ce = 0.0;

        std::vector<std::vector<T>> dbn(batch.size());
        for (std::size_t bi = 0; bi < batch.size(); ++bi) {
            auto& st = tape.samples[bi];
            ce += static_cast<double>(cross_entropy(st.probs, st.sample->label));
            std::vector<T> dlogits = st.probs;
            dlogits[static_cast<std::size_t>(st.sample->label)] -= T(1);
            for (auto& g : dlogits) g /= bsz;
            outer_add(w2.grad, dlogits.data(), st.dropped.data());
            for (int i = 0; i < k; ++i) b2.grad.data[static_cast<std::size_t>(i)] += dlogits[static_cast<std::size_t>(i)];
            std::vector<T> dd(static_cast<std::size_t>(d), T(0));
            matvec_transpose_add(w2.value, dlogits.data(), dd.data());
            if (!st.dropout_mask.empty())
                for (int j = 0; j < d; ++j) dd[static_cast<std::size_t>(j)] *= st.dropout_mask[static_cast<std::size_t>(j)];
            dbn[bi] = std::move(dd);
        }

        std::vector<std::vector<T>> drelu(batch.size(),
                                          std::vector<T>(static_cast<std::size_t>(d), T(0)));
        {
            std::vector<T> sum_dxhat(static_cast<std::size_t>(d), T(0));
            std::vector<T> sum_dxhat_xhat(static_cast<std::size_t>(d), T(0));
            for (std::size_t bi = 0; bi < batch.size(); ++bi) {
                const auto& st = tape.samples[bi];
                for (int j = 0; j < d; ++j) {
                    const T dxh = dbn[bi][static_cast<std::size_t>(j)] * bn_gamma.value.data[static_cast<std::size_t>(j)];
                    sum_dxhat[static_cast<std::size_t>(j)] += dxh;
                    sum_dxhat_xhat[static_cast<std::size_t>(j)] += dxh * st.xhat[static_cast<std::size_t>(j)];
                    bn_gamma.grad.data[static_cast<std::size_t>(j)] +=
                        dbn[bi][static_cast<std::size_t>(j)] * st.xhat[static_cast<std::size_t>(j)];
                    bn_beta.grad.data[static_cast<std::size_t>(j)] += dbn[bi][static_cast<std::size_t>(j)];
                }
            }
            for (std::size_t bi = 0; bi < batch.size(); ++bi) {
                const auto& st = tape.samples[bi];
                for (int j = 0; j < d; ++j) {
                    const T dxh = dbn[bi][static_cast<std::size_t>(j)] * bn_gamma.value.data[static_cast<std::size_t>(j)];
                    drelu[bi][static_cast<std::size_t>(j)] =
                        tape.inv_std[static_cast<std::size_t>(j)] *
                        (dxh - sum_dxhat[static_cast<std::size_t>(j)] / bsz -
                         st.xhat[static_cast<std::size_t>(j)] * sum_dxhat_xhat[static_cast<std::size_t>(j)] / bsz);
                }
            }
        }

        for (std::size_t bi = 0; bi < batch.size(); ++bi) {
            auto& st = tape.samples[bi];
            std::vector<T> dz1(static_cast<std::size_t>(d), T(0));
            for (int j = 0; j < d; ++j)
                dz1[static_cast<std::size_t>(j)] =
                    st.z1[static_cast<std::size_t>(j)] > T(0) ? drelu[bi][static_cast<std::size_t>(j)] : T(0);
            outer_add(w1.grad, dz1.data(), st.fusion_in.data());
            for (int j = 0; j < d; ++j) b1.grad.data[static_cast<std::size_t>(j)] += dz1[static_cast<std::size_t>(j)];
            std::vector<T> du(st.fusion_in.size(), T(0));
            matvec_transpose_add(w1.value, dz1.data(), du.data());

            // pooled gradient routes to the argmax position of each filter
            int out_off = 0;
            for (std::size_t wi = 0; wi < cnn.kernel_widths.size(); ++wi) {
                const int width = cnn.kernel_widths[wi];
                for (int f = 0; f < cnn.filters_per_width; ++f) {
                    const int slot = out_off + f;
                    const int pos = st.argmax[static_cast<std::size_t>(slot)];
                    if (pos < 0) continue; // ReLU cut the max off at zero
                    const T g = du[static_cast<std::size_t>(slot)];
                    if (g == T(0)) continue;
                    T* wg = conv_w[wi].grad.data.data() +
                            static_cast<std::size_t>(f) * conv_w[wi].grad.cols;
                    const T* x = st.embedded.data() + static_cast<std::size_t>(pos) * e;
                    for (int j = 0; j < width * e; ++j) wg[j] += g * x[j];
                    conv_b[wi].grad.data[static_cast<std::size_t>(f)] += g;
                }
                out_off += cnn.filters_per_width;
            }
        }

        for (auto* p : l2_parameters())
            for (std::size_t i = 0; i < p->value.data.size(); ++i)
                p->grad.data[i] += static_cast<T>(2.0 * config.l2_lambda) * p->value.data[i];

        return ce / static_cast<double>(batch.size()) +
               config.l2_lambda * sum_squared_weights();
    }
};

} // namespace scriptgauge
