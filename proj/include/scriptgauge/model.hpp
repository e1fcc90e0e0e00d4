#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "scriptgauge/corpus.hpp"
#include "scriptgauge/eval.hpp"
#include "scriptgauge/lexicon.hpp"
#include "scriptgauge/rng.hpp"
#include "scriptgauge/tensor.hpp"
#include "scriptgauge/text.hpp"

namespace scriptgauge {

struct ModelConfig {
    int max_length = 10000;
    int emb_dim = 300;
    int hidden = 256;
    int dense = 128;
    int n_classes = 5;
    double dropout = 0.3;
    double learning_rate = 1e-5;
    double l2_lambda = 1e-4;
    int epochs = 200;
    int batch_size = 16;
    bool use_emotion = true;
    bool use_genre = true;
    std::uint64_t seed = 0;

    int fusion_input_dim() const {
        return hidden + (use_emotion ? 10 : 0) + (use_genre ? 24 : 0);
    }

    void validate() const {
        if (max_length < 1 || emb_dim < 1 || hidden < 1 || dense < 1)
            throw std::invalid_argument("ModelConfig: dimensions must be positive");
        if (n_classes != 5)
            throw std::invalid_argument("ModelConfig: n_classes must be 5");
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("ModelConfig: dropout must be in [0,1)");
    }
};

inline std::string config_to_text(const ModelConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "max_length=" << c.max_length << "\n"
       << "emb_dim=" << c.emb_dim << "\n"
       << "hidden=" << c.hidden << "\n"
       << "dense=" << c.dense << "\n"
       << "n_classes=" << c.n_classes << "\n"
       << "dropout=" << c.dropout << "\n"
       << "learning_rate=" << c.learning_rate << "\n"
       << "l2_lambda=" << c.l2_lambda << "\n"
       << "epochs=" << c.epochs << "\n"
       << "batch_size=" << c.batch_size << "\n"
       << "use_emotion=" << (c.use_emotion ? 1 : 0) << "\n"
       << "use_genre=" << (c.use_genre ? 1 : 0) << "\n"
       << "seed=" << c.seed << "\n";
    return os.str();
}

inline ModelConfig config_from_text(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    long long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected key=value");
        const std::string key = line.substr(first, eq - first);
        const std::string val = line.substr(eq + 1);
        if (key == "max_length") c.max_length = std::stoi(val);
        else if (key == "emb_dim") c.emb_dim = std::stoi(val);
        else if (key == "hidden") c.hidden = std::stoi(val);
        else if (key == "dense") c.dense = std::stoi(val);
        else if (key == "n_classes") c.n_classes = std::stoi(val);
        else if (key == "dropout") c.dropout = std::stod(val);
        else if (key == "learning_rate") c.learning_rate = std::stod(val);
        else if (key == "l2_lambda") c.l2_lambda = std::stod(val);
        else if (key == "epochs") c.epochs = std::stoi(val);
        else if (key == "batch_size") c.batch_size = std::stoi(val);
        else if (key == "use_emotion") c.use_emotion = std::stoi(val) != 0;
        else if (key == "use_genre") c.use_genre = std::stoi(val) != 0;
        else if (key == "seed") c.seed = std::stoull(val);
        else
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

// One movie, featurized for the classifier.
struct Sample {
    std::string id;
    TokenSequence seq;
    std::array<double, kNumEmotionCategories> emotion{};
    std::vector<float> genre; // 24 multi-hot, empty when unused
    int label = -1;           // Rating ordinal, -1 when unlabeled
};

inline std::vector<std::string> tokenize_record(const MovieRecord& rec) {
    std::vector<std::string> tokens;
    for (const auto& utterance : rec.script) {
        auto t = tokenize(utterance);
        tokens.insert(tokens.end(), t.begin(), t.end());
    }
    return tokens;
}

inline Sample make_sample(const MovieRecord& rec, const Vocabulary& vocab,
                          const ModelConfig& config, const EmotionLexicon* lexicon) {
    Sample s;
    s.id = rec.id;
    const auto tokens = tokenize_record(rec);
    if (tokens.empty())
        throw std::runtime_error("record '" + rec.id + "' tokenizes to zero tokens");
    s.seq = encode_sequence(tokens, vocab, config.max_length);
    if (config.use_emotion) {
        if (!lexicon)
            throw std::runtime_error("config uses emotion features but no lexicon given");
        s.emotion = emotion_vector(tokens, *lexicon);
    }
    if (config.use_genre) s.genre = genre_multi_hot(rec.genres);
    s.label = static_cast<int>(rec.rating);
    return s;
}

inline std::vector<Sample> make_samples(const std::vector<MovieRecord>& records,
                                        const Vocabulary& vocab, const ModelConfig& config,
                                        const EmotionLexicon* lexicon) {
    std::vector<Sample> out;
    out.reserve(records.size());
    for (const auto& rec : records) out.push_back(make_sample(rec, vocab, config, lexicon));
    return out;
}

enum class Mode { Train, Infer };

template <typename T>
struct ForwardResult {
    std::vector<T> probs;     // n_classes, sums to 1
    std::vector<T> logits;    // n_classes, pre-softmax
    std::vector<T> attention; // length L; exactly 0 on PAD positions
    int true_length = 0;
    int predicted = 0;
};

namespace detail {

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// per-sample activations kept for backprop
template <typename T>
struct SampleTape {
    const Sample* sample = nullptr;
    int len = 0;
    std::vector<T> gates;  // len x 4H, post-activation (i f g o)
    std::vector<T> cell;   // len x H
    std::vector<T> tanh_c; // len x H
    std::vector<T> hidden; // len x H
    std::vector<T> attn_tanh; // len x A
    std::vector<T> alpha;     // len
    std::vector<T> fusion_in; // fin
    std::vector<T> z1;        // dense pre-activation
    std::vector<T> relu;      // dense post-ReLU
    std::vector<T> xhat;      // normalized
    std::vector<T> dropout_mask; // dense, inverted-scale factors (empty = identity)
    std::vector<T> dropped;   // dense, input to output layer
    std::vector<T> logits;    // n_classes, pre-softmax
    std::vector<T> probs;     // n_classes
};

template <typename T>
struct BatchTape {
    std::vector<SampleTape<T>> samples;
    std::vector<T> mean, inv_std; // dense, batch statistics (train mode)
    bool train_mode = false;
};

} // namespace detail

// The classifier: frozen embedding lookup -> LSTM -> additive attention ->
// [r ; emotion ; genre] -> dense+ReLU -> batch norm -> dropout -> dense ->
// softmax. All backward passes are hand-derived.
template <typename T>
class RatingClassifier {
public:
    using scalar_type = T;

    ModelConfig config;
    Vocabulary vocab;
    EmbeddingTable embedding; // frozen, row 0 (PAD) all zeros

    Parameter<T> lstm_wx, lstm_wh, lstm_b;
    Parameter<T> attn_w, attn_b, attn_v;
    Parameter<T> w1, b1, bn_gamma, bn_beta, w2, b2;
    Tensor2<T> running_mean, running_var;

    std::map<std::string, AdamState<T>> adam;

    static constexpr double kBnEps = 1e-5;
    static constexpr double kBnMomentum = 0.9;

    RatingClassifier() = default;

    RatingClassifier(ModelConfig cfg, Vocabulary v, EmbeddingTable emb)
        : config(std::move(cfg)), vocab(std::move(v)), embedding(std::move(emb)) {
        config.validate();
        if (embedding.weights.rows != vocab.size() || embedding.dim != config.emb_dim)
            throw std::invalid_argument("RatingClassifier: embedding/vocab shape mismatch");
        const int h = config.hidden, e = config.emb_dim, a = attention_dim();
        const int fin = config.fusion_input_dim(), d = config.dense, k = config.n_classes;
        lstm_wx = Parameter<T>("lstm.wx", 4 * h, e);
        lstm_wh = Parameter<T>("lstm.wh", 4 * h, h);
        lstm_b = Parameter<T>("lstm.b", 4 * h, 1);
        attn_w = Parameter<T>("attn.w", a, h);
        attn_b = Parameter<T>("attn.b", a, 1);
        attn_v = Parameter<T>("attn.v", a, 1);
        w1 = Parameter<T>("dense1.w", d, fin);
        b1 = Parameter<T>("dense1.b", d, 1);
        bn_gamma = Parameter<T>("bn.gamma", d, 1);
        bn_beta = Parameter<T>("bn.beta", d, 1);
        w2 = Parameter<T>("dense2.w", k, d);
        b2 = Parameter<T>("dense2.b", k, 1);
        running_mean = Tensor2<T>(d, 1);
        running_var = Tensor2<T>(d, 1);
        running_var.fill(T(1));
        init_parameters();
        for (auto* p : parameters()) adam[p->name].init(p->value);
    }

    int attention_dim() const { return config.hidden; }

    std::vector<Parameter<T>*> parameters() {
        return {&lstm_wx, &lstm_wh, &lstm_b, &attn_w, &attn_b, &attn_v,
                &w1, &b1, &bn_gamma, &bn_beta, &w2, &b2};
    }

    // weight matrices subject to L2 (no biases, no batch-norm scale/shift)
    std::vector<Parameter<T>*> l2_parameters() {
        return {&lstm_wx, &lstm_wh, &attn_w, &attn_v, &w1, &w2};
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

    // Forward one sample. Train mode uses this sample as a batch of one.
    ForwardResult<T> forward(const Sample& sample, Mode mode, Rng* dropout_rng = nullptr) {
        detail::BatchTape<T> tape;
        forward_batch({&sample}, mode, tape, dropout_rng, /*update_running=*/false);
        const auto& st = tape.samples[0];
        ForwardResult<T> res;
        res.probs = st.probs;
        res.logits = st.logits;
        res.true_length = st.len;
        res.attention.assign(static_cast<std::size_t>(sample.seq.capacity()), T(0));
        for (int i = 0; i < st.len; ++i) res.attention[static_cast<std::size_t>(i)] = st.alpha[static_cast<std::size_t>(i)];
        res.predicted = static_cast<int>(std::max_element(res.probs.begin(), res.probs.end()) -
                                         res.probs.begin());
        return res;
    }

    // Forward a batch and fill the tape. Train mode normalizes with batch
    // statistics and applies dropout when a generator is supplied.
    void forward_batch(const std::vector<const Sample*>& batch, Mode mode,
                       detail::BatchTape<T>& tape, Rng* dropout_rng, bool update_running) {
        if (batch.empty()) throw std::invalid_argument("forward_batch: empty batch");
        const int h = config.hidden, a = attention_dim();
        const int d = config.dense, k = config.n_classes;
        const int fin = config.fusion_input_dim();
        tape.train_mode = (mode == Mode::Train);
        tape.samples.clear();
        tape.samples.resize(batch.size());

        for (std::size_t bi = 0; bi < batch.size(); ++bi) {
            const Sample& s = *batch[bi];
            auto& st = tape.samples[bi];
            st.sample = &s;
            if (s.seq.true_length < 1)
                throw std::invalid_argument("forward_batch: zero-length sequence");
            st.len = s.seq.true_length;
            run_lstm(s, st);
            run_attention(st);
            // fusion input [r ; emotion ; genre]
            st.fusion_in.assign(static_cast<std::size_t>(fin), T(0));
            // r = sum_i alpha_i h_i
            for (int t = 0; t < st.len; ++t) {
                const T al = st.alpha[static_cast<std::size_t>(t)];
                const T* ht = st.hidden.data() + static_cast<std::size_t>(t) * h;
                for (int j = 0; j < h; ++j) st.fusion_in[static_cast<std::size_t>(j)] += al * ht[j];
            }
            int off = h;
            if (config.use_emotion) {
                for (std::size_t j = 0; j < kNumEmotionCategories; ++j)
                    st.fusion_in[static_cast<std::size_t>(off) + j] = static_cast<T>(s.emotion[j]);
                off += static_cast<int>(kNumEmotionCategories);
            }
            if (config.use_genre) {
                if (s.genre.size() != kNumGenres)
                    throw std::invalid_argument("forward_batch: sample lacks genre vector");
                for (std::size_t j = 0; j < kNumGenres; ++j)
                    st.fusion_in[static_cast<std::size_t>(off) + j] = static_cast<T>(s.genre[j]);
            }
            // dense1 + ReLU
            st.z1.assign(static_cast<std::size_t>(d), T(0));
            for (int i = 0; i < d; ++i) st.z1[static_cast<std::size_t>(i)] = b1.value.data[static_cast<std::size_t>(i)];
            matvec_add(w1.value, st.fusion_in.data(), st.z1.data());
            st.relu = st.z1;
            for (auto& v : st.relu) v = std::max(v, T(0));
        }

        // batch normalization over the ReLU activations
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
                if (tape.train_mode) {
                    xh = (st.relu[static_cast<std::size_t>(j)] - tape.mean[static_cast<std::size_t>(j)]) *
                         tape.inv_std[static_cast<std::size_t>(j)];
                } else {
                    xh = (st.relu[static_cast<std::size_t>(j)] - running_mean.data[static_cast<std::size_t>(j)]) /
                         std::sqrt(running_var.data[static_cast<std::size_t>(j)] + static_cast<T>(kBnEps));
                }
                st.xhat[static_cast<std::size_t>(j)] = xh;
                bn[static_cast<std::size_t>(j)] = bn_gamma.value.data[static_cast<std::size_t>(j)] * xh +
                                                  bn_beta.value.data[static_cast<std::size_t>(j)];
            }
            // dropout (inverted scaling)
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
            // output layer
            st.probs.assign(static_cast<std::size_t>(k), T(0));
            for (int i = 0; i < k; ++i) st.probs[static_cast<std::size_t>(i)] = b2.value.data[static_cast<std::size_t>(i)];
            matvec_add(w2.value, st.dropped.data(), st.probs.data());
            st.logits = st.probs;
            softmax_inplace(st.probs);
        }
    }

    // Mean cross-entropy + L2 penalty; no gradient, no running-stat update.
    double batch_loss(const std::vector<const Sample*>& batch, Mode mode = Mode::Train) {
        detail::BatchTape<T> tape;
        forward_batch(batch, mode, tape, nullptr, false);
        double ce = 0.0;
        for (const auto& st : tape.samples) {
            if (st.sample->label < 0) throw std::invalid_argument("batch_loss: unlabeled sample");
            ce += static_cast<double>(cross_entropy(st.probs, st.sample->label));
        }
        return ce / static_cast<double>(batch.size()) +
               config.l2_lambda * sum_squared_weights();
    }

    // Forward+backward over a batch; gradients accumulate into the
    // parameters (call zero_grads first). Returns the batch loss.
    double batch_loss_and_grad(const std::vector<const Sample*>& batch,
                               Rng* dropout_rng = nullptr, bool update_running = false) {
        if (batch.empty()) throw std::invalid_argument("batch_loss_and_grad: empty batch");
        detail::BatchTape<T> tape;
        forward_batch(batch, Mode::Train, tape, dropout_rng, update_running);

        const int h = config.hidden;
        const int d = config.dense, k = config.n_classes;
        const auto bsz = static_cast<T>(batch.size());
        double ce = 0.0;

        // output layer and dropout backward; collect d(bn out) per sample
        std::vector<std::vector<T>> dbn(batch.size());
        for (std::size_t bi = 0; bi < batch.size(); ++bi) {
            auto& st = tape.samples[bi];
            if (st.sample->label < 0)
                throw std::invalid_argument("batch_loss_and_grad: unlabeled sample");
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

        // batch norm backward (coupled across the batch)
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

        // per-sample backward through dense1, attention, LSTM
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

            // dr is the leading h components of du; emotion/genre are inputs
            std::vector<T> dh(static_cast<std::size_t>(st.len) * h, T(0));
            backward_attention(st, du.data(), dh.data());
            backward_lstm(st, dh.data());
        }

        // L2 penalty
        for (auto* p : l2_parameters())
            for (std::size_t i = 0; i < p->value.data.size(); ++i)
                p->grad.data[i] += static_cast<T>(2.0 * config.l2_lambda) * p->value.data[i];

        return ce / static_cast<double>(batch.size()) +
               config.l2_lambda * sum_squared_weights();
    }

    void adam_step() {
        for (auto* p : parameters()) adam[p->name].step(*p, config.learning_rate);
    }

    void require_features(bool emotion_available, bool genre_available) const {
        if (config.use_emotion && !emotion_available)
            throw std::runtime_error(
                "config mismatch: checkpoint uses emotion features but none are available "
                "(pass --emotion-lexicon)");
        if (config.use_genre && !genre_available)
            throw std::runtime_error(
                "config mismatch: checkpoint uses genre features but none are available");
    }

private:
    void init_parameters() {
        Rng rng = Rng(config.seed).split(0x1a17);
        const int h = config.hidden;
        lstm_wx.value.init_uniform(rng, config.emb_dim);
        lstm_wh.value.init_uniform(rng, h);
        lstm_b.value.zero();
        // forget-gate bias +1 against vanishing gates early in training
        for (int i = h; i < 2 * h; ++i) lstm_b.value.data[static_cast<std::size_t>(i)] = T(1);
        attn_w.value.init_uniform(rng, h);
        attn_b.value.zero();
        attn_v.value.init_uniform(rng, attention_dim());
        w1.value.init_uniform(rng, config.fusion_input_dim());
        b1.value.zero();
        bn_gamma.value.fill(T(1));
        bn_beta.value.zero();
        w2.value.init_uniform(rng, config.dense);
        b2.value.zero();
    }

    void embed_token(int index, std::vector<T>& out) const {
        const int e = config.emb_dim;
        out.assign(static_cast<std::size_t>(e), T(0));
        const float* row = embedding.weights.data.data() +
                           static_cast<std::size_t>(index) * e;
        for (int j = 0; j < e; ++j) out[static_cast<std::size_t>(j)] = static_cast<T>(row[j]);
    }

    // gate order: input, forget, candidate, output
    void run_lstm(const Sample& s, detail::SampleTape<T>& st) const {
        const int h = config.hidden;
        const int len = st.len;
        st.gates.assign(static_cast<std::size_t>(len) * 4 * h, T(0));
        st.cell.assign(static_cast<std::size_t>(len) * h, T(0));
        st.tanh_c.assign(static_cast<std::size_t>(len) * h, T(0));
        st.hidden.assign(static_cast<std::size_t>(len) * h, T(0));
        std::vector<T> x, pre(static_cast<std::size_t>(4 * h));
        std::vector<T> h_prev(static_cast<std::size_t>(h), T(0)), c_prev(static_cast<std::size_t>(h), T(0));
        for (int t = 0; t < len; ++t) {
            embed_token(s.seq.indices[static_cast<std::size_t>(t)], x);
            for (int i = 0; i < 4 * h; ++i) pre[static_cast<std::size_t>(i)] = lstm_b.value.data[static_cast<std::size_t>(i)];
            matvec_add(lstm_wx.value, x.data(), pre.data());
            matvec_add(lstm_wh.value, h_prev.data(), pre.data());
            T* g = st.gates.data() + static_cast<std::size_t>(t) * 4 * h;
            for (int i = 0; i < h; ++i) g[i] = detail::sigmoid(pre[static_cast<std::size_t>(i)]);
            for (int i = 0; i < h; ++i) g[h + i] = detail::sigmoid(pre[static_cast<std::size_t>(h + i)]);
            for (int i = 0; i < h; ++i) g[2 * h + i] = std::tanh(pre[static_cast<std::size_t>(2 * h + i)]);
            for (int i = 0; i < h; ++i) g[3 * h + i] = detail::sigmoid(pre[static_cast<std::size_t>(3 * h + i)]);
            T* c = st.cell.data() + static_cast<std::size_t>(t) * h;
            T* tc = st.tanh_c.data() + static_cast<std::size_t>(t) * h;
            T* ht = st.hidden.data() + static_cast<std::size_t>(t) * h;
            for (int i = 0; i < h; ++i) {
                c[i] = g[h + i] * c_prev[static_cast<std::size_t>(i)] + g[i] * g[2 * h + i];
                tc[i] = std::tanh(c[i]);
                ht[i] = g[3 * h + i] * tc[i];
            }
            std::copy(ht, ht + h, h_prev.begin());
            std::copy(c, c + h, c_prev.begin());
        }
    }

    // alpha_i = softmax_i(v^T tanh(W h_i + b)) over real positions only
    void run_attention(detail::SampleTape<T>& st) const {
        const int h = config.hidden, a = attention_dim();
        const int len = st.len;
        st.attn_tanh.assign(static_cast<std::size_t>(len) * a, T(0));
        std::vector<T> scores(static_cast<std::size_t>(len), T(0));
        for (int t = 0; t < len; ++t) {
            T* ti = st.attn_tanh.data() + static_cast<std::size_t>(t) * a;
            for (int i = 0; i < a; ++i) ti[i] = attn_b.value.data[static_cast<std::size_t>(i)];
            matvec_add(attn_w.value, st.hidden.data() + static_cast<std::size_t>(t) * h, ti);
            T score = T(0);
            for (int i = 0; i < a; ++i) {
                ti[i] = std::tanh(ti[i]);
                score += attn_v.value.data[static_cast<std::size_t>(i)] * ti[i];
            }
            scores[static_cast<std::size_t>(t)] = score;
        }
        softmax_inplace(scores);
        st.alpha = std::move(scores);
    }

    // du -> gradients of attention parameters plus dh per timestep
    void backward_attention(const detail::SampleTape<T>& st, const T* du, T* dh) {
        const int h = config.hidden, a = attention_dim();
        const int len = st.len;
        // r = sum_i alpha_i h_i; dr = leading h entries of du
        std::vector<T> dalpha(static_cast<std::size_t>(len), T(0));
        for (int t = 0; t < len; ++t) {
            const T* ht = st.hidden.data() + static_cast<std::size_t>(t) * h;
            T acc = T(0);
            for (int j = 0; j < h; ++j) acc += du[j] * ht[j];
            dalpha[static_cast<std::size_t>(t)] = acc;
            T* dht = dh + static_cast<std::size_t>(t) * h;
            const T al = st.alpha[static_cast<std::size_t>(t)];
            for (int j = 0; j < h; ++j) dht[j] += al * du[j];
        }
        // softmax backward
        T dot = T(0);
        for (int t = 0; t < len; ++t) dot += st.alpha[static_cast<std::size_t>(t)] * dalpha[static_cast<std::size_t>(t)];
        std::vector<T> dscore(static_cast<std::size_t>(len), T(0));
        for (int t = 0; t < len; ++t)
            dscore[static_cast<std::size_t>(t)] =
                st.alpha[static_cast<std::size_t>(t)] * (dalpha[static_cast<std::size_t>(t)] - dot);
        // score_i = v . tanh(W h_i + b)
        std::vector<T> dpre(static_cast<std::size_t>(a), T(0));
        for (int t = 0; t < len; ++t) {
            const T* ti = st.attn_tanh.data() + static_cast<std::size_t>(t) * a;
            const T ds = dscore[static_cast<std::size_t>(t)];
            for (int i = 0; i < a; ++i) {
                attn_v.grad.data[static_cast<std::size_t>(i)] += ds * ti[i];
                dpre[static_cast<std::size_t>(i)] = ds * attn_v.value.data[static_cast<std::size_t>(i)] *
                                                    (T(1) - ti[i] * ti[i]);
            }
            const T* ht = st.hidden.data() + static_cast<std::size_t>(t) * h;
            outer_add(attn_w.grad, dpre.data(), ht);
            for (int i = 0; i < a; ++i) attn_b.grad.data[static_cast<std::size_t>(i)] += dpre[static_cast<std::size_t>(i)];
            matvec_transpose_add(attn_w.value, dpre.data(), dh + static_cast<std::size_t>(t) * h);
        }
    }

    // BPTT; embeddings are frozen so no input gradient is produced
    void backward_lstm(const detail::SampleTape<T>& st, const T* dh_in) {
        const int h = config.hidden;
        const int len = st.len;
        std::vector<T> x;
        std::vector<T> dh_next(static_cast<std::size_t>(h), T(0));
        std::vector<T> dc_next(static_cast<std::size_t>(h), T(0));
        std::vector<T> dpre(static_cast<std::size_t>(4 * h), T(0));
        for (int t = len - 1; t >= 0; --t) {
            const T* g = st.gates.data() + static_cast<std::size_t>(t) * 4 * h;
            const T* tc = st.tanh_c.data() + static_cast<std::size_t>(t) * h;
            const T* c_prev = t > 0 ? st.cell.data() + static_cast<std::size_t>(t - 1) * h : nullptr;
            const T* h_prev = t > 0 ? st.hidden.data() + static_cast<std::size_t>(t - 1) * h : nullptr;
            for (int i = 0; i < h; ++i) {
                const T dht = dh_in[static_cast<std::size_t>(t) * h + i] + dh_next[static_cast<std::size_t>(i)];
                const T gi = g[i], gf = g[h + i], gg = g[2 * h + i], go = g[3 * h + i];
                const T dout = dht * tc[i];
                const T dc = dht * go * (T(1) - tc[i] * tc[i]) + dc_next[static_cast<std::size_t>(i)];
                const T cp = c_prev ? c_prev[i] : T(0);
                dpre[static_cast<std::size_t>(i)] = dc * gg * gi * (T(1) - gi);           // input gate
                dpre[static_cast<std::size_t>(h + i)] = dc * cp * gf * (T(1) - gf);       // forget gate
                dpre[static_cast<std::size_t>(2 * h + i)] = dc * gi * (T(1) - gg * gg);   // candidate
                dpre[static_cast<std::size_t>(3 * h + i)] = dout * go * (T(1) - go);      // output gate
                dc_next[static_cast<std::size_t>(i)] = dc * gf;
            }
            embed_token(st.sample->seq.indices[static_cast<std::size_t>(t)], x);
            outer_add(lstm_wx.grad, dpre.data(), x.data());
            if (h_prev) outer_add(lstm_wh.grad, dpre.data(), h_prev);
            for (int i = 0; i < 4 * h; ++i) lstm_b.grad.data[static_cast<std::size_t>(i)] += dpre[static_cast<std::size_t>(i)];
            std::fill(dh_next.begin(), dh_next.end(), T(0));
            matvec_transpose_add(lstm_wh.value, dpre.data(), dh_next.data());
        }
    }
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_f1;
    int best_epoch = -1;
    double best_val_f1 = -1.0;
};

struct PredictResult {
    std::string id;
    int predicted = 0;
    std::vector<double> probs;
    std::vector<double> attention; // true_length entries
};

template <typename Model>
std::vector<PredictResult> predict(Model& model, const std::vector<Sample>& samples) {
    std::vector<PredictResult> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        auto fwd = model.forward(s, Mode::Infer);
        PredictResult r;
        r.id = s.id;
        r.predicted = fwd.predicted;
        r.probs.assign(fwd.probs.begin(), fwd.probs.end());
        r.attention.assign(fwd.attention.begin(),
                           fwd.attention.begin() + fwd.true_length);
        out.push_back(std::move(r));
    }
    return out;
}

// Epoch loop with validation-selected checkpointing: the parameter set with
// the best validation weighted F1 (ties -> earlier epoch) is restored into
// the model before returning.
template <typename Model>
TrainHistory train_model(Model& model, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set) {
    using T = typename Model::scalar_type;
    if (train_set.empty()) throw std::invalid_argument("train_model: empty training set");
    const auto& cfg = model.config;
    Rng shuffle_rng = Rng(cfg.seed).split(0x5bff1e);
    Rng dropout_rng = Rng(cfg.seed).split(0xd20907);

    std::vector<int> val_gold;
    for (const auto& s : val_set) val_gold.push_back(s.label);

    TrainHistory history;
    std::vector<Tensor2<T>> best_values;
    Tensor2<T> best_rmean, best_rvar;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order.begin(), order.end());
        double epoch_loss = 0.0;
        int n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<const Sample*> batch;
            for (std::size_t i = start;
                 i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i)
                batch.push_back(&train_set[order[i]]);
            model.zero_grads();
            const double loss = model.batch_loss_and_grad(
                batch, cfg.dropout > 0.0 ? &dropout_rng : nullptr, /*update_running=*/true);
            if (std::isnan(loss))
                throw std::runtime_error("train_model: loss diverged to NaN at epoch " +
                                         std::to_string(epoch));
            auto params = model.parameters();
            clip_global_norm(params, 5.0);
            model.adam_step();
            epoch_loss += loss;
            ++n_batches;
        }
        history.train_loss.push_back(epoch_loss / std::max(1, n_batches));

        double f1 = 0.0;
        if (!val_set.empty()) {
            std::vector<int> pred;
            for (const auto& s : val_set) pred.push_back(model.forward(s, Mode::Infer).predicted);
            f1 = weighted_f1(val_gold, pred, cfg.n_classes);
        }
        history.val_f1.push_back(f1);
        if (f1 > history.best_val_f1) {
            history.best_val_f1 = f1;
            history.best_epoch = epoch;
            best_values.clear();
            for (auto* p : model.parameters()) best_values.push_back(p->value);
            best_rmean = model.running_mean;
            best_rvar = model.running_var;
        }
    }

    if (!best_values.empty()) {
        auto params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
        model.running_mean = best_rmean;
        model.running_var = best_rvar;
    }
    return history;
}

} // namespace scriptgauge
