// scriptgauge: predict MPAA age-suitability ratings from movie scripts.
//
// Verbs: split, train, evaluate, predict, analyze, baseline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scriptgauge/baselines.hpp"
#include "scriptgauge/checkpoint.hpp"
#include "scriptgauge/corpus.hpp"
#include "scriptgauge/eval.hpp"
#include "scriptgauge/lexicon.hpp"
#include "scriptgauge/model.hpp"
#include "scriptgauge/text.hpp"

namespace fs = std::filesystem;
using namespace scriptgauge;

namespace {

void require_exists(const std::string& path, const std::string& flag) {
    if (!fs::exists(path))
        throw std::runtime_error(flag + ": path does not exist: " + path);
}

void write_run_meta(const fs::path& dir, const std::string& verb,
                    const std::vector<std::string>& argv_rest, std::uint64_t seed,
                    int threads) {
    std::ofstream out(dir / "run_meta.txt");
    out << "verb=" << verb << "\n";
    out << "seed=" << seed << "\n";
    out << "threads=" << threads << "\n";
    out << "corpus_format=jsonl.v1\n";
    out << "checkpoint_format=SGCKPT01\n";
    out << "flags=";
    for (std::size_t i = 0; i < argv_rest.size(); ++i)
        out << (i ? " " : "") << argv_rest[i];
    out << "\n";
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

struct EvalTables {
    std::vector<int> gold, pred;
    ConfusionMatrix cm{static_cast<int>(kNumRatings)};
    double wf1 = 0.0;
    std::vector<ClassF1> per_class;
};

EvalTables compute_metrics(const std::vector<int>& gold, const std::vector<int>& pred) {
    EvalTables t;
    t.gold = gold;
    t.pred = pred;
    t.cm = confusion(gold, pred, static_cast<int>(kNumRatings));
    t.per_class = per_class_f1(t.cm);
    t.wf1 = weighted_f1_from(t.cm);
    return t;
}

void write_metrics(const fs::path& dir, const EvalTables& t) {
    {
        std::ofstream out(dir / "metrics.tsv");
        out << "metric\tvalue\n";
        out << "weighted_f1\t" << fmt(t.wf1) << "\n";
        for (std::size_t c = 0; c < kNumRatings; ++c) {
            out << "f1_" << kRatingNames[c] << "\t" << fmt(t.per_class[c].f1) << "\n";
            out << "precision_" << kRatingNames[c] << "\t" << fmt(t.per_class[c].precision) << "\n";
            out << "recall_" << kRatingNames[c] << "\t" << fmt(t.per_class[c].recall) << "\n";
            out << "support_" << kRatingNames[c] << "\t" << t.per_class[c].support << "\n";
        }
    }
    {
        std::ofstream out(dir / "confusion.tsv");
        out << "gold\\pred";
        for (auto name : kRatingNames) out << "\t" << name;
        out << "\n";
        for (std::size_t g = 0; g < kNumRatings; ++g) {
            out << kRatingNames[g];
            for (std::size_t p = 0; p < kNumRatings; ++p)
                out << "\t" << t.cm.at(static_cast<int>(g), static_cast<int>(p));
            out << "\n";
        }
    }
}

void write_per_genre(const fs::path& dir, const std::map<Genre, double>& f1s) {
    std::ofstream out(dir / "per_genre_f1.tsv");
    out << "genre\tweighted_f1\n";
    for (const auto& [g, f1] : f1s) out << to_string(g) << "\t" << fmt(f1) << "\n";
}

void write_emotion_profile(const fs::path& dir,
                           const std::map<std::pair<int, bool>, EmotionGroupProfile>& prof) {
    std::ofstream out(dir / "emotion_profile.tsv");
    out << "class\tgroup\tcount";
    for (auto cat : kEmotionCategories) out << "\t" << cat;
    out << "\n";
    for (const auto& [key, p] : prof) {
        out << kRatingNames[static_cast<std::size_t>(key.first)] << "\t"
            << (key.second ? "correct" : "incorrect") << "\t" << p.count;
        for (double v : p.mean) out << "\t" << fmt(v);
        out << "\n";
    }
}

void write_attention_words(
    const fs::path& dir,
    const std::map<std::pair<int, bool>, std::vector<RankedWord>>& report) {
    std::ofstream out(dir / "attention_words.tsv");
    out << "class\tgroup\trank\tword\tmean_weight\n";
    for (const auto& [key, words] : report) {
        for (std::size_t i = 0; i < words.size(); ++i)
            out << kRatingNames[static_cast<std::size_t>(key.first)] << "\t"
                << (key.second ? "TP" : "FN+FP") << "\t" << (i + 1) << "\t" << words[i].word
                << "\t" << fmt(words[i].value) << "\n";
    }
}

void write_bad_words(const fs::path& dir, const std::map<int, BadWordClassTable>& tables) {
    std::ofstream out(dir / "bad_words.tsv");
    out << "class\trank\tword\tratio\n";
    for (const auto& [cls, table] : tables) {
        for (std::size_t i = 0; i < table.top.size(); ++i)
            out << kRatingNames[static_cast<std::size_t>(cls)] << "\t" << (i + 1) << "\t"
                << table.top[i].word << "\t" << fmt(table.top[i].value) << "\n";
        out << kRatingNames[static_cast<std::size_t>(cls)] << "\t-\t<all>\t"
            << fmt(table.negativity) << "\n";
    }
}

int run(int argc, char** argv) {
    CLI::App app{"MPAA rating prediction from movie scripts"};
    app.require_subcommand(1);

    int threads = 1;
    app.add_option("--threads", threads, "worker cap (1 = bitwise deterministic)");

    // ----- split -----
    auto* sc_split = app.add_subcommand("split", "stratified 80:10:10 corpus split");
    std::string corpus_path, out_dir;
    std::uint64_t seed = 0;
    bool lenient = false;
    sc_split->add_option("--corpus", corpus_path, "corpus jsonl")->required();
    sc_split->add_option("--seed", seed, "random seed")->required();
    sc_split->add_option("--out", out_dir, "output directory")->required();
    sc_split->add_flag("--lenient", lenient, "skip malformed lines instead of aborting");

    // ----- train -----
    auto* sc_train = app.add_subcommand("train", "train the LSTM-attention classifier");
    std::string config_path, split_dir, emotion_path, embeddings_path, ckpt_out;
    int min_count = 1;
    bool seed_given = false;
    sc_train->add_option("--config", config_path, "key=value model config");
    sc_train->add_option("--split-dir", split_dir, "directory with train/valid/test jsonl")
        ->required();
    sc_train->add_option("--emotion-lexicon", emotion_path, "NRC-format lexicon TSV");
    sc_train->add_option("--embeddings", embeddings_path, "pretrained embedding text file")
        ->required();
    sc_train->add_option("--out", ckpt_out, "checkpoint output path")->required();
    sc_train->add_option("--min-count", min_count, "vocabulary frequency threshold");
    auto* train_seed_opt = sc_train->add_option("--seed", seed, "override config seed");

    // ----- evaluate -----
    auto* sc_eval = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
    std::string ckpt_path;
    std::vector<std::string> bad_word_paths;
    sc_eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    sc_eval->add_option("--split-dir", split_dir, "split directory")->required();
    sc_eval->add_option("--out", out_dir, "report output directory")->required();
    sc_eval->add_option("--emotion-lexicon", emotion_path, "NRC-format lexicon TSV");
    sc_eval->add_option("--bad-words", bad_word_paths, "bad word list file(s)");

    // ----- predict -----
    auto* sc_pred = app.add_subcommand("predict", "predict ratings for a jsonl of movies");
    std::string input_path;
    sc_pred->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    sc_pred->add_option("--input", input_path, "input jsonl")->required();
    sc_pred->add_option("--emotion-lexicon", emotion_path, "NRC-format lexicon TSV");

    // ----- analyze -----
    auto* sc_analyze = app.add_subcommand("analyze", "lexicon-based corpus analysis");
    sc_analyze->add_option("--corpus", corpus_path, "corpus jsonl")->required();
    sc_analyze->add_option("--bad-words", bad_word_paths, "bad word list file(s)")->required();
    sc_analyze->add_option("--emotion-lexicon", emotion_path, "NRC-format lexicon TSV");
    sc_analyze->add_option("--out", out_dir, "output directory")->required();

    // ----- baseline -----
    auto* sc_base = app.add_subcommand("baseline", "run a comparison system");
    std::string kind;
    sc_base->add_option("--kind", kind, "threshold|svm|cnn")->required();
    sc_base->add_option("--split-dir", split_dir, "split directory")->required();
    sc_base->add_option("--out", out_dir, "report output directory")->required();
    sc_base->add_option("--bad-words", bad_word_paths, "bad word list file(s)");
    sc_base->add_option("--emotion-lexicon", emotion_path, "NRC-format lexicon TSV");
    sc_base->add_option("--embeddings", embeddings_path, "embedding file (cnn)");
    sc_base->add_option("--config", config_path, "model config (cnn)");
    auto* base_seed_opt = sc_base->add_option("--seed", seed, "random seed");

    CLI11_PARSE(app, argc, argv);
    seed_given = train_seed_opt->count() > 0 || base_seed_opt->count() > 0;

    std::vector<std::string> argv_rest;
    for (int i = 1; i < argc; ++i) argv_rest.emplace_back(argv[i]);

    auto load_split = [&](const std::string& dir) {
        DatasetSplit split;
        split.train = load_corpus((fs::path(dir) / "train.jsonl").string());
        split.validation = load_corpus((fs::path(dir) / "valid.jsonl").string());
        split.test = load_corpus((fs::path(dir) / "test.jsonl").string());
        return split;
    };

    if (*sc_split) {
        require_exists(corpus_path, "--corpus");
        auto corpus = load_corpus(corpus_path, !lenient);
        auto split = stratified_split(corpus, 0.8, 0.1, 0.1, seed);
        fs::create_directories(out_dir);
        save_corpus((fs::path(out_dir) / "train.jsonl").string(), split.train);
        save_corpus((fs::path(out_dir) / "valid.jsonl").string(), split.validation);
        save_corpus((fs::path(out_dir) / "test.jsonl").string(), split.test);
        write_run_meta(out_dir, "split", argv_rest, seed, threads);
        std::cout << "split: train=" << split.train.size()
                  << " valid=" << split.validation.size() << " test=" << split.test.size()
                  << "\n";
        return 0;
    }

    if (*sc_train) {
        ModelConfig config;
        if (!config_path.empty()) {
            require_exists(config_path, "--config");
            std::ifstream in(config_path);
            std::stringstream ss;
            ss << in.rdbuf();
            config = config_from_text(ss.str());
        }
        if (seed_given) config.seed = seed;
        require_exists(split_dir, "--split-dir");
        require_exists(embeddings_path, "--embeddings");
        if (config.use_emotion) {
            if (emotion_path.empty())
                throw std::runtime_error("config uses emotion features: --emotion-lexicon required");
            require_exists(emotion_path, "--emotion-lexicon");
        }
        auto split = load_split(split_dir);

        std::vector<std::vector<std::string>> train_tokens;
        for (const auto& rec : split.train) train_tokens.push_back(tokenize_record(rec));
        auto vocab = build_vocabulary(train_tokens, min_count);
        auto embeddings = load_embeddings(embeddings_path, vocab, config.emb_dim);
        std::cerr << "vocabulary " << vocab.size() << " words, embedding coverage "
                  << embeddings.covered << "\n";

        EmotionLexicon lexicon;
        if (config.use_emotion) lexicon = load_emotion_lexicon(emotion_path);

        RatingClassifier<float> model(config, vocab, embeddings);
        auto train_samples = make_samples(split.train, model.vocab, config,
                                          config.use_emotion ? &lexicon : nullptr);
        auto val_samples = make_samples(split.validation, model.vocab, config,
                                        config.use_emotion ? &lexicon : nullptr);
        auto history = train_model(model, train_samples, val_samples);
        save_checkpoint(model, ckpt_out);
        std::cout << "best epoch " << history.best_epoch << " validation weighted F1 "
                  << fmt(history.best_val_f1) << "\n";
        return 0;
    }

    if (*sc_eval) {
        require_exists(ckpt_path, "--ckpt");
        require_exists(split_dir, "--split-dir");
        auto model = load_checkpoint(ckpt_path);
        model.require_features(!emotion_path.empty() || !model.config.use_emotion, true);
        EmotionLexicon lexicon;
        if (model.config.use_emotion) lexicon = load_emotion_lexicon(emotion_path);
        auto split = load_split(split_dir);
        auto samples = make_samples(split.test, model.vocab, model.config,
                                    model.config.use_emotion ? &lexicon : nullptr);
        auto preds = predict(model, samples);

        std::vector<int> gold, pred;
        std::vector<std::array<double, kNumEmotionCategories>> emotions;
        std::vector<AttentionReportInput> attn_inputs;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            gold.push_back(samples[i].label);
            pred.push_back(preds[i].predicted);
            emotions.push_back(samples[i].emotion);
            AttentionReportInput in;
            in.gold = samples[i].label;
            in.predicted = preds[i].predicted;
            auto tokens = tokenize_record(split.test[i]);
            if (static_cast<int>(tokens.size()) > samples[i].seq.true_length)
                tokens.resize(static_cast<std::size_t>(samples[i].seq.true_length));
            in.tokens = std::move(tokens);
            in.weights = preds[i].attention;
            attn_inputs.push_back(std::move(in));
        }

        fs::create_directories(out_dir);
        auto tables = compute_metrics(gold, pred);
        write_metrics(out_dir, tables);
        write_per_genre(out_dir, per_genre_f1(split.test, pred));
        write_emotion_profile(out_dir, emotion_profile(gold, pred, emotions));
        write_attention_words(
            out_dir, attention_word_report(attn_inputs, static_cast<int>(kNumRatings)));
        if (!bad_word_paths.empty()) {
            auto bad = load_bad_words(bad_word_paths);
            std::map<int, std::vector<std::vector<std::string>>> by_class;
            for (const auto& rec : split.test)
                by_class[static_cast<int>(rec.rating)].push_back(tokenize_record(rec));
            write_bad_words(out_dir, bad_word_table(by_class, bad));
        } else {
            std::ofstream out(fs::path(out_dir) / "bad_words.tsv");
            out << "class\trank\tword\tratio\n";
        }
        write_run_meta(out_dir, "evaluate", argv_rest, model.config.seed, threads);
        std::cout << "test weighted F1 " << fmt(tables.wf1) << "\n";
        return 0;
    }

    if (*sc_pred) {
        require_exists(ckpt_path, "--ckpt");
        require_exists(input_path, "--input");
        auto model = load_checkpoint(ckpt_path);
        model.require_features(!emotion_path.empty() || !model.config.use_emotion, true);
        EmotionLexicon lexicon;
        if (model.config.use_emotion) lexicon = load_emotion_lexicon(emotion_path);
        auto records = load_corpus(input_path);
        auto samples = make_samples(records, model.vocab, model.config,
                                    model.config.use_emotion ? &lexicon : nullptr);
        auto preds = predict(model, samples);
        for (const auto& p : preds) {
            std::cout << p.id << "\t" << to_string(static_cast<Rating>(p.predicted)) << "\t";
            for (std::size_t i = 0; i < p.probs.size(); ++i)
                std::cout << (i ? " " : "") << fmt(p.probs[i]);
            std::cout << "\n";
        }
        return 0;
    }

    if (*sc_analyze) {
        require_exists(corpus_path, "--corpus");
        auto corpus = load_corpus(corpus_path);
        auto bad = load_bad_words(bad_word_paths);
        fs::create_directories(out_dir);
        std::map<int, std::vector<std::vector<std::string>>> by_class;
        for (const auto& rec : corpus)
            by_class[static_cast<int>(rec.rating)].push_back(tokenize_record(rec));
        write_bad_words(out_dir, bad_word_table(by_class, bad));
        if (!emotion_path.empty()) {
            auto lexicon = load_emotion_lexicon(emotion_path);
            // class-mean emotion vectors (all records counted as "correct")
            std::vector<int> gold;
            std::vector<std::array<double, kNumEmotionCategories>> emotions;
            for (const auto& rec : corpus) {
                gold.push_back(static_cast<int>(rec.rating));
                emotions.push_back(emotion_vector(tokenize_record(rec), lexicon));
            }
            write_emotion_profile(out_dir, emotion_profile(gold, gold, emotions));
        }
        write_run_meta(out_dir, "analyze", argv_rest, 0, threads);
        return 0;
    }

    if (*sc_base) {
        require_exists(split_dir, "--split-dir");
        auto split = load_split(split_dir);
        fs::create_directories(out_dir);
        std::vector<int> gold;
        for (const auto& rec : split.test) gold.push_back(static_cast<int>(rec.rating));
        std::vector<int> pred;

        if (kind == "threshold") {
            if (bad_word_paths.empty())
                throw std::runtime_error("baseline threshold: --bad-words required");
            auto bad = load_bad_words(bad_word_paths);
            std::vector<std::pair<double, Rating>> train_pairs;
            for (const auto& rec : split.train)
                train_pairs.emplace_back(bad_word_ratio(tokenize_record(rec), bad), rec.rating);
            auto model = fit_thresholds(train_pairs);
            for (const auto& rec : split.test)
                pred.push_back(static_cast<int>(
                    threshold_predict(model, bad_word_ratio(tokenize_record(rec), bad))));
            std::ofstream out(fs::path(out_dir) / "thresholds.tsv");
            out << "t1\tt2\tt3\tt4\ttrain_weighted_f1\n";
            for (double t : model.thresholds) out << fmt(t) << "\t";
            out << fmt(model.train_weighted_f1) << "\n";
        } else if (kind == "svm") {
            EmotionLexicon lexicon;
            if (!emotion_path.empty()) lexicon = load_emotion_lexicon(emotion_path);
            SvmFeatureSpace space;
            space.build(split.train);
            auto featurize_all = [&](const std::vector<MovieRecord>& recs) {
                std::vector<SparseVector> xs;
                for (const auto& rec : recs)
                    xs.push_back(
                        space.featurize(rec, emotion_vector(tokenize_record(rec), lexicon)));
                return xs;
            };
            auto train_x = featurize_all(split.train);
            auto val_x = featurize_all(split.validation);
            auto test_x = featurize_all(split.test);
            std::vector<int> train_y, val_y;
            for (const auto& rec : split.train) train_y.push_back(static_cast<int>(rec.rating));
            for (const auto& rec : split.validation) val_y.push_back(static_cast<int>(rec.rating));
            auto model = svm_fit(train_x, train_y, val_x, val_y, space.dim(), {1, 10, 100, 1000},
                                 20, seed);
            for (const auto& x : test_x) pred.push_back(svm_predict(model, x));
            std::cout << "svm: chosen C=" << model.chosen_c << " validation weighted F1 "
                      << fmt(model.val_weighted_f1) << "\n";
        } else if (kind == "cnn") {
            if (embeddings_path.empty())
                throw std::runtime_error("baseline cnn: --embeddings required");
            CnnConfig cfg;
            if (!config_path.empty()) {
                std::ifstream in(config_path);
                std::stringstream ss;
                ss << in.rdbuf();
                cfg.base = config_from_text(ss.str());
            }
            if (seed_given) cfg.base.seed = seed;
            if (cfg.base.use_emotion && emotion_path.empty())
                throw std::runtime_error("baseline cnn: --emotion-lexicon required");
            EmotionLexicon lexicon;
            if (cfg.base.use_emotion) lexicon = load_emotion_lexicon(emotion_path);
            std::vector<std::vector<std::string>> train_tokens;
            for (const auto& rec : split.train) train_tokens.push_back(tokenize_record(rec));
            auto vocab = build_vocabulary(train_tokens, 1);
            auto embeddings = load_embeddings(embeddings_path, vocab, cfg.base.emb_dim);
            CnnClassifier<float> model(cfg, vocab, embeddings);
            auto train_samples = make_samples(split.train, model.vocab, cfg.base,
                                              cfg.base.use_emotion ? &lexicon : nullptr);
            auto val_samples = make_samples(split.validation, model.vocab, cfg.base,
                                            cfg.base.use_emotion ? &lexicon : nullptr);
            auto test_samples = make_samples(split.test, model.vocab, cfg.base,
                                             cfg.base.use_emotion ? &lexicon : nullptr);
            train_model(model, train_samples, val_samples);
            for (const auto& p : predict(model, test_samples)) pred.push_back(p.predicted);
        } else {
            throw std::runtime_error("baseline: unknown --kind '" + kind +
                                     "' (expected threshold|svm|cnn)");
        }

        auto tables = compute_metrics(gold, pred);
        write_metrics(out_dir, tables);
        write_per_genre(out_dir, per_genre_f1(split.test, pred));
        write_run_meta(out_dir, "baseline", argv_rest, seed, threads);
        std::cout << "baseline " << kind << ": test weighted F1 " << fmt(tables.wf1) << "\n";
        return 0;
    }

    return 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "scriptgauge: " << e.what() << "\n";
        return 1;
    }
}
