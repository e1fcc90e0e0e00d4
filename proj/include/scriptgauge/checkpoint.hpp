#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "scriptgauge/model.hpp"

namespace scriptgauge {

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'S', 'G', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct ByteWriter {
    std::string buf;
    void raw(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void tensor_f32(const std::string& name, int rows, int cols, const float* values) {
        str(name);
        u32(static_cast<std::uint32_t>(rows));
        u32(static_cast<std::uint32_t>(cols));
        raw(values, static_cast<std::size_t>(rows) * cols * sizeof(float));
    }
};

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit ByteReader(const std::string& b) : buf(b) {}
    void raw(void* p, std::size_t n) {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated data");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        const auto n = u64();
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated string");
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
};

template <typename T>
inline std::vector<float> to_f32(const Tensor2<T>& t) {
    std::vector<float> out(t.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(t.data[i]);
    return out;
}

} // namespace detail

// Layout: magic, version, config text, vocabulary, named float32 tensors
// (parameters, running stats, Adam moments, embedding), FNV-1a checksum of
// all preceding bytes.
inline void save_checkpoint(const RatingClassifier<float>& model_in, const std::string& path) {
    auto& model = const_cast<RatingClassifier<float>&>(model_in);
    detail::ByteWriter w;
    w.raw(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    w.u32(detail::kCheckpointVersion);
    w.str(config_to_text(model.config));

    const auto& words = model.vocab.words();
    w.u64(words.size() - 2); // PAD and UNK are implicit
    for (std::size_t i = 2; i < words.size(); ++i) w.str(words[i]);

    std::vector<std::pair<std::string, const Tensor2<float>*>> tensors;
    for (auto* p : model.parameters()) tensors.emplace_back(p->name, &p->value);
    tensors.emplace_back("bn.running_mean", &model.running_mean);
    tensors.emplace_back("bn.running_var", &model.running_var);
    for (auto* p : model.parameters()) {
        tensors.emplace_back("adam." + p->name + ".m", &model.adam[p->name].m);
        tensors.emplace_back("adam." + p->name + ".v", &model.adam[p->name].v);
    }
    tensors.emplace_back("embedding", &model.embedding.weights);

    w.u64(tensors.size());
    for (const auto& [name, t] : tensors) w.tensor_f32(name, t->rows, t->cols, t->data.data());
    // Adam step counters
    w.u64(model.adam.size());
    for (const auto& [name, state] : model.adam) {
        w.str(name);
        w.u64(static_cast<std::uint64_t>(state.t));
    }

    w.u64(detail::fnv1a64(w.buf.data(), w.buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline RatingClassifier<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < sizeof(detail::kCheckpointMagic) + 12)
        throw std::runtime_error("load_checkpoint: file too short");

    std::uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    if (detail::fnv1a64(buf.data(), buf.size() - 8) != stored)
        throw std::runtime_error("load_checkpoint: checksum mismatch (corrupted file)");

    const std::string body = buf.substr(0, buf.size() - 8);
    detail::ByteReader r(body);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic");
    const auto version = r.u32();
    if (version != detail::kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported format version " +
                                 std::to_string(version));
    const ModelConfig config = config_from_text(r.str());

    Vocabulary vocab;
    const auto n_words = r.u64();
    for (std::uint64_t i = 0; i < n_words; ++i) vocab.add_word(r.str());

    std::map<std::string, Tensor2<float>> tensors;
    const auto n_tensors = r.u64();
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        const std::string name = r.str();
        const int rows = static_cast<int>(r.u32());
        const int cols = static_cast<int>(r.u32());
        Tensor2<float> t(rows, cols);
        r.raw(t.data.data(), t.data.size() * sizeof(float));
        tensors.emplace(name, std::move(t));
    }
    std::map<std::string, std::uint64_t> adam_t;
    const auto n_adam = r.u64();
    for (std::uint64_t i = 0; i < n_adam; ++i) {
        const std::string name = r.str();
        adam_t[name] = r.u64();
    }

    auto take = [&tensors](const std::string& name) -> Tensor2<float> {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw std::runtime_error("load_checkpoint: missing tensor '" + name + "'");
        return std::move(it->second);
    };

    EmbeddingTable emb;
    emb.weights = take("embedding");
    emb.dim = config.emb_dim;

    RatingClassifier<float> model(config, std::move(vocab), std::move(emb));
    for (auto* p : model.parameters()) {
        Tensor2<float> t = take(p->name);
        if (!t.same_shape(p->value))
            throw std::runtime_error("load_checkpoint: shape mismatch for '" + p->name + "'");
        p->value = std::move(t);
        model.adam[p->name].m = take("adam." + p->name + ".m");
        model.adam[p->name].v = take("adam." + p->name + ".v");
        auto it = adam_t.find(p->name);
        model.adam[p->name].t = it == adam_t.end() ? 0 : static_cast<long long>(it->second);
    }
    model.running_mean = take("bn.running_mean");
    model.running_var = take("bn.running_var");
    return model;
}

} // namespace scriptgauge
