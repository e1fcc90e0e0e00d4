#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "scriptgauge/rng.hpp"

namespace scriptgauge {

// Dense row-major matrix. double in test/grad-check mode, float in train mode.
template <typename T>
struct Tensor2 {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Tensor2() = default;
    Tensor2(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}

    T& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
    const T& at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

    std::size_t size() const { return data.size(); }
    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

    // uniform in ±1/sqrt(fan_in)
    void init_uniform(Rng& rng, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
    }
};

// A learnable tensor with its gradient buffer.
template <typename T>
struct Parameter {
    std::string name;
    Tensor2<T> value;
    Tensor2<T> grad;

    Parameter() = default;
    Parameter(std::string n, int r, int c)
        : name(std::move(n)), value(r, c), grad(r, c) {}

    void zero_grad() { grad.zero(); }
};

// y += A x   (A: m x n, x: n, y: m)
template <typename T>
inline void matvec_add(const Tensor2<T>& a, const T* x, T* y) {
    for (int i = 0; i < a.rows; ++i) {
        const T* row = a.data.data() + static_cast<std::size_t>(i) * a.cols;
        T acc = T(0);
        for (int j = 0; j < a.cols; ++j) acc += row[j] * x[j];
        y[i] += acc;
    }
}

// y += A^T x   (A: m x n, x: m, y: n)
template <typename T>
inline void matvec_transpose_add(const Tensor2<T>& a, const T* x, T* y) {
    for (int i = 0; i < a.rows; ++i) {
        const T* row = a.data.data() + static_cast<std::size_t>(i) * a.cols;
        const T xi = x[i];
        for (int j = 0; j < a.cols; ++j) y[j] += xi * row[j];
    }
}

// A += x y^T   (x: m, y: n, A: m x n)
template <typename T>
inline void outer_add(Tensor2<T>& a, const T* x, const T* y) {
    for (int i = 0; i < a.rows; ++i) {
        T* row = a.data.data() + static_cast<std::size_t>(i) * a.cols;
        const T xi = x[i];
        for (int j = 0; j < a.cols; ++j) row[j] += xi * y[j];
    }
}

// In-place stable softmax (max subtraction).
template <typename T>
inline void softmax_inplace(std::vector<T>& x) {
    if (x.empty()) return;
    T mx = *std::max_element(x.begin(), x.end());
    T sum = T(0);
    for (auto& v : x) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : x) v /= sum;
}

template <typename T>
inline std::vector<T> softmax(std::vector<T> x) {
    softmax_inplace(x);
    return x;
}

// -log(p[gold]) with the probability floored at 1e-12.
template <typename T>
inline T cross_entropy(const std::vector<T>& probs, int gold) {
    if (gold < 0 || gold >= static_cast<int>(probs.size()))
        throw std::invalid_argument("cross_entropy: gold index out of range");
    T p = std::max(probs[static_cast<std::size_t>(gold)], T(1e-12));
    return -std::log(p);
}

// Adam moments for one parameter.
template <typename T>
struct AdamState {
    Tensor2<T> m;
    Tensor2<T> v;
    long long t = 0;

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    void init(const Tensor2<T>& shape) {
        m = Tensor2<T>(shape.rows, shape.cols);
        v = Tensor2<T>(shape.rows, shape.cols);
        t = 0;
    }

    void step(Parameter<T>& p, double lr) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const double g = static_cast<double>(p.grad.data[i]);
            double mi = beta1 * static_cast<double>(m.data[i]) + (1.0 - beta1) * g;
            double vi = beta2 * static_cast<double>(v.data[i]) + (1.0 - beta2) * g * g;
            m.data[i] = static_cast<T>(mi);
            v.data[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            p.value.data[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
};

// Scale all gradients so the global L2 norm does not exceed max_norm.
template <typename T>
inline double clip_global_norm(std::vector<Parameter<T>*>& params, double max_norm) {
    double sq = 0.0;
    for (auto* p : params)
        for (T g : p->grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto* p : params)
            for (T& g : p->grad.data) g *= scale;
    }
    return norm;
}

} // namespace scriptgauge
