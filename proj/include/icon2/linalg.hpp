#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "icon2/errors.hpp"

namespace icon2 {

using Vec = std::vector<float>;

// Model arithmetic is float with float accumulation throughout; scalar
// summaries (scores, cosines) accumulate in double. Keep the two regimes
// separate so oracle tolerances stay meaningful.

inline float dot_f32(std::span<const float> a, std::span<const float> b) {
    float acc = 0.0f;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double dot_f64(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

inline double l2_norm(std::span<const float> a) { return std::sqrt(dot_f64(a, a)); }

inline double cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) raise(ErrorKind::DimMismatch, "cosine: length mismatch");
    double na = l2_norm(a);
    double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) raise(ErrorKind::DegenerateInput, "cosine: zero vector");
    return dot_f64(a, b) / (na * nb);
}

// y += s * x
inline void add_scaled(std::span<float> y, std::span<const float> x, float s) {
    for (size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
}

// numerically stable in-place softmax
inline void softmax_inplace(std::span<float> v) {
    float mx = v[0];
    for (float x : v)
        if (x > mx) mx = x;
    float sum = 0.0f;
    for (float& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (float& x : v) x /= sum;
}

inline float gelu(float x) {
    const float k = 0.7978845608028654f;  // sqrt(2/pi)
    return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

// out = layer_norm(x) * g + b
inline void layer_norm(std::span<const float> x, std::span<const float> g, std::span<const float> b,
                       float eps, std::span<float> out) {
    const size_t d = x.size();
    float mean = 0.0f;
    for (float v : x) mean += v;
    mean /= static_cast<float>(d);
    float var = 0.0f;
    for (float v : x) {
        float c = v - mean;
        var += c * c;
    }
    var /= static_cast<float>(d);
    const float inv = 1.0f / std::sqrt(var + eps);
    for (size_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv * g[i] + b[i];
}

}  // namespace icon2
