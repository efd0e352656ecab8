#pragma once

// Shared fixtures for the test suites: seeded toy model builders, a planted
// model with an analytically known logit formula, and independent oracles
// (an unfused double-precision forward pass and a dense Jacobi
// eigendecomposition). The oracles deliberately do not share code with the
// library paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "icon2/model.hpp"
#include "icon2/rng.hpp"

namespace icon2::testing {

inline Tensor make_tensor(std::vector<int64_t> shape, std::vector<float> data) {
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(data);
    return t;
}

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, float scale) {
    Tensor t;
    t.shape = std::move(shape);
    size_t n = t.element_count();
    t.data.resize(n);
    for (size_t i = 0; i < n; ++i)
        t.data[i] = static_cast<float>(rng.next_gaussian()) * scale;
    return t;
}

inline Tensor const_tensor(std::vector<int64_t> shape, float value) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(t.element_count(), value);
    return t;
}

// Seeded random toy model (library builder with a compact signature). The
// default weight scale keeps activations O(1) so float comparisons against
// the double oracle stay tight.
inline ModelBundle make_toy_model(uint64_t seed, int n_layers, int d_model, int n_heads, int d_ff,
                                  int max_seq_len = 128, int vocab_size = ByteTokenizer::kVocabSize,
                                  bool tied = false) {
    ModelConfig cfg;
    cfg.n_layers = n_layers;
    cfg.d_model = d_model;
    cfg.n_heads = n_heads;
    cfg.d_ff = d_ff;
    cfg.vocab_size = vocab_size;
    cfg.max_seq_len = max_seq_len;
    cfg.layer_norm_eps = 1e-5f;
    cfg.tied_unemb = tied;
    return random_model(cfg, seed);
}

// ---------------------------------------------------------------------------
// Planted model. Blocks are pass-through (attention output projection and MLP
// second matrix are zero), so the last position's final hidden state is just
// its embedding plus whatever steering added. With
//   u = (e0 - e1)/sqrt(2)         (steering direction, zero-sum)
//   w = (e2 - e3)                 (anchor direction, zero-sum)
//   unemb[b] = s_b * u_raw - s_b^2 * w,  s_b = (b - 128)/128  for bytes b
//   tok_emb[SEP] = c_w * w
// the first-step logit of byte b under steering gamma is analytically
//   logit_b = (s_b * <z,u_raw> - s_b^2 * <z,w>) / sigma(z),  z = emb + gamma*u
// and the greedy argmax lands near s* = gamma / (2 * c_w * |w|^2 / |u_raw... )
// -- the test recomputes the exact formula rather than trusting this comment.
// ---------------------------------------------------------------------------
struct PlantedModel {
    ModelBundle model;
    Vec u;          // unit steering direction
    double c_w;     // anchor coefficient on w = e2 - e3
    int target_token;

    static constexpr int kDModel = 8;

    double s_of(int byte) const { return (byte - 128) / 128.0; }
};

inline PlantedModel make_planted_model(int target_token = 200, double c_w = 0.25,
                                       double emb_signal = 0.0) {
    const int d = PlantedModel::kDModel;
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = d;
    cfg.n_heads = 1;
    cfg.d_ff = 8;
    cfg.vocab_size = ByteTokenizer::kVocabSize;
    cfg.max_seq_len = 64;
    cfg.layer_norm_eps = 1e-5f;

    const float inv_sqrt2 = 1.0f / std::sqrt(2.0f);
    Vec u(d, 0.0f);
    u[0] = inv_sqrt2;
    u[1] = -inv_sqrt2;

    std::map<std::string, Tensor> t;

    Tensor tok_emb = const_tensor({cfg.vocab_size, d}, 0.0f);
    // every token embeds to the same anchor c_w * (e2 - e3); position 0 of
    // pos_emb is zero, so the current-position hidden state is the anchor.
    // With emb_signal, byte tokens additionally carry s_b * emb_signal along
    // u, which a projection of their representations can read back; the
    // special tokens stay neutral so the steered current position (SEP or
    // BOS) keeps the anchor-only hidden state the analysis assumes.
    for (int v = 0; v < cfg.vocab_size; ++v) {
        tok_emb.data[static_cast<size_t>(v) * d + 2] = static_cast<float>(c_w);
        tok_emb.data[static_cast<size_t>(v) * d + 3] = static_cast<float>(-c_w);
        if (v < 256 && emb_signal != 0.0) {
            const double s = (v - 128) / 128.0;
            tok_emb.data[static_cast<size_t>(v) * d + 0] =
                static_cast<float>(emb_signal * s * inv_sqrt2);
            tok_emb.data[static_cast<size_t>(v) * d + 1] =
                static_cast<float>(-emb_signal * s * inv_sqrt2);
        }
    }
    t["tok_emb"] = std::move(tok_emb);
    t["pos_emb"] = const_tensor({cfg.max_seq_len, d}, 0.0f);

    const std::string p = "layers.0.";
    t[p + "ln1.g"] = const_tensor({d}, 1.0f);
    t[p + "ln1.b"] = const_tensor({d}, 0.0f);
    t[p + "attn.wq"] = const_tensor({d, d}, 0.0f);
    t[p + "attn.wk"] = const_tensor({d, d}, 0.0f);
    t[p + "attn.wv"] = const_tensor({d, d}, 0.0f);
    t[p + "attn.wo"] = const_tensor({d, d}, 0.0f);
    t[p + "ln2.g"] = const_tensor({d}, 1.0f);
    t[p + "ln2.b"] = const_tensor({d}, 0.0f);
    t[p + "mlp.w1"] = const_tensor({d, cfg.d_ff}, 0.0f);
    t[p + "mlp.b1"] = const_tensor({cfg.d_ff}, 0.0f);
    t[p + "mlp.w2"] = const_tensor({cfg.d_ff, d}, 0.0f);
    t[p + "mlp.b2"] = const_tensor({d}, 0.0f);
    t["ln_f.g"] = const_tensor({d}, 1.0f);
    t["ln_f.b"] = const_tensor({d}, 0.0f);

    // unemb[b] = s_b * (e0 - e1) - s_b^2 * (e2 - e3) for bytes; specials score
    // far below every byte so generation never stops early
    Tensor unemb = const_tensor({cfg.vocab_size, d}, 0.0f);
    for (int b = 0; b < 256; ++b) {
        const double s = (b - 128) / 128.0;
        unemb.data[static_cast<size_t>(b) * d + 0] = static_cast<float>(s);
        unemb.data[static_cast<size_t>(b) * d + 1] = static_cast<float>(-s);
        unemb.data[static_cast<size_t>(b) * d + 2] = static_cast<float>(-s * s);
        unemb.data[static_cast<size_t>(b) * d + 3] = static_cast<float>(s * s);
    }
    for (int v = 256; v < cfg.vocab_size; ++v) {
        unemb.data[static_cast<size_t>(v) * d + 2] = -10.0f;
        unemb.data[static_cast<size_t>(v) * d + 3] = 10.0f;
    }
    t["unemb"] = std::move(unemb);

    PlantedModel pm;
    pm.model = ModelBundle::from_parts(cfg, std::move(t));
    pm.u = u;
    pm.c_w = c_w;
    pm.target_token = target_token;
    return pm;
}

// Direct logit formula for the planted model: layer-norm the analytically
// known hidden state in double, then dot with the unembedding row.
inline double planted_logit(const PlantedModel& pm, double gamma, int token) {
    const int d = PlantedModel::kDModel;
    std::vector<double> z(d, 0.0);
    z[2] = pm.c_w;
    z[3] = -pm.c_w;
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    z[0] += gamma * inv_sqrt2;
    z[1] -= gamma * inv_sqrt2;

    double mean = 0.0;
    for (double v : z) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : z) var += (v - mean) * (v - mean);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + pm.model.config.layer_norm_eps);

    const Tensor& ue = pm.model.tensor("unemb");
    double acc = 0.0;
    for (int i = 0; i < d; ++i)
        acc += (z[i] - mean) * inv * static_cast<double>(ue.data[static_cast<size_t>(token) * d + i]);
    return acc;
}

// ---------------------------------------------------------------------------
// Reference forward pass: full-sequence, unfused, double precision. Used as
// the independent oracle for forward_capture and contrastive_reps.
// ---------------------------------------------------------------------------
inline std::vector<std::vector<double>> reference_forward_all_layers(
    const ModelBundle& m, const std::vector<TokenId>& tokens) {
    const ModelConfig& c = m.config;
    const int d = c.d_model;
    const int n = static_cast<int>(tokens.size());
    const int dh = d / c.n_heads;

    auto at = [&](const std::string& name) -> const Tensor& { return m.tensor(name); };

    auto ln = [&](const std::vector<double>& x, const Tensor& g, const Tensor& b) {
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= d;
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(c.layer_norm_eps));
        std::vector<double> out(d);
        for (int i = 0; i < d; ++i)
            out[i] = (x[i] - mean) * inv * g.data[i] + b.data[i];
        return out;
    };

    auto matmul = [&](const std::vector<std::vector<double>>& x, const Tensor& w) {
        const int in = static_cast<int>(w.shape[0]);
        const int out_dim = static_cast<int>(w.shape[1]);
        std::vector<std::vector<double>> y(x.size(), std::vector<double>(out_dim, 0.0));
        for (size_t r = 0; r < x.size(); ++r)
            for (int j = 0; j < out_dim; ++j) {
                double acc = 0.0;
                for (int i = 0; i < in; ++i) acc += x[r][i] * w.data[static_cast<size_t>(i) * out_dim + j];
                y[r][j] = acc;
            }
        return y;
    };

    std::vector<std::vector<double>> x(n, std::vector<double>(d));
    for (int p = 0; p < n; ++p)
        for (int i = 0; i < d; ++i)
            x[p][i] = static_cast<double>(at("tok_emb").data[static_cast<size_t>(tokens[p]) * d + i]) +
                      static_cast<double>(at("pos_emb").data[static_cast<size_t>(p) * d + i]);

    std::vector<std::vector<double>> last_per_layer;
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string pfx = "layers." + std::to_string(l) + ".";
        std::vector<std::vector<double>> normed(n);
        for (int p = 0; p < n; ++p) normed[p] = ln(x[p], at(pfx + "ln1.g"), at(pfx + "ln1.b"));

        auto q = matmul(normed, at(pfx + "attn.wq"));
        auto k = matmul(normed, at(pfx + "attn.wk"));
        auto v = matmul(normed, at(pfx + "attn.wv"));

        std::vector<std::vector<double>> attn(n, std::vector<double>(d, 0.0));
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int h = 0; h < c.n_heads; ++h) {
            const int off = h * dh;
            for (int p = 0; p < n; ++p) {
                std::vector<double> scores(p + 1);
                double mx = -1e300;
                for (int t = 0; t <= p; ++t) {
                    double acc = 0.0;
                    for (int i = 0; i < dh; ++i) acc += q[p][off + i] * k[t][off + i];
                    scores[t] = acc * scale;
                    if (scores[t] > mx) mx = scores[t];
                }
                double sum = 0.0;
                for (double& sc : scores) {
                    sc = std::exp(sc - mx);
                    sum += sc;
                }
                for (double& sc : scores) sc /= sum;
                for (int t = 0; t <= p; ++t)
                    for (int i = 0; i < dh; ++i) attn[p][off + i] += scores[t] * v[t][off + i];
            }
        }
        auto proj = matmul(attn, at(pfx + "attn.wo"));
        for (int p = 0; p < n; ++p)
            for (int i = 0; i < d; ++i) x[p][i] += proj[p][i];

        std::vector<std::vector<double>> normed2(n);
        for (int p = 0; p < n; ++p) normed2[p] = ln(x[p], at(pfx + "ln2.g"), at(pfx + "ln2.b"));
        auto ff = matmul(normed2, at(pfx + "mlp.w1"));
        for (int p = 0; p < n; ++p)
            for (int j = 0; j < c.d_ff; ++j) {
                double z = ff[p][j] + static_cast<double>(at(pfx + "mlp.b1").data[j]);
                const double kgelu = 0.7978845608028654;
                ff[p][j] = 0.5 * z * (1.0 + std::tanh(kgelu * (z + 0.044715 * z * z * z)));
            }
        auto ff2 = matmul(ff, at(pfx + "mlp.w2"));
        for (int p = 0; p < n; ++p)
            for (int i = 0; i < d; ++i) x[p][i] += ff2[p][i] + static_cast<double>(at(pfx + "mlp.b2").data[i]);

        last_per_layer.push_back(x[n - 1]);
    }
    return last_per_layer;
}

// ---------------------------------------------------------------------------
// Dense symmetric eigendecomposition (cyclic Jacobi). Oracle for the PCA
// power-iteration path.
// ---------------------------------------------------------------------------
inline std::vector<double> jacobi_top_eigenvector(std::vector<std::vector<double>> a) {
    const int n = static_cast<int>(a.size());
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) v[i][i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a[p][i], aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = v[i][p], viq = v[i][q];
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (a[i][i] > a[best][best]) best = i;
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = v[i][best];
    return out;
}

// Sample covariance of mean-centered rows, in double.
inline std::vector<std::vector<double>> sample_covariance(const std::vector<Vec>& rows) {
    const size_t m = rows.size();
    const size_t d = rows[0].size();
    std::vector<double> mean(d, 0.0);
    for (const Vec& r : rows)
        for (size_t i = 0; i < d; ++i) mean[i] += r[i];
    for (double& v : mean) v /= static_cast<double>(m);
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (const Vec& r : rows)
        for (size_t i = 0; i < d; ++i)
            for (size_t j = 0; j < d; ++j)
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
    for (auto& row : cov)
        for (double& v : row) v /= static_cast<double>(m - 1);
    return cov;
}

// Independent Mann-Whitney oracle: recursive census of all C(n, nx) rank
// assignments, ranks recomputed here from scratch (average ranks as
// rationals via doubling). No code shared with the library path.
inline double oracle_exact_p(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> sorted;
    for (double v : x) sorted.push_back(v);
    for (double v : y) sorted.push_back(v);
    std::sort(sorted.begin(), sorted.end());

    auto doubled_rank_of = [&](double v) {
        int64_t lo = 0, hi = 0;
        for (size_t i = 0; i < sorted.size(); ++i) {
            if (sorted[i] < v) ++lo;
            if (sorted[i] <= v) ++hi;
        }
        return lo + hi + 1;  // (lo+1) + hi, i.e. first rank + last rank
    };

    const int64_t nx = static_cast<int64_t>(x.size());
    int64_t u2_obs = -nx * (nx + 1);
    for (double v : x) u2_obs += doubled_rank_of(v);

    std::vector<int64_t> ranks;
    for (double v : sorted) ranks.push_back(doubled_rank_of(v));

    uint64_t le = 0, ge = 0, total = 0;
    std::function<void(size_t, int64_t, int64_t)> walk = [&](size_t pos, int64_t taken,
                                                             int64_t sum) {
        if (taken == nx) {
            const int64_t u2 = sum - nx * (nx + 1);
            ++total;
            if (u2 <= u2_obs) ++le;
            if (u2 >= u2_obs) ++ge;
            return;
        }
        if (pos >= ranks.size()) return;
        if (static_cast<int64_t>(ranks.size() - pos) < nx - taken) return;
        walk(pos + 1, taken + 1, sum + ranks[pos]);
        walk(pos + 1, taken, sum);
    };
    walk(0, 0, 0);
    const double tail = static_cast<double>(std::min(le, ge)) / static_cast<double>(total);
    return std::min(1.0, 2.0 * tail);
}

// deterministic pseudo-text, handy for synthetic instruction corpora
inline std::string random_words(Rng& rng, int min_words, int max_words) {
    static const char* kWords[] = {
        "explain",  "write",  "list",    "compare", "draft",   "review",  "the",     "a",
        "short",    "long",   "simple",  "detailed", "story",  "poem",    "plan",    "function",
        "sort",     "search", "matrix",  "graph",   "city",    "river",   "animal",  "recipe",
        "history",  "music",  "game",    "travel",  "budget",  "letter",  "email",   "summary",
        "question", "answer", "idea",    "design",  "model",   "steps",   "safety",  "honest",
        "kind",     "fast",   "robust",  "careful", "bright",  "quiet",   "novel",   "classic",
        "tiny",     "huge"};
    const int n_words = min_words + static_cast<int>(rng.next_below(max_words - min_words + 1));
    std::string out;
    for (int i = 0; i < n_words; ++i) {
        if (i > 0) out += ' ';
        out += kWords[rng.next_below(sizeof(kWords) / sizeof(kWords[0]))];
    }
    return out;
}

}  // namespace icon2::testing
