#include "icon2/directions.hpp"

#include <cmath>
#include <set>

#include "icon2/errors.hpp"
#include "icon2/hash.hpp"
#include "icon2/parallel.hpp"
#include "icon2/rng.hpp"

namespace icon2 {

namespace {

// Each iteration applies the covariance operator twice (power iteration on
// C^2), which doubles the convergence rate for near-degenerate top pairs.
// The successive-cosine tolerance is far below the 1e-6 accuracy the oracle
// comparisons demand; a looser 1e-8 stop leaves a visible angular residual
// when the top two eigenvalues are close.
constexpr int kPcaMaxIterations = 500;
constexpr double kPcaSuccessiveCosineTol = 1e-13;
constexpr uint64_t kPcaStartSeed = 0x9e3779b97f4a7c15ULL;

std::vector<TokenId> joined_tokens(const std::string& prompt, const std::string& instruction) {
    std::vector<TokenId> toks = ByteTokenizer::tokenize(prompt, true);
    toks.push_back(ByteTokenizer::kSep);
    for (TokenId t : ByteTokenizer::tokenize(instruction)) toks.push_back(t);
    return toks;
}

std::string hash_prompt_pair(const ContrastivePromptPair& pair) {
    Fnv1a64 h;
    h.update(pair.positive_prompt);
    h.update("\x1f");
    h.update(pair.negative_prompt);
    return h.hex();
}

}  // namespace

void ContrastivePromptPair::validate() const {
    if (criterion.empty()) raise(ErrorKind::ConfigInvalid, "criterion name is empty");
    if (positive_prompt.empty() || negative_prompt.empty())
        raise(ErrorKind::ConfigInvalid, "prompts for '" + criterion + "' must be non-empty");
    if (positive_prompt == negative_prompt)
        raise(ErrorKind::ConfigInvalid, "prompts for '" + criterion + "' must differ");
}

std::vector<ContrastivePromptPair> default_contrastive_prompts() {
    return {
        {"general",
         "You are a good, respectful and honest assistant. Your responses should be helpful, "
         "meaningful, truthful, harmless, safe, ethical, socially unbiased, positive, "
         "interesting, well-founded, agreeable, specific, reasonable, and role consistent. If a "
         "question does not make any sense, or is not factually coherent, explain why instead of "
         "answering something not correct. Please do not share false information under any "
         "circumstances.",
         "You are a bad, disrespectful and dishonest assistant. Your responses might be useless, "
         "meaningless, untruthful, harmful, dangerous, unethical, socially biased, negative, "
         "boring, fabricated, offensive, vague, unreasonable, or role inconsistent. If a question "
         "does not make any sense, or is not factually coherent, still answer the question and "
         "share false information when necessary."},
        {"harmlessness", "You are a harmless assistant.", "You are a harmful assistant."},
        {"helpfulness", "You are a helpful assistant.", "You are a helpless assistant."},
        {"honesty", "You are an honest assistant.", "You are a dishonest assistant."},
    };
}

int DirectionSet::n_layers() const {
    return by_criterion.empty() ? 0 : static_cast<int>(by_criterion.begin()->second.size());
}

int DirectionSet::d_model() const {
    if (by_criterion.empty() || by_criterion.begin()->second.empty()) return 0;
    return static_cast<int>(by_criterion.begin()->second[0].size());
}

const std::vector<Vec>& DirectionSet::directions_for(const Criterion& c) const {
    auto it = by_criterion.find(c);
    if (it == by_criterion.end()) raise(ErrorKind::CriterionMissing, c);
    return it->second;
}

std::vector<uint8_t> DirectionSet::serialize() const {
    TensorContainer c;
    std::vector<std::string> criteria;
    for (const auto& [crit, layers] : by_criterion) {
        criteria.push_back(crit);
        for (size_t l = 0; l < layers.size(); ++l) {
            Tensor t;
            t.shape = {static_cast<int64_t>(layers[l].size())};
            t.data = layers[l];
            c.tensors.emplace("direction." + crit + ".layer." + std::to_string(l + 1),
                              std::move(t));
        }
    }
    c.metadata["criteria"] = criteria;
    c.metadata["model_hash"] = model_hash;
    c.metadata["n_feat"] = n_feat;
    for (const auto& [crit, ph] : prompt_hash) c.metadata["prompt_hash." + crit] = ph;
    return c.serialize();
}

DirectionSet DirectionSet::deserialize(const std::vector<uint8_t>& bytes) {
    TensorContainer c = TensorContainer::deserialize(bytes);
    DirectionSet ds;
    if (!c.metadata.contains("criteria"))
        raise(ErrorKind::MalformedHeader, "direction file has no criteria list");
    ds.model_hash = c.metadata.value("model_hash", "");
    ds.n_feat = c.metadata.value("n_feat", 0ULL);

    for (const auto& crit : c.metadata["criteria"].get<std::vector<std::string>>()) {
        std::vector<Vec> layers;
        for (int l = 1;; ++l) {
            auto it = c.tensors.find("direction." + crit + ".layer." + std::to_string(l));
            if (it == c.tensors.end()) break;
            layers.push_back(it->second.data);
        }
        if (layers.empty())
            raise(ErrorKind::MissingTensor, "no direction tensors for criterion '" + crit + "'");
        ds.by_criterion.emplace(crit, std::move(layers));
        if (c.metadata.contains("prompt_hash." + crit))
            ds.prompt_hash[crit] = c.metadata["prompt_hash." + crit].get<std::string>();
    }

    const int n = ds.n_layers();
    const int d = ds.d_model();
    for (const auto& [crit, layers] : ds.by_criterion) {
        if (static_cast<int>(layers.size()) != n)
            raise(ErrorKind::ShapeMismatch, "criterion '" + crit + "' has inconsistent layer count");
        for (const Vec& u : layers) {
            if (static_cast<int>(u.size()) != d)
                raise(ErrorKind::DimMismatch, "direction length mismatch for '" + crit + "'");
            if (std::abs(l2_norm(u) - 1.0) > 1e-4)
                raise(ErrorKind::MalformedHeader, "direction for '" + crit + "' is not unit-norm");
        }
    }
    return ds;
}

void DirectionSet::save(const std::string& path) const { write_file_bytes(path, serialize()); }

DirectionSet DirectionSet::load(const std::string& path) {
    return deserialize(read_file_bytes(path));
}

std::pair<LayerRepresentations, LayerRepresentations> contrastive_reps(
    const ModelBundle& model, const ContrastivePromptPair& pair, const std::string& instruction) {
    pair.validate();
    auto pos = joined_tokens(pair.positive_prompt, instruction);
    auto neg = joined_tokens(pair.negative_prompt, instruction);
    const size_t limit = static_cast<size_t>(model.config.max_seq_len);
    if (pos.size() > limit || neg.size() > limit)
        raise(ErrorKind::ContextOverflow, "prompt + instruction exceeds max_seq_len");
    return {forward_capture(model, pos), forward_capture(model, neg)};
}

std::vector<Vec> contrastive_vector(const LayerRepresentations& h_plus,
                                    const LayerRepresentations& h_minus) {
    if (h_plus.n_layers() != h_minus.n_layers() || h_plus.d_model() != h_minus.d_model())
        raise(ErrorKind::DimMismatch, "representation stacks differ in shape");
    std::vector<Vec> out(h_plus.layers.size());
    for (size_t l = 0; l < out.size(); ++l) {
        out[l].resize(h_plus.layers[l].size());
        for (size_t i = 0; i < out[l].size(); ++i)
            out[l][i] = h_plus.layers[l][i] - h_minus.layers[l][i];
    }
    return out;
}

Vec pca_first_component(const std::vector<Vec>& vectors) {
    const size_t m = vectors.size();
    if (m < 2) raise(ErrorKind::DegenerateInput, "PCA needs at least 2 vectors");
    const size_t d = vectors[0].size();
    if (d < 1) raise(ErrorKind::DegenerateInput, "PCA needs dimension >= 1");
    for (const Vec& v : vectors)
        if (v.size() != d) raise(ErrorKind::DimMismatch, "PCA input vectors differ in length");

    // center in double
    std::vector<double> mean(d, 0.0);
    for (const Vec& v : vectors)
        for (size_t i = 0; i < d; ++i) mean[i] += v[i];
    for (double& x : mean) x /= static_cast<double>(m);

    std::vector<std::vector<double>> centered(m, std::vector<double>(d));
    double total_sq = 0.0;
    for (size_t r = 0; r < m; ++r)
        for (size_t i = 0; i < d; ++i) {
            centered[r][i] = vectors[r][i] - mean[i];
            total_sq += centered[r][i] * centered[r][i];
        }
    if (total_sq == 0.0)
        raise(ErrorKind::DegenerateInput, "all vectors identical after centering");

    // matrix-free power iteration: v <- C v = X^T (X v) / (m - 1)
    Rng rng(kPcaStartSeed);
    std::vector<double> v(d);
    double nrm = 0.0;
    for (size_t i = 0; i < d; ++i) {
        v[i] = rng.next_gaussian();
        nrm += v[i] * v[i];
    }
    nrm = std::sqrt(nrm);
    for (double& x : v) x /= nrm;

    std::vector<double> w(d);
    std::vector<double> proj(m);
    auto apply_cov = [&](const std::vector<double>& in) {
        for (size_t r = 0; r < m; ++r) {
            double acc = 0.0;
            for (size_t i = 0; i < d; ++i) acc += centered[r][i] * in[i];
            proj[r] = acc;
        }
        std::fill(w.begin(), w.end(), 0.0);
        for (size_t r = 0; r < m; ++r)
            for (size_t i = 0; i < d; ++i) w[i] += proj[r] * centered[r][i];
    };

    std::vector<double> tmp(d);
    bool converged = false;
    for (int iter = 0; iter < kPcaMaxIterations && !converged; ++iter) {
        apply_cov(v);
        tmp = w;
        apply_cov(tmp);
        double wn = 0.0;
        for (double x : w) wn += x * x;
        wn = std::sqrt(wn);
        if (wn == 0.0)
            raise(ErrorKind::DegenerateInput, "iterate annihilated by covariance operator");
        double cos_step = 0.0;
        for (size_t i = 0; i < d; ++i) {
            w[i] /= wn;
            cos_step += w[i] * v[i];
        }
        v = w;
        if (1.0 - std::abs(cos_step) <= kPcaSuccessiveCosineTol) converged = true;
    }
    if (!converged)
        raise(ErrorKind::NonConvergence,
              "power iteration did not converge within " + std::to_string(kPcaMaxIterations) +
                  " iterations");

    // orient toward the uncentered mean; break exact-zero projection by the
    // first nonzero component
    double mean_proj = 0.0;
    for (size_t i = 0; i < d; ++i) mean_proj += mean[i] * v[i];
    bool flip = mean_proj < 0.0;
    if (mean_proj == 0.0) {
        for (size_t i = 0; i < d; ++i) {
            if (v[i] != 0.0) {
                flip = v[i] < 0.0;
                break;
            }
        }
    }
    Vec out(d);
    for (size_t i = 0; i < d; ++i) out[i] = static_cast<float>(flip ? -v[i] : v[i]);
    return out;
}

DirectionSet extract_directions(const ModelBundle& model, const std::vector<std::string>& d_feat,
                                const std::vector<ContrastivePromptPair>& pairs) {
    if (d_feat.size() < 2)
        raise(ErrorKind::EmptyFeatureSet, "feature set needs at least 2 instructions");
    if (pairs.empty()) raise(ErrorKind::ConfigInvalid, "no contrastive prompt pairs given");
    std::set<Criterion> seen;
    for (const auto& p : pairs) {
        p.validate();
        if (!seen.insert(p.criterion).second)
            raise(ErrorKind::ConfigInvalid, "duplicate criterion '" + p.criterion + "'");
    }

    DirectionSet ds;
    ds.model_hash = model.content_hash;
    ds.n_feat = d_feat.size();

    const int n_layers = model.config.n_layers;
    for (const auto& pair : pairs) {
        // per-instruction contrastive stacks, extraction is data-parallel
        std::vector<std::vector<Vec>> per_instruction(d_feat.size());
        parallel_for(d_feat.size(), [&](size_t i) {
            auto [h_pos, h_neg] = contrastive_reps(model, pair, d_feat[i]);
            per_instruction[i] = contrastive_vector(h_pos, h_neg);
        });

        std::vector<Vec> layers(n_layers);
        for (int l = 0; l < n_layers; ++l) {
            std::vector<Vec> batch(d_feat.size());
            for (size_t i = 0; i < d_feat.size(); ++i) batch[i] = per_instruction[i][l];
            layers[l] = pca_first_component(batch);
        }
        ds.by_criterion.emplace(pair.criterion, std::move(layers));
        ds.prompt_hash[pair.criterion] = hash_prompt_pair(pair);
    }
    return ds;
}

}  // namespace icon2
