#include "icon2/model.hpp"

#include <cmath>
#include <cstring>

#include "icon2/errors.hpp"
#include "icon2/hash.hpp"
#include "icon2/rng.hpp"

namespace icon2 {

namespace {

struct TensorSpec {
    std::string name;
    std::vector<int64_t> shape;
};

std::vector<TensorSpec> schema_tensors(const ModelConfig& c) {
    std::vector<TensorSpec> specs;
    specs.push_back({"tok_emb", {c.vocab_size, c.d_model}});
    specs.push_back({"pos_emb", {c.max_seq_len, c.d_model}});
    for (int i = 0; i < c.n_layers; ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        specs.push_back({p + "ln1.g", {c.d_model}});
        specs.push_back({p + "ln1.b", {c.d_model}});
        for (const char* w : {"wq", "wk", "wv", "wo"})
            specs.push_back({p + "attn." + w, {c.d_model, c.d_model}});
        specs.push_back({p + "ln2.g", {c.d_model}});
        specs.push_back({p + "ln2.b", {c.d_model}});
        specs.push_back({p + "mlp.w1", {c.d_model, c.d_ff}});
        specs.push_back({p + "mlp.b1", {c.d_ff}});
        specs.push_back({p + "mlp.w2", {c.d_ff, c.d_model}});
        specs.push_back({p + "mlp.b2", {c.d_model}});
    }
    specs.push_back({"ln_f.g", {c.d_model}});
    specs.push_back({"ln_f.b", {c.d_model}});
    if (!c.tied_unemb) specs.push_back({"unemb", {c.vocab_size, c.d_model}});
    return specs;
}

nlohmann::json config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["n_layers"] = c.n_layers;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["d_ff"] = c.d_ff;
    j["vocab_size"] = c.vocab_size;
    j["max_seq_len"] = c.max_seq_len;
    j["layer_norm_eps"] = c.layer_norm_eps;
    j["tied_unemb"] = c.tied_unemb;
    return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.n_layers = j.at("n_layers").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.d_ff = j.at("d_ff").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.max_seq_len = j.at("max_seq_len").get<int>();
        c.layer_norm_eps = j.at("layer_norm_eps").get<float>();
        c.tied_unemb = j.value("tied_unemb", false);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::MalformedHeader, std::string("bad config object: ") + e.what());
    }
    return c;
}

std::string hash_bundle(const ModelConfig& config, const std::map<std::string, Tensor>& tensors) {
    Fnv1a64 h;
    h.update(config_to_json(config).dump());
    for (const auto& spec : schema_tensors(config)) {
        const Tensor& t = tensors.at(spec.name);
        h.update(spec.name);
        for (float f : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            h.update_u64(bits);
        }
    }
    return h.hex();
}

// y = x * W + b, W stored [in, out] row-major. b may be empty.
void linear(std::span<const float> x, const Tensor& w, std::span<const float> b,
            std::span<float> y) {
    const size_t in = static_cast<size_t>(w.shape[0]);
    const size_t out = static_cast<size_t>(w.shape[1]);
    for (size_t j = 0; j < out; ++j) y[j] = b.empty() ? 0.0f : b[j];
    for (size_t i = 0; i < in; ++i) {
        const float xi = x[i];
        const float* row = w.data.data() + i * out;
        for (size_t j = 0; j < out; ++j) y[j] += xi * row[j];
    }
}

// Incremental decoder state: one K/V row appended per processed position.
// Processing position-by-position keeps prompt encoding and generation on
// one code path, and steered hidden states persist in the cache exactly as
// they were produced.
class Session {
public:
    explicit Session(const ModelBundle& model)
        : m_(model),
          cfg_(model.config),
          d_head_(cfg_.d_model / cfg_.n_heads),
          k_cache_(cfg_.n_layers),
          v_cache_(cfg_.n_layers) {}

    size_t n_positions() const { return n_pos_; }

    // Feeds one token at the next position. steering, when non-null, is
    // applied to this position's post-block hidden states. Returns the
    // post-block (post-steer) hidden state per layer.
    std::vector<Vec> step(TokenId token, const SteeringSpec* steering) {
        const int d = cfg_.d_model;
        const size_t pos = n_pos_;
        if (pos >= static_cast<size_t>(cfg_.max_seq_len))
            raise(ErrorKind::SequenceTooLong, "position " + std::to_string(pos) +
                                                  " exceeds max_seq_len " +
                                                  std::to_string(cfg_.max_seq_len));
        if (token < 0 || token >= cfg_.vocab_size)
            raise(ErrorKind::UnknownTokenId, "token id " + std::to_string(token));

        Vec x(d);
        {
            const Tensor& te = m_.tensor("tok_emb");
            const Tensor& pe = m_.tensor("pos_emb");
            const float* trow = te.data.data() + static_cast<size_t>(token) * d;
            const float* prow = pe.data.data() + pos * d;
            for (int i = 0; i < d; ++i) x[i] = trow[i] + prow[i];
        }

        std::vector<Vec> per_layer;
        per_layer.reserve(cfg_.n_layers);

        Vec normed(d), q(d), k(d), v(d), attn(d), proj(d);
        Vec ff(cfg_.d_ff);

        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";

            layer_norm(x, m_.tensor(p + "ln1.g").data, m_.tensor(p + "ln1.b").data,
                       cfg_.layer_norm_eps, normed);
            linear(normed, m_.tensor(p + "attn.wq"), {}, q);
            linear(normed, m_.tensor(p + "attn.wk"), {}, k);
            linear(normed, m_.tensor(p + "attn.wv"), {}, v);
            k_cache_[l].push_back(k);
            v_cache_[l].push_back(v);

            attend(l, q, attn);
            linear(attn, m_.tensor(p + "attn.wo"), {}, proj);
            for (int i = 0; i < d; ++i) x[i] += proj[i];

            layer_norm(x, m_.tensor(p + "ln2.g").data, m_.tensor(p + "ln2.b").data,
                       cfg_.layer_norm_eps, normed);
            linear(normed, m_.tensor(p + "mlp.w1"), m_.tensor(p + "mlp.b1").data, ff);
            for (float& f : ff) f = gelu(f);
            linear(ff, m_.tensor(p + "mlp.w2"), m_.tensor(p + "mlp.b2").data, proj);
            for (int i = 0; i < d; ++i) x[i] += proj[i];

            if (steering != nullptr && steering->layer_set.count(l + 1) != 0) {
                const Vec& u = steering->direction.at(l + 1);
                add_scaled(x, u, static_cast<float>(steering->gamma));
            }
            per_layer.push_back(x);
        }

        ++n_pos_;
        return per_layer;
    }

    // logits from a final-layer hidden state
    Vec logits(const Vec& hidden) const {
        const int d = cfg_.d_model;
        Vec normed(d);
        layer_norm(hidden, m_.tensor("ln_f.g").data, m_.tensor("ln_f.b").data,
                   cfg_.layer_norm_eps, normed);
        const Tensor& ue = m_.unembedding();
        Vec out(cfg_.vocab_size);
        for (int t = 0; t < cfg_.vocab_size; ++t)
            out[t] = dot_f32(normed, std::span<const float>(ue.data.data() + static_cast<size_t>(t) * d,
                                                            static_cast<size_t>(d)));
        return out;
    }

private:
    void attend(int layer, const Vec& q, Vec& out) {
        const size_t n_ctx = k_cache_[layer].size();  // includes current position
        const float scale = 1.0f / std::sqrt(static_cast<float>(d_head_));
        Vec scores(n_ctx);
        for (int h = 0; h < cfg_.n_heads; ++h) {
            const size_t off = static_cast<size_t>(h) * d_head_;
            std::span<const float> qh(q.data() + off, static_cast<size_t>(d_head_));
            for (size_t t = 0; t < n_ctx; ++t)
                scores[t] = scale * dot_f32(qh, std::span<const float>(
                                                    k_cache_[layer][t].data() + off,
                                                    static_cast<size_t>(d_head_)));
            softmax_inplace(scores);
            for (size_t i = off; i < off + static_cast<size_t>(d_head_); ++i) out[i] = 0.0f;
            for (size_t t = 0; t < n_ctx; ++t) {
                const float a = scores[t];
                const float* vh = v_cache_[layer][t].data() + off;
                for (int i = 0; i < d_head_; ++i) out[off + i] += a * vh[i];
            }
        }
    }

    const ModelBundle& m_;
    const ModelConfig& cfg_;
    int d_head_;
    size_t n_pos_ = 0;
    std::vector<std::vector<Vec>> k_cache_;
    std::vector<std::vector<Vec>> v_cache_;
};

TokenId pick_token(const Vec& logits, const SamplingConfig& sampling, Rng& rng) {
    if (sampling.mode == SamplingMode::Greedy) {
        TokenId best = 0;
        float best_v = logits[0];
        for (size_t i = 1; i < logits.size(); ++i) {
            if (logits[i] > best_v) {
                best_v = logits[i];
                best = static_cast<TokenId>(i);
            }
        }
        return best;
    }
    Vec probs(logits.size());
    const double inv_t = 1.0 / sampling.temperature;
    for (size_t i = 0; i < logits.size(); ++i)
        probs[i] = static_cast<float>(logits[i] * inv_t);
    softmax_inplace(probs);
    const double u = rng.next_double();
    double cum = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        cum += probs[i];
        if (u < cum) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(probs.size() - 1);
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || vocab_size < 1 ||
        max_seq_len < 1)
        raise(ErrorKind::ConfigInvalid, "model dimensions must be >= 1");
    if (d_model % n_heads != 0)
        raise(ErrorKind::ConfigInvalid, "n_heads must divide d_model");
    if (!(layer_norm_eps > 0.0f))
        raise(ErrorKind::ConfigInvalid, "layer_norm_eps must be positive");
}

const Tensor& ModelBundle::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) raise(ErrorKind::MissingTensor, name);
    return it->second;
}

const Tensor& ModelBundle::unembedding() const {
    return config.tied_unemb ? tensor("tok_emb") : tensor("unemb");
}

ModelBundle ModelBundle::from_parts(ModelConfig config, std::map<std::string, Tensor> tensors) {
    config.validate();
    for (const auto& spec : schema_tensors(config)) {
        auto it = tensors.find(spec.name);
        if (it == tensors.end()) raise(ErrorKind::MissingTensor, spec.name);
        if (it->second.shape != spec.shape) {
            std::string want, got;
            for (int64_t d : spec.shape) want += std::to_string(d) + " ";
            for (int64_t d : it->second.shape) got += std::to_string(d) + " ";
            raise(ErrorKind::ShapeMismatch,
                  spec.name + ": expected [ " + want + "], got [ " + got + "]");
        }
        for (float f : it->second.data)
            if (!std::isfinite(f)) raise(ErrorKind::NonFiniteWeight, spec.name);
    }
    ModelBundle b;
    b.config = config;
    b.tensors = std::move(tensors);
    b.content_hash = hash_bundle(b.config, b.tensors);
    return b;
}

ModelBundle load_model(const std::vector<uint8_t>& container_bytes) {
    TensorContainer c = TensorContainer::deserialize(container_bytes);
    if (!c.metadata.contains("config"))
        raise(ErrorKind::MalformedHeader, "container has no config object");
    ModelConfig config = config_from_json(c.metadata["config"]);
    return ModelBundle::from_parts(config, std::move(c.tensors));
}

ModelBundle load_model_file(const std::string& path) {
    return load_model(read_file_bytes(path));
}

std::vector<uint8_t> save_model(const ModelBundle& model) {
    TensorContainer c;
    c.metadata["config"] = config_to_json(model.config);
    c.tensors = model.tensors;
    return c.serialize();
}

ModelBundle random_model(const ModelConfig& config, uint64_t seed, float weight_scale) {
    config.validate();
    Rng rng(seed);
    auto gaussian = [&](std::vector<int64_t> shape) {
        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(t.element_count());
        for (float& f : t.data) f = static_cast<float>(rng.next_gaussian()) * weight_scale;
        return t;
    };
    auto constant = [](std::vector<int64_t> shape, float v) {
        Tensor t;
        t.shape = std::move(shape);
        t.data.assign(t.element_count(), v);
        return t;
    };

    std::map<std::string, Tensor> t;
    t["tok_emb"] = gaussian({config.vocab_size, config.d_model});
    t["pos_emb"] = gaussian({config.max_seq_len, config.d_model});
    for (int i = 0; i < config.n_layers; ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        t[p + "ln1.g"] = constant({config.d_model}, 1.0f);
        t[p + "ln1.b"] = constant({config.d_model}, 0.0f);
        for (const char* w : {"wq", "wk", "wv", "wo"})
            t[p + "attn." + w] = gaussian({config.d_model, config.d_model});
        t[p + "ln2.g"] = constant({config.d_model}, 1.0f);
        t[p + "ln2.b"] = constant({config.d_model}, 0.0f);
        t[p + "mlp.w1"] = gaussian({config.d_model, config.d_ff});
        t[p + "mlp.b1"] = constant({config.d_ff}, 0.0f);
        t[p + "mlp.w2"] = gaussian({config.d_ff, config.d_model});
        t[p + "mlp.b2"] = constant({config.d_model}, 0.0f);
    }
    t["ln_f.g"] = constant({config.d_model}, 1.0f);
    t["ln_f.b"] = constant({config.d_model}, 0.0f);
    if (!config.tied_unemb) t["unemb"] = gaussian({config.vocab_size, config.d_model});
    return ModelBundle::from_parts(config, std::move(t));
}

void SteeringSpec::validate(const ModelConfig& config) const {
    for (int l : layer_set) {
        if (l < 1 || l > config.n_layers)
            raise(ErrorKind::ConfigInvalid,
                  "steering layer " + std::to_string(l) + " outside [1, " +
                      std::to_string(config.n_layers) + "]");
        auto it = direction.find(l);
        if (it == direction.end())
            raise(ErrorKind::MissingDirection, "no direction for layer " + std::to_string(l));
        if (static_cast<int>(it->second.size()) != config.d_model)
            raise(ErrorKind::DimMismatch, "direction at layer " + std::to_string(l) +
                                              " has wrong length");
        const double n = l2_norm(it->second);
        if (std::abs(n - 1.0) > 1e-4)
            raise(ErrorKind::ConfigInvalid,
                  "direction at layer " + std::to_string(l) + " is not unit-norm");
    }
}

LayerRepresentations forward_capture(const ModelBundle& model, const std::vector<TokenId>& tokens) {
    if (tokens.empty()) raise(ErrorKind::EmptyInput, "forward_capture on empty sequence");
    if (tokens.size() > static_cast<size_t>(model.config.max_seq_len))
        raise(ErrorKind::SequenceTooLong, std::to_string(tokens.size()) + " tokens > max_seq_len " +
                                              std::to_string(model.config.max_seq_len));
    Session s(model);
    std::vector<Vec> last;
    for (TokenId t : tokens) last = s.step(t, nullptr);
    LayerRepresentations reps;
    reps.layers = std::move(last);
    return reps;
}

std::vector<Vec> forward_layer_states(const ModelBundle& model, const std::vector<TokenId>& tokens,
                                      int layer) {
    if (tokens.empty()) raise(ErrorKind::EmptyInput, "forward_layer_states on empty sequence");
    if (layer < 1 || layer > model.config.n_layers)
        raise(ErrorKind::ConfigInvalid, "layer index out of range");
    if (tokens.size() > static_cast<size_t>(model.config.max_seq_len))
        raise(ErrorKind::SequenceTooLong, "sequence exceeds max_seq_len");
    Session s(model);
    std::vector<Vec> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) out.push_back(s.step(t, nullptr)[layer - 1]);
    return out;
}

std::vector<TokenId> generate(const ModelBundle& model, const std::vector<TokenId>& prompt,
                              const SamplingConfig& sampling, const SteeringSpec* steering,
                              GenerationTrace* trace) {
    if (prompt.empty()) raise(ErrorKind::EmptyInput, "generate with empty prompt");
    if (sampling.max_tokens < 1) raise(ErrorKind::ConfigInvalid, "max_tokens must be >= 1");
    if (sampling.mode == SamplingMode::Temperature && !(sampling.temperature > 0.0))
        raise(ErrorKind::ConfigInvalid, "temperature must be positive");
    if (prompt.size() + static_cast<size_t>(sampling.max_tokens) >
        static_cast<size_t>(model.config.max_seq_len))
        raise(ErrorKind::ContextOverflow,
              "prompt (" + std::to_string(prompt.size()) + ") + max_tokens (" +
                  std::to_string(sampling.max_tokens) + ") > max_seq_len (" +
                  std::to_string(model.config.max_seq_len) + ")");
    if (steering != nullptr) steering->validate(model.config);

    Session session(model);
    // Prompt positions before the last are encoded unsteered; the last prompt
    // token is the current position of the first generation step.
    for (size_t i = 0; i + 1 < prompt.size(); ++i) session.step(prompt[i], nullptr);

    Rng rng(sampling.seed);
    std::vector<TokenId> out;
    TokenId current = prompt.back();
    for (int step = 0; step < sampling.max_tokens; ++step) {
        std::vector<Vec> hidden = session.step(current, steering);
        Vec logits = session.logits(hidden.back());
        for (size_t i = 0; i < logits.size(); ++i) {
            if (!std::isfinite(logits[i]))
                raise(ErrorKind::NaNLogits, "non-finite logit for token " + std::to_string(i) +
                                                " at generation step " + std::to_string(step));
        }
        if (trace != nullptr && static_cast<size_t>(step) < trace->max_steps) {
            GenerationTrace::Step ts;
            if (trace->capture_hidden) ts.hidden = hidden;
            if (trace->capture_logits) ts.logits = logits;
            trace->steps.push_back(std::move(ts));
        }
        const TokenId next = pick_token(logits, sampling, rng);
        out.push_back(next);
        if (sampling.stop_on_eos && next == ByteTokenizer::kEos) break;
        current = next;
    }
    return out;
}

}  // namespace icon2
