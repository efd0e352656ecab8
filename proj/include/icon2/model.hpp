#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "icon2/container.hpp"
#include "icon2/linalg.hpp"
#include "icon2/tokenizer.hpp"

namespace icon2 {

struct ModelConfig {
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 0;
    int d_ff = 0;
    int vocab_size = 0;
    int max_seq_len = 0;
    float layer_norm_eps = 1e-5f;
    bool tied_unemb = false;

    void validate() const;
};

// Immutable once loaded; shareable across concurrent capture/generation
// sessions. Architecture is pre-norm GPT-2 style: learned positional
// embeddings, multi-head causal attention, GELU MLP, final layer norm.
//
// Tensor schema (all f32, row-major; linear layers stored [in, out]):
//   tok_emb            [vocab_size, d_model]
//   pos_emb            [max_seq_len, d_model]
//   layers.{i}.ln1.g/b [d_model]
//   layers.{i}.attn.wq/wk/wv/wo [d_model, d_model]
//   layers.{i}.ln2.g/b [d_model]
//   layers.{i}.mlp.w1  [d_model, d_ff]   .b1 [d_ff]
//   layers.{i}.mlp.w2  [d_ff, d_model]   .b2 [d_model]
//   ln_f.g/b           [d_model]
//   unemb              [vocab_size, d_model]  (absent when tied_unemb; tok_emb is reused)
struct ModelBundle {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;
    std::string content_hash;  // provenance hash over config + schema tensors

    const Tensor& tensor(const std::string& name) const;
    const Tensor& unembedding() const;

    // builds the bundle from parts, validating the schema and hashing content
    static ModelBundle from_parts(ModelConfig config, std::map<std::string, Tensor> tensors);
};

ModelBundle load_model(const std::vector<uint8_t>& container_bytes);
ModelBundle load_model_file(const std::string& path);
std::vector<uint8_t> save_model(const ModelBundle& model);

// Seeded random-weight model with the standard schema (gaussian weights,
// unit norms, zero biases). No external checkpoint formats are in scope, so
// this is how demo and test models come to exist.
ModelBundle random_model(const ModelConfig& config, uint64_t seed, float weight_scale = 0.08f);

// Post-block hidden state of the last token at every layer, l = 1..N.
struct LayerRepresentations {
    std::vector<Vec> layers;  // layers[l-1], each d_model long

    int n_layers() const { return static_cast<int>(layers.size()); }
    int d_model() const { return layers.empty() ? 0 : static_cast<int>(layers[0].size()); }
};

enum class SamplingMode { Greedy, Temperature };

struct SamplingConfig {
    SamplingMode mode = SamplingMode::Greedy;
    double temperature = 1.0;  // temperature mode only
    int max_tokens = 64;
    uint64_t seed = 0;
    bool stop_on_eos = true;
};

// Additive per-layer steering: during each generation step, the post-block
// hidden state of the current position at every layer in layer_set becomes
// z + gamma * u^l before the next layer (or the final norm) consumes it.
// Prompt positions other than the current one are never steered.
struct SteeringSpec {
    std::map<int, Vec> direction;  // 1-based layer -> unit vector
    double gamma = 0.0;
    std::set<int> layer_set;

    void validate(const ModelConfig& config) const;
};

// Optional instrumentation for generate(): per-step post-block (post-steer)
// hidden states of the current position and/or the step logits.
struct GenerationTrace {
    bool capture_hidden = false;
    bool capture_logits = false;
    size_t max_steps = SIZE_MAX;

    struct Step {
        std::vector<Vec> hidden;  // [layer-1] -> d_model values
        Vec logits;
    };
    std::vector<Step> steps;
};

LayerRepresentations forward_capture(const ModelBundle& model, const std::vector<TokenId>& tokens);

// Post-block hidden states of one layer (1-based) at every position.
std::vector<Vec> forward_layer_states(const ModelBundle& model, const std::vector<TokenId>& tokens,
                                      int layer);

std::vector<TokenId> generate(const ModelBundle& model, const std::vector<TokenId>& prompt,
                              const SamplingConfig& sampling,
                              const SteeringSpec* steering = nullptr,
                              GenerationTrace* trace = nullptr);

}  // namespace icon2
