#pragma once

#include <map>
#include <string>
#include <vector>

#include "icon2/model.hpp"

namespace icon2 {

using Criterion = std::string;

struct ContrastivePromptPair {
    Criterion criterion;
    std::string positive_prompt;
    std::string negative_prompt;

    void validate() const;
};

// The four shipped criteria with their default contrastive system prompts.
std::vector<ContrastivePromptPair> default_contrastive_prompts();

// Per-criterion, per-layer unit direction vectors plus provenance.
struct DirectionSet {
    std::map<Criterion, std::vector<Vec>> by_criterion;  // [l-1] -> unit vector
    std::string model_hash;
    uint64_t n_feat = 0;
    std::map<Criterion, std::string> prompt_hash;

    int n_layers() const;
    int d_model() const;
    const std::vector<Vec>& directions_for(const Criterion& c) const;

    std::vector<uint8_t> serialize() const;
    static DirectionSet deserialize(const std::vector<uint8_t>& bytes);
    void save(const std::string& path) const;
    static DirectionSet load(const std::string& path);
};

// Prompt and instruction are joined as [BOS] prompt [SEP] instruction before
// capture; the two stacks come from the positive and negative prompt.
std::pair<LayerRepresentations, LayerRepresentations> contrastive_reps(
    const ModelBundle& model, const ContrastivePromptPair& pair, const std::string& instruction);

// v^l = h^{l,+} - h^{l,-}
std::vector<Vec> contrastive_vector(const LayerRepresentations& h_plus,
                                    const LayerRepresentations& h_minus);

// First principal component of the mean-centered inputs: power iteration on
// the sample covariance operator (cap 500 iterations, successive-cosine
// tolerance 1e-8), sign fixed so the mean projection of the uncentered
// inputs onto the component is >= 0.
Vec pca_first_component(const std::vector<Vec>& vectors);

DirectionSet extract_directions(const ModelBundle& model,
                                const std::vector<std::string>& d_feat,
                                const std::vector<ContrastivePromptPair>& pairs);

}  // namespace icon2
