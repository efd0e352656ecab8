#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "icon2/directions.hpp"
#include "icon2/instructions.hpp"
#include "icon2/model.hpp"

namespace icon2 {

// Contiguous controlled-layer interval plus the chosen/rejected coefficients.
struct SteeringProfile {
    int layer_lo = 0;
    int layer_hi = 0;
    double gamma_pos = 0.1;
    double gamma_neg = -0.05;

    void validate(int n_layers, bool allow_equal_gammas = false) const;
};

// Full-scale defaults; for shallow models the [10, 20] interval rescales
// proportionally to [round(0.3 N), round(0.65 N)].
SteeringProfile default_steering_profile(int n_layers);

struct PreferencePair {
    std::string instruction_id;
    std::string instruction_text;
    Criterion criterion;
    std::string chosen;
    std::string rejected;
    SteeringProfile profile;
    int pass_count = 0;
};

// Counts every autoregressive generation pass this module runs. There is no
// resampling loop anywhere, so resample_events stays 0; the field exists so
// the summary can assert that fact rather than assume it.
struct PassLedger {
    uint64_t passes = 0;
    uint64_t resample_events = 0;
};

SteeringSpec steering_spec_for(const DirectionSet& directions, const Criterion& criterion,
                               int layer_lo, int layer_hi, double gamma);
SteeringSpec steering_spec_for(const DirectionSet& directions, const Criterion& criterion,
                               const SteeringProfile& profile, double gamma);

// z + gamma * u
Vec steer_hidden(const Vec& z, const Vec& u, double gamma);

// Exactly two generation passes: one with gamma_pos, one with gamma_neg.
// Both passes use the same prompt ([BOS] instruction [SEP]) and the same
// sampling config, so the only difference between chosen and rejected is the
// steering coefficient.
PreferencePair generate_pair(const ModelBundle& model, const InstructionRecord& record,
                             const DirectionSet& directions, const SteeringProfile& profile,
                             const SamplingConfig& sampling, PassLedger* ledger = nullptr);

struct DatasetSummary {
    uint64_t pair_count = 0;
    uint64_t total_passes = 0;
    uint64_t resample_events = 0;
    uint64_t degenerate_pairs = 0;  // chosen == rejected, kept and reported
    std::map<Criterion, uint64_t> per_criterion;
};

// One pair per filtered instruction, streamed to the sink in input order.
DatasetSummary build_dataset(const ModelBundle& model, const InstructionSet& filt,
                             const DirectionSet& directions, const SteeringProfile& profile,
                             const SamplingConfig& sampling, std::ostream& sink);

// --- line-delimited persistence ---------------------------------------------
// Fields: instruction, chosen, rejected, criterion, gamma_pos, gamma_neg,
// layer_lo, layer_hi, id. Consumable directly as DPO triplets.

std::string pair_to_line(const PreferencePair& pair);
PreferencePair pair_from_line(const std::string& line);
std::vector<PreferencePair> load_pairs(const std::string& path);
void save_pairs(const std::vector<PreferencePair>& pairs, const std::string& path);

}  // namespace icon2
