#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icon2/directions.hpp"
#include "icon2/model.hpp"

namespace icon2 {

struct CriterionAssignment {
    Criterion criterion;
    double score = 0.0;
};

struct InstructionRecord {
    std::string id;
    std::string text;  // raw bytes; serialized losslessly (see io notes)
    std::map<Criterion, double> scores;
    std::optional<CriterionAssignment> assigned;
};

enum class InstructionRole { Feat, Raw, Filt };

struct InstructionSet {
    InstructionRole role = InstructionRole::Raw;
    std::vector<InstructionRecord> records;
};

enum class FilterMode { Threshold, TopK };

struct FilterPolicy {
    FilterMode mode = FilterMode::TopK;
    double theta = 0.0;     // threshold mode
    size_t k = 0;           // top_k mode
    bool dedup = false;     // collapse exact-duplicate texts before scoring
    size_t min_len = 0;     // byte-length bounds, inclusive
    size_t max_len = SIZE_MAX;
    // exclusivity gate: with margin > 0, a record is kept only when its top
    // criterion score exceeds the runner-up by at least this much
    double margin = 0.0;
};

struct SynthReport {
    InstructionSet set;
    size_t requested = 0;
    size_t attempts = 0;
    size_t dropped_empty = 0;
    size_t dropped_duplicate = 0;
};

// Samples n instructions by decoding the pre-query template until EOS.
// Temperature mode only; per-sample seeds are derived from sampling.seed so
// reruns reproduce byte-for-byte. Empty continuations are dropped and
// retried within a bounded attempt budget; exact duplicates are collapsed.
// Fewer than n records may be returned (the report says how many were lost).
SynthReport synth_instructions(const ModelBundle& model, const std::string& pre_query_template,
                               size_t n, const SamplingConfig& sampling);

// (1/N) * sum_l <h^l, u^l>, raw dot products, double accumulation. The
// normalized mode averages per-layer cosines instead (zero-norm layers
// contribute 0) and is off everywhere by default.
double consistency_score(const LayerRepresentations& reps, const std::vector<Vec>& direction,
                         bool normalized = false);

// argmax criterion; exact ties resolved by lexicographically smaller name
std::pair<Criterion, double> assign_criterion(const std::map<Criterion, double>& scores);

// Scores every record against every criterion (capture of [BOS] text) and
// fills in scores + assigned. Record order is preserved.
InstructionSet score_instructions(const InstructionSet& raw, const DirectionSet& directions,
                                  const ModelBundle& model, bool normalized = false);

// Applies length bounds, optional dedup, then threshold/top-k on scored
// records. Output is sorted by descending assigned score, then id.
InstructionSet apply_filter_policy(const InstructionSet& scored, const FilterPolicy& policy);

// score_instructions followed by apply_filter_policy
InstructionSet filter_instructions(const InstructionSet& raw, const DirectionSet& directions,
                                   const ModelBundle& model, const FilterPolicy& policy);

// --- line-delimited persistence ---------------------------------------------
// One JSON document per line with fields id, text, optional scores, optional
// assigned {criterion, score}. Texts are arbitrary byte strings; bytes map
// 1:1 onto code points U+0000..U+00FF inside the JSON string, which keeps
// every record losslessly serializable and the files valid UTF-8.

std::string instruction_set_to_lines(const InstructionSet& set);
InstructionSet instruction_set_from_lines(const std::string& text, InstructionRole role);
void save_instruction_set(const InstructionSet& set, const std::string& path);
InstructionSet load_instruction_set(const std::string& path, InstructionRole role);

std::string encode_text_field(const std::string& bytes);
std::string decode_text_field(const std::string& utf8);

}  // namespace icon2
