#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icon2/directions.hpp"
#include "icon2/instructions.hpp"
#include "icon2/model.hpp"
#include "icon2/pairs.hpp"

namespace icon2 {

inline constexpr const char* kToolVersion = "icon2 0.1.0";

struct PipelineConfig {
    std::string model_path;
    std::string output_dir = "out";
    uint64_t seed = 0;

    std::vector<ContrastivePromptPair> criteria;  // defaults: the four shipped pairs
    std::string pre_query_template = "User: ";
    std::optional<std::string> feat_path;  // when absent, feat instructions are synthesized

    uint64_t n_feat = 1024;
    uint64_t n_raw = 1000000;
    FilterPolicy filter;  // filt size = filter.k in top_k mode

    // layer_lo/layer_hi of 0 mean "derive from the model depth"
    SteeringProfile steering{0, 0, 0.1, -0.05};

    SamplingConfig synth_sampling;  // temperature mode; drives instruction synthesis
    SamplingConfig pair_sampling;   // greedy by default; drives responses and sweeps

    bool tune_gamma = false;
    std::vector<double> gamma_grid_pos = {0.01, 0.03, 0.05, 0.1, 0.3, 0.5};
    std::vector<double> gamma_grid_neg = {-0.5, -0.3, -0.1, -0.05, -0.03, -0.01};
    uint64_t tune_sample_size = 100;
    double min_proportion = 0.9;
    std::string scorer = "projection";
    std::string scorer_criterion = "general";

    void validate() const;  // static checks; model-dependent ones happen in run_pipeline
};

// Strict parse: unknown keys anywhere are ConfigInvalid. ICON2_OUTPUT_DIR
// overrides output_dir when set.
PipelineConfig pipeline_config_from_json(const std::string& json_text);
PipelineConfig load_pipeline_config(const std::string& path);
std::string pipeline_config_to_json(const PipelineConfig& config);

struct ArtifactInfo {
    std::string path;
    uint64_t records = 0;
    std::string hash;
};

struct StageInfo {
    std::string name;
    bool cached = false;
    uint64_t wall_ms = 0;
    std::vector<std::string> inputs;  // artifact paths this stage consumed
    std::vector<ArtifactInfo> outputs;
};

struct RunManifest {
    std::string config_hash;
    std::string model_hash;
    std::string tool_version;
    std::vector<StageInfo> stages;
};

// Stages: extract-directions -> synth-instructions -> score+filter ->
// (optional) tune-gamma -> generate-pairs -> report. Each stage persists its
// artifacts and a content-hash stamp; a rerun with unchanged inputs skips the
// stage. The manifest is written last, after every listed artifact has been
// re-read and its record count checked.
RunManifest run_pipeline(const PipelineConfig& config);

std::string manifest_to_json(const RunManifest& manifest);

}  // namespace icon2
