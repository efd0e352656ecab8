#include "icon2/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>

#include "icon2/analysis.hpp"
#include "icon2/errors.hpp"
#include "icon2/hash.hpp"
#include "icon2/rng.hpp"
#include "icon2/tuner.hpp"

#include <json.hpp>

namespace icon2 {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (known.count(it.key()) == 0)
            raise(ErrorKind::ConfigInvalid, "unknown key '" + it.key() + "' in " + where);
}

SamplingConfig sampling_from_json(const json& j, const std::string& where) {
    reject_unknown_keys(j, {"mode", "temperature", "max_tokens", "seed", "stop_on_eos"}, where);
    SamplingConfig s;
    const std::string mode = j.value("mode", "greedy");
    if (mode == "greedy")
        s.mode = SamplingMode::Greedy;
    else if (mode == "temperature")
        s.mode = SamplingMode::Temperature;
    else
        raise(ErrorKind::ConfigInvalid, where + ".mode must be greedy or temperature");
    s.temperature = j.value("temperature", 1.0);
    s.max_tokens = j.value("max_tokens", 64);
    s.seed = j.value("seed", 0ULL);
    s.stop_on_eos = j.value("stop_on_eos", true);
    return s;
}

json sampling_to_json(const SamplingConfig& s) {
    json j;
    j["mode"] = s.mode == SamplingMode::Greedy ? "greedy" : "temperature";
    j["temperature"] = s.temperature;
    j["max_tokens"] = s.max_tokens;
    j["seed"] = s.seed;
    j["stop_on_eos"] = s.stop_on_eos;
    return j;
}

std::string file_hash(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    Fnv1a64 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

uint64_t count_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::IoError, "cannot open " + path);
    uint64_t n = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

class StageRunner {
public:
    StageRunner(const fs::path& out_dir, std::string config_hash, std::string model_hash)
        : stamps_dir_(out_dir / ".stamps"),
          config_hash_(std::move(config_hash)),
          model_hash_(std::move(model_hash)) {
        fs::create_directories(stamps_dir_);
    }

    // Runs `body` unless the stage stamp matches the current input hash and
    // every recorded output is still intact. `body` must (re)create all of
    // `outputs`. `extra_inputs` are artifact paths the stage consumes.
    StageInfo run(const std::string& name, const std::vector<std::string>& extra_inputs,
                  const std::vector<std::string>& outputs, const std::function<void()>& body) {
        const std::string input_hash = hash_inputs(extra_inputs);
        const fs::path stamp_path = stamps_dir_ / (name + ".json");

        StageInfo info;
        info.name = name;
        info.inputs = extra_inputs;
        if (stamp_matches(stamp_path, input_hash, outputs)) {
            info.cached = true;
            info.wall_ms = 0;
            for (const std::string& p : outputs) info.outputs.push_back(describe(p));
            return info;
        }

        const auto start = std::chrono::steady_clock::now();
        try {
            body();
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::ConfigInvalid || e.kind() == ErrorKind::IoError ||
                e.kind() == ErrorKind::SinkWriteError)
                throw;
            raise(ErrorKind::StageFailure, "stage '" + name + "': " + e.what());
        }
        const auto end = std::chrono::steady_clock::now();
        info.wall_ms = static_cast<uint64_t>(
            std::chrono::duration_cast<std::chrono::milliseconds>(end - start).count());

        json stamp;
        stamp["stage"] = name;
        stamp["input_hash"] = input_hash;
        json outs = json::array();
        for (const std::string& p : outputs) {
            const ArtifactInfo a = describe(p);
            info.outputs.push_back(a);
            outs.push_back({{"path", a.path}, {"hash", a.hash}});
        }
        stamp["outputs"] = outs;
        save_text(stamp_path.string(), stamp.dump(2) + "\n");
        return info;
    }

private:
    std::string hash_inputs(const std::vector<std::string>& extra_inputs) const {
        Fnv1a64 h;
        h.update(config_hash_);
        h.update(model_hash_);
        h.update(kToolVersion);
        for (const std::string& p : extra_inputs) h.update(file_hash(p));
        return h.hex();
    }

    static ArtifactInfo describe(const std::string& path) {
        ArtifactInfo a;
        a.path = path;
        a.hash = file_hash(path);
        const std::string ext = fs::path(path).extension().string();
        if (ext == ".jsonl" || ext == ".tsv")
            a.records = count_lines(path);
        else
            a.records = 1;
        return a;
    }

    bool stamp_matches(const fs::path& stamp_path, const std::string& input_hash,
                       const std::vector<std::string>& outputs) const {
        std::ifstream in(stamp_path);
        if (!in) return false;
        json stamp;
        try {
            in >> stamp;
        } catch (const json::exception&) {
            return false;
        }
        if (stamp.value("input_hash", "") != input_hash) return false;
        std::map<std::string, std::string> recorded;
        for (const auto& o : stamp.value("outputs", json::array()))
            recorded[o.value("path", "")] = o.value("hash", "");
        for (const std::string& p : outputs) {
            auto it = recorded.find(p);
            if (it == recorded.end()) return false;
            if (!fs::exists(p)) return false;
            if (file_hash(p) != it->second) return false;
        }
        return true;
    }

    fs::path stamps_dir_;
    std::string config_hash_;
    std::string model_hash_;
};

std::unique_ptr<Scorer> make_scorer(const PipelineConfig& config, const ModelBundle& model,
                                    const DirectionSet& directions) {
    if (config.scorer == "projection")
        return std::make_unique<ProjectionScorer>(model, directions, config.scorer_criterion);
    if (config.scorer == "length") return std::make_unique<LengthScorer>();
    if (config.scorer == "constant") return std::make_unique<ConstantScorer>();
    raise(ErrorKind::ConfigInvalid, "unknown scorer '" + config.scorer + "'");
}

}  // namespace

void PipelineConfig::validate() const {
    if (model_path.empty()) raise(ErrorKind::ConfigInvalid, "model_path is required");
    if (output_dir.empty()) raise(ErrorKind::ConfigInvalid, "output_dir is required");
    if (n_feat < 2) raise(ErrorKind::ConfigInvalid, "n_feat must be >= 2");
    if (n_raw < 1) raise(ErrorKind::ConfigInvalid, "n_raw must be >= 1");
    if (criteria.empty()) raise(ErrorKind::ConfigInvalid, "criteria must be non-empty");
    std::set<std::string> names;
    for (const auto& pair : criteria) {
        pair.validate();
        if (!names.insert(pair.criterion).second)
            raise(ErrorKind::ConfigInvalid, "duplicate criterion '" + pair.criterion + "'");
    }
    if (filter.mode == FilterMode::TopK && filter.k < 1)
        raise(ErrorKind::ConfigInvalid, "filter.k must be >= 1");
    if (synth_sampling.mode != SamplingMode::Temperature)
        raise(ErrorKind::ConfigInvalid, "synth_sampling.mode must be temperature");
    if (steering.gamma_pos <= steering.gamma_neg)
        raise(ErrorKind::ConfigInvalid, "steering.gamma_pos must exceed steering.gamma_neg");
    if (tune_gamma) {
        if (gamma_grid_pos.empty() || gamma_grid_neg.empty())
            raise(ErrorKind::ConfigInvalid, "gamma grids must be non-empty when tuning");
        if (tune_sample_size < 1)
            raise(ErrorKind::ConfigInvalid, "tune_sample_size must be >= 1");
    }
}

PipelineConfig pipeline_config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        raise(ErrorKind::ConfigInvalid, std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown_keys(
        j,
        {"model_path", "output_dir", "seed", "criteria", "pre_query_template", "feat_path",
         "n_feat", "n_raw", "filter", "steering", "synth_sampling", "pair_sampling", "tune_gamma",
         "gamma_grid_pos", "gamma_grid_neg", "tune_sample_size", "min_proportion", "scorer",
         "scorer_criterion"},
        "config");

    PipelineConfig c;
    c.model_path = j.value("model_path", "");
    c.output_dir = j.value("output_dir", "out");
    c.seed = j.value("seed", 0ULL);
    c.pre_query_template = j.value("pre_query_template", "User: ");
    if (j.contains("feat_path")) c.feat_path = j["feat_path"].get<std::string>();
    c.n_feat = j.value("n_feat", 1024ULL);
    c.n_raw = j.value("n_raw", 1000000ULL);

    if (j.contains("criteria")) {
        for (const auto& e : j["criteria"]) {
            reject_unknown_keys(e, {"name", "positive_prompt", "negative_prompt"}, "criteria[]");
            ContrastivePromptPair p;
            p.criterion = e.value("name", "");
            p.positive_prompt = e.value("positive_prompt", "");
            p.negative_prompt = e.value("negative_prompt", "");
            c.criteria.push_back(std::move(p));
        }
    } else {
        c.criteria = default_contrastive_prompts();
    }

    if (j.contains("filter")) {
        const json& f = j["filter"];
        reject_unknown_keys(f, {"mode", "theta", "k", "dedup", "min_len", "max_len", "margin"},
                            "filter");
        const std::string mode = f.value("mode", "top_k");
        if (mode == "top_k")
            c.filter.mode = FilterMode::TopK;
        else if (mode == "threshold")
            c.filter.mode = FilterMode::Threshold;
        else
            raise(ErrorKind::ConfigInvalid, "filter.mode must be top_k or threshold");
        c.filter.theta = f.value("theta", 0.0);
        c.filter.k = f.value("k", 100000ULL);
        c.filter.dedup = f.value("dedup", false);
        c.filter.min_len = f.value("min_len", 0ULL);
        if (f.contains("max_len")) c.filter.max_len = f["max_len"].get<uint64_t>();
        c.filter.margin = f.value("margin", 0.0);
        if (c.filter.margin < 0.0)
            raise(ErrorKind::ConfigInvalid, "filter.margin must be >= 0");
    } else {
        c.filter.mode = FilterMode::TopK;
        c.filter.k = 100000;
    }

    if (j.contains("steering")) {
        const json& s = j["steering"];
        reject_unknown_keys(s, {"layer_lo", "layer_hi", "gamma_pos", "gamma_neg"}, "steering");
        c.steering.layer_lo = s.value("layer_lo", 0);
        c.steering.layer_hi = s.value("layer_hi", 0);
        c.steering.gamma_pos = s.value("gamma_pos", 0.1);
        c.steering.gamma_neg = s.value("gamma_neg", -0.05);
    }

    c.synth_sampling.mode = SamplingMode::Temperature;
    c.synth_sampling.max_tokens = 64;
    if (j.contains("synth_sampling"))
        c.synth_sampling = sampling_from_json(j["synth_sampling"], "synth_sampling");
    if (j.contains("pair_sampling"))
        c.pair_sampling = sampling_from_json(j["pair_sampling"], "pair_sampling");

    c.tune_gamma = j.value("tune_gamma", false);
    if (j.contains("gamma_grid_pos")) c.gamma_grid_pos = j["gamma_grid_pos"].get<std::vector<double>>();
    if (j.contains("gamma_grid_neg")) c.gamma_grid_neg = j["gamma_grid_neg"].get<std::vector<double>>();
    c.tune_sample_size = j.value("tune_sample_size", 100ULL);
    c.min_proportion = j.value("min_proportion", 0.9);
    c.scorer = j.value("scorer", "projection");
    c.scorer_criterion = j.value("scorer_criterion", "general");

    if (const char* env = std::getenv("ICON2_OUTPUT_DIR")) c.output_dir = env;

    c.validate();
    return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    return pipeline_config_from_json(load_text(path));
}

std::string pipeline_config_to_json(const PipelineConfig& config) {
    json j;
    j["model_path"] = config.model_path;
    j["output_dir"] = config.output_dir;
    j["seed"] = config.seed;
    json crits = json::array();
    for (const auto& p : config.criteria)
        crits.push_back({{"name", p.criterion},
                         {"positive_prompt", p.positive_prompt},
                         {"negative_prompt", p.negative_prompt}});
    j["criteria"] = crits;
    j["pre_query_template"] = config.pre_query_template;
    if (config.feat_path) j["feat_path"] = *config.feat_path;
    j["n_feat"] = config.n_feat;
    j["n_raw"] = config.n_raw;
    j["filter"] = {{"mode", config.filter.mode == FilterMode::TopK ? "top_k" : "threshold"},
                   {"theta", config.filter.theta},
                   {"k", config.filter.k},
                   {"dedup", config.filter.dedup},
                   {"min_len", config.filter.min_len},
                   {"max_len", config.filter.max_len},
                   {"margin", config.filter.margin}};
    j["steering"] = {{"layer_lo", config.steering.layer_lo},
                     {"layer_hi", config.steering.layer_hi},
                     {"gamma_pos", config.steering.gamma_pos},
                     {"gamma_neg", config.steering.gamma_neg}};
    j["synth_sampling"] = sampling_to_json(config.synth_sampling);
    j["pair_sampling"] = sampling_to_json(config.pair_sampling);
    j["tune_gamma"] = config.tune_gamma;
    j["gamma_grid_pos"] = config.gamma_grid_pos;
    j["gamma_grid_neg"] = config.gamma_grid_neg;
    j["tune_sample_size"] = config.tune_sample_size;
    j["min_proportion"] = config.min_proportion;
    j["scorer"] = config.scorer;
    j["scorer_criterion"] = config.scorer_criterion;
    return j.dump(2) + "\n";
}

RunManifest run_pipeline(const PipelineConfig& config) {
    config.validate();
    if (!fs::exists(config.model_path))
        raise(ErrorKind::ConfigInvalid, "model_path '" + config.model_path + "' does not exist");
    if (config.feat_path && !fs::exists(*config.feat_path))
        raise(ErrorKind::ConfigInvalid, "feat_path '" + *config.feat_path + "' does not exist");

    const ModelBundle model = load_model_file(config.model_path);

    SteeringProfile profile = config.steering;
    if (profile.layer_lo == 0 && profile.layer_hi == 0) {
        const SteeringProfile d = default_steering_profile(model.config.n_layers);
        profile.layer_lo = d.layer_lo;
        profile.layer_hi = d.layer_hi;
    }
    if (profile.layer_hi > model.config.n_layers)
        raise(ErrorKind::ConfigInvalid,
              "steering.layer_hi (" + std::to_string(profile.layer_hi) + ") exceeds model layers (" +
                  std::to_string(model.config.n_layers) + ")");
    profile.validate(model.config.n_layers);

    const fs::path out_dir(config.output_dir);
    fs::create_directories(out_dir);

    Fnv1a64 cfg_hash;
    cfg_hash.update(pipeline_config_to_json(config));
    const std::string config_hash = cfg_hash.hex();

    RunManifest manifest;
    manifest.config_hash = config_hash;
    manifest.model_hash = model.content_hash;
    manifest.tool_version = kToolVersion;

    StageRunner runner(out_dir, config_hash, model.content_hash);

    const std::string feat_file = (out_dir / "feat.jsonl").string();
    const std::string directions_file = (out_dir / "directions.bin").string();
    const std::string raw_file = (out_dir / "raw.jsonl").string();
    const std::string scored_file = (out_dir / "scored.jsonl").string();
    const std::string filt_file = (out_dir / "filt.jsonl").string();
    const std::string sweep_pos_file = (out_dir / "sweep_pos.tsv").string();
    const std::string sweep_neg_file = (out_dir / "sweep_neg.tsv").string();
    const std::string proportion_file = (out_dir / "proportion.tsv").string();
    const std::string gammas_file = (out_dir / "gammas.json").string();
    const std::string pairs_file = (out_dir / "pairs.jsonl").string();
    const std::string summary_file = (out_dir / "summary.json").string();

    // stage 1: feature instructions + direction extraction
    manifest.stages.push_back(runner.run(
        "extract-directions",
        config.feat_path ? std::vector<std::string>{*config.feat_path} : std::vector<std::string>{},
        {feat_file, directions_file}, [&] {
            InstructionSet feat;
            if (config.feat_path) {
                feat = load_instruction_set(*config.feat_path, InstructionRole::Feat);
            } else {
                SamplingConfig s = config.synth_sampling;
                s.seed = derive_seed(config.seed, 0xFEA7);
                feat = synth_instructions(model, config.pre_query_template,
                                          static_cast<size_t>(config.n_feat), s)
                           .set;
                feat.role = InstructionRole::Feat;
            }
            save_instruction_set(feat, feat_file);
            std::vector<std::string> texts;
            for (const auto& r : feat.records) texts.push_back(r.text);
            const DirectionSet ds = extract_directions(model, texts, config.criteria);
            ds.save(directions_file);
        }));

    // stage 2: raw instruction synthesis
    manifest.stages.push_back(runner.run("synth-instructions", {}, {raw_file}, [&] {
        SamplingConfig s = config.synth_sampling;
        s.seed = derive_seed(config.seed, 0x0A11);
        const SynthReport report =
            synth_instructions(model, config.pre_query_template, static_cast<size_t>(config.n_raw), s);
        save_instruction_set(report.set, raw_file);
    }));

    // stage 3: consistency scoring + filtering
    manifest.stages.push_back(
        runner.run("score-filter", {directions_file, raw_file}, {scored_file, filt_file}, [&] {
            const DirectionSet ds = DirectionSet::load(directions_file);
            const InstructionSet raw = load_instruction_set(raw_file, InstructionRole::Raw);
            const InstructionSet scored = score_instructions(raw, ds, model);
            save_instruction_set(scored, scored_file);
            const InstructionSet filt = apply_filter_policy(scored, config.filter);
            save_instruction_set(filt, filt_file);
        }));

    // stage 4 (optional): gamma tuning
    if (config.tune_gamma) {
        manifest.stages.push_back(runner.run(
            "tune-gamma", {directions_file, filt_file},
            {sweep_pos_file, sweep_neg_file, proportion_file, gammas_file}, [&] {
                const DirectionSet ds = DirectionSet::load(directions_file);
                InstructionSet filt = load_instruction_set(filt_file, InstructionRole::Filt);
                if (filt.records.size() > config.tune_sample_size)
                    filt.records.resize(config.tune_sample_size);
                const auto scorer = make_scorer(config, model, ds);

                const SweepTable pos =
                    gamma_sweep(model, filt, ds, config.gamma_grid_pos, profile.layer_lo,
                                profile.layer_hi, *scorer, config.pair_sampling);
                const SweepTable neg =
                    gamma_sweep(model, filt, ds, config.gamma_grid_neg, profile.layer_lo,
                                profile.layer_hi, *scorer, config.pair_sampling);
                double best_pos = pos.rows[0].gamma;
                double best_reward = pos.rows[0].mean_reward;
                for (const SweepRow& r : pos.rows)
                    if (r.mean_reward > best_reward ||
                        (r.mean_reward == best_reward && std::abs(r.gamma) < std::abs(best_pos))) {
                        best_pos = r.gamma;
                        best_reward = r.mean_reward;
                    }
                const ProportionTable prop =
                    pair_proportion(model, filt, ds, best_pos, config.gamma_grid_neg,
                                    profile.layer_lo, profile.layer_hi, *scorer,
                                    config.pair_sampling);
                save_text(sweep_pos_file, sweep_table_to_tsv(pos));
                save_text(sweep_neg_file, sweep_table_to_tsv(neg));
                save_text(proportion_file, proportion_table_to_tsv(prop));
                const auto [gp, gn] = select_gammas(pos, neg, prop, config.min_proportion);
                json g;
                g["gamma_pos"] = gp;
                g["gamma_neg"] = gn;
                save_text(gammas_file, g.dump(2) + "\n");
            }));
    }

    // stage 5: preference pair generation
    {
        std::vector<std::string> inputs = {directions_file, filt_file};
        if (config.tune_gamma) inputs.push_back(gammas_file);
        manifest.stages.push_back(
            runner.run("generate-pairs", inputs, {pairs_file, summary_file}, [&] {
                SteeringProfile effective = profile;
                if (config.tune_gamma) {
                    const json g = json::parse(load_text(gammas_file));
                    effective.gamma_pos = g.at("gamma_pos").get<double>();
                    effective.gamma_neg = g.at("gamma_neg").get<double>();
                }
                const DirectionSet ds = DirectionSet::load(directions_file);
                const InstructionSet filt = load_instruction_set(filt_file, InstructionRole::Filt);
                std::ofstream sink(pairs_file, std::ios::binary | std::ios::trunc);
                if (!sink) raise(ErrorKind::SinkWriteError, "cannot open " + pairs_file);
                const DatasetSummary summary =
                    build_dataset(model, filt, ds, effective, config.pair_sampling, sink);
                sink.close();
                json s;
                s["pair_count"] = summary.pair_count;
                s["total_passes"] = summary.total_passes;
                s["resample_events"] = summary.resample_events;
                s["degenerate_pairs"] = summary.degenerate_pairs;
                json hist = json::object();
                for (const auto& [c, n] : summary.per_criterion) hist[c] = n;
                s["per_criterion"] = hist;
                s["gamma_pos"] = effective.gamma_pos;
                s["gamma_neg"] = effective.gamma_neg;
                s["layer_lo"] = effective.layer_lo;
                s["layer_hi"] = effective.layer_hi;
                save_text(summary_file, s.dump(2) + "\n");
            }));
    }

    // final verification pass: every artifact must re-read cleanly through
    // its own format reader, and the manifest records what the readers see
    for (StageInfo& stage : manifest.stages) {
        for (ArtifactInfo& a : stage.outputs) {
            if (!fs::exists(a.path))
                raise(ErrorKind::StageFailure, "artifact missing: " + a.path);
            if (a.path == feat_file)
                a.records = load_instruction_set(a.path, InstructionRole::Feat).records.size();
            else if (a.path == raw_file || a.path == scored_file)
                a.records = load_instruction_set(a.path, InstructionRole::Raw).records.size();
            else if (a.path == filt_file)
                a.records = load_instruction_set(a.path, InstructionRole::Filt).records.size();
            else if (a.path == pairs_file)
                a.records = load_pairs(a.path).size();
            else if (a.path == directions_file)
                a.records = DirectionSet::load(a.path).by_criterion.size();
            else if (a.path == sweep_pos_file || a.path == sweep_neg_file)
                a.records = sweep_table_from_tsv(load_text(a.path)).rows.size();
            else if (a.path == proportion_file)
                a.records = proportion_table_from_tsv(load_text(a.path)).rows.size();
        }
    }

    save_text((out_dir / "manifest.json").string(), manifest_to_json(manifest));
    return manifest;
}

std::string manifest_to_json(const RunManifest& manifest) {
    json j;
    j["config_hash"] = manifest.config_hash;
    j["model_hash"] = manifest.model_hash;
    j["tool_version"] = manifest.tool_version;
    json stages = json::array();
    for (const StageInfo& s : manifest.stages) {
        json outs = json::array();
        for (const ArtifactInfo& a : s.outputs)
            outs.push_back({{"path", a.path}, {"records", a.records}, {"hash", a.hash}});
        stages.push_back({{"name", s.name},
                          {"cached", s.cached},
                          {"wall_ms", s.wall_ms},
                          {"inputs", s.inputs},
                          {"outputs", outs}});
    }
    j["stages"] = stages;
    return j.dump(2) + "\n";
}

}  // namespace icon2
