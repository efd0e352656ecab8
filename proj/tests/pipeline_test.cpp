#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "icon2/errors.hpp"
#include "icon2/pipeline.hpp"
#include "icon2/tuner.hpp"
#include "test_support.hpp"

#include <json.hpp>

using namespace icon2;
using namespace icon2::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& child = "") const {
        return child.empty() ? path.string() : (path / child).string();
    }
};

PipelineConfig desk_config(const TempDir& dir, const std::string& model_file) {
    PipelineConfig c;
    c.model_path = model_file;
    c.output_dir = dir.str("out");
    c.seed = 11;
    c.criteria = {{"helpfulness", "You are a helpful assistant.", "You are a helpless assistant."},
                  {"honesty", "You are an honest assistant.", "You are a dishonest assistant."}};
    c.pre_query_template = "User: ";
    c.n_feat = 64;
    c.n_raw = 200;
    c.filter.mode = FilterMode::TopK;
    c.filter.k = 50;
    c.steering = SteeringProfile{2, 3, 0.2, -0.1};
    c.synth_sampling.mode = SamplingMode::Temperature;
    c.synth_sampling.temperature = 1.0;
    c.synth_sampling.max_tokens = 10;
    c.pair_sampling.max_tokens = 6;
    return c;
}

}  // namespace

TEST_CASE("pipeline runs end to end, manifest counts match, rerun is cached") {
    TempDir dir("icon2_pipe_a");
    const std::string model_file = dir.str("model.bin");
    write_file_bytes(model_file, save_model(make_toy_model(91, 4, 16, 4, 32, 128)));

    PipelineConfig config = desk_config(dir, model_file);
    RunManifest m1 = run_pipeline(config);

    REQUIRE(m1.stages.size() == 4);  // no tune-gamma stage
    for (const auto& s : m1.stages) CHECK_FALSE(s.cached);

    // artifact record counts: 200 raw filtered to top-k 50, two passes each
    const auto& pairs_stage = m1.stages.back();
    uint64_t pair_records = 0;
    for (const auto& a : pairs_stage.outputs)
        if (a.path.find("pairs.jsonl") != std::string::npos) pair_records = a.records;
    CHECK(pair_records == 50);

    const auto summary = nlohmann::json::parse(load_text(dir.str("out/summary.json")));
    CHECK(summary["pair_count"] == 50);
    CHECK(summary["total_passes"] == 100);
    CHECK(summary["resample_events"] == 0);

    // rerun: every stage cached, outputs byte-identical
    const std::string pairs_before = load_text(dir.str("out/pairs.jsonl"));
    RunManifest m2 = run_pipeline(config);
    for (const auto& s : m2.stages) CHECK(s.cached);
    CHECK(load_text(dir.str("out/pairs.jsonl")) == pairs_before);

    // fresh output dir reproduces the dataset byte-for-byte
    PipelineConfig config2 = config;
    config2.output_dir = dir.str("out2");
    run_pipeline(config2);
    CHECK(load_text(dir.str("out2/pairs.jsonl")) == pairs_before);

    // manifest file exists and parses
    const auto manifest = nlohmann::json::parse(load_text(dir.str("out/manifest.json")));
    CHECK(manifest["model_hash"] == m1.model_hash);
}

TEST_CASE("pipeline with gamma tuning produces tables and a gamma choice") {
    TempDir dir("icon2_pipe_b");
    const std::string model_file = dir.str("model.bin");
    write_file_bytes(model_file, save_model(make_toy_model(92, 3, 16, 4, 32, 128)));

    PipelineConfig config = desk_config(dir, model_file);
    config.steering = SteeringProfile{1, 2, 0.2, -0.1};
    config.tune_gamma = true;
    config.gamma_grid_pos = {0.05, 0.2};
    config.gamma_grid_neg = {-0.2, -0.05};
    config.tune_sample_size = 6;
    config.scorer = "length";
    config.min_proportion = 0.0;  // the length scorer has no planted ordering
    config.n_raw = 30;
    config.filter.k = 10;

    RunManifest m = run_pipeline(config);
    REQUIRE(m.stages.size() == 5);
    CHECK(fs::exists(dir.str("out/sweep_pos.tsv")));
    CHECK(fs::exists(dir.str("out/proportion.tsv")));

    const auto gammas = nlohmann::json::parse(load_text(dir.str("out/gammas.json")));
    const double gp = gammas["gamma_pos"].get<double>();
    const double gn = gammas["gamma_neg"].get<double>();
    CHECK((gp == 0.05 || gp == 0.2));
    CHECK((gn == -0.05 || gn == -0.2));

    // the generated pairs carry the tuned gammas
    const auto pairs = load_pairs(dir.str("out/pairs.jsonl"));
    REQUIRE(!pairs.empty());
    CHECK(pairs[0].profile.gamma_pos == gp);
    CHECK(pairs[0].profile.gamma_neg == gn);

    // sweep table file parses back
    const SweepTable pos = sweep_table_from_tsv(load_text(dir.str("out/sweep_pos.tsv")));
    CHECK(pos.rows.size() == 2);
}

TEST_CASE("config validation names the offending field") {
    TempDir dir("icon2_pipe_c");
    const std::string model_file = dir.str("model.bin");
    write_file_bytes(model_file, save_model(make_toy_model(93, 2, 8, 2, 16, 64)));

    PipelineConfig config = desk_config(dir, model_file);
    config.steering = SteeringProfile{1, 9, 0.2, -0.1};  // layer_hi > N
    try {
        run_pipeline(config);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ConfigInvalid);
        CHECK(std::string(e.what()).find("layer_hi") != std::string::npos);
    }
}

TEST_CASE("config parser rejects unknown keys and bad values") {
    CHECK_THROWS_AS(pipeline_config_from_json(R"({"model_path":"m","typo_key":1})"), Error);
    CHECK_THROWS_AS(pipeline_config_from_json(R"({"model_path":"m","filter":{"oops":1}})"), Error);
    CHECK_THROWS_AS(pipeline_config_from_json(R"({"model_path":"m","synth_sampling":{"mode":"greedy"}})"),
                    Error);
    CHECK_THROWS_AS(pipeline_config_from_json("not json"), Error);
    try {
        pipeline_config_from_json(R"({"model_path":"m","unknown_thing":true})");
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("unknown_thing") != std::string::npos);
    }
}

TEST_CASE("config json roundtrips through the parser") {
    TempDir dir("icon2_pipe_d");
    PipelineConfig c = desk_config(dir, "model.bin");
    const std::string text = pipeline_config_to_json(c);
    PipelineConfig back = pipeline_config_from_json(text);
    CHECK(pipeline_config_to_json(back) == text);
    CHECK(back.n_feat == c.n_feat);
    CHECK(back.criteria.size() == 2);
    CHECK(back.steering.layer_lo == 2);
}

TEST_CASE("external feature file feeds extraction") {
    TempDir dir("icon2_pipe_e");
    const std::string model_file = dir.str("model.bin");
    write_file_bytes(model_file, save_model(make_toy_model(94, 3, 16, 4, 32, 128)));

    InstructionSet feat;
    feat.role = InstructionRole::Feat;
    Rng rng(12);
    for (int i = 0; i < 10; ++i) {
        InstructionRecord r;
        r.id = "feat-" + std::to_string(i);
        r.text = random_words(rng, 3, 8);
        feat.records.push_back(std::move(r));
    }
    const std::string feat_file = dir.str("my_feat.jsonl");
    save_instruction_set(feat, feat_file);

    PipelineConfig config = desk_config(dir, model_file);
    config.feat_path = feat_file;
    config.steering = SteeringProfile{1, 2, 0.2, -0.1};
    RunManifest m = run_pipeline(config);

    const InstructionSet persisted =
        load_instruction_set(dir.str("out/feat.jsonl"), InstructionRole::Feat);
    REQUIRE(persisted.records.size() == 10);
    CHECK(persisted.records[0].text == feat.records[0].text);
    (void)m;
}
