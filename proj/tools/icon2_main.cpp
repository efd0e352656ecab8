// Command-line driver. Subcommands map 1:1 onto the library operations and
// speak the persisted formats (weight containers, direction files, JSONL
// instruction/pair sets, TSV tables, JSON config/manifest).
//
// Exit codes: 0 success, 2 config error, 3 stage failure, 4 I/O error.
// Failures print one machine-parsable JSON line on stderr.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "icon2/analysis.hpp"
#include "icon2/errors.hpp"
#include "icon2/pipeline.hpp"
#include "icon2/rng.hpp"
#include "icon2/tuner.hpp"

namespace fs = std::filesystem;
using namespace icon2;

namespace {

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ConfigInvalid: return 2;
        case ErrorKind::IoError:
        case ErrorKind::SinkWriteError: return 4;
        default: return 3;
    }
}

void print_error_line(const std::string& kind, const std::string& message) {
    nlohmann::json j;
    j["error"] = {{"kind", kind}, {"message", message}};
    std::cerr << j.dump() << "\n";
}

std::vector<ContrastivePromptPair> load_prompt_pairs(const std::string& path) {
    if (path.empty()) return default_contrastive_prompts();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(load_text(path));
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::ConfigInvalid, std::string("prompts file: ") + e.what());
    }
    std::vector<ContrastivePromptPair> pairs;
    for (const auto& e : j) {
        ContrastivePromptPair p;
        p.criterion = e.value("name", "");
        p.positive_prompt = e.value("positive_prompt", "");
        p.negative_prompt = e.value("negative_prompt", "");
        p.validate();
        pairs.push_back(std::move(p));
    }
    if (pairs.empty()) raise(ErrorKind::ConfigInvalid, "prompts file has no pairs");
    return pairs;
}

// instruction texts from a .jsonl instruction set or a plain text file
std::vector<std::pair<std::string, std::string>> load_texts(const std::string& path) {
    std::vector<std::pair<std::string, std::string>> out;
    if (fs::path(path).extension() == ".jsonl") {
        const InstructionSet set = load_instruction_set(path, InstructionRole::Raw);
        for (const auto& r : set.records) out.push_back({r.id, r.text});
        return out;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::IoError, "cannot open " + path);
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) out.push_back({std::to_string(n++), line});
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"preference-data construction via representation steering"};
    app.require_subcommand(1);

    int exit_code = 0;
    auto guarded = [&exit_code](auto&& fn) {
        return [&exit_code, fn]() {
            try {
                fn();
            } catch (const Error& e) {
                print_error_line(error_kind_name(e.kind()), e.what());
                exit_code = exit_code_for(e.kind());
            } catch (const std::exception& e) {
                print_error_line("Unhandled", e.what());
                exit_code = 3;
            }
        };
    };

    // ----- make-toy-model -----------------------------------------------
    auto* mk = app.add_subcommand("make-toy-model",
                                  "write a seeded random-weight model container");
    struct {
        std::string out;
        // the shipped "general" prompt alone is ~430 bytes, so the default
        // context leaves room for prompt + SEP + instruction
        int layers = 4, d_model = 32, heads = 4, d_ff = 64, max_seq = 512;
        uint64_t seed = 0;
        bool tied = false;
    } mk_opt;
    mk->add_option("--out", mk_opt.out, "output container path")->required();
    mk->add_option("--layers", mk_opt.layers);
    mk->add_option("--d-model", mk_opt.d_model);
    mk->add_option("--heads", mk_opt.heads);
    mk->add_option("--d-ff", mk_opt.d_ff);
    mk->add_option("--max-seq", mk_opt.max_seq);
    mk->add_option("--seed", mk_opt.seed);
    mk->add_flag("--tied", mk_opt.tied, "tie the unembedding to tok_emb");
    mk->callback(guarded([&] {
        ModelConfig cfg;
        cfg.n_layers = mk_opt.layers;
        cfg.d_model = mk_opt.d_model;
        cfg.n_heads = mk_opt.heads;
        cfg.d_ff = mk_opt.d_ff;
        cfg.vocab_size = ByteTokenizer::kVocabSize;
        cfg.max_seq_len = mk_opt.max_seq;
        cfg.tied_unemb = mk_opt.tied;
        const ModelBundle m = random_model(cfg, mk_opt.seed);
        write_file_bytes(mk_opt.out, save_model(m));
        std::cout << "wrote " << mk_opt.out << " model_hash=" << m.content_hash << "\n";
    }));

    // ----- extract-directions --------------------------------------------
    auto* ex = app.add_subcommand("extract-directions",
                                  "contrastive capture + per-layer PCA over a feature set");
    struct {
        std::string model, feat, out, prompts;
    } ex_opt;
    ex->add_option("--model", ex_opt.model)->required();
    ex->add_option("--feat", ex_opt.feat, "feature instruction set (.jsonl)")->required();
    ex->add_option("--out", ex_opt.out, "direction container path")->required();
    ex->add_option("--prompts", ex_opt.prompts,
                   "JSON list of {name, positive_prompt, negative_prompt}; default: shipped pairs");
    ex->callback(guarded([&] {
        const ModelBundle model = load_model_file(ex_opt.model);
        const InstructionSet feat = load_instruction_set(ex_opt.feat, InstructionRole::Feat);
        std::vector<std::string> texts;
        for (const auto& r : feat.records) texts.push_back(r.text);
        const DirectionSet ds = extract_directions(model, texts, load_prompt_pairs(ex_opt.prompts));
        ds.save(ex_opt.out);
        std::cout << "wrote " << ex_opt.out << " criteria=" << ds.by_criterion.size()
                  << " layers=" << ds.n_layers() << " n_feat=" << ds.n_feat << "\n";
    }));

    // ----- synth-instructions --------------------------------------------
    auto* sy = app.add_subcommand("synth-instructions",
                                  "sample instructions from the pre-query template");
    struct {
        std::string model, out, tmpl = "User: ";
        uint64_t n = 10, seed = 0;
        double temperature = 1.0;
        int max_tokens = 64;
    } sy_opt;
    sy->add_option("--model", sy_opt.model)->required();
    sy->add_option("--out", sy_opt.out)->required();
    sy->add_option("--n", sy_opt.n, "instructions to produce");
    sy->add_option("--template", sy_opt.tmpl, "pre-query template text");
    sy->add_option("--seed", sy_opt.seed);
    sy->add_option("--temperature", sy_opt.temperature);
    sy->add_option("--max-tokens", sy_opt.max_tokens);
    sy->callback(guarded([&] {
        const ModelBundle model = load_model_file(sy_opt.model);
        SamplingConfig s;
        s.mode = SamplingMode::Temperature;
        s.temperature = sy_opt.temperature;
        s.max_tokens = sy_opt.max_tokens;
        s.seed = sy_opt.seed;
        const SynthReport report =
            synth_instructions(model, sy_opt.tmpl, static_cast<size_t>(sy_opt.n), s);
        save_instruction_set(report.set, sy_opt.out);
        std::cout << "wrote " << sy_opt.out << " records=" << report.set.records.size()
                  << " requested=" << report.requested << " attempts=" << report.attempts
                  << " dropped_empty=" << report.dropped_empty
                  << " dropped_duplicate=" << report.dropped_duplicate << "\n";
    }));

    // ----- score-consistency ----------------------------------------------
    auto* sc = app.add_subcommand("score-consistency",
                                  "score every instruction against every criterion");
    struct {
        std::string model, directions, in, out;
        bool normalized = false;
    } sc_opt;
    sc->add_option("--model", sc_opt.model)->required();
    sc->add_option("--directions", sc_opt.directions)->required();
    sc->add_option("--in", sc_opt.in)->required();
    sc->add_option("--out", sc_opt.out)->required();
    sc->add_flag("--normalized", sc_opt.normalized, "per-layer cosines instead of raw dots");
    sc->callback(guarded([&] {
        const ModelBundle model = load_model_file(sc_opt.model);
        const DirectionSet ds = DirectionSet::load(sc_opt.directions);
        const InstructionSet raw = load_instruction_set(sc_opt.in, InstructionRole::Raw);
        const InstructionSet scored = score_instructions(raw, ds, model, sc_opt.normalized);
        save_instruction_set(scored, sc_opt.out);
        std::cout << "wrote " << sc_opt.out << " records=" << scored.records.size() << "\n";
    }));

    // ----- filter -----------------------------------------------------------
    auto* fi = app.add_subcommand("filter", "keep instructions by threshold or top-k");
    struct {
        std::string in, out, policy = "top_k";
        double theta = 0.0;
        uint64_t k = 0;
        bool dedup = false;
        uint64_t min_len = 0;
        uint64_t max_len = 0;
        double margin = 0.0;
    } fi_opt;
    fi->add_option("--in", fi_opt.in, "scored instruction set")->required();
    fi->add_option("--out", fi_opt.out)->required();
    fi->add_option("--policy", fi_opt.policy)->check(CLI::IsMember({"top_k", "threshold"}));
    fi->add_option("--theta", fi_opt.theta, "threshold mode cutoff");
    fi->add_option("--k", fi_opt.k, "top_k mode size");
    fi->add_flag("--dedup", fi_opt.dedup);
    fi->add_option("--min-len", fi_opt.min_len);
    fi->add_option("--max-len", fi_opt.max_len, "0 means unbounded");
    fi->add_option("--margin", fi_opt.margin,
                   "require the top criterion score to beat the runner-up by this much");
    fi->callback(guarded([&] {
        const InstructionSet scored = load_instruction_set(fi_opt.in, InstructionRole::Raw);
        FilterPolicy policy;
        policy.mode = fi_opt.policy == "top_k" ? FilterMode::TopK : FilterMode::Threshold;
        policy.theta = fi_opt.theta;
        policy.k = fi_opt.k;
        policy.dedup = fi_opt.dedup;
        policy.min_len = fi_opt.min_len;
        policy.max_len = fi_opt.max_len == 0 ? SIZE_MAX : fi_opt.max_len;
        policy.margin = fi_opt.margin;
        if (policy.mode == FilterMode::TopK && policy.k == 0)
            raise(ErrorKind::ConfigInvalid, "--k is required for top_k");
        const InstructionSet filt = apply_filter_policy(scored, policy);
        save_instruction_set(filt, fi_opt.out);
        std::cout << "wrote " << fi_opt.out << " records=" << filt.records.size() << "\n";
    }));

    // ----- tune-gamma --------------------------------------------------------
    auto* tg = app.add_subcommand(
        "tune-gamma", "select (gamma_pos, gamma_neg) from sweep tables or a live sweep");
    struct {
        std::string pos_table, neg_table, prop_table;
        std::string model, directions, in, scorer = "projection", scorer_criterion = "general";
        std::string out, out_dir;
        std::vector<double> grid_pos{0.01, 0.03, 0.05, 0.1, 0.3, 0.5};
        std::vector<double> grid_neg{-0.5, -0.3, -0.1, -0.05, -0.03, -0.01};
        double min_prop = 0.9;
        int layer_lo = 0, layer_hi = 0;
        int max_tokens = 32;
        uint64_t sample = 100;
    } tg_opt;
    tg->add_option("--pos-table", tg_opt.pos_table, "existing positive sweep TSV");
    tg->add_option("--neg-table", tg_opt.neg_table, "existing negative sweep TSV");
    tg->add_option("--prop-table", tg_opt.prop_table, "existing proportion TSV");
    tg->add_option("--model", tg_opt.model);
    tg->add_option("--directions", tg_opt.directions);
    tg->add_option("--in", tg_opt.in, "filtered instruction set for the live sweep");
    tg->add_option("--scorer", tg_opt.scorer)->check(CLI::IsMember({"projection", "length", "constant"}));
    tg->add_option("--scorer-criterion", tg_opt.scorer_criterion);
    tg->add_option("--grid-pos", tg_opt.grid_pos);
    tg->add_option("--grid-neg", tg_opt.grid_neg);
    tg->add_option("--min-prop", tg_opt.min_prop);
    tg->add_option("--layer-lo", tg_opt.layer_lo);
    tg->add_option("--layer-hi", tg_opt.layer_hi);
    tg->add_option("--max-tokens", tg_opt.max_tokens);
    tg->add_option("--sample", tg_opt.sample, "instructions used in the live sweep");
    tg->add_option("--out", tg_opt.out, "write chosen gammas as JSON");
    tg->add_option("--out-dir", tg_opt.out_dir, "write live sweep tables here");
    tg->callback(guarded([&] {
        SweepTable pos, neg;
        ProportionTable prop;
        const bool table_mode = !tg_opt.pos_table.empty();
        if (table_mode) {
            if (tg_opt.neg_table.empty() || tg_opt.prop_table.empty())
                raise(ErrorKind::ConfigInvalid,
                      "--pos-table, --neg-table and --prop-table go together");
            pos = sweep_table_from_tsv(load_text(tg_opt.pos_table));
            neg = sweep_table_from_tsv(load_text(tg_opt.neg_table));
            prop = proportion_table_from_tsv(load_text(tg_opt.prop_table));
        } else {
            if (tg_opt.model.empty() || tg_opt.directions.empty() || tg_opt.in.empty())
                raise(ErrorKind::ConfigInvalid,
                      "live sweep needs --model, --directions and --in");
            const ModelBundle model = load_model_file(tg_opt.model);
            const DirectionSet ds = DirectionSet::load(tg_opt.directions);
            InstructionSet filt = load_instruction_set(tg_opt.in, InstructionRole::Filt);
            if (filt.records.size() > tg_opt.sample) filt.records.resize(tg_opt.sample);
            int lo = tg_opt.layer_lo, hi = tg_opt.layer_hi;
            if (lo == 0 && hi == 0) {
                const SteeringProfile d = default_steering_profile(model.config.n_layers);
                lo = d.layer_lo;
                hi = d.layer_hi;
            }
            std::unique_ptr<Scorer> scorer;
            if (tg_opt.scorer == "projection")
                scorer = std::make_unique<ProjectionScorer>(model, ds, tg_opt.scorer_criterion);
            else if (tg_opt.scorer == "length")
                scorer = std::make_unique<LengthScorer>();
            else
                scorer = std::make_unique<ConstantScorer>();
            SamplingConfig s;
            s.max_tokens = tg_opt.max_tokens;
            pos = gamma_sweep(model, filt, ds, tg_opt.grid_pos, lo, hi, *scorer, s);
            neg = gamma_sweep(model, filt, ds, tg_opt.grid_neg, lo, hi, *scorer, s);
            double best = pos.rows[0].gamma, best_reward = pos.rows[0].mean_reward;
            for (const SweepRow& r : pos.rows)
                if (r.mean_reward > best_reward ||
                    (r.mean_reward == best_reward && std::abs(r.gamma) < std::abs(best))) {
                    best = r.gamma;
                    best_reward = r.mean_reward;
                }
            prop = pair_proportion(model, filt, ds, best, tg_opt.grid_neg, lo, hi, *scorer, s);
            if (!tg_opt.out_dir.empty()) {
                fs::create_directories(tg_opt.out_dir);
                save_text((fs::path(tg_opt.out_dir) / "sweep_pos.tsv").string(),
                          sweep_table_to_tsv(pos));
                save_text((fs::path(tg_opt.out_dir) / "sweep_neg.tsv").string(),
                          sweep_table_to_tsv(neg));
                save_text((fs::path(tg_opt.out_dir) / "proportion.tsv").string(),
                          proportion_table_to_tsv(prop));
            }
        }
        const auto [gp, gn] = select_gammas(pos, neg, prop, tg_opt.min_prop);
        std::cout << "gamma_pos=" << gp << " gamma_neg=" << gn << "\n";
        if (!tg_opt.out.empty()) {
            nlohmann::json g;
            g["gamma_pos"] = gp;
            g["gamma_neg"] = gn;
            save_text(tg_opt.out, g.dump(2) + "\n");
        }
    }));

    // ----- generate-pairs ------------------------------------------------------
    auto* gp = app.add_subcommand("generate-pairs",
                                  "two steered passes per instruction -> chosen/rejected");
    struct {
        std::string model, directions, in, out;
        double gamma_pos = 0.1, gamma_neg = -0.05;
        int layer_lo = 0, layer_hi = 0;
        int max_tokens = 64;
        uint64_t seed = 0;
        double temperature = 0.0;  // 0 = greedy
    } gp_opt;
    gp->add_option("--model", gp_opt.model)->required();
    gp->add_option("--directions", gp_opt.directions)->required();
    gp->add_option("--in", gp_opt.in, "filtered instruction set")->required();
    gp->add_option("--out", gp_opt.out, "pair JSONL path")->required();
    gp->add_option("--gamma-pos", gp_opt.gamma_pos);
    gp->add_option("--gamma-neg", gp_opt.gamma_neg);
    gp->add_option("--layer-lo", gp_opt.layer_lo, "0 = derive from model depth");
    gp->add_option("--layer-hi", gp_opt.layer_hi, "0 = derive from model depth");
    gp->add_option("--max-tokens", gp_opt.max_tokens);
    gp->add_option("--seed", gp_opt.seed);
    gp->add_option("--temperature", gp_opt.temperature, "0 means greedy decoding");
    gp->callback(guarded([&] {
        const ModelBundle model = load_model_file(gp_opt.model);
        const DirectionSet ds = DirectionSet::load(gp_opt.directions);
        const InstructionSet filt = load_instruction_set(gp_opt.in, InstructionRole::Filt);
        SteeringProfile profile{gp_opt.layer_lo, gp_opt.layer_hi, gp_opt.gamma_pos,
                                gp_opt.gamma_neg};
        if (profile.layer_lo == 0 && profile.layer_hi == 0) {
            const SteeringProfile d = default_steering_profile(model.config.n_layers);
            profile.layer_lo = d.layer_lo;
            profile.layer_hi = d.layer_hi;
        }
        SamplingConfig s;
        if (gp_opt.temperature > 0.0) {
            s.mode = SamplingMode::Temperature;
            s.temperature = gp_opt.temperature;
        }
        s.max_tokens = gp_opt.max_tokens;
        s.seed = gp_opt.seed;
        std::ofstream sink(gp_opt.out, std::ios::binary | std::ios::trunc);
        if (!sink) raise(ErrorKind::SinkWriteError, "cannot open " + gp_opt.out);
        const DatasetSummary summary = build_dataset(model, filt, ds, profile, s, sink);
        std::cout << "wrote " << gp_opt.out << " pairs=" << summary.pair_count
                  << " total_passes=" << summary.total_passes
                  << " degenerate=" << summary.degenerate_pairs << "\n";
    }));

    // ----- analyze-sensitivity ------------------------------------------------
    auto* an = app.add_subcommand("analyze-sensitivity",
                                  "cosine + dimension-wise U tests between two direction sets");
    struct {
        std::string a, b, criterion, out_dir;
        double alpha = 0.05;
    } an_opt;
    an->add_option("--a", an_opt.a)->required();
    an->add_option("--b", an_opt.b)->required();
    an->add_option("--criterion", an_opt.criterion, "default: every criterion present in both");
    an->add_option("--alpha", an_opt.alpha);
    an->add_option("--out-dir", an_opt.out_dir, "write per-layer/per-dimension tables here");
    an->callback(guarded([&] {
        const DirectionSet a = DirectionSet::load(an_opt.a);
        const DirectionSet b = DirectionSet::load(an_opt.b);
        std::vector<Criterion> crits;
        if (!an_opt.criterion.empty()) {
            crits.push_back(an_opt.criterion);
        } else {
            for (const auto& [c, _] : a.by_criterion)
                if (b.by_criterion.count(c) != 0) crits.push_back(c);
            if (crits.empty()) raise(ErrorKind::CriterionMissing, "no shared criteria");
        }
        nlohmann::json summary = nlohmann::json::array();
        for (const Criterion& c : crits) {
            const CosineReport cr = layerwise_cosine(a, b, c);
            const UTestReport ur = dimensionwise_utest(a, b, c, an_opt.alpha);
            std::cout << "criterion=" << c << " cosine_mean=" << cr.mean
                      << " cosine_max=" << cr.max << " cosine_min=" << cr.min
                      << " min_p=" << ur.min_p << " rejected=" << (ur.any_rejected ? "yes" : "no")
                      << "\n";
            summary.push_back({{"criterion", c},
                               {"cosine_mean", cr.mean},
                               {"cosine_max", cr.max},
                               {"cosine_min", cr.min},
                               {"min_p", ur.min_p},
                               {"alpha", ur.alpha},
                               {"any_rejected", ur.any_rejected}});
            if (!an_opt.out_dir.empty()) {
                fs::create_directories(an_opt.out_dir);
                std::string cos_tsv = "layer\tcosine\n";
                for (size_t l = 0; l < cr.per_layer.size(); ++l) {
                    char buf[64];
                    std::snprintf(buf, sizeof(buf), "%zu\t%.17g\n", l + 1, cr.per_layer[l]);
                    cos_tsv += buf;
                }
                save_text((fs::path(an_opt.out_dir) / ("cosine_" + c + ".tsv")).string(), cos_tsv);
                std::string u_tsv = "dimension\tU\tp\n";
                for (size_t d = 0; d < ur.per_dimension.size(); ++d) {
                    char buf[96];
                    std::snprintf(buf, sizeof(buf), "%zu\t%.17g\t%.17g\n", d,
                                  ur.per_dimension[d].u, ur.per_dimension[d].p_value);
                    u_tsv += buf;
                }
                save_text((fs::path(an_opt.out_dir) / ("utest_" + c + ".tsv")).string(), u_tsv);
            }
        }
        if (!an_opt.out_dir.empty())
            save_text((fs::path(an_opt.out_dir) / "sensitivity.json").string(),
                      summary.dump(2) + "\n");
    }));

    // ----- check-leakage --------------------------------------------------------
    auto* ck = app.add_subcommand("check-leakage", "word n-gram overlap between corpora");
    struct {
        std::vector<std::string> train;
        std::string test, out;
        int n = 13;
    } ck_opt;
    ck->add_option("--train", ck_opt.train, "training corpora (.jsonl or plain text)")->required();
    ck->add_option("--test", ck_opt.test, "test corpus (.jsonl or plain text)")->required();
    ck->add_option("--n", ck_opt.n, "n-gram order");
    ck->add_option("--out", ck_opt.out, "write the full report as JSON");
    ck->callback(guarded([&] {
        std::vector<std::string> train_texts;
        for (const std::string& p : ck_opt.train)
            for (auto& [id, text] : load_texts(p)) train_texts.push_back(text);
        const auto test_records = load_texts(ck_opt.test);
        const LeakageReport report = ngram_overlap(train_texts, test_records, ck_opt.n);
        std::cout << "n=" << report.n << " leaked_fraction=" << report.leaked_fraction
                  << " leaked=" << report.leaked_ids.size() << "/" << test_records.size() << "\n";
        if (!ck_opt.out.empty()) {
            nlohmann::json j;
            j["n"] = report.n;
            j["leaked_fraction"] = report.leaked_fraction;
            j["leaked_ids"] = report.leaked_ids;
            save_text(ck_opt.out, j.dump(2) + "\n");
        }
    }));

    // ----- run ---------------------------------------------------------------
    auto* rn = app.add_subcommand("run", "full pipeline from a JSON config");
    struct {
        std::string config;
    } rn_opt;
    rn->add_option("--config", rn_opt.config)->required();
    rn->callback(guarded([&] {
        const PipelineConfig config = load_pipeline_config(rn_opt.config);
        const RunManifest manifest = run_pipeline(config);
        for (const StageInfo& s : manifest.stages) {
            std::cout << "stage " << s.name << (s.cached ? " [cached]" : "") << " "
                      << s.wall_ms << "ms";
            for (const ArtifactInfo& a : s.outputs)
                std::cout << " " << fs::path(a.path).filename().string() << ":" << a.records;
            std::cout << "\n";
        }
        std::cout << "manifest " << (fs::path(config.output_dir) / "manifest.json").string()
                  << "\n";
    }));

    CLI11_PARSE(app, argc, argv);
    return exit_code;
}
