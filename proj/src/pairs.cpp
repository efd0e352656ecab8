#include "icon2/pairs.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "icon2/errors.hpp"
#include "icon2/parallel.hpp"

#include <json.hpp>

namespace icon2 {

namespace {

std::vector<TokenId> response_prompt(const std::string& instruction) {
    std::vector<TokenId> toks = ByteTokenizer::tokenize(instruction, true);
    toks.push_back(ByteTokenizer::kSep);
    return toks;
}

}  // namespace

void SteeringProfile::validate(int n_layers, bool allow_equal_gammas) const {
    if (layer_lo < 1 || layer_lo > layer_hi || layer_hi > n_layers)
        raise(ErrorKind::ConfigInvalid,
              "layer interval [" + std::to_string(layer_lo) + ", " + std::to_string(layer_hi) +
                  "] invalid for " + std::to_string(n_layers) + " layers");
    if (allow_equal_gammas ? gamma_pos < gamma_neg : gamma_pos <= gamma_neg)
        raise(ErrorKind::ConfigInvalid, "gamma_pos must exceed gamma_neg");
}

SteeringProfile default_steering_profile(int n_layers) {
    SteeringProfile p;
    if (n_layers >= 20) {
        p.layer_lo = 10;
        p.layer_hi = 20;
    } else {
        p.layer_lo = std::max(1, static_cast<int>(std::lround(0.3 * n_layers)));
        p.layer_hi = std::max(p.layer_lo, static_cast<int>(std::lround(0.65 * n_layers)));
    }
    return p;
}

SteeringSpec steering_spec_for(const DirectionSet& directions, const Criterion& criterion,
                               int layer_lo, int layer_hi, double gamma) {
    const std::vector<Vec>& layers = directions.directions_for(criterion);
    SteeringSpec spec;
    spec.gamma = gamma;
    for (int l = layer_lo; l <= layer_hi; ++l) {
        if (l > static_cast<int>(layers.size()))
            raise(ErrorKind::MissingDirection,
                  "criterion '" + criterion + "' has no layer " + std::to_string(l));
        spec.layer_set.insert(l);
        spec.direction[l] = layers[l - 1];
    }
    return spec;
}

SteeringSpec steering_spec_for(const DirectionSet& directions, const Criterion& criterion,
                               const SteeringProfile& profile, double gamma) {
    return steering_spec_for(directions, criterion, profile.layer_lo, profile.layer_hi, gamma);
}

Vec steer_hidden(const Vec& z, const Vec& u, double gamma) {
    if (z.size() != u.size()) raise(ErrorKind::DimMismatch, "steer_hidden: length mismatch");
    Vec out = z;
    add_scaled(out, u, static_cast<float>(gamma));
    return out;
}

PreferencePair generate_pair(const ModelBundle& model, const InstructionRecord& record,
                             const DirectionSet& directions, const SteeringProfile& profile,
                             const SamplingConfig& sampling, PassLedger* ledger) {
    if (!record.assigned)
        raise(ErrorKind::MissingAssignment, "record '" + record.id + "' has no criterion");
    profile.validate(model.config.n_layers, /*allow_equal_gammas=*/true);

    const Criterion& criterion = record.assigned->criterion;
    const auto prompt = response_prompt(record.text);

    auto run_pass = [&](double gamma) {
        const SteeringSpec spec = steering_spec_for(directions, criterion, profile, gamma);
        const auto tokens = generate(model, prompt, sampling, &spec);
        if (ledger != nullptr) ++ledger->passes;
        return ByteTokenizer::detokenize(tokens);
    };

    PreferencePair pair;
    pair.instruction_id = record.id;
    pair.instruction_text = record.text;
    pair.criterion = criterion;
    pair.profile = profile;
    pair.chosen = run_pass(profile.gamma_pos);
    pair.rejected = run_pass(profile.gamma_neg);
    pair.pass_count = 2;
    return pair;
}

DatasetSummary build_dataset(const ModelBundle& model, const InstructionSet& filt,
                             const DirectionSet& directions, const SteeringProfile& profile,
                             const SamplingConfig& sampling, std::ostream& sink) {
    if (filt.records.empty()) raise(ErrorKind::EmptyInput, "filtered instruction set is empty");

    std::vector<PreferencePair> pairs(filt.records.size());
    std::atomic<uint64_t> passes{0};
    parallel_for(filt.records.size(), [&](size_t i) {
        PassLedger local;
        pairs[i] = generate_pair(model, filt.records[i], directions, profile, sampling, &local);
        passes += local.passes;
    });

    DatasetSummary summary;
    summary.resample_events = 0;
    for (const PreferencePair& p : pairs) {
        sink << pair_to_line(p) << '\n';
        if (!sink) raise(ErrorKind::SinkWriteError, "dataset sink write failed");
        ++summary.pair_count;
        ++summary.per_criterion[p.criterion];
        if (p.chosen == p.rejected) ++summary.degenerate_pairs;
    }
    summary.total_passes = passes.load();
    return summary;
}

std::string pair_to_line(const PreferencePair& pair) {
    nlohmann::json j;
    j["id"] = pair.instruction_id;
    j["instruction"] = encode_text_field(pair.instruction_text);
    j["chosen"] = encode_text_field(pair.chosen);
    j["rejected"] = encode_text_field(pair.rejected);
    j["criterion"] = pair.criterion;
    j["gamma_pos"] = pair.profile.gamma_pos;
    j["gamma_neg"] = pair.profile.gamma_neg;
    j["layer_lo"] = pair.profile.layer_lo;
    j["layer_hi"] = pair.profile.layer_hi;
    return j.dump();
}

PreferencePair pair_from_line(const std::string& line) {
    PreferencePair p;
    try {
        const nlohmann::json j = nlohmann::json::parse(line);
        p.instruction_id = j.at("id").get<std::string>();
        p.instruction_text = decode_text_field(j.at("instruction").get<std::string>());
        p.chosen = decode_text_field(j.at("chosen").get<std::string>());
        p.rejected = decode_text_field(j.at("rejected").get<std::string>());
        p.criterion = j.at("criterion").get<std::string>();
        p.profile.gamma_pos = j.at("gamma_pos").get<double>();
        p.profile.gamma_neg = j.at("gamma_neg").get<double>();
        p.profile.layer_lo = j.at("layer_lo").get<int>();
        p.profile.layer_hi = j.at("layer_hi").get<int>();
        p.pass_count = 2;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::MalformedRecord, std::string("bad pair record: ") + e.what());
    }
    return p;
}

std::vector<PreferencePair> load_pairs(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::IoError, "cannot open " + path);
    std::vector<PreferencePair> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(pair_from_line(line));
    }
    return out;
}

void save_pairs(const std::vector<PreferencePair>& pairs, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::SinkWriteError, "cannot open " + path);
    for (const PreferencePair& p : pairs) out << pair_to_line(p) << '\n';
    if (!out) raise(ErrorKind::SinkWriteError, "write failed for " + path);
}

}  // namespace icon2
