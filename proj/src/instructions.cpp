#include "icon2/instructions.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "icon2/errors.hpp"
#include "icon2/parallel.hpp"
#include "icon2/rng.hpp"

#include <json.hpp>

namespace icon2 {

namespace {

std::string record_id(size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "raw-%06zu", index);
    return buf;
}

nlohmann::json record_to_json(const InstructionRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["text"] = encode_text_field(r.text);
    if (!r.scores.empty()) {
        nlohmann::json s = nlohmann::json::object();
        for (const auto& [c, v] : r.scores) s[c] = v;
        j["scores"] = s;
    }
    if (r.assigned) {
        j["assigned"] = {{"criterion", r.assigned->criterion}, {"score", r.assigned->score}};
    }
    return j;
}

InstructionRecord record_from_json(const nlohmann::json& j) {
    InstructionRecord r;
    try {
        r.id = j.at("id").get<std::string>();
        r.text = decode_text_field(j.at("text").get<std::string>());
        if (j.contains("scores"))
            for (auto it = j["scores"].begin(); it != j["scores"].end(); ++it)
                r.scores[it.key()] = it.value().get<double>();
        if (j.contains("assigned")) {
            CriterionAssignment a;
            a.criterion = j["assigned"].at("criterion").get<std::string>();
            a.score = j["assigned"].at("score").get<double>();
            r.assigned = a;
        }
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::MalformedRecord, std::string("bad instruction record: ") + e.what());
    }
    return r;
}

}  // namespace

std::string encode_text_field(const std::string& bytes) {
    std::string out;
    out.reserve(bytes.size());
    for (unsigned char c : bytes) {
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back(static_cast<char>(0xC0 | (c >> 6)));
            out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
        }
    }
    return out;
}

std::string decode_text_field(const std::string& utf8) {
    std::string out;
    out.reserve(utf8.size());
    for (size_t i = 0; i < utf8.size();) {
        const unsigned char c = utf8[i];
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
            i += 1;
        } else if ((c & 0xE0) == 0xC0 && i + 1 < utf8.size()) {
            const unsigned char c2 = utf8[i + 1];
            const unsigned cp = ((c & 0x1Fu) << 6) | (c2 & 0x3Fu);
            if (cp > 0xFF)
                raise(ErrorKind::MalformedRecord,
                      "text field code point above U+00FF cannot map to a byte");
            out.push_back(static_cast<char>(cp));
            i += 2;
        } else {
            raise(ErrorKind::MalformedRecord, "text field is not valid two-byte-max UTF-8");
        }
    }
    return out;
}

SynthReport synth_instructions(const ModelBundle& model, const std::string& pre_query_template,
                               size_t n, const SamplingConfig& sampling) {
    if (n < 1) raise(ErrorKind::ConfigInvalid, "n must be >= 1");
    if (sampling.mode != SamplingMode::Temperature)
        raise(ErrorKind::ConfigInvalid, "instruction synthesis requires temperature sampling");

    const std::vector<TokenId> prompt = ByteTokenizer::tokenize(pre_query_template, true);
    const size_t attempt_budget = 2 * n + 32;

    SynthReport report;
    report.requested = n;
    report.set.role = InstructionRole::Raw;
    std::set<std::string> seen;

    for (size_t attempt = 0; attempt < attempt_budget && report.set.records.size() < n;
         ++attempt) {
        ++report.attempts;
        SamplingConfig per_sample = sampling;
        per_sample.seed = derive_seed(sampling.seed, attempt);
        per_sample.stop_on_eos = true;
        const auto tokens = generate(model, prompt, per_sample);
        const std::string text = ByteTokenizer::detokenize(tokens);
        if (text.empty()) {
            ++report.dropped_empty;
            continue;
        }
        if (!seen.insert(text).second) {
            ++report.dropped_duplicate;
            continue;
        }
        InstructionRecord r;
        r.id = record_id(report.set.records.size());
        r.text = text;
        report.set.records.push_back(std::move(r));
    }

    if (report.set.records.empty())
        raise(ErrorKind::RetryBudgetExhausted,
              "no non-empty unique instruction in " + std::to_string(report.attempts) +
                  " attempts");
    return report;
}

double consistency_score(const LayerRepresentations& reps, const std::vector<Vec>& direction,
                         bool normalized) {
    if (reps.layers.size() != direction.size())
        raise(ErrorKind::DimMismatch, "layer count mismatch in consistency score");
    double acc = 0.0;
    for (size_t l = 0; l < direction.size(); ++l) {
        if (reps.layers[l].size() != direction[l].size())
            raise(ErrorKind::DimMismatch, "dimension mismatch at layer " + std::to_string(l + 1));
        double term = dot_f64(reps.layers[l], direction[l]);
        if (normalized) {
            const double denom = l2_norm(reps.layers[l]) * l2_norm(direction[l]);
            term = denom == 0.0 ? 0.0 : term / denom;
        }
        acc += term;
    }
    return acc / static_cast<double>(direction.size());
}

std::pair<Criterion, double> assign_criterion(const std::map<Criterion, double>& scores) {
    if (scores.empty()) raise(ErrorKind::EmptyScores, "no criterion scores to assign from");
    // std::map iterates names in ascending order, so the first strict
    // improvement wins and exact ties keep the lexicographically smaller name
    auto best = scores.begin();
    for (auto it = std::next(scores.begin()); it != scores.end(); ++it)
        if (it->second > best->second) best = it;
    return {best->first, best->second};
}

InstructionSet score_instructions(const InstructionSet& raw, const DirectionSet& directions,
                                  const ModelBundle& model, bool normalized) {
    if (directions.d_model() != model.config.d_model ||
        directions.n_layers() != model.config.n_layers)
        raise(ErrorKind::DimMismatch, "direction set does not match model geometry");

    InstructionSet out = raw;
    parallel_for(out.records.size(), [&](size_t i) {
        InstructionRecord& r = out.records[i];
        const auto toks = ByteTokenizer::tokenize(r.text, true);
        if (toks.size() > static_cast<size_t>(model.config.max_seq_len))
            raise(ErrorKind::ContextOverflow, "instruction '" + r.id + "' exceeds max_seq_len");
        const auto reps = forward_capture(model, toks);
        r.scores.clear();
        for (const auto& [crit, dirs] : directions.by_criterion)
            r.scores[crit] = consistency_score(reps, dirs, normalized);
        const auto [crit, score] = assign_criterion(r.scores);
        r.assigned = CriterionAssignment{crit, score};
    });
    return out;
}

InstructionSet apply_filter_policy(const InstructionSet& scored, const FilterPolicy& policy) {
    if (policy.mode == FilterMode::TopK && policy.k > scored.records.size())
        raise(ErrorKind::ConfigInvalid, "top_k k exceeds record count");

    std::vector<const InstructionRecord*> kept;
    std::set<std::string> seen_texts;
    for (const InstructionRecord& r : scored.records) {
        if (!r.assigned)
            raise(ErrorKind::MissingAssignment, "record '" + r.id + "' is unscored");
        if (r.text.size() < policy.min_len || r.text.size() > policy.max_len) continue;
        if (policy.dedup && !seen_texts.insert(r.text).second) continue;
        if (policy.margin > 0.0 && r.scores.size() >= 2) {
            double top = -std::numeric_limits<double>::infinity();
            double second = top;
            for (const auto& [_, v] : r.scores) {
                if (v > top) {
                    second = top;
                    top = v;
                } else if (v > second) {
                    second = v;
                }
            }
            if (top - second < policy.margin) continue;
        }
        kept.push_back(&r);
    }

    std::stable_sort(kept.begin(), kept.end(),
                     [](const InstructionRecord* a, const InstructionRecord* b) {
                         if (a->assigned->score != b->assigned->score)
                             return a->assigned->score > b->assigned->score;
                         return a->id < b->id;
                     });

    InstructionSet out;
    out.role = InstructionRole::Filt;
    if (policy.mode == FilterMode::Threshold) {
        for (const InstructionRecord* r : kept)
            if (r->assigned->score >= policy.theta) out.records.push_back(*r);
    } else {
        const size_t take = std::min(policy.k, kept.size());
        for (size_t i = 0; i < take; ++i) out.records.push_back(*kept[i]);
    }
    return out;
}

InstructionSet filter_instructions(const InstructionSet& raw, const DirectionSet& directions,
                                   const ModelBundle& model, const FilterPolicy& policy) {
    return apply_filter_policy(score_instructions(raw, directions, model), policy);
}

std::string instruction_set_to_lines(const InstructionSet& set) {
    std::string out;
    for (const InstructionRecord& r : set.records) {
        out += record_to_json(r).dump();
        out += '\n';
    }
    return out;
}

InstructionSet instruction_set_from_lines(const std::string& text, InstructionRole role) {
    InstructionSet set;
    set.role = role;
    std::set<std::string> ids;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorKind::MalformedRecord,
                  "line " + std::to_string(line_no) + ": " + e.what());
        }
        InstructionRecord r = record_from_json(j);
        if (!ids.insert(r.id).second)
            raise(ErrorKind::MalformedRecord, "duplicate id '" + r.id + "'");
        if (role == InstructionRole::Filt && !r.assigned)
            raise(ErrorKind::MalformedRecord,
                  "filtered set requires assignment on '" + r.id + "'");
        if (r.assigned && !r.scores.empty()) {
            double best = r.scores.begin()->second;
            for (const auto& [_, v] : r.scores) best = std::max(best, v);
            if (r.assigned->score != best)
                raise(ErrorKind::MalformedRecord,
                      "assigned score on '" + r.id + "' is not the max criterion score");
        }
        set.records.push_back(std::move(r));
    }
    return set;
}

void save_instruction_set(const InstructionSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::SinkWriteError, "cannot open " + path);
    const std::string lines = instruction_set_to_lines(set);
    out.write(lines.data(), static_cast<std::streamsize>(lines.size()));
    if (!out) raise(ErrorKind::SinkWriteError, "write failed for " + path);
}

InstructionSet load_instruction_set(const std::string& path, InstructionRole role) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::IoError, "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return instruction_set_from_lines(text, role);
}

}  // namespace icon2
