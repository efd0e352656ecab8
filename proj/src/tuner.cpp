#include "icon2/tuner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "icon2/errors.hpp"
#include "icon2/parallel.hpp"
#include "icon2/rng.hpp"

namespace icon2 {

namespace {

// shortest roundtrip-exact decimal form, so tables survive
// write -> read -> write byte-identically
std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

double parse_double(const std::string& s, const char* what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        raise(ErrorKind::MalformedRecord, std::string("bad number for ") + what + ": '" + s + "'");
    return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    for (;;) {
        const size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

double checked_score(const Scorer& scorer, const std::string& instruction,
                     const std::string& response) {
    const double v = scorer.score(instruction, response);
    if (!std::isfinite(v))
        raise(ErrorKind::ScorerFailure, "scorer '" + scorer.name() + "' returned a non-finite value");
    return v;
}

// one steered response per record; scores returned in record order
std::vector<double> steered_scores(const ModelBundle& model, const InstructionSet& instructions,
                                   const DirectionSet& directions, double gamma, int layer_lo,
                                   int layer_hi, const Scorer& scorer,
                                   const SamplingConfig& sampling) {
    std::vector<double> scores(instructions.records.size());
    parallel_for(instructions.records.size(), [&](size_t i) {
        const InstructionRecord& rec = instructions.records[i];
        if (!rec.assigned)
            raise(ErrorKind::MissingAssignment, "record '" + rec.id + "' has no criterion");
        const SteeringSpec spec =
            steering_spec_for(directions, rec.assigned->criterion, layer_lo, layer_hi, gamma);
        auto prompt = ByteTokenizer::tokenize(rec.text, true);
        prompt.push_back(ByteTokenizer::kSep);
        const auto tokens = generate(model, prompt, sampling, &spec);
        scores[i] = checked_score(scorer, rec.text, ByteTokenizer::detokenize(tokens));
    });
    return scores;
}

std::pair<double, double> mean_and_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

void check_sorted_unique(const std::vector<double>& gammas) {
    if (gammas.empty()) raise(ErrorKind::ConfigInvalid, "gamma grid is empty");
    std::set<double> uniq(gammas.begin(), gammas.end());
    if (uniq.size() != gammas.size())
        raise(ErrorKind::ConfigInvalid, "gamma grid has duplicates");
}

}  // namespace

ProjectionScorer::ProjectionScorer(const ModelBundle& model, const DirectionSet& directions,
                                   Criterion criterion)
    : model_(model), directions_(directions), criterion_(std::move(criterion)) {
    directions_.directions_for(criterion_);  // fail fast if absent
}

double ProjectionScorer::score(const std::string& instruction, const std::string& response) const {
    if (response.empty()) return 0.0;
    auto toks = ByteTokenizer::tokenize(instruction, true);
    toks.push_back(ByteTokenizer::kSep);
    const size_t response_start = toks.size();
    for (TokenId t : ByteTokenizer::tokenize(response)) toks.push_back(t);

    const int last = model_.config.n_layers;
    const auto states = forward_layer_states(model_, toks, last);
    const Vec& u = directions_.directions_for(criterion_)[last - 1];

    double acc = 0.0;
    for (size_t p = response_start; p < states.size(); ++p) acc += dot_f64(states[p], u);
    return acc / static_cast<double>(states.size() - response_start);
}

SweepTable gamma_sweep(const ModelBundle& model, const InstructionSet& instructions,
                       const DirectionSet& directions, const std::vector<double>& gammas,
                       int layer_lo, int layer_hi, const Scorer& scorer,
                       const SamplingConfig& sampling) {
    if (instructions.records.empty()) raise(ErrorKind::EmptyInput, "no instructions to sweep");
    check_sorted_unique(gammas);

    std::vector<double> sorted = gammas;
    std::sort(sorted.begin(), sorted.end());

    SweepTable table;
    table.polarity = sorted.back() > 0.0 ? SweepPolarity::Positive : SweepPolarity::Negative;
    for (double g : sorted) {
        const auto scores =
            steered_scores(model, instructions, directions, g, layer_lo, layer_hi, scorer, sampling);
        const auto [mean, sd] = mean_and_std(scores);
        table.rows.push_back({g, mean, sd, scores.size()});
    }
    return table;
}

ProportionTable pair_proportion(const ModelBundle& model, const InstructionSet& instructions,
                                const DirectionSet& directions, double gamma_pos,
                                const std::vector<double>& gamma_negs, int layer_lo, int layer_hi,
                                const Scorer& scorer, const SamplingConfig& sampling) {
    if (instructions.records.empty()) raise(ErrorKind::EmptyInput, "no instructions to compare");
    check_sorted_unique(gamma_negs);

    const auto chosen_scores = steered_scores(model, instructions, directions, gamma_pos, layer_lo,
                                              layer_hi, scorer, sampling);

    std::vector<double> sorted = gamma_negs;
    std::sort(sorted.begin(), sorted.end());

    ProportionTable table;
    table.gamma_pos = gamma_pos;
    for (double g : sorted) {
        const auto rejected_scores = steered_scores(model, instructions, directions, g, layer_lo,
                                                    layer_hi, scorer, sampling);
        size_t wins = 0;
        for (size_t i = 0; i < chosen_scores.size(); ++i)
            if (chosen_scores[i] > rejected_scores[i]) ++wins;  // strict; ties count against
        table.rows.push_back(
            {g, static_cast<double>(wins) / static_cast<double>(chosen_scores.size())});
    }
    return table;
}

std::pair<double, double> select_gammas(const SweepTable& pos_table, const SweepTable& neg_table,
                                        const ProportionTable& prop_table, double min_prop) {
    if (pos_table.rows.empty() || neg_table.rows.empty() || prop_table.rows.empty())
        raise(ErrorKind::EmptyInput, "selection needs non-empty tables");

    auto better = [](double gamma, double reward, double best_gamma, double best_reward) {
        if (reward != best_reward) return reward > best_reward;
        if (std::abs(gamma) != std::abs(best_gamma)) return std::abs(gamma) < std::abs(best_gamma);
        return gamma < best_gamma;
    };

    double gamma_pos = pos_table.rows[0].gamma;
    double best_reward = pos_table.rows[0].mean_reward;
    for (const SweepRow& r : pos_table.rows)
        if (better(r.gamma, r.mean_reward, gamma_pos, best_reward)) {
            gamma_pos = r.gamma;
            best_reward = r.mean_reward;
        }

    if (std::abs(prop_table.gamma_pos - gamma_pos) > 1e-12)
        raise(ErrorKind::ConfigInvalid,
              "proportion table was computed against gamma_pos " +
                  format_double(prop_table.gamma_pos) + ", but the sweep argmax is " +
                  format_double(gamma_pos));

    bool found = false;
    double gamma_neg = 0.0;
    double best_neg_reward = 0.0;
    for (const ProportionRow& p : prop_table.rows) {
        if (p.proportion < min_prop) continue;
        const SweepRow* row = nullptr;
        for (const SweepRow& r : neg_table.rows)
            if (r.gamma == p.gamma_neg) row = &r;
        if (row == nullptr)
            raise(ErrorKind::ConfigInvalid,
                  "negative sweep has no row for gamma " + format_double(p.gamma_neg));
        if (!found || better(row->gamma, row->mean_reward, gamma_neg, best_neg_reward)) {
            found = true;
            gamma_neg = row->gamma;
            best_neg_reward = row->mean_reward;
        }
    }
    if (!found)
        raise(ErrorKind::NoFeasibleNegative,
              "no negative gamma reaches proportion " + format_double(min_prop));
    return {gamma_pos, gamma_neg};
}

std::vector<SubsampleRow> subsample_stats(const std::map<double, std::vector<double>>& scores,
                                          size_t k, size_t reps, uint64_t seed) {
    if (k < 1 || reps < 1) raise(ErrorKind::ConfigInvalid, "k and reps must be >= 1");
    std::vector<SubsampleRow> out;
    size_t gamma_index = 0;
    for (const auto& [gamma, xs] : scores) {
        if (xs.size() < k)
            raise(ErrorKind::InsufficientSamples,
                  "gamma " + format_double(gamma) + " has " + std::to_string(xs.size()) +
                      " scores, need " + std::to_string(k));
        Rng rng(derive_seed(seed, gamma_index++));
        std::vector<double> means(reps);
        for (size_t r = 0; r < reps; ++r) {
            const auto idx = sample_without_replacement(xs.size(), k, rng);
            double m = 0.0;
            for (size_t i : idx) m += xs[i];
            means[r] = m / static_cast<double>(k);
        }
        double mean = 0.0;
        for (double m : means) mean += m;
        mean /= static_cast<double>(reps);
        double ss = 0.0;
        for (double m : means) ss += (m - mean) * (m - mean);
        const double sd = std::sqrt(ss / static_cast<double>(reps));
        out.push_back({gamma, mean, sd});
    }
    return out;
}

std::string sweep_table_to_tsv(const SweepTable& table) {
    std::string out = "# polarity=";
    out += table.polarity == SweepPolarity::Positive ? "positive" : "negative";
    out += "\ngamma\tmean_reward\tstd\tn\n";
    for (const SweepRow& r : table.rows) {
        out += format_double(r.gamma);
        out += '\t';
        out += format_double(r.mean_reward);
        out += '\t';
        if (r.std_reward) out += format_double(*r.std_reward);
        out += '\t';
        out += std::to_string(r.n);
        out += '\n';
    }
    return out;
}

SweepTable sweep_table_from_tsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    SweepTable table;
    bool header_seen = false;
    std::set<double> gammas;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.find("polarity=negative") != std::string::npos)
                table.polarity = SweepPolarity::Negative;
            continue;
        }
        if (!header_seen) {
            if (line != "gamma\tmean_reward\tstd\tn")
                raise(ErrorKind::MalformedRecord, "unexpected sweep table header: '" + line + "'");
            header_seen = true;
            continue;
        }
        const auto f = split_tabs(line);
        if (f.size() != 4) raise(ErrorKind::MalformedRecord, "sweep row needs 4 fields");
        SweepRow r;
        r.gamma = parse_double(f[0], "gamma");
        r.mean_reward = parse_double(f[1], "mean_reward");
        if (!f[2].empty()) r.std_reward = parse_double(f[2], "std");
        r.n = static_cast<uint64_t>(parse_double(f[3], "n"));
        if (r.n < 1) raise(ErrorKind::MalformedRecord, "sweep row has n < 1");
        if (!gammas.insert(r.gamma).second)
            raise(ErrorKind::MalformedRecord, "duplicate gamma in sweep table");
        if (!table.rows.empty() && table.rows.back().gamma >= r.gamma)
            raise(ErrorKind::MalformedRecord, "sweep table gammas must be ascending");
        table.rows.push_back(r);
    }
    if (!header_seen) raise(ErrorKind::MalformedRecord, "sweep table has no header row");
    return table;
}

std::string proportion_table_to_tsv(const ProportionTable& table) {
    std::string out = "# gamma_pos=";
    out += format_double(table.gamma_pos);
    out += "\ngamma_neg\tproportion\n";
    for (const ProportionRow& r : table.rows) {
        out += format_double(r.gamma_neg);
        out += '\t';
        out += format_double(r.proportion);
        out += '\n';
    }
    return out;
}

ProportionTable proportion_table_from_tsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    ProportionTable table;
    bool header_seen = false;
    bool gamma_pos_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# gamma_pos=", 0) == 0) {
            table.gamma_pos = parse_double(line.substr(12), "gamma_pos");
            gamma_pos_seen = true;
            continue;
        }
        if (line[0] == '#') continue;
        if (!header_seen) {
            if (line != "gamma_neg\tproportion")
                raise(ErrorKind::MalformedRecord,
                      "unexpected proportion table header: '" + line + "'");
            header_seen = true;
            continue;
        }
        const auto f = split_tabs(line);
        if (f.size() != 2) raise(ErrorKind::MalformedRecord, "proportion row needs 2 fields");
        ProportionRow r;
        r.gamma_neg = parse_double(f[0], "gamma_neg");
        r.proportion = parse_double(f[1], "proportion");
        if (r.proportion < 0.0 || r.proportion > 1.0)
            raise(ErrorKind::MalformedRecord, "proportion outside [0, 1]");
        table.rows.push_back(r);
    }
    if (!header_seen) raise(ErrorKind::MalformedRecord, "proportion table has no header row");
    if (!gamma_pos_seen) raise(ErrorKind::MalformedRecord, "proportion table has no gamma_pos");
    return table;
}

std::string subsample_rows_to_tsv(const std::vector<SubsampleRow>& rows) {
    std::string out = "gamma\tmean_of_means\tstd_of_means\n";
    for (const SubsampleRow& r : rows) {
        out += format_double(r.gamma);
        out += '\t';
        out += format_double(r.mean_of_means);
        out += '\t';
        out += format_double(r.std_of_means);
        out += '\n';
    }
    return out;
}

void save_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::SinkWriteError, "cannot open " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) raise(ErrorKind::SinkWriteError, "write failed for " + path);
}

std::string load_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::IoError, "cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace icon2
