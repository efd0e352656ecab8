#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icon2/directions.hpp"
#include "icon2/instructions.hpp"
#include "icon2/model.hpp"
#include "icon2/pairs.hpp"

namespace icon2 {

// Pluggable response scorer. Implementations must be deterministic for a
// given (instruction, response) and return finite values.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual double score(const std::string& instruction, const std::string& response) const = 0;
    virtual std::string name() const = 0;
};

// Mean final-layer representation of the response tokens projected onto the
// criterion's final-layer direction.
class ProjectionScorer : public Scorer {
public:
    ProjectionScorer(const ModelBundle& model, const DirectionSet& directions,
                     Criterion criterion);
    double score(const std::string& instruction, const std::string& response) const override;
    std::string name() const override { return "projection:" + criterion_; }

private:
    const ModelBundle& model_;
    const DirectionSet& directions_;
    Criterion criterion_;
};

// Test fixture: response byte length.
class LengthScorer : public Scorer {
public:
    double score(const std::string&, const std::string& response) const override {
        return static_cast<double>(response.size());
    }
    std::string name() const override { return "length"; }
};

// Test fixture: constant value.
class ConstantScorer : public Scorer {
public:
    explicit ConstantScorer(double value = 1.0) : value_(value) {}
    double score(const std::string&, const std::string&) const override { return value_; }
    std::string name() const override { return "constant"; }

private:
    double value_;
};

enum class SweepPolarity { Positive, Negative };

struct SweepRow {
    double gamma = 0.0;
    double mean_reward = 0.0;
    std::optional<double> std_reward;
    uint64_t n = 0;
};

struct SweepTable {
    SweepPolarity polarity = SweepPolarity::Positive;
    std::vector<SweepRow> rows;  // unique gammas, ascending
};

struct ProportionRow {
    double gamma_neg = 0.0;
    double proportion = 0.0;  // in [0, 1]
};

struct ProportionTable {
    double gamma_pos = 0.0;  // the fixed positive gamma the rows compare against
    std::vector<ProportionRow> rows;
};

// One steered response per (gamma, instruction); rows report mean and sample
// std of the scores. Records must carry assigned criteria.
SweepTable gamma_sweep(const ModelBundle& model, const InstructionSet& instructions,
                       const DirectionSet& directions, const std::vector<double>& gammas,
                       int layer_lo, int layer_hi, const Scorer& scorer,
                       const SamplingConfig& sampling);

// For each gamma_neg, the fraction of instructions whose gamma_pos response
// scores strictly higher than the gamma_neg response. Ties count against.
ProportionTable pair_proportion(const ModelBundle& model, const InstructionSet& instructions,
                                const DirectionSet& directions, double gamma_pos,
                                const std::vector<double>& gamma_negs, int layer_lo, int layer_hi,
                                const Scorer& scorer, const SamplingConfig& sampling);

// gamma_pos = argmax mean reward; gamma_neg = highest mean reward among
// negatives whose proportion >= min_prop, ties broken by smaller |gamma|.
std::pair<double, double> select_gammas(const SweepTable& pos_table, const SweepTable& neg_table,
                                        const ProportionTable& prop_table, double min_prop = 0.9);

struct SubsampleRow {
    double gamma = 0.0;
    double mean_of_means = 0.0;
    double std_of_means = 0.0;
};

// reps seeded subsets of size k without replacement per gamma; reports the
// spread of the k-sample means.
std::vector<SubsampleRow> subsample_stats(const std::map<double, std::vector<double>>& scores,
                                          size_t k, size_t reps, uint64_t seed);

// --- table persistence (TSV with a header row) -------------------------------

std::string sweep_table_to_tsv(const SweepTable& table);
SweepTable sweep_table_from_tsv(const std::string& text);
std::string proportion_table_to_tsv(const ProportionTable& table);
ProportionTable proportion_table_from_tsv(const std::string& text);
std::string subsample_rows_to_tsv(const std::vector<SubsampleRow>& rows);

void save_text(const std::string& path, const std::string& text);
std::string load_text(const std::string& path);

}  // namespace icon2
