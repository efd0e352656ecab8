#pragma once

#include <string>
#include <vector>

#include "icon2/directions.hpp"

namespace icon2 {

struct CosineReport {
    Criterion criterion;
    std::vector<double> per_layer;
    double mean = 0.0;
    double max = 0.0;
    double min = 0.0;
};

// Per-layer cosine between two direction sets for one criterion.
CosineReport layerwise_cosine(const DirectionSet& a, const DirectionSet& b,
                              const Criterion& criterion);

struct UTestResult {
    double u = 0.0;
    double p_two_sided = 1.0;
    bool exact = false;
};

// Two-sample Mann-Whitney U. U is the rank-sum statistic of x (average ranks
// for ties). The two-sided p-value is exact by full enumeration of the
// C(nx+ny, nx) rank assignments when nx+ny <= 12 (doubled smaller tail,
// clipped to 1), and a normal approximation with tie and continuity
// corrections otherwise.
UTestResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y);

// Both methods exposed for validation against each other.
double mann_whitney_exact_p(const std::vector<double>& x, const std::vector<double>& y);
double mann_whitney_normal_p(const std::vector<double>& x, const std::vector<double>& y);

struct DimensionTest {
    double u = 0.0;
    double p_value = 1.0;
};

struct UTestReport {
    Criterion criterion;
    double alpha = 0.05;
    std::vector<DimensionTest> per_dimension;
    double min_p = 1.0;
    bool any_rejected = false;
};

// For each hidden dimension, tests whether the per-layer values of that
// dimension differ in distribution between the two direction sets.
UTestReport dimensionwise_utest(const DirectionSet& a, const DirectionSet& b,
                                const Criterion& criterion, double alpha = 0.05);

struct LeakageReport {
    int n = 13;
    double leaked_fraction = 0.0;
    std::vector<std::string> leaked_ids;
};

// Word-level n-gram overlap: a test record leaks when it shares at least one
// n-gram (lowercased whitespace words) with the union of train n-grams.
LeakageReport ngram_overlap(const std::vector<std::string>& train_texts,
                            const std::vector<std::string>& test_texts, int n = 13);
LeakageReport ngram_overlap(const std::vector<std::string>& train_texts,
                            const std::vector<std::pair<std::string, std::string>>& test_records,
                            int n = 13);

std::vector<std::string> split_words_lower(const std::string& text);

}  // namespace icon2
