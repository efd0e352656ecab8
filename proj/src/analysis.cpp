#include "icon2/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_set>

#include "icon2/errors.hpp"

namespace icon2 {

namespace {

constexpr size_t kExactEnumerationLimit = 12;  // total sample size for the exact path

// average ranks (doubled, so ties stay integral) of the combined sample;
// returns doubled ranks aligned with the sorted combined values
struct RankedSamples {
    std::vector<int64_t> doubled_ranks;  // per combined sorted element
    std::vector<int> labels;             // 0 = x, 1 = y, aligned with doubled_ranks
    double tie_term = 0.0;               // sum over tie groups of t^3 - t
};

RankedSamples rank_combined(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<std::pair<double, int>> all;
    all.reserve(x.size() + y.size());
    for (double v : x) all.push_back({v, 0});
    for (double v : y) all.push_back({v, 1});
    std::sort(all.begin(), all.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    RankedSamples out;
    out.doubled_ranks.resize(all.size());
    out.labels.resize(all.size());
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        // positions i..j-1 share the average rank ((i+1) + j) / 2
        const int64_t doubled = static_cast<int64_t>(i + 1 + j);
        for (size_t k = i; k < j; ++k) {
            out.doubled_ranks[k] = doubled;
            out.labels[k] = all[k].second;
        }
        const double t = static_cast<double>(j - i);
        out.tie_term += t * t * t - t;
        i = j;
    }
    return out;
}

// doubled U statistic of x (2 * U keeps everything integral under ties)
int64_t doubled_u_statistic(const RankedSamples& r, size_t nx) {
    int64_t doubled_r1 = 0;
    for (size_t i = 0; i < r.doubled_ranks.size(); ++i)
        if (r.labels[i] == 0) doubled_r1 += r.doubled_ranks[i];
    return doubled_r1 - static_cast<int64_t>(nx * (nx + 1));
}

// Enumerates every size-nx subset of the observed doubled ranks, counting
// assignments with U <= and >= the observed value. Iterative next-combination
// walk; the test-side oracle uses a recursive version of the same census.
void enumerate_tails(const std::vector<int64_t>& doubled_ranks, size_t nx, int64_t doubled_u_obs,
                     uint64_t& count_le, uint64_t& count_ge, uint64_t& total) {
    const size_t n = doubled_ranks.size();
    const int64_t base = static_cast<int64_t>(nx * (nx + 1));
    std::vector<size_t> pick(nx);
    for (size_t i = 0; i < nx; ++i) pick[i] = i;
    count_le = count_ge = total = 0;
    for (;;) {
        int64_t sum = 0;
        for (size_t i : pick) sum += doubled_ranks[i];
        const int64_t u2 = sum - base;
        ++total;
        if (u2 <= doubled_u_obs) ++count_le;
        if (u2 >= doubled_u_obs) ++count_ge;

        // next combination
        size_t i = nx;
        while (i > 0) {
            --i;
            if (pick[i] != i + n - nx) {
                ++pick[i];
                for (size_t j = i + 1; j < nx; ++j) pick[j] = pick[j - 1] + 1;
                break;
            }
            if (i == 0) return;
        }
        if (nx == 0) return;
    }
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

void require_samples(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.empty() || y.empty()) raise(ErrorKind::EmptySample, "both samples must be non-empty");
}

}  // namespace

CosineReport layerwise_cosine(const DirectionSet& a, const DirectionSet& b,
                              const Criterion& criterion) {
    const auto& la = a.directions_for(criterion);
    const auto& lb = b.directions_for(criterion);
    if (la.size() != lb.size())
        raise(ErrorKind::DimMismatch, "direction sets have different layer counts");

    CosineReport report;
    report.criterion = criterion;
    for (size_t l = 0; l < la.size(); ++l) {
        if (la[l].size() != lb[l].size())
            raise(ErrorKind::DimMismatch, "direction length differs at layer " + std::to_string(l + 1));
        report.per_layer.push_back(cosine(la[l], lb[l]));
    }
    report.mean = 0.0;
    report.max = report.per_layer[0];
    report.min = report.per_layer[0];
    for (double c : report.per_layer) {
        report.mean += c;
        report.max = std::max(report.max, c);
        report.min = std::min(report.min, c);
    }
    report.mean /= static_cast<double>(report.per_layer.size());
    return report;
}

double mann_whitney_exact_p(const std::vector<double>& x, const std::vector<double>& y) {
    require_samples(x, y);
    const RankedSamples r = rank_combined(x, y);
    const int64_t u2 = doubled_u_statistic(r, x.size());
    uint64_t le = 0, ge = 0, total = 0;
    enumerate_tails(r.doubled_ranks, x.size(), u2, le, ge, total);
    const double tail = static_cast<double>(std::min(le, ge)) / static_cast<double>(total);
    return std::min(1.0, 2.0 * tail);
}

double mann_whitney_normal_p(const std::vector<double>& x, const std::vector<double>& y) {
    require_samples(x, y);
    const size_t nx = x.size(), ny = y.size();
    const size_t n = nx + ny;
    const RankedSamples r = rank_combined(x, y);
    const double u = static_cast<double>(doubled_u_statistic(r, nx)) / 2.0;

    const double mean = static_cast<double>(nx) * static_cast<double>(ny) / 2.0;
    const double tie_part =
        r.tie_term / (static_cast<double>(n) * (static_cast<double>(n) - 1.0));
    const double var = static_cast<double>(nx) * static_cast<double>(ny) / 12.0 *
                       (static_cast<double>(n) + 1.0 - tie_part);
    if (var <= 0.0) return 1.0;  // every observation tied
    const double z = std::max(0.0, std::abs(u - mean) - 0.5) / std::sqrt(var);
    return std::min(1.0, 2.0 * normal_sf(z));
}

UTestResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y) {
    require_samples(x, y);
    const RankedSamples r = rank_combined(x, y);
    UTestResult out;
    out.u = static_cast<double>(doubled_u_statistic(r, x.size())) / 2.0;
    out.exact = x.size() + y.size() <= kExactEnumerationLimit;
    out.p_two_sided = out.exact ? mann_whitney_exact_p(x, y) : mann_whitney_normal_p(x, y);
    return out;
}

UTestReport dimensionwise_utest(const DirectionSet& a, const DirectionSet& b,
                                const Criterion& criterion, double alpha) {
    const auto& la = a.directions_for(criterion);
    const auto& lb = b.directions_for(criterion);
    if (la.size() != lb.size())
        raise(ErrorKind::DimMismatch, "direction sets have different layer counts");
    if (la.size() < 2)
        raise(ErrorKind::EmptySample, "dimension-wise test needs at least 2 layers");
    const size_t d = la[0].size();
    if (lb[0].size() != d) raise(ErrorKind::DimMismatch, "direction dimensions differ");

    UTestReport report;
    report.criterion = criterion;
    report.alpha = alpha;
    report.min_p = 1.0;
    for (size_t dim = 0; dim < d; ++dim) {
        std::vector<double> xs(la.size()), ys(lb.size());
        for (size_t l = 0; l < la.size(); ++l) {
            xs[l] = la[l][dim];
            ys[l] = lb[l][dim];
        }
        const UTestResult r = mann_whitney_u(xs, ys);
        report.per_dimension.push_back({r.u, r.p_two_sided});
        report.min_p = std::min(report.min_p, r.p_two_sided);
        if (r.p_two_sided < alpha) report.any_rejected = true;
    }
    return report;
}

std::vector<std::string> split_words_lower(const std::string& text) {
    std::vector<std::string> words;
    std::string current;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!current.empty()) {
                words.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

namespace {

void collect_ngrams(const std::vector<std::string>& words, int n,
                    std::unordered_set<std::string>& out) {
    if (static_cast<int>(words.size()) < n) return;
    for (size_t i = 0; i + n <= words.size(); ++i) {
        std::string gram = words[i];
        for (int j = 1; j < n; ++j) {
            gram += ' ';
            gram += words[i + j];
        }
        out.insert(std::move(gram));
    }
}

bool shares_ngram(const std::vector<std::string>& words, int n,
                  const std::unordered_set<std::string>& train) {
    if (static_cast<int>(words.size()) < n) return false;
    for (size_t i = 0; i + n <= words.size(); ++i) {
        std::string gram = words[i];
        for (int j = 1; j < n; ++j) {
            gram += ' ';
            gram += words[i + j];
        }
        if (train.count(gram) != 0) return true;
    }
    return false;
}

}  // namespace

LeakageReport ngram_overlap(const std::vector<std::string>& train_texts,
                            const std::vector<std::pair<std::string, std::string>>& test_records,
                            int n) {
    if (n < 1) raise(ErrorKind::ConfigInvalid, "n-gram order must be >= 1");
    if (test_records.empty()) raise(ErrorKind::EmptyInput, "test set is empty");

    std::unordered_set<std::string> train_grams;
    for (const std::string& t : train_texts) collect_ngrams(split_words_lower(t), n, train_grams);

    LeakageReport report;
    report.n = n;
    for (const auto& [id, text] : test_records)
        if (shares_ngram(split_words_lower(text), n, train_grams)) report.leaked_ids.push_back(id);
    report.leaked_fraction =
        static_cast<double>(report.leaked_ids.size()) / static_cast<double>(test_records.size());
    return report;
}

LeakageReport ngram_overlap(const std::vector<std::string>& train_texts,
                            const std::vector<std::string>& test_texts, int n) {
    std::vector<std::pair<std::string, std::string>> records;
    records.reserve(test_texts.size());
    for (size_t i = 0; i < test_texts.size(); ++i)
        records.push_back({std::to_string(i), test_texts[i]});
    return ngram_overlap(train_texts, records, n);
}

}  // namespace icon2
