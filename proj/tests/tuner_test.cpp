#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "icon2/errors.hpp"
#include "icon2/tuner.hpp"
#include "test_support.hpp"

using namespace icon2;
using namespace icon2::testing;

namespace {

// reference tables for the selection-rule checks
SweepTable reference_pos_table() {
    SweepTable t;
    t.polarity = SweepPolarity::Positive;
    t.rows = {{0.01, 17.435, {}, 20000}, {0.03, 17.483, {}, 20000}, {0.05, 17.511, {}, 20000},
              {0.1, 17.624, {}, 20000},  {0.3, 17.021, {}, 20000},  {0.5, 16.742, {}, 20000}};
    return t;
}

SweepTable reference_neg_table() {
    SweepTable t;
    t.polarity = SweepPolarity::Negative;
    t.rows = {{-0.5, 14.445, {}, 20000}, {-0.3, 15.210, {}, 20000}, {-0.1, 16.213, {}, 20000},
              {-0.05, 17.162, {}, 20000}, {-0.03, 17.188, {}, 20000}, {-0.01, 17.229, {}, 20000}};
    return t;
}

ProportionTable reference_prop_table() {
    ProportionTable t;
    t.gamma_pos = 0.1;
    t.rows = {{-0.01, 0.872}, {-0.03, 0.898}, {-0.05, 0.935},
              {-0.1, 0.948},  {-0.3, 0.992},  {-0.5, 0.998}};
    return t;
}

// planted setup: single pass-through layer, reward strictly tracks gamma
struct PlantedSweep {
    PlantedModel pm;
    DirectionSet directions;
    InstructionSet instructions;
};

PlantedSweep make_planted_sweep() {
    PlantedSweep s{make_planted_model(200, 0.25, 1.0), {}, {}};
    s.directions.model_hash = s.pm.model.content_hash;
    s.directions.n_feat = 0;
    s.directions.by_criterion["planted"] = {s.pm.u};
    for (int i = 0; i < 6; ++i) {
        InstructionRecord r;
        r.id = "p" + std::to_string(i);
        r.text = "ask " + std::to_string(i);
        r.scores = {{"planted", 1.0}};
        r.assigned = CriterionAssignment{"planted", 1.0};
        s.instructions.records.push_back(std::move(r));
    }
    return s;
}

}  // namespace

TEST_CASE("selection on the reference tables picks (0.1, -0.05)") {
    auto [gp, gn] = select_gammas(reference_pos_table(), reference_neg_table(),
                                  reference_prop_table());
    CHECK(gp == 0.1);
    CHECK(gn == -0.05);
}

TEST_CASE("selection matches a brute-force oracle on synthetic tables") {
    Rng rng(61);
    for (int trial = 0; trial < 200; ++trial) {
        SweepTable pos, neg;
        pos.polarity = SweepPolarity::Positive;
        neg.polarity = SweepPolarity::Negative;
        ProportionTable prop;
        const int n = 4 + static_cast<int>(rng.next_below(4));
        for (int i = 0; i < n; ++i) {
            pos.rows.push_back({0.01 * (i + 1), rng.next_gaussian(), {}, 100});
            neg.rows.push_back({-0.01 * (n - i), rng.next_gaussian(), {}, 100});
            prop.rows.push_back({-0.01 * (n - i), rng.next_double()});
        }

        // oracle: exhaustive scan with the stated tie rules
        const SweepRow* best_pos = &pos.rows[0];
        for (const auto& r : pos.rows) {
            if (r.mean_reward > best_pos->mean_reward ||
                (r.mean_reward == best_pos->mean_reward &&
                 std::abs(r.gamma) < std::abs(best_pos->gamma)))
                best_pos = &r;
        }
        prop.gamma_pos = best_pos->gamma;

        const SweepRow* best_neg = nullptr;
        for (const auto& p : prop.rows) {
            if (p.proportion < 0.9) continue;
            for (const auto& r : neg.rows) {
                if (r.gamma != p.gamma_neg) continue;
                if (best_neg == nullptr || r.mean_reward > best_neg->mean_reward ||
                    (r.mean_reward == best_neg->mean_reward &&
                     std::abs(r.gamma) < std::abs(best_neg->gamma)))
                    best_neg = &r;
            }
        }

        if (best_neg == nullptr) {
            CHECK_THROWS_AS(select_gammas(pos, neg, prop), Error);
        } else {
            auto [gp, gn] = select_gammas(pos, neg, prop);
            CHECK(gp == best_pos->gamma);
            CHECK(gn == best_neg->gamma);
        }
    }
}

TEST_CASE("infeasible proportions raise NoFeasibleNegative") {
    auto prop = reference_prop_table();
    for (auto& r : prop.rows) r.proportion = 0.5;
    try {
        select_gammas(reference_pos_table(), reference_neg_table(), prop);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NoFeasibleNegative);
    }
}

TEST_CASE("selection rejects a proportion table computed against the wrong gamma") {
    auto prop = reference_prop_table();
    prop.gamma_pos = 0.05;
    CHECK_THROWS_AS(select_gammas(reference_pos_table(), reference_neg_table(), prop), Error);
}

TEST_CASE("constant scorer gives flat means with zero std") {
    PlantedSweep s = make_planted_sweep();
    ConstantScorer scorer(1.0);
    SamplingConfig cfg;
    cfg.max_tokens = 1;
    SweepTable t = gamma_sweep(s.pm.model, s.instructions, s.directions, {0.05, 0.1, 0.2}, 1, 1,
                               scorer, cfg);
    REQUIRE(t.rows.size() == 3);
    for (const auto& r : t.rows) {
        CHECK(r.mean_reward == 1.0);
        CHECK(*r.std_reward == 0.0);
        CHECK(r.n == 6);
    }
}

TEST_CASE("planted model: projection reward increases strictly with gamma") {
    PlantedSweep s = make_planted_sweep();
    ProjectionScorer scorer(s.pm.model, s.directions, "planted");
    SamplingConfig cfg;
    cfg.max_tokens = 1;
    SweepTable t = gamma_sweep(s.pm.model, s.instructions, s.directions,
                               {-0.5, -0.1, 0.0, 0.1, 0.5}, 1, 1, scorer, cfg);
    REQUIRE(t.rows.size() == 5);
    for (size_t i = 0; i + 1 < t.rows.size(); ++i)
        CHECK(t.rows[i].mean_reward < t.rows[i + 1].mean_reward);
}

TEST_CASE("planted model: proportion is 1.0 for separated gammas, 0.0 at equality") {
    PlantedSweep s = make_planted_sweep();
    ProjectionScorer scorer(s.pm.model, s.directions, "planted");
    SamplingConfig cfg;
    cfg.max_tokens = 1;

    ProportionTable t = pair_proportion(s.pm.model, s.instructions, s.directions, 0.5,
                                        {-0.5, -0.1, 0.5}, 1, 1, scorer, cfg);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0].proportion == 1.0);   // -0.5, far apart
    CHECK(t.rows[1].proportion == 1.0);   // -0.1
    CHECK(t.rows[2].proportion == 0.0);   // identical gamma -> all ties

    // monotone non-increasing as gamma_neg approaches gamma_pos
    for (size_t i = 0; i + 1 < t.rows.size(); ++i)
        CHECK(t.rows[i].proportion >= t.rows[i + 1].proportion);
}

TEST_CASE("projection scorer averages response-token projections") {
    PlantedSweep s = make_planted_sweep();
    ProjectionScorer scorer(s.pm.model, s.directions, "planted");
    // planted embeddings give byte b a projection of s_b onto u at the final
    // (only) layer, so the score of a response is the mean of its bytes' s
    const std::string response = "AZ";  // bytes 65 and 90
    const double expected = (s.pm.s_of(65) + s.pm.s_of(90)) / 2.0;
    CHECK(std::abs(scorer.score("any instruction", response) - expected) <= 1e-6);
    CHECK(scorer.score("any instruction", "") == 0.0);
    CHECK(scorer.name() == "projection:planted");

    // unknown criterion fails at construction
    CHECK_THROWS_AS(ProjectionScorer(s.pm.model, s.directions, "missing"), Error);
}

TEST_CASE("selection is invariant under a strictly increasing reward transform") {
    auto pos = reference_pos_table();
    auto neg = reference_neg_table();
    auto prop = reference_prop_table();
    auto [gp0, gn0] = select_gammas(pos, neg, prop);
    for (auto& r : pos.rows) r.mean_reward = std::exp(0.3 * r.mean_reward - 4.0);
    for (auto& r : neg.rows) r.mean_reward = std::exp(0.3 * r.mean_reward - 4.0);
    auto [gp1, gn1] = select_gammas(pos, neg, prop);
    CHECK(gp0 == gp1);
    CHECK(gn0 == gn1);
}

TEST_CASE("subsample stats: constant scores and exhaustive subsamples have zero spread") {
    std::map<double, std::vector<double>> scores;
    scores[0.1] = std::vector<double>(200, 3.5);
    auto rows = subsample_stats(scores, 100, 50, 7);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].mean_of_means == doctest::Approx(3.5));
    CHECK(rows[0].std_of_means == 0.0);

    std::map<double, std::vector<double>> full;
    Rng rng(8);
    full[0.2] = {};
    for (int i = 0; i < 60; ++i) full[0.2].push_back(rng.next_gaussian());
    auto rows2 = subsample_stats(full, 60, 40, 9);
    CHECK(rows2[0].std_of_means <= 1e-12);
}

TEST_CASE("subsample stats track the analytic sampling spread") {
    std::map<double, std::vector<double>> scores;
    Rng rng(10);
    const size_t population = 2000, k = 100;
    const double sigma = 2.0;
    scores[0.1] = {};
    for (size_t i = 0; i < population; ++i)
        scores[0.1].push_back(5.0 + sigma * rng.next_gaussian());
    auto rows = subsample_stats(scores, k, 100, 11);
    // expected spread of a k-sample mean without replacement
    const double expected = sigma / std::sqrt(static_cast<double>(k)) *
                            std::sqrt(1.0 - static_cast<double>(k - 1) / (population - 1));
    CHECK(std::abs(rows[0].std_of_means - expected) <= 3.0 * expected);
    CHECK(rows[0].std_of_means > expected / 3.0);
}

TEST_CASE("subsample stats are reproducible and validate sizes") {
    std::map<double, std::vector<double>> scores;
    Rng rng(12);
    scores[-0.1] = {};
    for (int i = 0; i < 150; ++i) scores[-0.1].push_back(rng.next_gaussian());
    auto a = subsample_stats(scores, 100, 30, 13);
    auto b = subsample_stats(scores, 100, 30, 13);
    CHECK(a[0].mean_of_means == b[0].mean_of_means);
    CHECK(a[0].std_of_means == b[0].std_of_means);

    try {
        subsample_stats(scores, 151, 10, 1);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InsufficientSamples);
    }
}

TEST_CASE("sweep and proportion tables roundtrip byte-identically") {
    SweepTable t = reference_pos_table();
    t.rows[2].std_reward = 0.0425;
    const std::string tsv = sweep_table_to_tsv(t);
    SweepTable back = sweep_table_from_tsv(tsv);
    CHECK(sweep_table_to_tsv(back) == tsv);
    CHECK(back.rows.size() == t.rows.size());
    CHECK(back.rows[3].mean_reward == 17.624);

    ProportionTable p = reference_prop_table();
    const std::string ptsv = proportion_table_to_tsv(p);
    ProportionTable pback = proportion_table_from_tsv(ptsv);
    CHECK(proportion_table_to_tsv(pback) == ptsv);
    CHECK(pback.gamma_pos == 0.1);
}

TEST_CASE("table parsers reject malformed input") {
    CHECK_THROWS_AS(sweep_table_from_tsv("gamma\tmean\n0.1\t1.0\n"), Error);
    CHECK_THROWS_AS(sweep_table_from_tsv("gamma\tmean_reward\tstd\tn\n0.1\t1.0\tx\t5\n"), Error);
    CHECK_THROWS_AS(sweep_table_from_tsv(
                        "gamma\tmean_reward\tstd\tn\n0.1\t1.0\t\t5\n0.1\t2.0\t\t5\n"),
                    Error);
    CHECK_THROWS_AS(proportion_table_from_tsv("gamma_neg\tproportion\n-0.1\t0.5\n"), Error);
    CHECK_THROWS_AS(
        proportion_table_from_tsv("# gamma_pos=0.1\ngamma_neg\tproportion\n-0.1\t1.5\n"), Error);
}
