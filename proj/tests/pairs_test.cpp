#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <sstream>

#include "icon2/errors.hpp"
#include "icon2/pairs.hpp"
#include "test_support.hpp"

using namespace icon2;
using namespace icon2::testing;

namespace {

struct Fixture {
    ModelBundle model;
    DirectionSet directions;
    InstructionSet filt;
};

Fixture make_fixture(uint64_t seed, int n_layers, size_t n_records) {
    Fixture f{make_toy_model(seed, n_layers, 16, 4, 32, 128), {}, {}};
    Rng rng(seed + 1);
    std::vector<std::string> feat;
    for (int i = 0; i < 16; ++i) feat.push_back(random_words(rng, 2, 6));
    f.directions = extract_directions(f.model, feat,
                                      {{"helpfulness", "You are a helpful assistant.",
                                        "You are a helpless assistant."},
                                       {"honesty", "You are an honest assistant.",
                                        "You are a dishonest assistant."}});
    f.filt.role = InstructionRole::Filt;
    for (size_t i = 0; i < n_records; ++i) {
        InstructionRecord r;
        r.id = "f" + std::to_string(i);
        r.text = random_words(rng, 2, 6);
        const Criterion c = (i % 2 == 0) ? "helpfulness" : "honesty";
        r.scores = {{c, 1.0}};
        r.assigned = CriterionAssignment{c, 1.0};
        f.filt.records.push_back(std::move(r));
    }
    return f;
}

}  // namespace

TEST_CASE("steer_hidden implements z + gamma*u") {
    Vec z = {1.0f, 1.0f};
    Vec u = {1.0f, 0.0f};
    Vec out = steer_hidden(z, u, 0.1);
    CHECK(out[0] == doctest::Approx(1.1f));
    CHECK(out[1] == doctest::Approx(1.0f));

    CHECK(steer_hidden(z, u, 0.0) == z);

    Rng rng(3);
    Vec z2(8), u2(8);
    for (int i = 0; i < 8; ++i) {
        z2[i] = static_cast<float>(rng.next_gaussian());
        u2[i] = static_cast<float>(rng.next_gaussian());
    }
    Vec back = steer_hidden(steer_hidden(z2, u2, 0.37), u2, -0.37);
    for (int i = 0; i < 8; ++i) CHECK(std::abs(back[i] - z2[i]) <= 1e-7);

    CHECK_THROWS_AS(steer_hidden({1.0f}, {1.0f, 2.0f}, 0.5), Error);
}

TEST_CASE("default profile rescales the full-scale interval for shallow models") {
    SteeringProfile deep = default_steering_profile(32);
    CHECK(deep.layer_lo == 10);
    CHECK(deep.layer_hi == 20);
    SteeringProfile shallow = default_steering_profile(6);
    CHECK(shallow.layer_lo == 2);   // round(0.3 * 6)
    CHECK(shallow.layer_hi == 4);   // round(0.65 * 6)
    CHECK(default_steering_profile(1).layer_lo == 1);
}

TEST_CASE("generate_pair runs exactly two passes and routes the criterion") {
    Fixture f = make_fixture(51, 4, 3);
    SteeringProfile profile{2, 3, 0.2, -0.1};
    SamplingConfig s;
    s.max_tokens = 6;
    PassLedger ledger;
    PreferencePair pair =
        generate_pair(f.model, f.filt.records[0], f.directions, profile, s, &ledger);
    CHECK(ledger.passes == 2);
    CHECK(ledger.resample_events == 0);
    CHECK(pair.pass_count == 2);
    CHECK(pair.criterion == f.filt.records[0].assigned->criterion);
    CHECK(pair.instruction_id == f.filt.records[0].id);
}

TEST_CASE("equal gammas give byte-identical chosen and rejected under greedy") {
    Fixture f = make_fixture(52, 3, 2);
    SteeringProfile profile{1, 2, 0.15, 0.15};
    SamplingConfig s;
    s.max_tokens = 8;
    PreferencePair pair = generate_pair(f.model, f.filt.records[0], f.directions, profile, s);
    CHECK(pair.chosen == pair.rejected);
}

TEST_CASE("greedy pairs are bit-identical across reruns") {
    Fixture f = make_fixture(53, 3, 2);
    SteeringProfile profile{1, 3, 0.3, -0.2};
    SamplingConfig s;
    s.max_tokens = 10;
    auto a = generate_pair(f.model, f.filt.records[1], f.directions, profile, s);
    auto b = generate_pair(f.model, f.filt.records[1], f.directions, profile, s);
    CHECK(a.chosen == b.chosen);
    CHECK(a.rejected == b.rejected);
}

TEST_CASE("first-step hidden states differ by (g+ - g-)*u at the lowest controlled layer") {
    Fixture f = make_fixture(54, 4, 1);
    const InstructionRecord& rec = f.filt.records[0];
    SteeringProfile profile{2, 3, 0.25, -0.15};
    SamplingConfig s;
    s.max_tokens = 2;

    auto trace_pass = [&](double gamma) {
        SteeringSpec spec = steering_spec_for(f.directions, rec.assigned->criterion, profile, gamma);
        GenerationTrace trace;
        trace.capture_hidden = true;
        trace.max_steps = 1;
        auto prompt = ByteTokenizer::tokenize(rec.text, true);
        prompt.push_back(ByteTokenizer::kSep);
        generate(f.model, prompt, s, &spec, &trace);
        return trace.steps.at(0).hidden;
    };

    auto hp = trace_pass(profile.gamma_pos);
    auto hn = trace_pass(profile.gamma_neg);
    const Vec& u = f.directions.directions_for(rec.assigned->criterion)[profile.layer_lo - 1];
    for (int i = 0; i < 16; ++i) {
        const double want = (profile.gamma_pos - profile.gamma_neg) * static_cast<double>(u[i]);
        const double got = static_cast<double>(hp[profile.layer_lo - 1][i]) -
                           static_cast<double>(hn[profile.layer_lo - 1][i]);
        CHECK(std::abs(got - want) <= 1e-6);
    }
    // uncontrolled layer below the interval matches bit-exactly
    CHECK(std::memcmp(hp[0].data(), hn[0].data(), hp[0].size() * sizeof(float)) == 0);
}

TEST_CASE("missing assignment and missing direction are rejected") {
    Fixture f = make_fixture(55, 3, 1);
    SteeringProfile profile{1, 2, 0.2, -0.1};
    SamplingConfig s;
    s.max_tokens = 4;

    InstructionRecord unassigned;
    unassigned.id = "u";
    unassigned.text = "no score";
    try {
        generate_pair(f.model, unassigned, f.directions, profile, s);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MissingAssignment);
    }

    InstructionRecord alien = f.filt.records[0];
    alien.assigned = CriterionAssignment{"unknown-criterion", 1.0};
    CHECK_THROWS_AS(generate_pair(f.model, alien, f.directions, profile, s), Error);
}

TEST_CASE("build_dataset streams one pair per record and counts passes") {
    Fixture f = make_fixture(56, 4, 50);
    SteeringProfile profile{2, 3, 0.2, -0.1};
    SamplingConfig s;
    s.max_tokens = 4;
    std::ostringstream sink;
    DatasetSummary summary = build_dataset(f.model, f.filt, f.directions, profile, s, sink);
    CHECK(summary.pair_count == 50);
    CHECK(summary.total_passes == 100);
    CHECK(summary.resample_events == 0);
    CHECK(summary.per_criterion.at("helpfulness") == 25);
    CHECK(summary.per_criterion.at("honesty") == 25);

    // every line parses back
    std::istringstream in(sink.str());
    std::string line;
    size_t count = 0;
    while (std::getline(in, line)) {
        PreferencePair p = pair_from_line(line);
        CHECK(p.pass_count == 2);
        ++count;
    }
    CHECK(count == 50);

    std::ostringstream sink2;
    DatasetSummary again = build_dataset(f.model, f.filt, f.directions, profile, s, sink2);
    CHECK(sink.str() == sink2.str());
    CHECK(again.total_passes == 100);

    InstructionSet empty;
    std::ostringstream sink3;
    CHECK_THROWS_AS(build_dataset(f.model, empty, f.directions, profile, s, sink3), Error);
}

TEST_CASE("pair lines roundtrip byte-identically") {
    PreferencePair p;
    p.instruction_id = "x1";
    p.instruction_text = std::string("instr \xff bytes", 13);
    p.criterion = "honesty";
    p.chosen = "good answer";
    p.rejected = std::string("bad \x01 answer", 12);
    p.profile = SteeringProfile{10, 20, 0.1, -0.05};
    p.pass_count = 2;
    const std::string line = pair_to_line(p);
    PreferencePair back = pair_from_line(line);
    CHECK(back.instruction_text == p.instruction_text);
    CHECK(back.chosen == p.chosen);
    CHECK(back.rejected == p.rejected);
    CHECK(back.profile.gamma_pos == p.profile.gamma_pos);
    CHECK(back.profile.gamma_neg == p.profile.gamma_neg);
    CHECK(pair_to_line(back) == line);
}

TEST_CASE("profile validation rejects inverted intervals and gammas") {
    CHECK_THROWS_AS(SteeringProfile({3, 2, 0.1, -0.1}).validate(4), Error);
    CHECK_THROWS_AS(SteeringProfile({1, 5, 0.1, -0.1}).validate(4), Error);
    CHECK_THROWS_AS(SteeringProfile({1, 2, -0.1, 0.1}).validate(4), Error);
    CHECK_NOTHROW(SteeringProfile({1, 2, 0.1, 0.1}).validate(4, true));
    CHECK_THROWS_AS(SteeringProfile({1, 2, 0.1, 0.1}).validate(4), Error);
}
