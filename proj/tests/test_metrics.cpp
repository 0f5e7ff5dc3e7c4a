#include <doctest.h>

#include <cmath>

#include "support/metrics_oracle.hpp"
#include "wavesep/metrics.hpp"

using namespace wavesep;
using namespace wavesep::testing;

namespace {

AudioTrack track(std::vector<Real> s) {
    AudioTrack t;
    t.samples = std::move(s);
    return t;
}

std::vector<Real> sine(double cycles, std::size_t n, double amp = 0.5) {
    std::vector<Real> v(n);
    for (std::size_t t = 0; t < n; ++t)
        v[t] = static_cast<Real>(amp * std::sin(2 * std::numbers::pi * cycles * double(t) / double(n)));
    return v;
}

}  // namespace

TEST_CASE("decomposition matches the normal-equations oracle") {
    Rng rng(31);
    for (int i = 0; i < 50; ++i) CHECK(oracle_disagreement(random_metric_case(rng)) <= 1e-9);
}

TEST_CASE("analytic 20 dB case") {
    const auto c = twenty_db_case();
    const auto s = sdr_sir_sar(decompose(c.estimate, spans(c.refs), 0));
    CHECK(std::abs(s.sir_db - 20.0) <= 1e-9);
    CHECK(std::abs(s.sdr_db - 20.0) <= 1e-9);
    CHECK(s.sar_db > 100 - 1e-9);
}

TEST_CASE("decomposition components sum to the estimate and are orthogonal") {
    Rng rng(32);
    for (int i = 0; i < 20; ++i) {
        const auto c = random_metric_case(rng);
        const auto d = decompose(c.estimate, spans(c.refs), c.target);
        double ta = 0, ia = 0;
        for (std::size_t t = 0; t < c.estimate.size(); ++t) {
            CHECK(d.target[t] + d.interference[t] + d.artifacts[t] == doctest::Approx(c.estimate[t]).epsilon(1e-12));
            ta += d.target[t] * d.artifacts[t];
            ia += d.interference[t] * d.artifacts[t];
        }
        CHECK(std::abs(ta) <= 1e-9);
        CHECK(std::abs(ia) <= 1e-9);
    }
}

TEST_CASE("scores are invariant to estimate scale and reference order") {
    Rng rng(33);
    for (int i = 0; i < 20; ++i) {
        auto c = random_metric_case(rng);
        const auto base = sdr_sir_sar(decompose(c.estimate, spans(c.refs), c.target));
        auto scaled = c.estimate;
        for (auto &v : scaled) v *= Real(3.7);
        const auto s = sdr_sir_sar(decompose(scaled, spans(c.refs), c.target));
        CHECK(s.sdr_db == doctest::Approx(base.sdr_db).epsilon(1e-9));
        CHECK(s.sir_db == doctest::Approx(base.sir_db).epsilon(1e-9));
        CHECK(s.sar_db == doctest::Approx(base.sar_db).epsilon(1e-9));

        auto refs = c.refs;
        std::reverse(refs.begin(), refs.end());
        const auto p = sdr_sir_sar(decompose(c.estimate, spans(refs), refs.size() - 1 - c.target));
        CHECK(p.sdr_db == doctest::Approx(base.sdr_db).epsilon(1e-9));
        CHECK(p.sir_db == doctest::Approx(base.sir_db).epsilon(1e-9));
    }
}

TEST_CASE("silent and dependent references are handled") {
    const auto a = sine(3, 200), b = sine(7, 200);
    std::vector<Real> zero(200, 0), doubled(200);
    for (std::size_t t = 0; t < 200; ++t) doubled[t] = 2 * b[t];
    std::vector<std::vector<Real>> refs{a, zero, b, doubled};
    const auto d = decompose(a, spans(refs), 0);
    CHECK(d.dropped_references == 1);
    const auto s = sdr_sir_sar(d);
    CHECK(s.sdr_db == 100);
    CHECK(s.sir_db == 100);
    CHECK_THROWS_AS(decompose(a, spans(refs), 1), MetricsError);
    CHECK_THROWS_AS(decompose(a, spans(refs), 9), MetricsError);
    std::vector<Real> shorter(10, 1);
    CHECK_THROWS_AS(decompose(shorter, spans(refs), 0), MetricsError);
}

TEST_CASE("degenerate ratios clamp to the cap") {
    const auto a = sine(3, 100);
    std::vector<std::vector<Real>> refs{a};
    std::vector<Real> zero(100, 0);
    const auto s = sdr_sir_sar(decompose(zero, spans(refs), 0));
    CHECK(s.sdr_db == -100);
    CHECK(s.sir_db == -100);
    const auto capped = sdr_sir_sar(decompose(a, spans(refs), 0), 30);
    CHECK(capped.sdr_db == 30);
}

TEST_CASE("evaluate_piece marks silent references absent") {
    const std::size_t n = 1600;
    std::vector<AudioTrack> refs{track(sine(40, n)), track(std::vector<Real>(n, 0)), track(sine(95, n))};
    std::vector<AudioTrack> est{refs[0], track(std::vector<Real>(n, Real(0.001))), refs[2]};
    EvaluationOptions o;
    o.segment_length = 800;
    const auto recs = evaluate_piece("p", {"a", "b", "c"}, est, refs, 2, o);
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].sdr_db == doctest::Approx(100));
    CHECK(recs[1].absent());
    CHECK(recs[1].est_rms_dbfs == doctest::Approx(-60));
    CHECK(!recs[2].absent());
    CHECK(recs[2].n_active == 2);

    std::vector<AudioTrack> zero_est(3, track(std::vector<Real>(n, 0)));
    CHECK(evaluate_piece("p", {"a", "b", "c"}, zero_est, refs, 2, o)[1].est_rms_dbfs == -200);
    CHECK_THROWS_AS(evaluate_piece("p", {"a", "b"}, est, refs, 2, o), MetricsError);
}

TEST_CASE("segments whose reference is silent are skipped") {
    const std::size_t n = 1600;
    auto r = sine(40, n);
    std::fill(r.begin() + 800, r.end(), Real(0));
    std::vector<AudioTrack> refs{track(r), track(sine(77, n))};
    auto e = r;
    for (std::size_t t = 800; t < n; ++t) e[t] = Real(0.3);  // error only where the reference is silent
    std::vector<AudioTrack> est{track(e), refs[1]};
    EvaluationOptions o;
    o.segment_length = 800;
    CHECK(evaluate_piece("p", {"a", "b"}, est, refs, 2, o)[0].sdr_db == doctest::Approx(100));
    o.segment_length = 0;
    CHECK(*evaluate_piece("p", {"a", "b"}, est, refs, 2, o)[0].sdr_db < 10);
}

TEST_CASE("aggregation and table output") {
    std::vector<MetricsRecord> recs(4);
    recs[0] = {"p1", "bass", 0, 2, 4.0, 10.0, 5.0, -20};
    recs[1] = {"p1", "flute", 1, 2, 6.0, 12.0, 7.0, -22};
    recs[2] = {"p1", "oboe", 2, 2, std::nullopt, std::nullopt, std::nullopt, -70};
    recs[3] = {"p2", "bass", 0, 3, -1.0, 3.0, 1.0, -30};

    const auto overall = aggregate(recs, GroupBy::kOverall, "m");
    REQUIRE(overall.size() == 1);
    CHECK(overall[0].count == 3);
    CHECK(overall[0].absent_count == 1);
    CHECK(*overall[0].sdr_db == doctest::Approx(3.0));
    CHECK(*overall[0].est_rms_dbfs == doctest::Approx(-35.5));

    const auto by_inst = aggregate(recs, GroupBy::kInstrument, "m");
    REQUIRE(by_inst.size() == 3);
    CHECK(by_inst[0].key == "bass");
    CHECK(*by_inst[0].sdr_db == doctest::Approx(1.5));
    CHECK(by_inst[2].key == "oboe");
    CHECK(!by_inst[2].sdr_db);

    const auto by_n = aggregate(recs, GroupBy::kNActive, "m", {"2", "3", "10", "4"});
    REQUIRE(by_n.size() == 4);
    CHECK(by_n[0].key == "2");
    CHECK(by_n[2].key == "4");
    CHECK(by_n[2].count == 0);
    CHECK(by_n[3].key == "10");

    const auto csv = aggregate_csv(by_n, GroupBy::kNActive);
    CHECK(csv.rfind("method,n_sources,count,absent,sdr,sir,sar,est_rms_dbfs\n", 0) == 0);
    CHECK(csv.find("m,4,0,0,,,,\n") != std::string::npos);
    const auto rcsv = records_csv(recs);
    CHECK(rcsv.find("p1,oboe,2,absent,absent,absent,-70.000000") != std::string::npos);
    CHECK(to_json(recs[2])["sdr"].is_null());
    CHECK(to_json(recs[2])["absent"] == true);

    CHECK(parse_group_by("n_active") == GroupBy::kNActive);
    CHECK(to_string(GroupBy::kInstrument) == "instrument");
    CHECK_THROWS_AS(parse_group_by("piece"), MetricsError);
}
