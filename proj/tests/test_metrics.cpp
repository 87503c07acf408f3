#include <catch2/catch_amalgamated.hpp>

#include "tseg/metrics.hpp"

using namespace tseg;

namespace {

Volume random_mask(std::int64_t n, std::uint64_t seed, double fill) {
    Volume m(n, n, n, ValueKind::mask);
    Rng rng(seed);
    for (auto& v : m.voxels) v = rng.uniform01() < fill ? 1.0 : 0.0;
    return m;
}

// brute-force voxel tally used as the metric oracle
struct Tally {
    std::int64_t s = 0, t = 0, i = 0;
};
Tally tally(const Volume& S, const Volume& T) {
    Tally out;
    for (std::size_t k = 0; k < S.voxels.size(); ++k) {
        out.s += S.voxels[k] != 0;
        out.t += T.voxels[k] != 0;
        out.i += S.voxels[k] != 0 && T.voxels[k] != 0;
    }
    return out;
}

}  // namespace

TEST_CASE("overlap_report") {
    SECTION("identical masks score perfectly") {
        const Volume m = random_mask(8, 1, 0.3);
        const MetricsReport r = overlap_report(m, m);
        REQUIRE(r.total_overlap == 1.0);
        REQUIRE(r.jaccard == 1.0);
        REQUIRE(r.dice == 1.0);
        REQUIRE(r.fn_rate == 0.0);
        REQUIRE(r.fp_rate == 0.0);
        REQUIRE(r.relative_volume_diff == 0.0);
    }
    SECTION("disjoint masks score zero overlap") {
        Volume s(4, 4, 1, ValueKind::mask), t(4, 4, 1, ValueKind::mask);
        s.at(0, 0, 0) = 1;
        t.at(3, 3, 0) = 1;
        const MetricsReport r = overlap_report(s, t);
        REQUIRE(r.total_overlap == 0.0);
        REQUIRE(r.jaccard == 0.0);
        REQUIRE(r.dice == 0.0);
        REQUIRE(r.fn_rate == 1.0);
        REQUIRE(r.fp_rate == 1.0);
    }
    SECTION("hand-counted example: |S|=2 |T|=4 |SnT|=2") {
        Volume s(4, 4, 1, ValueKind::mask), t(4, 4, 1, ValueKind::mask);
        s.at(0, 0, 0) = s.at(1, 0, 0) = 1;
        t.at(0, 0, 0) = t.at(1, 0, 0) = t.at(2, 0, 0) = t.at(3, 0, 0) = 1;
        const MetricsReport r = overlap_report(s, t);
        REQUIRE(r.dice == Catch::Approx(2.0 * 2 / 6).margin(1e-15));
        REQUIRE(r.jaccard == Catch::Approx(0.5).margin(1e-15));
        REQUIRE(r.total_overlap == Catch::Approx(0.5).margin(1e-15));
        REQUIRE(r.relative_volume_diff == Catch::Approx(0.5).margin(1e-15));
    }
    SECTION("published operating point satisfies dice = 2J/(1+J)") {
        const double j = 0.70;
        const double d = 2 * j / (1 + j);
        REQUIRE(d == Catch::Approx(0.8235).margin(5e-5));
    }
    SECTION("empty truth is reported as NaN with a diagnostic") {
        Volume s(4, 4, 1, ValueKind::mask), t(4, 4, 1, ValueKind::mask);
        s.at(0, 0, 0) = 1;
        const MetricsReport r = overlap_report(s, t);
        REQUIRE(std::isnan(r.total_overlap));
        REQUIRE(std::isnan(r.fn_rate));
        REQUIRE_THAT(r.diagnostic, Catch::Matchers::ContainsSubstring("empty truth"));
        const MetricsReport r2 = overlap_report(t, s);
        REQUIRE(std::isnan(r2.fp_rate));
    }
    SECTION("extent mismatch is rejected") {
        Volume s(4, 4, 1, ValueKind::mask), t(4, 4, 2, ValueKind::mask);
        REQUIRE_THROWS_AS(overlap_report(s, t), std::invalid_argument);
    }
}

TEST_CASE("metric identities on random masks") {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        const Volume s = random_mask(16, seed, 0.2 + 0.01 * static_cast<double>(seed % 5));
        const Volume t = random_mask(16, seed + 1000, 0.25);
        const Tally tl = tally(s, t);
        if (tl.t == 0 || tl.s == 0) continue;
        const MetricsReport r = overlap_report(s, t);
        // exact integer agreement with the brute-force tally
        REQUIRE(r.source_voxels == tl.s);
        REQUIRE(r.target_voxels == tl.t);
        REQUIRE(r.intersection_voxels == tl.i);
        REQUIRE(r.total_overlap == static_cast<double>(tl.i) / static_cast<double>(tl.t));
        REQUIRE(r.jaccard == static_cast<double>(tl.i) / static_cast<double>(tl.s + tl.t - tl.i));
        REQUIRE(r.dice == 2.0 * static_cast<double>(tl.i) / static_cast<double>(tl.s + tl.t));
        // dice = 2J/(1+J)
        REQUIRE(r.dice == Catch::Approx(2 * r.jaccard / (1 + r.jaccard)).margin(1e-12));
        // total_overlap = 1 - fn
        REQUIRE(r.total_overlap == Catch::Approx(1.0 - r.fn_rate).margin(1e-12));
        // jaccard <= dice <= 2*jaccard
        REQUIRE(r.jaccard <= r.dice + 1e-15);
        REQUIRE(r.dice <= 2 * r.jaccard + 1e-15);
        // dice and jaccard are symmetric; overlap/fn/fp deliberately not
        const MetricsReport rev = overlap_report(t, s);
        REQUIRE(rev.dice == r.dice);
        REQUIRE(rev.jaccard == r.jaccard);
    }
}

TEST_CASE("detection_slice_fnr") {
    SECTION("a covering prediction misses nothing") {
        REQUIRE(detection_slice_fnr(true, 5, 40, 10, 29) == 0.0);
    }
    SECTION("5 of 20 slices missed gives 0.25") {
        REQUIRE(detection_slice_fnr(true, 15, 29, 10, 29) == Catch::Approx(0.25));
    }
    SECTION("no prediction misses everything") {
        REQUIRE(detection_slice_fnr(false, 0, 0, 10, 29) == 1.0);
    }
    SECTION("empty truth is rejected") {
        REQUIRE_THROWS_AS(detection_slice_fnr(true, 0, 10, 5, 4), std::invalid_argument);
    }
}

TEST_CASE("observer_stats") {
    SECTION("identical observers have zero spread") {
        const auto st = observer_stats({{10, 30}, {10, 30}, {10, 30}});
        REQUIRE(st.initial_std == 0.0);
        REQUIRE(st.final_std == 0.0);
        REQUIRE(st.reference_zmin == 10);
        REQUIRE(st.reference_zmax == 30);
    }
    SECTION("initial slices {10,12,14} give 12 +- 2") {
        const auto st = observer_stats({{10, 20}, {12, 20}, {14, 20}});
        REQUIRE(st.initial_mean == Catch::Approx(12.0));
        REQUIRE(st.initial_std == Catch::Approx(2.0));
    }
    SECTION("published anchor 3.6667 +- 1.5275 reproduced from {2,4,5}") {
        const auto st = observer_stats({{2, 9}, {4, 9}, {5, 9}});
        REQUIRE(st.initial_mean == Catch::Approx(3.6667).margin(5e-5));
        REQUIRE(st.initial_std == Catch::Approx(1.5275).margin(5e-5));
    }
    SECTION("fewer than two observers is rejected") {
        REQUIRE_THROWS_WITH(observer_stats({{1, 2}}), Catch::Matchers::ContainsSubstring("2 observers"));
    }
}

TEST_CASE("aggregate") {
    MetricsReport a;
    a.total_overlap = 0.8;
    a.jaccard = 0.6;
    a.dice = 0.8;
    a.fn_rate = 0.2;
    a.fp_rate = 0.1;
    a.relative_volume_diff = 0.05;
    SECTION("a single report aggregates to itself with zero spread") {
        const auto agg = aggregate({a});
        REQUIRE(agg.mean[2] == 0.8);
        REQUIRE(agg.stddev[2] == 0.0);
    }
    SECTION("two dice values 0.8/0.9 give 0.85 +- 0.0707") {
        MetricsReport b = a;
        b.dice = 0.9;
        const auto agg = aggregate({a, b});
        REQUIRE(agg.mean[2] == Catch::Approx(0.85));
        REQUIRE(agg.stddev[2] == Catch::Approx(0.070710678).margin(1e-6));
    }
    SECTION("permutation invariance") {
        MetricsReport b = a;
        b.dice = 0.9;
        b.jaccard = 0.7;
        const auto x = aggregate({a, b});
        const auto y = aggregate({b, a});
        REQUIRE(x.mean == y.mean);
        REQUIRE(x.stddev == y.stddev);
    }
    SECTION("empty input is rejected") { REQUIRE_THROWS_AS(aggregate({}), std::invalid_argument); }
}
