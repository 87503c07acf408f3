#include <catch2/catch_amalgamated.hpp>

#include "tseg/postproc.hpp"

using namespace tseg;

namespace {

// independent Lloyd implementation used as the oracle (same quantile init)
struct OracleKmeans {
    std::vector<double> centroids;
    double objective = 0;
};

OracleKmeans oracle_kmeans(const std::vector<double>& values, int k, int iters) {
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = values.size();
    std::vector<double> c(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j)
        c[static_cast<std::size_t>(j)] =
            sorted[std::min(n - 1, static_cast<std::size_t>((j + 0.5) * static_cast<double>(n) / k))];
    std::vector<int> assign(n, 0);
    for (int it = 0; it < iters; ++it) {
        bool moved = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            for (int j = 1; j < k; ++j)
                if (std::abs(values[i] - c[static_cast<std::size_t>(j)]) <
                    std::abs(values[i] - c[static_cast<std::size_t>(best)]))
                    best = j;
            if (assign[i] != best) {
                assign[i] = best;
                moved = true;
            }
        }
        std::vector<double> sum(static_cast<std::size_t>(k), 0);
        std::vector<int> cnt(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[static_cast<std::size_t>(assign[i])] += values[i];
            ++cnt[static_cast<std::size_t>(assign[i])];
        }
        for (int j = 0; j < k; ++j)
            if (cnt[static_cast<std::size_t>(j)]) c[static_cast<std::size_t>(j)] = sum[static_cast<std::size_t>(j)] / cnt[static_cast<std::size_t>(j)];
        if (!moved && it > 0) break;
    }
    OracleKmeans out;
    out.centroids = c;
    for (std::size_t i = 0; i < n; ++i) {
        double best = 1e300;
        for (int j = 0; j < k; ++j)
            best = std::min(best, std::abs(values[i] - c[static_cast<std::size_t>(j)]));
        out.objective += best * best;
    }
    return out;
}

// independent recursive flood fill for the component oracle
void flood(const Volume& m, std::vector<char>& seen, std::int64_t x, std::int64_t y, std::int64_t z,
           std::vector<std::size_t>& comp, int connectivity) {
    std::vector<std::array<std::int64_t, 3>> stack{{x, y, z}};
    seen[m.idx(x, y, z)] = 1;
    while (!stack.empty()) {
        auto [cx, cy, cz] = stack.back();
        stack.pop_back();
        comp.push_back(m.idx(cx, cy, cz));
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (!dx && !dy && !dz) continue;
                    if (connectivity == 6 && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1) continue;
                    const std::int64_t qx = cx + dx, qy = cy + dy, qz = cz + dz;
                    if (qx < 0 || qy < 0 || qz < 0 || qx >= m.nx || qy >= m.ny || qz >= m.nz) continue;
                    if (m.voxels[m.idx(qx, qy, qz)] != 0 && !seen[m.idx(qx, qy, qz)]) {
                        seen[m.idx(qx, qy, qz)] = 1;
                        stack.push_back({qx, qy, qz});
                    }
                }
    }
}

Volume oracle_largest(const Volume& m, int connectivity) {
    std::vector<char> seen(m.voxels.size(), 0);
    std::vector<std::size_t> best;
    for (std::int64_t z = 0; z < m.nz; ++z)
        for (std::int64_t y = 0; y < m.ny; ++y)
            for (std::int64_t x = 0; x < m.nx; ++x)
                if (m.voxels[m.idx(x, y, z)] != 0 && !seen[m.idx(x, y, z)]) {
                    std::vector<std::size_t> comp;
                    flood(m, seen, x, y, z, comp, connectivity);
                    if (comp.size() > best.size()) best = comp;
                }
    Volume out(m.nx, m.ny, m.nz, ValueKind::mask);
    for (std::size_t i : best) out.voxels[i] = 1;
    return out;
}

}  // namespace

TEST_CASE("smooth_z") {
    SECTION("constants are unchanged") {
        Volume v(4, 4, 12, ValueKind::probability);
        std::fill(v.voxels.begin(), v.voxels.end(), 0.37);
        const Volume s = smooth_z(v);
        for (double x : s.voxels) REQUIRE(x == Catch::Approx(0.37).margin(1e-12));
    }
    SECTION("an impulse spreads into a symmetric profile") {
        Volume v(1, 1, 31, ValueKind::probability);
        v.at(0, 0, 15) = 1.0;
        const Volume s = smooth_z(v);
        REQUIRE(s.at(0, 0, 15) > s.at(0, 0, 16));
        for (int d = 1; d <= 6; ++d)
            REQUIRE(s.at(0, 0, 15 - d) == Catch::Approx(s.at(0, 0, 15 + d)).margin(1e-15));
        // matches a direct kernel evaluation (sigma 2 slices, radius 6)
        double k0 = 0, k1 = 0;
        for (int i = -6; i <= 6; ++i) {
            k0 += std::exp(-0.5 * (i / 2.0) * (i / 2.0));
        }
        k1 = std::exp(-0.5 * (1 / 2.0) * (1 / 2.0)) / k0;
        REQUIRE(s.at(0, 0, 14) == Catch::Approx(k1).margin(1e-12));
    }
    SECTION("single-slice volumes are unchanged") {
        Volume v(3, 3, 1, ValueKind::probability);
        v.voxels = {0.1, 0.9, 0.3, 0.2, 0.8, 0.4, 0.5, 0.6, 0.7};
        REQUIRE(smooth_z(v).voxels == v.voxels);
    }
    SECTION("mean over z preserved on a periodic extension") {
        Rng rng(5);
        Volume v(2, 2, 10, ValueKind::probability);
        for (auto& x : v.voxels) x = rng.uniform01();
        // tile three copies along z and compare the middle copy's mean
        Volume tiled(2, 2, 30, ValueKind::probability);
        for (std::int64_t z = 0; z < 30; ++z)
            for (std::int64_t i = 0; i < 4; ++i)
                tiled.voxels[static_cast<std::size_t>(z * 4 + i)] = v.voxels[static_cast<std::size_t>((z % 10) * 4 + i)];
        const Volume s = smooth_z(tiled);
        double before = 0, after = 0;
        for (std::int64_t z = 10; z < 20; ++z)
            for (std::int64_t i = 0; i < 4; ++i) {
                before += tiled.voxels[static_cast<std::size_t>(z * 4 + i)];
                after += s.voxels[static_cast<std::size_t>(z * 4 + i)];
            }
        REQUIRE(after == Catch::Approx(before).epsilon(0).margin(1e-12));
    }
}

TEST_CASE("kmeans_1d") {
    SECTION("separated point masses recover their centers") {
        const auto r = kmeans_1d({0, 0, 1, 1}, 2, 50);
        REQUIRE(r.centroids == std::vector<double>{0.0, 1.0});
        REQUIRE(r.assignment == std::vector<std::int32_t>{0, 0, 1, 1});
    }
    SECTION("identical runs produce identical assignments") {
        Rng rng(6);
        std::vector<double> vals(500);
        for (auto& v : vals) v = rng.uniform01();
        const auto a = kmeans_1d(vals, 6, 100);
        const auto b = kmeans_1d(vals, 6, 100);
        REQUIRE(a.assignment == b.assignment);
        REQUIRE(a.centroids == b.centroids);
    }
    SECTION("matches the independent Lloyd oracle on 1000 values") {
        Rng rng(7);
        std::vector<double> vals(1000);
        for (auto& v : vals) v = rng.uniform01() < 0.7 ? rng.normal(0.2, 0.05) : rng.normal(0.8, 0.05);
        const auto got = kmeans_1d(vals, 6, 200);
        const auto want = oracle_kmeans(vals, 6, 200);
        REQUIRE(got.objective == Catch::Approx(want.objective).epsilon(0).margin(1e-9));
    }
    SECTION("assignments are nearest-centroid at termination") {
        Rng rng(8);
        std::vector<double> vals(400);
        for (auto& v : vals) v = rng.uniform01();
        const auto r = kmeans_1d(vals, 4, 100);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double best = 1e300;
            int bj = -1;
            for (int j = 0; j < r.k_used; ++j)
                if (std::abs(vals[i] - r.centroids[static_cast<std::size_t>(j)]) < best) {
                    best = std::abs(vals[i] - r.centroids[static_cast<std::size_t>(j)]);
                    bj = j;
                }
            REQUIRE(r.assignment[i] == bj);
        }
    }
    SECTION("fewer distinct values than k reduces k with a warning") {
        const auto r = kmeans_1d({0.5, 0.5, 0.5, 1.0}, 6, 10);
        REQUIRE(r.k_used == 2);
        REQUIRE_THAT(r.warning, Catch::Matchers::ContainsSubstring("reduced k"));
    }
    SECTION("k below 2 is rejected") { REQUIRE_THROWS_AS(kmeans_1d({1, 2, 3}, 1, 10), std::invalid_argument); }
}

TEST_CASE("binarize_clusters") {
    Volume like(2, 2, 1, ValueKind::probability);
    SECTION("with k=2 both policies agree") {
        KmeansResult km;
        km.k_used = 2;
        km.centroids = {0.1, 0.9};
        km.assignment = {0, 1, 1, 0};
        const auto a = binarize_clusters(km, like, BinarizePolicy::drop_lowest);
        const auto b = binarize_clusters(km, like, BinarizePolicy::keep_highest);
        REQUIRE(a.voxels == b.voxels);
        REQUIRE(a.voxels == std::vector<double>{0, 1, 1, 0});
    }
    SECTION("with k=3 drop_lowest keeps the upper two clusters") {
        KmeansResult km;
        km.k_used = 3;
        km.centroids = {0.1, 0.5, 0.9};
        km.assignment = {0, 1, 2, 1};
        const auto a = binarize_clusters(km, like, BinarizePolicy::drop_lowest);
        REQUIRE(a.voxels == std::vector<double>{0, 1, 1, 1});
        const auto b = binarize_clusters(km, like, BinarizePolicy::keep_highest);
        REQUIRE(b.voxels == std::vector<double>{0, 0, 1, 0});
    }
    SECTION("a single collapsed cluster marks everything foreground") {
        KmeansResult km;
        km.k_used = 1;
        km.centroids = {0.4};
        km.assignment = {0, 0, 0, 0};
        const auto a = binarize_clusters(km, like, BinarizePolicy::drop_lowest);
        for (double v : a.voxels) REQUIRE(v == 1.0);
    }
}

TEST_CASE("largest_component") {
    SECTION("a single blob passes through unchanged") {
        Volume m(8, 8, 3, ValueKind::mask);
        for (int x = 2; x < 6; ++x)
            for (int y = 2; y < 6; ++y) m.at(x, y, 1) = 1;
        REQUIRE(largest_component(m).voxels == m.voxels);
    }
    SECTION("the smaller of two blobs is removed") {
        Volume m(12, 12, 2, ValueKind::mask);
        for (int x = 0; x < 5; ++x)
            for (int y = 0; y < 2; ++y) m.at(x, y, 0) = 1;  // 10 voxels
        for (int x = 9; x < 12; ++x) m.at(x, 11, 1) = 1;     // 3 voxels
        const auto out = largest_component(m);
        REQUIRE(out.at(0, 0, 0) == 1);
        REQUIRE(out.at(9, 11, 1) == 0);
    }
    SECTION("diagonal voxels connect under 26 but not under 6") {
        Volume m(4, 4, 2, ValueKind::mask);
        m.at(1, 1, 0) = 1;
        m.at(2, 2, 1) = 1;
        const auto c26 = largest_component(m, 26);
        REQUIRE(c26.at(1, 1, 0) + c26.at(2, 2, 1) == 2);  // one component keeps both
        const auto c6 = largest_component(m, 6);
        REQUIRE(c6.at(1, 1, 0) + c6.at(2, 2, 1) == 1);  // tie broken by scan order
        REQUIRE(c6.at(1, 1, 0) == 1);
    }
    SECTION("matches the flood-fill oracle on random masks") {
        Rng rng(9);
        for (int trial = 0; trial < 25; ++trial) {
            Volume m(16, 16, 8, ValueKind::mask);
            for (auto& v : m.voxels) v = rng.uniform01() < 0.2 ? 1.0 : 0.0;
            for (int conn : {6, 26}) {
                const auto got = largest_component(m, conn);
                const auto want = oracle_largest(m, conn);
                REQUIRE(got.voxels == want.voxels);
            }
        }
    }
    SECTION("output is a subset of the input and empty stays empty") {
        Volume m(6, 6, 2, ValueKind::mask);
        REQUIRE(largest_component(m).voxels == m.voxels);
        Rng rng(10);
        for (auto& v : m.voxels) v = rng.uniform01() < 0.3 ? 1.0 : 0.0;
        const auto out = largest_component(m);
        for (std::size_t i = 0; i < m.voxels.size(); ++i)
            if (out.voxels[i] != 0) REQUIRE(m.voxels[i] != 0);
    }
}

TEST_CASE("full post-processing chain is deterministic") {
    Rng rng(11);
    Volume prob(12, 12, 14, ValueKind::probability);
    for (auto& v : prob.voxels) v = rng.uniform01();
    auto run = [&]() {
        const Volume s = smooth_z(prob);
        const auto km = kmeans_1d(s.voxels, 6, 100);
        return largest_component(binarize_clusters(km, s, BinarizePolicy::drop_lowest), 26).voxels;
    };
    REQUIRE(run() == run());
}
