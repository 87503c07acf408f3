#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "tseg/phantom.hpp"
#include "tseg/volume.hpp"

using namespace tseg;
namespace fs = std::filesystem;

namespace {
struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("tseg_vol_" + std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};
}  // namespace

TEST_CASE("volume round trip is bit exact") {
    TempDir td;
    Volume v(8, 8, 4);
    Rng rng(3);
    for (auto& x : v.voxels) x = rng.normal(10, 55);
    v.sx = 0.72;
    v.sy = 0.97;
    v.sz = 0.625;
    v.ox = -12.5;
    const std::string p = (td.path / "vol.mhd").string();
    write_volume(v, p);
    const Volume r = read_volume(p);
    REQUIRE(r.voxels == v.voxels);
    REQUIRE(r.nx == 8);
    REQUIRE(r.sx == v.sx);
    REQUIRE(r.sz == v.sz);
    REQUIRE(r.ox == v.ox);
}

TEST_CASE("masks persist as unsigned bytes holding exactly 0/1") {
    TempDir td;
    Volume m(4, 4, 2, ValueKind::mask);
    m.voxels[3] = 1;
    m.voxels[17] = 1;
    const std::string p = (td.path / "mask.mhd").string();
    write_volume(m, p);
    const Volume r = read_volume(p);
    REQUIRE(r.value_kind == ValueKind::mask);
    REQUIRE(r.voxels == m.voxels);
    REQUIRE(fs::file_size(td.path / "mask.raw") == 32);  // one byte per voxel
}

TEST_CASE("volume header and payload validation") {
    TempDir td;
    SECTION("payload size mismatch") {
        std::ofstream h(td.path / "bad.mhd");
        h << "NDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\nOffset = 0 0 0\n"
             "ElementType = MET_UCHAR\nElementDataFile = bad.raw\n";
        h.close();
        std::ofstream r(td.path / "bad.raw", std::ios::binary);
        const char junk[7] = {0};
        r.write(junk, 7);  // 7 bytes for 8 voxels
        r.close();
        REQUIRE_THROWS_WITH(read_volume((td.path / "bad.mhd").string()),
                            Catch::Matchers::ContainsSubstring("bytes"));
    }
    SECTION("unknown header key") {
        std::ofstream h(td.path / "odd.mhd");
        h << "NDims = 3\nDimSize = 1 1 1\nBogusKey = 1\nElementType = MET_DOUBLE\nElementDataFile = odd.raw\n";
        h.close();
        REQUIRE_THROWS_WITH(read_volume((td.path / "odd.mhd").string()),
                            Catch::Matchers::ContainsSubstring("unknown header key"));
    }
    SECTION("mask volumes reject non-binary voxels") {
        Volume m(2, 2, 1, ValueKind::mask);
        m.voxels[0] = 0.5;
        REQUIRE_THROWS_WITH(write_volume(m, (td.path / "x.mhd").string()),
                            Catch::Matchers::ContainsSubstring("0 or 1"));
    }
}

TEST_CASE("phantom generation") {
    SECTION("same seed twice is identical") {
        PhantomSpec spec;
        spec.seed = 5;
        auto a = generate_phantom(spec);
        auto b = generate_phantom(spec);
        REQUIRE(a.image.voxels == b.image.voxels);
        REQUIRE(a.mask.voxels == b.mask.voxels);
        REQUIRE(a.observers == b.observers);
    }
    SECTION("without noise and distractors the mask matches the intensity transition") {
        PhantomSpec spec;
        spec.noise_std = 0;
        spec.spine = false;
        spec.ellipsoids = false;
        auto out = generate_phantom(spec);
        for (std::size_t i = 0; i < out.image.voxels.size(); ++i) {
            const bool thromb = out.image.voxels[i] == spec.intensity_thrombus;
            REQUIRE(thromb == (out.mask.voxels[i] == 1.0));
        }
    }
    SECTION("constant-radius mask volume is within 2% of the analytic annulus") {
        PhantomSpec spec;
        spec.noise_std = 0;
        spec.radius_wobble = 0;
        spec.center_wobble = 0;
        spec.lumen_radius = 8;
        spec.outer_radius = 18;
        auto out = generate_phantom(spec);
        double count = 0;
        for (double v : out.mask.voxels) count += v;
        const double slices = static_cast<double>(spec.thrombus_zmax - spec.thrombus_zmin + 1);
        const double analytic = 3.14159265358979 * (18.0 * 18.0 - 8.0 * 8.0) * slices;
        REQUIRE(std::abs(count - analytic) / analytic < 0.02);
    }
    SECTION("degenerate radii are rejected") {
        PhantomSpec spec;
        spec.outer_radius = spec.lumen_radius + 1;
        REQUIRE_THROWS_WITH(generate_phantom(spec), Catch::Matchers::ContainsSubstring("radii"));
    }
    SECTION("observer intervals sit near the true span") {
        PhantomSpec spec;
        spec.seed = 11;
        auto out = generate_phantom(spec);
        REQUIRE(out.observers.size() == 3);
        for (const auto& [a, b] : out.observers) {
            REQUIRE(std::abs(a - spec.thrombus_zmin) <= 8);
            REQUIRE(std::abs(b - spec.thrombus_zmax) <= 8);
            REQUIRE(a <= b);
        }
    }
}

TEST_CASE("mask_to_bboxes") {
    Volume m(16, 16, 3, ValueKind::mask);
    SECTION("empty slices yield no boxes") { REQUIRE(mask_to_bboxes(m).empty()); }
    SECTION("single voxel gives a half-open unit box") {
        m.at(5, 7, 1) = 1;
        auto boxes = mask_to_bboxes(m);
        REQUIRE(boxes.size() == 1);
        REQUIRE(boxes[0].z == 1);
        REQUIRE(boxes[0].xmin == 5);
        REQUIRE(boxes[0].ymin == 7);
        REQUIRE(boxes[0].xmax == 6);
        REQUIRE(boxes[0].ymax == 8);
    }
    SECTION("an L-shaped region gets its rectangular hull") {
        for (int x = 2; x <= 10; ++x) m.at(x, 3, 0) = 1;
        for (int y = 3; y <= 9; ++y) m.at(2, y, 0) = 1;
        auto boxes = mask_to_bboxes(m);
        REQUIRE(boxes.size() == 1);
        REQUIRE(boxes[0].xmin == 2);
        REQUIRE(boxes[0].xmax == 11);
        REQUIRE(boxes[0].ymin == 3);
        REQUIRE(boxes[0].ymax == 10);
    }
    SECTION("boxes are tight: every side touches foreground") {
        Rng rng(23);
        Volume r(24, 24, 6, ValueKind::mask);
        for (auto& v : r.voxels) v = rng.uniform01() < 0.05 ? 1.0 : 0.0;
        for (const auto& b : mask_to_bboxes(r)) {
            bool left = false, right = false, top = false, bottom = false;
            for (std::int64_t y = static_cast<std::int64_t>(b.ymin); y < static_cast<std::int64_t>(b.ymax); ++y) {
                left = left || r.at(static_cast<std::int64_t>(b.xmin), y, b.z) != 0;
                right = right || r.at(static_cast<std::int64_t>(b.xmax) - 1, y, b.z) != 0;
            }
            for (std::int64_t x = static_cast<std::int64_t>(b.xmin); x < static_cast<std::int64_t>(b.xmax); ++x) {
                top = top || r.at(x, static_cast<std::int64_t>(b.ymin), b.z) != 0;
                bottom = bottom || r.at(x, static_cast<std::int64_t>(b.ymax) - 1, b.z) != 0;
            }
            REQUIRE((left && right && top && bottom));
        }
    }
}

TEST_CASE("make_folds") {
    SECTION("12 datasets over 4 folds give test sets of 3") {
        const FoldPlan plan = make_folds(12, 4, 1);
        for (int f = 0; f < 4; ++f) REQUIRE(plan.test_ids(f).size() == 3);
    }
    SECTION("same seed reproduces the plan") {
        REQUIRE(make_folds(12, 4, 9).assignment == make_folds(12, 4, 9).assignment);
    }
    SECTION("test sets partition the datasets") {
        const FoldPlan plan = make_folds(13, 4, 3);
        std::vector<int> seen(13, 0);
        for (int f = 0; f < 4; ++f)
            for (std::size_t id : plan.test_ids(f)) ++seen[id];
        for (int s : seen) REQUIRE(s == 1);
    }
    SECTION("more folds than datasets is rejected") {
        REQUIRE_THROWS_WITH(make_folds(3, 4, 1), Catch::Matchers::ContainsSubstring("exceeds"));
    }
    SECTION("validation split reserves about 10% of slices") {
        const auto mask = validation_mask(200, 17);
        std::size_t n = 0;
        for (bool b : mask) n += b;
        REQUIRE(n == 20);
        REQUIRE(validation_mask(200, 17) == mask);
    }
}
