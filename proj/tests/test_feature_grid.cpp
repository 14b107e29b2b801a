#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tunnelkit/feature_grid.hpp"

using namespace tk;
using namespace tk::grid;

namespace {

DenseFeatureMap random_map(std::uint64_t seed, std::uint32_t gh, std::uint32_t gw,
                           std::uint32_t dim, std::uint32_t w, std::uint32_t h) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> val(-2.0f, 2.0f);
    DenseFeatureMap m;
    m.grid_h = gh;
    m.grid_w = gw;
    m.dim = dim;
    m.image_w = w;
    m.image_h = h;
    m.values.resize(static_cast<std::size_t>(gh) * gw * dim);
    for (auto& v : m.values) v = val(rng);
    return m;
}

} // namespace

TEST_SUITE("feature_grid") {

TEST_CASE("anchor_of is the box midpoint") {
    CHECK(anchor_of({"crack", Box{10, 20, 110, 220}, 0}).p == Point{60, 120});
    CHECK(anchor_of({"crack", Box{0, 0, 768, 768}, 0}).p == Point{384, 384});
    CHECK(anchor_of({"crack", Box{5, 5, 6, 6}, 0}).p == Point{5.5, 5.5});
}

TEST_CASE("DFM1 round-trip is exact") {
    const DenseFeatureMap m = random_map(1, 2, 2, 3, 64, 64);
    const std::string bytes = save_feature_map(m);
    const DenseFeatureMap back = load_feature_map(bytes);
    CHECK(back.grid_h == 2);
    CHECK(back.grid_w == 2);
    CHECK(back.dim == 3);
    CHECK(back.image_w == 64);
    CHECK(back.values == m.values);
    CHECK(save_feature_map(back) == bytes);
}

TEST_CASE("DFM1 error paths") {
    const DenseFeatureMap m = random_map(2, 2, 2, 3, 64, 64);
    std::string bytes = save_feature_map(m);

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(load_feature_map(bad_magic), doctest::Contains("not a feature map"),
                         Error);

    std::string truncated = bytes.substr(0, bytes.size() - 4);
    CHECK_THROWS_WITH_AS(load_feature_map(truncated), doctest::Contains("truncated"), Error);

    std::string padded = bytes + "zz";
    CHECK_THROWS_WITH_AS(load_feature_map(padded), doctest::Contains("truncated"), Error);

    DenseFeatureMap nan_map = m;
    nan_map.values[5] = std::nanf("");
    CHECK_THROWS_WITH_AS(load_feature_map(save_feature_map(nan_map)),
                         doctest::Contains("corrupt values"), Error);
}

TEST_CASE("constant field pools to the constant for any K") {
    DenseFeatureMap m = random_map(3, 6, 6, 4, 768, 768);
    for (std::size_t i = 0; i < m.values.size(); i += m.dim)
        for (std::uint32_t d = 0; d < m.dim; ++d) m.values[i + d] = 0.25f * (d + 1);
    for (int K : {1, 2, 5, 6, 9}) {
        const KeyPatchField f = pool_key_patches(m, K);
        for (int mm = 1; mm <= K; ++mm)
            for (int nn = 1; nn <= K; ++nn) {
                const float* v = f.at(CellIndex{mm, nn});
                for (std::uint32_t d = 0; d < m.dim; ++d)
                    CHECK(v[d] == doctest::Approx(0.25f * (d + 1)).epsilon(1e-6));
            }
    }
}

TEST_CASE("K equal to the grid extent pools bijectively") {
    const DenseFeatureMap m = random_map(4, 4, 4, 3, 512, 512);
    const KeyPatchField f = pool_key_patches(m, 4);
    for (int mm = 1; mm <= 4; ++mm)
        for (int nn = 1; nn <= 4; ++nn) {
            const float* cell = f.at(CellIndex{mm, nn});
            const float* feat = m.at(static_cast<std::uint32_t>(mm),
                                     static_cast<std::uint32_t>(nn));
            for (std::uint32_t d = 0; d < 3; ++d) CHECK(cell[d] == feat[d]);
        }
}

TEST_CASE("2x2 grid pooled to K=1 averages the four vectors") {
    const DenseFeatureMap m = random_map(5, 2, 2, 3, 100, 100);
    const KeyPatchField f = pool_key_patches(m, 1);
    const std::vector<double> expect = oracles::enum_pool_cell(m, 1, 1, 1);
    const float* got = f.at(CellIndex{1, 1});
    for (std::uint32_t d = 0; d < 3; ++d)
        CHECK(got[d] == doctest::Approx(expect[d]).epsilon(1e-6));
}

TEST_CASE("pooling matches the enumerated-membership oracle") {
    const DenseFeatureMap m = random_map(6, 24, 24, 8, 768, 768);
    for (int K : {3, 6, 24}) {
        const KeyPatchField f = pool_key_patches(m, K);
        for (int mm = 1; mm <= K; ++mm)
            for (int nn = 1; nn <= K; ++nn) {
                const std::vector<double> expect = oracles::enum_pool_cell(m, K, mm, nn);
                const float* got = f.at(CellIndex{mm, nn});
                for (std::uint32_t d = 0; d < m.dim; ++d)
                    CHECK(got[d] == doctest::Approx(expect[d]).epsilon(1e-5));
            }
    }
}

TEST_CASE("pooling conserves the count-weighted global mean") {
    const DenseFeatureMap m = random_map(7, 16, 24, 6, 768, 512);
    for (int K : {2, 5, 16}) {
        const KeyPatchField f = pool_key_patches(m, K);
        std::vector<double> weighted(m.dim, 0.0);
        std::size_t total = 0;
        for (int mm = 1; mm <= K; ++mm)
            for (int nn = 1; nn <= K; ++nn) {
                const CellIndex c{mm, nn};
                const std::size_t cnt =
                    f.counts[static_cast<std::size_t>(mm - 1) * K + (nn - 1)];
                const float* v = f.at(c);
                for (std::uint32_t d = 0; d < m.dim; ++d)
                    weighted[d] += static_cast<double>(v[d]) * static_cast<double>(cnt);
                total += cnt;
            }
        REQUIRE(total == static_cast<std::size_t>(m.grid_h) * m.grid_w);
        std::vector<double> global(m.dim, 0.0);
        for (std::size_t i = 0; i < m.values.size(); i += m.dim)
            for (std::uint32_t d = 0; d < m.dim; ++d) global[d] += m.values[i + d];
        for (std::uint32_t d = 0; d < m.dim; ++d) {
            const double a = weighted[d] / static_cast<double>(total);
            const double b = global[d] / static_cast<double>(total);
            CHECK(std::abs(a - b) <= 1e-5 * std::max(1.0, std::abs(b)));
        }
    }
}

TEST_CASE("empty cells copy the nearest feature when K exceeds the grid") {
    const DenseFeatureMap m = random_map(8, 2, 2, 3, 96, 96);
    const KeyPatchField f = pool_key_patches(m, 6);
    // Cell (1,1) center is (8,8); nearest feature center is (24,24), the
    // feature at (u,v)=(1,1).
    const float* got = f.at(CellIndex{1, 1});
    const float* feat = m.at(1, 1);
    for (std::uint32_t d = 0; d < 3; ++d) CHECK(got[d] == feat[d]);
}

TEST_CASE("locate_cell follows the floor/clip projection") {
    CHECK(locate_cell(Anchor{{0, 0}}, 768, 768, 24) == CellIndex{1, 1});
    CHECK(locate_cell(Anchor{{768, 768}}, 768, 768, 24) == CellIndex{24, 24});
    CHECK(locate_cell(Anchor{{383.5, 100}}, 768, 768, 24) == CellIndex{4, 12});
}

TEST_CASE("cell centers locate back to their own cell") {
    KeyPatchField f;
    f.K = 24;
    f.image_w = 768;
    f.image_h = 512;
    for (int mm = 1; mm <= f.K; ++mm)
        for (int nn = 1; nn <= f.K; ++nn) {
            const Point c = f.center(CellIndex{mm, nn});
            CHECK(locate_cell(Anchor{c}, f.image_w, f.image_h, f.K) == CellIndex{mm, nn});
        }
}

TEST_CASE("adjacent centers are spaced W/K and H/K apart") {
    KeyPatchField f;
    f.K = 24;
    f.image_w = 768;
    f.image_h = 384;
    const double dx = f.center(CellIndex{1, 2}).x - f.center(CellIndex{1, 1}).x;
    const double dy = f.center(CellIndex{2, 1}).y - f.center(CellIndex{1, 1}).y;
    CHECK(dx == doctest::Approx(768.0 / 24).epsilon(1e-12));
    CHECK(dy == doctest::Approx(384.0 / 24).epsilon(1e-12));
}

TEST_CASE("every in-bounds point maps to exactly one cell") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> px(0.0, 768.0);
    for (int i = 0; i < 2000; ++i) {
        const CellIndex c = locate_cell(Anchor{{px(rng), px(rng)}}, 768, 768, 24);
        CHECK(c.m >= 1);
        CHECK(c.m <= 24);
        CHECK(c.n >= 1);
        CHECK(c.n <= 24);
    }
}

} // TEST_SUITE
