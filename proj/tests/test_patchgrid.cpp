#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "reftok/errors.hpp"
#include "reftok/patchgrid.hpp"
#include "reftok/rng.hpp"
#include "reftok/synth.hpp"

using namespace reftok;

static VideoClip random_clip(int t, int h, int w, Rng& rng) {
    VideoClip clip(t, h, w);
    for (float& v : clip.data) v = static_cast<float>(uniform01(rng));
    return clip;
}

TEST_CASE("grid shapes follow tau=T/t, eta=H/h, omega=W/w") {
    GridShape g = grid_shape_for(16, 256, 256, PatchSpec{4, 16, 16});
    CHECK(g == GridShape{4, 16, 16});
    CHECK(g.sites() == 1024);

    CHECK(grid_shape_for(4, 16, 16, PatchSpec{4, 16, 16}) == GridShape{1, 1, 1});
    CHECK(grid_shape_for(8, 32, 32, PatchSpec{2, 8, 8}) == GridShape{4, 4, 4});

    CHECK_THROWS_AS(grid_shape_for(7, 32, 32, PatchSpec{2, 8, 8}), DataError);
    CHECK_THROWS_AS(grid_shape_for(8, 30, 32, PatchSpec{2, 8, 8}), DataError);
}

TEST_CASE("patchify/unpatchify round-trip is bit-exact") {
    Rng rng = make_rng(17, 0);
    struct Shape { int t, h, w; PatchSpec spec; };
    for (const Shape& s : {Shape{8, 32, 32, {2, 8, 8}}, Shape{4, 16, 16, {4, 16, 16}},
                           Shape{6, 24, 16, {3, 8, 8}}, Shape{2, 8, 8, {1, 1, 1}}}) {
        VideoClip clip = random_clip(s.t, s.h, s.w, rng);
        TokenGrid grid = patchify(clip, s.spec);
        CHECK(grid.dim == s.spec.patch_dim(3));
        CHECK(grid.shape.sites() == (s.t * s.h * s.w) / (s.spec.t * s.spec.h * s.spec.w));
        VideoClip back = unpatchify(grid, s.spec);
        CHECK(back.data == clip.data);
        CHECK(back.t == clip.t);
        CHECK(back.h == clip.h);
        CHECK(back.w == clip.w);
    }
}

TEST_CASE("patchify site and cuboid ordering is (t, y, x) outer, (t, y, x, c) inner") {
    // Encode coordinates in channel values to pin the layout.
    VideoClip clip(4, 4, 4);
    for (int t = 0; t < 4; ++t)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                clip.at(t, y, x, 0) = t / 8.0f;
                clip.at(t, y, x, 1) = y / 8.0f;
                clip.at(t, y, x, 2) = x / 8.0f;
            }
    TokenGrid grid = patchify(clip, PatchSpec{2, 2, 2});
    CHECK(grid.shape == GridShape{2, 2, 2});
    // Site index s = (i*eta + j)*omega + k for patch coords (i,j,k).
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) {
                const float* v = grid.site((i * 2 + j) * 2 + k);
                int p = 0;
                for (int dt = 0; dt < 2; ++dt)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            CHECK(v[p + 0] == doctest::Approx((2 * i + dt) / 8.0f));
                            CHECK(v[p + 1] == doctest::Approx((2 * j + dy) / 8.0f));
                            CHECK(v[p + 2] == doctest::Approx((2 * k + dx) / 8.0f));
                            p += 3;
                        }
            }
}

TEST_CASE("compression ratios are pixels per token") {
    CHECK(compression_ratio(PatchSpec{4, 16, 16}) == 1024);
    CHECK(compression_ratio_string(PatchSpec{4, 16, 16}) == "1024:1");
    CHECK(compression_ratio_string(PatchSpec{1, 16, 16}) == "256:1");
    CHECK(compression_ratio_string(PatchSpec{1, 1, 1}) == "1:1");
}

TEST_CASE("bit-level compression accounts for codebook width") {
    // 4x16x16 patch carries 1024 24-bit pixels; a 8192-entry codebook
    // spends 13 bits per token.
    const double r = bit_compression_ratio(PatchSpec{4, 16, 16}, 8192);
    CHECK(r == doctest::Approx(24.0 * 1024 / 13.0).epsilon(1e-9));
}

TEST_CASE("rgb patch space size matches the closed form") {
    CHECK(rgb_space_size(16, 16, 3, 256) == doctest::Approx(768 * std::log10(256.0)).epsilon(1e-12));
    CHECK(rgb_space_size(16, 16, 3, 256) == doctest::Approx(1849.5).epsilon(1e-3));
    CHECK(rgb_space_size(1, 1, 1, 2) == doctest::Approx(std::log10(2.0)).epsilon(1e-12));
    CHECK(rgb_space_size(16, 16, 3, 1) == 0.0);
}

TEST_CASE("unpatchify rejects mismatched payloads") {
    VideoClip clip = synth_redundant_clip(3, SynthConfig{.frames = 4});
    TokenGrid grid = patchify(clip, PatchSpec{2, 8, 8});
    grid.dim += 1;
    CHECK_THROWS_AS(unpatchify(grid, PatchSpec{2, 8, 8}), DataError);
}
