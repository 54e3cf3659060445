#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "reftok/errors.hpp"
#include "reftok/image_io.hpp"
#include "reftok/sampler.hpp"
#include "reftok/synth.hpp"
#include "reftok/video.hpp"

using namespace reftok;
namespace fs = std::filesystem;

static fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("reftok_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

static bool same_pixels(const VideoClip& a, const VideoClip& b) {
    return a.t == b.t && a.h == b.h && a.w == b.w && a.c == b.c && a.data == b.data;
}

TEST_CASE("u8 conversion round-trips every byte value") {
    for (int v = 0; v < 256; ++v)
        CHECK(float_to_u8(u8_to_float(static_cast<std::uint8_t>(v))) == v);
    CHECK(float_to_u8(0.0f) == 0);
    CHECK(float_to_u8(1.0f) == 255);
    CHECK(float_to_u8(-0.5f) == 0);
    CHECK(float_to_u8(2.0f) == 255);
}

TEST_CASE("split_reference partitions frames and concat restores the clip") {
    VideoClip clip = synth_redundant_clip(7, SynthConfig{.frames = 16});
    ClipSplit s1 = split_reference(clip, 1);
    CHECK(s1.reference.t == 1);
    CHECK(s1.target.t == 15);
    ClipSplit s4 = split_reference(clip, 4);
    CHECK(s4.reference.t == 4);
    CHECK(s4.target.t == 12);
    CHECK(same_pixels(concat_clips(s4.reference, s4.target), clip));

    VideoClip two = synth_redundant_clip(7, SynthConfig{.frames = 2});
    CHECK_THROWS_AS(split_reference(two, 2), DataError);
    CHECK_THROWS_AS(split_reference(two, 0), DataError);
}

TEST_CASE("replicate_pad_reference pads with the last frame") {
    VideoClip clip = synth_redundant_clip(3, SynthConfig{.frames = 4});

    VideoClip one = split_reference(clip, 1).reference;
    VideoClip padded = replicate_pad_reference(one, 4);
    CHECK(padded.t == 4);
    for (int f = 1; f < 4; ++f)
        CHECK(std::equal(padded.frame(f), padded.frame(f) + padded.h * padded.w * 3, padded.frame(0)));

    VideoClip four = clip;
    CHECK(same_pixels(replicate_pad_reference(four, 4), four));  // already a multiple

    VideoClip ab = split_reference(clip, 2).reference;  // frames A,B distinct
    VideoClip abbb = replicate_pad_reference(ab, 4);
    CHECK(abbb.t == 4);
    const std::size_t fsz = static_cast<std::size_t>(ab.h) * ab.w * 3;
    CHECK(std::equal(abbb.frame(0), abbb.frame(0) + fsz, ab.frame(0)));
    CHECK(std::equal(abbb.frame(1), abbb.frame(1) + fsz, ab.frame(1)));
    CHECK(std::equal(abbb.frame(2), abbb.frame(2) + fsz, ab.frame(1)));
    CHECK(std::equal(abbb.frame(3), abbb.frame(3) + fsz, ab.frame(1)));

    // Idempotent once T is a multiple.
    CHECK(same_pixels(replicate_pad_reference(abbb, 4), abbb));
}

TEST_CASE("synthetic clips are deterministic and temporally redundant") {
    SynthConfig cfg;
    VideoClip a = synth_redundant_clip(42, cfg);
    VideoClip b = synth_redundant_clip(42, cfg);
    CHECK(same_pixels(a, b));
    validate(a);

    VideoClip other = synth_redundant_clip(43, cfg);
    CHECK_FALSE(same_pixels(a, other));

    SynthConfig frozen = cfg;
    frozen.motion_amplitude = 0.0;
    VideoClip still = synth_redundant_clip(42, frozen);
    const std::size_t fsz = static_cast<std::size_t>(still.h) * still.w * 3;
    for (int f = 1; f < still.t; ++f)
        CHECK(std::equal(still.frame(f), still.frame(f) + fsz, still.frame(0)));
}

TEST_CASE("synthetic mean L1 distance to frame 0 is positive but small") {
    SynthConfig cfg;
    for (std::uint64_t seed : {1ULL, 9ULL, 123ULL}) {
        VideoClip clip = synth_redundant_clip(seed, cfg);
        const std::size_t fsz = static_cast<std::size_t>(clip.h) * clip.w * 3;
        double total = 0.0;
        for (int f = 1; f < clip.t; ++f) {
            double l1 = 0.0;
            for (std::size_t i = 0; i < fsz; ++i)
                l1 += std::abs(clip.frame(f)[i] - clip.frame(0)[i]);
            total += l1 / static_cast<double>(fsz);
        }
        double mean_l1 = total / (clip.t - 1);
        CHECK(mean_l1 > 0.0);
        CHECK(mean_l1 < 0.2);
    }
}

TEST_CASE("synthetic glyph overlap with frame 0 stays at least 60%") {
    SynthConfig cfg;
    for (std::uint64_t seed : {2ULL, 77ULL, 2026ULL}) {
        SynthTraceClip tc = synth_with_trace(seed, cfg);
        const int H = tc.clip.h, W = tc.clip.w;
        auto occupancy = [&](int f) {
            std::vector<char> m(static_cast<std::size_t>(H) * W, 0);
            for (const GlyphTrace& g : tc.glyphs) {
                const Rect& r = g.rects[f];
                for (int y = r.y; y < r.y + r.h; ++y)
                    for (int x = r.x; x < r.x + r.w; ++x) m[static_cast<std::size_t>(y) * W + x] = 1;
            }
            return m;
        };
        std::vector<char> base = occupancy(0);
        for (int f = 1; f < tc.clip.t; ++f) {
            std::vector<char> cur = occupancy(f);
            int inter = 0, count = 0;
            for (std::size_t i = 0; i < cur.size(); ++i) {
                if (cur[i]) ++count;
                if (cur[i] && base[i]) ++inter;
            }
            REQUIRE(count > 0);
            CHECK(static_cast<double>(inter) / count >= 0.6);
        }
    }
}

TEST_CASE("degenerate synth config is rejected") {
    SynthConfig cfg;
    cfg.glyph_size = 40;  // larger than the 32-pixel frame
    CHECK_THROWS_AS(synth_redundant_clip(1, cfg), DataError);
}

TEST_CASE("recolor_region rotates channels inside the rect only") {
    VideoClip clip = synth_redundant_clip(5, SynthConfig{.frames = 3});
    VideoClip orig = clip;
    Rect r{4, 6, 5, 3};
    recolor_region(clip, 1, r);
    for (int f = 0; f < clip.t; ++f)
        for (int y = 0; y < clip.h; ++y)
            for (int x = 0; x < clip.w; ++x) {
                if (f == 1 && r.contains(x, y)) {
                    CHECK(clip.at(f, y, x, 0) == orig.at(f, y, x, 2));
                    CHECK(clip.at(f, y, x, 1) == orig.at(f, y, x, 0));
                    CHECK(clip.at(f, y, x, 2) == orig.at(f, y, x, 1));
                } else {
                    for (int ch = 0; ch < 3; ++ch) CHECK(clip.at(f, y, x, ch) == orig.at(f, y, x, ch));
                }
            }
}

TEST_CASE("rvc files round-trip and reject corruption") {
    fs::path dir = temp_dir("rvc");
    VideoClip clip = synth_redundant_clip(11, SynthConfig{.frames = 5, .height = 16, .width = 16});
    std::string path = (dir / "clip.rvc").string();
    save_rvc(clip, path);
    VideoClip back = load_rvc(path);
    CHECK(back.t == 5);
    CHECK(back.h == 16);
    CHECK(back.w == 16);
    // Quantized round-trip: loaded floats re-quantize to the same bytes.
    CHECK(clip_to_u8(back) == clip_to_u8(clip));

    std::ofstream bad((dir / "bad.rvc").string(), std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(load_rvc((dir / "bad.rvc").string()), DataError);

    // Truncate the good file.
    std::vector<char> buf(40);
    std::ifstream in(path, std::ios::binary);
    in.read(buf.data(), 40);
    in.close();
    std::ofstream trunc((dir / "trunc.rvc").string(), std::ios::binary);
    trunc.write(buf.data(), 40);
    trunc.close();
    CHECK_THROWS_AS(load_rvc((dir / "trunc.rvc").string()), DataError);

    CHECK_THROWS_AS(load_rvc((dir / "missing.rvc").string()), DataError);
}

TEST_CASE("frame directories load with start/length/stride windows") {
    fs::path dir = temp_dir("frames");
    SynthConfig cfg;
    cfg.frames = 64;
    VideoClip clip = synth_redundant_clip(21, cfg);
    save_frame_dir(clip, dir.string());

    VideoClip w1 = load_clip(dir.string(), 0, 16, 1);
    CHECK(w1.t == 16);
    CHECK(w1.frame_interval == 1);

    VideoClip w4 = load_clip(dir.string(), 0, 16, 4);
    CHECK(w4.t == 16);
    CHECK(w4.frame_interval == 4);
    // Frame k of the strided window equals source frame 4k.
    const std::size_t fsz = static_cast<std::size_t>(clip.h) * clip.w * 3;
    std::vector<std::uint8_t> src = clip_to_u8(clip);
    std::vector<std::uint8_t> got = clip_to_u8(w4);
    for (int k = 0; k < 16; ++k)
        CHECK(std::equal(got.begin() + k * fsz, got.begin() + (k + 1) * fsz,
                         src.begin() + (4 * k) * fsz));

    CHECK_THROWS_AS(load_clip(dir.string(), 0, 65, 1), DataError);
    CHECK_THROWS_AS(load_clip(dir.string(), 0, 17, 4), DataError);  // 0+16*4=64 > 63
    CHECK_THROWS_AS(load_clip((dir / "nope").string(), 0, 4, 1), DataError);
}

TEST_CASE("frame directory listing rejects numbering gaps") {
    fs::path dir = temp_dir("gaps");
    VideoClip clip = synth_redundant_clip(4, SynthConfig{.frames = 4});
    save_frame_dir(clip, dir.string());
    fs::remove(dir / "000002.png");
    CHECK_THROWS_AS(list_frame_dir(dir.string()), DataError);
}

TEST_CASE("rvc clips honour stride when loaded through load_clip") {
    fs::path dir = temp_dir("rvc_stride");
    VideoClip clip = synth_redundant_clip(31, SynthConfig{.frames = 24});
    std::string path = (dir / "c.rvc").string();
    save_rvc(clip, path);
    VideoClip w = load_clip(path, 2, 5, 3);
    CHECK(w.t == 5);
    CHECK(w.frame_interval == 3);
    std::vector<std::uint8_t> src = clip_to_u8(clip);
    std::vector<std::uint8_t> got = clip_to_u8(w);
    const std::size_t fsz = static_cast<std::size_t>(clip.h) * clip.w * 3;
    for (int k = 0; k < 5; ++k)
        CHECK(std::equal(got.begin() + k * fsz, got.begin() + (k + 1) * fsz,
                         src.begin() + (2 + 3 * k) * fsz));
}

TEST_CASE("sample_training_clip draws strides uniformly") {
    SynthSource source(99, 4, SynthConfig{.frames = 48});
    Rng rng = make_rng(5, 0);
    const int draws = 3000;
    int counts[4] = {0, 0, 0, 0};
    for (int i = 0; i < draws; ++i) {
        VideoClip clip = sample_training_clip(source, 7, {1, 3}, rng);
        CHECK(clip.t == 7);
        REQUIRE(clip.frame_interval >= 1);
        REQUIRE(clip.frame_interval <= 3);
        counts[clip.frame_interval] += 1;
    }
    // Each stride ~draws/3; allow 3 sigma of binomial noise.
    const double expect = draws / 3.0;
    const double sigma = std::sqrt(draws * (1.0 / 3.0) * (2.0 / 3.0));
    for (int s = 1; s <= 3; ++s) CHECK(std::abs(counts[s] - expect) <= 3.0 * sigma);
}

TEST_CASE("sample_training_clip redraws infeasible strides and errors when none fit") {
    SynthSource source(99, 2, SynthConfig{.frames = 48});
    Rng rng = make_rng(6, 0);
    // length 25: stride 2 needs frame 48, so only stride 1 is feasible.
    for (int i = 0; i < 50; ++i) {
        VideoClip clip = sample_training_clip(source, 25, {1, 3}, rng);
        CHECK(clip.frame_interval == 1);
    }
    CHECK_THROWS_AS(sample_training_clip(source, 30, {2, 4}, rng), DataError);
}

TEST_CASE("eval clips are the first window of each source at stride 1") {
    SynthSource source(123, 3, SynthConfig{.frames = 48});
    std::vector<VideoClip> evals = eval_clips(source, 3, 7);
    REQUIRE(evals.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(evals[i].t == 7);
        CHECK(evals[i].frame_interval == 1);
        const VideoClip& src = source.get(i);
        const std::size_t n = static_cast<std::size_t>(7) * src.h * src.w * 3;
        CHECK(std::equal(evals[i].data.begin(), evals[i].data.begin() + n, src.data.begin()));
    }
}

TEST_CASE("clip validation enforces invariants") {
    VideoClip ok = synth_redundant_clip(1, SynthConfig{.frames = 2});
    validate(ok);
    VideoClip bad = ok;
    bad.data[10] = 1.5f;
    CHECK_THROWS_AS(validate(bad), DataError);
    VideoClip tiny(1, 4, 4);
    CHECK_THROWS_AS(validate(tiny), DataError);
    VideoClip zero_interval = ok;
    zero_interval.frame_interval = 0;
    CHECK_THROWS_AS(validate(zero_interval), DataError);
}
