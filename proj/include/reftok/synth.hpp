#pragma once

// Synthetic clips with strong temporal redundancy: textured glyphs
// (checkerboards, stripes, letter bitmaps) oscillating rigidly over a
// static gradient background. Deterministic for a given (seed, config).

#include <cstdint>
#include <vector>

#include "reftok/rng.hpp"
#include "reftok/video.hpp"

namespace reftok {

struct SynthConfig {
    int frames = 48;
    int height = 32;
    int width = 32;
    int glyphs = 3;
    int glyph_size = 9;
    double motion_amplitude = 2.0;  // max per-axis displacement in pixels
};

struct Rect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool contains(int px, int py) const { return px >= x && px < x + w && py >= y && py < y + h; }
};

// Smallest rectangle covering all of rs.
Rect bounding_union(const std::vector<Rect>& rs);

struct GlyphTrace {
    std::vector<Rect> rects;  // one per frame
};

struct SynthTraceClip {
    VideoClip clip;
    std::vector<GlyphTrace> glyphs;
};

VideoClip synth_redundant_clip(std::uint64_t seed, const SynthConfig& cfg);
SynthTraceClip synth_with_trace(std::uint64_t seed, const SynthConfig& cfg);

// Channel-rotates (r,g,b) -> (b,r,g) inside rect of one frame; used to build
// edited reference frames.
void recolor_region(VideoClip& clip, int frame, const Rect& rect);

}  // namespace reftok
