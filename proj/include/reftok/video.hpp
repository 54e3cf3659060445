#pragma once

// Raw video clips: a T x H x W x C block of floats in [0,1] plus
// frame-interval metadata. Owns the ".rvc" raw clip file format.

#include <cstdint>
#include <string>
#include <vector>

#include "reftok/errors.hpp"

namespace reftok {

struct VideoClip {
    int t = 0;
    int h = 0;
    int w = 0;
    int c = 3;
    int frame_interval = 1;  // source-frame stride this clip was sampled at
    std::string source_id;
    std::vector<float> data;  // row-major (t, y, x, c), values in [0,1]

    VideoClip() = default;
    VideoClip(int t_, int h_, int w_, int c_ = 3)
        : t(t_), h(h_), w(w_), c(c_), data(static_cast<std::size_t>(t_) * h_ * w_ * c_, 0.f) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(t) * h * w; }
    std::size_t size() const { return pixel_count() * c; }

    float& at(int ti, int y, int x, int ch) {
        return data[((static_cast<std::size_t>(ti) * h + y) * w + x) * c + ch];
    }
    float at(int ti, int y, int x, int ch) const {
        return data[((static_cast<std::size_t>(ti) * h + y) * w + x) * c + ch];
    }

    // Frame f as a flat span of h*w*c floats.
    const float* frame(int f) const { return data.data() + static_cast<std::size_t>(f) * h * w * c; }
    float* frame(int f) { return data.data() + static_cast<std::size_t>(f) * h * w * c; }
};

// Throws DataError if the clip violates its invariants (T>=1, H,W>=8,
// values in [0,1], frame_interval>=1).
void validate(const VideoClip& clip);

struct ClipSplit {
    VideoClip reference;  // the x_r frames
    VideoClip target;     // the x_t frames
};

// reference = first n_ref_frames frames, target = the rest, order preserved.
ClipSplit split_reference(const VideoClip& clip, int n_ref_frames);

// Inverse of split_reference.
VideoClip concat_clips(const VideoClip& a, const VideoClip& b);

// Appends copies of the last frame until T is a multiple of t_patch.
VideoClip replicate_pad_reference(const VideoClip& ref, int t_patch);

// u8 conversion used by every external format. round(v*255) with clamping.
std::uint8_t float_to_u8(float v);
inline float u8_to_float(std::uint8_t v) { return static_cast<float>(v) / 255.f; }

std::vector<std::uint8_t> clip_to_u8(const VideoClip& clip);
VideoClip clip_from_u8(const std::uint8_t* bytes, int t, int h, int w, int c);

// ".rvc" format: magic "RVC1", u32le T,H,W,C, then T*H*W*C bytes u8
// row-major (t,y,x,c).
void save_rvc(const VideoClip& clip, const std::string& path);
VideoClip load_rvc(const std::string& path);

}  // namespace reftok
