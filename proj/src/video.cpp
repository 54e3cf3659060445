#include "reftok/video.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "reftok/serialize.hpp"

namespace reftok {

void validate(const VideoClip& clip) {
    if (clip.t < 1) throw DataError("clip must have at least one frame");
    if (clip.h < 8 || clip.w < 8) throw DataError("clip frames must be at least 8x8");
    if (clip.c != 3) throw DataError("clip must have 3 channels");
    if (clip.frame_interval < 1) throw DataError("frame_interval must be >= 1");
    if (clip.data.size() != clip.size()) throw DataError("clip buffer size does not match shape");
    for (float v : clip.data)
        if (!(v >= 0.f && v <= 1.f)) throw DataError("clip values must lie in [0,1]");
}

ClipSplit split_reference(const VideoClip& clip, int n_ref_frames) {
    if (n_ref_frames < 1 || n_ref_frames >= clip.t)
        throw DataError("n_ref_frames must be in [1, T); got " + std::to_string(n_ref_frames) +
                        " for T=" + std::to_string(clip.t));
    ClipSplit out;
    out.reference = VideoClip(n_ref_frames, clip.h, clip.w, clip.c);
    out.target = VideoClip(clip.t - n_ref_frames, clip.h, clip.w, clip.c);
    const std::size_t frame_sz = static_cast<std::size_t>(clip.h) * clip.w * clip.c;
    std::copy_n(clip.data.begin(), frame_sz * n_ref_frames, out.reference.data.begin());
    std::copy_n(clip.data.begin() + static_cast<std::ptrdiff_t>(frame_sz) * n_ref_frames,
                frame_sz * (clip.t - n_ref_frames), out.target.data.begin());
    out.reference.frame_interval = clip.frame_interval;
    out.target.frame_interval = clip.frame_interval;
    out.reference.source_id = clip.source_id;
    out.target.source_id = clip.source_id;
    return out;
}

VideoClip concat_clips(const VideoClip& a, const VideoClip& b) {
    if (a.h != b.h || a.w != b.w || a.c != b.c) throw DataError("concat: frame shape mismatch");
    VideoClip out(a.t + b.t, a.h, a.w, a.c);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
    out.frame_interval = a.frame_interval;
    out.source_id = a.source_id;
    return out;
}

VideoClip replicate_pad_reference(const VideoClip& ref, int t_patch) {
    if (t_patch < 1) throw DataError("t_patch must be >= 1");
    int padded_t = ((ref.t + t_patch - 1) / t_patch) * t_patch;
    if (padded_t == ref.t) return ref;
    VideoClip out(padded_t, ref.h, ref.w, ref.c);
    out.frame_interval = ref.frame_interval;
    out.source_id = ref.source_id;
    const std::size_t frame_sz = static_cast<std::size_t>(ref.h) * ref.w * ref.c;
    std::copy(ref.data.begin(), ref.data.end(), out.data.begin());
    // pad with copies of the last real frame
    for (int f = ref.t; f < padded_t; ++f)
        std::copy_n(ref.frame(ref.t - 1), frame_sz, out.frame(f));
    return out;
}

std::uint8_t float_to_u8(float v) {
    float clamped = std::min(1.f, std::max(0.f, v));
    return static_cast<std::uint8_t>(std::lround(clamped * 255.f));
}

std::vector<std::uint8_t> clip_to_u8(const VideoClip& clip) {
    std::vector<std::uint8_t> out(clip.data.size());
    for (std::size_t i = 0; i < clip.data.size(); ++i) out[i] = float_to_u8(clip.data[i]);
    return out;
}

VideoClip clip_from_u8(const std::uint8_t* bytes, int t, int h, int w, int c) {
    VideoClip clip(t, h, w, c);
    for (std::size_t i = 0; i < clip.data.size(); ++i) clip.data[i] = u8_to_float(bytes[i]);
    return clip;
}

void save_rvc(const VideoClip& clip, const std::string& path) {
    ByteWriter w;
    w.magic("RVC1");
    w.u32(static_cast<std::uint32_t>(clip.t));
    w.u32(static_cast<std::uint32_t>(clip.h));
    w.u32(static_cast<std::uint32_t>(clip.w));
    w.u32(static_cast<std::uint32_t>(clip.c));
    auto bytes = clip_to_u8(clip);
    w.bytes(bytes.data(), bytes.size());
    w.to_file(path);
}

VideoClip load_rvc(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("RVC1", "raw clip (.rvc)");
    int t = static_cast<int>(r.u32());
    int h = static_cast<int>(r.u32());
    int w = static_cast<int>(r.u32());
    int c = static_cast<int>(r.u32());
    if (t < 1 || h < 1 || w < 1 || c != 3) throw DataError("bad .rvc header: " + path);
    std::size_t n = static_cast<std::size_t>(t) * h * w * c;
    if (r.remaining() != n)
        throw DataError("corrupt .rvc payload: expected " + std::to_string(n) + " bytes, have " +
                        std::to_string(r.remaining()));
    std::vector<std::uint8_t> bytes(n);
    r.bytes(bytes.data(), n);
    VideoClip clip = clip_from_u8(bytes.data(), t, h, w, c);
    clip.source_id = path;
    return clip;
}

}  // namespace reftok
