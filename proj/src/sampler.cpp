#include "reftok/sampler.hpp"

#include <algorithm>
#include <filesystem>

#include "reftok/image_io.hpp"

namespace fs = std::filesystem;

namespace reftok {

SynthSource::SynthSource(std::uint64_t dataset_seed, int n_sources, SynthConfig cfg)
    : seed_(dataset_seed), n_(n_sources), cfg_(cfg), cache_(n_sources) {
    if (n_sources < 1) throw DataError("need at least one synthetic source");
}

std::uint64_t SynthSource::source_seed(int i) const { return derive_seed(seed_, static_cast<std::uint64_t>(i)); }

const VideoClip& SynthSource::get(int i) const {
    if (i < 0 || i >= n_) throw DataError("source index out of range");
    if (!cache_[i]) cache_[i] = synth_redundant_clip(source_seed(i), cfg_);
    return *cache_[i];
}

DirSource::DirSource(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string p = entry.path().string();
        if (entry.is_directory() || (entry.is_regular_file() && p.size() > 4 && p.substr(p.size() - 4) == ".rvc"))
            entries_.push_back(p);
    }
    std::sort(entries_.begin(), entries_.end());
    if (entries_.empty()) throw DataError("no clips (.rvc files or frame directories) in " + dir);
    cache_.resize(entries_.size());
}

const VideoClip& DirSource::get(int i) const {
    if (i < 0 || i >= count()) throw DataError("source index out of range");
    if (!cache_[i]) {
        const std::string& p = entries_[i];
        if (fs::is_regular_file(p)) {
            cache_[i] = load_rvc(p);
        } else {
            int n = static_cast<int>(list_frame_dir(p).size());
            cache_[i] = load_clip(p, 0, n, 1);
        }
    }
    return *cache_[i];
}

VideoClip sample_training_clip(const ClipSource& source, int length,
                               std::pair<int, int> interval_range, Rng& rng) {
    auto [lo, hi] = interval_range;
    if (lo < 1 || hi < lo) throw DataError("bad interval range");
    if (length < 1) throw DataError("clip length must be >= 1");

    int idx = uniform_int(rng, 0, source.count() - 1);
    const VideoClip& src = source.get(idx);

    auto span = [&](int stride) { return (length - 1) * stride + 1; };
    int stride = uniform_int(rng, lo, hi);
    if (span(stride) > src.t) {
        // re-draw from the feasible sub-range
        int max_feasible = length > 1 ? (src.t - 1) / (length - 1) : hi;
        max_feasible = std::min(max_feasible, hi);
        if (max_feasible < lo)
            throw DataError("source " + src.source_id + " too short: " + std::to_string(src.t) +
                            " frames cannot fit length " + std::to_string(length) + " at stride " +
                            std::to_string(lo));
        stride = uniform_int(rng, lo, max_feasible);
    }
    int start = uniform_int(rng, 0, src.t - span(stride));

    VideoClip out(length, src.h, src.w, src.c);
    const std::size_t frame_sz = static_cast<std::size_t>(src.h) * src.w * src.c;
    for (int f = 0; f < length; ++f)
        std::copy_n(src.frame(start + f * stride), frame_sz, out.frame(f));
    out.frame_interval = stride;
    out.source_id = src.source_id;
    return out;
}

std::vector<VideoClip> eval_clips(const ClipSource& source, int n, int length) {
    if (n < 1) throw DataError("need at least one eval clip");
    std::vector<VideoClip> out;
    for (int i = 0; i < std::min(n, source.count()); ++i) {
        const VideoClip& src = source.get(i);
        if (src.t < length)
            throw DataError("source " + src.source_id + " shorter than eval clip length");
        VideoClip clip(length, src.h, src.w, src.c);
        const std::size_t frame_sz = static_cast<std::size_t>(src.h) * src.w * src.c;
        for (int f = 0; f < length; ++f) std::copy_n(src.frame(f), frame_sz, clip.frame(f));
        clip.frame_interval = 1;
        clip.source_id = src.source_id;
        out.push_back(std::move(clip));
    }
    return out;
}

}  // namespace reftok
