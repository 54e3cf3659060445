#pragma once

// Clip sources and frame-interval sampling for training.

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "reftok/rng.hpp"
#include "reftok/synth.hpp"
#include "reftok/video.hpp"

namespace reftok {

// A collection of source sequences clips are sampled from.
class ClipSource {
public:
    virtual ~ClipSource() = default;
    virtual int count() const = 0;
    virtual const VideoClip& get(int i) const = 0;
};

// Deterministic synthetic sources; sequence i is generated from a seed
// derived from (dataset_seed, i) and cached.
class SynthSource : public ClipSource {
public:
    SynthSource(std::uint64_t dataset_seed, int n_sources, SynthConfig cfg);
    int count() const override { return n_; }
    const VideoClip& get(int i) const override;
    const SynthConfig& config() const { return cfg_; }
    std::uint64_t source_seed(int i) const;

private:
    std::uint64_t seed_;
    int n_;
    SynthConfig cfg_;
    mutable std::vector<std::optional<VideoClip>> cache_;
};

// A directory whose entries are .rvc files and/or subdirectories of
// numbered PNG frames; each entry is one source sequence.
class DirSource : public ClipSource {
public:
    explicit DirSource(const std::string& dir);
    int count() const override { return static_cast<int>(entries_.size()); }
    const VideoClip& get(int i) const override;

private:
    std::vector<std::string> entries_;
    mutable std::vector<std::optional<VideoClip>> cache_;
};

// Draws a training clip: source uniform, stride uniform over
// interval_range, start uniform over valid offsets. If the drawn stride
// does not fit the source, the stride is re-drawn from the feasible
// sub-range; errors if even stride interval_range.first does not fit.
VideoClip sample_training_clip(const ClipSource& source, int length,
                               std::pair<int, int> interval_range, Rng& rng);

// Evaluation clips: first window of each source at stride 1.
std::vector<VideoClip> eval_clips(const ClipSource& source, int n, int length);

}  // namespace reftok
