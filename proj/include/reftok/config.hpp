#pragma once

// Run configuration: a strict TOML subset with sections [data], [model],
// [vq], [train], [generate]. Values are ints, floats, bools, quoted
// strings, or int arrays. Unknown sections or keys are errors that name
// the offender; so are type mismatches and duplicates.

#include <memory>
#include <string>

#include "reftok/maskgen.hpp"
#include "reftok/sampler.hpp"
#include "reftok/trainer.hpp"

namespace reftok {

struct GenRunConfig {
    GenConfig arch;       // vocab/cond_dim are taken from the tokenizer in use
    GenTrainConfig train;
    GenSchedule schedule;
    int target_frames = 0;  // 0: clip_length minus the reference frames
};

struct RunConfig {
    // [data]
    std::string data_dir;  // empty: synthetic source
    std::uint64_t data_seed = 1;
    int n_sources = 64;
    int n_eval = 8;
    SynthConfig synth;

    ModelConfig model;
    TrainConfig train;  // also holds the vq maintenance settings
    GenRunConfig generate;

    std::unique_ptr<ClipSource> make_source() const;
    int generated_target_frames() const {
        return generate.target_frames > 0 ? generate.target_frames
                                          : train.clip_length - model.n_ref_frames;
    }
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

}  // namespace reftok
