#pragma once

// 3D patchification between pixel space and token lattices, plus
// compression-ratio accounting.
//
// A clip of T x H x W x C pixels under a t x h x w patch spec becomes a
// tau x eta x omega lattice (tau=T/t, eta=H/h, omega=W/w) of tokens. Each
// site holds the flattened cuboid in (t, y, x, c) order. Sites are stored
// row-major in (t, y, x) order.

#include <string>
#include <vector>

#include "reftok/video.hpp"

namespace reftok {

struct PatchSpec {
    int t = 1;
    int h = 1;
    int w = 1;

    int patch_dim(int channels = 3) const { return t * h * w * channels; }
    bool operator==(const PatchSpec&) const = default;
};

struct GridShape {
    int tau = 0;
    int eta = 0;
    int omega = 0;

    int sites() const { return tau * eta * omega; }
    bool operator==(const GridShape&) const = default;
};

struct TokenGrid {
    GridShape shape;
    bool discrete = false;
    int dim = 0;                // payload dim per site when continuous
    std::vector<float> values;  // sites x dim,  site-major
    std::vector<int> indices;   // sites,        when discrete

    const float* site(int s) const { return values.data() + static_cast<std::size_t>(s) * dim; }
    float* site(int s) { return values.data() + static_cast<std::size_t>(s) * dim; }
};

GridShape grid_shape_for(int T, int H, int W, const PatchSpec& spec);

TokenGrid patchify(const VideoClip& clip, const PatchSpec& spec);
VideoClip unpatchify(const TokenGrid& grid, const PatchSpec& spec, int channels = 3);

// Pixels represented per discrete token: t*h*w.
long long compression_ratio(const PatchSpec& spec);
std::string compression_ratio_string(const PatchSpec& spec);

// Secondary bits-level readout: (24-bit pixels per patch) / log2(K) per token.
double bit_compression_ratio(const PatchSpec& spec, int codebook_size);

// log10 of the number of distinct spatial patches: h*w*C * log10(levels).
// levels == 1 returns 0 by convention.
double rgb_space_size(int patch_h, int patch_w, int channels, long long levels);

}  // namespace reftok
