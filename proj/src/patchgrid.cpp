#include "reftok/patchgrid.hpp"

#include <cmath>

namespace reftok {

GridShape grid_shape_for(int T, int H, int W, const PatchSpec& spec) {
    if (spec.t < 1 || spec.h < 1 || spec.w < 1) throw DataError("patch extents must be >= 1");
    if (T % spec.t != 0 || H % spec.h != 0 || W % spec.w != 0)
        throw DataError("patch spec " + std::to_string(spec.t) + "x" + std::to_string(spec.h) + "x" +
                        std::to_string(spec.w) + " does not divide clip " + std::to_string(T) + "x" +
                        std::to_string(H) + "x" + std::to_string(W));
    return GridShape{T / spec.t, H / spec.h, W / spec.w};
}

TokenGrid patchify(const VideoClip& clip, const PatchSpec& spec) {
    GridShape shape = grid_shape_for(clip.t, clip.h, clip.w, spec);
    TokenGrid grid;
    grid.shape = shape;
    grid.dim = spec.patch_dim(clip.c);
    grid.values.resize(static_cast<std::size_t>(shape.sites()) * grid.dim);

    int s = 0;
    for (int i = 0; i < shape.tau; ++i)
        for (int j = 0; j < shape.eta; ++j)
            for (int k = 0; k < shape.omega; ++k, ++s) {
                float* dst = grid.site(s);
                int n = 0;
                for (int dt = 0; dt < spec.t; ++dt)
                    for (int dy = 0; dy < spec.h; ++dy)
                        for (int dx = 0; dx < spec.w; ++dx)
                            for (int ch = 0; ch < clip.c; ++ch)
                                dst[n++] = clip.at(i * spec.t + dt, j * spec.h + dy, k * spec.w + dx, ch);
            }
    return grid;
}

VideoClip unpatchify(const TokenGrid& grid, const PatchSpec& spec, int channels) {
    if (grid.discrete) throw DataError("unpatchify needs a continuous token grid");
    if (grid.dim != spec.patch_dim(channels))
        throw DataError("payload dim " + std::to_string(grid.dim) + " does not match patch spec dim " +
                        std::to_string(spec.patch_dim(channels)));
    const GridShape& g = grid.shape;
    VideoClip clip(g.tau * spec.t, g.eta * spec.h, g.omega * spec.w, channels);

    int s = 0;
    for (int i = 0; i < g.tau; ++i)
        for (int j = 0; j < g.eta; ++j)
            for (int k = 0; k < g.omega; ++k, ++s) {
                const float* src = grid.site(s);
                int n = 0;
                for (int dt = 0; dt < spec.t; ++dt)
                    for (int dy = 0; dy < spec.h; ++dy)
                        for (int dx = 0; dx < spec.w; ++dx)
                            for (int ch = 0; ch < channels; ++ch)
                                clip.at(i * spec.t + dt, j * spec.h + dy, k * spec.w + dx, ch) = src[n++];
            }
    return clip;
}

long long compression_ratio(const PatchSpec& spec) {
    return static_cast<long long>(spec.t) * spec.h * spec.w;
}

std::string compression_ratio_string(const PatchSpec& spec) {
    return std::to_string(compression_ratio(spec)) + ":1";
}

double bit_compression_ratio(const PatchSpec& spec, int codebook_size) {
    if (codebook_size < 2) throw DataError("codebook size must be >= 2");
    double pixel_bits = 24.0 * static_cast<double>(compression_ratio(spec));
    return pixel_bits / std::log2(static_cast<double>(codebook_size));
}

double rgb_space_size(int patch_h, int patch_w, int channels, long long levels) {
    if (levels < 1) throw DataError("levels must be >= 1");
    if (levels == 1) return 0.0;
    double exponent = static_cast<double>(patch_h) * patch_w * channels;
    return exponent * std::log10(static_cast<double>(levels));
}

}  // namespace reftok
