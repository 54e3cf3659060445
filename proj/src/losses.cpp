#include "reftok/losses.hpp"

#include <cmath>

namespace reftok {

std::shared_ptr<const ad::IndexMat> patches_to_frames_map(const GridShape& grid,
                                                          const PatchSpec& patch, int channels) {
    const int T = grid.tau * patch.t;
    const int H = grid.eta * patch.h;
    const int W = grid.omega * patch.w;
    const int C = channels;
    const int pdim = patch.patch_dim(C);
    auto map = std::make_shared<ad::IndexMat>(T, H * W * C);
    for (int f = 0; f < T; ++f)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c) {
                    int site = ((f / patch.t) * grid.eta + y / patch.h) * grid.omega + x / patch.w;
                    int off = (((f % patch.t) * patch.h + y % patch.h) * patch.w + x % patch.w) * C + c;
                    (*map)(f, (y * W + x) * C + c) = site * pdim + off;
                }
    return map;
}

std::shared_ptr<const ad::IndexMat> im2col_map(int frames, int h, int w, int channels, int k,
                                               int stride) {
    if (h < k || w < k) throw DataError("im2col: feature map smaller than kernel");
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;
    auto map = std::make_shared<ad::IndexMat>(frames * oh * ow, k * k * channels);
    for (int f = 0; f < frames; ++f)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int row = (f * oh + oy) * ow + ox;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx)
                        for (int c = 0; c < channels; ++c) {
                            int y = oy * stride + dy;
                            int x = ox * stride + dx;
                            (*map)(row, (dy * k + dx) * channels + c) =
                                ((f * h + y) * w + x) * channels + c;
                        }
            }
    return map;
}

PerceptualNet::PerceptualNet(std::uint64_t seed) {
    Rng rng = make_rng(seed, 0);
    for (int s = 0; s < kStages; ++s) {
        const int fan_in = kKernel * kKernel * channels_[s];
        filters_[s].resize(fan_in, channels_[s + 1]);
        const float stddev = std::sqrt(2.f / static_cast<float>(fan_in));
        for (int i = 0; i < filters_[s].rows(); ++i)
            for (int j = 0; j < filters_[s].cols(); ++j)
                filters_[s](i, j) = static_cast<float>(normal(rng, 0.0, stddev));
    }
}

Discriminator::Discriminator(std::uint64_t seed) {
    Rng rng = make_rng(seed, 0);
    const int widths[kStages + 1] = {3, 16, 32};
    for (int s = 0; s < kStages; ++s)
        stages_[s] = LinearSpec::create(params, "disc.conv" + std::to_string(s),
                                        kKernel * kKernel * widths[s], widths[s + 1], rng);
    head_ = LinearSpec::create(params, "disc.head", widths[kStages], 1, rng);
}

}  // namespace reftok
