#pragma once

// Training losses: pixel reconstruction, a frozen random-feature perceptual
// distance, and an optional hinge-GAN pair on a small patch discriminator.

#include <map>
#include <memory>
#include <tuple>
#include <vector>

#include "reftok/autodiff.hpp"
#include "reftok/nn.hpp"
#include "reftok/patchgrid.hpp"
#include "reftok/rng.hpp"

namespace reftok {

enum class ReconKind { l1, l2 };

template <class S>
ad::Var<S> recon_loss(ad::Var<S> pred, ad::Var<S> truth, ReconKind kind) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw DataError("reconstruction loss: shape mismatch");
    return kind == ReconKind::l1 ? ad::mean_abs_diff(pred, truth) : ad::mean_sq_diff(pred, truth);
}

// Permutation map turning a patch matrix (sites x patch_dim) into a frame
// matrix (T rows x H*W*C cols) inside the autodiff graph.
std::shared_ptr<const ad::IndexMat> patches_to_frames_map(const GridShape& grid,
                                                          const PatchSpec& patch, int channels = 3);

// Valid-region im2col map for a stride-s kxk convolution over a feature
// matrix laid out as rows = F*H*W pixels, cols = C channels.
std::shared_ptr<const ad::IndexMat> im2col_map(int frames, int h, int w, int channels, int k,
                                               int stride);

// A fixed, seeded, randomly initialized conv stack. Weights never train;
// they enter every tape as constants, so the distance is deterministic.
class PerceptualNet {
public:
    explicit PerceptualNet(std::uint64_t seed);

    static constexpr int kStages = 3;

    // frames: F x (h*w*3). Mean squared feature distance across stages.
    template <class S>
    ad::Var<S> loss(ad::Tape<S>& tape, ad::Var<S> a, ad::Var<S> b, int h, int w) const {
        auto fa = features(tape, a, h, w);
        auto fb = features(tape, b, h, w);
        ad::Var<S> total = tape.constant(ad::Mat<S>::Zero(1, 1));
        for (int s = 0; s < kStages; ++s)
            total = ad::add(total, ad::mean_sq_diff(fa[s], fb[s]));
        return ad::scale(total, S(1) / S(kStages));
    }

    template <class S>
    std::vector<ad::Var<S>> features(ad::Tape<S>& tape, ad::Var<S> frames, int h, int w) const {
        const int F = static_cast<int>(frames.rows());
        ad::Var<S> x = ad::reshape(frames, F * h * w, channels_[0]);
        std::vector<ad::Var<S>> out;
        int ch = h, cw = w;
        for (int s = 0; s < kStages; ++s) {
            auto map = im2col_map(F, ch, cw, channels_[s], kKernel, kStride);
            ad::Var<S> cols = ad::reindex(x, map);
            ad::Var<S> filt = tape.constant(filters_[s].template cast<S>());
            x = ad::relu(ad::matmul(cols, filt));
            ch = (ch - kKernel) / kStride + 1;
            cw = (cw - kKernel) / kStride + 1;
            out.push_back(x);
        }
        return out;
    }

private:
    static constexpr int kKernel = 3;
    static constexpr int kStride = 2;
    int channels_[kStages + 1] = {3, 8, 16, 32};
    MatF filters_[kStages];  // (k*k*Cin) x Cout
};

// Small trainable patch discriminator: conv stages then a per-location
// linear head; logits() returns one logit per surviving spatial site.
class Discriminator {
public:
    explicit Discriminator(std::uint64_t seed);

    ParamStore params;

    template <class S>
    ad::Var<S> logits(Ctx<S>& ctx, ad::Var<S> frames, int h, int w) const {
        const int F = static_cast<int>(frames.rows());
        ad::Var<S> x = ad::reshape(frames, F * h * w, 3);
        int ch = h, cw = w;
        int in_ch = 3;
        for (int s = 0; s < kStages; ++s) {
            auto map = im2col_map(F, ch, cw, in_ch, kKernel, kStride);
            ad::Var<S> cols = ad::reindex(x, map);
            x = ad::relu(stages_[s].apply(ctx, cols));
            ch = (ch - kKernel) / kStride + 1;
            cw = (cw - kKernel) / kStride + 1;
            in_ch = stages_[s].out;
        }
        return head_.apply(ctx, x);
    }

private:
    static constexpr int kStages = 2;
    static constexpr int kKernel = 3;
    static constexpr int kStride = 2;
    LinearSpec stages_[kStages];
    LinearSpec head_;
};

// Hinge GAN. d_loss averages its real and fake halves; at all-zero logits
// each half is 1, so d_loss = 1. The fake logits fed to d_loss must come
// from detached generator output (stop-gradient on pixels).
template <class S>
ad::Var<S> hinge_g_loss(ad::Var<S> fake_logits) {
    return ad::scale(ad::mean_all(fake_logits), S(-1));
}

template <class S>
ad::Var<S> hinge_d_loss(ad::Var<S> real_logits, ad::Var<S> fake_logits_detached) {
    ad::Tape<S>& tape = *real_logits.tape;
    ad::Var<S> one_r = tape.constant(ad::Mat<S>::Ones(real_logits.rows(), real_logits.cols()));
    ad::Var<S> one_f = tape.constant(ad::Mat<S>::Ones(fake_logits_detached.rows(), fake_logits_detached.cols()));
    ad::Var<S> real_half = ad::mean_all(ad::relu(ad::sub(one_r, real_logits)));
    ad::Var<S> fake_half = ad::mean_all(ad::relu(ad::add(one_f, fake_logits_detached)));
    return ad::scale(ad::add(real_half, fake_half), S(0.5));
}

}  // namespace reftok
