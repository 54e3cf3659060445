#pragma once

// Training loop for the tokenizer: weighted loss assembly, AdamW updates,
// EMA codebook maintenance with the splitting schedule, collapse
// diagnostics, JSONL metrics, and checkpointing.

#include <deque>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "reftok/losses.hpp"
#include "reftok/model.hpp"
#include "reftok/optim.hpp"
#include "reftok/sampler.hpp"

namespace reftok {

struct TrainConfig {
    int steps = 2000;
    int batch_size = 4;
    int clip_length = 7;  // 1 reference + 6 target frames at the working scale
    std::pair<int, int> interval_range{1, 3};

    float lr = 1e-4f;
    int warmup = 100;
    float weight_decay = 1e-4f;

    ReconKind recon_kind = ReconKind::l1;
    float recon_weight = 1.0f;
    float perceptual_weight = 0.1f;
    float adversarial_weight = 0.0f;  // off by default at this scale
    float commitment_weight = 0.25f;
    float codebook_weight = 0.0f;  // codes learn through the EMA path instead

    float ema_decay = 0.99f;
    bool splitting = true;             // codebook growth + dead-code repair
    std::vector<int> split_steps{500, 1500};  // doubling points, from K/4 up to K
    int dead_replace_every = 250;
    int refine_iters = 3;
    // With splitting on, a fresh full-size codebook is cut back to
    // K / 2^|split_steps| at construction so the schedule grows it to K.
    bool grow_codebook = true;

    float collapse_eps = 5e-3f;  // copy-gap slack when flagging collapse

    int checkpoint_every = 0;  // 0: final checkpoint only
    std::uint64_t seed = 0;
};

struct StepMetrics {
    int step = 0;  // 1-based count of completed steps
    float recon = 0;
    float perplexity = 0;
    float utilization = 0;
    float lr = 0;
    float total = 0;  // full weighted loss (not part of the JSONL record)
};

struct CollapseReport {
    float utilization = 0;
    float model_loss = 0;
    float copy_loss = 0;  // predict every target frame as the last reference frame
    float copy_gap = 0;   // model_loss - copy_loss; negative means the model wins
    bool collapsed = false;
};

// One line with exactly the fields {step, recon, perplexity, utilization, lr}.
std::string metrics_json_line(const StepMetrics& m);

class Trainer {
public:
    Trainer(TokenizerModel& model, TrainConfig cfg);

    // One optimizer update from a batch of raw splits (references unpadded).
    StepMetrics train_step(const std::vector<ClipSplit>& batch);

    // Full loop: sample, step, log, checkpoint. Restarts cleanly mid-run
    // when the trainer was resumed from a checkpoint.
    void run(const ClipSource& source, const std::string& checkpoint_path,
             std::ostream* metrics_out);

    CollapseReport detect_posterior_collapse(const std::vector<VideoClip>& probe) const;

    // Central-difference audit of the total-loss gradient (adversarial term
    // off, quantizer frozen) over n_weights sampled weight scalars at
    // float64. Returns the worst relative error. Weights are snap-to-grid
    // quantized for the duration so the probe steps are exactly
    // representable; the model is restored afterwards.
    double fd_check(const std::vector<ClipSplit>& batch, int n_weights, std::uint64_t seed);

    int step() const { return step_; }
    const std::vector<StepMetrics>& history() const { return history_; }
    const TrainConfig& config() const { return cfg_; }

    void save(const std::string& path) const;
    void resume(const std::string& path);

    // Loss assembly shared by training and the gradient audit: mean over the
    // batch of recon + commitment + perceptual, each weighted. plans must
    // hold one entry per batch item; frozen entries are replayed.
    template <class S>
    ad::Var<S> batch_loss(Ctx<S>& ctx, const std::vector<ClipSplit>& padded,
                          std::vector<ForwardPlan>& plans, Rng* prune_rng,
                          std::vector<ClipForward<S>>* fwds_out, S* recon_out) const;

private:
    TokenizerModel& model_;
    TrainConfig cfg_;
    AdamW opt_;
    std::optional<PerceptualNet> perceptual_;
    std::optional<Discriminator> disc_;
    std::optional<AdamW> disc_opt_;

    int step_ = 0;
    std::vector<StepMetrics> history_;
    MatF replay_;  // recent quantizer inputs, food for post-split refinement
    int replay_fill_ = 0;
    int replay_cursor_ = 0;

    ClipSplit padded_split(const ClipSplit& raw) const;
    void push_replay(const MatF& rows);
    void maintain_codebook(const MatF& batch_codes, const std::vector<int>& indices);
    void discriminator_step(const std::vector<ClipSplit>& padded,
                            const std::vector<MatF>& fake_frames, float lr);
};

template <class S>
ad::Var<S> Trainer::batch_loss(Ctx<S>& ctx, const std::vector<ClipSplit>& padded,
                               std::vector<ForwardPlan>& plans, Rng* prune_rng,
                               std::vector<ClipForward<S>>* fwds_out, S* recon_out) const {
    if (padded.empty()) throw DataError("training batch is empty");
    if (plans.size() != padded.size()) throw DataError("one forward plan per batch item required");
    ad::Tape<S>& tape = *ctx.tape;
    ad::Var<S> total = tape.constant(ad::Mat<S>::Zero(1, 1));
    S recon_sum = 0;
    for (std::size_t i = 0; i < padded.size(); ++i) {
        ClipForward<S> fwd = model_.forward_clip(ctx, padded[i], plans[i], prune_rng);
        ad::Var<S> recon = recon_loss(fwd.pred, fwd.truth, cfg_.recon_kind);
        recon_sum += recon.val()(0, 0);
        ad::Var<S> item = ad::add(ad::scale(recon, S(cfg_.recon_weight)),
                                  ad::scale(fwd.commitment, S(cfg_.commitment_weight)));
        if (perceptual_) {
            // Reassemble predicted patches into frames; in reference_less
            // mode that includes the (padded) reference frames.
            GridShape grid = fwd.tgt_grid;
            if (model_.cfg.reference_less) grid.tau += fwd.ref_grid.tau;
            auto map = patches_to_frames_map(grid, model_.cfg.patch);
            ad::Var<S> pf = ad::reindex(fwd.pred, map);
            ad::Var<S> tf = ad::reindex(fwd.truth, map);
            ad::Var<S> perc = perceptual_->loss(tape, pf, tf, padded[i].target.h, padded[i].target.w);
            item = ad::add(item, ad::scale(perc, S(cfg_.perceptual_weight)));
        }
        total = ad::add(total, item);
        if (fwds_out) fwds_out->push_back(std::move(fwd));
    }
    if (recon_out) *recon_out = recon_sum / static_cast<S>(padded.size());
    return ad::scale(total, S(1) / static_cast<S>(padded.size()));
}

}  // namespace reftok
