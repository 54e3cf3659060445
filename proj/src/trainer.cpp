#include "reftok/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <ostream>

namespace reftok {

using nlohmann::json;

std::string metrics_json_line(const StepMetrics& m) {
    json j;
    j["step"] = m.step;
    j["recon"] = m.recon;
    j["perplexity"] = m.perplexity;
    j["utilization"] = m.utilization;
    j["lr"] = m.lr;
    return j.dump();
}

Trainer::Trainer(TokenizerModel& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
    if (cfg_.recon_weight < 0 || cfg_.perceptual_weight < 0 || cfg_.adversarial_weight < 0 ||
        cfg_.commitment_weight < 0 || cfg_.codebook_weight < 0)
        throw ConfigError("loss weights must be non-negative");
    if (cfg_.steps < 1 || cfg_.batch_size < 1) throw ConfigError("steps and batch size must be positive");

    AdamWConfig oc;
    oc.lr = cfg_.lr;
    oc.weight_decay = cfg_.weight_decay;
    opt_ = AdamW(oc);
    if (cfg_.perceptual_weight > 0) perceptual_.emplace(derive_seed(cfg_.seed, 100));
    if (cfg_.adversarial_weight > 0) {
        disc_.emplace(derive_seed(cfg_.seed, 101));
        AdamWConfig dc = oc;
        disc_opt_.emplace(dc);
    }

    if (cfg_.splitting && cfg_.grow_codebook && !cfg_.split_steps.empty() &&
        model_.book.K() == model_.cfg.codebook_size) {
        const int start = model_.cfg.codebook_size >> cfg_.split_steps.size();
        if (start < 1 || (start << cfg_.split_steps.size()) != model_.cfg.codebook_size)
            throw ConfigError("codebook size must be divisible by 2 per scheduled split");
        model_.book.vectors = MatF(model_.book.vectors.topRows(start));
        model_.book.usage = Eigen::VectorXf::Zero(start);
        model_.book.reset_ema_to_current();
    }
}

ClipSplit Trainer::padded_split(const ClipSplit& raw) const {
    return ClipSplit{replicate_pad_reference(raw.reference, model_.cfg.patch.t), raw.target};
}

void Trainer::push_replay(const MatF& rows) {
    const int cap = 1024;
    if (replay_.rows() == 0) replay_ = MatF::Zero(cap, rows.cols());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        replay_.row(replay_cursor_) = rows.row(i);
        replay_cursor_ = (replay_cursor_ + 1) % cap;
        replay_fill_ = std::min(replay_fill_ + 1, cap);
    }
}

void Trainer::maintain_codebook(const MatF& batch_codes, const std::vector<int>& indices) {
    ema_update(model_.book, batch_codes, indices, cfg_.ema_decay);
    push_replay(batch_codes);
}

void Trainer::discriminator_step(const std::vector<ClipSplit>& padded,
                                 const std::vector<MatF>& fake_frames, float lr) {
    ad::Tape<float> tape;
    Ctx<float> ctx(tape, disc_->params);
    ad::Var<float> total = tape.constant(MatF::Zero(1, 1));
    for (std::size_t i = 0; i < padded.size(); ++i) {
        const VideoClip& ref = padded[i].reference;
        const VideoClip& tgt = padded[i].target;
        MatF real;
        if (model_.cfg.reference_less) {
            real.resize(ref.t + tgt.t, tgt.h * tgt.w * tgt.c);
            real.topRows(ref.t) = Eigen::Map<const MatF>(ref.data.data(), ref.t, real.cols());
            real.bottomRows(tgt.t) = Eigen::Map<const MatF>(tgt.data.data(), tgt.t, real.cols());
        } else {
            real = Eigen::Map<const MatF>(tgt.data.data(), tgt.t, tgt.h * tgt.w * tgt.c);
        }
        ad::Var<float> rl = disc_->logits(ctx, tape.constant(real), tgt.h, tgt.w);
        ad::Var<float> fl = disc_->logits(ctx, tape.constant(fake_frames[i]), tgt.h, tgt.w);
        total = ad::add(total, hinge_d_loss(rl, fl));
    }
    total = ad::scale(total, 1.f / static_cast<float>(padded.size()));
    disc_->params.zero_grads();
    tape.backward(total);
    ctx.harvest();
    disc_opt_->step(disc_->params, lr);
}

StepMetrics Trainer::train_step(const std::vector<ClipSplit>& batch) {
    const float lr = lr_at(step_, cfg_.steps, cfg_.warmup, cfg_.lr);
    std::vector<ClipSplit> padded;
    padded.reserve(batch.size());
    for (const ClipSplit& raw : batch) padded.push_back(padded_split(raw));

    Rng prune_rng = make_rng(cfg_.seed, 0x1000000ULL + static_cast<std::uint64_t>(step_));
    std::vector<ForwardPlan> plans(padded.size());
    ad::Tape<float> tape;
    Ctx<float> ctx(tape, model_.params);
    std::vector<ClipForward<float>> fwds;
    float recon_val = 0;
    ad::Var<float> loss = batch_loss(ctx, padded, plans, &prune_rng, &fwds, &recon_val);

    std::vector<MatF> fake_frames;
    if (disc_) {
        // Generator side: push reconstructions toward "real" under a frozen
        // discriminator; the weight update for D happens separately below.
        Ctx<float> dctx(tape, disc_->params, /*train=*/false);
        ad::Var<float> g_total = tape.constant(MatF::Zero(1, 1));
        for (std::size_t i = 0; i < fwds.size(); ++i) {
            GridShape grid = fwds[i].tgt_grid;
            if (model_.cfg.reference_less) grid.tau += fwds[i].ref_grid.tau;
            auto map = patches_to_frames_map(grid, model_.cfg.patch);
            ad::Var<float> pf = ad::reindex(fwds[i].pred, map);
            fake_frames.push_back(pf.val());
            g_total = ad::add(g_total, hinge_g_loss(disc_->logits(dctx, pf, padded[i].target.h,
                                                                  padded[i].target.w)));
        }
        loss = ad::add(loss, ad::scale(g_total, cfg_.adversarial_weight /
                                                    static_cast<float>(fwds.size())));
    }

    const float total_val = loss.val()(0, 0);
    if (!std::isfinite(total_val))
        throw NumericError("training step " + std::to_string(step_ + 1) + ": non-finite loss " +
                           std::to_string(total_val));

    model_.params.zero_grads();
    tape.backward(loss);
    ctx.harvest();
    opt_.step(model_.params, lr);

    Eigen::Index code_rows = 0;
    for (const auto& f : fwds) code_rows += f.code_inputs.rows();
    MatF all_codes(code_rows, model_.cfg.code_dim);
    std::vector<int> all_idx;
    all_idx.reserve(static_cast<std::size_t>(code_rows));
    Eigen::Index at = 0;
    for (const auto& f : fwds) {
        all_codes.middleRows(at, f.code_inputs.rows()) = f.code_inputs;
        at += f.code_inputs.rows();
        all_idx.insert(all_idx.end(), f.code_indices.begin(), f.code_indices.end());
    }
    maintain_codebook(all_codes, all_idx);

    if (disc_) discriminator_step(padded, fake_frames, lr);

    ++step_;
    if (cfg_.splitting) {
        if (std::find(cfg_.split_steps.begin(), cfg_.split_steps.end(), step_) !=
                cfg_.split_steps.end() &&
            2 * model_.book.K() <= model_.cfg.codebook_size) {
            split_double(model_.book, model_.cfg.codebook_size);
            if (replay_fill_ > 0)
                refine_assignments(replay_.topRows(replay_fill_), model_.book, cfg_.refine_iters);
        }
        if (cfg_.dead_replace_every > 0 && step_ % cfg_.dead_replace_every == 0) {
            Rng rng = make_rng(cfg_.seed, 0x2000000ULL + static_cast<std::uint64_t>(step_));
            split_dead_replace(model_.book, rng);
        }
    }

    StepMetrics m;
    m.step = step_;
    m.recon = recon_val;
    m.perplexity = perplexity(model_.book);
    m.utilization = utilization(model_.book);
    m.lr = lr;
    m.total = total_val;
    history_.push_back(m);
    return m;
}

void Trainer::run(const ClipSource& source, const std::string& checkpoint_path,
                  std::ostream* metrics_out) {
    while (step_ < cfg_.steps) {
        Rng srng = make_rng(cfg_.seed, 0x3000000ULL + static_cast<std::uint64_t>(step_));
        std::vector<ClipSplit> batch;
        batch.reserve(cfg_.batch_size);
        for (int b = 0; b < cfg_.batch_size; ++b) {
            VideoClip clip = sample_training_clip(source, cfg_.clip_length, cfg_.interval_range, srng);
            batch.push_back(split_reference(clip, model_.cfg.n_ref_frames));
        }
        StepMetrics m = train_step(batch);
        if (metrics_out) *metrics_out << metrics_json_line(m) << '\n';
        if (!checkpoint_path.empty() && cfg_.checkpoint_every > 0 &&
            step_ % cfg_.checkpoint_every == 0 && step_ < cfg_.steps)
            save(checkpoint_path);
    }
    if (metrics_out) metrics_out->flush();
    if (!checkpoint_path.empty()) save(checkpoint_path);
}

namespace {

double mean_err(const float* a, const float* b, std::size_t n, ReconKind kind) {
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        sum += kind == ReconKind::l1 ? std::abs(d) : d * d;
    }
    return sum / static_cast<double>(n);
}

}  // namespace

CollapseReport Trainer::detect_posterior_collapse(const std::vector<VideoClip>& probe) const {
    if (probe.empty()) throw DataError("collapse probe needs at least one clip");
    double model_sum = 0, copy_sum = 0;
    for (const VideoClip& clip : probe) {
        ClipSplit split = split_reference(clip, model_.cfg.n_ref_frames);
        VideoClip recon = model_.cfg.reference_less ? model_.reconstruct_reference_less(clip)
                                                    : model_.reconstruct(clip);
        const VideoClip& tgt = split.target;
        model_sum += mean_err(recon.data.data(), tgt.data.data(), tgt.data.size(), cfg_.recon_kind);

        // Copy baseline: every target frame predicted as the last reference frame.
        const float* last_ref = split.reference.frame(split.reference.t - 1);
        const std::size_t frame_n = static_cast<std::size_t>(tgt.h) * tgt.w * tgt.c;
        double per_clip = 0;
        for (int f = 0; f < tgt.t; ++f) per_clip += mean_err(tgt.frame(f), last_ref, frame_n, cfg_.recon_kind);
        copy_sum += per_clip / tgt.t;
    }
    CollapseReport r;
    r.utilization = utilization(model_.book);
    r.model_loss = static_cast<float>(model_sum / probe.size());
    r.copy_loss = static_cast<float>(copy_sum / probe.size());
    r.copy_gap = r.model_loss - r.copy_loss;
    r.collapsed = r.utilization < 0.10f && r.copy_gap >= -cfg_.collapse_eps;
    return r;
}

double Trainer::fd_check(const std::vector<ClipSplit>& batch, int n_weights, std::uint64_t seed) {
    std::vector<ClipSplit> padded;
    for (const ClipSplit& raw : batch) padded.push_back(padded_split(raw));

    // Snap weights to a 2^-10 grid so probe steps are exactly representable
    // in float; restore the true weights afterwards.
    auto all = model_.params.all();
    std::vector<MatF> snapshot;
    snapshot.reserve(all.size());
    for (Param* p : all) {
        snapshot.push_back(p->value);
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
            p->value.data()[i] = std::round(p->value.data()[i] * 1024.f) / 1024.f;
    }
    const double h = 1.0 / 1024.0;

    Rng prune_rng = make_rng(seed, 0);
    std::vector<ForwardPlan> plans(padded.size());

    ad::Tape<double> tape;
    Ctx<double> ctx(tape, model_.params);
    ad::Var<double> loss = batch_loss<double>(ctx, padded, plans, &prune_rng, nullptr, nullptr);
    tape.backward(loss);
    for (ForwardPlan& p : plans) p.frozen = true;

    auto eval = [&]() {
        ad::Tape<double> t;
        Ctx<double> c(t, model_.params, /*train=*/false);
        return batch_loss<double>(c, padded, plans, nullptr, nullptr, nullptr).val()(0, 0);
    };

    Rng wrng = make_rng(seed, 1);
    double worst = 0;
    for (int k = 0; k < n_weights; ++k) {
        Param* p = all[static_cast<std::size_t>(uniform_int(wrng, 0, static_cast<int>(all.size()) - 1))];
        Eigen::Index flat = uniform_int(wrng, 0, static_cast<int>(p->value.size()) - 1);
        double analytic = 0;
        if (ctx.bound(p->name) && tape.has_grad(ctx.var_of(p->name).id))
            analytic = tape.grad(ctx.var_of(p->name).id).data()[flat];

        const float orig = p->value.data()[flat];
        p->value.data()[flat] = orig + static_cast<float>(h);
        double up = eval();
        p->value.data()[flat] = orig - static_cast<float>(h);
        double down = eval();
        p->value.data()[flat] = orig;
        double numeric = (up - down) / (2 * h);
        double rel = std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric));
        worst = std::max(worst, rel);
    }

    for (std::size_t i = 0; i < all.size(); ++i) all[i]->value = snapshot[i];
    return worst;
}

void Trainer::save(const std::string& path) const { model_.save_checkpoint(path, step_); }

void Trainer::resume(const std::string& path) {
    auto res = model_.load_checkpoint(path);
    step_ = res.step;
    opt_.set_step_count(step_);
}

}  // namespace reftok
