#pragma once

// The tokenizer model: a shared-weight transformer encoder over the joint
// reference+target token sequence (with a one-way attention barrier), a
// vector-quantized bottleneck on target tokens, and a transformer decoder
// that reconstructs target pixels conditioned on continuous reference tokens.
//
// Reference tokens h_r bypass the quantizer entirely; in reference_less
// mode (the joint-tokenization ablation) every token is quantized and the
// loss covers reference and target frames alike.

#include <memory>
#include <string>
#include <vector>

#include "reftok/attnmask.hpp"
#include "reftok/autodiff.hpp"
#include "reftok/nn.hpp"
#include "reftok/patchgrid.hpp"
#include "reftok/posenc.hpp"
#include "reftok/video.hpp"
#include "reftok/vq.hpp"

namespace reftok {

struct ModelConfig {
    int embed_dim = 128;
    int enc_depth = 4;
    int dec_depth = 4;
    int heads = 4;
    int mlp_ratio = 4;
    PatchSpec patch{2, 8, 8};
    int n_ref_frames = 1;
    int codebook_size = 128;
    int code_dim = 64;
    int prune_max = 12;  // at most this many target tokens pruned per training pass
    MaskMode mask_mode = MaskMode::oneway;
    bool reference_less = false;
};

// ---- prune / mask-token bookkeeping ----

// n distinct indices from [0, n_total), sorted ascending.
std::vector<int> draw_prune_indices(int n_total, int n, Rng& rng);
std::vector<int> survivors_of(int n_total, const std::vector<int>& pruned);

// Rebuild a full-length sequence from survivors plus a learned mask row at
// each pruned index. Survivors keep their original order and positions.
template <class S>
ad::Var<S> insert_mask_rows(ad::Var<S> kept, ad::Var<S> mask_row, const std::vector<int>& pruned,
                            int full_len) {
    const int n_kept = static_cast<int>(kept.rows());
    const int n_pruned = static_cast<int>(pruned.size());
    if (n_kept + n_pruned != full_len)
        throw DataError("mask insertion: survivor plus pruned count must equal full length");
    std::vector<int> order(full_len, -1);
    for (int i = 0; i < n_pruned; ++i) {
        int p = pruned[i];
        if (p < 0 || p >= full_len || order[p] != -1)
            throw DataError("mask insertion: bad or colliding prune index");
        order[p] = n_kept + i;
    }
    int next = 0;
    for (int i = 0; i < full_len; ++i)
        if (order[i] == -1) order[i] = next++;
    if (n_pruned == 0) return kept;
    std::vector<int> zeros(n_pruned, 0);
    ad::Var<S> masks = ad::gather_rows(mask_row, zeros);
    return ad::gather_rows(ad::concat_rows<S>({kept, masks}), order);
}

// ---- per-forward instrumentation ----

struct ForwardStats {
    int ref_tokens = 0;
    int target_tokens = 0;
    int quantized_rows = 0;  // rows that went through the quantizer
    int pruned = 0;
    // True iff no reference token passed through the quantizer. Always true
    // in reftok mode by construction; false in reference_less mode.
    bool href_bypassed_quantizer = false;
};

// Frozen per-forward choices so finite-difference checks can re-run the
// graph with the quantizer held fixed as an identity-with-offset.
struct ForwardPlan {
    std::vector<int> prune_indices;
    std::vector<int> code_indices;  // assignment for the quantized rows
    MatF base_codes;                // encoder outputs at the freeze point
    MatF quantized;                 // codebook rows chosen at the freeze point
    bool frozen = false;
};

template <class S>
struct ClipForward {
    ad::Var<S> pred;         // reconstructed patches, unclamped
    ad::Var<S> truth;        // matching ground-truth patches (constant)
    ad::Var<S> commitment;   // scalar pull of encoder outputs toward codes
    std::vector<int> code_indices;
    MatF code_inputs;        // float encoder outputs fed to the quantizer (EMA food)
    std::vector<int> prune_indices;
    GridShape ref_grid, tgt_grid;
    ForwardStats stats;
};

class TokenizerModel {
public:
    TokenizerModel(ModelConfig cfg, std::uint64_t seed);

    ModelConfig cfg;
    ParamStore params;
    Codebook book;

    // ---- training forward (templated so float64 checks reuse the graph) ----
    //
    // plan: when frozen, reuses its prune indices and quantizer offsets;
    // otherwise it is filled in from this pass. prune_rng drives pruning and
    // may be null to disable pruning.
    template <class S>
    ClipForward<S> forward_clip(Ctx<S>& ctx, const ClipSplit& split, ForwardPlan& plan,
                                Rng* prune_rng) const;

    // ---- float inference paths ----

    struct EncodedClip {
        VideoClip raw_reference;  // unpadded reference frames as stored in streams
        VideoClip target;
        GridShape ref_grid, tgt_grid;
        std::vector<int> indices;  // one code per target site
    };

    // Joint deterministic encode of a full clip (no pruning).
    EncodedClip encode_clip(const VideoClip& clip) const;

    // Reference tokens from the reference frames ALONE; the decode path ever
    // sees only this (stream decoding cannot touch target pixels).
    MatF reference_tokens(const VideoClip& raw_reference) const;

    // Reference rows of the encoder output from the JOINT pass over the
    // whole clip. Under the one-way barrier this matches reference_tokens;
    // the causality audit compares the two and sweeps target blocks.
    MatF joint_reference_rows(const VideoClip& clip) const;

    // Decode target frames from stored indices plus the raw reference.
    VideoClip decode_indices(const VideoClip& raw_reference, const std::vector<int>& indices,
                             const GridShape& tgt_grid) const;

    // Full in-process round trip used by evaluation; equals the stream
    // round trip because it is composed of the same two calls.
    VideoClip reconstruct(const VideoClip& clip) const;

    // Joint-tokenization round trip (reference_less): everything quantized;
    // returns reconstructed target frames (reference reconstruction is
    // produced too but only targets are scored).
    VideoClip reconstruct_reference_less(const VideoClip& clip) const;

    ForwardStats last_stats() const { return last_stats_; }

    int target_sites(const VideoClip& target) const {
        return grid_shape_for(target.t, target.h, target.w, cfg.patch).sites();
    }

    // ---- checkpoint io ----
    void save_checkpoint(const std::string& path, int step, const std::string& extra_json = "") const;
    struct LoadResult {
        int step = 0;
        std::string extra_json;
    };
    LoadResult load_checkpoint(const std::string& path);
    static ModelConfig peek_config(const std::string& path);

private:
    LinearSpec embed_;
    LinearSpec to_code_;
    LinearSpec r_in_, z_in_;
    LinearSpec head_;
    TransformerSpec enc_, dec_;

    mutable ForwardStats last_stats_;

    template <class S>
    ad::Var<S> embed_sequence(Ctx<S>& ctx, const MatF& ref_patches, const MatF& tgt_patches,
                              const GridShape& ref_grid, const GridShape& tgt_grid) const;

    // Decoder trunk over [reference rows; code rows]; returns every output
    // row (before the pixel head) so callers pick which rows to predict.
    template <class S>
    ad::Var<S> decode_trunk(Ctx<S>& ctx, ad::Var<S> ref_rows, ad::Var<S> code_rows,
                            const GridShape& ref_grid, const GridShape& tgt_grid) const;

    MatF patch_matrix(const VideoClip& clip) const;
    VideoClip clip_of_patches(const MatF& rows, const GridShape& grid) const;
    VideoClip padded_reference(const VideoClip& raw_ref) const;
};

// ---- template implementations ----

template <class S>
ad::Var<S> TokenizerModel::embed_sequence(Ctx<S>& ctx, const MatF& ref_patches,
                                          const MatF& tgt_patches, const GridShape& ref_grid,
                                          const GridShape& tgt_grid) const {
    using ad::Var;
    const int n_ref = ref_grid.sites();
    const int n_tgt = tgt_grid.sites();
    // One shared timeline: reference occupies the earliest temporal slots.
    GridShape full{ref_grid.tau + tgt_grid.tau, ref_grid.eta, ref_grid.omega};
    MatF pos = build_3d_positions(full, cfg.embed_dim);
    MatF seq_in(n_ref + n_tgt, ref_patches.cols());
    seq_in.topRows(n_ref) = ref_patches;
    seq_in.bottomRows(n_tgt) = tgt_patches;

    Var<S> x = embed_.apply(ctx, ctx.tape->constant(seq_in.cast<S>()));
    Var<S> pos_c = ctx.tape->constant(pos.template cast<S>());
    x = ad::add(x, pos_c);

    Var<S> seg = ctx.use("seg_enc");  // 2 x D: row 0 reference, row 1 target
    std::vector<int> seg_idx(n_ref + n_tgt, 1);
    std::fill(seg_idx.begin(), seg_idx.begin() + n_ref, 0);
    x = ad::add(x, ad::gather_rows(seg, seg_idx));
    return x;
}

template <class S>
ad::Var<S> TokenizerModel::decode_trunk(Ctx<S>& ctx, ad::Var<S> ref_rows, ad::Var<S> code_rows,
                                        const GridShape& ref_grid, const GridShape& tgt_grid) const {
    using ad::Var;
    const int n_ref = ref_grid.sites();
    const int n_tgt = tgt_grid.sites();
    GridShape full{ref_grid.tau + tgt_grid.tau, ref_grid.eta, ref_grid.omega};
    MatF pos = build_3d_positions(full, cfg.embed_dim);

    Var<S> x = ad::concat_rows<S>({ref_rows, code_rows});
    x = ad::add(x, ctx.tape->constant(pos.template cast<S>()));
    Var<S> seg = ctx.use("seg_dec");
    std::vector<int> seg_idx(n_ref + n_tgt, 1);
    std::fill(seg_idx.begin(), seg_idx.begin() + n_ref, 0);
    x = ad::add(x, ad::gather_rows(seg, seg_idx));

    // Decoder attends freely across the whole sequence.
    return dec_.apply(ctx, x, nullptr);
}

template <class S>
ClipForward<S> TokenizerModel::forward_clip(Ctx<S>& ctx, const ClipSplit& split, ForwardPlan& plan,
                                            Rng* prune_rng) const {
    using ad::Var;
    ClipForward<S> out;
    const VideoClip& ref = split.reference;
    const VideoClip& tgt = split.target;
    if (ref.t % cfg.patch.t != 0)
        throw DataError("forward: reference frames not padded to the temporal patch size");
    out.ref_grid = grid_shape_for(ref.t, ref.h, ref.w, cfg.patch);
    out.tgt_grid = grid_shape_for(tgt.t, tgt.h, tgt.w, cfg.patch);
    const int n_ref = out.ref_grid.sites();
    const int n_tgt = out.tgt_grid.sites();

    TokenGrid ref_grid_tokens = patchify(ref, cfg.patch);
    TokenGrid tgt_grid_tokens = patchify(tgt, cfg.patch);
    MatF ref_patches = Eigen::Map<const MatF>(ref_grid_tokens.values.data(), n_ref, ref_grid_tokens.dim);
    MatF tgt_patches = Eigen::Map<const MatF>(tgt_grid_tokens.values.data(), n_tgt, tgt_grid_tokens.dim);

    Var<S> x = embed_sequence(ctx, ref_patches, tgt_patches, out.ref_grid, out.tgt_grid);
    auto mask = build_reference_attention_mask(n_ref, n_tgt, cfg.reference_less ? MaskMode::none
                                                                                : cfg.mask_mode);
    Var<S> h = enc_.apply(ctx, x, mask);

    ForwardStats stats;
    stats.ref_tokens = n_ref;
    stats.target_tokens = n_tgt;

    // ---- bottleneck ----
    // reftok: only target tokens are projected into code space and quantized.
    // reference_less: every token is quantized; nothing bypasses.
    const int quant_first = cfg.reference_less ? 0 : n_ref;
    const int quant_count = cfg.reference_less ? n_ref + n_tgt : n_tgt;
    Var<S> to_quant_full = to_code_.apply(ctx, ad::slice_rows(h, quant_first, quant_count));

    // Pruning applies to target rows only, in both modes.
    std::vector<int> pruned;
    if (plan.frozen) {
        pruned = plan.prune_indices;
    } else if (prune_rng != nullptr && cfg.prune_max > 0) {
        if (cfg.prune_max >= n_tgt) throw DataError("prune_max must stay below the target token count");
        int n = uniform_int(*prune_rng, 0, cfg.prune_max);
        pruned = draw_prune_indices(n_tgt, n, *prune_rng);
    }
    const int tgt_offset_in_quant = quant_count - n_tgt;  // 0 in reftok, n_ref in reference_less
    std::vector<int> keep_rows;
    keep_rows.reserve(quant_count - pruned.size());
    for (int i = 0; i < tgt_offset_in_quant; ++i) keep_rows.push_back(i);
    for (int s : survivors_of(n_tgt, pruned)) keep_rows.push_back(tgt_offset_in_quant + s);
    Var<S> to_quant = ad::gather_rows(to_quant_full, keep_rows);

    MatF code_in = to_quant.val().template cast<float>();
    MatF quantized;
    std::vector<int> code_idx;
    if (plan.frozen) {
        code_idx = plan.code_indices;
        quantized = plan.quantized;
        if (quantized.rows() != to_quant.rows())
            throw DataError("frozen plan does not match the forward shape");
    } else {
        QuantizeResult q = quantize(code_in, book);
        code_idx = q.indices;
        quantized = q.quantized;
        plan.prune_indices = pruned;
        plan.code_indices = code_idx;
        plan.base_codes = code_in;
        plan.quantized = quantized;
    }
    const MatF& base = plan.frozen ? plan.base_codes : code_in;

    // Straight-through: z = c + const(q - c_base). During training base == c,
    // so forward equals the code vectors and the gradient passes as identity.
    ad::Mat<S> offset = (quantized - base).template cast<S>();
    Var<S> z = ad::add(to_quant, ctx.tape->constant(std::move(offset)));
    Var<S> q_const = ctx.tape->constant(quantized.template cast<S>());
    out.commitment = ad::mean_sq_diff(to_quant, q_const);

    stats.quantized_rows = static_cast<int>(code_in.rows());
    stats.pruned = static_cast<int>(pruned.size());
    stats.href_bypassed_quantizer = !cfg.reference_less;

    // ---- rebuild full sequence for the decoder ----
    Var<S> mask_row = ctx.use("dec.mask_token");
    Var<S> ref_path, code_path;
    if (cfg.reference_less) {
        Var<S> full = [&] {
            if (pruned.empty()) return z;
            // Split quantized rows back into ref block and target survivors.
            Var<S> ref_codes = ad::slice_rows(z, 0, n_ref);
            Var<S> tgt_codes = ad::slice_rows(z, n_ref, static_cast<int>(z.rows()) - n_ref);
            Var<S> tgt_full = insert_mask_rows(tgt_codes, mask_row, pruned, n_tgt);
            return ad::concat_rows<S>({ref_codes, tgt_full});
        }();
        Var<S> mapped = z_in_.apply(ctx, full);
        ref_path = ad::slice_rows(mapped, 0, n_ref);
        code_path = ad::slice_rows(mapped, n_ref, n_tgt);
    } else {
        Var<S> h_r = ad::slice_rows(h, 0, n_ref);
        ref_path = r_in_.apply(ctx, h_r);
        Var<S> z_full = insert_mask_rows(z, mask_row, pruned, n_tgt);
        code_path = z_in_.apply(ctx, z_full);
    }

    Var<S> trunk = decode_trunk(ctx, ref_path, code_path, out.ref_grid, out.tgt_grid);

    if (cfg.reference_less) {
        // Loss covers every token: the head predicts reference patches too.
        out.pred = head_.apply(ctx, trunk);
        MatF truth(n_ref + n_tgt, ref_patches.cols());
        truth.topRows(n_ref) = ref_patches;
        truth.bottomRows(n_tgt) = tgt_patches;
        out.truth = ctx.tape->constant(truth.template cast<S>());
    } else {
        out.pred = head_.apply(ctx, ad::slice_rows(trunk, n_ref, n_tgt));
        out.truth = ctx.tape->constant(tgt_patches.template cast<S>());
    }
    out.code_indices = code_idx;
    out.code_inputs = code_in;
    out.prune_indices = pruned;
    out.stats = stats;
    last_stats_ = stats;
    return out;
}

}  // namespace reftok
