#include "reftok/model.hpp"

#include <algorithm>
#include <json.hpp>

#include "reftok/serialize.hpp"
#include "reftok/tensorio.hpp"

namespace reftok {

using nlohmann::json;

std::vector<int> draw_prune_indices(int n_total, int n, Rng& rng) {
    if (n < 0 || n > n_total) throw DataError("prune count out of range");
    // Partial Fisher-Yates over [0, n_total).
    std::vector<int> pool(n_total);
    for (int i = 0; i < n_total; ++i) pool[i] = i;
    for (int i = 0; i < n; ++i) {
        int j = uniform_int(rng, i, n_total - 1);
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + n);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> survivors_of(int n_total, const std::vector<int>& pruned) {
    std::vector<char> gone(n_total, 0);
    for (int p : pruned) {
        if (p < 0 || p >= n_total || gone[p]) throw DataError("bad prune index set");
        gone[p] = 1;
    }
    std::vector<int> out;
    out.reserve(n_total - pruned.size());
    for (int i = 0; i < n_total; ++i)
        if (!gone[i]) out.push_back(i);
    return out;
}

TokenizerModel::TokenizerModel(ModelConfig c, std::uint64_t seed) : cfg(c) {
    Rng rng = make_rng(seed, 0);
    const int D = cfg.embed_dim;
    const int pd = cfg.patch.patch_dim(3);
    embed_ = LinearSpec::create(params, "embed", pd, D, rng);
    init_trunc_normal(params.create("seg_enc", 2, D).value, rng);
    init_trunc_normal(params.create("seg_dec", 2, D).value, rng);
    enc_ = TransformerSpec::create(params, "enc", cfg.enc_depth, D, cfg.heads, cfg.mlp_ratio, rng);
    to_code_ = LinearSpec::create(params, "to_code", D, cfg.code_dim, rng);
    r_in_ = LinearSpec::create(params, "dec.r_in", D, D, rng);
    z_in_ = LinearSpec::create(params, "dec.z_in", cfg.code_dim, D, rng);
    init_trunc_normal(params.create("dec.mask_token", 1, cfg.code_dim).value, rng);
    dec_ = TransformerSpec::create(params, "dec", cfg.dec_depth, D, cfg.heads, cfg.mlp_ratio, rng);
    head_ = LinearSpec::create(params, "head", D, pd, rng);

    Rng book_rng = make_rng(seed, 1);
    book = create_codebook(cfg.codebook_size, cfg.code_dim, book_rng);
}

MatF TokenizerModel::patch_matrix(const VideoClip& clip) const {
    TokenGrid g = patchify(clip, cfg.patch);
    return Eigen::Map<const MatF>(g.values.data(), g.shape.sites(), g.dim);
}

VideoClip TokenizerModel::clip_of_patches(const MatF& rows, const GridShape& grid) const {
    TokenGrid g;
    g.shape = grid;
    g.discrete = false;
    g.dim = static_cast<int>(rows.cols());
    g.values.assign(rows.data(), rows.data() + rows.size());
    return unpatchify(g, cfg.patch);
}

VideoClip TokenizerModel::padded_reference(const VideoClip& raw_ref) const {
    return replicate_pad_reference(raw_ref, cfg.patch.t);
}

TokenizerModel::EncodedClip TokenizerModel::encode_clip(const VideoClip& clip) const {
    if (cfg.reference_less)
        throw ConfigError(
            "token streams require the one-way reference mode; this model is reference_less");
    ClipSplit split = split_reference(clip, cfg.n_ref_frames);
    EncodedClip out;
    out.raw_reference = split.reference;
    out.target = split.target;
    ClipSplit padded{padded_reference(split.reference), split.target};

    ad::Tape<float> tape;
    Ctx<float> ctx(tape, const_cast<ParamStore&>(params), /*train=*/false);
    ForwardPlan plan;
    ClipForward<float> fwd = forward_clip(ctx, padded, plan, /*prune_rng=*/nullptr);
    out.ref_grid = fwd.ref_grid;
    out.tgt_grid = fwd.tgt_grid;
    out.indices = fwd.code_indices;
    return out;
}

MatF TokenizerModel::reference_tokens(const VideoClip& raw_reference) const {
    VideoClip ref = padded_reference(raw_reference);
    GridShape ref_grid = grid_shape_for(ref.t, ref.h, ref.w, cfg.patch);
    MatF ref_patches = patch_matrix(ref);
    MatF none(0, ref_patches.cols());

    ad::Tape<float> tape;
    Ctx<float> ctx(tape, const_cast<ParamStore&>(params), /*train=*/false);
    ad::Var<float> x = embed_sequence(ctx, ref_patches, none, ref_grid, GridShape{0, ref_grid.eta, ref_grid.omega});
    auto mask = build_reference_attention_mask(ref_grid.sites(), 0, cfg.mask_mode);
    ad::Var<float> h = enc_.apply(ctx, x, mask);
    last_stats_ = ForwardStats{ref_grid.sites(), 0, 0, 0, true};
    return h.val();
}

MatF TokenizerModel::joint_reference_rows(const VideoClip& clip) const {
    ClipSplit split = split_reference(clip, cfg.n_ref_frames);
    VideoClip ref = padded_reference(split.reference);
    GridShape ref_grid = grid_shape_for(ref.t, ref.h, ref.w, cfg.patch);
    GridShape tgt_grid = grid_shape_for(split.target.t, split.target.h, split.target.w, cfg.patch);
    MatF ref_patches = patch_matrix(ref);
    MatF tgt_patches = patch_matrix(split.target);

    ad::Tape<float> tape;
    Ctx<float> ctx(tape, const_cast<ParamStore&>(params), /*train=*/false);
    ad::Var<float> x = embed_sequence(ctx, ref_patches, tgt_patches, ref_grid, tgt_grid);
    auto mask = build_reference_attention_mask(ref_grid.sites(), tgt_grid.sites(),
                                               cfg.reference_less ? MaskMode::none : cfg.mask_mode);
    ad::Var<float> h = enc_.apply(ctx, x, mask);
    return h.val().topRows(ref_grid.sites());
}

VideoClip TokenizerModel::decode_indices(const VideoClip& raw_reference,
                                         const std::vector<int>& indices,
                                         const GridShape& tgt_grid) const {
    if (static_cast<int>(indices.size()) != tgt_grid.sites())
        throw DataError("decode: index count does not match the declared target lattice");
    VideoClip ref = padded_reference(raw_reference);
    GridShape ref_grid = grid_shape_for(ref.t, ref.h, ref.w, cfg.patch);
    if (ref_grid.eta != tgt_grid.eta || ref_grid.omega != tgt_grid.omega)
        throw DataError("decode: reference and target lattices disagree spatially");

    // h_r comes from the reference alone; target pixels are never consulted.
    MatF h_r = reference_tokens(raw_reference);
    MatF z = lookup(indices, book);

    ad::Tape<float> tape;
    Ctx<float> ctx(tape, const_cast<ParamStore&>(params), /*train=*/false);
    ad::Var<float> ref_path = r_in_.apply(ctx, tape.constant(h_r));
    ad::Var<float> code_path = z_in_.apply(ctx, tape.constant(z));
    ad::Var<float> trunk = decode_trunk(ctx, ref_path, code_path, ref_grid, tgt_grid);
    ad::Var<float> pred = head_.apply(ctx, ad::slice_rows(trunk, ref_grid.sites(), tgt_grid.sites()));

    MatF px = pred.val().cwiseMax(0.0f).cwiseMin(1.0f);
    VideoClip out = clip_of_patches(px, tgt_grid);
    out.frame_interval = raw_reference.frame_interval;
    last_stats_ = ForwardStats{ref_grid.sites(), tgt_grid.sites(), 0, 0, true};
    return out;
}

VideoClip TokenizerModel::reconstruct(const VideoClip& clip) const {
    EncodedClip e = encode_clip(clip);
    return decode_indices(e.raw_reference, e.indices, e.tgt_grid);
}

VideoClip TokenizerModel::reconstruct_reference_less(const VideoClip& clip) const {
    if (!cfg.reference_less) throw ConfigError("model is not in reference_less mode");
    ClipSplit split = split_reference(clip, cfg.n_ref_frames);
    ClipSplit padded{padded_reference(split.reference), split.target};

    ad::Tape<float> tape;
    Ctx<float> ctx(tape, const_cast<ParamStore&>(params), /*train=*/false);
    ForwardPlan plan;
    ClipForward<float> fwd = forward_clip(ctx, padded, plan, /*prune_rng=*/nullptr);
    const int n_ref = fwd.ref_grid.sites();
    const int n_tgt = fwd.tgt_grid.sites();
    MatF px = fwd.pred.val().middleRows(n_ref, n_tgt).cwiseMax(0.0f).cwiseMin(1.0f);
    return clip_of_patches(px, fwd.tgt_grid);
}

// ---- checkpoints ----

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"embed_dim", c.embed_dim},
                {"enc_depth", c.enc_depth},
                {"dec_depth", c.dec_depth},
                {"heads", c.heads},
                {"mlp_ratio", c.mlp_ratio},
                {"patch", {c.patch.t, c.patch.h, c.patch.w}},
                {"n_ref_frames", c.n_ref_frames},
                {"codebook_size", c.codebook_size},
                {"code_dim", c.code_dim},
                {"prune_max", c.prune_max},
                {"mask_mode", to_string(c.mask_mode)},
                {"reference_less", c.reference_less}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim");
    c.enc_depth = j.at("enc_depth");
    c.dec_depth = j.at("dec_depth");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.patch = PatchSpec{j.at("patch")[0], j.at("patch")[1], j.at("patch")[2]};
    c.n_ref_frames = j.at("n_ref_frames");
    c.codebook_size = j.at("codebook_size");
    c.code_dim = j.at("code_dim");
    c.prune_max = j.at("prune_max");
    c.mask_mode = mask_mode_from_string(j.at("mask_mode"));
    c.reference_less = j.at("reference_less");
    return c;
}

}  // namespace

void TokenizerModel::save_checkpoint(const std::string& path, int step,
                                     const std::string& extra_json) const {
    ByteWriter w;
    w.magic("RTKC");
    w.u16(1);
    json meta;
    meta["model"] = config_to_json(cfg);
    meta["step"] = step;
    if (!extra_json.empty()) meta["extra"] = json::parse(extra_json);
    w.str(meta.dump());
    write_param_tensors(w, const_cast<ParamStore&>(params));
    write_codebook(w, book);
    w.to_file(path);
}

TokenizerModel::LoadResult TokenizerModel::load_checkpoint(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("RTKC", "checkpoint");
    if (r.u16() != 1) throw DataError("checkpoint: unsupported version");
    json meta = json::parse(r.str());
    if (!meta.contains("model")) throw DataError("checkpoint does not hold a tokenizer model");
    ModelConfig stored = config_from_json(meta.at("model"));
    if (config_to_json(stored) != config_to_json(cfg))
        throw DataError("checkpoint: stored model configuration does not match");

    read_param_tensors(r, params);
    book = read_codebook(r);
    // The codebook may still be below its configured maximum size if it was
    // saved before the splitting schedule finished growing it.
    if (book.K() > cfg.codebook_size || book.D() != cfg.code_dim)
        throw DataError("checkpoint: codebook dimensions do not match the configuration");

    LoadResult out;
    out.step = meta.at("step");
    if (meta.contains("extra")) out.extra_json = meta["extra"].dump();
    return out;
}

ModelConfig TokenizerModel::peek_config(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("RTKC", "checkpoint");
    if (r.u16() != 1) throw DataError("checkpoint: unsupported version");
    json meta = json::parse(r.str());
    if (!meta.contains("model")) throw DataError("checkpoint does not hold a tokenizer model");
    return config_from_json(meta.at("model"));
}

}  // namespace reftok
