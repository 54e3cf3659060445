#include "reftok/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <ostream>

#include "reftok/serialize.hpp"
#include "reftok/tensorio.hpp"

namespace reftok {

using nlohmann::json;

double mask_fraction(int step, int total) {
    if (total < 1) throw ConfigError("generation schedule needs at least one step");
    if (step < 0 || step > total) throw DataError("mask schedule step out of range");
    return std::cos(std::numbers::pi / 2 * static_cast<double>(step) / total);
}

// ---- token dataset ----

void TokenDatasetRecord::validate(int vocab) const {
    if (grid.tau < 1 || grid.eta < 1 || grid.omega < 1)
        throw DataError("token record: bad grid");
    if (static_cast<int>(indices.size()) != grid.sites())
        throw DataError("token record: index count does not match the grid");
    if (h_r.rows() < 1 || h_r.cols() < 1) throw DataError("token record: empty reference tokens");
    if (h_r.rows() % (static_cast<Eigen::Index>(grid.eta) * grid.omega) != 0)
        throw DataError("token record: reference rows do not tile the spatial lattice");
    for (int idx : indices)
        if (idx < 0 || idx >= vocab) throw DataError("token record: index outside the codebook");
}

std::vector<TokenDatasetRecord> build_token_dataset(const TokenizerModel& tokenizer,
                                                    const std::vector<VideoClip>& clips) {
    if (clips.empty()) throw DataError("token dataset: no clips given");
    std::vector<TokenDatasetRecord> out;
    out.reserve(clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        TokenizerModel::EncodedClip enc = tokenizer.encode_clip(clips[i]);
        TokenDatasetRecord rec;
        rec.h_r = tokenizer.reference_tokens(enc.raw_reference);
        rec.grid = enc.tgt_grid;
        rec.indices = enc.indices;
        rec.source_id = clips[i].source_id.empty() ? "clip-" + std::to_string(i) : clips[i].source_id;
        rec.validate(tokenizer.book.K());
        out.push_back(std::move(rec));
    }
    return out;
}

void save_token_dataset(const std::vector<TokenDatasetRecord>& records, const std::string& path) {
    ByteWriter w;
    for (const TokenDatasetRecord& rec : records) {
        w.magic("RTKG");
        w.u32(static_cast<std::uint32_t>(rec.grid.tau));
        w.u32(static_cast<std::uint32_t>(rec.grid.eta));
        w.u32(static_cast<std::uint32_t>(rec.grid.omega));
        for (int idx : rec.indices) w.u32(static_cast<std::uint32_t>(idx));
        w.u32(static_cast<std::uint32_t>(rec.h_r.rows()));
        w.u32(static_cast<std::uint32_t>(rec.h_r.cols()));
        for (Eigen::Index i = 0; i < rec.h_r.rows(); ++i)
            for (Eigen::Index j = 0; j < rec.h_r.cols(); ++j) w.f32(rec.h_r(i, j));
        w.str(rec.source_id);
    }
    w.to_file(path);
}

std::vector<TokenDatasetRecord> load_token_dataset(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    std::vector<TokenDatasetRecord> out;
    while (!r.at_end()) {
        r.expect_magic("RTKG", "token dataset record");
        TokenDatasetRecord rec;
        rec.grid.tau = static_cast<int>(r.u32());
        rec.grid.eta = static_cast<int>(r.u32());
        rec.grid.omega = static_cast<int>(r.u32());
        if (rec.grid.tau < 1 || rec.grid.eta < 1 || rec.grid.omega < 1)
            throw DataError("token dataset record: corrupt grid");
        rec.indices.resize(rec.grid.sites());
        for (int& idx : rec.indices) idx = static_cast<int>(r.u32());
        std::uint32_t rows = r.u32(), cols = r.u32();
        if (rows < 1 || cols < 1) throw DataError("token dataset record: corrupt reference block");
        rec.h_r.resize(rows, cols);
        for (std::uint32_t i = 0; i < rows; ++i)
            for (std::uint32_t j = 0; j < cols; ++j) rec.h_r(i, j) = r.f32();
        rec.source_id = r.str();
        out.push_back(std::move(rec));
    }
    return out;
}

// ---- model ----

namespace {

json gen_config_to_json(const GenConfig& c) {
    return json{{"dim", c.dim},         {"depth", c.depth},   {"heads", c.heads},
                {"mlp_ratio", c.mlp_ratio}, {"vocab", c.vocab}, {"cond_dim", c.cond_dim}};
}

GenConfig gen_config_from_json(const json& j) {
    GenConfig c;
    c.dim = j.at("dim");
    c.depth = j.at("depth");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.vocab = j.at("vocab");
    c.cond_dim = j.at("cond_dim");
    return c;
}

}  // namespace

GeneratorModel::GeneratorModel(GenConfig c, std::uint64_t seed) : cfg(c) {
    if (cfg.vocab < 2) throw ConfigError("generator vocabulary must hold at least two codes");
    if (cfg.cond_dim < 1) throw ConfigError("generator conditioning width must be positive");
    if (cfg.dim < 6 || cfg.dim % 2 != 0) throw ConfigError("generator width must be even and >= 6");
    if (cfg.depth < 1 || cfg.heads < 1 || cfg.dim % cfg.heads != 0 || cfg.mlp_ratio < 1)
        throw ConfigError("bad generator depth/heads/mlp settings");
    Rng rng = make_rng(seed, 0);
    cond_ = LinearSpec::create(params, "gen.cond", cfg.cond_dim, cfg.dim, rng);
    init_trunc_normal(params.create("gen.tok", cfg.vocab + 1, cfg.dim).value, rng);
    init_trunc_normal(params.create("gen.seg", 2, cfg.dim).value, rng);
    net_ = TransformerSpec::create(params, "gen", cfg.depth, cfg.dim, cfg.heads, cfg.mlp_ratio, rng);
    head_ = LinearSpec::create(params, "gen.head", cfg.dim, cfg.vocab, rng);
}

template <class S>
ad::Var<S> GeneratorModel::logits(Ctx<S>& ctx, const MatF& h_r, const std::vector<int>& ids,
                                  const GridShape& grid) const {
    using ad::Var;
    const int n_tgt = grid.sites();
    const int n_ref = static_cast<int>(h_r.rows());
    if (static_cast<int>(ids.size()) != n_tgt)
        throw DataError("generator: id count does not match the target grid");
    if (static_cast<int>(h_r.cols()) != cfg.cond_dim)
        throw DataError("generator: reference token width does not match the configuration");
    const int plane = grid.eta * grid.omega;
    if (n_ref < 1 || n_ref % plane != 0)
        throw DataError("generator: reference rows do not tile the spatial lattice");
    for (int id : ids)
        if (id < 0 || id > cfg.vocab)
            throw DataError("generator: id outside the vocabulary (mask included)");

    // Reference occupies the earliest temporal slots of one shared lattice,
    // exactly as in the tokenizer's sequences.
    GridShape full{n_ref / plane + grid.tau, grid.eta, grid.omega};
    MatF pos = build_3d_positions(full, cfg.dim);

    Var<S> cond = cond_.apply(ctx, ctx.tape->constant(h_r.cast<S>()));
    Var<S> emb = ad::gather_rows(ctx.use("gen.tok"), ids);
    Var<S> x = ad::concat_rows<S>({cond, emb});
    x = ad::add(x, ctx.tape->constant(pos.template cast<S>()));
    Var<S> seg = ctx.use("gen.seg");
    std::vector<int> seg_idx(n_ref + n_tgt, 1);
    std::fill(seg_idx.begin(), seg_idx.begin() + n_ref, 0);
    x = ad::add(x, ad::gather_rows(seg, seg_idx));

    Var<S> h = net_.apply(ctx, x, nullptr);  // bidirectional
    return head_.apply(ctx, ad::slice_rows(h, n_ref, n_tgt));
}

template ad::Var<float> GeneratorModel::logits<float>(Ctx<float>&, const MatF&,
                                                      const std::vector<int>&,
                                                      const GridShape&) const;
template ad::Var<double> GeneratorModel::logits<double>(Ctx<double>&, const MatF&,
                                                        const std::vector<int>&,
                                                        const GridShape&) const;

MatF GeneratorModel::predict_logits(const MatF& h_r, const std::vector<int>& ids,
                                    const GridShape& grid) const {
    ad::Tape<float> tape;
    Ctx<float> ctx(tape, const_cast<ParamStore&>(params), /*train=*/false);
    return logits(ctx, h_r, ids, grid).val();
}

void GeneratorModel::save_checkpoint(const std::string& path, int step) const {
    ByteWriter w;
    w.magic("RTKC");
    w.u16(1);
    json meta;
    meta["generator"] = gen_config_to_json(cfg);
    meta["step"] = step;
    w.str(meta.dump());
    write_param_tensors(w, const_cast<ParamStore&>(params));
    w.to_file(path);
}

int GeneratorModel::load_checkpoint(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("RTKC", "checkpoint");
    if (r.u16() != 1) throw DataError("checkpoint: unsupported version");
    json meta = json::parse(r.str());
    if (!meta.contains("generator")) throw DataError("checkpoint does not hold a generator");
    GenConfig stored = gen_config_from_json(meta.at("generator"));
    if (gen_config_to_json(stored) != gen_config_to_json(cfg))
        throw DataError("checkpoint: stored generator configuration does not match");
    read_param_tensors(r, params);
    return meta.at("step");
}

GenConfig GeneratorModel::peek_config(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("RTKC", "checkpoint");
    if (r.u16() != 1) throw DataError("checkpoint: unsupported version");
    json meta = json::parse(r.str());
    if (!meta.contains("generator")) throw DataError("checkpoint does not hold a generator");
    return gen_config_from_json(meta.at("generator"));
}

// ---- training ----

GeneratorTrainer::GeneratorTrainer(GeneratorModel& model, GenTrainConfig cfg)
    : model_(model), cfg_(cfg), opt_(AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}) {
    if (cfg_.steps < 1 || cfg_.batch_size < 1)
        throw ConfigError("generator training needs positive steps and batch size");
}

void GeneratorTrainer::set_step(int s) {
    step_ = s;
    opt_.set_step_count(s);
}

GenStepMetrics GeneratorTrainer::train_step(const std::vector<const TokenDatasetRecord*>& batch) {
    if (batch.empty()) throw DataError("generator training batch is empty");
    const double lr = lr_at(step_, cfg_.steps, cfg_.warmup, cfg_.lr);
    Rng mask_rng = make_rng(cfg_.seed, 0x1000000u + static_cast<std::uint64_t>(step_));

    ad::Tape<float> tape;
    Ctx<float> ctx(tape, model_.params, /*train=*/true);
    ad::Var<float> loss = tape.constant(MatF::Zero(1, 1));
    long correct = 0, masked_total = 0;
    for (const TokenDatasetRecord* rec : batch) {
        rec->validate(model_.cfg.vocab);
        const int n = rec->grid.sites();
        const double ratio = std::cos(std::numbers::pi / 2 * uniform01(mask_rng));
        const int n_mask = std::clamp(static_cast<int>(std::lround(ratio * n)), 1, n);
        std::vector<int> positions = draw_prune_indices(n, n_mask, mask_rng);
        std::vector<int> ids = rec->indices;
        for (int p : positions) ids[p] = model_.cfg.vocab;

        ad::Var<float> lg = model_.logits(ctx, rec->h_r, ids, rec->grid);
        ad::Var<float> lsm = ad::log_softmax_rows(lg);
        std::vector<std::pair<int, int>> cells;
        cells.reserve(positions.size());
        for (int p : positions) cells.emplace_back(p, rec->indices[p]);
        loss = ad::add(loss, ad::scale(ad::mean_all(ad::pick(lsm, cells)), -1.f));

        const MatF& raw = lg.val();
        for (int p : positions) {
            Eigen::Index arg;
            raw.row(p).maxCoeff(&arg);
            if (static_cast<int>(arg) == rec->indices[p]) ++correct;
        }
        masked_total += n_mask;
    }
    loss = ad::scale(loss, 1.f / static_cast<float>(batch.size()));

    const double loss_val = loss.val()(0, 0);
    if (!std::isfinite(loss_val))
        throw NumericError("generator step " + std::to_string(step_) + ": non-finite loss");
    model_.params.zero_grads();
    tape.backward(loss);
    ctx.harvest();
    opt_.step(model_.params, static_cast<float>(lr));
    ++step_;

    GenStepMetrics m{step_, loss_val,
                     masked_total ? static_cast<double>(correct) / masked_total : 0.0};
    history_.push_back(m);
    return m;
}

void GeneratorTrainer::run(const std::vector<TokenDatasetRecord>& dataset, std::ostream* log) {
    if (dataset.empty()) throw DataError("token dataset is empty");
    while (step_ < cfg_.steps) {
        Rng pick_rng = make_rng(cfg_.seed, 0x3000000u + static_cast<std::uint64_t>(step_));
        std::vector<const TokenDatasetRecord*> batch;
        for (int b = 0; b < cfg_.batch_size; ++b)
            batch.push_back(&dataset[uniform_int(pick_rng, 0, static_cast<int>(dataset.size()) - 1)]);
        GenStepMetrics m = train_step(batch);
        if (log) {
            json line{{"step", m.step}, {"loss", m.loss}, {"accuracy", m.accuracy}};
            *log << line.dump() << "\n";
        }
    }
}

double masked_accuracy(const GeneratorModel& model, const std::vector<TokenDatasetRecord>& records,
                       double fraction, std::uint64_t seed) {
    if (records.empty()) throw DataError("token dataset is empty");
    if (fraction <= 0 || fraction > 1) throw ConfigError("mask fraction must lie in (0, 1]");
    long correct = 0, total = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const TokenDatasetRecord& rec = records[i];
        rec.validate(model.cfg.vocab);
        const int n = rec.grid.sites();
        const int n_mask = std::clamp(static_cast<int>(std::lround(fraction * n)), 1, n);
        Rng rng = make_rng(seed, i);
        std::vector<int> positions = draw_prune_indices(n, n_mask, rng);
        std::vector<int> ids = rec.indices;
        for (int p : positions) ids[p] = model.cfg.vocab;
        MatF lg = model.predict_logits(rec.h_r, ids, rec.grid);
        for (int p : positions) {
            Eigen::Index arg;
            lg.row(p).maxCoeff(&arg);
            if (static_cast<int>(arg) == rec.indices[p]) ++correct;
        }
        total += n_mask;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

// ---- sampling ----

std::vector<int> generate_tokens(const GeneratorModel& model, const MatF& h_r,
                                 const GridShape& grid, const GenSchedule& schedule, Rng& rng,
                                 std::vector<int>* unmasked_after, std::vector<int>* fix_order) {
    const int S = schedule.total_steps;
    if (S < 1) throw ConfigError("generation schedule needs at least one step");
    const int n = grid.sites();
    std::vector<int> ids(n, model.cfg.vocab);
    std::vector<char> fixed(n, 0);
    int n_fixed = 0;
    if (unmasked_after) unmasked_after->clear();
    if (fix_order) fix_order->clear();

    for (int s = 1; s <= S; ++s) {
        MatF lg = model.predict_logits(h_r, ids, grid);
        const double anneal = schedule.temperature * (1.0 - static_cast<double>(s) / S);
        struct Cand {
            double conf;
            int site;
            int id;
        };
        std::vector<Cand> cands;
        cands.reserve(n - n_fixed);
        for (int site = 0; site < n; ++site) {
            if (fixed[site]) continue;
            Eigen::Index arg;
            const float best = lg.row(site).maxCoeff(&arg);
            // log p(argmax) = best - logsumexp(row)
            const double lse =
                static_cast<double>(best) +
                std::log((lg.row(site).array() - best).exp().sum());
            double conf = static_cast<double>(best) - lse;
            if (anneal > 0) {
                const double u = std::clamp(uniform01(rng), 1e-12, 1.0 - 1e-12);
                conf += anneal * -std::log(-std::log(u));
            }
            cands.push_back({conf, static_cast<int>(site), static_cast<int>(arg)});
        }
        const int want_total = std::clamp(
            static_cast<int>(std::lround(n * (1.0 - mask_fraction(s, S)))), n_fixed, n);
        const int take = want_total - n_fixed;
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Cand& a, const Cand& b) { return a.conf > b.conf; });
        for (int i = 0; i < take; ++i) {
            ids[cands[i].site] = cands[i].id;
            fixed[cands[i].site] = 1;
            if (fix_order) fix_order->push_back(cands[i].site);
        }
        n_fixed += take;
        if (unmasked_after) unmasked_after->push_back(n_fixed);
    }
    return ids;
}

}  // namespace reftok
