// reftok: train, encode, decode, evaluate, and generate with the
// reference-based video tokenizer. Exit codes: 0 ok, 2 config error,
// 3 data error, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "reftok/config.hpp"
#include "reftok/image_io.hpp"
#include "reftok/maskgen.hpp"
#include "reftok/metrics.hpp"
#include "reftok/model.hpp"
#include "reftok/rng.hpp"
#include "reftok/sampler.hpp"
#include "reftok/stream.hpp"
#include "reftok/synth.hpp"
#include "reftok/trainer.hpp"
#include "reftok/video.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reftok;

namespace {

TokenizerModel load_tokenizer(const std::string& path) {
    TokenizerModel model(TokenizerModel::peek_config(path), /*seed=*/0);
    model.load_checkpoint(path);
    return model;
}

GeneratorModel load_generator(const std::string& path) {
    GeneratorModel model(GeneratorModel::peek_config(path), /*seed=*/0);
    model.load_checkpoint(path);
    return model;
}

// Loads a window from a .rvc file or PNG frame directory; length 0 means
// every frame from `start` at the given stride.
VideoClip load_clip_auto(const std::string& path, int start, int length, int stride) {
    if (length > 0) return load_clip(path, start, length, stride);
    int total = fs::is_regular_file(path) ? load_rvc(path).t
                                          : static_cast<int>(list_frame_dir(path).size());
    int avail = (total - start + stride - 1) / stride;
    if (avail < 1)
        throw DataError("no frames in window: " + path + " holds " + std::to_string(total));
    return load_clip(path, start, avail, stride);
}

std::ofstream open_log(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open log file for writing: " + path);
    return out;
}

// ---- train ----

struct TrainArgs {
    std::string config, out, log;
    bool resume = false;
};

void cmd_train(const TrainArgs& a) {
    RunConfig rc = parse_config_file(a.config);
    TokenizerModel model(rc.model, rc.train.seed);
    Trainer trainer(model, rc.train);
    if (a.resume) {
        trainer.resume(a.out);
        std::printf("resumed %s at step %d\n", a.out.c_str(), trainer.step());
    }
    auto source = rc.make_source();

    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!a.log.empty()) {
        log_file = open_log(a.log);
        log = &log_file;
    }
    trainer.run(*source, a.out, log);

    std::vector<VideoClip> probe = eval_clips(*source, std::min(rc.n_eval, source->count()),
                                              rc.train.clip_length);
    CollapseReport cr = trainer.detect_posterior_collapse(probe);
    std::printf("trained %d steps; codebook %d codes, utilization %.3f, copy gap %+.5f%s\n",
                trainer.step(), model.book.K(), cr.utilization, cr.copy_gap,
                cr.collapsed ? " (WARNING: posterior collapse)" : "");
    std::printf("wrote %s\n", a.out.c_str());
}

// ---- synth ----

struct SynthArgs {
    std::string out;
    int clips = 8;
    std::uint64_t seed = 1;
    SynthConfig cfg;
    bool png = false;
};

void cmd_synth(const SynthArgs& a) {
    fs::create_directories(a.out);
    SynthSource source(a.seed, a.clips, a.cfg);
    for (int i = 0; i < source.count(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "clip_%04d", i);
        const VideoClip& clip = source.get(i);
        save_rvc(clip, a.out + "/" + name + ".rvc");
        if (a.png) save_contact_sheet(clip, a.out + "/" + name + ".png");
    }
    std::printf("wrote %d clips (%dx%dx%d) to %s\n", a.clips, a.cfg.frames, a.cfg.height,
                a.cfg.width, a.out.c_str());
}

// ---- encode ----

struct EncodeArgs {
    std::string checkpoint, clip, out;
    int start = 0, length = 0, stride = 1;
};

void cmd_encode(const EncodeArgs& a) {
    TokenizerModel model = load_tokenizer(a.checkpoint);
    VideoClip clip = load_clip_auto(a.clip, a.start, a.length, a.stride);
    TokenStream stream = encode_to_stream(model, clip);
    save_stream(stream, a.out);
    std::printf("%s\n", stream_summary(stream).c_str());
    std::printf("wrote %s (%zu bytes)\n", a.out.c_str(), stream_bytes(stream).size());
}

// ---- decode ----

struct DecodeArgs {
    std::string checkpoint, stream, out, reference, png;
};

// Mean abs output change inside vs outside the image region where the
// override differs from the stored reference (any frame, any channel).
void report_edit_propagation(const TokenStream& s, const VideoClip& alt,
                             const VideoClip& decoded, const VideoClip& baseline) {
    VideoClip stored = s.reference_clip();
    std::vector<char> edited(static_cast<std::size_t>(stored.h) * stored.w, 0);
    for (int t = 0; t < stored.t; ++t)
        for (int y = 0; y < stored.h; ++y)
            for (int x = 0; x < stored.w; ++x)
                for (int c = 0; c < stored.c; ++c)
                    if (float_to_u8(stored.at(t, y, x, c)) != float_to_u8(alt.at(t, y, x, c)))
                        edited[static_cast<std::size_t>(y) * stored.w + x] = 1;

    std::size_t n_edit = 0;
    for (char e : edited) n_edit += e;
    if (n_edit == 0) {
        std::printf("override matches the stored reference; output unchanged\n");
        return;
    }
    double in_sum = 0, out_sum = 0;
    std::size_t in_n = 0, out_n = 0;
    for (int t = 0; t < decoded.t; ++t)
        for (int y = 0; y < decoded.h; ++y)
            for (int x = 0; x < decoded.w; ++x) {
                double d = 0;
                for (int c = 0; c < decoded.c; ++c)
                    d += std::abs(decoded.at(t, y, x, c) - baseline.at(t, y, x, c));
                d /= decoded.c;
                if (edited[static_cast<std::size_t>(y) * decoded.w + x]) {
                    in_sum += d;
                    ++in_n;
                } else {
                    out_sum += d;
                    ++out_n;
                }
            }
    double in_mean = in_n ? in_sum / in_n : 0;
    double out_mean = out_n ? out_sum / out_n : 0;
    std::printf("edit propagation: %zu of %d px edited in reference; "
                "mean abs output change %.5f inside the edited region, %.5f outside (ratio %.2f)\n",
                n_edit, stored.h * stored.w, in_mean, out_mean,
                out_mean > 0 ? in_mean / out_mean : 0.0);
}

void cmd_decode(const DecodeArgs& a) {
    TokenizerModel model = load_tokenizer(a.checkpoint);
    TokenStream stream = load_stream(a.stream);
    VideoClip decoded;
    if (!a.reference.empty()) {
        VideoClip alt = load_clip_auto(a.reference, 0, 0, 1);
        decoded = decode_stream(model, stream, &alt);
        VideoClip baseline = decode_stream(model, stream);
        report_edit_propagation(stream, alt, decoded, baseline);
    } else {
        decoded = decode_stream(model, stream);
    }
    save_rvc(decoded, a.out);
    if (!a.png.empty()) save_contact_sheet(decoded, a.png);
    std::printf("decoded %d frames (%dx%d) to %s\n", decoded.t, decoded.h, decoded.w,
                a.out.c_str());
}

// ---- evaluate ----

struct EvaluateArgs {
    std::string checkpoint, config, data, compare, json_out, lpips_cmd;
};

EvalReport run_eval(const std::string& ckpt, const std::vector<VideoClip>& eval_set,
                    const ClipMetricFn* plugin) {
    TokenizerModel model = load_tokenizer(ckpt);
    ReconFn recon = [&model](const VideoClip& clip) {
        return model.cfg.reference_less ? model.reconstruct_reference_less(clip)
                                        : model.reconstruct(clip);
    };
    return evaluate(eval_set, model.cfg.n_ref_frames, recon, model.cfg.patch, plugin);
}

void print_comparison(const std::string& a, const EvalReport& ra, const std::string& b,
                      const EvalReport& rb) {
    std::printf("%-14s %14s %14s\n", "metric", fs::path(a).filename().c_str(),
                fs::path(b).filename().c_str());
    std::printf("%-14s %14.3f %14.3f\n", "PSNR (dB)", ra.mean_psnr, rb.mean_psnr);
    std::printf("%-14s %14.4f %14.4f\n", "SSIM", ra.mean_ssim, rb.mean_ssim);
    std::printf("%-14s %14.3f %14.3f\n", "L1 (x1e-2)", ra.mean_l1 * 100, rb.mean_l1 * 100);
    if (ra.mean_lpips && rb.mean_lpips)
        std::printf("%-14s %14.4f %14.4f\n", "LPIPS", *ra.mean_lpips, *rb.mean_lpips);
    std::printf("%-14s %14s %14s\n", "compression", ra.compression_ratio.c_str(),
                rb.compression_ratio.c_str());
    std::printf("%-14s %14d %14d\n", "clips", ra.clip_count, rb.clip_count);
}

void cmd_evaluate(const EvaluateArgs& a) {
    RunConfig rc = a.config.empty() ? RunConfig() : parse_config_file(a.config);
    if (!a.data.empty()) rc.data_dir = a.data;
    auto source = rc.make_source();
    std::vector<VideoClip> eval_set =
        eval_clips(*source, std::min(rc.n_eval, source->count()), rc.train.clip_length);

    ClipMetricFn plugin_fn;
    const ClipMetricFn* plugin = nullptr;
    if (!a.lpips_cmd.empty()) {
        plugin_fn = make_subprocess_metric(a.lpips_cmd);
        plugin = &plugin_fn;
    }

    EvalReport report = run_eval(a.checkpoint, eval_set, plugin);
    if (a.compare.empty()) {
        std::printf("%s", report.to_table().c_str());
        if (!a.json_out.empty()) {
            std::ofstream out = open_log(a.json_out);
            out << report.to_json() << '\n';
        }
        return;
    }

    EvalReport other = run_eval(a.compare, eval_set, plugin);
    print_comparison(a.checkpoint, report, a.compare, other);
    if (!a.json_out.empty()) {
        json j;
        j["checkpoints"] = json::array();
        j["checkpoints"].push_back(
            {{"path", a.checkpoint}, {"report", json::parse(report.to_json())}});
        j["checkpoints"].push_back({{"path", a.compare}, {"report", json::parse(other.to_json())}});
        std::ofstream out = open_log(a.json_out);
        out << j.dump(2) << '\n';
    }
}

// ---- train-gen ----

struct TrainGenArgs {
    std::string config, tokenizer, out, log, dataset;
};

void cmd_train_gen(const TrainGenArgs& a) {
    RunConfig rc = parse_config_file(a.config);
    TokenizerModel tok = load_tokenizer(a.tokenizer);

    std::vector<TokenDatasetRecord> dataset;
    if (!a.dataset.empty() && fs::exists(a.dataset)) {
        dataset = load_token_dataset(a.dataset);
        std::printf("loaded %zu token records from %s\n", dataset.size(), a.dataset.c_str());
    } else {
        auto source = rc.make_source();
        std::vector<VideoClip> clips =
            eval_clips(*source, source->count(), rc.train.clip_length);
        dataset = build_token_dataset(tok, clips);
        if (!a.dataset.empty()) {
            save_token_dataset(dataset, a.dataset);
            std::printf("wrote %zu token records to %s\n", dataset.size(), a.dataset.c_str());
        }
    }

    GenConfig gcfg = rc.generate.arch;
    gcfg.vocab = tok.book.K();
    gcfg.cond_dim = tok.cfg.embed_dim;
    GeneratorModel gen(gcfg, rc.generate.train.seed);
    GeneratorTrainer trainer(gen, rc.generate.train);

    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!a.log.empty()) {
        log_file = open_log(a.log);
        log = &log_file;
    }
    trainer.run(dataset, log);
    gen.save_checkpoint(a.out, trainer.step());

    double acc = masked_accuracy(gen, dataset, 0.5, rc.generate.train.seed);
    std::printf("trained %d steps on %zu records; masked accuracy (half masked) %.3f\n",
                trainer.step(), dataset.size(), acc);
    std::printf("wrote %s\n", a.out.c_str());
}

// ---- generate ----

struct GenerateArgs {
    std::string tokenizer, generator, reference, config, out, png;
    std::uint64_t seed = 0;
    int frames = 0;     // 0: the configured target length
    int steps = 0;      // 0: the configured schedule
    double temperature = -1;  // <0: the configured value
};

void cmd_generate(const GenerateArgs& a) {
    RunConfig rc = a.config.empty() ? RunConfig() : parse_config_file(a.config);
    TokenizerModel tok = load_tokenizer(a.tokenizer);
    GeneratorModel gen = load_generator(a.generator);
    if (gen.cfg.vocab != tok.book.K() || gen.cfg.cond_dim != tok.cfg.embed_dim)
        throw ConfigError("generator checkpoint does not match this tokenizer (vocab " +
                          std::to_string(gen.cfg.vocab) + " vs codebook " +
                          std::to_string(tok.book.K()) + ")");

    VideoClip ref = load_clip_auto(a.reference, 0, tok.cfg.n_ref_frames, 1);
    const PatchSpec& p = tok.cfg.patch;
    int frames = a.frames > 0 ? a.frames : rc.generated_target_frames();
    if (frames < 1 || frames % p.t != 0)
        throw DataError("target frame count " + std::to_string(frames) +
                        " is not a positive multiple of the temporal patch size " +
                        std::to_string(p.t));
    if (ref.h % p.h != 0 || ref.w % p.w != 0)
        throw DataError("reference frames " + std::to_string(ref.h) + "x" +
                        std::to_string(ref.w) + " are not divisible by the patch");
    GridShape grid{frames / p.t, ref.h / p.h, ref.w / p.w};

    GenSchedule schedule = rc.generate.schedule;
    if (a.steps > 0) schedule.total_steps = a.steps;
    if (a.temperature >= 0) schedule.temperature = a.temperature;

    MatF h_r = tok.reference_tokens(ref);
    Rng rng = make_rng(a.seed, 0);
    std::vector<int> ids = generate_tokens(gen, h_r, grid, schedule, rng);
    VideoClip clip = tok.decode_indices(ref, ids, grid);
    save_rvc(clip, a.out);
    if (!a.png.empty()) save_contact_sheet(clip, a.png);
    std::printf("generated %d frames (%dx%d) from %d tokens in %d decode steps -> %s\n", clip.t,
                clip.h, clip.w, grid.sites(), schedule.total_steps, a.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reference-conditioned video tokenizer"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train a tokenizer from a config file");
    train->add_option("config", train_args.config, "run config (TOML)")->required();
    train->add_option("--out", train_args.out, "checkpoint path")->required();
    train->add_option("--log", train_args.log, "metrics JSONL path (default: stdout)");
    train->add_flag("--resume", train_args.resume, "continue from the checkpoint at --out");
    train->callback([&] { cmd_train(train_args); });

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "write synthetic clips for training and eval");
    synth->add_option("--out", synth_args.out, "output directory")->required();
    synth->add_option("--clips", synth_args.clips, "number of clips");
    synth->add_option("--seed", synth_args.seed, "dataset seed");
    synth->add_option("--frames", synth_args.cfg.frames, "frames per clip");
    synth->add_option("--height", synth_args.cfg.height, "frame height");
    synth->add_option("--width", synth_args.cfg.width, "frame width");
    synth->add_option("--glyphs", synth_args.cfg.glyphs, "glyphs per clip");
    synth->add_option("--glyph-size", synth_args.cfg.glyph_size, "glyph side length");
    synth->add_option("--motion", synth_args.cfg.motion_amplitude, "max per-axis motion (px)");
    synth->add_flag("--png", synth_args.png, "also write contact sheets");
    synth->callback([&] { cmd_synth(synth_args); });

    EncodeArgs encode_args;
    auto* encode = app.add_subcommand("encode", "encode a clip into a token stream");
    encode->add_option("checkpoint", encode_args.checkpoint, "tokenizer checkpoint")->required();
    encode->add_option("clip", encode_args.clip, ".rvc file or PNG frame directory")->required();
    encode->add_option("out", encode_args.out, "output token stream (.rtk)")->required();
    encode->add_option("--start", encode_args.start, "first frame");
    encode->add_option("--length", encode_args.length, "frame count (0: all)");
    encode->add_option("--stride", encode_args.stride, "frame stride");
    encode->callback([&] { cmd_encode(encode_args); });

    DecodeArgs decode_args;
    auto* decode = app.add_subcommand("decode", "decode a token stream back to frames");
    decode->add_option("checkpoint", decode_args.checkpoint, "tokenizer checkpoint")->required();
    decode->add_option("stream", decode_args.stream, "token stream (.rtk)")->required();
    decode->add_option("out", decode_args.out, "output clip (.rvc)")->required();
    decode->add_option("--reference", decode_args.reference,
                       "decode with this reference clip instead of the stored one");
    decode->add_option("--png", decode_args.png, "also write a contact sheet here");
    decode->callback([&] { cmd_decode(decode_args); });

    EvaluateArgs eval_args;
    auto* evaluate = app.add_subcommand("evaluate", "score reconstructions over an eval set");
    evaluate->add_option("checkpoint", eval_args.checkpoint, "tokenizer checkpoint")->required();
    evaluate->add_option("--config", eval_args.config, "run config naming the eval data");
    evaluate->add_option("--data", eval_args.data, "clip directory (overrides the config)");
    evaluate->add_option("--compare", eval_args.compare, "second checkpoint for a side-by-side");
    evaluate->add_option("--json", eval_args.json_out, "write the report JSON here");
    evaluate->add_option("--lpips-cmd", eval_args.lpips_cmd,
                         "external perceptual metric: invoked as 'cmd a.rvc b.rvc'");
    evaluate->callback([&] { cmd_evaluate(eval_args); });

    TrainGenArgs tg_args;
    auto* train_gen = app.add_subcommand("train-gen", "train a masked-token generator");
    train_gen->add_option("config", tg_args.config, "run config (TOML)")->required();
    train_gen->add_option("--tokenizer", tg_args.tokenizer, "frozen tokenizer checkpoint")
        ->required();
    train_gen->add_option("--out", tg_args.out, "generator checkpoint path")->required();
    train_gen->add_option("--log", tg_args.log, "metrics JSONL path (default: stdout)");
    train_gen->add_option("--dataset", tg_args.dataset,
                          "token dataset cache (.rtkg); reused when present");
    train_gen->callback([&] { cmd_train_gen(tg_args); });

    GenerateArgs gen_args;
    auto* generate = app.add_subcommand("generate", "sample new target frames from a reference");
    generate->add_option("tokenizer", gen_args.tokenizer, "tokenizer checkpoint")->required();
    generate->add_option("generator", gen_args.generator, "generator checkpoint")->required();
    generate->add_option("reference", gen_args.reference, "reference clip (.rvc or frame dir)")
        ->required();
    generate->add_option("--out", gen_args.out, "output clip (.rvc)")->required();
    generate->add_option("--config", gen_args.config, "run config for schedule and length");
    generate->add_option("--seed", gen_args.seed, "sampling seed");
    generate->add_option("--frames", gen_args.frames, "target frame count (0: configured)");
    generate->add_option("--steps", gen_args.steps, "decode steps (0: configured)");
    generate->add_option("--temperature", gen_args.temperature, "confidence noise scale");
    generate->add_option("--png", gen_args.png, "also write a contact sheet here");
    generate->callback([&] { cmd_generate(gen_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    }
    return 0;
}
