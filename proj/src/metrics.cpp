#include "reftok/metrics.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "reftok/errors.hpp"

namespace reftok {

namespace {

void require_same_shape(const VideoClip& a, const VideoClip& b, const char* what) {
    if (a.t != b.t || a.h != b.h || a.w != b.w || a.c != b.c)
        throw DataError(std::string(what) + ": clip shapes differ");
    if (a.data.empty()) throw DataError(std::string(what) + ": empty clip");
}

// Rec.601 luma plane of one frame.
std::vector<double> luma(const VideoClip& v, int f) {
    std::vector<double> y(static_cast<std::size_t>(v.h) * v.w);
    for (int i = 0; i < v.h; ++i)
        for (int j = 0; j < v.w; ++j) {
            if (v.c == 1) {
                y[static_cast<std::size_t>(i) * v.w + j] = v.at(f, i, j, 0);
            } else {
                y[static_cast<std::size_t>(i) * v.w + j] = 0.299 * v.at(f, i, j, 0) +
                                                           0.587 * v.at(f, i, j, 1) +
                                                           0.114 * v.at(f, i, j, 2);
            }
        }
    return y;
}

constexpr int kWin = 11;

const std::array<double, kWin * kWin>& gaussian_window() {
    static const std::array<double, kWin * kWin> w = [] {
        std::array<double, kWin * kWin> out{};
        const double sigma = 1.5;
        double sum = 0;
        for (int i = 0; i < kWin; ++i)
            for (int j = 0; j < kWin; ++j) {
                double dy = i - kWin / 2, dx = j - kWin / 2;
                out[static_cast<std::size_t>(i) * kWin + j] =
                    std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
                sum += out[static_cast<std::size_t>(i) * kWin + j];
            }
        for (double& v : out) v /= sum;
        return out;
    }();
    return w;
}

double ssim_frame(const std::vector<double>& ya, const std::vector<double>& yb, int h, int w) {
    const auto& win = gaussian_window();
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    long count = 0;
    for (int y0 = 0; y0 + kWin <= h; ++y0)
        for (int x0 = 0; x0 + kWin <= w; ++x0) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i < kWin; ++i)
                for (int j = 0; j < kWin; ++j) {
                    double g = win[static_cast<std::size_t>(i) * kWin + j];
                    double va = ya[static_cast<std::size_t>(y0 + i) * w + (x0 + j)];
                    double vb = yb[static_cast<std::size_t>(y0 + i) * w + (x0 + j)];
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            double var_a = saa - ma * ma;
            double var_b = sbb - mb * mb;
            double cov = sab - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            ++count;
        }
    return total / static_cast<double>(count);
}

}  // namespace

double psnr(const VideoClip& a, const VideoClip& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const VideoClip& a, const VideoClip& b) {
    require_same_shape(a, b, "ssim");
    if (a.h < kWin || a.w < kWin) throw DataError("ssim: frames smaller than the 11x11 window");
    double total = 0;
    for (int f = 0; f < a.t; ++f) total += ssim_frame(luma(a, f), luma(b, f), a.h, a.w);
    return total / a.t;
}

double l1_error(const VideoClip& a, const VideoClip& b) {
    require_same_shape(a, b, "l1");
    double sum = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        sum += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
    return sum / static_cast<double>(a.data.size());
}

EvalReport evaluate(const std::vector<VideoClip>& eval_set, int n_ref_frames, const ReconFn& recon,
                    const PatchSpec& patch, const ClipMetricFn* plugin) {
    if (eval_set.empty()) throw DataError("evaluation set is empty");
    EvalReport report;
    report.compression_ratio = compression_ratio_string(patch);
    double lpips_sum = 0;
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        const VideoClip& clip = eval_set[i];
        ClipSplit split = split_reference(clip, n_ref_frames);
        VideoClip rec = recon(clip);
        ClipScore s;
        s.id = clip.source_id.empty() ? "clip-" + std::to_string(i) : clip.source_id;
        s.psnr = psnr(rec, split.target);
        s.ssim = ssim(rec, split.target);
        s.l1 = l1_error(rec, split.target);
        if (plugin && *plugin) {
            s.lpips = (*plugin)(rec, split.target);
            lpips_sum += *s.lpips;
        }
        report.mean_psnr += s.psnr;
        report.mean_ssim += s.ssim;
        report.mean_l1 += s.l1;
        report.clips.push_back(std::move(s));
    }
    report.clip_count = static_cast<int>(eval_set.size());
    report.mean_psnr /= report.clip_count;
    report.mean_ssim /= report.clip_count;
    report.mean_l1 /= report.clip_count;
    if (plugin && *plugin) report.mean_lpips = lpips_sum / report.clip_count;
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["clip_count"] = clip_count;
    j["compression_ratio"] = compression_ratio;
    j["convention"] = convention;
    j["mean"] = {{"psnr", mean_psnr}, {"ssim", mean_ssim}, {"l1", mean_l1},
                 {"l1_x100", mean_l1 * 100.0}};
    if (mean_lpips) j["mean"]["lpips"] = *mean_lpips;
    j["clips"] = nlohmann::json::array();
    for (const ClipScore& s : clips) {
        nlohmann::json c{{"id", s.id}, {"psnr", s.psnr}, {"ssim", s.ssim}, {"l1", s.l1},
                         {"l1_x100", s.l1 * 100.0}};
        if (s.lpips) c["lpips"] = *s.lpips;
        j["clips"].push_back(std::move(c));
    }
    return j.dump(2);
}

std::string EvalReport::to_table() const {
    std::ostringstream out;
    const bool with_lpips = mean_lpips.has_value();
    char line[160];
    std::snprintf(line, sizeof(line), "%-18s %8s %8s %10s%s\n", "clip", "PSNR", "SSIM",
                  "L1(x1e-2)", with_lpips ? "    LPIPS" : "");
    out << line;
    auto row = [&](const std::string& id, double p, double s, double l,
                   const std::optional<double>& lp) {
        std::snprintf(line, sizeof(line), "%-18s %8.2f %8.4f %10.2f", id.c_str(), p, s, l * 100.0);
        out << line;
        if (with_lpips) {
            std::snprintf(line, sizeof(line), " %8.4f", lp.value_or(0.0));
            out << line;
        }
        out << '\n';
    };
    for (const ClipScore& s : clips) row(s.id, s.psnr, s.ssim, s.l1, s.lpips);
    row("mean", mean_psnr, mean_ssim, mean_l1, mean_lpips);
    out << clip_count << " clips, " << compression_ratio << "; " << convention << "\n";
    return out.str();
}

ClipMetricFn make_subprocess_metric(const std::string& cmd) {
    return [cmd](const VideoClip& a, const VideoClip& b) -> double {
        namespace fs = std::filesystem;
        static std::atomic<unsigned> counter{0};
        const std::string tag = std::to_string(counter.fetch_add(1));
        fs::path pa = fs::temp_directory_path() / ("reftok_metric_a_" + tag + ".rvc");
        fs::path pb = fs::temp_directory_path() / ("reftok_metric_b_" + tag + ".rvc");
        save_rvc(a, pa.string());
        save_rvc(b, pb.string());
        std::string full = cmd + " " + pa.string() + " " + pb.string();
        FILE* pipe = popen(full.c_str(), "r");
        if (!pipe) throw DataError("metric plugin: failed to launch: " + cmd);
        char buf[256];
        std::string output;
        while (std::fgets(buf, sizeof(buf), pipe)) output += buf;
        int status = pclose(pipe);
        fs::remove(pa);
        fs::remove(pb);
        if (status != 0)
            throw DataError("metric plugin exited with status " + std::to_string(status) + ": " + cmd);
        try {
            return std::stod(output);
        } catch (const std::exception&) {
            throw DataError("metric plugin printed no parseable float: '" + output + "'");
        }
    };
}

}  // namespace reftok
