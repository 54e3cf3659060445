#pragma once

// Reconstruction quality metrics (PSNR, SSIM, L1) and evaluation reports
// over clip sets. Metrics are computed on target frames only; every report
// states that convention.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "reftok/patchgrid.hpp"
#include "reftok/video.hpp"

namespace reftok {

// 10*log10(1/MSE) in dB, capped at 100 for (near-)exact matches.
double psnr(const VideoClip& a, const VideoClip& b);

// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5) on Rec.601
// luma, valid region only, averaged across frames. Standard constants
// C1=0.01^2, C2=0.03^2 at unit dynamic range.
double ssim(const VideoClip& a, const VideoClip& b);

// Mean absolute difference. Reports display it in the x10^-2 convention.
double l1_error(const VideoClip& a, const VideoClip& b);

struct ClipScore {
    std::string id;
    double psnr = 0;
    double ssim = 0;
    double l1 = 0;
    std::optional<double> lpips;
};

struct EvalReport {
    std::vector<ClipScore> clips;
    double mean_psnr = 0;
    double mean_ssim = 0;
    double mean_l1 = 0;
    std::optional<double> mean_lpips;
    std::string compression_ratio;
    int clip_count = 0;
    std::string convention = "metrics computed on target frames only";

    std::string to_json() const;
    std::string to_table() const;
};

// Produces the reconstruction of a clip's TARGET frames.
using ReconFn = std::function<VideoClip(const VideoClip&)>;
// Optional plug-in distance between two clips (e.g. an external LPIPS).
using ClipMetricFn = std::function<double(const VideoClip&, const VideoClip&)>;

EvalReport evaluate(const std::vector<VideoClip>& eval_set, int n_ref_frames,
                    const ReconFn& recon, const PatchSpec& patch,
                    const ClipMetricFn* plugin = nullptr);

// Wraps an external command into a ClipMetricFn. Contract: the command is
// invoked as `cmd <a.rvc> <b.rvc>` and prints one float on stdout.
ClipMetricFn make_subprocess_metric(const std::string& cmd);

}  // namespace reftok
