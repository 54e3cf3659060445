#pragma once

// Vector-quantization bottleneck: nearest-code assignment, usage tracking,
// EMA codebook updates, LBG-style splitting, and Lloyd refinement.

#include <vector>

#include "reftok/nn.hpp"
#include "reftok/rng.hpp"
#include "reftok/serialize.hpp"

namespace reftok {

struct Codebook {
    MatF vectors;             // K x D code vectors
    Eigen::VectorXf usage;    // EMA of per-code assignment counts
    MatF ema_sum;             // K x D EMA of assigned-vector sums (drives code updates)

    int K() const { return static_cast<int>(vectors.rows()); }
    int D() const { return static_cast<int>(vectors.cols()); }

    // Rebuild the EMA numerators so vectors stay fixed points of the update.
    void reset_ema_to_current();
};

Codebook create_codebook(int K, int D, Rng& rng, float init_std = 1.0f);

struct QuantizeResult {
    std::vector<int> indices;
    MatF quantized;          // codebook rows at indices (bit-equal)
    float codebook_loss = 0.0f;    // mean squared distance, gradient side: codes
    float commitment_loss = 0.0f;  // mean squared distance, gradient side: encoder
};

// Nearest code by squared L2; ties break to the lowest index.
QuantizeResult quantize(const MatF& h, const Codebook& book);

MatF lookup(const std::vector<int>& indices, const Codebook& book);

// usage <- decay * usage + (1 - decay) * per-batch counts.
void update_usage(Codebook& book, const std::vector<int>& indices, float decay = 0.99f);

// Full EMA codebook update (usage + numerators + code vectors) with Laplace
// smoothing so rarely used codes do not collapse to zero.
void ema_update(Codebook& book, const MatF& h, const std::vector<int>& indices,
                float decay = 0.99f, float laplace_eps = 1e-5f);

float perplexity(const Codebook& book);

// Fraction of codes whose usage exceeds threshold_frac of the uniform share.
float utilization(const Codebook& book, float threshold_frac = 0.01f);

// LBG doubling: each code c becomes the pair c(1+eps), c(1-eps); K -> 2K.
// New rows are laid out as [all c(1+eps); all c(1-eps)]; usage is halved
// and copied. Throws ConfigError when 2K would exceed k_max.
void split_double(Codebook& book, int k_max, float eps = 1e-3f);

// Re-seed codes whose usage falls below threshold_frac of the uniform share
// as perturbed copies of the highest-usage code (which donates half its usage).
// Returns the number of codes replaced.
int split_dead_replace(Codebook& book, Rng& rng, float threshold_frac = 0.01f, float eps = 1e-3f);

// Lloyd iterations (assign, then recompute centroids) over a data batch.
// Empty clusters are re-seeded from the largest cluster's farthest point.
// Returns the per-element quantization MSE after each iteration.
std::vector<float> refine_assignments(const MatF& data, Codebook& book, int iters);

// Codebook block inside checkpoints: "RTKB", u32 K, u32 D,
// f32 vectors row-major, f32 usage.
void write_codebook(ByteWriter& w, const Codebook& book);
Codebook read_codebook(ByteReader& r);

}  // namespace reftok
