#include "reftok/vq.hpp"

#include <cmath>
#include <limits>

#include "reftok/errors.hpp"

namespace reftok {

void Codebook::reset_ema_to_current() {
    ema_sum = vectors.array().colwise() * usage.array();
}

Codebook create_codebook(int K, int D, Rng& rng, float init_std) {
    if (K < 2) throw ConfigError("codebook size must be at least 2");
    Codebook book;
    book.vectors.resize(K, D);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < D; ++j) book.vectors(i, j) = static_cast<float>(normal(rng, 0.0, init_std));
    book.usage = Eigen::VectorXf::Zero(K);
    book.ema_sum = MatF::Zero(K, D);
    return book;
}

namespace {

int nearest_code(const MatF& book, const float* row, int D) {
    int best = 0;
    float best_d = std::numeric_limits<float>::max();
    for (int k = 0; k < book.rows(); ++k) {
        float d = 0.0f;
        const float* code = book.data() + static_cast<std::ptrdiff_t>(k) * D;
        for (int j = 0; j < D; ++j) {
            float diff = row[j] - code[j];
            d += diff * diff;
        }
        if (d < best_d) {  // strict: ties keep the lowest index
            best_d = d;
            best = k;
        }
    }
    return best;
}

}  // namespace

QuantizeResult quantize(const MatF& h, const Codebook& book) {
    if (h.rows() == 0) throw DataError("quantize: empty input");
    if (h.cols() != book.vectors.cols())
        throw DataError("quantize: dimension mismatch (input " + std::to_string(h.cols()) +
                        ", codebook " + std::to_string(book.vectors.cols()) + ")");
    const int N = static_cast<int>(h.rows());
    const int D = book.D();
    QuantizeResult out;
    out.indices.resize(N);
    out.quantized.resize(N, D);
    double sq_sum = 0.0;
    for (int i = 0; i < N; ++i) {
        int k = nearest_code(book.vectors, h.data() + static_cast<std::ptrdiff_t>(i) * D, D);
        out.indices[i] = k;
        out.quantized.row(i) = book.vectors.row(k);
        sq_sum += static_cast<double>((h.row(i) - book.vectors.row(k)).squaredNorm());
    }
    float mean_sq = static_cast<float>(sq_sum / (static_cast<double>(N) * D));
    out.codebook_loss = mean_sq;
    out.commitment_loss = mean_sq;
    return out;
}

MatF lookup(const std::vector<int>& indices, const Codebook& book) {
    MatF out(static_cast<Eigen::Index>(indices.size()), book.D());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= book.K())
            throw DataError("codebook index out of range: " + std::to_string(indices[i]));
        out.row(static_cast<Eigen::Index>(i)) = book.vectors.row(indices[i]);
    }
    return out;
}

void update_usage(Codebook& book, const std::vector<int>& indices, float decay) {
    Eigen::VectorXf counts = Eigen::VectorXf::Zero(book.K());
    for (int k : indices) {
        if (k < 0 || k >= book.K()) throw DataError("usage update: index out of range");
        counts(k) += 1.0f;
    }
    book.usage = decay * book.usage + (1.0f - decay) * counts;
}

void ema_update(Codebook& book, const MatF& h, const std::vector<int>& indices, float decay,
                float laplace_eps) {
    if (static_cast<Eigen::Index>(indices.size()) != h.rows())
        throw DataError("ema update: index count does not match rows");
    const int K = book.K();
    Eigen::VectorXf counts = Eigen::VectorXf::Zero(K);
    MatF sums = MatF::Zero(K, book.D());
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
        int k = indices[static_cast<std::size_t>(i)];
        if (k < 0 || k >= K) throw DataError("ema update: index out of range");
        counts(k) += 1.0f;
        sums.row(k) += h.row(i);
    }
    book.usage = decay * book.usage + (1.0f - decay) * counts;
    book.ema_sum = decay * book.ema_sum + (1.0f - decay) * sums;
    const float total = book.usage.sum();
    if (total <= 0.0f) return;
    for (int k = 0; k < K; ++k) {
        float smoothed = (book.usage(k) + laplace_eps) / (total + K * laplace_eps) * total;
        book.vectors.row(k) = book.ema_sum.row(k) / smoothed;
    }
}

float perplexity(const Codebook& book) {
    const float total = book.usage.sum();
    if (total <= 0.0f) return 0.0f;
    double entropy = 0.0;
    for (int k = 0; k < book.K(); ++k) {
        double p = book.usage(k) / total;
        if (p > 0.0) entropy -= p * std::log(p);
    }
    return static_cast<float>(std::exp(entropy));
}

float utilization(const Codebook& book, float threshold_frac) {
    const float total = book.usage.sum();
    if (total <= 0.0f) return 0.0f;
    const float threshold = threshold_frac * total / static_cast<float>(book.K());
    int live = 0;
    for (int k = 0; k < book.K(); ++k)
        if (book.usage(k) > threshold) ++live;
    return static_cast<float>(live) / static_cast<float>(book.K());
}

void split_double(Codebook& book, int k_max, float eps) {
    const int K = book.K();
    if (2 * K > k_max)
        throw ConfigError("codebook split would exceed maximum size (" + std::to_string(2 * K) +
                          " > " + std::to_string(k_max) + ")");
    MatF vecs(2 * K, book.D());
    vecs.topRows(K) = book.vectors * (1.0f + eps);
    vecs.bottomRows(K) = book.vectors * (1.0f - eps);
    Eigen::VectorXf usage(2 * K);
    usage.head(K) = book.usage * 0.5f;
    usage.tail(K) = book.usage * 0.5f;
    book.vectors = std::move(vecs);
    book.usage = std::move(usage);
    book.reset_ema_to_current();
}

int split_dead_replace(Codebook& book, Rng& rng, float threshold_frac, float eps) {
    const float total = book.usage.sum();
    if (total <= 0.0f) return 0;
    const int K = book.K();
    const float threshold = threshold_frac * total / static_cast<float>(K);
    int replaced = 0;
    for (int k = 0; k < K; ++k) {
        if (book.usage(k) >= threshold) continue;
        int donor = 0;
        book.usage.maxCoeff(&donor);
        if (donor == k) break;  // nothing healthy left to copy
        for (int j = 0; j < book.D(); ++j) {
            float u = static_cast<float>(uniform01(rng)) * 2.0f - 1.0f;
            book.vectors(k, j) = book.vectors(donor, j) * (1.0f + eps * u);
        }
        float half = book.usage(donor) * 0.5f;
        book.usage(donor) = half;
        book.usage(k) = half;
        ++replaced;
    }
    if (replaced > 0) book.reset_ema_to_current();
    return replaced;
}

std::vector<float> refine_assignments(const MatF& data, Codebook& book, int iters) {
    if (data.rows() == 0) throw DataError("refine: empty data");
    if (data.cols() != book.vectors.cols()) throw DataError("refine: dimension mismatch");
    const int N = static_cast<int>(data.rows());
    const int D = book.D();
    const int K = book.K();
    std::vector<float> mse_per_iter;
    std::vector<int> assign(N);
    for (int it = 0; it < iters; ++it) {
        for (int i = 0; i < N; ++i)
            assign[i] = nearest_code(book.vectors, data.data() + static_cast<std::ptrdiff_t>(i) * D, D);

        std::vector<int> counts(K, 0);
        MatF sums = MatF::Zero(K, D);
        for (int i = 0; i < N; ++i) {
            counts[assign[i]] += 1;
            sums.row(assign[i]) += data.row(i);
        }
        for (int k = 0; k < K; ++k)
            if (counts[k] > 0) book.vectors.row(k) = sums.row(k) / static_cast<float>(counts[k]);

        // Re-seed empty clusters from the largest cluster's farthest point.
        for (int k = 0; k < K; ++k) {
            if (counts[k] > 0) continue;
            int largest = 0;
            for (int c = 1; c < K; ++c)
                if (counts[c] > counts[largest]) largest = c;
            if (counts[largest] <= 1) continue;
            int far_i = -1;
            float far_d = -1.0f;
            for (int i = 0; i < N; ++i) {
                if (assign[i] != largest) continue;
                float d = (data.row(i) - book.vectors.row(largest)).squaredNorm();
                if (d > far_d) {
                    far_d = d;
                    far_i = i;
                }
            }
            if (far_i < 0) continue;
            book.vectors.row(k) = data.row(far_i);
            assign[far_i] = k;
            counts[k] = 1;
            counts[largest] -= 1;
        }

        double sq = 0.0;
        for (int i = 0; i < N; ++i) {
            int k = nearest_code(book.vectors, data.data() + static_cast<std::ptrdiff_t>(i) * D, D);
            sq += static_cast<double>((data.row(i) - book.vectors.row(k)).squaredNorm());
        }
        mse_per_iter.push_back(static_cast<float>(sq / (static_cast<double>(N) * D)));
    }
    book.reset_ema_to_current();
    return mse_per_iter;
}

void write_codebook(ByteWriter& w, const Codebook& book) {
    w.magic("RTKB");
    w.u32(static_cast<std::uint32_t>(book.K()));
    w.u32(static_cast<std::uint32_t>(book.D()));
    for (int i = 0; i < book.K(); ++i)
        for (int j = 0; j < book.D(); ++j) w.f32(book.vectors(i, j));
    for (int k = 0; k < book.K(); ++k) w.f32(book.usage(k));
}

Codebook read_codebook(ByteReader& r) {
    r.expect_magic("RTKB", "codebook block");
    const int K = static_cast<int>(r.u32());
    const int D = static_cast<int>(r.u32());
    if (K < 2 || D < 1) throw DataError("codebook block: bad dimensions");
    Codebook book;
    book.vectors.resize(K, D);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < D; ++j) book.vectors(i, j) = r.f32();
    book.usage.resize(K);
    for (int k = 0; k < K; ++k) book.usage(k) = r.f32();
    book.reset_ema_to_current();
    return book;
}

}  // namespace reftok
