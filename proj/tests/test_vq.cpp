#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "reftok/autodiff.hpp"
#include "reftok/errors.hpp"
#include "reftok/rng.hpp"
#include "reftok/vq.hpp"

using namespace reftok;

static MatF random_rows(int n, int d, Rng& rng, float scale = 1.0f) {
    MatF m(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = static_cast<float>((uniform01(rng) * 2 - 1) * scale);
    return m;
}

static Codebook make_book(const MatF& vectors) {
    Codebook b;
    b.vectors = vectors;
    b.usage = Eigen::VectorXf::Ones(vectors.rows());
    b.reset_ema_to_current();
    return b;
}

TEST_CASE("quantize picks the nearest code and is exact on codewords") {
    MatF codes(2, 2);
    codes << 0, 0, 1, 1;
    Codebook book = make_book(codes);

    MatF h(1, 2);
    h << 0.2f, 0.1f;
    QuantizeResult q = quantize(h, book);
    CHECK(q.indices == std::vector<int>{0});
    CHECK(q.quantized(0, 0) == 0.0f);
    CHECK(q.quantized(0, 1) == 0.0f);

    MatF exact(1, 2);
    exact << 1.0f, 1.0f;
    QuantizeResult qe = quantize(exact, book);
    CHECK(qe.indices == std::vector<int>{1});
    CHECK(qe.codebook_loss == 0.0f);
    CHECK(qe.commitment_loss == 0.0f);

    MatF wrong(1, 3);
    wrong.setZero();
    CHECK_THROWS_AS(quantize(wrong, book), DataError);
    CHECK_THROWS_AS(quantize(MatF(0, 2), book), DataError);
}

TEST_CASE("quantize ties break to the lowest index") {
    MatF codes(3, 2);
    codes << 1, 0, -1, 0, 1, 0;  // codes 0 and 2 identical; 0 and 1 equidistant from origin
    Codebook book = make_book(codes);
    MatF h(1, 2);
    h << 0.0f, 0.0f;
    CHECK(quantize(h, book).indices == std::vector<int>{0});
    h << 1.0f, 0.0f;  // exact hit on duplicated codes 0 and 2
    CHECK(quantize(h, book).indices == std::vector<int>{0});
}

TEST_CASE("quantize matches a brute-force distance scan on random data") {
    Rng rng = make_rng(11, 0);
    Codebook book = make_book(random_rows(64, 8, rng));
    MatF h = random_rows(1000, 8, rng);
    QuantizeResult q = quantize(h, book);
    for (int i = 0; i < 1000; ++i) {
        int best = 0;
        float best_d = std::numeric_limits<float>::max();
        for (int k = 0; k < 64; ++k) {
            float d = (h.row(i) - book.vectors.row(k)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        REQUIRE(q.indices[i] == best);
        // Output rows are exact codebook rows.
        REQUIRE((q.quantized.row(i).array() == book.vectors.row(best).array()).all());
    }
}

TEST_CASE("lookup gathers codebook rows and validates indices") {
    Rng rng = make_rng(12, 0);
    Codebook book = make_book(random_rows(8, 4, rng));
    CHECK(lookup({}, book).rows() == 0);
    MatF two = lookup({0, 0}, book);
    CHECK((two.row(0).array() == book.vectors.row(0).array()).all());
    CHECK((two.row(1).array() == book.vectors.row(0).array()).all());
    CHECK_THROWS_AS(lookup({8}, book), DataError);

    MatF h = random_rows(16, 4, rng);
    QuantizeResult q = quantize(h, book);
    MatF round = lookup(q.indices, book);
    CHECK((round.array() == q.quantized.array()).all());
}

TEST_CASE("usage tracking: uniform batches approach perplexity K") {
    Rng rng = make_rng(13, 0);
    const int K = 64;
    Codebook book = make_book(random_rows(K, 4, rng));
    book.usage.setZero();
    std::vector<int> uniform(K);
    for (int k = 0; k < K; ++k) uniform[k] = k;
    for (int step = 0; step < 400; ++step) update_usage(book, uniform);
    CHECK(perplexity(book) == doctest::Approx(64.0).epsilon(1e-3));
    CHECK(utilization(book) == doctest::Approx(1.0));

    Codebook collapsed = make_book(random_rows(K, 4, rng));
    collapsed.usage.setZero();
    std::vector<int> zeros(K, 0);
    for (int step = 0; step < 400; ++step) update_usage(collapsed, zeros);
    CHECK(perplexity(collapsed) < 1.1);
    for (int k = 1; k < K; ++k) CHECK(collapsed.usage(k) < collapsed.usage(0));
}

TEST_CASE("ema updates pull codes toward assigned cluster means") {
    Rng rng = make_rng(14, 0);
    MatF codes(2, 2);
    codes << 0.5f, 0.5f, 9.0f, 9.0f;
    Codebook book = make_book(codes);
    book.usage.setZero();
    book.ema_sum.setZero();

    MatF batch(6, 2);
    batch << 0, 0, 0.2f, 0, 0, 0.2f, 10, 10, 10.2f, 10, 10, 10.2f;
    for (int step = 0; step < 600; ++step) {
        QuantizeResult q = quantize(batch, book);
        ema_update(book, batch, q.indices);
    }
    CHECK(book.vectors(0, 0) == doctest::Approx(0.0667f).epsilon(0.05));
    CHECK(book.vectors(1, 0) == doctest::Approx(10.0667f).epsilon(0.01));
}

TEST_CASE("LBG doubling splits every code and respects K_max") {
    Rng rng = make_rng(15, 0);
    Codebook book = make_book(random_rows(2, 3, rng));
    book.usage << 4.0f, 2.0f;
    MatF before = book.vectors;
    split_double(book, 128);
    CHECK(book.K() == 4);
    const float eps = 1e-3f;
    CHECK((book.vectors.row(0) - before.row(0) * (1 + eps)).cwiseAbs().maxCoeff() < 1e-6f);
    CHECK((book.vectors.row(2) - before.row(0) * (1 - eps)).cwiseAbs().maxCoeff() < 1e-6f);
    CHECK(book.usage(0) == 2.0f);
    CHECK(book.usage(2) == 2.0f);
    CHECK(book.usage(1) == 1.0f);
    CHECK(book.usage(3) == 1.0f);

    CHECK_THROWS_AS(split_double(book, 4), ConfigError);
}

TEST_CASE("utilization does not decrease across a doubling split") {
    Rng rng = make_rng(16, 0);
    Codebook book = make_book(random_rows(8, 3, rng));
    book.usage << 10, 10, 10, 10, 0, 0, 10, 10;  // two dead codes
    float before = utilization(book);
    split_double(book, 64);
    CHECK(utilization(book) >= before - 1e-6f);
}

TEST_CASE("LBG split plus Lloyd refinement recovers 1D clusters") {
    // Start from one centroid at 5.0 over data {0,0,10,10}.
    Codebook book;
    book.vectors = MatF(1, 1);
    book.vectors << 5.0f;
    book.usage = Eigen::VectorXf::Ones(1);
    book.reset_ema_to_current();

    MatF data(4, 1);
    data << 0, 0, 10, 10;
    split_double(book, 16);
    refine_assignments(data, book, 10);
    float lo = std::min(book.vectors(0, 0), book.vectors(1, 0));
    float hi = std::max(book.vectors(0, 0), book.vectors(1, 0));
    CHECK(lo == doctest::Approx(0.0f).epsilon(1e-3));
    CHECK(hi == doctest::Approx(10.0f).epsilon(1e-3));
}

TEST_CASE("refinement MSE is non-increasing and near a k-means oracle") {
    Rng rng = make_rng(17, 0);
    // 2D mixture of four Gaussians.
    const int per = 50;
    MatF data(4 * per, 2);
    const float cx[4] = {-3, 3, -3, 3};
    const float cy[4] = {-3, -3, 3, 3};
    for (int g = 0; g < 4; ++g)
        for (int i = 0; i < per; ++i) {
            data(g * per + i, 0) = cx[g] + static_cast<float>(normal(rng, 0.0, 0.4));
            data(g * per + i, 1) = cy[g] + static_cast<float>(normal(rng, 0.0, 0.4));
        }

    Rng init_rng = make_rng(17, 1);
    Codebook book = create_codebook(4, 2, init_rng);
    std::vector<float> mse = refine_assignments(data, book, 30);
    for (std::size_t i = 1; i < mse.size(); ++i) CHECK(mse[i] <= mse[i - 1] + 1e-6f);

    // Best-of-10 restarts of a plain Lloyd loop seeded from data points.
    float best = std::numeric_limits<float>::max();
    for (int trial = 0; trial < 10; ++trial) {
        Rng r = make_rng(99, trial);
        MatF centers(4, 2);
        for (int k = 0; k < 4; ++k) centers.row(k) = data.row(uniform_int(r, 0, 4 * per - 1));
        Codebook oracle = make_book(centers);
        std::vector<float> m = refine_assignments(data, oracle, 30);
        best = std::min(best, m.back());
    }
    CHECK(mse.back() <= best * 1.05f + 1e-6f);
}

TEST_CASE("dead-code replacement reseeds from the busiest code") {
    Rng rng = make_rng(18, 0);
    Codebook book = make_book(random_rows(6, 3, rng, 2.0f));

    // Batch clustered near codes 0 and 1 only; usage taken from its
    // actual assignments, so the remaining codes are dead on this batch.
    MatF batch(40, 3);
    for (int i = 0; i < 40; ++i) {
        int target = i % 2;
        for (int j = 0; j < 3; ++j)
            batch(i, j) = book.vectors(target, j) + static_cast<float>(normal(rng, 0.0, 0.05));
    }
    book.usage.setZero();
    update_usage(book, quantize(batch, book).indices, 0.0f);
    REQUIRE(book.usage(0) > 0.0f);
    REQUIRE(book.usage(1) > 0.0f);
    auto min_dist_sum = [&](const Codebook& b) {
        double s = 0;
        for (int i = 0; i < batch.rows(); ++i) {
            float bd = std::numeric_limits<float>::max();
            for (int k = 0; k < b.K(); ++k)
                bd = std::min(bd, (batch.row(i) - b.vectors.row(k)).squaredNorm());
            s += bd;
        }
        return s;
    };

    double before = min_dist_sum(book);
    Rng drng = make_rng(18, 1);
    int replaced = split_dead_replace(book, drng);
    CHECK(replaced == 4);
    CHECK(min_dist_sum(book) <= before + 1e-9);

    // All codes healthy: nothing changes.
    Codebook healthy = make_book(random_rows(4, 3, rng));
    healthy.usage << 5, 6, 7, 8;
    MatF keep = healthy.vectors;
    CHECK(split_dead_replace(healthy, drng) == 0);
    CHECK((healthy.vectors.array() == keep.array()).all());
}

TEST_CASE("straight-through surrogate gradient matches finite differences") {
    // Toy net: h = x W, z = h + const(q - h), loss = mean((z V - y)^2).
    // With the quantizer frozen as an identity-with-offset, d loss / d W from
    // the tape must match central differences at 1e-4 relative error.
    Rng rng = make_rng(19, 0);
    using MatD = ad::Mat<double>;
    MatD x(3, 4), W(4, 3), V(3, 2), y(3, 2);
    auto fill = [&](MatD& m) {
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j) m(i, j) = uniform01(rng) * 2 - 1;
    };
    fill(x);
    fill(W);
    fill(V);
    fill(y);

    Codebook book = make_book([&] {
        Rng r = make_rng(19, 1);
        return random_rows(8, 3, r);
    }());

    // Freeze quantizer offsets at the base point.
    MatF h_base = (x * W).cast<float>();
    QuantizeResult q = quantize(h_base, book);
    MatD offset = (q.quantized - h_base).cast<double>();

    ad::Tape<double> tape;
    ad::Var<double> Wv = tape.leaf(W);
    ad::Var<double> z = ad::add(ad::matmul(tape.constant(x), Wv), tape.constant(offset));
    ad::Var<double> loss = ad::mean_sq_diff(ad::matmul(z, tape.constant(V)), tape.constant(y));
    tape.backward(loss);
    MatD analytic = tape.grad(Wv.id);

    const double h = 1e-6;
    for (int i = 0; i < W.rows(); ++i)
        for (int j = 0; j < W.cols(); ++j) {
            auto eval = [&](double delta) {
                MatD Wp = W;
                Wp(i, j) += delta;
                ad::Tape<double> t;
                ad::Var<double> zz = ad::add(ad::matmul(t.constant(x), t.leaf(Wp)), t.constant(offset));
                return ad::mean_sq_diff(ad::matmul(zz, t.constant(V)), t.constant(y)).val()(0, 0);
            };
            double numeric = (eval(h) - eval(-h)) / (2 * h);
            double rel = std::abs(analytic(i, j) - numeric) /
                         (1e-12 + std::max(std::abs(analytic(i, j)), std::abs(numeric)));
            CHECK(rel <= 1e-4);
        }
}

TEST_CASE("codebook block serialization round-trips") {
    Rng rng = make_rng(20, 0);
    Codebook book = make_book(random_rows(16, 8, rng));
    book.usage.setLinSpaced(16, 0.0f, 3.0f);
    ByteWriter w;
    write_codebook(w, book);
    ByteReader r(std::vector<std::uint8_t>(w.data()));
    Codebook back = read_codebook(r);
    CHECK(back.K() == 16);
    CHECK(back.D() == 8);
    CHECK((back.vectors.array() == book.vectors.array()).all());
    CHECK((back.usage.array() == book.usage.array()).all());
}
