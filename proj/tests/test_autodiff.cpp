#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "reftok/attnmask.hpp"
#include "reftok/autodiff.hpp"
#include "reftok/nn.hpp"
#include "reftok/rng.hpp"

using namespace reftok;
using ad::Var;
using MatD = ad::Mat<double>;

static MatD random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    MatD m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = (uniform01(rng) * 2.0 - 1.0) * scale;
    return m;
}

// Central-difference check of d(build)/d(inputs) for every coordinate.
using BuildFn = std::function<Var<double>(ad::Tape<double>&, std::vector<Var<double>>&)>;

static void check_grads(std::vector<MatD> inputs, const BuildFn& build, double tol = 1e-7,
                        double h = 1e-6) {
    // Analytic gradients.
    ad::Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const MatD& m : inputs) vars.push_back(tape.leaf(m));
    Var<double> loss = build(tape, vars);
    REQUIRE(loss.rows() == 1);
    REQUIRE(loss.cols() == 1);
    tape.backward(loss);

    auto eval = [&](const std::vector<MatD>& xs) {
        ad::Tape<double> t;
        std::vector<Var<double>> vs;
        for (const MatD& m : xs) vs.push_back(t.leaf(m));
        return build(t, vs).val()(0, 0);
    };

    for (std::size_t p = 0; p < inputs.size(); ++p) {
        MatD analytic = tape.has_grad(vars[p].id)
                            ? tape.grad(vars[p].id)
                            : MatD::Zero(inputs[p].rows(), inputs[p].cols());
        for (int i = 0; i < inputs[p].rows(); ++i)
            for (int j = 0; j < inputs[p].cols(); ++j) {
                std::vector<MatD> xs = inputs;
                xs[p](i, j) += h;
                double up = eval(xs);
                xs[p](i, j) -= 2 * h;
                double down = eval(xs);
                double numeric = (up - down) / (2 * h);
                double err = std::abs(analytic(i, j) - numeric);
                double scale = 1.0 + std::abs(analytic(i, j)) + std::abs(numeric);
                INFO("input ", p, " coord (", i, ",", j, "): analytic ", analytic(i, j),
                     " numeric ", numeric);
                CHECK(err <= tol * scale);
            }
    }
}

TEST_CASE("gradients: elementwise ops") {
    Rng rng = make_rng(1, 0);
    MatD a = random_mat(3, 4, rng);
    MatD b = random_mat(3, 4, rng);

    check_grads({a, b}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::hadamard(ad::add(v[0], v[1]), ad::sub(v[0], v[1])));
    });
    check_grads({a}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::sum_all(ad::scale(v[0], 2.5));
    });
    check_grads({a}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::gelu(v[0]));
    });
    // Keep relu/abs inputs away from the kink.
    MatD far = a;
    for (int i = 0; i < far.size(); ++i) far.data()[i] += (far.data()[i] >= 0 ? 0.5 : -0.5);
    check_grads({far}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::relu(v[0]));
    });
    check_grads({far}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::abs_elem(v[0]));
    });
    check_grads({a}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(v[0]));
    });
}

TEST_CASE("gradients: broadcast add and reductions") {
    Rng rng = make_rng(2, 0);
    MatD a = random_mat(4, 5, rng);
    MatD v = random_mat(1, 5, rng);
    check_grads({a, v}, [](ad::Tape<double>&, std::vector<Var<double>>& vs) {
        return ad::mean_all(ad::square(ad::add_rowvec(vs[0], vs[1])));
    });
    check_grads({a, v}, [](ad::Tape<double>&, std::vector<Var<double>>& vs) {
        return ad::sum_all(ad::add_rowvec(vs[0], vs[1]));
    });
}

TEST_CASE("gradients: matmul in all transpose combinations") {
    Rng rng = make_rng(3, 0);
    MatD a23 = random_mat(2, 3, rng);
    MatD b34 = random_mat(3, 4, rng);
    MatD a32 = random_mat(3, 2, rng);
    MatD b43 = random_mat(4, 3, rng);

    check_grads({a23, b34}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::matmul(v[0], v[1])));
    });
    check_grads({a32, b34}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::matmul(v[0], v[1], true, false)));
    });
    check_grads({a23, b43}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::matmul(v[0], v[1], false, true)));
    });
    check_grads({a32, b43}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::matmul(v[0], v[1], true, true)));
    });
}

TEST_CASE("gradients: slicing, concatenation, gather, reindex, pick") {
    Rng rng = make_rng(4, 0);
    MatD a = random_mat(5, 4, rng);
    MatD b = random_mat(2, 4, rng);

    check_grads({a}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::slice_rows(v[0], 1, 3)));
    });
    check_grads({a}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::slice_cols(v[0], 2, 2)));
    });
    check_grads({a, b}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::concat_rows<double>({v[0], v[1], v[0]})));
    });
    check_grads({a}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::concat_cols<double>({v[0], v[0]})));
    });
    check_grads({a}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::gather_rows(v[0], {4, 0, 0, 2})));
    });
    auto map = std::make_shared<ad::IndexMat>(2, 3);
    *map << 0, 5, 19, 7, -1, 5;  // repeated read and a zero-fill hole
    check_grads({a}, [map](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::reindex(v[0], map)));
    });
    check_grads({a}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::pick(v[0], {{0, 0}, {4, 3}, {0, 0}, {2, 1}})));
    });
}

TEST_CASE("gradients: softmax, log-softmax, layernorm") {
    Rng rng = make_rng(5, 0);
    MatD a = random_mat(4, 6, rng, 2.0);
    MatD g = random_mat(1, 6, rng);
    MatD b = random_mat(1, 6, rng);
    MatD w = random_mat(6, 1, rng);

    check_grads({a, w}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::matmul(ad::softmax_rows(v[0]), v[1])));
    });
    auto mask = std::make_shared<ad::BoolMat>(4, 6);
    mask->setConstant(1);
    (*mask)(0, 3) = 0;
    (*mask)(1, 0) = 0;
    (*mask)(1, 1) = 0;
    (*mask)(2, 5) = 0;
    std::shared_ptr<const ad::BoolMat> cmask = mask;
    check_grads({a, w}, [cmask](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::matmul(ad::softmax_rows(v[0], cmask), v[1])));
    });
    check_grads({a}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::log_softmax_rows(v[0])));
    });
    check_grads({a, g, b}, [](ad::Tape<double>&, std::vector<Var<double>>& v) {
        return ad::mean_all(ad::square(ad::layernorm(v[0], v[1], v[2])));
    }, 3e-7);
}

TEST_CASE("softmax values: rows sum to one, masked entries exactly zero") {
    Rng rng = make_rng(6, 0);
    ad::Tape<double> tape;
    Var<double> x = tape.leaf(random_mat(3, 5, rng, 3.0));
    auto mask = std::make_shared<ad::BoolMat>(3, 5);
    mask->setConstant(1);
    (*mask)(0, 2) = 0;
    (*mask)(1, 0) = 0;
    mask->row(2).setZero();  // fully masked row
    Var<double> p = ad::softmax_rows<double>(x, mask);
    CHECK(p.val()(0, 2) == 0.0);
    CHECK(p.val()(1, 0) == 0.0);
    CHECK(p.val().row(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.val().row(1).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.val().row(2).cwiseAbs().maxCoeff() == 0.0);

    // log_softmax agrees with log of softmax.
    ad::Tape<double> t2;
    MatD raw = random_mat(3, 5, rng, 2.0);
    Var<double> y = t2.leaf(raw);
    MatD ls = ad::log_softmax_rows(y).val();
    MatD sm = ad::softmax_rows(y).val();
    CHECK((ls.array().exp() - sm.array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("stopgrad blocks the backward path") {
    Rng rng = make_rng(7, 0);
    ad::Tape<double> tape;
    Var<double> x = tape.leaf(random_mat(2, 3, rng));
    Var<double> loss = ad::mean_all(ad::hadamard(x, ad::stopgrad(x)));
    tape.backward(loss);
    // d/dx mean(x * sg(x)) = sg(x)/N, not 2x/N.
    MatD expect = x.val() / 6.0;
    CHECK((tape.grad(x.id) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layernorm normalizes rows before affine") {
    Rng rng = make_rng(8, 0);
    ad::Tape<double> tape;
    Var<double> x = tape.leaf(random_mat(4, 8, rng, 3.0));
    MatD ones = MatD::Ones(1, 8);
    MatD zeros = MatD::Zero(1, 8);
    Var<double> y = ad::layernorm(x, tape.constant(ones), tape.constant(zeros));
    for (int i = 0; i < 4; ++i) {
        CHECK(y.val().row(i).mean() == doctest::Approx(0.0).epsilon(1e-10));
        double var = y.val().row(i).array().square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shifts it slightly
    }
}

// Finite differences through ParamStore-backed modules. Params are float;
// quantizing values and step to a power-of-two grid keeps the perturbation
// exactly representable so only truncation error remains.
static void check_param_grads(ParamStore& ps, const std::function<double(Ctx<double>&)>& build_loss,
                              double tol = 2e-4) {
    for (Param* p : ps.all())
        for (int i = 0; i < p->value.size(); ++i)
            p->value.data()[i] = std::round(p->value.data()[i] * 1024.0f) / 1024.0f;

    ad::Tape<double> tape;
    Ctx<double> ctx(tape, ps);
    // build_loss must call ctx.use for every param and run backward itself.
    build_loss(ctx);

    const float h = 1.0f / 1024.0f;
    for (Param* p : ps.all()) {
        REQUIRE(ctx.bound(p->name));
        Var<double> var = ctx.var_of(p->name);
        MatD analytic = tape.has_grad(var.id) ? tape.grad(var.id)
                                              : MatD::Zero(p->value.rows(), p->value.cols());
        for (int i = 0; i < p->value.rows(); ++i)
            for (int j = 0; j < p->value.cols(); ++j) {
                float keep = p->value(i, j);
                p->value(i, j) = keep + h;
                ad::Tape<double> tu;
                Ctx<double> cu(tu, ps);
                double up = build_loss(cu);
                p->value(i, j) = keep - h;
                ad::Tape<double> td;
                Ctx<double> cd(td, ps);
                double down = build_loss(cd);
                p->value(i, j) = keep;
                double numeric = (up - down) / (2.0 * h);
                double err = std::abs(analytic(i, j) - numeric);
                double scale = 1.0 + std::abs(analytic(i, j)) + std::abs(numeric);
                INFO(p->name, " (", i, ",", j, "): analytic ", analytic(i, j), " numeric ", numeric);
                CHECK(err <= tol * scale);
            }
    }
}

TEST_CASE("gradients: full transformer block through the parameter store") {
    Rng rng = make_rng(9, 0);
    ParamStore ps;
    BlockSpec block = BlockSpec::create(ps, "blk", 8, 2, 2, rng);
    // Nudge init so layernorm inputs are not degenerate.
    for (Param* p : ps.all())
        if (p->value.size() > 1)
            for (int i = 0; i < p->value.size(); ++i)
                p->value.data()[i] += 0.05f * static_cast<float>((i % 5) - 2);

    MatD x = random_mat(6, 8, rng);
    auto mask = build_reference_attention_mask(2, 4, MaskMode::oneway);

    check_param_grads(ps, [&](Ctx<double>& ctx) {
        Var<double> in = ctx.tape->constant(x);
        Var<double> out = block.apply(ctx, in, mask);
        Var<double> loss = ad::mean_all(ad::square(out));
        ctx.tape->backward(loss);
        return loss.val()(0, 0);
    });
}

TEST_CASE("harvest accumulates parameter gradients in float") {
    Rng rng = make_rng(10, 0);
    ParamStore ps;
    LinearSpec lin = LinearSpec::create(ps, "lin", 3, 2, rng);
    MatF x = MatF::Random(4, 3);

    ad::Tape<float> tape;
    Ctx<float> ctx(tape, ps);
    Var<float> out = lin.apply(ctx, tape.constant(x));
    Var<float> loss = ad::mean_all(ad::square(out));
    tape.backward(loss);
    ps.zero_grads();
    ctx.harvest();

    // d/db mean((xW + b)^2) = 2/(N*M) * colsum(xW + b)
    MatF pred = x * ps.at("lin.w").value;
    pred.rowwise() += Eigen::RowVectorXf(ps.at("lin.b").value.row(0));
    MatF db_expect = pred.colwise().sum() * (2.0f / 8.0f);
    CHECK((ps.at("lin.b").grad - db_expect).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("parameter store rejects duplicates and tracks counts") {
    ParamStore ps;
    ps.create("a", 2, 3);
    CHECK_THROWS_AS(ps.create("a", 1, 1), std::logic_error);
    ps.create("b", 4, 1);
    CHECK(ps.count() == 2);
    CHECK(ps.scalar_count() == 10);
    CHECK_THROWS_AS(ps.at("missing"), std::logic_error);
}
