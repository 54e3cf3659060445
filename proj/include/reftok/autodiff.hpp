#pragma once

// Tape-based reverse-mode autodiff over Eigen row-major matrices.
//
// A Tape owns all intermediate values of one forward pass. Ops append
// nodes; backward() walks the tape in reverse and accumulates gradients.
// Templated on scalar so training runs in float and gradient checks run
// in double.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace reftok::ad {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using BoolMat = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void check(bool ok, const char* what) {
    if (!ok) throw std::logic_error(std::string("autodiff: ") + what);
}

template <class S>
class Tape;

template <class S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Mat<S>& val() const { return tape->val(id); }
    Eigen::Index rows() const { return val().rows(); }
    Eigen::Index cols() const { return val().cols(); }
};

template <class S>
class Tape {
public:
    Var<S> leaf(Mat<S> value) { return Var<S>{this, push(std::move(value), true, nullptr)}; }
    Var<S> constant(Mat<S> value) { return Var<S>{this, push(std::move(value), false, nullptr)}; }

    int push(Mat<S> value, bool needs_grad, std::function<void(Tape&, int)> backward) {
        nodes_.push_back(Node{std::move(value), Mat<S>(), needs_grad, false, std::move(backward)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Mat<S>& val(int id) const { return nodes_[id].value; }
    bool needs(int id) const { return nodes_[id].needs_grad; }
    bool has_grad(int id) const { return nodes_[id].grad_alloc; }

    Mat<S>& grad(int id) {
        Node& n = nodes_[id];
        if (!n.grad_alloc) {
            n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
            n.grad_alloc = true;
        }
        return n.grad;
    }

    // grad(id) += g, but only when id participates in differentiation.
    template <class Expr>
    void accum(int id, const Expr& g) {
        if (nodes_[id].needs_grad) grad(id) += g;
    }

    void backward(Var<S> root) {
        check(root.tape == this, "backward root from another tape");
        check(val(root.id).rows() == 1 && val(root.id).cols() == 1, "backward root must be scalar");
        grad(root.id)(0, 0) = S(1);
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.needs_grad && n.grad_alloc && n.backward) n.backward(*this, id);
        }
    }

    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Mat<S> value;
        Mat<S> grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        std::function<void(Tape&, int)> backward;
    };
    std::vector<Node> nodes_;
};

namespace detail {
template <class S, class F>
Var<S> unary(Var<S> a, Mat<S> value, F bw) {
    bool needs = a.tape->needs(a.id);
    int id = a.tape->push(std::move(value), needs,
                          needs ? std::function<void(Tape<S>&, int)>(std::move(bw)) : nullptr);
    return Var<S>{a.tape, id};
}
template <class S, class F>
Var<S> binary(Var<S> a, Var<S> b, Mat<S> value, F bw) {
    check(a.tape == b.tape, "operands from different tapes");
    bool needs = a.tape->needs(a.id) || a.tape->needs(b.id);
    int id = a.tape->push(std::move(value), needs,
                          needs ? std::function<void(Tape<S>&, int)>(std::move(bw)) : nullptr);
    return Var<S>{a.tape, id};
}
}  // namespace detail

// ---- elementwise ----

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    Mat<S> v = a.val() + b.val();
    int ia = a.id, ib = b.id;
    return detail::binary(a, b, std::move(v), [ia, ib](Tape<S>& t, int self) {
        const Mat<S>& g = t.grad(self);
        t.accum(ia, g);
        t.accum(ib, g);
    });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    Mat<S> v = a.val() - b.val();
    int ia = a.id, ib = b.id;
    return detail::binary(a, b, std::move(v), [ia, ib](Tape<S>& t, int self) {
        const Mat<S>& g = t.grad(self);
        t.accum(ia, g);
        t.accum(ib, -g);
    });
}

template <class S>
Var<S> hadamard(Var<S> a, Var<S> b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
    Mat<S> v = a.val().cwiseProduct(b.val());
    int ia = a.id, ib = b.id;
    return detail::binary(a, b, std::move(v), [ia, ib](Tape<S>& t, int self) {
        const Mat<S>& g = t.grad(self);
        t.accum(ia, g.cwiseProduct(t.val(ib)));
        t.accum(ib, g.cwiseProduct(t.val(ia)));
    });
}

template <class S>
Var<S> scale(Var<S> a, S s) {
    Mat<S> v = a.val() * s;
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia, s](Tape<S>& t, int self) {
        t.accum(ia, t.grad(self) * s);
    });
}

// out = a + v broadcast over rows; v is 1 x C.
template <class S>
Var<S> add_rowvec(Var<S> a, Var<S> v) {
    check(v.rows() == 1 && v.cols() == a.cols(), "add_rowvec: need 1 x C vector");
    Mat<S> out = a.val();
    out.rowwise() += Eigen::RowVector<S, Eigen::Dynamic>(v.val().row(0));
    int ia = a.id, iv = v.id;
    return detail::binary(a, v, std::move(out), [ia, iv](Tape<S>& t, int self) {
        const Mat<S>& g = t.grad(self);
        t.accum(ia, g);
        t.accum(iv, g.colwise().sum());
    });
}

template <class S>
Var<S> gelu(Var<S> a) {
    const S inv_sqrt2 = S(0.7071067811865476);
    Mat<S> v = a.val().unaryExpr([&](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); });
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia](Tape<S>& t, int self) {
        const S inv_sqrt2pi = S(0.3989422804014327);
        const S inv_sqrt2l = S(0.7071067811865476);
        const Mat<S>& x = t.val(ia);
        Mat<S> d = x.unaryExpr([&](S xi) {
            S phi = S(0.5) * (S(1) + std::erf(xi * inv_sqrt2l));
            S pdf = inv_sqrt2pi * std::exp(S(-0.5) * xi * xi);
            return phi + xi * pdf;
        });
        t.accum(ia, t.grad(self).cwiseProduct(d));
    });
}

template <class S>
Var<S> relu(Var<S> a) {
    Mat<S> v = a.val().cwiseMax(S(0));
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia](Tape<S>& t, int self) {
        const Mat<S>& x = t.val(ia);
        Mat<S> d = (x.array() > S(0)).template cast<S>();
        t.accum(ia, t.grad(self).cwiseProduct(d));
    });
}

template <class S>
Var<S> abs_elem(Var<S> a) {
    Mat<S> v = a.val().cwiseAbs();
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia](Tape<S>& t, int self) {
        const Mat<S>& x = t.val(ia);
        Mat<S> sgn = x.unaryExpr([](S xi) { return xi > S(0) ? S(1) : (xi < S(0) ? S(-1) : S(0)); });
        t.accum(ia, t.grad(self).cwiseProduct(sgn));
    });
}

template <class S>
Var<S> stopgrad(Var<S> a) {
    return a.tape->constant(a.val());
}

// ---- matmul ----

template <class S>
Var<S> matmul(Var<S> a, Var<S> b, bool ta = false, bool tb = false) {
    const Mat<S>& A = a.val();
    const Mat<S>& B = b.val();
    Eigen::Index ak = ta ? A.rows() : A.cols();
    Eigen::Index bk = tb ? B.cols() : B.rows();
    check(ak == bk, "matmul: inner dims mismatch");
    Mat<S> v;
    if (!ta && !tb) v.noalias() = A * B;
    else if (ta && !tb) v.noalias() = A.transpose() * B;
    else if (!ta && tb) v.noalias() = A * B.transpose();
    else v.noalias() = A.transpose() * B.transpose();
    int ia = a.id, ib = b.id;
    return detail::binary(a, b, std::move(v), [ia, ib, ta, tb](Tape<S>& t, int self) {
        const Mat<S>& g = t.grad(self);
        const Mat<S>& A = t.val(ia);
        const Mat<S>& B = t.val(ib);
        if (t.needs(ia)) {
            Mat<S> da;
            if (!ta && !tb) da.noalias() = g * B.transpose();
            else if (!ta && tb) da.noalias() = g * B;
            else if (ta && !tb) da.noalias() = B * g.transpose();
            else da.noalias() = B.transpose() * g.transpose();
            t.grad(ia) += da;
        }
        if (t.needs(ib)) {
            Mat<S> db;
            if (!ta && !tb) db.noalias() = A.transpose() * g;
            else if (!ta && tb) db.noalias() = g.transpose() * A;
            else if (ta && !tb) db.noalias() = A * g;
            else db.noalias() = g.transpose() * A.transpose();
            t.grad(ib) += db;
        }
    });
}

// ---- slicing / stitching ----

template <class S>
Var<S> slice_rows(Var<S> a, int r0, int n) {
    check(r0 >= 0 && n >= 0 && r0 + n <= a.rows(), "slice_rows: out of range");
    Mat<S> v = a.val().middleRows(r0, n);
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia, r0, n](Tape<S>& t, int self) {
        if (t.needs(ia)) t.grad(ia).middleRows(r0, n) += t.grad(self);
    });
}

template <class S>
Var<S> slice_cols(Var<S> a, int c0, int n) {
    check(c0 >= 0 && n >= 0 && c0 + n <= a.cols(), "slice_cols: out of range");
    Mat<S> v = a.val().middleCols(c0, n);
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia, c0, n](Tape<S>& t, int self) {
        if (t.needs(ia)) t.grad(ia).middleCols(c0, n) += t.grad(self);
    });
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
    check(!parts.empty(), "concat_rows: empty");
    Tape<S>* tape = parts[0].tape;
    Eigen::Index cols = parts[0].cols();
    Eigen::Index rows = 0;
    bool needs = false;
    for (const Var<S>& p : parts) {
        check(p.tape == tape, "concat_rows: tape mismatch");
        check(p.cols() == cols, "concat_rows: column mismatch");
        rows += p.rows();
        needs = needs || tape->needs(p.id);
    }
    Mat<S> v(rows, cols);
    Eigen::Index r = 0;
    std::vector<std::pair<int, int>> spans;  // (id, nrows)
    for (const Var<S>& p : parts) {
        v.middleRows(r, p.rows()) = p.val();
        spans.emplace_back(p.id, static_cast<int>(p.rows()));
        r += p.rows();
    }
    int id = tape->push(std::move(v), needs, [spans](Tape<S>& t, int self) {
        const Mat<S>& g = t.grad(self);
        int r = 0;
        for (auto [pid, n] : spans) {
            if (t.needs(pid)) t.grad(pid) += g.middleRows(r, n);
            r += n;
        }
    });
    return Var<S>{tape, id};
}

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    check(!parts.empty(), "concat_cols: empty");
    Tape<S>* tape = parts[0].tape;
    Eigen::Index rows = parts[0].rows();
    Eigen::Index cols = 0;
    bool needs = false;
    for (const Var<S>& p : parts) {
        check(p.tape == tape, "concat_cols: tape mismatch");
        check(p.rows() == rows, "concat_cols: row mismatch");
        cols += p.cols();
        needs = needs || tape->needs(p.id);
    }
    Mat<S> v(rows, cols);
    Eigen::Index c = 0;
    std::vector<std::pair<int, int>> spans;
    for (const Var<S>& p : parts) {
        v.middleCols(c, p.cols()) = p.val();
        spans.emplace_back(p.id, static_cast<int>(p.cols()));
        c += p.cols();
    }
    int id = tape->push(std::move(v), needs, [spans](Tape<S>& t, int self) {
        const Mat<S>& g = t.grad(self);
        int c = 0;
        for (auto [pid, n] : spans) {
            if (t.needs(pid)) t.grad(pid) += g.middleCols(c, n);
            c += n;
        }
    });
    return Var<S>{tape, id};
}

template <class S>
Var<S> gather_rows(Var<S> a, std::vector<int> idx) {
    for (int i : idx) check(i >= 0 && i < a.rows(), "gather_rows: index out of range");
    Mat<S> v(static_cast<Eigen::Index>(idx.size()), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = a.val().row(idx[i]);
    int ia = a.id;
    auto shared = std::make_shared<std::vector<int>>(std::move(idx));
    return detail::unary(a, std::move(v), [ia, shared](Tape<S>& t, int self) {
        if (!t.needs(ia)) return;
        const Mat<S>& g = t.grad(self);
        Mat<S>& da = t.grad(ia);
        for (std::size_t i = 0; i < shared->size(); ++i)
            da.row((*shared)[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

// Same flat row-major data, new shape.
template <class S>
Var<S> reshape(Var<S> a, int rows, int cols) {
    check(static_cast<Eigen::Index>(rows) * cols == a.rows() * a.cols(), "reshape: numel mismatch");
    Mat<S> v(rows, cols);
    std::copy(a.val().data(), a.val().data() + a.val().size(), v.data());
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia](Tape<S>& t, int self) {
        if (!t.needs(ia)) return;
        const Mat<S>& g = t.grad(self);
        Mat<S>& da = t.grad(ia);
        for (Eigen::Index i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i];
    });
}

// out(i,j) = flat(a)[map(i,j)] in row-major order; map entry -1 reads 0.
template <class S>
Var<S> reindex(Var<S> a, std::shared_ptr<const IndexMat> map) {
    const Eigen::Index numel = a.rows() * a.cols();
    Mat<S> v(map->rows(), map->cols());
    const S* flat = a.val().data();
    for (Eigen::Index i = 0; i < map->rows(); ++i)
        for (Eigen::Index j = 0; j < map->cols(); ++j) {
            int m = (*map)(i, j);
            check(m >= -1 && m < numel, "reindex: map entry out of range");
            v(i, j) = m < 0 ? S(0) : flat[m];
        }
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia, map](Tape<S>& t, int self) {
        if (!t.needs(ia)) return;
        const Mat<S>& g = t.grad(self);
        S* dflat = t.grad(ia).data();
        for (Eigen::Index i = 0; i < map->rows(); ++i)
            for (Eigen::Index j = 0; j < map->cols(); ++j) {
                int m = (*map)(i, j);
                if (m >= 0) dflat[m] += g(i, j);
            }
    });
}

// ---- row-normalizing ops ----

// Rowwise softmax. When mask is given, entries with mask==0 get probability
// exactly 0; a fully masked row yields an all-zero row.
template <class S>
Var<S> softmax_rows(Var<S> a, std::shared_ptr<const BoolMat> mask = nullptr) {
    if (mask) check(mask->rows() == a.rows() && mask->cols() == a.cols(), "softmax mask shape");
    const Mat<S>& x = a.val();
    Mat<S> p(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S m = std::numeric_limits<S>::lowest();
        bool any = false;
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (mask && !(*mask)(i, j)) continue;
            any = true;
            m = std::max(m, x(i, j));
        }
        if (!any) {
            p.row(i).setZero();
            continue;
        }
        S sum = S(0);
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            S e = (mask && !(*mask)(i, j)) ? S(0) : std::exp(x(i, j) - m);
            p(i, j) = e;
            sum += e;
        }
        p.row(i) /= sum;
    }
    int ia = a.id;
    return detail::unary(a, std::move(p), [ia](Tape<S>& t, int self) {
        if (!t.needs(ia)) return;
        const Mat<S>& P = t.val(self);
        const Mat<S>& g = t.grad(self);
        Mat<S> ds(P.rows(), P.cols());
        for (Eigen::Index i = 0; i < P.rows(); ++i) {
            S dot = g.row(i).dot(P.row(i));
            ds.row(i) = (P.row(i).array() * (g.row(i).array() - dot)).matrix();
        }
        t.grad(ia) += ds;
    });
}

template <class S>
Var<S> log_softmax_rows(Var<S> a) {
    const Mat<S>& x = a.val();
    Mat<S> v(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S m = x.row(i).maxCoeff();
        S sum = (x.row(i).array() - m).exp().sum();
        v.row(i) = x.row(i).array() - m - std::log(sum);
    }
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia](Tape<S>& t, int self) {
        if (!t.needs(ia)) return;
        const Mat<S>& L = t.val(self);
        const Mat<S>& g = t.grad(self);
        Mat<S> ds(L.rows(), L.cols());
        for (Eigen::Index i = 0; i < L.rows(); ++i) {
            S gsum = g.row(i).sum();
            ds.row(i) = g.row(i) - (L.row(i).array().exp() * gsum).matrix();
        }
        t.grad(ia) += ds;
    });
}

// Rowwise layer normalization with per-column gain/bias (1 x C each).
template <class S>
Var<S> layernorm(Var<S> a, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
    check(gain.rows() == 1 && gain.cols() == a.cols(), "layernorm: gain shape");
    check(bias.rows() == 1 && bias.cols() == a.cols(), "layernorm: bias shape");
    const Mat<S>& x = a.val();
    const Eigen::Index C = x.cols();
    auto cache = std::make_shared<std::pair<Mat<S>, Mat<S>>>();  // xhat, inv_std (N x 1)
    Mat<S>& xhat = cache->first;
    Mat<S>& istd = cache->second;
    xhat.resize(x.rows(), C);
    istd.resize(x.rows(), 1);
    Mat<S> out(x.rows(), C);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S mu = x.row(i).mean();
        S var = (x.row(i).array() - mu).square().sum() / S(C);
        S inv = S(1) / std::sqrt(var + eps);
        istd(i, 0) = inv;
        xhat.row(i) = (x.row(i).array() - mu) * inv;
        out.row(i) = xhat.row(i).cwiseProduct(gain.val().row(0)) + bias.val().row(0);
    }
    check(a.tape == gain.tape && a.tape == bias.tape, "layernorm: tape mismatch");
    bool needs = a.tape->needs(a.id) || a.tape->needs(gain.id) || a.tape->needs(bias.id);
    int ia = a.id, ig = gain.id, ib = bias.id;
    int id = a.tape->push(std::move(out), needs, !needs ? std::function<void(Tape<S>&, int)>() :
        [ia, ig, ib, cache, C](Tape<S>& t, int self) {
            const Mat<S>& g = t.grad(self);
            const Mat<S>& xhat = cache->first;
            const Mat<S>& istd = cache->second;
            if (t.needs(ig)) t.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
            if (t.needs(ib)) t.grad(ib) += g.colwise().sum();
            if (t.needs(ia)) {
                const Mat<S>& gn = t.val(ig);
                Mat<S>& da = t.grad(ia);
                for (Eigen::Index i = 0; i < g.rows(); ++i) {
                    Eigen::RowVector<S, Eigen::Dynamic> h = g.row(i).cwiseProduct(gn.row(0));
                    S mean_h = h.mean();
                    S mean_hx = h.cwiseProduct(xhat.row(i)).mean();
                    da.row(i) += ((h.array() - mean_h - xhat.row(i).array() * mean_hx) * istd(i, 0)).matrix();
                }
            }
        });
    return Var<S>{a.tape, id};
}

// ---- reductions ----

template <class S>
Var<S> sum_all(Var<S> a) {
    Mat<S> v(1, 1);
    v(0, 0) = a.val().sum();
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia](Tape<S>& t, int self) {
        if (t.needs(ia)) t.grad(ia).array() += t.grad(self)(0, 0);
    });
}

template <class S>
Var<S> mean_all(Var<S> a) {
    const S inv = S(1) / static_cast<S>(a.rows() * a.cols());
    Mat<S> v(1, 1);
    v(0, 0) = a.val().sum() * inv;
    int ia = a.id;
    return detail::unary(a, std::move(v), [ia, inv](Tape<S>& t, int self) {
        if (t.needs(ia)) t.grad(ia).array() += t.grad(self)(0, 0) * inv;
    });
}

// out(i,0) = a(cells[i].first, cells[i].second)
template <class S>
Var<S> pick(Var<S> a, std::vector<std::pair<int, int>> cells) {
    Mat<S> v(static_cast<Eigen::Index>(cells.size()), 1);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        auto [r, c] = cells[i];
        check(r >= 0 && r < a.rows() && c >= 0 && c < a.cols(), "pick: out of range");
        v(static_cast<Eigen::Index>(i), 0) = a.val()(r, c);
    }
    int ia = a.id;
    auto shared = std::make_shared<std::vector<std::pair<int, int>>>(std::move(cells));
    return detail::unary(a, std::move(v), [ia, shared](Tape<S>& t, int self) {
        if (!t.needs(ia)) return;
        const Mat<S>& g = t.grad(self);
        Mat<S>& da = t.grad(ia);
        for (std::size_t i = 0; i < shared->size(); ++i)
            da((*shared)[i].first, (*shared)[i].second) += g(static_cast<Eigen::Index>(i), 0);
    });
}

// ---- composite helpers ----

template <class S>
Var<S> square(Var<S> a) {
    return hadamard(a, a);
}

template <class S>
Var<S> mean_sq_diff(Var<S> a, Var<S> b) {
    return mean_all(square(sub(a, b)));
}

template <class S>
Var<S> mean_abs_diff(Var<S> a, Var<S> b) {
    return mean_all(abs_elem(sub(a, b)));
}

}  // namespace reftok::ad
