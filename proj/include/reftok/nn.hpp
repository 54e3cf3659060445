#pragma once

// Parameter registry and transformer building blocks.
//
// Weights live in a ParamStore (float, creation-ordered). A Ctx<S> binds the
// store to one Tape for a forward pass, casting to S so the same module code
// runs in float for training and double for finite-difference checks.

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "reftok/autodiff.hpp"
#include "reftok/rng.hpp"

namespace reftok {

using MatF = ad::Mat<float>;

struct Param {
    std::string name;
    MatF value;
    MatF grad;    // accumulated by Ctx::harvest, consumed by the optimizer
    MatF adam_m;  // optimizer state
    MatF adam_v;
    bool trainable = true;

    void zero_grad() { grad.setZero(); }
};

class ParamStore {
public:
    Param& create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        if (index_.count(name)) throw std::logic_error("duplicate parameter: " + name);
        auto p = std::make_unique<Param>();
        p->name = name;
        p->value = MatF::Zero(rows, cols);
        p->grad = MatF::Zero(rows, cols);
        p->adam_m = MatF::Zero(rows, cols);
        p->adam_v = MatF::Zero(rows, cols);
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return *params_.back();
    }

    Param& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::logic_error("unknown parameter: " + name);
        return *params_[it->second];
    }
    const Param& at(const std::string& name) const {
        return const_cast<ParamStore*>(this)->at(name);
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Param*> all() {
        std::vector<Param*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }
    std::size_t count() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Initializers. Transformer weights use truncated normal (std 0.02);
// biases and norm offsets start at zero, norm gains at one.
inline void init_trunc_normal(MatF& m, Rng& rng, float std_dev = 0.02f) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = static_cast<float>(trunc_normal(rng, std_dev));
}

template <class S>
struct Ctx {
    ad::Tape<S>* tape = nullptr;
    ParamStore* store = nullptr;
    bool train = true;

    Ctx(ad::Tape<S>& t, ParamStore& s, bool train_mode = true)
        : tape(&t), store(&s), train(train_mode) {}

    // Bind a parameter into the tape (once per pass).
    ad::Var<S> use(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        Param& p = store->at(name);
        ad::Mat<S> v = p.value.template cast<S>();
        ad::Var<S> var = (train && p.trainable) ? tape->leaf(std::move(v)) : tape->constant(std::move(v));
        bound_.emplace(name, var);
        return var;
    }

    bool bound(const std::string& name) const { return bound_.count(name) != 0; }
    ad::Var<S> var_of(const std::string& name) const { return bound_.at(name); }

    // Add tape gradients back onto Param::grad after backward().
    void harvest() {
        for (auto& [name, var] : bound_) {
            Param& p = store->at(name);
            if (!p.trainable || !tape->has_grad(var.id)) continue;
            p.grad += tape->grad(var.id).template cast<float>();
        }
    }

private:
    std::map<std::string, ad::Var<S>> bound_;
};

// ---- layers ----

struct LinearSpec {
    std::string w, b;
    int in = 0, out = 0;
    bool bias = true;

    static LinearSpec create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                             bool bias = true, float std_dev = 0.02f) {
        LinearSpec s;
        s.w = name + ".w";
        s.b = name + ".b";
        s.in = in;
        s.out = out;
        s.bias = bias;
        init_trunc_normal(ps.create(s.w, in, out).value, rng, std_dev);
        if (bias) ps.create(s.b, 1, out);
        return s;
    }

    template <class S>
    ad::Var<S> apply(Ctx<S>& ctx, ad::Var<S> x) const {
        ad::Var<S> y = ad::matmul(x, ctx.use(w));
        if (bias) y = ad::add_rowvec(y, ctx.use(b));
        return y;
    }
};

struct LayerNormSpec {
    std::string gain, bias;
    int dim = 0;

    static LayerNormSpec create(ParamStore& ps, const std::string& name, int dim) {
        LayerNormSpec s;
        s.gain = name + ".g";
        s.bias = name + ".b";
        s.dim = dim;
        ps.create(s.gain, 1, dim).value.setOnes();
        ps.create(s.bias, 1, dim);
        return s;
    }

    template <class S>
    ad::Var<S> apply(Ctx<S>& ctx, ad::Var<S> x) const {
        return ad::layernorm(x, ctx.use(gain), ctx.use(bias));
    }
};

struct AttentionSpec {
    LinearSpec wq, wk, wv, wo;
    int dim = 0, heads = 0;

    static AttentionSpec create(ParamStore& ps, const std::string& name, int dim, int heads, Rng& rng) {
        if (dim % heads != 0) throw std::logic_error("attention: dim not divisible by heads");
        AttentionSpec s;
        s.dim = dim;
        s.heads = heads;
        s.wq = LinearSpec::create(ps, name + ".wq", dim, dim, rng);
        s.wk = LinearSpec::create(ps, name + ".wk", dim, dim, rng);
        s.wv = LinearSpec::create(ps, name + ".wv", dim, dim, rng);
        s.wo = LinearSpec::create(ps, name + ".wo", dim, dim, rng);
        return s;
    }

    template <class S>
    ad::Var<S> apply(Ctx<S>& ctx, ad::Var<S> x, std::shared_ptr<const ad::BoolMat> mask) const {
        const int dh = dim / heads;
        ad::Var<S> q = wq.apply(ctx, x);
        ad::Var<S> k = wk.apply(ctx, x);
        ad::Var<S> v = wv.apply(ctx, x);
        const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
        std::vector<ad::Var<S>> head_outs;
        head_outs.reserve(heads);
        for (int h = 0; h < heads; ++h) {
            ad::Var<S> qh = ad::slice_cols(q, h * dh, dh);
            ad::Var<S> kh = ad::slice_cols(k, h * dh, dh);
            ad::Var<S> vh = ad::slice_cols(v, h * dh, dh);
            ad::Var<S> scores = ad::scale(ad::matmul(qh, kh, false, true), inv_sqrt_dh);
            ad::Var<S> probs = ad::softmax_rows(scores, mask);
            head_outs.push_back(ad::matmul(probs, vh));
        }
        return wo.apply(ctx, ad::concat_cols(head_outs));
    }
};

struct MlpSpec {
    LinearSpec fc1, fc2;

    static MlpSpec create(ParamStore& ps, const std::string& name, int dim, int hidden, Rng& rng) {
        MlpSpec s;
        s.fc1 = LinearSpec::create(ps, name + ".fc1", dim, hidden, rng);
        s.fc2 = LinearSpec::create(ps, name + ".fc2", hidden, dim, rng);
        return s;
    }

    template <class S>
    ad::Var<S> apply(Ctx<S>& ctx, ad::Var<S> x) const {
        return fc2.apply(ctx, ad::gelu(fc1.apply(ctx, x)));
    }
};

// Pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
struct BlockSpec {
    LayerNormSpec ln1, ln2;
    AttentionSpec attn;
    MlpSpec mlp;

    static BlockSpec create(ParamStore& ps, const std::string& name, int dim, int heads,
                            int mlp_ratio, Rng& rng) {
        BlockSpec s;
        s.ln1 = LayerNormSpec::create(ps, name + ".ln1", dim);
        s.attn = AttentionSpec::create(ps, name + ".attn", dim, heads, rng);
        s.ln2 = LayerNormSpec::create(ps, name + ".ln2", dim);
        s.mlp = MlpSpec::create(ps, name + ".mlp", dim, dim * mlp_ratio, rng);
        return s;
    }

    template <class S>
    ad::Var<S> apply(Ctx<S>& ctx, ad::Var<S> x, std::shared_ptr<const ad::BoolMat> mask) const {
        x = ad::add(x, attn.apply(ctx, ln1.apply(ctx, x), mask));
        x = ad::add(x, mlp.apply(ctx, ln2.apply(ctx, x)));
        return x;
    }
};

struct TransformerSpec {
    std::vector<BlockSpec> blocks;
    LayerNormSpec final_ln;

    static TransformerSpec create(ParamStore& ps, const std::string& name, int depth, int dim,
                                  int heads, int mlp_ratio, Rng& rng) {
        TransformerSpec s;
        for (int i = 0; i < depth; ++i)
            s.blocks.push_back(BlockSpec::create(ps, name + ".blk" + std::to_string(i), dim, heads,
                                                 mlp_ratio, rng));
        s.final_ln = LayerNormSpec::create(ps, name + ".ln_out", dim);
        return s;
    }

    template <class S>
    ad::Var<S> apply(Ctx<S>& ctx, ad::Var<S> x, std::shared_ptr<const ad::BoolMat> mask) const {
        for (const BlockSpec& b : blocks) x = b.apply(ctx, x, mask);
        return final_ln.apply(ctx, x);
    }
};

}  // namespace reftok
