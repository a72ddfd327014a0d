#pragma once

// Dense small-matrix numerics with a reverse-mode tape.
//
// Everything is templated on the scalar type so the same graph code runs at
// 32- and 64-bit precision. Vectors are rank-1 tensors, matrices rank-2
// row-major; a vector-matrix product follows the row-vector convention x * W.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seca/errors.hpp"

namespace seca::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <typename Real>
class Tensor {
   public:
    using value_type = Real;

    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = Real(0))
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(data_.size() == shape_size(shape_), ErrorCode::kInvalidInput,
                "tensor data length does not match shape");
    }

    static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }
    static Tensor vector(std::vector<Real> v) {
        const std::size_t n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }
    static Tensor vector(std::span<const Real> v) {
        return vector(std::vector<Real>(v.begin(), v.end()));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(1); }

    Real& operator[](std::size_t i) { return data_[i]; }
    const Real& operator[](std::size_t i) const { return data_[i]; }
    Real& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const Real& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    std::span<Real> span() { return data_; }
    std::span<const Real> span() const { return data_; }
    std::span<Real> row(std::size_t r) { return std::span<Real>(data_).subspan(r * shape_[1], shape_[1]); }
    std::span<const Real> row(std::size_t r) const {
        return std::span<const Real>(data_).subspan(r * shape_[1], shape_[1]);
    }
    const std::vector<Real>& data() const { return data_; }
    std::vector<Real>& data() { return data_; }

    Real item() const {
        require(data_.size() == 1, ErrorCode::kInvalidInput, "item() on a non-scalar tensor");
        return data_[0];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

   private:
    Shape shape_;
    std::vector<Real> data_;
};

/// Trainable (or frozen) leaf with its gradient accumulator.
template <typename Real>
struct Parameter {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool trainable = true;

    Parameter() = default;
    explicit Parameter(Tensor<Real> v, bool is_trainable = true)
        : value(std::move(v)), grad(value.shape()), trainable(is_trainable) {}

    void zero_grad() { grad = Tensor<Real>(value.shape()); }
};

// ---------------------------------------------------------------------------
// Plain kernels over spans. Both the tape ops and the value-only inference
// paths call these, so the two produce bit-identical results.
namespace kern {

constexpr double kLayerNormEps = 1e-5;
constexpr double kLogClamp = 1e-12;

template <typename Real>
void vecmat(std::span<const Real> x, const Tensor<Real>& w, std::span<Real> out) {
    const std::size_t n = w.rows(), m = w.cols();
    std::fill(out.begin(), out.end(), Real(0));
    for (std::size_t i = 0; i < n; ++i) {
        const Real xi = x[i];
        const Real* wr = w.span().data() + i * m;
        for (std::size_t j = 0; j < m; ++j) out[j] += xi * wr[j];
    }
}

template <typename Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
    Real s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <typename Real>
Real norm(std::span<const Real> a) {
    return std::sqrt(dot(a, a));
}

template <typename Real>
void layernorm(std::span<const Real> v, std::span<Real> out, Real& inv_std) {
    const auto n = static_cast<Real>(v.size());
    Real mean = 0;
    for (Real x : v) mean += x;
    mean /= n;
    Real var = 0;
    for (Real x : v) var += (x - mean) * (x - mean);
    var /= n;
    inv_std = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) * inv_std;
}

template <typename Real>
void softmax(std::span<const Real> logits, Real tau, std::span<Real> out) {
    Real mx = logits[0];
    for (Real v : logits) mx = std::max(mx, v);
    Real total = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - mx) / tau);
        total += out[i];
    }
    for (Real& v : out) v /= total;
}

}  // namespace kern

// ---------------------------------------------------------------------------
// Tape

template <typename Real>
class Tape;

template <typename Real>
class Var {
   public:
    Var() = default;
    Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor<Real>& value() const { return tape_->value(id_); }
    Real item() const { return value().item(); }
    std::size_t size() const { return value().size(); }
    bool requires_grad() const { return tape_->requires_grad(id_); }
    Tape<Real>* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

   private:
    Tape<Real>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <typename Real>
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<Real> constant(Tensor<Real> t) {
        check_finite(t, "constant");
        Node n;
        n.owned = std::move(t);
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    /// Constant that aliases caller-owned storage; `t` must outlive the tape.
    Var<Real> constant_ref(const Tensor<Real>& t) {
        Node n;
        n.ref = &t;
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    /// Leaf bound to a parameter. Gradients reach `p.grad` only when trainable.
    Var<Real> param(Parameter<Real>& p) {
        Node n;
        n.ref = &p.value;
        n.requires_grad = p.trainable;
        n.param = p.trainable ? &p : nullptr;
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    Var<Real> make(Tensor<Real> value, std::initializer_list<Var<Real>> parents, BackwardFn fn) {
        bool any = false;
        for (const auto& p : parents) any = any || requires_grad(p.id());
        return push(std::move(value), any, std::move(fn));
    }

    Var<Real> make(Tensor<Real> value, std::span<const Var<Real>> parents, BackwardFn fn) {
        bool any = false;
        for (const auto& p : parents) any = any || requires_grad(p.id());
        return push(std::move(value), any, std::move(fn));
    }

    const Tensor<Real>& value(std::size_t id) const {
        const Node& n = nodes_[id];
        return n.ref ? *n.ref : n.owned;
    }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    std::span<Real> grad(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(value(id).size(), Real(0));
        return n.grad;
    }

    /// Gradient of a node after backward(); zeros if nothing reached it.
    std::vector<Real> grad_of(const Var<Real>& v) const {
        const Node& n = nodes_[v.id()];
        if (n.grad.empty()) return std::vector<Real>(value(v.id()).size(), Real(0));
        return n.grad;
    }

    void backward(const Var<Real>& loss) {
        require(loss.size() == 1, ErrorCode::kInvalidInput, "backward() needs a scalar loss");
        if (!requires_grad(loss.id())) return;
        grad(loss.id())[0] = Real(1);
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.grad.empty()) continue;
            if (n.param) {
                auto& pg = n.param->grad.data();
                for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
            }
            if (n.backward) n.backward(*this, id);
        }
    }

    std::size_t size() const { return nodes_.size(); }

   private:
    struct Node {
        Tensor<Real> owned;
        const Tensor<Real>* ref = nullptr;
        std::vector<Real> grad;
        bool requires_grad = false;
        Parameter<Real>* param = nullptr;
        BackwardFn backward;
    };

    static void check_finite(const Tensor<Real>& t, const char* where) {
        if (!t.all_finite()) fail(ErrorCode::kNumericDivergence, std::string("non-finite value in ") + where);
    }

    Var<Real> push(Tensor<Real> value, bool needs_grad, BackwardFn fn) {
        check_finite(value, "tape op");
        Node n;
        n.owned = std::move(value);
        n.requires_grad = needs_grad;
        if (needs_grad) n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Ops

namespace detail {

template <typename Real>
void check_same(const Var<Real>& a, const Var<Real>& b, const char* op) {
    if (a.size() != b.size())
        fail(ErrorCode::kInvalidInput, std::string(op) + ": dimension mismatch (" + std::to_string(a.size()) +
                                           " vs " + std::to_string(b.size()) + ")");
}

template <typename Real>
void accumulate(Tape<Real>& t, std::size_t id, std::span<const Real> g, Real scale = Real(1)) {
    if (!t.requires_grad(id)) return;
    auto dst = t.grad(id);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * g[i];
}

}  // namespace detail

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
    detail::check_same(a, b, "add");
    Tensor<Real> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    const auto ia = a.id(), ib = b.id();
    return a.tape()->make(std::move(out), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
        const auto g = t.grad(self);
        detail::accumulate<Real>(t, ia, g);
        detail::accumulate<Real>(t, ib, g);
    });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
    detail::check_same(a, b, "sub");
    Tensor<Real> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    const auto ia = a.id(), ib = b.id();
    return a.tape()->make(std::move(out), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
        const auto g = t.grad(self);
        detail::accumulate<Real>(t, ia, g);
        detail::accumulate<Real>(t, ib, g, Real(-1));
    });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
    detail::check_same(a, b, "mul");
    Tensor<Real> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    const auto ia = a.id(), ib = b.id();
    return a.tape()->make(std::move(out), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
        const auto g = t.grad(self);
        const auto& av = t.value(ia);
        const auto& bv = t.value(ib);
        if (t.requires_grad(ia)) {
            auto d = t.grad(ia);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
            auto d = t.grad(ib);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
        }
    });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real c) {
    Tensor<Real> out = a.value();
    for (Real& v : out.span()) v *= c;
    const auto ia = a.id();
    return a.tape()->make(std::move(out), {a}, [ia, c](Tape<Real>& t, std::size_t self) {
        detail::accumulate<Real>(t, ia, t.grad(self), c);
    });
}

/// Multiply a tensor by a scalar variable.
template <typename Real>
Var<Real> scale_by(const Var<Real>& a, const Var<Real>& s) {
    require(s.size() == 1, ErrorCode::kInvalidInput, "scale_by: scale must be a scalar");
    const Real c = s.item();
    Tensor<Real> out = a.value();
    for (Real& v : out.span()) v *= c;
    const auto ia = a.id(), is = s.id();
    return a.tape()->make(std::move(out), {a, s}, [ia, is, c](Tape<Real>& t, std::size_t self) {
        const auto g = t.grad(self);
        detail::accumulate<Real>(t, ia, g, c);
        if (t.requires_grad(is)) t.grad(is)[0] += kern::dot<Real>(g, t.value(ia).span());
    });
}

/// Row vector times matrix: x[n] * W[n x m] -> [m].
template <typename Real>
Var<Real> vecmat(const Var<Real>& x, const Var<Real>& w) {
    const auto& wv = w.value();
    require(wv.rank() == 2, ErrorCode::kInvalidInput, "vecmat: weight must be a matrix");
    if (x.size() != wv.rows())
        fail(ErrorCode::kInvalidInput, "vecmat: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                                           std::to_string(wv.rows()) + ")");
    Tensor<Real> out(Shape{wv.cols()});
    kern::vecmat<Real>(x.value().span(), wv, out.span());
    const auto ix = x.id(), iw = w.id();
    return x.tape()->make(std::move(out), {x, w}, [ix, iw](Tape<Real>& t, std::size_t self) {
        const auto g = t.grad(self);
        const auto& wv = t.value(iw);
        const std::size_t n = wv.rows(), m = wv.cols();
        if (t.requires_grad(ix)) {
            auto dx = t.grad(ix);
            for (std::size_t i = 0; i < n; ++i) dx[i] += kern::dot<Real>(wv.row(i), g);
        }
        if (t.requires_grad(iw)) {
            const auto& xv = t.value(ix);
            auto dw = t.grad(iw);
            for (std::size_t i = 0; i < n; ++i) {
                const Real xi = xv[i];
                Real* row = dw.data() + i * m;
                for (std::size_t j = 0; j < m; ++j) row[j] += xi * g[j];
            }
        }
    });
}

template <typename Real>
Var<Real> tanh(const Var<Real>& a) {
    Tensor<Real> out = a.value();
    for (Real& v : out.span()) v = std::tanh(v);
    const auto ia = a.id();
    return a.tape()->make(std::move(out), {a}, [ia](Tape<Real>& t, std::size_t self) {
        if (!t.requires_grad(ia)) return;
        const auto g = t.grad(self);
        const auto& y = t.value(self);
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (Real(1) - y[i] * y[i]);
    });
}

template <typename Real>
Var<Real> exp(const Var<Real>& a) {
    Tensor<Real> out = a.value();
    for (Real& v : out.span()) v = std::exp(v);
    const auto ia = a.id();
    return a.tape()->make(std::move(out), {a}, [ia](Tape<Real>& t, std::size_t self) {
        if (!t.requires_grad(ia)) return;
        const auto g = t.grad(self);
        const auto& y = t.value(self);
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
    });
}

template <typename Real>
Var<Real> dot(const Var<Real>& a, const Var<Real>& b) {
    detail::check_same(a, b, "dot");
    const Real v = kern::dot<Real>(a.value().span(), b.value().span());
    const auto ia = a.id(), ib = b.id();
    return a.tape()->make(Tensor<Real>::scalar(v), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
        const Real g = t.grad(self)[0];
        detail::accumulate<Real>(t, ia, t.value(ib).span(), g);
        detail::accumulate<Real>(t, ib, t.value(ia).span(), g);
    });
}

template <typename Real>
Var<Real> squared_norm(const Var<Real>& a) {
    const Real v = kern::dot<Real>(a.value().span(), a.value().span());
    const auto ia = a.id();
    return a.tape()->make(Tensor<Real>::scalar(v), {a}, [ia](Tape<Real>& t, std::size_t self) {
        detail::accumulate<Real>(t, ia, t.value(ia).span(), Real(2) * t.grad(self)[0]);
    });
}

template <typename Real>
Var<Real> l2_normalize(const Var<Real>& a) {
    const Real nrm = kern::norm<Real>(a.value().span());
    require(std::isfinite(nrm), ErrorCode::kNumericDivergence, "l2_normalize: non-finite input");
    require(nrm > Real(0), ErrorCode::kInvalidInput, "l2_normalize: zero-norm input");
    Tensor<Real> out = a.value();
    for (Real& v : out.span()) v /= nrm;
    const auto ia = a.id();
    return a.tape()->make(std::move(out), {a}, [ia, nrm](Tape<Real>& t, std::size_t self) {
        if (!t.requires_grad(ia)) return;
        const auto g = t.grad(self);
        const auto& y = t.value(self);
        const Real gy = kern::dot<Real>(g, y.span());
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += (g[i] - gy * y[i]) / nrm;
    });
}

/// Parameter-free layer normalization (population variance, stabilizer 1e-5).
template <typename Real>
Var<Real> layernorm(const Var<Real>& a) {
    require(a.size() >= 2, ErrorCode::kInvalidInput, "layernorm: needs at least two entries");
    Tensor<Real> out(a.value().shape());
    Real inv_std = 0;
    kern::layernorm<Real>(a.value().span(), out.span(), inv_std);
    const auto ia = a.id();
    return a.tape()->make(std::move(out), {a}, [ia, inv_std](Tape<Real>& t, std::size_t self) {
        if (!t.requires_grad(ia)) return;
        const auto g = t.grad(self);
        const auto& y = t.value(self);
        const auto n = static_cast<Real>(g.size());
        Real gmean = 0, gy = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            gmean += g[i];
            gy += g[i] * y[i];
        }
        gmean /= n;
        gy /= n;
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += inv_std * (g[i] - gmean - y[i] * gy);
    });
}

/// Cosine similarity <a,b>/(|a||b|).
template <typename Real>
Var<Real> cosine_sim(const Var<Real>& a, const Var<Real>& b) {
    detail::check_same(a, b, "cosine_sim");
    const auto av = a.value().span(), bv = b.value().span();
    const Real na = kern::norm<Real>(av), nb = kern::norm<Real>(bv);
    require(std::isfinite(na) && std::isfinite(nb), ErrorCode::kNumericDivergence, "cosine_sim: non-finite input");
    require(na > Real(0) && nb > Real(0), ErrorCode::kInvalidInput, "cosine_sim: zero-norm input");
    const Real c = kern::dot<Real>(av, bv) / (na * nb);
    const auto ia = a.id(), ib = b.id();
    return a.tape()->make(Tensor<Real>::scalar(c), {a, b}, [ia, ib, na, nb, c](Tape<Real>& t, std::size_t self) {
        const Real g = t.grad(self)[0];
        const auto& av = t.value(ia);
        const auto& bv = t.value(ib);
        if (t.requires_grad(ia)) {
            auto d = t.grad(ia);
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += g * (bv[i] / (na * nb) - c * av[i] / (na * na));
        }
        if (t.requires_grad(ib)) {
            auto d = t.grad(ib);
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += g * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
        }
    });
}

/// Pack scalar variables into a vector.
template <typename Real>
Var<Real> stack(std::span<const Var<Real>> scalars) {
    require(!scalars.empty(), ErrorCode::kInvalidInput, "stack: empty input");
    Tensor<Real> out(Shape{scalars.size()});
    std::vector<std::size_t> ids;
    ids.reserve(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        out[i] = scalars[i].item();
        ids.push_back(scalars[i].id());
    }
    return scalars[0].tape()->make(std::move(out), scalars, [ids](Tape<Real>& t, std::size_t self) {
        const auto g = t.grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (t.requires_grad(ids[i])) t.grad(ids[i])[0] += g[i];
    });
}

/// Concatenate vectors end to end.
template <typename Real>
Var<Real> concat(std::span<const Var<Real>> parts) {
    require(!parts.empty(), ErrorCode::kInvalidInput, "concat: empty input");
    std::vector<Real> data;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        data.insert(data.end(), p.value().span().begin(), p.value().span().end());
        ids.push_back(p.id());
    }
    return parts[0].tape()->make(Tensor<Real>::vector(std::move(data)), parts, [ids](Tape<Real>& t, std::size_t self) {
        const auto g = t.grad(self);
        std::size_t off = 0;
        for (auto id : ids) {
            const std::size_t n = t.value(id).size();
            detail::accumulate<Real>(t, id, g.subspan(off, n));
            off += n;
        }
    });
}

template <typename Real>
Var<Real> index(const Var<Real>& a, std::size_t i) {
    require(i < a.size(), ErrorCode::kInvalidInput, "index out of range");
    const auto ia = a.id();
    return a.tape()->make(Tensor<Real>::scalar(a.value()[i]), {a}, [ia, i](Tape<Real>& t, std::size_t self) {
        if (t.requires_grad(ia)) t.grad(ia)[i] += t.grad(self)[0];
    });
}

/// Element-wise mean of same-length vectors.
template <typename Real>
Var<Real> mean(std::span<const Var<Real>> vs) {
    require(!vs.empty(), ErrorCode::kInvalidInput, "mean: empty input");
    const std::size_t n = vs[0].size();
    Tensor<Real> out(vs[0].value().shape());
    std::vector<std::size_t> ids;
    for (const auto& v : vs) {
        detail::check_same(vs[0], v, "mean");
        for (std::size_t i = 0; i < n; ++i) out[i] += v.value()[i];
        ids.push_back(v.id());
    }
    const Real inv = Real(1) / static_cast<Real>(vs.size());
    for (Real& v : out.span()) v *= inv;
    return vs[0].tape()->make(std::move(out), vs, [ids, inv](Tape<Real>& t, std::size_t self) {
        const auto g = t.grad(self);
        for (auto id : ids) detail::accumulate<Real>(t, id, g, inv);
    });
}

/// Sum of scalars.
template <typename Real>
Var<Real> sum(std::span<const Var<Real>> scalars) {
    require(!scalars.empty(), ErrorCode::kInvalidInput, "sum: empty input");
    Real s = 0;
    std::vector<std::size_t> ids;
    for (const auto& v : scalars) {
        s += v.item();
        ids.push_back(v.id());
    }
    return scalars[0].tape()->make(Tensor<Real>::scalar(s), scalars, [ids](Tape<Real>& t, std::size_t self) {
        const Real g = t.grad(self)[0];
        for (auto id : ids)
            if (t.requires_grad(id)) t.grad(id)[0] += g;
    });
}

/// Sum of all elements of one tensor.
template <typename Real>
Var<Real> sum_elements(const Var<Real>& a) {
    Real s = 0;
    for (Real v : a.value().span()) s += v;
    const auto ia = a.id();
    return a.tape()->make(Tensor<Real>::scalar(s), {a}, [ia](Tape<Real>& t, std::size_t self) {
        if (!t.requires_grad(ia)) return;
        const Real g = t.grad(self)[0];
        for (Real& d : t.grad(ia)) d += g;
    });
}

/// Divide a non-negative vector by its sum (row-stochastic normalization).
template <typename Real>
Var<Real> normalize_sum(const Var<Real>& a) {
    Real s = 0;
    for (Real v : a.value().span()) s += v;
    require(s > Real(0), ErrorCode::kInvalidInput, "normalize_sum: non-positive total");
    Tensor<Real> out = a.value();
    for (Real& v : out.span()) v /= s;
    const auto ia = a.id();
    return a.tape()->make(std::move(out), {a}, [ia, s](Tape<Real>& t, std::size_t self) {
        if (!t.requires_grad(ia)) return;
        const auto g = t.grad(self);
        const auto& y = t.value(self);
        const Real gy = kern::dot<Real>(g, y.span());
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += (g[i] - gy) / s;
    });
}

/// Weighted sum of vectors: sum_p w[p] * vs[p].
template <typename Real>
Var<Real> weighted_sum(const Var<Real>& w, std::span<const Var<Real>> vs) {
    if (w.size() != vs.size())
        fail(ErrorCode::kInvalidInput, "weighted_sum: " + std::to_string(w.size()) + " weights for " +
                                           std::to_string(vs.size()) + " vectors");
    require(!vs.empty(), ErrorCode::kInvalidInput, "weighted_sum: empty input");
    const std::size_t n = vs[0].size();
    Tensor<Real> out(vs[0].value().shape());
    std::vector<std::size_t> ids;
    for (std::size_t p = 0; p < vs.size(); ++p) {
        detail::check_same(vs[0], vs[p], "weighted_sum");
        const Real wp = w.value()[p];
        for (std::size_t i = 0; i < n; ++i) out[i] += wp * vs[p].value()[i];
        ids.push_back(vs[p].id());
    }
    std::vector<Var<Real>> parents(vs.begin(), vs.end());
    parents.push_back(w);
    const auto iw = w.id();
    return w.tape()->make(std::move(out), std::span<const Var<Real>>(parents),
                          [ids, iw](Tape<Real>& t, std::size_t self) {
                              const auto g = t.grad(self);
                              const auto& wv = t.value(iw);
                              for (std::size_t p = 0; p < ids.size(); ++p) {
                                  detail::accumulate<Real>(t, ids[p], g, wv[p]);
                                  if (t.requires_grad(iw))
                                      t.grad(iw)[p] += kern::dot<Real>(g, t.value(ids[p]).span());
                              }
                          });
}

/// softmax(logits / tau) with max subtraction.
template <typename Real>
Var<Real> softmax_temp(const Var<Real>& logits, Real tau) {
    require(tau > Real(0), ErrorCode::kInvalidConfig, "softmax_temp: temperature must be positive");
    require(logits.size() >= 1, ErrorCode::kInvalidInput, "softmax_temp: empty logits");
    Tensor<Real> out(logits.value().shape());
    kern::softmax<Real>(logits.value().span(), tau, out.span());
    const auto il = logits.id();
    return logits.tape()->make(std::move(out), {logits}, [il, tau](Tape<Real>& t, std::size_t self) {
        if (!t.requires_grad(il)) return;
        const auto g = t.grad(self);
        const auto& p = t.value(self);
        const Real gp = kern::dot<Real>(g, p.span());
        auto d = t.grad(il);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += p[i] * (g[i] - gp) / tau;
    });
}

/// -log(p[y] + 1e-12).
template <typename Real>
Var<Real> cross_entropy(const Var<Real>& p, std::size_t y) {
    if (y >= p.size())
        fail(ErrorCode::kInvalidInput,
             "cross_entropy: class index " + std::to_string(y) + " out of range " + std::to_string(p.size()));
    const Real clamp = static_cast<Real>(kern::kLogClamp);
    const Real py = p.value()[y];
    const auto ip = p.id();
    return p.tape()->make(Tensor<Real>::scalar(-std::log(py + clamp)), {p},
                          [ip, y, py, clamp](Tape<Real>& t, std::size_t self) {
                              if (t.requires_grad(ip)) t.grad(ip)[y] -= t.grad(self)[0] / (py + clamp);
                          });
}

/// sum_y t_y log((t_y + eps) / (s_y + eps)); the teacher never receives gradient.
/// eps on both sides makes teacher == student exactly 0; the student gradient
/// is the same as with eps on the student only.
template <typename Real>
Var<Real> kl_div(const Var<Real>& teacher, const Var<Real>& student, Real eps) {
    detail::check_same(teacher, student, "kl_div");
    const auto& tv = teacher.value();
    const auto& sv = student.value();
    Real v = 0;
    for (std::size_t i = 0; i < tv.size(); ++i)
        if (tv[i] > Real(0)) v += tv[i] * std::log((tv[i] + eps) / (sv[i] + eps));
    const auto it = teacher.id(), is = student.id();
    return student.tape()->make(Tensor<Real>::scalar(v), {student}, [it, is, eps](Tape<Real>& t, std::size_t self) {
        if (!t.requires_grad(is)) return;
        const Real g = t.grad(self)[0];
        const auto& tv = t.value(it);
        const auto& sv = t.value(is);
        auto d = t.grad(is);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g * tv[i] / (sv[i] + eps);
    });
}

/// Stop-gradient: a constant copy of the current value.
template <typename Real>
Var<Real> detach(const Var<Real>& a) {
    return a.tape()->constant(a.value());
}

/// Mean of the rows of a matrix together with one extra vector:
/// (sum_m rows[m] + extra) / (M + 1).
template <typename Real>
Var<Real> mean_rows_with(const Var<Real>& mat, const Var<Real>& extra) {
    const auto& mv = mat.value();
    require(mv.rank() == 2 && mv.cols() == extra.size(), ErrorCode::kInvalidInput,
            "mean_rows_with: dimension mismatch");
    const std::size_t m = mv.rows(), d = mv.cols();
    Tensor<Real> out = extra.value();
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < d; ++j) out[j] += mv(r, j);
    const Real inv = Real(1) / static_cast<Real>(m + 1);
    for (Real& v : out.span()) v *= inv;
    const auto im = mat.id(), ie = extra.id();
    return mat.tape()->make(std::move(out), {mat, extra}, [im, ie, m, d, inv](Tape<Real>& t, std::size_t self) {
        const auto g = t.grad(self);
        if (t.requires_grad(im)) {
            auto dm = t.grad(im);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t j = 0; j < d; ++j) dm[r * d + j] += inv * g[j];
        }
        detail::accumulate<Real>(t, ie, g, inv);
    });
}

// ---------------------------------------------------------------------------
// Value-level helpers

/// Probability vector: non-negative entries summing to one.
class ProbVector {
   public:
    static constexpr double kSumTolerance = 1e-9;

    explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
        require(is_valid(probs_), ErrorCode::kInvalidInput, "not a probability vector");
    }

    static bool is_valid(std::span<const double> p, double tol = kSumTolerance) {
        if (p.empty()) return false;
        double s = 0;
        for (double v : p) {
            if (!(v >= 0.0 && v <= 1.0)) return false;
            s += v;
        }
        return std::abs(s - 1.0) <= tol;
    }

    std::span<const double> probs() const { return probs_; }
    double operator[](std::size_t i) const { return probs_[i]; }
    std::size_t size() const { return probs_.size(); }

   private:
    std::vector<double> probs_;
};

template <typename Real>
std::vector<Real> softmax_values(std::span<const Real> logits, Real tau) {
    require(tau > Real(0), ErrorCode::kInvalidConfig, "softmax_temp: temperature must be positive");
    std::vector<Real> out(logits.size());
    kern::softmax<Real>(logits, tau, out);
    return out;
}

template <typename Real>
Real cosine_value(std::span<const Real> a, std::span<const Real> b) {
    require(a.size() == b.size(), ErrorCode::kInvalidInput, "cosine_sim: dimension mismatch");
    const Real na = kern::norm(a), nb = kern::norm(b);
    require(std::isfinite(na) && std::isfinite(nb), ErrorCode::kNumericDivergence, "cosine_sim: non-finite input");
    require(na > Real(0) && nb > Real(0), ErrorCode::kInvalidInput, "cosine_sim: zero-norm input");
    return kern::dot(a, b) / (na * nb);
}

template <typename Real>
Tensor<Real> layernorm_value(std::span<const Real> v) {
    require(v.size() >= 2, ErrorCode::kInvalidInput, "layernorm: needs at least two entries");
    Tensor<Real> out(Shape{v.size()});
    Real inv_std = 0;
    kern::layernorm<Real>(v, out.span(), inv_std);
    return out;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckReport {
    std::vector<double> max_rel_error;  // per parameter
    double worst = 0.0;
    bool passed = false;
    std::string diagnostic;
};

/// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps entries whose
/// true gradient is ~0 from being judged on round-off alone.
constexpr double kGradCheckFloor = 1e-3;

/// Compares the analytic gradient (computed at `Real` precision) with central
/// finite differences evaluated at 64-bit. `loss` is a generic callable
/// `(Tape<R>&, std::span<Parameter<R>>) -> Var<R>` invoked for R = Real and
/// R = double.
template <typename Real, typename LossFn>
GradCheckReport grad_check(LossFn&& loss, std::span<Parameter<Real>> params, double tol, double step = 1e-5) {
    GradCheckReport report;
    for (auto& p : params) p.zero_grad();
    Real analytic_loss{};
    {
        Tape<Real> tape;
        Var<Real> l = loss(tape, params);
        analytic_loss = l.item();
        tape.backward(l);
    }
    if (!std::isfinite(static_cast<double>(analytic_loss))) {
        report.diagnostic = "non-finite loss at the probe point";
        return report;
    }

    std::vector<Parameter<double>> ref;
    ref.reserve(params.size());
    for (const auto& p : params) ref.emplace_back(p.value.template cast<double>(), p.trainable);

    auto eval = [&]() {
        Tape<double> tape;
        return loss(tape, std::span<Parameter<double>>(ref)).item();
    };

    for (std::size_t k = 0; k < params.size(); ++k) {
        double worst_k = 0.0;
        if (params[k].trainable) {
            auto& vals = ref[k].value.data();
            for (std::size_t i = 0; i < vals.size(); ++i) {
                const double orig = vals[i];
                vals[i] = orig + step;
                const double up = eval();
                vals[i] = orig - step;
                const double down = eval();
                vals[i] = orig;
                if (!std::isfinite(up) || !std::isfinite(down)) {
                    report.diagnostic = "non-finite loss under perturbation";
                    return report;
                }
                const double numeric = (up - down) / (2.0 * step);
                const double analytic = static_cast<double>(params[k].grad[i]);
                const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
                worst_k = std::max(worst_k, std::abs(analytic - numeric) / denom);
            }
        }
        report.max_rel_error.push_back(worst_k);
        report.worst = std::max(report.worst, worst_k);
    }
    report.passed = report.worst <= tol;
    return report;
}

}  // namespace seca::num
