#pragma once

// Reverse-mode autodiff over dense Eigen matrices. A Tape owns the nodes of
// one forward computation; Var is a cheap handle into it. Backward walks the
// tape in reverse creation order, which is a topological order by
// construction. Nodes created via stop_grad never propagate, so gradient
// severing is exact (zero, not small).

#include <cassert>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace regstream::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
    Tape<Scalar>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
};

template <typename Scalar>
class Tape {
  public:
    using Mat = Matrix<Scalar>;

    Var<Scalar> leaf(Mat value, bool requires_grad = true) {
        return push(std::move(value), requires_grad, nullptr);
    }

    Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr); }

    const Mat& value(Var<Scalar> v) const { return nodes_[v.id].value; }

    // Gradient of the last backward() root w.r.t. v; zero matrix when no
    // gradient reaches v (severed paths included).
    Mat grad_of(Var<Scalar> v) const {
        const Node& n = nodes_[v.id];
        if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void backward(Var<Scalar> root) {
        const Node& r = nodes_[root.id];
        if (r.value.rows() != 1 || r.value.cols() != 1)
            throw std::invalid_argument("Tape::backward: root must be a 1x1 scalar");
        for (Node& n : nodes_) {
            if (n.requires_grad)
                n.grad = Mat::Zero(n.value.rows(), n.value.cols());
            else
                n.grad.resize(0, 0);
        }
        if (!r.requires_grad) return;
        nodes_[root.id].grad(0, 0) = Scalar(1);
        for (int i = root.id; i >= 0; --i)
            if (nodes_[i].requires_grad && nodes_[i].backprop) nodes_[i].backprop(*this);
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // internal -------------------------------------------------------------
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;
    };

    Var<Scalar> push(Mat value, bool requires_grad, std::function<void(Tape&)> backprop) {
        nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(backprop)});
        return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
    }

    bool rg(int id) const { return nodes_[id].requires_grad; }
    const Mat& val(int id) const { return nodes_[id].value; }
    const Mat& grad(int id) const { return nodes_[id].grad; }
    void accumulate(int id, const Mat& g) {
        if (nodes_[id].requires_grad) nodes_[id].grad += g;
    }

  private:
    std::vector<Node> nodes_;
};

// ─── helpers ─────────────────────────────────────────────────────────────────

template <typename S>
Tape<S>& same_tape(Var<S> a, [[maybe_unused]] Var<S> b) {
    assert(a.tape == b.tape && a.tape != nullptr);
    return *a.tape;
}

// ─── arithmetic ──────────────────────────────────────────────────────────────

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    Tape<S>& t = same_tape(a, b);
    return t.push(t.val(a.id) + t.val(b.id), t.rg(a.id) || t.rg(b.id),
                  [ia = a.id, ib = b.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out));
                      t.accumulate(ib, t.grad(out));
                  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    Tape<S>& t = same_tape(a, b);
    return t.push(t.val(a.id) - t.val(b.id), t.rg(a.id) || t.rg(b.id),
                  [ia = a.id, ib = b.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out));
                      t.accumulate(ib, -t.grad(out));
                  });
}

template <typename S>
Var<S> hadamard(Var<S> a, Var<S> b) {
    Tape<S>& t = same_tape(a, b);
    return t.push(t.val(a.id).cwiseProduct(t.val(b.id)), t.rg(a.id) || t.rg(b.id),
                  [ia = a.id, ib = b.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out).cwiseProduct(t.val(ib)));
                      t.accumulate(ib, t.grad(out).cwiseProduct(t.val(ia)));
                  });
}

// elementwise a / b
template <typename S>
Var<S> cdiv(Var<S> a, Var<S> b) {
    Tape<S>& t = same_tape(a, b);
    return t.push(t.val(a.id).cwiseQuotient(t.val(b.id)), t.rg(a.id) || t.rg(b.id),
                  [ia = a.id, ib = b.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out).cwiseQuotient(t.val(ib)));
                      t.accumulate(ib, -t.grad(out)
                                            .cwiseProduct(t.val(out))
                                            .cwiseQuotient(t.val(ib)));
                  });
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
    Tape<S>& t = *a.tape;
    return t.push(t.val(a.id) * c, t.rg(a.id),
                  [ia = a.id, c, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out) * c);
                  });
}

template <typename S>
Var<S> add_constant(Var<S> a, const Matrix<S>& m) {
    Tape<S>& t = *a.tape;
    return t.push(t.val(a.id) + m, t.rg(a.id),
                  [ia = a.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out));
                  });
}

template <typename S>
Var<S> stop_grad(Var<S> a) {
    Tape<S>& t = *a.tape;
    return t.push(t.val(a.id), false, nullptr);
}

// ─── matrix products ─────────────────────────────────────────────────────────

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
    Tape<S>& t = same_tape(a, b);
    return t.push(t.val(a.id) * t.val(b.id), t.rg(a.id) || t.rg(b.id),
                  [ia = a.id, ib = b.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out) * t.val(ib).transpose());
                      t.accumulate(ib, t.val(ia).transpose() * t.grad(out));
                  });
}

// a * b^T
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
    Tape<S>& t = same_tape(a, b);
    return t.push(t.val(a.id) * t.val(b.id).transpose(), t.rg(a.id) || t.rg(b.id),
                  [ia = a.id, ib = b.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out) * t.val(ib));
                      t.accumulate(ib, t.grad(out).transpose() * t.val(ia));
                  });
}

// ─── structure ───────────────────────────────────────────────────────────────

template <typename S>
Var<S> slice_cols(Var<S> a, int first, int count) {
    Tape<S>& t = *a.tape;
    return t.push(t.val(a.id).middleCols(first, count), t.rg(a.id),
                  [ia = a.id, first, count, out = (int)t.size()](Tape<S>& t) {
                      if (!t.rg(ia)) return;
                      Matrix<S> g = Matrix<S>::Zero(t.val(ia).rows(), t.val(ia).cols());
                      g.middleCols(first, count) = t.grad(out);
                      t.accumulate(ia, g);
                  });
}

template <typename S>
Var<S> hcat(const std::vector<Var<S>>& parts) {
    assert(!parts.empty());
    Tape<S>& t = *parts.front().tape;
    Eigen::Index rows = t.val(parts.front().id).rows(), cols = 0;
    bool rg = false;
    std::vector<int> ids;
    for (const Var<S>& p : parts) {
        cols += t.val(p.id).cols();
        rg = rg || t.rg(p.id);
        ids.push_back(p.id);
    }
    Matrix<S> v(rows, cols);
    Eigen::Index off = 0;
    for (const Var<S>& p : parts) {
        v.middleCols(off, t.val(p.id).cols()) = t.val(p.id);
        off += t.val(p.id).cols();
    }
    return t.push(std::move(v), rg, [ids, out = (int)t.size()](Tape<S>& t) {
        Eigen::Index off = 0;
        for (const int id : ids) {
            const Eigen::Index n = t.val(id).cols();
            t.accumulate(id, t.grad(out).middleCols(off, n));
            off += n;
        }
    });
}

template <typename S>
Var<S> vcat(const std::vector<Var<S>>& parts) {
    assert(!parts.empty());
    Tape<S>& t = *parts.front().tape;
    Eigen::Index cols = t.val(parts.front().id).cols(), rows = 0;
    bool rg = false;
    std::vector<int> ids;
    for (const Var<S>& p : parts) {
        rows += t.val(p.id).rows();
        rg = rg || t.rg(p.id);
        ids.push_back(p.id);
    }
    Matrix<S> v(rows, cols);
    Eigen::Index off = 0;
    for (const Var<S>& p : parts) {
        v.middleRows(off, t.val(p.id).rows()) = t.val(p.id);
        off += t.val(p.id).rows();
    }
    return t.push(std::move(v), rg, [ids, out = (int)t.size()](Tape<S>& t) {
        Eigen::Index off = 0;
        for (const int id : ids) {
            const Eigen::Index n = t.val(id).rows();
            t.accumulate(id, t.grad(out).middleRows(off, n));
            off += n;
        }
    });
}

// out.row(k) = a.row(rows[k]); duplicate sources accumulate in backward.
template <typename S>
Var<S> gather_rows(Var<S> a, std::vector<int> rows) {
    Tape<S>& t = *a.tape;
    Matrix<S> v(static_cast<Eigen::Index>(rows.size()), t.val(a.id).cols());
    for (std::size_t k = 0; k < rows.size(); ++k) v.row(k) = t.val(a.id).row(rows[k]);
    return t.push(std::move(v), t.rg(a.id),
                  [ia = a.id, rows = std::move(rows), out = (int)t.size()](Tape<S>& t) {
                      if (!t.rg(ia)) return;
                      Matrix<S> g = Matrix<S>::Zero(t.val(ia).rows(), t.val(ia).cols());
                      for (std::size_t k = 0; k < rows.size(); ++k)
                          g.row(rows[k]) += t.grad(out).row(k);
                      t.accumulate(ia, g);
                  });
}

// a + bias broadcast over rows (bias is 1 x cols)
template <typename S>
Var<S> add_row_broadcast(Var<S> a, Var<S> bias) {
    Tape<S>& t = same_tape(a, bias);
    assert(t.val(bias.id).rows() == 1);
    Matrix<S> v = t.val(a.id);
    v.rowwise() += t.val(bias.id).row(0);
    return t.push(std::move(v), t.rg(a.id) || t.rg(bias.id),
                  [ia = a.id, ib = bias.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out));
                      t.accumulate(ib, t.grad(out).colwise().sum());
                  });
}

// out.row(i) = a.row(i) * v(i); v is n x 1
template <typename S>
Var<S> scale_rows(Var<S> a, Var<S> v) {
    Tape<S>& t = same_tape(a, v);
    assert(t.val(v.id).cols() == 1 && t.val(v.id).rows() == t.val(a.id).rows());
    Matrix<S> out =
        (t.val(a.id).array().colwise() * t.val(v.id).col(0).array()).matrix();
    return t.push(std::move(out), t.rg(a.id) || t.rg(v.id),
                  [ia = a.id, iv = v.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, (t.grad(out).array().colwise() *
                                        t.val(iv).col(0).array())
                                           .matrix());
                      t.accumulate(iv, t.grad(out)
                                           .cwiseProduct(t.val(ia))
                                           .rowwise()
                                           .sum());
                  });
}

// ─── reductions ──────────────────────────────────────────────────────────────

template <typename S>
Var<S> row_sum(Var<S> a) {
    Tape<S>& t = *a.tape;
    return t.push(t.val(a.id).rowwise().sum(), t.rg(a.id),
                  [ia = a.id, out = (int)t.size()](Tape<S>& t) {
                      if (!t.rg(ia)) return;
                      t.accumulate(
                          ia, t.grad(out).col(0).replicate(1, t.val(ia).cols()));
                  });
}

template <typename S>
Var<S> col_mean(Var<S> a) {
    Tape<S>& t = *a.tape;
    const S inv = S(1) / static_cast<S>(t.val(a.id).rows());
    return t.push(t.val(a.id).colwise().mean(), t.rg(a.id),
                  [ia = a.id, inv, out = (int)t.size()](Tape<S>& t) {
                      if (!t.rg(ia)) return;
                      t.accumulate(
                          ia, (t.grad(out).row(0) * inv).replicate(t.val(ia).rows(), 1));
                  });
}

template <typename S>
Var<S> sum_all(Var<S> a) {
    Tape<S>& t = *a.tape;
    Matrix<S> v(1, 1);
    v(0, 0) = t.val(a.id).sum();
    return t.push(std::move(v), t.rg(a.id),
                  [ia = a.id, out = (int)t.size()](Tape<S>& t) {
                      if (!t.rg(ia)) return;
                      t.accumulate(ia, Matrix<S>::Constant(t.val(ia).rows(), t.val(ia).cols(),
                                                           t.grad(out)(0, 0)));
                  });
}

template <typename S>
Var<S> diagonal(Var<S> a) {
    Tape<S>& t = *a.tape;
    assert(t.val(a.id).rows() == t.val(a.id).cols());
    Matrix<S> v = t.val(a.id).diagonal();
    return t.push(std::move(v), t.rg(a.id),
                  [ia = a.id, out = (int)t.size()](Tape<S>& t) {
                      if (!t.rg(ia)) return;
                      Matrix<S> g = Matrix<S>::Zero(t.val(ia).rows(), t.val(ia).cols());
                      g.diagonal() = t.grad(out).col(0);
                      t.accumulate(ia, g);
                  });
}

// ─── elementwise nonlinearities ──────────────────────────────────────────────

template <typename S>
Var<S> log(Var<S> a) {
    Tape<S>& t = *a.tape;
    return t.push(t.val(a.id).array().log().matrix(), t.rg(a.id),
                  [ia = a.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out).cwiseQuotient(t.val(ia)));
                  });
}

template <typename S>
Var<S> exp(Var<S> a) {
    Tape<S>& t = *a.tape;
    return t.push(t.val(a.id).array().exp().matrix(), t.rg(a.id),
                  [ia = a.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, t.grad(out).cwiseProduct(t.val(out)));
                  });
}

template <typename S>
Var<S> sqrt(Var<S> a) {
    Tape<S>& t = *a.tape;
    return t.push(t.val(a.id).array().sqrt().matrix(), t.rg(a.id),
                  [ia = a.id, out = (int)t.size()](Tape<S>& t) {
                      t.accumulate(ia, (t.grad(out).array() /
                                        (S(2) * t.val(out).array()))
                                           .matrix());
                  });
}

template <typename S>
Var<S> gelu(Var<S> a) {
    Tape<S>& t = *a.tape;
    const S inv_sqrt2 = S(1) / std::sqrt(S(2));
    Matrix<S> v = t.val(a.id).unaryExpr([inv_sqrt2](S x) {
        return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2));
    });
    return t.push(std::move(v), t.rg(a.id),
                  [ia = a.id, inv_sqrt2, out = (int)t.size()](Tape<S>& t) {
                      if (!t.rg(ia)) return;
                      const S inv_sqrt_2pi = S(1) / std::sqrt(S(2) * S(M_PI));
                      Matrix<S> d = t.val(ia).unaryExpr([=](S x) {
                          return S(0.5) * (S(1) + std::erf(x * inv_sqrt2)) +
                                 x * inv_sqrt_2pi * std::exp(-x * x * S(0.5));
                      });
                      t.accumulate(ia, t.grad(out).cwiseProduct(d));
                  });
}

// ─── softmax family ──────────────────────────────────────────────────────────

// Row softmax; -inf entries (from additive masks) get exactly zero weight.
// Every row must keep at least one finite entry.
template <typename S>
Var<S> softmax_rows(Var<S> a) {
    Tape<S>& t = *a.tape;
    const Matrix<S>& x = t.val(a.id);
    Matrix<S> p(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S m = x.row(r).maxCoeff();
        assert(std::isfinite(static_cast<double>(m)));
        p.row(r) = (x.row(r).array() - m).exp().matrix();
        p.row(r) /= p.row(r).sum();
    }
    return t.push(std::move(p), t.rg(a.id),
                  [ia = a.id, out = (int)t.size()](Tape<S>& t) {
                      if (!t.rg(ia)) return;
                      const Matrix<S>& p = t.val(out);
                      const Matrix<S>& gy = t.grad(out);
                      Matrix<S> g(p.rows(), p.cols());
                      for (Eigen::Index r = 0; r < p.rows(); ++r) {
                          const S dot = gy.row(r).dot(p.row(r));
                          g.row(r) =
                              (p.row(r).array() * (gy.row(r).array() - dot)).matrix();
                      }
                      t.accumulate(ia, g);
                  });
}

// Row-wise log(sum(exp(.))); -inf entries contribute nothing.
template <typename S>
Var<S> row_logsumexp(Var<S> a) {
    Tape<S>& t = *a.tape;
    const Matrix<S>& x = t.val(a.id);
    Matrix<S> v(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S m = x.row(r).maxCoeff();
        assert(std::isfinite(static_cast<double>(m)));
        v(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
    }
    return t.push(std::move(v), t.rg(a.id),
                  [ia = a.id, out = (int)t.size()](Tape<S>& t) {
                      if (!t.rg(ia)) return;
                      const Matrix<S>& x = t.val(ia);
                      const Matrix<S>& lse = t.val(out);
                      Matrix<S> g(x.rows(), x.cols());
                      for (Eigen::Index r = 0; r < x.rows(); ++r)
                          g.row(r) = ((x.row(r).array() - lse(r, 0)).exp() *
                                      t.grad(out)(r, 0))
                                         .matrix();
                      t.accumulate(ia, g);
                  });
}

// ─── layer norm ──────────────────────────────────────────────────────────────

template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5)) {
    Tape<S>& t = *x.tape;
    const Matrix<S>& xv = t.val(x.id);
    const Eigen::Index d = xv.cols();
    Matrix<S> xhat(xv.rows(), d);
    Matrix<S> inv_std(xv.rows(), 1);
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const S mu = xv.row(r).mean();
        const S var = (xv.row(r).array() - mu).square().sum() / static_cast<S>(d);
        inv_std(r, 0) = S(1) / std::sqrt(var + eps);
        xhat.row(r) = ((xv.row(r).array() - mu) * inv_std(r, 0)).matrix();
    }
    Matrix<S> y =
        (xhat.array().rowwise() * t.val(gamma.id).row(0).array()).matrix();
    y.rowwise() += t.val(beta.id).row(0);
    const bool rg = t.rg(x.id) || t.rg(gamma.id) || t.rg(beta.id);
    return t.push(std::move(y), rg,
                  [ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat),
                   inv_std = std::move(inv_std), out = (int)t.size()](Tape<S>& t) {
                      const Matrix<S>& gy = t.grad(out);
                      const Eigen::Index d = gy.cols();
                      t.accumulate(ig, gy.cwiseProduct(xhat).colwise().sum());
                      t.accumulate(ib, gy.colwise().sum());
                      if (!t.rg(ix)) return;
                      Matrix<S> dxhat =
                          (gy.array().rowwise() * t.val(ig).row(0).array()).matrix();
                      Matrix<S> gx(gy.rows(), d);
                      for (Eigen::Index r = 0; r < gy.rows(); ++r) {
                          const S s1 = dxhat.row(r).sum();
                          const S s2 = dxhat.row(r).dot(xhat.row(r));
                          gx.row(r) = (inv_std(r, 0) / static_cast<S>(d) *
                                       (static_cast<S>(d) * dxhat.row(r).array() - s1 -
                                        xhat.row(r).array() * s2))
                                          .matrix();
                      }
                      t.accumulate(ix, gx);
                  });
}

}  // namespace regstream::ad
