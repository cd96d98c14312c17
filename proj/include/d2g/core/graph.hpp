#ifndef D2G_CORE_GRAPH_HPP
#define D2G_CORE_GRAPH_HPP

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "d2g/core/tensor.hpp"

namespace d2g {

// Reverse-mode autodiff over Tensor. Graphs are built per step and freed when
// the root goes out of scope; parameters are long-lived leaf nodes.
//
// Every kernel iterates samples independently in fixed index order, so results
// are bitwise identical regardless of how a batch is assembled. The solver
// determinism and pair-verification contracts rely on this.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily, same shape as val
    std::vector<Var> parents;
    std::function<void()> backprop;
    bool requires_grad = false;
    uint64_t tag = 0;

    void ensure_grad() {
        if (grad.empty()) grad = Tensor::zeros(val.n(), val.c(), val.h(), val.w());
    }
    void accum_grad(const Tensor& g) {
        ensure_grad();
        grad.add_(g);
    }
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    return n;
}

inline Var leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = true;
    return n;
}

inline Var make_node(Tensor val, std::vector<Var> parents, std::function<void()> bp) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    for (const auto& p : parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(bp);
    }
    return n;
}

inline void backward(const Var& root) {
    if (root->val.size() != 1) {
        throw std::invalid_argument("backward: root must be scalar");
    }
    static uint64_t epoch = 0;
    const uint64_t tag = ++epoch;

    // iterative post-order DFS
    std::vector<Node*> order;
    std::vector<std::pair<Node*, size_t>> stack;
    if (root->requires_grad) stack.push_back({root.get(), 0});
    root->tag = tag;
    while (!stack.empty()) {
        auto& [nd, i] = stack.back();
        if (i < nd->parents.size()) {
            Node* p = nd->parents[i++].get();
            if (p->requires_grad && p->tag != tag) {
                p->tag = tag;
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(nd);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop();
    }
}

/*------------------------------- elementwise --------------------------------*/

// Restricted numpy-style broadcasting: each dim of b is either 1 or equal to a's.
namespace detail {

inline size_t bcast_index(const Tensor& b, int i, int j, int k, int l) {
    int bi = b.n() == 1 ? 0 : i;
    int bj = b.c() == 1 ? 0 : j;
    int bk = b.h() == 1 ? 0 : k;
    int bl = b.w() == 1 ? 0 : l;
    return ((static_cast<size_t>(bi) * b.c() + bj) * b.h() + bk) * b.w() + bl;
}

inline void check_bcast(const Tensor& a, const Tensor& b, const char* op) {
    auto ok = [](int da, int db) { return db == 1 || db == da; };
    if (!ok(a.n(), b.n()) || !ok(a.c(), b.c()) || !ok(a.h(), b.h()) || !ok(a.w(), b.w())) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

template <class F>
inline void for_each_nchw(const Tensor& a, F&& f) {
    size_t idx = 0;
    for (int i = 0; i < a.n(); ++i)
        for (int j = 0; j < a.c(); ++j)
            for (int k = 0; k < a.h(); ++k)
                for (int l = 0; l < a.w(); ++l) f(idx++, i, j, k, l);
}

}  // namespace detail

template <class Fwd, class BwdA, class BwdB>
inline Var binary_op(const Var& a, const Var& b, const char* name, Fwd fwd, BwdA bwd_a,
                     BwdB bwd_b) {
    detail::check_bcast(a->val, b->val, name);
    Tensor out(a->val.n(), a->val.c(), a->val.h(), a->val.w());
    const Tensor& av = a->val;
    const Tensor& bv = b->val;
    detail::for_each_nchw(av, [&](size_t idx, int i, int j, int k, int l) {
        out[idx] = fwd(av[idx], bv[detail::bcast_index(bv, i, j, k, l)]);
    });
    Node* ap = a.get();
    Node* bp = b.get();
    auto n = make_node(std::move(out), {a, b}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [ap, bp, np, bwd_a, bwd_b]() {
            const Tensor& g = np->grad;
            const Tensor& av2 = ap->val;
            const Tensor& bv2 = bp->val;
            if (ap->requires_grad) {
                ap->ensure_grad();
                detail::for_each_nchw(av2, [&](size_t idx, int i, int j, int k, int l) {
                    ap->grad[idx] +=
                        g[idx] * bwd_a(av2[idx], bv2[detail::bcast_index(bv2, i, j, k, l)]);
                });
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                detail::for_each_nchw(av2, [&](size_t idx, int i, int j, int k, int l) {
                    bp->grad[detail::bcast_index(bv2, i, j, k, l)] +=
                        g[idx] * bwd_b(av2[idx], bv2[detail::bcast_index(bv2, i, j, k, l)]);
                });
            }
        };
    }
    return n;
}

inline Var add(const Var& a, const Var& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}
inline Var sub(const Var& a, const Var& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}
inline Var mul(const Var& a, const Var& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

template <class Fwd, class Bwd>
inline Var unary_op(const Var& a, Fwd fwd, Bwd bwd) {
    Tensor out(a->val.n(), a->val.c(), a->val.h(), a->val.w());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a->val[i]);
    Node* ap = a.get();
    auto n = make_node(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [ap, np, bwd]() {
            ap->ensure_grad();
            for (size_t i = 0; i < np->grad.size(); ++i) {
                ap->grad[i] += np->grad[i] * bwd(ap->val[i], np->val[i]);
            }
        };
    }
    return n;
}

inline Var scale(const Var& a, double k) {
    return unary_op(
        a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}
inline Var add_scalar(const Var& a, double k) {
    return unary_op(
        a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}
inline Var neg(const Var& a) { return scale(a, -1.0); }
inline Var square(const Var& a) {
    return unary_op(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Var sqrt_v(const Var& a) {
    return unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}
inline Var relu(const Var& a) {
    return unary_op(
        a, [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Var leaky_relu(const Var& a, double slope = 0.2) {
    return unary_op(
        a, [slope](double x) { return x > 0 ? x : slope * x; },
        [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}
inline double sigmoid_s(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double softplus_s(double x) {
    return (x > 0 ? x : 0.0) + std::log1p(std::exp(-std::abs(x)));
}
inline Var sigmoid(const Var& a) {
    return unary_op(
        a, [](double x) { return sigmoid_s(x); },
        [](double, double y) { return y * (1.0 - y); });
}
inline Var softplus(const Var& a) {
    return unary_op(
        a, [](double x) { return softplus_s(x); },
        [](double x, double) { return sigmoid_s(x); });
}
inline Var silu(const Var& a) {
    return unary_op(
        a, [](double x) { return x * sigmoid_s(x); },
        [](double x, double) {
            double s = sigmoid_s(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

/*-------------------------------- reductions --------------------------------*/

inline Var sum_all(const Var& a) {
    Tensor out = Tensor::scalar(a->val.sum());
    Node* ap = a.get();
    auto n = make_node(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [ap, np]() {
            ap->ensure_grad();
            double g = np->grad[0];
            for (size_t i = 0; i < ap->grad.size(); ++i) ap->grad[i] += g;
        };
    }
    return n;
}

inline Var mean_all(const Var& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a->val.size()));
}

// mean over h,w -> (n,c,1,1)
inline Var mean_hw(const Var& a) {
    const Tensor& av = a->val;
    Tensor out(av.n(), av.c(), 1, 1);
    const double inv = 1.0 / (static_cast<double>(av.h()) * av.w());
    for (int i = 0; i < av.n(); ++i)
        for (int j = 0; j < av.c(); ++j) {
            double s = 0;
            for (int k = 0; k < av.h(); ++k)
                for (int l = 0; l < av.w(); ++l) s += av.at(i, j, k, l);
            out.at(i, j, 0, 0) = s * inv;
        }
    Node* ap = a.get();
    auto n = make_node(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [ap, np, inv]() {
            ap->ensure_grad();
            const Tensor& av2 = ap->val;
            for (int i = 0; i < av2.n(); ++i)
                for (int j = 0; j < av2.c(); ++j) {
                    double g = np->grad.at(i, j, 0, 0) * inv;
                    for (int k = 0; k < av2.h(); ++k)
                        for (int l = 0; l < av2.w(); ++l) ap->grad.at(i, j, k, l) += g;
                }
        };
    }
    return n;
}

// mean over channels -> (n,1,h,w)
inline Var mean_c(const Var& a) {
    const Tensor& av = a->val;
    Tensor out(av.n(), 1, av.h(), av.w());
    const double inv = 1.0 / static_cast<double>(av.c());
    for (int i = 0; i < av.n(); ++i)
        for (int k = 0; k < av.h(); ++k)
            for (int l = 0; l < av.w(); ++l) {
                double s = 0;
                for (int j = 0; j < av.c(); ++j) s += av.at(i, j, k, l);
                out.at(i, 0, k, l) = s * inv;
            }
    Node* ap = a.get();
    auto n = make_node(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [ap, np, inv]() {
            ap->ensure_grad();
            const Tensor& av2 = ap->val;
            for (int i = 0; i < av2.n(); ++i)
                for (int j = 0; j < av2.c(); ++j)
                    for (int k = 0; k < av2.h(); ++k)
                        for (int l = 0; l < av2.w(); ++l)
                            ap->grad.at(i, j, k, l) += np->grad.at(i, 0, k, l) * inv;
        };
    }
    return n;
}

// per-sample reduction over c,h,w -> (n,1,1,1)
inline Var sum_chw(const Var& a) {
    const Tensor& av = a->val;
    Tensor out(av.n(), 1, 1, 1);
    const size_t per = av.size() / av.n();
    for (int i = 0; i < av.n(); ++i) {
        double s = 0;
        const double* p = av.data() + per * i;
        for (size_t t = 0; t < per; ++t) s += p[t];
        out[i] = s;
    }
    Node* ap = a.get();
    auto n = make_node(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [ap, np, per]() {
            ap->ensure_grad();
            for (int i = 0; i < ap->val.n(); ++i) {
                double g = np->grad[i];
                double* p = ap->grad.data() + per * i;
                for (size_t t = 0; t < per; ++t) p[t] += g;
            }
        };
    }
    return n;
}

inline Var mean_chw(const Var& a) {
    return mul(sum_chw(a),
               constant(Tensor::scalar(a->val.n() / static_cast<double>(a->val.size()))));
}

/*------------------------------- shape plumbing ------------------------------*/

inline Var concat_c(const Var& a, const Var& b) {
    const Tensor& av = a->val;
    const Tensor& bv = b->val;
    if (av.n() != bv.n() || av.h() != bv.h() || av.w() != bv.w()) {
        throw std::invalid_argument("concat_c: spatial/batch mismatch");
    }
    Tensor out(av.n(), av.c() + bv.c(), av.h(), av.w());
    for (int i = 0; i < av.n(); ++i) {
        for (int j = 0; j < av.c(); ++j)
            for (int k = 0; k < av.h(); ++k)
                for (int l = 0; l < av.w(); ++l) out.at(i, j, k, l) = av.at(i, j, k, l);
        for (int j = 0; j < bv.c(); ++j)
            for (int k = 0; k < bv.h(); ++k)
                for (int l = 0; l < bv.w(); ++l)
                    out.at(i, av.c() + j, k, l) = bv.at(i, j, k, l);
    }
    Node* ap = a.get();
    Node* bp = b.get();
    auto n = make_node(std::move(out), {a, b}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [ap, bp, np]() {
            const Tensor& g = np->grad;
            int ca = ap->val.c();
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (int i = 0; i < ap->val.n(); ++i)
                    for (int j = 0; j < ca; ++j)
                        for (int k = 0; k < g.h(); ++k)
                            for (int l = 0; l < g.w(); ++l)
                                ap->grad.at(i, j, k, l) += g.at(i, j, k, l);
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (int i = 0; i < bp->val.n(); ++i)
                    for (int j = 0; j < bp->val.c(); ++j)
                        for (int k = 0; k < g.h(); ++k)
                            for (int l = 0; l < g.w(); ++l)
                                bp->grad.at(i, j, k, l) += g.at(i, ca + j, k, l);
            }
        };
    }
    return n;
}

inline Var avg_pool2x(const Var& a) {
    const Tensor& av = a->val;
    if (av.h() % 2 != 0 || av.w() % 2 != 0) {
        throw std::invalid_argument("avg_pool2x: odd spatial dims");
    }
    Tensor out(av.n(), av.c(), av.h() / 2, av.w() / 2);
    for (int i = 0; i < av.n(); ++i)
        for (int j = 0; j < av.c(); ++j)
            for (int k = 0; k < out.h(); ++k)
                for (int l = 0; l < out.w(); ++l)
                    out.at(i, j, k, l) =
                        0.25 * (av.at(i, j, 2 * k, 2 * l) + av.at(i, j, 2 * k, 2 * l + 1) +
                                av.at(i, j, 2 * k + 1, 2 * l) +
                                av.at(i, j, 2 * k + 1, 2 * l + 1));
    Node* ap = a.get();
    auto n = make_node(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [ap, np]() {
            ap->ensure_grad();
            const Tensor& g = np->grad;
            for (int i = 0; i < g.n(); ++i)
                for (int j = 0; j < g.c(); ++j)
                    for (int k = 0; k < g.h(); ++k)
                        for (int l = 0; l < g.w(); ++l) {
                            double v = 0.25 * g.at(i, j, k, l);
                            ap->grad.at(i, j, 2 * k, 2 * l) += v;
                            ap->grad.at(i, j, 2 * k, 2 * l + 1) += v;
                            ap->grad.at(i, j, 2 * k + 1, 2 * l) += v;
                            ap->grad.at(i, j, 2 * k + 1, 2 * l + 1) += v;
                        }
        };
    }
    return n;
}

inline Var upsample_nearest2x(const Var& a) {
    const Tensor& av = a->val;
    Tensor out(av.n(), av.c(), av.h() * 2, av.w() * 2);
    for (int i = 0; i < av.n(); ++i)
        for (int j = 0; j < av.c(); ++j)
            for (int k = 0; k < out.h(); ++k)
                for (int l = 0; l < out.w(); ++l)
                    out.at(i, j, k, l) = av.at(i, j, k / 2, l / 2);
    Node* ap = a.get();
    auto n = make_node(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [ap, np]() {
            ap->ensure_grad();
            const Tensor& g = np->grad;
            for (int i = 0; i < g.n(); ++i)
                for (int j = 0; j < g.c(); ++j)
                    for (int k = 0; k < g.h(); ++k)
                        for (int l = 0; l < g.w(); ++l)
                            ap->grad.at(i, j, k / 2, l / 2) += g.at(i, j, k, l);
        };
    }
    return n;
}

/*----------------------------------- conv -----------------------------------*/

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline void im2col(const Tensor& x, int s, int ci, int kh, int kw, int stride, int pad,
                   int ho, int wo, double* col) {
    // col is (ci*kh*kw) x (ho*wo), row-major
    int row = 0;
    for (int c = 0; c < ci; ++c)
        for (int dk = 0; dk < kh; ++dk)
            for (int dl = 0; dl < kw; ++dl, ++row) {
                double* dst = col + static_cast<size_t>(row) * ho * wo;
                for (int k = 0; k < ho; ++k) {
                    int sk = k * stride + dk - pad;
                    for (int l = 0; l < wo; ++l) {
                        int sl = l * stride + dl - pad;
                        dst[k * wo + l] = (sk >= 0 && sk < x.h() && sl >= 0 && sl < x.w())
                                              ? x.at(s, c, sk, sl)
                                              : 0.0;
                    }
                }
            }
}

inline void col2im_accum(const double* col, int s, int ci, int kh, int kw, int stride,
                         int pad, int ho, int wo, Tensor& dx) {
    int row = 0;
    for (int c = 0; c < ci; ++c)
        for (int dk = 0; dk < kh; ++dk)
            for (int dl = 0; dl < kw; ++dl, ++row) {
                const double* src = col + static_cast<size_t>(row) * ho * wo;
                for (int k = 0; k < ho; ++k) {
                    int sk = k * stride + dk - pad;
                    if (sk < 0 || sk >= dx.h()) continue;
                    for (int l = 0; l < wo; ++l) {
                        int sl = l * stride + dl - pad;
                        if (sl >= 0 && sl < dx.w()) dx.at(s, c, sk, sl) += src[k * wo + l];
                    }
                }
            }
}

}  // namespace detail

// w: (c_out, c_in, kh, kw); b: (1, c_out, 1, 1) or null var
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1, int pad = 1) {
    const Tensor& xv = x->val;
    const Tensor& wv = w->val;
    if (xv.c() != wv.c()) throw std::invalid_argument("conv2d: channel mismatch");
    const int co = wv.n(), ci = wv.c(), kh = wv.h(), kw = wv.w();
    const int ho = (xv.h() + 2 * pad - kh) / stride + 1;
    const int wo = (xv.w() + 2 * pad - kw) / stride + 1;
    const int K = ci * kh * kw, P = ho * wo;

    Tensor out(xv.n(), co, ho, wo);
    std::vector<double> col(static_cast<size_t>(K) * P);
    detail::CMapMat W(wv.data(), co, K);
    for (int s = 0; s < xv.n(); ++s) {
        detail::im2col(xv, s, ci, kh, kw, stride, pad, ho, wo, col.data());
        detail::CMapMat C(col.data(), K, P);
        detail::MapMat O(out.data() + static_cast<size_t>(s) * co * P, co, P);
        O.noalias() = W * C;
    }
    if (b) {
        for (int s = 0; s < xv.n(); ++s)
            for (int j = 0; j < co; ++j) {
                double bj = b->val[j];
                double* p = out.data() + ((static_cast<size_t>(s) * co + j) * P);
                for (int t = 0; t < P; ++t) p[t] += bj;
            }
    }

    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    Node* xp = x.get();
    Node* wp = w.get();
    Node* bp = b ? b.get() : nullptr;
    auto n = make_node(std::move(out), parents, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [xp, wp, bp, np, stride, pad, co, ci, kh, kw, ho, wo, K, P]() {
            const Tensor& g = np->grad;
            const Tensor& xv2 = xp->val;
            std::vector<double> col(static_cast<size_t>(K) * P);
            std::vector<double> dcol(static_cast<size_t>(K) * P);
            if (wp->requires_grad) wp->ensure_grad();
            if (xp->requires_grad) xp->ensure_grad();
            detail::CMapMat W(wp->val.data(), co, K);
            for (int s = 0; s < xv2.n(); ++s) {
                detail::CMapMat G(g.data() + static_cast<size_t>(s) * co * P, co, P);
                if (wp->requires_grad) {
                    detail::im2col(xv2, s, ci, kh, kw, stride, pad, ho, wo, col.data());
                    detail::CMapMat C(col.data(), K, P);
                    detail::MapMat dW(wp->grad.data(), co, K);
                    dW.noalias() += G * C.transpose();
                }
                if (xp->requires_grad) {
                    detail::MapMat dC(dcol.data(), K, P);
                    dC.noalias() = W.transpose() * G;
                    detail::col2im_accum(dcol.data(), s, ci, kh, kw, stride, pad, ho, wo,
                                         xp->grad);
                }
            }
            if (bp && bp->requires_grad) {
                bp->ensure_grad();
                for (int s = 0; s < xv2.n(); ++s)
                    for (int j = 0; j < co; ++j) {
                        const double* p = g.data() + ((static_cast<size_t>(s) * co + j) * P);
                        double acc = 0;
                        for (int t = 0; t < P; ++t) acc += p[t];
                        bp->grad[j] += acc;
                    }
            }
        };
    }
    return n;
}

// x: (n, f, 1, 1); w: (out, f, 1, 1); b: (1, out, 1, 1) or null
inline Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x->val;
    const Tensor& wv = w->val;
    if (xv.c() != wv.c() || xv.h() != 1 || xv.w() != 1) {
        throw std::invalid_argument("linear: shape mismatch");
    }
    const int N = xv.n(), F = xv.c(), M = wv.n();
    Tensor out(N, M, 1, 1);
    detail::CMapMat X(xv.data(), N, F);
    detail::CMapMat W(wv.data(), M, F);
    detail::MapMat O(out.data(), N, M);
    O.noalias() = X * W.transpose();
    if (b) {
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < M; ++j) out[static_cast<size_t>(i) * M + j] += b->val[j];
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    Node* xp = x.get();
    Node* wp = w.get();
    Node* bp = b ? b.get() : nullptr;
    auto n = make_node(std::move(out), parents, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        n->backprop = [xp, wp, bp, np, N, F, M]() {
            detail::CMapMat G(np->grad.data(), N, M);
            detail::CMapMat X2(xp->val.data(), N, F);
            detail::CMapMat W2(wp->val.data(), M, F);
            if (xp->requires_grad) {
                xp->ensure_grad();
                detail::MapMat dX(xp->grad.data(), N, F);
                dX.noalias() += G * W2;
            }
            if (wp->requires_grad) {
                wp->ensure_grad();
                detail::MapMat dW(wp->grad.data(), M, F);
                dW.noalias() += G.transpose() * X2;
            }
            if (bp && bp->requires_grad) {
                bp->ensure_grad();
                for (int i = 0; i < N; ++i)
                    for (int j = 0; j < M; ++j) bp->grad[j] += np->grad[static_cast<size_t>(i) * M + j];
            }
        };
    }
    return n;
}

// table: (K, f, 1, 1); returns (n, f, 1, 1) rows
inline Var embedding(const Var& table, const std::vector<int>& idx) {
    const Tensor& tv = table->val;
    const int F = tv.c();
    Tensor out(static_cast<int>(idx.size()), F, 1, 1);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= tv.n()) {
            throw std::invalid_argument("embedding: index out of range");
        }
        std::memcpy(out.data() + i * F, tv.data() + static_cast<size_t>(idx[i]) * F,
                    sizeof(double) * F);
    }
    Node* tp = table.get();
    auto n = make_node(std::move(out), {table}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        auto ix = idx;
        n->backprop = [tp, np, ix, F]() {
            tp->ensure_grad();
            for (size_t i = 0; i < ix.size(); ++i) {
                const double* g = np->grad.data() + i * F;
                double* dst = tp->grad.data() + static_cast<size_t>(ix[i]) * F;
                for (int f = 0; f < F; ++f) dst[f] += g[f];
            }
        };
    }
    return n;
}

/*--------------------------------- group norm -------------------------------*/

inline Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups,
                      double eps = 1e-5) {
    const Tensor& xv = x->val;
    if (xv.c() % groups != 0) throw std::invalid_argument("group_norm: c % groups != 0");
    const int cg = xv.c() / groups;
    const size_t gsz = static_cast<size_t>(cg) * xv.h() * xv.w();

    Tensor out(xv.n(), xv.c(), xv.h(), xv.w());
    Tensor xhat(xv.n(), xv.c(), xv.h(), xv.w());
    Tensor istd(xv.n(), groups, 1, 1);
    for (int i = 0; i < xv.n(); ++i)
        for (int g = 0; g < groups; ++g) {
            const double* p = xv.data() + (static_cast<size_t>(i) * xv.c() + g * cg) * xv.h() * xv.w();
            double mean = 0;
            for (size_t t = 0; t < gsz; ++t) mean += p[t];
            mean /= static_cast<double>(gsz);
            double var = 0;
            for (size_t t = 0; t < gsz; ++t) {
                double d = p[t] - mean;
                var += d * d;
            }
            var /= static_cast<double>(gsz);
            double is = 1.0 / std::sqrt(var + eps);
            istd.at(i, g, 0, 0) = is;
            double* xh = xhat.data() + (static_cast<size_t>(i) * xv.c() + g * cg) * xv.h() * xv.w();
            for (size_t t = 0; t < gsz; ++t) xh[t] = (p[t] - mean) * is;
        }
    for (int i = 0; i < xv.n(); ++i)
        for (int j = 0; j < xv.c(); ++j) {
            double gm = gamma->val[j], bt = beta->val[j];
            const double* xh = xhat.data() + (static_cast<size_t>(i) * xv.c() + j) * xv.h() * xv.w();
            double* o = out.data() + (static_cast<size_t>(i) * xv.c() + j) * xv.h() * xv.w();
            for (int t = 0; t < xv.h() * xv.w(); ++t) o[t] = gm * xh[t] + bt;
        }

    Node* xp = x.get();
    Node* gp = gamma.get();
    Node* bp = beta.get();
    auto n = make_node(std::move(out), {x, gamma, beta}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        auto xh_keep = std::make_shared<Tensor>(std::move(xhat));
        auto istd_keep = std::make_shared<Tensor>(std::move(istd));
        n->backprop = [xp, gp, bp, np, xh_keep, istd_keep, groups, cg, gsz]() {
            const Tensor& g = np->grad;
            const Tensor& xh = *xh_keep;
            const int C = xp->val.c(), HW = xp->val.h() * xp->val.w();
            if (gp->requires_grad || bp->requires_grad) {
                if (gp->requires_grad) gp->ensure_grad();
                if (bp->requires_grad) bp->ensure_grad();
                for (int i = 0; i < g.n(); ++i)
                    for (int j = 0; j < C; ++j) {
                        const double* gr = g.data() + (static_cast<size_t>(i) * C + j) * HW;
                        const double* xhp = xh.data() + (static_cast<size_t>(i) * C + j) * HW;
                        double sg = 0, sb = 0;
                        for (int t = 0; t < HW; ++t) {
                            sg += gr[t] * xhp[t];
                            sb += gr[t];
                        }
                        if (gp->requires_grad) gp->grad[j] += sg;
                        if (bp->requires_grad) bp->grad[j] += sb;
                    }
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                for (int i = 0; i < g.n(); ++i)
                    for (int gi = 0; gi < groups; ++gi) {
                        // dy w.r.t. xhat is grad*gamma; then the standard
                        // normalization backward within the group
                        double mean_dyh = 0, mean_dyh_xh = 0;
                        const size_t base = (static_cast<size_t>(i) * C + gi * cg) * HW;
                        for (int cc = 0; cc < cg; ++cc) {
                            double gm = gp->val[gi * cg + cc];
                            const double* gr = g.data() + base + static_cast<size_t>(cc) * HW;
                            const double* xhp = xh.data() + base + static_cast<size_t>(cc) * HW;
                            for (int t = 0; t < HW; ++t) {
                                double dyh = gr[t] * gm;
                                mean_dyh += dyh;
                                mean_dyh_xh += dyh * xhp[t];
                            }
                        }
                        mean_dyh /= static_cast<double>(gsz);
                        mean_dyh_xh /= static_cast<double>(gsz);
                        double is = istd_keep->at(i, gi, 0, 0);
                        for (int cc = 0; cc < cg; ++cc) {
                            double gm = gp->val[gi * cg + cc];
                            const double* gr = g.data() + base + static_cast<size_t>(cc) * HW;
                            const double* xhp = xh.data() + base + static_cast<size_t>(cc) * HW;
                            double* dx = xp->grad.data() + base + static_cast<size_t>(cc) * HW;
                            for (int t = 0; t < HW; ++t) {
                                double dyh = gr[t] * gm;
                                dx[t] += is * (dyh - mean_dyh - xhp[t] * mean_dyh_xh);
                            }
                        }
                    }
            }
        };
    }
    return n;
}

/*----------------------------- perceptual helpers ---------------------------*/

// unit-normalize across channels at each (n,h,w) location
inline Var channel_unit_norm(const Var& x, double eps = 1e-10) {
    const Tensor& xv = x->val;
    Tensor out(xv.n(), xv.c(), xv.h(), xv.w());
    Tensor rnorm(xv.n(), 1, xv.h(), xv.w());
    for (int i = 0; i < xv.n(); ++i)
        for (int k = 0; k < xv.h(); ++k)
            for (int l = 0; l < xv.w(); ++l) {
                double s = 0;
                for (int j = 0; j < xv.c(); ++j) {
                    double v = xv.at(i, j, k, l);
                    s += v * v;
                }
                double r = 1.0 / std::sqrt(s + eps);
                rnorm.at(i, 0, k, l) = r;
                for (int j = 0; j < xv.c(); ++j) out.at(i, j, k, l) = xv.at(i, j, k, l) * r;
            }
    Node* xp = x.get();
    auto n = make_node(std::move(out), {x}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        auto rk = std::make_shared<Tensor>(std::move(rnorm));
        n->backprop = [xp, np, rk]() {
            xp->ensure_grad();
            const Tensor& g = np->grad;
            const Tensor& y = np->val;
            for (int i = 0; i < g.n(); ++i)
                for (int k = 0; k < g.h(); ++k)
                    for (int l = 0; l < g.w(); ++l) {
                        double r = rk->at(i, 0, k, l);
                        double dot = 0;
                        for (int j = 0; j < g.c(); ++j) dot += g.at(i, j, k, l) * y.at(i, j, k, l);
                        for (int j = 0; j < g.c(); ++j)
                            xp->grad.at(i, j, k, l) +=
                                r * (g.at(i, j, k, l) - y.at(i, j, k, l) * dot);
                    }
        };
    }
    return n;
}

// elementwise multiply by a fixed mask (broadcast over batch when mask n==1)
inline Var mul_mask(const Var& x, const Tensor& mask) {
    return mul(x, constant(mask));
}

/*------------------------------ affine sampling -----------------------------*/

// 2x3 matrix mapping output pixel coords to source pixel coords:
//   u = m[0]*l + m[1]*k + m[2]; v = m[3]*l + m[4]*k + m[5]   (l=x/col, k=y/row)
struct AffineMat {
    double m[6];
    static AffineMat identity() { return {{1, 0, 0, 0, 1, 0}}; }
    // this * other: applies `other` first, then this
    AffineMat compose(const AffineMat& o) const {
        AffineMat r{};
        r.m[0] = m[0] * o.m[0] + m[1] * o.m[3];
        r.m[1] = m[0] * o.m[1] + m[1] * o.m[4];
        r.m[2] = m[0] * o.m[2] + m[1] * o.m[5] + m[2];
        r.m[3] = m[3] * o.m[0] + m[4] * o.m[3];
        r.m[4] = m[3] * o.m[1] + m[4] * o.m[4];
        r.m[5] = m[3] * o.m[2] + m[4] * o.m[5] + m[5];
        return r;
    }
};

// bilinear warp with zero padding; same matrix for every sample
inline Var affine_sample(const Var& x, const AffineMat& mat) {
    const Tensor& xv = x->val;
    Tensor out(xv.n(), xv.c(), xv.h(), xv.w());
    const int H = xv.h(), W = xv.w();
    auto sample_pos = [&](int k, int l, double& u, double& v) {
        u = mat.m[0] * l + mat.m[1] * k + mat.m[2];
        v = mat.m[3] * l + mat.m[4] * k + mat.m[5];
    };
    for (int i = 0; i < xv.n(); ++i)
        for (int k = 0; k < H; ++k)
            for (int l = 0; l < W; ++l) {
                double u, v;
                sample_pos(k, l, u, v);
                double fu = std::floor(u), fv = std::floor(v);
                int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
                double au = u - fu, av = v - fv;
                for (int j = 0; j < xv.c(); ++j) {
                    auto px = [&](int vv, int uu) -> double {
                        return (uu >= 0 && uu < W && vv >= 0 && vv < H) ? xv.at(i, j, vv, uu)
                                                                        : 0.0;
                    };
                    out.at(i, j, k, l) = (1 - av) * ((1 - au) * px(v0, u0) + au * px(v0, u0 + 1)) +
                                         av * ((1 - au) * px(v0 + 1, u0) + au * px(v0 + 1, u0 + 1));
                }
            }
    Node* xp = x.get();
    auto n = make_node(std::move(out), {x}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        AffineMat m = mat;
        n->backprop = [xp, np, m]() {
            xp->ensure_grad();
            const Tensor& g = np->grad;
            const int H = g.h(), W = g.w();
            for (int i = 0; i < g.n(); ++i)
                for (int k = 0; k < H; ++k)
                    for (int l = 0; l < W; ++l) {
                        double u = m.m[0] * l + m.m[1] * k + m.m[2];
                        double v = m.m[3] * l + m.m[4] * k + m.m[5];
                        double fu = std::floor(u), fv = std::floor(v);
                        int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
                        double au = u - fu, av = v - fv;
                        for (int j = 0; j < g.c(); ++j) {
                            double gv = g.at(i, j, k, l);
                            auto acc = [&](int vv, int uu, double wgt) {
                                if (uu >= 0 && uu < W && vv >= 0 && vv < H)
                                    xp->grad.at(i, j, vv, uu) += wgt * gv;
                            };
                            acc(v0, u0, (1 - av) * (1 - au));
                            acc(v0, u0 + 1, (1 - av) * au);
                            acc(v0 + 1, u0, av * (1 - au));
                            acc(v0 + 1, u0 + 1, av * au);
                        }
                    }
        };
    }
    return n;
}

/*------------------------------- classification -----------------------------*/

// logits: (n, K, 1, 1); mean negative log-likelihood
inline Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
    const Tensor& lv = logits->val;
    const int N = lv.n(), K = lv.c();
    if (static_cast<int>(labels.size()) != N) {
        throw std::invalid_argument("cross_entropy: label count mismatch");
    }
    Tensor softmax(N, K, 1, 1);
    double loss = 0;
    for (int i = 0; i < N; ++i) {
        const double* p = lv.data() + static_cast<size_t>(i) * K;
        double mx = p[0];
        for (int j = 1; j < K; ++j) mx = std::max(mx, p[j]);
        double z = 0;
        for (int j = 0; j < K; ++j) z += std::exp(p[j] - mx);
        double lse = mx + std::log(z);
        for (int j = 0; j < K; ++j) softmax[static_cast<size_t>(i) * K + j] = std::exp(p[j] - lse);
        loss += lse - p[labels[i]];
    }
    loss /= N;
    Node* lp = logits.get();
    auto n = make_node(Tensor::scalar(loss), {logits}, nullptr);
    if (n->requires_grad) {
        Node* np = n.get();
        auto sm = std::make_shared<Tensor>(std::move(softmax));
        auto lab = labels;
        n->backprop = [lp, np, sm, lab, N, K]() {
            lp->ensure_grad();
            double g = np->grad[0] / N;
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < K; ++j)
                    lp->grad[static_cast<size_t>(i) * K + j] +=
                        g * ((*sm)[static_cast<size_t>(i) * K + j] - (j == lab[i] ? 1.0 : 0.0));
        };
    }
    return n;
}

}  // namespace d2g

#endif
