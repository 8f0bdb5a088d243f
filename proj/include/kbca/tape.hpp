#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kbca/rng.hpp"
#include "kbca/tensor.hpp"

namespace kbca {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;
};

/// Reverse-accumulation tape. Forward passes append nodes; backward()
/// walks them in reverse, pushing adjoints into parent gradients.
/// One tape per forward/backward pass, single logical thread.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad; // allocated only when requires_grad
        bool requires_grad = false;
        std::function<void(Tape&, const Tensor&)> back; // (tape, out grad)
    };

    Var leaf(const Tensor& v, bool requires_grad = false) {
        require_finite(v, "Tape::leaf");
        return push(v, requires_grad, {});
    }

    Var push(Tensor value, bool requires_grad,
             std::function<void(Tape&, const Tensor&)> back) {
        require_finite(value, "Tape op output");
        Node n;
        if (requires_grad) n.grad = Tensor::zeros(value.shape());
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    void set_back(Var v, std::function<void(Tape&, const Tensor&)> f) {
        nodes_[v.id].back = std::move(f);
    }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
    Tensor& grad_mut(Var v) { return nodes_[v.id].grad; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable grad.
    void backward(Var loss) {
        if (nodes_[loss.id].value.numel() != 1)
            throw ShapeError("Tape::backward: loss must be scalar");
        if (!nodes_[loss.id].requires_grad)
            throw NumericError("Tape::backward: loss does not depend on any parameter");
        nodes_[loss.id].grad[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.back) n.back(*this, n.grad);
        }
        for (const Node& n : nodes_) {
            if (n.requires_grad && !n.grad.all_finite())
                throw NumericError("Tape::backward: non-finite gradient");
        }
    }

private:
    std::vector<Node> nodes_;
};

namespace detail {

inline bool rg(Var a) { return a.tape->requires_grad(a); }

inline void accumulate(Tape& t, Var target, const Tensor& delta) {
    if (!t.requires_grad(target)) return;
    Tensor& g = t.grad_mut(target);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += delta[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor &av = t.value(a), &bv = t.value(b);
    require_same_shape(av, bv, "add");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    bool need = detail::rg(a) || detail::rg(b);
    return t.push(std::move(out), need, [a, b](Tape& tp, const Tensor& g) {
        detail::accumulate(tp, a, g);
        detail::accumulate(tp, b, g);
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor &av = t.value(a), &bv = t.value(b);
    require_same_shape(av, bv, "sub");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    bool need = detail::rg(a) || detail::rg(b);
    return t.push(std::move(out), need, [a, b](Tape& tp, const Tensor& g) {
        detail::accumulate(tp, a, g);
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_mut(b);
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
        }
    });
}

inline Var mul(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor &av = t.value(a), &bv = t.value(b);
    require_same_shape(av, bv, "mul");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    bool need = detail::rg(a) || detail::rg(b);
    return t.push(std::move(out), need, [a, b](Tape& tp, const Tensor& g) {
        const Tensor &av2 = tp.value(a), &bv2 = tp.value(b);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_mut(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * bv2[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_mut(b);
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g[i] * av2[i];
        }
    });
}

inline Var scale(Var a, double s) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (auto& x : out.data()) x *= s;
    return t.push(std::move(out), detail::rg(a), [a, s](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a)) return;
        Tensor& ga = tp.grad_mut(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * s;
    });
}

inline Var add_scalar(Var a, double c) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (auto& x : out.data()) x += c;
    return t.push(std::move(out), detail::rg(a), [a](Tape& tp, const Tensor& g) {
        detail::accumulate(tp, a, g);
    });
}

/// Elementwise multiply by a constant tensor (e.g. a frozen noise factor
/// or dropout mask). The constant receives no gradient.
inline Var mul_const(Var a, const Tensor& c) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    require_same_shape(av, c, "mul_const");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
    Tensor cc = c;
    return t.push(std::move(out), detail::rg(a),
                  [a, cc = std::move(cc)](Tape& tp, const Tensor& g) {
                      if (!tp.requires_grad(a)) return;
                      Tensor& ga = tp.grad_mut(a);
                      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * cc[i];
                  });
}

inline Var add_const(Var a, const Tensor& c) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    require_same_shape(av, c, "add_const");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c[i];
    return t.push(std::move(out), detail::rg(a), [a](Tape& tp, const Tensor& g) {
        detail::accumulate(tp, a, g);
    });
}

inline Var relu(Var a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (auto& x : out.data()) x = x > 0.0 ? x : 0.0;
    return t.push(std::move(out), detail::rg(a), [a](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a)) return;
        const Tensor& av = tp.value(a);
        Tensor& ga = tp.grad_mut(a);
        for (std::size_t i = 0; i < ga.numel(); ++i)
            if (av[i] > 0.0) ga[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

namespace detail {

// c[m x n] += a[m x k] * b[k x n], optional transposes on a/b.
inline void gemm_acc(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c) {
    std::size_t m = c.rows(), n = c.cols();
    std::size_t kk = ta ? a.rows() : a.cols();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < kk; ++k) {
            double aik = ta ? a(k, i) : a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                c(i, j) += aik * (tb ? b(j, k) : b(k, j));
            }
        }
    }
}

} // namespace detail

inline Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor &av = t.value(a), &bv = t.value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
        throw ShapeError("matmul: incompatible shapes " + av.shape_str() + " * " + bv.shape_str());
    Tensor out({av.rows(), bv.cols()});
    detail::gemm_acc(av, false, bv, false, out);
    bool need = detail::rg(a) || detail::rg(b);
    return t.push(std::move(out), need, [a, b](Tape& tp, const Tensor& g) {
        const Tensor &av2 = tp.value(a), &bv2 = tp.value(b);
        if (tp.requires_grad(a)) detail::gemm_acc(g, false, bv2, true, tp.grad_mut(a));
        if (tp.requires_grad(b)) detail::gemm_acc(av2, true, g, false, tp.grad_mut(b));
    });
}

inline Var transpose(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() != 2) throw ShapeError("transpose: rank-2 only");
    Tensor out({av.cols(), av.rows()});
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
    return t.push(std::move(out), detail::rg(a), [a](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a)) return;
        Tensor& ga = tp.grad_mut(a);
        for (std::size_t i = 0; i < ga.rows(); ++i)
            for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(j, i);
    });
}

/// x[m x n] + v broadcast over rows; v has n elements (bias add).
inline Var add_rowvec(Var a, Var v) {
    Tape& t = *a.tape;
    const Tensor &av = t.value(a), &vv = t.value(v);
    if (vv.numel() != av.cols())
        throw ShapeError("add_rowvec: bias length " + std::to_string(vv.numel()) +
                         " vs cols " + std::to_string(av.cols()));
    Tensor out = av;
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) += vv[j];
    bool need = detail::rg(a) || detail::rg(v);
    return t.push(std::move(out), need, [a, v](Tape& tp, const Tensor& g) {
        detail::accumulate(tp, a, g);
        if (tp.requires_grad(v)) {
            Tensor& gv = tp.grad_mut(v);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gv[j] += g(i, j);
        }
    });
}

inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (c0 >= c1 || c1 > av.cols()) throw ShapeError("slice_cols: bad range");
    Tensor out({av.rows(), c1 - c0});
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = av(i, j);
    return t.push(std::move(out), detail::rg(a), [a, c0](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a)) return;
        Tensor& ga = tp.grad_mut(a);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) ga(i, c0 + j) += g(i, j);
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty");
    Tape& t = *parts[0].tape;
    std::size_t m = t.value(parts[0]).rows();
    std::size_t n = 0;
    bool need = false;
    for (Var p : parts) {
        if (t.value(p).rows() != m) throw ShapeError("concat_cols: row mismatch");
        n += t.value(p).cols();
        need = need || detail::rg(p);
    }
    Tensor out({m, n});
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& pv = t.value(p);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
        off += pv.cols();
    }
    std::vector<Var> ps = parts;
    return t.push(std::move(out), need, [ps](Tape& tp, const Tensor& g) {
        std::size_t off2 = 0;
        for (Var p : ps) {
            std::size_t c = tp.value(p).cols();
            if (tp.requires_grad(p)) {
                Tensor& gp = tp.grad_mut(p);
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < c; ++j) gp(i, j) += g(i, off2 + j);
            }
            off2 += c;
        }
    });
}

/// Column mean over rows: [m x n] -> [1 x n].
inline Var mean_rows(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    std::size_t m = av.rows(), n = av.cols();
    if (m == 0) throw ShapeError("mean_rows: empty");
    Tensor out({1, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(0, j) += av(i, j) / static_cast<double>(m);
    return t.push(std::move(out), detail::rg(a), [a, m](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a)) return;
        Tensor& ga = tp.grad_mut(a);
        double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < ga.rows(); ++i)
            for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(0, j) * inv;
    });
}

/// Replicate a [1 x n] row m times -> [m x n].
inline Var broadcast_rows(Var row, std::size_t m) {
    Tape& t = *row.tape;
    const Tensor& rv = t.value(row);
    if (rv.rows() != 1) throw ShapeError("broadcast_rows: expects [1 x n]");
    std::size_t n = rv.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = rv(0, j);
    return t.push(std::move(out), detail::rg(row), [row](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(row)) return;
        Tensor& gr = tp.grad_mut(row);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
    });
}

/// Weighted sum of constant layers with trainable weights w [1 x L].
inline Var weighted_sum_const(const std::vector<Tensor>& layers, Var w) {
    Tape& t = *w.tape;
    const Tensor& wv = t.value(w);
    if (wv.numel() != layers.size()) throw ShapeError("weighted_sum_const: weight count mismatch");
    for (std::size_t l = 1; l < layers.size(); ++l)
        require_same_shape(layers[0], layers[l], "weighted_sum_const");
    Tensor out = Tensor::zeros(layers[0].shape());
    for (std::size_t l = 0; l < layers.size(); ++l)
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += wv[l] * layers[l][i];
    std::vector<Tensor> ls = layers;
    return t.push(std::move(out), detail::rg(w),
                  [w, ls = std::move(ls)](Tape& tp, const Tensor& g) {
                      if (!tp.requires_grad(w)) return;
                      Tensor& gw = tp.grad_mut(w);
                      for (std::size_t l = 0; l < ls.size(); ++l) {
                          double s = 0.0;
                          for (std::size_t i = 0; i < g.numel(); ++i) s += g[i] * ls[l][i];
                          gw[l] += s;
                      }
                  });
}

/// Mean over contiguous row segments [start, end): forced-alignment pooling.
inline Var segment_mean(Var frames, const std::vector<std::pair<std::size_t, std::size_t>>& segs) {
    Tape& t = *frames.tape;
    const Tensor& fv = t.value(frames);
    std::size_t d = fv.cols();
    if (segs.empty()) throw ShapeError("segment_mean: no segments");
    Tensor out({segs.size(), d});
    for (std::size_t k = 0; k < segs.size(); ++k) {
        auto [s, e] = segs[k];
        if (e <= s) throw DataError("segment_mean: empty segment");
        if (e > fv.rows()) throw DataError("segment_mean: frame index out of range");
        double inv = 1.0 / static_cast<double>(e - s);
        for (std::size_t f = s; f < e; ++f)
            for (std::size_t j = 0; j < d; ++j) out(k, j) += fv(f, j) * inv;
    }
    auto segs2 = segs;
    return t.push(std::move(out), detail::rg(frames),
                  [frames, segs2](Tape& tp, const Tensor& g) {
                      if (!tp.requires_grad(frames)) return;
                      Tensor& gf = tp.grad_mut(frames);
                      for (std::size_t k = 0; k < segs2.size(); ++k) {
                          auto [s, e] = segs2[k];
                          double inv = 1.0 / static_cast<double>(e - s);
                          for (std::size_t f = s; f < e; ++f)
                              for (std::size_t j = 0; j < gf.cols(); ++j)
                                  gf(f, j) += g(k, j) * inv;
                      }
                  });
}

// ---------------------------------------------------------------------------
// Normalization and probability ops
// ---------------------------------------------------------------------------

inline Var softmax_rows(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    Tensor out = av;
    for (std::size_t i = 0; i < av.rows(); ++i) {
        double mx = out(i, 0);
        for (std::size_t j = 1; j < av.cols(); ++j) mx = std::max(mx, out(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < av.cols(); ++j) {
            out(i, j) = std::exp(out(i, j) - mx);
            sum += out(i, j);
        }
        for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) /= sum;
    }
    Var y = t.push(std::move(out), detail::rg(a), {});
    if (detail::rg(a)) {
        t.grad_mut(y); // ensure allocated
        // dX_ij = y_ij * (g_ij - sum_j' g_ij' y_ij')
        auto yid = y;
        t.set_back(y, [a, yid](Tape& tp, const Tensor& g) {
            const Tensor& yv = tp.value(yid);
            Tensor& ga = tp.grad_mut(a);
            for (std::size_t i = 0; i < yv.rows(); ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < yv.cols(); ++j) dot += g(i, j) * yv(i, j);
                for (std::size_t j = 0; j < yv.cols(); ++j)
                    ga(i, j) += yv(i, j) * (g(i, j) - dot);
            }
        });
    }
    return y;
}

/// Divide each row by its sum. Requires strictly positive row sums.
inline Var row_normalize(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    Tensor out = av;
    std::vector<double> sums(av.rows());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < av.cols(); ++j) s += av(i, j);
        if (!(s > 0.0)) throw NumericError("row_normalize: non-positive row sum");
        sums[i] = s;
        for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) /= s;
    }
    Var y = t.push(std::move(out), detail::rg(a), {});
    if (detail::rg(a)) {
        auto yid = y;
        t.set_back(y, [a, yid, sums](Tape& tp, const Tensor& g) {
            const Tensor& yv = tp.value(yid);
            Tensor& ga = tp.grad_mut(a);
            for (std::size_t i = 0; i < yv.rows(); ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < yv.cols(); ++j) dot += g(i, j) * yv(i, j);
                for (std::size_t j = 0; j < yv.cols(); ++j)
                    ga(i, j) += (g(i, j) - dot) / sums[i];
            }
        });
    }
    return y;
}

inline Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5) {
    Tape& t = *x.tape;
    const Tensor &xv = t.value(x), &gv = t.value(gain), &bv = t.value(bias);
    std::size_t m = xv.rows(), d = xv.cols();
    if (gv.numel() != d || bv.numel() != d) throw ShapeError("layernorm: gain/bias length mismatch");
    Tensor out({m, d});
    Tensor xhat({m, d});
    std::vector<double> inv_sigma(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xv(i, j);
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = xv(i, j) - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (std::size_t j = 0; j < d; ++j) {
            xhat(i, j) = (xv(i, j) - mu) * is;
            out(i, j) = gv[j] * xhat(i, j) + bv[j];
        }
    }
    bool need = detail::rg(x) || detail::rg(gain) || detail::rg(bias);
    return t.push(std::move(out), need,
                  [x, gain, bias, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](
                      Tape& tp, const Tensor& g) {
                      const Tensor& gv2 = tp.value(gain);
                      std::size_t m2 = g.rows(), d2 = g.cols();
                      if (tp.requires_grad(bias)) {
                          Tensor& gb = tp.grad_mut(bias);
                          for (std::size_t i = 0; i < m2; ++i)
                              for (std::size_t j = 0; j < d2; ++j) gb[j] += g(i, j);
                      }
                      if (tp.requires_grad(gain)) {
                          Tensor& gg = tp.grad_mut(gain);
                          for (std::size_t i = 0; i < m2; ++i)
                              for (std::size_t j = 0; j < d2; ++j) gg[j] += g(i, j) * xhat(i, j);
                      }
                      if (tp.requires_grad(x)) {
                          Tensor& gx = tp.grad_mut(x);
                          for (std::size_t i = 0; i < m2; ++i) {
                              double mean_h = 0.0, mean_hx = 0.0;
                              for (std::size_t j = 0; j < d2; ++j) {
                                  double h = g(i, j) * gv2[j];
                                  mean_h += h;
                                  mean_hx += h * xhat(i, j);
                              }
                              mean_h /= static_cast<double>(d2);
                              mean_hx /= static_cast<double>(d2);
                              for (std::size_t j = 0; j < d2; ++j) {
                                  double h = g(i, j) * gv2[j];
                                  gx(i, j) += (h - mean_h - xhat(i, j) * mean_hx) * inv_sigma[i];
                              }
                          }
                      }
                  });
}

/// Inverted dropout. Training: zero with probability p and scale survivors
/// by 1/(1-p); inference: identity. Mask drawn from rng, one draw per element.
inline Var dropout(Var a, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
    Tape& t = *a.tape;
    if (!training || p == 0.0) {
        Tensor out = t.value(a);
        return t.push(std::move(out), detail::rg(a), [a](Tape& tp, const Tensor& g) {
            detail::accumulate(tp, a, g);
        });
    }
    const Tensor& av = t.value(a);
    Tensor mask(av.shape());
    double keep = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.numel(); ++i)
        mask[i] = rng.uniform() < p ? 0.0 : keep;
    return mul_const(a, mask);
}

/// Sum of elementwise product with a constant weighting tensor -> scalar.
/// Handy for building scalar losses in tests and gradient checks.
inline Var dot_const(Var a, const Tensor& w) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    require_same_shape(av, w, "dot_const");
    double s = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av[i] * w[i];
    Tensor out({1, 1}, {s});
    Tensor ww = w;
    return t.push(std::move(out), detail::rg(a),
                  [a, ww = std::move(ww)](Tape& tp, const Tensor& g) {
                      if (!tp.requires_grad(a)) return;
                      Tensor& ga = tp.grad_mut(a);
                      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[0] * ww[i];
                  });
}

/// Cross-entropy of a [1 x C] logit row against a class index.
inline Var cross_entropy(Var logits, std::size_t label) {
    Tape& t = *logits.tape;
    const Tensor& lv = t.value(logits);
    if (lv.rows() != 1) throw ShapeError("cross_entropy: expects [1 x C] logits");
    std::size_t C = lv.cols();
    if (label >= C) throw ConfigError("cross_entropy: label out of range");
    double mx = lv(0, 0);
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, lv(0, j));
    double sum = 0.0;
    std::vector<double> p(C);
    for (std::size_t j = 0; j < C; ++j) {
        p[j] = std::exp(lv(0, j) - mx);
        sum += p[j];
    }
    for (std::size_t j = 0; j < C; ++j) p[j] /= sum;
    Tensor out({1, 1}, {-(std::log(p[label]))});
    return t.push(std::move(out), detail::rg(logits),
                  [logits, label, p = std::move(p)](Tape& tp, const Tensor& g) {
                      if (!tp.requires_grad(logits)) return;
                      Tensor& gl = tp.grad_mut(logits);
                      for (std::size_t j = 0; j < gl.cols(); ++j) {
                          double onehot = j == label ? 1.0 : 0.0;
                          gl(0, j) += g[0] * (p[j] - onehot);
                      }
                  });
}

} // namespace kbca
