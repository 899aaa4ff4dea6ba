#include <cmath>
#include <sstream>

#include "uatr/autodiff.hpp"
#include "uatr/error.hpp"
#include "uatr/losses.hpp"

namespace uatr {

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> values)
    : shape(std::move(dims)), data(std::move(values)) {
    if (count(shape) != data.size())
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string());
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_string() const {
    std::ostringstream ss;
    ss << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? "," : "") << shape[i];
    ss << ']';
    return ss.str();
}

void guard_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values produced by ") + op);
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr});
    return Var{nodes_.size() - 1};
}

Var Tape::parameter(Parameter& param) {
    nodes_.push_back(Node{param.value, {}, nullptr, &param});
    return Var{nodes_.size() - 1};
}

Var Tape::push(Tensor value, Backward backward, const char* op) {
    guard_finite(value, op);
    nodes_.push_back(Node{std::move(value), {}, std::move(backward), nullptr});
    return Var{nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
    return n.grad;
}

void Tape::backward(Var loss) {
    if (value(loss).size() != 1) throw ShapeError("backward() needs a scalar loss");
    grad(loss).data[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.data.empty()) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param) {
            auto& dst = n.param->grad.data;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad.data[k];
        }
    }
}

namespace ops {

namespace {

void require(bool cond, const std::string& what) {
    if (!cond) throw ShapeError(what);
}

}  // namespace

Var add(Tape& tape, Var a, Var b) {
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(b);
    require(same_shape(x, y), "add: shape mismatch " + x.shape_string() + " vs " + y.shape_string());
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return tape.push(std::move(out), [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = t.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }, "add");
}

Var relu(Tape& tape, Var x) {
    Tensor out = tape.value(x);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return tape.push(std::move(out), [x](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& in = t.value(x);
        Tensor& gx = t.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in[i] > 0.0) gx[i] += g[i];
    }, "relu");
}

Var scale(Tape& tape, Var x, double factor) {
    Tensor out = tape.value(x);
    for (double& v : out.data) v *= factor;
    return tape.push(std::move(out), [x, factor](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
    }, "scale");
}

namespace {

struct ConvGeom {
    std::size_t n, ci, T, F, co, kt, Fo, sf, pt;
};

// Output frequencies [lo, hi) whose input index fo*sf + df - 1 lies in [0, F).
inline void freq_range(const ConvGeom& g, std::size_t df, std::size_t& lo, std::size_t& hi) {
    lo = df == 0 ? 1 : 0;
    if (g.F < df) {
        hi = 0;
        return;
    }
    hi = std::min(g.Fo, (g.F - df) / g.sf + 1);
}

}  // namespace

Var conv2d(Tape& tape, Var x, Var w, Var b, std::size_t stride_f) {
    const Tensor& in = tape.value(x);
    const Tensor& wt = tape.value(w);
    const Tensor& bias = tape.value(b);
    require(in.rank() == 4, "conv2d: input must be [n, c, T, F], got " + in.shape_string());
    require(wt.rank() == 4 && wt.dim(3) == 3 && (wt.dim(2) == 1 || wt.dim(2) == 3),
            "conv2d: weight must be [co, ci, 1|3, 3], got " + wt.shape_string());
    require(wt.dim(1) == in.dim(1), "conv2d: channel mismatch " + in.shape_string() + " vs " + wt.shape_string());
    require(bias.rank() == 1 && bias.dim(0) == wt.dim(0), "conv2d: bias must be [co]");
    require(stride_f >= 1, "conv2d: stride must be positive");

    ConvGeom g{in.dim(0), in.dim(1), in.dim(2), in.dim(3), wt.dim(0), wt.dim(2), 0, stride_f, wt.dim(2) / 2};
    g.Fo = (g.F - 1) / g.sf + 1;
    Tensor out({g.n, g.co, g.T, g.Fo});

    for (std::size_t s = 0; s < g.n; ++s) {
        for (std::size_t o = 0; o < g.co; ++o) {
            double* dst = out.data.data() + ((s * g.co + o) * g.T) * g.Fo;
            std::fill(dst, dst + g.T * g.Fo, bias[o]);
            for (std::size_t c = 0; c < g.ci; ++c) {
                const double* src = in.data.data() + ((s * g.ci + c) * g.T) * g.F;
                for (std::size_t dt = 0; dt < g.kt; ++dt) {
                    for (std::size_t df = 0; df < 3; ++df) {
                        const double wv = wt.data[((o * g.ci + c) * g.kt + dt) * 3 + df];
                        std::size_t lo, hi;
                        freq_range(g, df, lo, hi);
                        for (std::size_t t = 0; t < g.T; ++t) {
                            const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(t + dt) -
                                                      static_cast<std::ptrdiff_t>(g.pt);
                            if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(g.T)) continue;
                            const double* row = src + static_cast<std::size_t>(ti) * g.F;
                            double* orow = dst + t * g.Fo;
                            if (g.sf == 1) {
                                for (std::size_t f = lo; f < hi; ++f) orow[f] += wv * row[f + df - 1];
                            } else {
                                for (std::size_t f = lo; f < hi; ++f) orow[f] += wv * row[f * g.sf + df - 1];
                            }
                        }
                    }
                }
            }
        }
    }

    return tape.push(std::move(out), [x, w, b, g](Tape& t, std::size_t self) {
        const Tensor& gout = t.grad(self);
        const Tensor& in = t.value(x);
        const Tensor& wt = t.value(w);
        Tensor& gx = t.grad(x);
        Tensor& gw = t.grad(w);
        Tensor& gb = t.grad(b);
        for (std::size_t s = 0; s < g.n; ++s) {
            for (std::size_t o = 0; o < g.co; ++o) {
                const double* go = gout.data.data() + ((s * g.co + o) * g.T) * g.Fo;
                double bsum = 0.0;
                for (std::size_t i = 0; i < g.T * g.Fo; ++i) bsum += go[i];
                gb[o] += bsum;
                for (std::size_t c = 0; c < g.ci; ++c) {
                    const double* src = in.data.data() + ((s * g.ci + c) * g.T) * g.F;
                    double* gsrc = gx.data.data() + ((s * g.ci + c) * g.T) * g.F;
                    for (std::size_t dt = 0; dt < g.kt; ++dt) {
                        for (std::size_t df = 0; df < 3; ++df) {
                            const std::size_t widx = ((o * g.ci + c) * g.kt + dt) * 3 + df;
                            const double wv = wt.data[widx];
                            double wacc = 0.0;
                            std::size_t lo, hi;
                            freq_range(g, df, lo, hi);
                            for (std::size_t tt = 0; tt < g.T; ++tt) {
                                const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(tt + dt) -
                                                          static_cast<std::ptrdiff_t>(g.pt);
                                if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(g.T)) continue;
                                const std::size_t off = static_cast<std::size_t>(ti) * g.F;
                                const double* row = src + off;
                                double* grow = gsrc + off;
                                const double* orow = go + tt * g.Fo;
                                if (g.sf == 1) {
                                    for (std::size_t f = lo; f < hi; ++f) {
                                        wacc += orow[f] * row[f + df - 1];
                                        grow[f + df - 1] += wv * orow[f];
                                    }
                                } else {
                                    for (std::size_t f = lo; f < hi; ++f) {
                                        wacc += orow[f] * row[f * g.sf + df - 1];
                                        grow[f * g.sf + df - 1] += wv * orow[f];
                                    }
                                }
                            }
                            gw[widx] += wacc;
                        }
                    }
                }
            }
        }
    }, "conv2d");
}

Var freq_mean(Tape& tape, Var x) {
    const Tensor& in = tape.value(x);
    require(in.rank() == 4, "freq_mean: input must be [n, c, T, F]");
    const std::size_t n = in.dim(0), c = in.dim(1), T = in.dim(2), F = in.dim(3);
    Tensor out({n, T, c});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t t = 0; t < T; ++t) {
                const double* row = in.data.data() + ((s * c + ch) * T + t) * F;
                double acc = 0.0;
                for (std::size_t f = 0; f < F; ++f) acc += row[f];
                out.data[(s * T + t) * c + ch] = acc / static_cast<double>(F);
            }
    return tape.push(std::move(out), [x, n, c, T, F](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad(x);
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t tt = 0; tt < T; ++tt) {
                    const double v = g.data[(s * T + tt) * c + ch] / static_cast<double>(F);
                    double* row = gx.data.data() + ((s * c + ch) * T + tt) * F;
                    for (std::size_t f = 0; f < F; ++f) row[f] += v;
                }
    }, "freq_mean");
}

Var linear(Tape& tape, Var x, Var w, Var b) {
    const Tensor& in = tape.value(x);
    const Tensor& wt = tape.value(w);
    const bool has_bias = b.id != static_cast<std::size_t>(-1);
    require(wt.rank() == 2, "linear: weight must be [out, in]");
    require(in.rank() >= 1 && in.shape.back() == wt.dim(1),
            "linear: input " + in.shape_string() + " incompatible with weight " + wt.shape_string());
    const std::size_t n_in = wt.dim(1), n_out = wt.dim(0);
    const std::size_t rows = in.size() / n_in;
    if (has_bias) require(tape.value(b).rank() == 1 && tape.value(b).dim(0) == n_out, "linear: bias must be [out]");

    std::vector<std::size_t> shape = in.shape;
    shape.back() = n_out;
    Tensor out(shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = in.data.data() + r * n_in;
        double* yr = out.data.data() + r * n_out;
        for (std::size_t o = 0; o < n_out; ++o) {
            const double* wr = wt.data.data() + o * n_in;
            double acc = has_bias ? tape.value(b)[o] : 0.0;
            for (std::size_t i = 0; i < n_in; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }
    return tape.push(std::move(out), [x, w, b, has_bias, rows, n_in, n_out](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& in = t.value(x);
        const Tensor& wt = t.value(w);
        Tensor& gx = t.grad(x);
        Tensor& gw = t.grad(w);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data.data() + r * n_out;
            const double* xr = in.data.data() + r * n_in;
            double* gxr = gx.data.data() + r * n_in;
            for (std::size_t o = 0; o < n_out; ++o) {
                const double go = gr[o];
                if (go == 0.0) continue;
                const double* wr = wt.data.data() + o * n_in;
                double* gwr = gw.data.data() + o * n_in;
                for (std::size_t i = 0; i < n_in; ++i) {
                    gxr[i] += go * wr[i];
                    gwr[i] += go * xr[i];
                }
            }
        }
        if (has_bias) {
            Tensor& gb = t.grad(b);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < n_out; ++o) gb[o] += g.data[r * n_out + o];
        }
    }, "linear");
}

Var attend(Tape& tape, Var q, Var keys, Var values, std::size_t heads) {
    const Tensor& qv = tape.value(q);
    const Tensor& K = tape.value(keys);
    const Tensor& V = tape.value(values);
    require(K.rank() == 3 && same_shape(K, V), "attend: keys and values must share shape [n, T, E]");
    require(qv.rank() == 1 && qv.dim(0) == K.dim(2), "attend: query must be [E]");
    const std::size_t n = K.dim(0), T = K.dim(1), E = K.dim(2);
    require(heads >= 1 && E % heads == 0, "attend: heads must divide the embedding width");
    require(T >= 1, "attend: empty sequence");
    const std::size_t dk = E / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));

    Tensor weights({n, heads, T});
    Tensor out({n, E});
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* a = weights.data.data() + (s * heads + h) * T;
            double mx = -INFINITY;
            for (std::size_t t = 0; t < T; ++t) {
                const double* k = K.data.data() + (s * T + t) * E + h * dk;
                double acc = 0.0;
                for (std::size_t j = 0; j < dk; ++j) acc += qv[h * dk + j] * k[j];
                a[t] = acc * inv;
                mx = std::max(mx, a[t]);
            }
            double z = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                a[t] = std::exp(a[t] - mx);
                z += a[t];
            }
            for (std::size_t t = 0; t < T; ++t) a[t] /= z;
            double* o = out.data.data() + s * E + h * dk;
            for (std::size_t t = 0; t < T; ++t) {
                const double* v = V.data.data() + (s * T + t) * E + h * dk;
                for (std::size_t j = 0; j < dk; ++j) o[j] += a[t] * v[j];
            }
        }
    }
    return tape.push(std::move(out), [q, keys, values, heads, n, T, E, dk, inv,
                                      weights = std::move(weights)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& qv = t.value(q);
        const Tensor& K = t.value(keys);
        const Tensor& V = t.value(values);
        Tensor& gq = t.grad(q);
        Tensor& gK = t.grad(keys);
        Tensor& gV = t.grad(values);
        std::vector<double> da(T);
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t h = 0; h < heads; ++h) {
                const double* a = weights.data.data() + (s * heads + h) * T;
                const double* go = g.data.data() + s * E + h * dk;
                double dot = 0.0;
                for (std::size_t tt = 0; tt < T; ++tt) {
                    const double* v = V.data.data() + (s * T + tt) * E + h * dk;
                    double* gv = gV.data.data() + (s * T + tt) * E + h * dk;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < dk; ++j) {
                        acc += go[j] * v[j];
                        gv[j] += a[tt] * go[j];
                    }
                    da[tt] = acc;
                    dot += a[tt] * acc;
                }
                for (std::size_t tt = 0; tt < T; ++tt) {
                    const double ds = a[tt] * (da[tt] - dot) * inv;
                    const double* k = K.data.data() + (s * T + tt) * E + h * dk;
                    double* gk = gK.data.data() + (s * T + tt) * E + h * dk;
                    for (std::size_t j = 0; j < dk; ++j) {
                        gq[h * dk + j] += ds * k[j];
                        gk[j] += ds * qv[h * dk + j];
                    }
                }
            }
        }
    }, "attend");
}

Var cross_entropy(Tape& tape, Var z, std::span<const int> labels) {
    const Tensor& logits = tape.value(z);
    require(logits.rank() == 2, "cross_entropy: logits must be [n, C]");
    const std::size_t n = logits.dim(0), C = logits.dim(1);
    require(labels.size() == n, "cross_entropy: label count does not match batch");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw LabelError("label " + std::to_string(y) + " outside 0.." + std::to_string(C - 1));
    std::vector<int> y(labels.begin(), labels.end());
    Tensor out({1}, {uatr::cross_entropy(logits, labels)});
    return tape.push(std::move(out), [z, y = std::move(y), n, C](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const Tensor p = softmax_rows(t.value(z));
        Tensor& gz = t.grad(z);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < C; ++c)
                gz[i * C + c] += g * (p[i * C + c] - (static_cast<int>(c) == y[i] ? 1.0 : 0.0)) / n;
    }, "cross_entropy");
}

Var kl_divergence(Tape& tape, Var z, Var z_other) {
    const Tensor& a = tape.value(z);
    const Tensor& b = tape.value(z_other);
    require(a.rank() == 2 && same_shape(a, b), "kl_divergence: logits must share shape [n, C]");
    Tensor out({1}, {kl_term(a, b)});
    return tape.push(std::move(out), [z, z_other](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const Tensor p = softmax_rows(t.value(z));
        const Tensor q = softmax_rows(t.value(z_other));
        const std::size_t n = p.dim(0), C = p.dim(1);
        Tensor& gz = t.grad(z);
        Tensor& go = t.grad(z_other);
        for (std::size_t i = 0; i < n; ++i) {
            const double* pi = p.data.data() + i * C;
            const double* qi = q.data.data() + i * C;
            double pr = 0.0, p_live = 0.0, p_on_q_live = 0.0;
            std::vector<double> r(C);
            for (std::size_t c = 0; c < C; ++c) {
                r[c] = std::log(std::max(pi[c], kProbFloor)) - std::log(std::max(qi[c], kProbFloor));
                pr += pi[c] * r[c];
                if (pi[c] >= kProbFloor) p_live += pi[c];
                if (qi[c] >= kProbFloor) p_on_q_live += pi[c];
            }
            for (std::size_t c = 0; c < C; ++c) {
                const double live_p = pi[c] >= kProbFloor ? pi[c] : 0.0;
                const double live_q = qi[c] >= kProbFloor ? pi[c] : 0.0;
                gz[i * C + c] += g * (pi[c] * (r[c] - pr) + live_p - pi[c] * p_live) / n;
                go[i * C + c] += g * (qi[c] * p_on_q_live - live_q) / n;
            }
        }
    }, "kl_divergence");
}

Var concat_rows(Tape& tape, Var a, Var b) {
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(b);
    require(x.rank() >= 1 && x.rank() == y.rank() &&
                std::equal(x.shape.begin() + 1, x.shape.end(), y.shape.begin() + 1),
            "concat_rows: trailing shapes differ");
    std::vector<std::size_t> shape = x.shape;
    shape[0] += y.dim(0);
    Tensor out(shape);
    std::copy(x.data.begin(), x.data.end(), out.data.begin());
    std::copy(y.data.begin(), y.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(x.size()));
    const std::size_t split = x.size();
    return tape.push(std::move(out), [a, b, split](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad(a);
        Tensor& gb = t.grad(b);
        for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
        for (std::size_t i = split; i < g.size(); ++i) gb[i - split] += g[i];
    }, "concat_rows");
}

}  // namespace ops
}  // namespace uatr
