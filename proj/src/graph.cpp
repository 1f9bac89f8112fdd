// SPDX-License-Identifier: Apache-2.0
#include "alum/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "alum/error.hpp"

namespace alum {

namespace {

using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const MatR>;
using MapM = Eigen::Map<MatR>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw Error(ErrorKind::shape_mismatch,
                std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& what) {
    throw Error(ErrorKind::shape_mismatch, std::string(op) + ": shape " + shape_str(a) + " " + what);
}

void same_graph(const Var& a, const Var& b, const char* op) {
    if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
        throw Error(ErrorKind::invalid_input, std::string(op) + ": operands belong to different graphs");
    }
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

} // namespace

// --- Var / Graph -------------------------------------------------------------

const Tensor& Var::value() const { return graph_->value_of(id_); }
bool Var::requires_grad() const { return graph_->requires_grad_of(id_); }

Var Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    for (const auto& in : inputs) {
        if (in.graph_ != this) {
            throw Error(ErrorKind::invalid_input, "graph: operand recorded on a different graph");
        }
        n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
    }
    if (n.requires_grad) {
        n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Graph::grad_slot(const Var& v) {
    Node& n = nodes_[v.id_];
    if (!n.has_grad) {
        n.grad = Tensor::zeros(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

Tensor Graph::grad(const Var& v) const {
    const Node& n = nodes_[v.id_];
    return n.has_grad ? n.grad : Tensor::zeros(n.value.shape());
}

void Graph::zero_grad() {
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
}

void Graph::backward(const Var& loss) {
    if (loss.graph_ != this) {
        throw Error(ErrorKind::invalid_input, "backward: loss belongs to a different graph");
    }
    if (loss.value().numel() != 1) {
        throw Error(ErrorKind::shape_mismatch, "backward: loss must be scalar, got shape " +
                                                   shape_str(loss.value().shape()));
    }
    ++backward_calls_;
    for (auto& n : nodes_) {
        if (!n.is_leaf) {
            n.has_grad = false;
            n.grad = Tensor();
        }
    }
    if (!nodes_[loss.id_].requires_grad) {
        return;
    }
    grad_slot(loss)[0] += Real{1};
    for (std::int64_t i = loss.id_; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.has_grad && n.backward) {
            n.backward(*this, n.grad);
        }
    }
}

// --- elementwise -------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    same_graph(a, b, "add");
    if (a.shape() != b.shape()) {
        shape_error("add", a.shape(), b.shape());
    }
    Tensor out = a.value();
    auto o = out.span();
    auto bv = b.value().span();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] += bv[i];
    }
    return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
        for (const Var* v : {&a, &b}) {
            if (v->requires_grad()) {
                auto gs = g.grad_slot(*v).span();
                for (std::size_t i = 0; i < gs.size(); ++i) {
                    gs[i] += go[i];
                }
            }
        }
    });
}

Var sub(const Var& a, const Var& b) {
    same_graph(a, b, "sub");
    if (a.shape() != b.shape()) {
        shape_error("sub", a.shape(), b.shape());
    }
    Tensor out = a.value();
    auto o = out.span();
    auto bv = b.value().span();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] -= bv[i];
    }
    return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
        if (a.requires_grad()) {
            auto gs = g.grad_slot(a).span();
            for (std::size_t i = 0; i < gs.size(); ++i) {
                gs[i] += go[i];
            }
        }
        if (b.requires_grad()) {
            auto gs = g.grad_slot(b).span();
            for (std::size_t i = 0; i < gs.size(); ++i) {
                gs[i] -= go[i];
            }
        }
    });
}

Var mul(const Var& a, const Var& b) {
    same_graph(a, b, "mul");
    if (a.shape() != b.shape()) {
        shape_error("mul", a.shape(), b.shape());
    }
    Tensor out = a.value();
    auto o = out.span();
    auto bv = b.value().span();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] *= bv[i];
    }
    return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
        if (a.requires_grad()) {
            auto gs = g.grad_slot(a).span();
            auto bv = b.value().span();
            for (std::size_t i = 0; i < gs.size(); ++i) {
                gs[i] += go[i] * bv[i];
            }
        }
        if (b.requires_grad()) {
            auto gs = g.grad_slot(b).span();
            auto av = a.value().span();
            for (std::size_t i = 0; i < gs.size(); ++i) {
                gs[i] += go[i] * av[i];
            }
        }
    });
}

Var scale(const Var& a, Real factor) {
    Tensor out = a.value();
    for (auto& v : out.values()) {
        v *= factor;
    }
    return a.graph().record(std::move(out), {a}, [a, factor](Graph& g, const Tensor& go) {
        auto gs = g.grad_slot(a).span();
        for (std::size_t i = 0; i < gs.size(); ++i) {
            gs[i] += go[i] * factor;
        }
    });
}

Var square(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.values()) {
        v *= v;
    }
    return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
        auto gs = g.grad_slot(a).span();
        auto av = a.value().span();
        for (std::size_t i = 0; i < gs.size(); ++i) {
            gs[i] += Real{2} * av[i] * go[i];
        }
    });
}

Var add_bias(const Var& a, const Var& bias) {
    same_graph(a, bias, "add_bias");
    const std::size_t n = last_dim(a.shape());
    if (bias.shape().size() != 1 || bias.shape()[0] != n) {
        shape_error("add_bias", a.shape(), bias.shape());
    }
    Tensor out = a.value();
    auto o = out.span();
    auto bv = bias.value().span();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] += bv[i % n];
    }
    return a.graph().record(std::move(out), {a, bias}, [a, bias, n](Graph& g, const Tensor& go) {
        if (a.requires_grad()) {
            auto gs = g.grad_slot(a).span();
            for (std::size_t i = 0; i < gs.size(); ++i) {
                gs[i] += go[i];
            }
        }
        if (bias.requires_grad()) {
            auto gs = g.grad_slot(bias).span();
            for (std::size_t i = 0; i < go.numel(); ++i) {
                gs[i % n] += go[i];
            }
        }
    });
}

// --- products ----------------------------------------------------------------

Var matmul(const Var& a, const Var& w) {
    same_graph(a, w, "matmul");
    const auto& as = a.shape();
    const auto& ws = w.shape();
    if (as.empty() || ws.size() != 2 || as.back() != ws[0]) {
        shape_error("matmul", as, ws);
    }
    const auto k = static_cast<Eigen::Index>(ws[0]);
    const auto n = static_cast<Eigen::Index>(ws[1]);
    const auto rows = static_cast<Eigen::Index>(a.value().numel() / ws[0]);
    Shape os = as;
    os.back() = ws[1];
    Tensor out(os);
    MapM(out.data(), rows, n).noalias() = MapC(a.value().data(), rows, k) * MapC(w.value().data(), k, n);
    return a.graph().record(std::move(out), {a, w}, [a, w, rows, k, n](Graph& g, const Tensor& go) {
        MapC dy(go.data(), rows, n);
        if (a.requires_grad()) {
            MapM(g.grad_slot(a).data(), rows, k).noalias() += dy * MapC(w.value().data(), k, n).transpose();
        }
        if (w.requires_grad()) {
            MapM(g.grad_slot(w).data(), k, n).noalias() += MapC(a.value().data(), rows, k).transpose() * dy;
        }
    });
}

Var bmm(const Var& a, const Var& b, bool transpose_b) {
    same_graph(a, b, "bmm");
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0]) {
        shape_error("bmm", as, bs);
    }
    const std::size_t batch = as[0];
    const auto m = static_cast<Eigen::Index>(as[1]);
    const auto k = static_cast<Eigen::Index>(as[2]);
    const auto bk = static_cast<Eigen::Index>(transpose_b ? bs[2] : bs[1]);
    const auto n = static_cast<Eigen::Index>(transpose_b ? bs[1] : bs[2]);
    if (bk != k) {
        shape_error("bmm", as, bs);
    }
    Tensor out({batch, as[1], static_cast<std::size_t>(n)});
    const auto a_stride = static_cast<std::size_t>(m * k);
    const auto b_stride = static_cast<std::size_t>(k * n);
    const auto o_stride = static_cast<std::size_t>(m * n);
    for (std::size_t i = 0; i < batch; ++i) {
        MapC A(a.value().data() + i * a_stride, m, k);
        MapM Y(out.data() + i * o_stride, m, n);
        if (transpose_b) {
            Y.noalias() = A * MapC(b.value().data() + i * b_stride, n, k).transpose();
        } else {
            Y.noalias() = A * MapC(b.value().data() + i * b_stride, k, n);
        }
    }
    return a.graph().record(
        std::move(out), {a, b},
        [a, b, transpose_b, batch, m, k, n, a_stride, b_stride, o_stride](Graph& g, const Tensor& go) {
            Real* ga = a.requires_grad() ? g.grad_slot(a).data() : nullptr;
            Real* gb = b.requires_grad() ? g.grad_slot(b).data() : nullptr;
            for (std::size_t i = 0; i < batch; ++i) {
                MapC dy(go.data() + i * o_stride, m, n);
                MapC A(a.value().data() + i * a_stride, m, k);
                if (transpose_b) {
                    MapC B(b.value().data() + i * b_stride, n, k);
                    if (ga) {
                        MapM(ga + i * a_stride, m, k).noalias() += dy * B;
                    }
                    if (gb) {
                        MapM(gb + i * b_stride, n, k).noalias() += dy.transpose() * A;
                    }
                } else {
                    MapC B(b.value().data() + i * b_stride, k, n);
                    if (ga) {
                        MapM(ga + i * a_stride, m, k).noalias() += dy * B.transpose();
                    }
                    if (gb) {
                        MapM(gb + i * b_stride, k, n).noalias() += A.transpose() * dy;
                    }
                }
            }
        });
}

// --- layout ------------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
    if (shape_numel(shape) != a.value().numel()) {
        shape_error("reshape", a.shape(), shape);
    }
    Tensor out = a.value().reshaped(std::move(shape));
    return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
        auto gs = g.grad_slot(a).span();
        for (std::size_t i = 0; i < gs.size(); ++i) {
            gs[i] += go[i];
        }
    });
}

Var swap_axes12(const Var& a) {
    const auto& s = a.shape();
    if (s.size() != 4) {
        shape_error("swap_axes12", s, "is not rank 4");
    }
    const std::size_t A = s[0], B = s[1], C = s[2], D = s[3];
    Tensor out({A, C, B, D});
    const Real* src = a.value().data();
    Real* dst = out.data();
    for (std::size_t i = 0; i < A; ++i) {
        for (std::size_t j = 0; j < B; ++j) {
            for (std::size_t c = 0; c < C; ++c) {
                std::copy_n(src + ((i * B + j) * C + c) * D, D, dst + ((i * C + c) * B + j) * D);
            }
        }
    }
    return a.graph().record(std::move(out), {a}, [a, A, B, C, D](Graph& g, const Tensor& go) {
        Real* gs = g.grad_slot(a).data();
        const Real* gd = go.data();
        for (std::size_t i = 0; i < A; ++i) {
            for (std::size_t j = 0; j < B; ++j) {
                for (std::size_t c = 0; c < C; ++c) {
                    Real* d = gs + ((i * B + j) * C + c) * D;
                    const Real* s = gd + ((i * C + c) * B + j) * D;
                    for (std::size_t e = 0; e < D; ++e) {
                        d[e] += s[e];
                    }
                }
            }
        }
    });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
    const std::size_t d = last_dim(x.shape());
    const std::size_t n = d ? x.value().numel() / d : 0;
    for (auto r : rows) {
        if (r >= n) {
            shape_error("gather_rows", x.shape(), "has no row " + std::to_string(r));
        }
    }
    Tensor out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(x.value().data() + rows[i] * d, d, out.data() + i * d);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return x.graph().record(std::move(out), {x}, [x, d, idx = std::move(idx)](Graph& g, const Tensor& go) {
        Real* gs = g.grad_slot(x).data();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                gs[idx[i] * d + j] += go[i * d + j];
            }
        }
    });
}

Var embedding(const Var& table, std::span<const std::int32_t> ids) {
    const auto& ts = table.shape();
    if (ts.size() != 2) {
        shape_error("embedding", ts, "is not a [rows, dim] table");
    }
    const std::size_t vocab = ts[0], d = ts[1];
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw Error(ErrorKind::invalid_input, "embedding: id " + std::to_string(ids[i]) +
                                                      " out of range for table " + shape_str(ts));
        }
        std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    return table.graph().record(std::move(out), {table}, [table, d, idx = std::move(idx)](Graph& g, const Tensor& go) {
        Real* gs = g.grad_slot(table).data();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Real* row = gs + static_cast<std::size_t>(idx[i]) * d;
            for (std::size_t j = 0; j < d; ++j) {
                row[j] += go[i * d + j];
            }
        }
    });
}

// --- normalizers and activations --------------------------------------------

Var softmax(const Var& a) {
    const std::size_t n = last_dim(a.shape());
    Tensor out = a.value();
    const std::size_t rows = n ? out.numel() / n : 0;
    for (std::size_t r = 0; r < rows; ++r) {
        Real* x = out.data() + r * n;
        const Real mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            x[j] = std::exp(x[j] - mx);
            z += x[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            x[j] = static_cast<Real>(x[j] / z);
        }
    }
    const std::uint32_t self = static_cast<std::uint32_t>(a.graph().size());
    return a.graph().record(std::move(out), {a}, [a, n, rows, self](Graph& g, const Tensor& go) {
        const Tensor& y = g.value_of(self);
        Real* gs = g.grad_slot(a).data();
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* yr = y.data() + r * n;
            const Real* gr = go.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += static_cast<double>(gr[j]) * yr[j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                gs[r * n + j] += yr[j] * (gr[j] - static_cast<Real>(dot));
            }
        }
    });
}

Var log_softmax(const Var& a) {
    const std::size_t n = last_dim(a.shape());
    Tensor out = a.value();
    const std::size_t rows = n ? out.numel() / n : 0;
    for (std::size_t r = 0; r < rows; ++r) {
        Real* x = out.data() + r * n;
        const Real mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            z += std::exp(static_cast<double>(x[j] - mx));
        }
        const double lz = std::log(z) + mx;
        for (std::size_t j = 0; j < n; ++j) {
            x[j] = static_cast<Real>(x[j] - lz);
        }
    }
    const std::uint32_t self = static_cast<std::uint32_t>(a.graph().size());
    return a.graph().record(std::move(out), {a}, [a, n, rows, self](Graph& g, const Tensor& go) {
        const Tensor& y = g.value_of(self);
        Real* gs = g.grad_slot(a).data();
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                s += go[r * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                gs[r * n + j] += go[r * n + j] - static_cast<Real>(std::exp(y[r * n + j]) * s);
            }
        }
    });
}

Var attention_softmax(const Var& scores, std::span<const std::uint8_t> key_mask, std::size_t heads) {
    const auto& s = scores.shape();
    if (s.size() != 3 || s[1] != s[2] || heads == 0 || s[0] % heads != 0 ||
        key_mask.size() != (s[0] / heads) * s[2]) {
        shape_error("attention_softmax", s, "does not match key mask of " + std::to_string(key_mask.size()) +
                                                " entries and " + std::to_string(heads) + " heads");
    }
    const std::size_t bh = s[0], t = s[1];
    Tensor out = scores.value();
    for (std::size_t i = 0; i < bh; ++i) {
        const std::uint8_t* km = key_mask.data() + (i / heads) * t;
        for (std::size_t q = 0; q < t; ++q) {
            Real* x = out.data() + (i * t + q) * t;
            Real mx = -std::numeric_limits<Real>::infinity();
            for (std::size_t j = 0; j < t; ++j) {
                if (km[j]) {
                    mx = std::max(mx, x[j]);
                }
            }
            double z = 0.0;
            for (std::size_t j = 0; j < t; ++j) {
                if (km[j]) {
                    x[j] = std::exp(x[j] - mx);
                    z += x[j];
                } else {
                    x[j] = Real{0};
                }
            }
            for (std::size_t j = 0; j < t && z > 0.0; ++j) {
                x[j] = static_cast<Real>(x[j] / z);
            }
        }
    }
    const std::uint32_t self = static_cast<std::uint32_t>(scores.graph().size());
    return scores.graph().record(std::move(out), {scores}, [scores, bh, t, self](Graph& g, const Tensor& go) {
        const Tensor& y = g.value_of(self);
        Real* gs = g.grad_slot(scores).data();
        for (std::size_t r = 0; r < bh * t; ++r) {
            const Real* yr = y.data() + r * t;
            const Real* gr = go.data() + r * t;
            double dot = 0.0;
            for (std::size_t j = 0; j < t; ++j) {
                dot += static_cast<double>(gr[j]) * yr[j];
            }
            for (std::size_t j = 0; j < t; ++j) {
                gs[r * t + j] += yr[j] * (gr[j] - static_cast<Real>(dot));
            }
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
    same_graph(x, gamma, "layer_norm");
    same_graph(x, beta, "layer_norm");
    const std::size_t d = last_dim(x.shape());
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        shape_error("layer_norm", x.shape(), gamma.shape());
    }
    const std::size_t rows = d ? x.value().numel() / d : 0;
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    std::vector<Real> rstd(rows);
    const Real* gv = gamma.value().data();
    const Real* bv = beta.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* xr = x.value().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mu += xr[j];
        }
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = static_cast<Real>(rs);
        for (std::size_t j = 0; j < d; ++j) {
            const Real h = static_cast<Real>((xr[j] - mu) * rs);
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return x.graph().record(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, const Tensor& go) {
            const Real* gv = gamma.value().data();
            if (gamma.requires_grad() || beta.requires_grad()) {
                Real* gg = gamma.requires_grad() ? g.grad_slot(gamma).data() : nullptr;
                Real* gb = beta.requires_grad() ? g.grad_slot(beta).data() : nullptr;
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                        if (gg) {
                            gg[j] += go[r * d + j] * xhat[r * d + j];
                        }
                        if (gb) {
                            gb[j] += go[r * d + j];
                        }
                    }
                }
            }
            if (x.requires_grad()) {
                Real* gx = g.grad_slot(x).data();
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = static_cast<double>(go[r * d + j]) * gv[j];
                        m1 += dh;
                        m2 += dh * xhat[r * d + j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = static_cast<double>(go[r * d + j]) * gv[j];
                        gx[r * d + j] += static_cast<Real>(rstd[r] * (dh - m1 - xhat[r * d + j] * m2));
                    }
                }
            }
        });
}

constexpr double kInvSqrt2 = 0.5 * std::numbers::sqrt2;

Var gelu(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.values()) {
        v = static_cast<Real>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
    }
    return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
        auto gs = g.grad_slot(a).span();
        auto av = a.value().span();
        constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        for (std::size_t i = 0; i < gs.size(); ++i) {
            const double x = av[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            gs[i] += static_cast<Real>(go[i] * (cdf + x * pdf));
        }
    });
}

Var tanh(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.values()) {
        v = std::tanh(v);
    }
    const std::uint32_t self = static_cast<std::uint32_t>(a.graph().size());
    return a.graph().record(std::move(out), {a}, [a, self](Graph& g, const Tensor& go) {
        const Tensor& y = g.value_of(self);
        auto gs = g.grad_slot(a).span();
        for (std::size_t i = 0; i < gs.size(); ++i) {
            gs[i] += go[i] * (Real{1} - y[i] * y[i]);
        }
    });
}

// --- losses and reductions ---------------------------------------------------

Var cross_entropy(const Var& logits, std::span<const std::int32_t> targets) {
    const auto& s = logits.shape();
    if (s.size() != 2 || s[0] != targets.size() || s[0] == 0) {
        shape_error("cross_entropy", s, "does not match " + std::to_string(targets.size()) + " targets");
    }
    const std::size_t n = s[0], c = s[1];
    Tensor probs(s);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= c) {
            throw Error(ErrorKind::invalid_input, "cross_entropy: target " + std::to_string(targets[r]) +
                                                      " out of range for " + std::to_string(c) + " classes");
        }
        const Real* x = logits.value().data() + r * c;
        const double mx = *std::max_element(x, x + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            z += std::exp(x[j] - mx);
        }
        const double lz = std::log(z) + mx;
        for (std::size_t j = 0; j < c; ++j) {
            probs[r * c + j] = static_cast<Real>(std::exp(x[j] - lz));
        }
        total += lz - x[targets[r]];
    }
    std::vector<std::int32_t> t(targets.begin(), targets.end());
    return logits.graph().record(
        Tensor::scalar(static_cast<Real>(total / static_cast<double>(n))), {logits},
        [logits, n, c, probs = std::move(probs), t = std::move(t)](Graph& g, const Tensor& go) {
            const Real scale_ = go[0] / static_cast<Real>(n);
            Real* gs = g.grad_slot(logits).data();
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < c; ++j) {
                    const Real onehot = static_cast<std::size_t>(t[r]) == j ? Real{1} : Real{0};
                    gs[r * c + j] += scale_ * (probs[r * c + j] - onehot);
                }
            }
        });
}

Var kl_divergence(const Var& p_logits, const Var& q_logits) {
    same_graph(p_logits, q_logits, "kl_divergence");
    const auto& s = p_logits.shape();
    if (s != q_logits.shape() || s.size() != 2 || s[0] == 0) {
        shape_error("kl_divergence", s, q_logits.shape());
    }
    const std::size_t n = s[0], c = s[1];
    // Row-wise log-probabilities in double; kept for the backward pass.
    std::vector<double> logp(n * c), logq(n * c), kl_row(n);
    auto row_log_softmax = [c](const Real* x, double* out) {
        const double mx = *std::max_element(x, x + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            z += std::exp(x[j] - mx);
        }
        const double lz = std::log(z) + mx;
        for (std::size_t j = 0; j < c; ++j) {
            out[j] = x[j] - lz;
        }
    };
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        row_log_softmax(p_logits.value().data() + r * c, logp.data() + r * c);
        row_log_softmax(q_logits.value().data() + r * c, logq.data() + r * c);
        double k = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            k += std::exp(logp[r * c + j]) * (logp[r * c + j] - logq[r * c + j]);
        }
        kl_row[r] = k;
        total += k;
    }
    return p_logits.graph().record(
        Tensor::scalar(static_cast<Real>(total / static_cast<double>(n))), {p_logits, q_logits},
        [p_logits, q_logits, n, c, logp = std::move(logp), logq = std::move(logq),
         kl_row = std::move(kl_row)](Graph& g, const Tensor& go) {
            const double sc = static_cast<double>(go[0]) / static_cast<double>(n);
            Real* gp = p_logits.requires_grad() ? g.grad_slot(p_logits).data() : nullptr;
            Real* gq = q_logits.requires_grad() ? g.grad_slot(q_logits).data() : nullptr;
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < c; ++j) {
                    const std::size_t i = r * c + j;
                    const double p = std::exp(logp[i]);
                    if (gp) {
                        gp[i] += static_cast<Real>(sc * p * ((logp[i] - logq[i]) - kl_row[r]));
                    }
                    if (gq) {
                        gq[i] += static_cast<Real>(sc * (std::exp(logq[i]) - p));
                    }
                }
            }
        });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (auto v : a.value().values()) {
        s += v;
    }
    return a.graph().record(Tensor::scalar(static_cast<Real>(s)), {a}, [a](Graph& g, const Tensor& go) {
        for (auto& v : g.grad_slot(a).values()) {
            v += go[0];
        }
    });
}

Var mean(const Var& a) {
    const std::size_t n = a.value().numel();
    if (n == 0) {
        shape_error("mean", a.shape(), "is empty");
    }
    double s = 0.0;
    for (auto v : a.value().values()) {
        s += v;
    }
    return a.graph().record(Tensor::scalar(static_cast<Real>(s / static_cast<double>(n))), {a},
                            [a, n](Graph& g, const Tensor& go) {
                                const Real d = go[0] / static_cast<Real>(n);
                                for (auto& v : g.grad_slot(a).values()) {
                                    v += d;
                                }
                            });
}

Var detach(const Var& a) { return a.graph().constant(a.value()); }

} // namespace alum
