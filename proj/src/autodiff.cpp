#include "reghnt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace reghnt::ad {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) { return record(std::move(value), nullptr); }

Var Tape::param(const Parameter& p) {
    auto it = param_cache_.find(&p);
    if (it != param_cache_.end()) return Var{this, it->second};
    Var v = record(p.value, nullptr);
    nodes_[v.id].param = &p;
    param_cache_.emplace(&p, v.id);
    return v;
}

Var Tape::gather_param_rows(const Parameter& p, const std::vector<int>& rows) {
    const Tensor& table = p.value;
    Tensor out(rows.size(), table.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = table.row_ptr(static_cast<std::size_t>(rows[i]));
        std::copy(src, src + table.cols, out.row_ptr(i));
    }
    std::size_t index = p.index;
    return record(std::move(out), [rows, index](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor& dst = t.sink().grads[index];
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double* d = dst.row_ptr(static_cast<std::size_t>(rows[i]));
            const double* s = g.row_ptr(i);
            for (std::size_t c = 0; c < g.cols; ++c) d[c] += s[c];
        }
    });
}

Var Tape::record(Tensor value, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var loss, Gradients& sink) {
    if (loss.tape != this) throw std::invalid_argument("loss belongs to another tape");
    if (nodes_[loss.id].value.size() != 1) throw std::invalid_argument("backward needs a scalar loss");
    sink_ = &sink;
    for (int i = 0; i <= loss.id; ++i) {
        auto& n = nodes_[i];
        n.grad = Tensor(n.value.rows, n.value.cols);
    }
    nodes_[loss.id].grad.data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        auto& n = nodes_[i];
        if (n.backward) {
            n.backward(*this, i);
        } else if (n.param != nullptr) {
            auto& dst = sink.grads[n.param->index].data;
            const auto& g = n.grad.data;
            for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
        }
    }
    sink_ = nullptr;
}

namespace {

Tape& tape_of(Var a) {
    if (!a.valid()) throw std::invalid_argument("operation on an empty Var");
    return *a.tape;
}

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw std::invalid_argument("operands on different tapes");
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows) + "x" +
                                std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
}

enum class Bcast { Same, Row, Scalar };

Bcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return Bcast::Same;
    if (b.rows == 1 && b.cols == 1) return Bcast::Scalar;
    if (b.rows == 1 && b.cols == a.cols) return Bcast::Row;
    shape_error(op, a, b);
}

inline double b_at(const Tensor& b, Bcast k, std::size_t r, std::size_t c) {
    switch (k) {
    case Bcast::Same: return b(r, c);
    case Bcast::Row: return b.data[c];
    default: return b.data[0];
    }
}

inline void b_acc(Tensor& gb, Bcast k, std::size_t r, std::size_t c, double v) {
    switch (k) {
    case Bcast::Same: gb(r, c) += v; break;
    case Bcast::Row: gb.data[c] += v; break;
    default: gb.data[0] += v; break;
    }
}

// C += A * B with optional transposes; shapes are post-transpose.
void gemm_acc(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c) {
    std::size_t m = c.rows, n = c.cols;
    std::size_t k = ta ? a.rows : a.cols;
    if (!ta && !tb) {
        for (std::size_t i = 0; i < m; ++i) {
            double* ci = c.row_ptr(i);
            const double* ai = a.row_ptr(i);
            for (std::size_t p = 0; p < k; ++p) {
                double av = ai[p];
                if (av == 0.0) continue;
                const double* bp = b.row_ptr(p);
                for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    } else if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i) {
            double* ci = c.row_ptr(i);
            const double* ai = a.row_ptr(i);
            for (std::size_t j = 0; j < n; ++j) {
                const double* bj = b.row_ptr(j);
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
                ci[j] += s;
            }
        }
    } else if (ta && !tb) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* ap = a.row_ptr(p);
            const double* bp = b.row_ptr(p);
            for (std::size_t i = 0; i < m; ++i) {
                double av = ap[i];
                if (av == 0.0) continue;
                double* ci = c.row_ptr(i);
                for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += a(p, i) * b(j, p);
                c(i, j) += s;
            }
        }
    }
}

template <typename F, typename D>
Var unary(Var a, F f, D dfdx) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    Tensor out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
    int ai = a.id;
    return t.record(std::move(out), [ai, dfdx](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& x = tp.value(ai);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * dfdx(x.data[i], y.data[i]);
    });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.cols != y.rows) shape_error("matmul", x, y);
    Tensor out(x.rows, y.cols);
    gemm_acc(x, false, y, false, out);
    int ai = a.id, bi = b.id;
    return t.record(std::move(out), [ai, bi](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        gemm_acc(g, false, tp.value(bi), true, tp.grad(ai));
        gemm_acc(tp.value(ai), true, g, false, tp.grad(bi));
    });
}

Var add(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Bcast k = broadcast_kind("add", x, y);
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) out(r, c) += b_at(y, k, r, c);
    int ai = a.id, bi = b.id;
    return t.record(std::move(out), [ai, bi, k](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
        Tensor& gb = tp.grad(bi);
        for (std::size_t r = 0; r < g.rows; ++r)
            for (std::size_t c = 0; c < g.cols; ++c) b_acc(gb, k, r, c, g(r, c));
    });
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Bcast k = broadcast_kind("sub", x, y);
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) out(r, c) -= b_at(y, k, r, c);
    int ai = a.id, bi = b.id;
    return t.record(std::move(out), [ai, bi, k](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
        Tensor& gb = tp.grad(bi);
        for (std::size_t r = 0; r < g.rows; ++r)
            for (std::size_t c = 0; c < g.cols; ++c) b_acc(gb, k, r, c, -g(r, c));
    });
}

Var mul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Bcast k = broadcast_kind("mul", x, y);
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) out(r, c) *= b_at(y, k, r, c);
    int ai = a.id, bi = b.id;
    return t.record(std::move(out), [ai, bi, k](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& x = tp.value(ai);
        const Tensor& y = tp.value(bi);
        Tensor& ga = tp.grad(ai);
        Tensor& gb = tp.grad(bi);
        for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < g.cols; ++c) {
                ga(r, c) += g(r, c) * b_at(y, k, r, c);
                b_acc(gb, k, r, c, g(r, c) * x(r, c));
            }
        }
    });
}

Var scale(Var a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var one_minus(Var a) {
    return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var tanh(Var a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var gelu(Var a) {
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x, double) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

Var log(Var a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softmax_rows(Var a) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    Tensor out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xi = x.row_ptr(r);
        double* yi = out.row_ptr(r);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < x.cols; ++c) m = std::max(m, xi[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < x.cols; ++c) {
            yi[c] = std::exp(xi[c] - m);
            z += yi[c];
        }
        for (std::size_t c = 0; c < x.cols; ++c) yi[c] /= z;
    }
    int ai = a.id;
    return t.record(std::move(out), [ai](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad(ai);
        for (std::size_t r = 0; r < g.rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < g.cols; ++c) dot += g(r, c) * y(r, c);
            for (std::size_t c = 0; c < g.cols; ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
        }
    });
}

Var transpose(Var a) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    Tensor out(x.cols, x.rows);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) out(c, r) = x(r, c);
    int ai = a.id;
    return t.record(std::move(out), [ai](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ai);
        for (std::size_t r = 0; r < g.rows; ++r)
            for (std::size_t c = 0; c < g.cols; ++c) ga(c, r) += g(r, c);
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    Tape& t = tape_of(parts[0]);
    std::size_t rows = parts[0].rows(), cols = 0;
    std::vector<int> ids;
    std::vector<std::size_t> offsets;
    for (Var p : parts) {
        check_same_tape(parts[0], p);
        if (p.rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
        ids.push_back(p.id);
        offsets.push_back(cols);
        cols += p.cols();
    }
    Tensor out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& x = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r) std::copy(x.row_ptr(r), x.row_ptr(r) + x.cols, out.row_ptr(r) + offsets[k]);
    }
    return t.record(std::move(out), [ids, offsets](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            Tensor& gk = tp.grad(ids[k]);
            for (std::size_t r = 0; r < gk.rows; ++r) {
                const double* src = g.row_ptr(r) + offsets[k];
                double* dst = gk.row_ptr(r);
                for (std::size_t c = 0; c < gk.cols; ++c) dst[c] += src[c];
            }
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    Tape& t = tape_of(parts[0]);
    std::size_t cols = parts[0].cols(), rows = 0;
    std::vector<int> ids;
    std::vector<std::size_t> offsets;
    for (Var p : parts) {
        check_same_tape(parts[0], p);
        if (p.cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
        ids.push_back(p.id);
        offsets.push_back(rows);
        rows += p.rows();
    }
    Tensor out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& x = parts[k].value();
        std::copy(x.data.begin(), x.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offsets[k] * cols));
    }
    return t.record(std::move(out), [ids, offsets](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            Tensor& gk = tp.grad(ids[k]);
            const double* src = g.data.data() + offsets[k] * g.cols;
            for (std::size_t i = 0; i < gk.size(); ++i) gk.data[i] += src[i];
        }
    });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    if (start + count > x.rows) throw std::out_of_range("slice_rows out of range");
    Tensor out(count, x.cols);
    std::copy(x.row_ptr(start), x.row_ptr(start) + count * x.cols, out.data.begin());
    int ai = a.id;
    return t.record(std::move(out), [ai, start](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        double* dst = tp.grad(ai).row_ptr(start);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g.data[i];
    });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    if (start + count > x.cols) throw std::out_of_range("slice_cols out of range");
    Tensor out(x.rows, count);
    for (std::size_t r = 0; r < x.rows; ++r) std::copy(x.row_ptr(r) + start, x.row_ptr(r) + start + count, out.row_ptr(r));
    int ai = a.id;
    return t.record(std::move(out), [ai, start](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ai);
        for (std::size_t r = 0; r < g.rows; ++r)
            for (std::size_t c = 0; c < g.cols; ++c) ga(r, start + c) += g(r, c);
    });
}

Var gather_rows(Var a, const std::vector<int>& rows) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    Tensor out(rows.size(), x.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= x.rows) throw std::out_of_range("gather_rows index");
        std::copy(x.row_ptr(rows[i]), x.row_ptr(rows[i]) + x.cols, out.row_ptr(i));
    }
    int ai = a.id;
    return t.record(std::move(out), [ai, rows](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ai);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double* dst = ga.row_ptr(rows[i]);
            const double* src = g.row_ptr(i);
            for (std::size_t c = 0; c < g.cols; ++c) dst[c] += src[c];
        }
    });
}

Var segment_sum(Var a, const std::vector<int>& segment, std::size_t n) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    if (segment.size() != x.rows) throw std::invalid_argument("segment_sum: segment length");
    Tensor out(n, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double* dst = out.row_ptr(segment[i]);
        const double* src = x.row_ptr(i);
        for (std::size_t c = 0; c < x.cols; ++c) dst[c] += src[c];
    }
    int ai = a.id;
    return t.record(std::move(out), [ai, segment](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ai);
        for (std::size_t i = 0; i < segment.size(); ++i) {
            const double* src = g.row_ptr(segment[i]);
            double* dst = ga.row_ptr(i);
            for (std::size_t c = 0; c < g.cols; ++c) dst[c] += src[c];
        }
    });
}

Var segment_softmax(Var a, const std::vector<int>& segment, std::size_t n) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    if (segment.size() != x.rows) throw std::invalid_argument("segment_softmax: segment length");
    std::size_t cols = x.cols;
    Tensor mx(n, cols, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t c = 0; c < cols; ++c) mx(segment[i], c) = std::max(mx(segment[i], c), x(i, c));
    Tensor out(x.rows, cols);
    Tensor z(n, cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t c = 0; c < cols; ++c) {
            out(i, c) = std::exp(x(i, c) - mx(segment[i], c));
            z(segment[i], c) += out(i, c);
        }
    }
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t c = 0; c < cols; ++c) out(i, c) /= z(segment[i], c);
    int ai = a.id;
    return t.record(std::move(out), [ai, segment, n](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad(ai);
        Tensor dot(n, g.cols);
        for (std::size_t i = 0; i < segment.size(); ++i)
            for (std::size_t c = 0; c < g.cols; ++c) dot(segment[i], c) += g(i, c) * y(i, c);
        for (std::size_t i = 0; i < segment.size(); ++i)
            for (std::size_t c = 0; c < g.cols; ++c) ga(i, c) += y(i, c) * (g(i, c) - dot(segment[i], c));
    });
}

Var headwise_dot(Var a, Var b, std::size_t heads) {
    check_same_tape(a, b);
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (!x.same_shape(y)) shape_error("headwise_dot", x, y);
    if (heads == 0 || x.cols % heads != 0) throw std::invalid_argument("headwise_dot: width not divisible by heads");
    std::size_t dh = x.cols / heads;
    Tensor out(x.rows, heads);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t h = 0; h < heads; ++h) {
            double s = 0.0;
            for (std::size_t k = h * dh; k < (h + 1) * dh; ++k) s += x(r, k) * y(r, k);
            out(r, h) = s;
        }
    int ai = a.id, bi = b.id;
    return t.record(std::move(out), [ai, bi, dh](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& x = tp.value(ai);
        const Tensor& y = tp.value(bi);
        Tensor& gx = tp.grad(ai);
        Tensor& gy = tp.grad(bi);
        for (std::size_t r = 0; r < x.rows; ++r)
            for (std::size_t k = 0; k < x.cols; ++k) {
                double gh = g(r, k / dh);
                gx(r, k) += gh * y(r, k);
                gy(r, k) += gh * x(r, k);
            }
    });
}

Var headwise_scale(Var alpha, Var v) {
    check_same_tape(alpha, v);
    Tape& t = tape_of(alpha);
    const Tensor& al = alpha.value();
    const Tensor& x = v.value();
    if (al.rows != x.rows || al.cols == 0 || x.cols % al.cols != 0) shape_error("headwise_scale", al, x);
    std::size_t dh = x.cols / al.cols;
    Tensor out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t k = 0; k < x.cols; ++k) out(r, k) = al(r, k / dh) * x(r, k);
    int ai = alpha.id, vi = v.id;
    return t.record(std::move(out), [ai, vi, dh](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& al = tp.value(ai);
        const Tensor& x = tp.value(vi);
        Tensor& gal = tp.grad(ai);
        Tensor& gx = tp.grad(vi);
        for (std::size_t r = 0; r < x.rows; ++r)
            for (std::size_t k = 0; k < x.cols; ++k) {
                gal(r, k / dh) += g(r, k) * x(r, k);
                gx(r, k) += g(r, k) * al(r, k / dh);
            }
    });
}

Var tile_cols(Var a, std::size_t times) {
    std::vector<Var> parts(times, a);
    return concat_cols(parts);
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
    check_same_tape(a, gamma);
    check_same_tape(a, beta);
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const Tensor& ga = gamma.value();
    const Tensor& be = beta.value();
    if (ga.rows != 1 || ga.cols != x.cols) shape_error("layer_norm gamma", x, ga);
    if (be.rows != 1 || be.cols != x.cols) shape_error("layer_norm beta", x, be);
    std::size_t n = x.cols;
    Tensor xhat(x.rows, n);
    std::vector<double> inv_std(x.rows);
    Tensor out(x.rows, n);
    for (std::size_t r = 0; r < x.rows; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) mean += x(r, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            xhat(r, c) = (x(r, c) - mean) * inv_std[r];
            out(r, c) = xhat(r, c) * ga.data[c] + be.data[c];
        }
    }
    int ai = a.id, gi = gamma.id, bi = beta.id;
    return t.record(std::move(out), [ai, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& gam = tp.value(gi);
        Tensor& gx = tp.grad(ai);
        Tensor& ggam = tp.grad(gi);
        Tensor& gbeta = tp.grad(bi);
        std::size_t n = g.cols;
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < g.rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                ggam.data[c] += g(r, c) * xhat(r, c);
                gbeta.data[c] += g(r, c);
                dxhat[c] = g(r, c) * gam.data[c];
                s1 += dxhat[c];
                s2 += dxhat[c] * xhat(r, c);
            }
            double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t c = 0; c < n; ++c)
                gx(r, c) += inv_std[r] * (dxhat[c] - inv_n * s1 - xhat(r, c) * inv_n * s2);
        }
    });
}

Var mean_rows(Var a) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    if (x.rows == 0) throw std::invalid_argument("mean_rows of an empty tensor");
    Tensor out(1, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) out.data[c] += x(r, c);
    double inv = 1.0 / static_cast<double>(x.rows);
    for (double& v : out.data) v *= inv;
    int ai = a.id;
    return t.record(std::move(out), [ai, inv](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ai);
        for (std::size_t r = 0; r < ga.rows; ++r)
            for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += g.data[c] * inv;
    });
}

Var sum(Var a) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    double s = 0.0;
    for (double v : x.data) s += v;
    int ai = a.id;
    return t.record(Tensor(1, 1, s), [ai](Tape& tp, int self) {
        double g = tp.grad(self).data[0];
        for (double& v : tp.grad(ai).data) v += g;
    });
}

Var pick(Var a, std::size_t r, std::size_t c) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    if (r >= x.rows || c >= x.cols) throw std::out_of_range("pick out of range");
    int ai = a.id;
    return t.record(Tensor(1, 1, x(r, c)), [ai, r, c](Tape& tp, int self) { tp.grad(ai)(r, c) += tp.grad(self).data[0]; });
}

Var dropout(Var a, double p) {
    Tape& t = tape_of(a);
    if (!t.training || p <= 0.0) return a;
    const Tensor& x = a.value();
    std::bernoulli_distribution keep(1.0 - p);
    double s = 1.0 / (1.0 - p);
    Tensor mask(x.rows, x.cols);
    for (double& m : mask.data) m = keep(t.rng) ? s : 0.0;
    Var m = t.constant(std::move(mask));
    return mul(a, m);
}

}  // namespace reghnt::ad
