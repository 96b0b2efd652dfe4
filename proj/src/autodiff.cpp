#include "autodiff.hpp"

#include "errors.hpp"

#include <algorithm>
#include <cmath>

namespace gazediff {

using BackFn = std::function<void(Tape &, const Tensor &)>;

// -------------------------------------------------------------------------
// Tape

Var Tape::leaf(const Tensor & value, Tensor * grad_sink) {
    if (grad_sink != nullptr && grad_sink->shape != value.shape) {
        throw ShapeError("leaf gradient sink shape mismatch");
    }
    Var v;
    v.value_ = std::make_shared<Tensor>(value);
    v.tape_ = this;
    v.node_ = add_node(value, nullptr, grad_sink);
    return v;
}

int Tape::add_node(const Tensor & value, BackFn back, Tensor * sink) {
    Node n;
    n.back = std::move(back);
    n.shape = value.shape;
    n.sink = sink;
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int node, const Tensor & g) {
    Tensor & buf = grads_[static_cast<size_t>(node)];
    if (buf.data.empty()) {
        buf = Tensor::zeros(nodes_[static_cast<size_t>(node)].shape);
    }
    for (size_t i = 0; i < g.data.size(); ++i) {
        buf.data[i] += g.data[i];
    }
}

void Tape::backward(const Var & loss) {
    if (consumed_) {
        throw Error(ErrorKind::Data, "tape already consumed by a previous backward pass");
    }
    if (!loss.defined() || loss.tape_ != this) {
        throw ShapeError("backward: loss is not recorded on this tape");
    }
    if (loss.value().numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + loss.value().shape_str());
    }
    consumed_ = true;
    accumulate(loss.node_, Tensor::full(loss.value().shape, 1.0));
    for (int i = loss.node_; i >= 0; --i) {
        const Tensor & g = grads_[static_cast<size_t>(i)];
        if (g.data.empty()) {
            continue;
        }
        Node & n = nodes_[static_cast<size_t>(i)];
        if (n.back) {
            n.back(*this, g);
        }
        if (n.sink != nullptr) {
            for (size_t k = 0; k < g.data.size(); ++k) {
                n.sink->data[k] += g.data[k];
            }
        }
    }
}

Tensor Tape::grad(const Var & v) const {
    if (!v.on_tape() || v.tape_ != this) {
        throw ShapeError("grad: variable is not recorded on this tape");
    }
    const Tensor & g = grads_[static_cast<size_t>(v.node_)];
    if (g.data.empty()) {
        return Tensor::zeros(nodes_[static_cast<size_t>(v.node_)].shape);
    }
    return g;
}

// -------------------------------------------------------------------------
// op helpers

// Access to Var internals for the ops below.
struct VarAccess {
    static Tape * tape(const Var & v) { return v.tape_; }
    static int node(const Var & v) { return v.node_; }
    static std::shared_ptr<const Tensor> value(const Var & v) { return v.value_; }
    static Var wrap(Tape * tape, Tensor value, BackFn back) {
        Var out;
        out.value_ = std::make_shared<Tensor>(std::move(value));
        if (tape != nullptr) {
            out.tape_ = tape;
            out.node_ = tape->add_node(*out.value_, std::move(back));
        }
        return out;
    }
};

namespace {

Tape * joint_tape(const Var & a, const Var & b) {
    Tape * ta = VarAccess::tape(a);
    Tape * tb = VarAccess::tape(b);
    if (ta != nullptr && tb != nullptr && ta != tb) {
        throw ShapeError("operands recorded on different tapes");
    }
    return ta != nullptr ? ta : tb;
}

Tape * joint_tape(const Var & a, const Var & b, const Var & c) {
    Tape * t = joint_tape(a, b);
    Tape * tc = VarAccess::tape(c);
    if (t != nullptr && tc != nullptr && t != tc) {
        throw ShapeError("operands recorded on different tapes");
    }
    return t != nullptr ? t : tc;
}

void check_defined(const Var & v, const char * op) {
    if (!v.defined()) {
        throw ShapeError(std::string(op) + ": undefined operand");
    }
}

} // namespace

// -------------------------------------------------------------------------
// ops

Var matmul(const Var & a, const Var & b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    Tensor out;
    gemm(a.value(), false, b.value(), false, out);
    Tape * tape = joint_tape(a, b);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    auto av = VarAccess::value(a);
    auto bv = VarAccess::value(b);
    int an = VarAccess::node(a);
    int bn = VarAccess::node(b);
    bool ga = VarAccess::tape(a) != nullptr;
    bool gb = VarAccess::tape(b) != nullptr;
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        if (ga) {
            Tensor da;
            gemm(g, false, *bv, true, da);
            t.accumulate(an, da);
        }
        if (gb) {
            Tensor db;
            gemm(*av, true, g, false, db);
            t.accumulate(bn, db);
        }
    });
}

Var transpose(const Var & a) {
    check_defined(a, "transpose");
    const Tensor & x = a.value();
    Tensor out = Tensor::zeros({x.cols(), x.rows()});
    for (int64_t r = 0; r < x.rows(); ++r) {
        for (int64_t c = 0; c < x.cols(); ++c) {
            out.at(c, r) = x.at(r, c);
        }
    }
    Tape * tape = VarAccess::tape(a);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    int an = VarAccess::node(a);
    std::vector<int64_t> ash = x.shape;
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        Tensor da = Tensor::zeros(ash);
        for (int64_t r = 0; r < g.rows(); ++r) {
            for (int64_t c = 0; c < g.cols(); ++c) {
                da.at(c, r) = g.at(r, c);
            }
        }
        t.accumulate(an, da);
    });
}

Var add(const Var & a, const Var & b) {
    check_defined(a, "add");
    check_defined(b, "add");
    const Tensor & x = a.value();
    const Tensor & y = b.value();
    const bool broadcast = !x.same_shape(y);
    if (broadcast && !(y.rows() == 1 && y.cols() == x.cols())) {
        throw ShapeError("add: shapes " + x.shape_str() + " and " + y.shape_str() +
                         " are not addable");
    }
    Tensor out = x;
    for (int64_t r = 0; r < x.rows(); ++r) {
        for (int64_t c = 0; c < x.cols(); ++c) {
            out.at(r, c) += broadcast ? y.at(0, c) : y.at(r, c);
        }
    }
    Tape * tape = joint_tape(a, b);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    int an = VarAccess::node(a);
    int bn = VarAccess::node(b);
    bool ga = VarAccess::tape(a) != nullptr;
    bool gb = VarAccess::tape(b) != nullptr;
    std::vector<int64_t> bsh = y.shape;
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        if (ga) {
            t.accumulate(an, g);
        }
        if (gb) {
            if (!broadcast) {
                t.accumulate(bn, g);
            } else {
                Tensor db = Tensor::zeros(bsh);
                for (int64_t r = 0; r < g.rows(); ++r) {
                    for (int64_t c = 0; c < g.cols(); ++c) {
                        db.data[static_cast<size_t>(c)] += g.at(r, c);
                    }
                }
                t.accumulate(bn, db);
            }
        }
    });
}

Var sub(const Var & a, const Var & b) {
    return add(a, scale(b, -1.0));
}

Var mul(const Var & a, const Var & b) {
    check_defined(a, "mul");
    check_defined(b, "mul");
    const Tensor & x = a.value();
    const Tensor & y = b.value();
    if (!x.same_shape(y)) {
        throw ShapeError("mul: shape mismatch " + x.shape_str() + " vs " + y.shape_str());
    }
    Tensor out = x;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] *= y.data[i];
    }
    Tape * tape = joint_tape(a, b);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    auto av = VarAccess::value(a);
    auto bv = VarAccess::value(b);
    int an = VarAccess::node(a);
    int bn = VarAccess::node(b);
    bool ga = VarAccess::tape(a) != nullptr;
    bool gb = VarAccess::tape(b) != nullptr;
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        if (ga) {
            Tensor da = g;
            for (size_t i = 0; i < da.data.size(); ++i) {
                da.data[i] *= bv->data[i];
            }
            t.accumulate(an, da);
        }
        if (gb) {
            Tensor db = g;
            for (size_t i = 0; i < db.data.size(); ++i) {
                db.data[i] *= av->data[i];
            }
            t.accumulate(bn, db);
        }
    });
}

Var scale(const Var & a, double c) {
    return affine(a, c, 0.0);
}

Var affine(const Var & a, double m, double k) {
    check_defined(a, "affine");
    Tensor out = a.value();
    for (double & v : out.data) {
        v = m * v + k;
    }
    Tape * tape = VarAccess::tape(a);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    int an = VarAccess::node(a);
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        Tensor da = g;
        for (double & v : da.data) {
            v *= m;
        }
        t.accumulate(an, da);
    });
}

Var add_const(const Var & a, const Tensor & c) {
    check_defined(a, "add_const");
    if (!a.value().same_shape(c)) {
        throw ShapeError("add_const: shape mismatch");
    }
    Tensor out = a.value();
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] += c.data[i];
    }
    Tape * tape = VarAccess::tape(a);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    int an = VarAccess::node(a);
    return VarAccess::wrap(tape, std::move(out),
                           [=](Tape & t, const Tensor & g) { t.accumulate(an, g); });
}

Var mul_const(const Var & a, const Tensor & c) {
    check_defined(a, "mul_const");
    if (!a.value().same_shape(c)) {
        throw ShapeError("mul_const: shape mismatch");
    }
    Tensor out = a.value();
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] *= c.data[i];
    }
    Tape * tape = VarAccess::tape(a);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    int an = VarAccess::node(a);
    Tensor cc = c;
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        Tensor da = g;
        for (size_t i = 0; i < da.data.size(); ++i) {
            da.data[i] *= cc.data[i];
        }
        t.accumulate(an, da);
    });
}

namespace {

// Elementwise op with derivative computed from (input, output).
Var unary_op(const Var & a, const char * name, double (*f)(double),
             double (*df)(double x, double y)) {
    check_defined(a, name);
    Tensor out = a.value();
    for (double & v : out.data) {
        v = f(v);
    }
    Tape * tape = VarAccess::tape(a);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    auto av = VarAccess::value(a);
    auto ov = std::make_shared<Tensor>(out);
    int an = VarAccess::node(a);
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        Tensor da = g;
        for (size_t i = 0; i < da.data.size(); ++i) {
            da.data[i] *= df(av->data[i], ov->data[i]);
        }
        t.accumulate(an, da);
    });
}

} // namespace

Var relu(const Var & a) {
    return unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var & a) {
    return unary_op(
        a, "sigmoid",
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Var vlog(const Var & a) {
    return unary_op(
        a, "log", [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Var vabs(const Var & a) {
    return unary_op(
        a, "abs", [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var & a) {
    return unary_op(
        a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(const Var & a, double lo, double hi) {
    check_defined(a, "clamp");
    Tensor out = a.value();
    for (double & v : out.data) {
        v = std::min(hi, std::max(lo, v));
    }
    Tape * tape = VarAccess::tape(a);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    auto av = VarAccess::value(a);
    int an = VarAccess::node(a);
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        Tensor da = g;
        for (size_t i = 0; i < da.data.size(); ++i) {
            double x = av->data[i];
            if (x <= lo || x >= hi) {
                da.data[i] = 0.0;
            }
        }
        t.accumulate(an, da);
    });
}

Var softmax_rows(const Var & a) {
    check_defined(a, "softmax_rows");
    const Tensor & x = a.value();
    Tensor out = x;
    for (int64_t r = 0; r < x.rows(); ++r) {
        double mx = x.at(r, 0);
        for (int64_t c = 1; c < x.cols(); ++c) {
            mx = std::max(mx, x.at(r, c));
        }
        double z = 0.0;
        for (int64_t c = 0; c < x.cols(); ++c) {
            double e = std::exp(x.at(r, c) - mx);
            out.at(r, c) = e;
            z += e;
        }
        for (int64_t c = 0; c < x.cols(); ++c) {
            out.at(r, c) /= z;
        }
    }
    Tape * tape = VarAccess::tape(a);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    auto ov = std::make_shared<Tensor>(out);
    int an = VarAccess::node(a);
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        Tensor da = g;
        for (int64_t r = 0; r < g.rows(); ++r) {
            double dot = 0.0;
            for (int64_t c = 0; c < g.cols(); ++c) {
                dot += g.at(r, c) * ov->at(r, c);
            }
            for (int64_t c = 0; c < g.cols(); ++c) {
                da.at(r, c) = (g.at(r, c) - dot) * ov->at(r, c);
            }
        }
        t.accumulate(an, da);
    });
}

Var layer_norm_rows(const Var & x, const Var & gain, const Var & bias, double eps) {
    check_defined(x, "layer_norm");
    check_defined(gain, "layer_norm");
    check_defined(bias, "layer_norm");
    const Tensor & xv = x.value();
    const int64_t rows = xv.rows();
    const int64_t cols = xv.cols();
    if (gain.value().numel() != cols || bias.value().numel() != cols) {
        throw ShapeError("layer_norm: gain/bias width mismatch");
    }
    auto xhat = std::make_shared<Tensor>(Tensor::zeros({rows, cols}));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    Tensor out = Tensor::zeros({rows, cols});
    for (int64_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            mean += xv.at(r, c);
        }
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            double d = xv.at(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        for (int64_t c = 0; c < cols; ++c) {
            double xh = (xv.at(r, c) - mean) * is;
            xhat->at(r, c) = xh;
            out.at(r, c) = gain.value().data[static_cast<size_t>(c)] * xh +
                           bias.value().data[static_cast<size_t>(c)];
        }
    }
    Tape * tape = joint_tape(x, gain, bias);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    auto gv = VarAccess::value(gain);
    int xn = VarAccess::node(x);
    int gn = VarAccess::node(gain);
    int bn = VarAccess::node(bias);
    bool gx = VarAccess::tape(x) != nullptr;
    bool gg = VarAccess::tape(gain) != nullptr;
    bool gb = VarAccess::tape(bias) != nullptr;
    std::vector<int64_t> gain_shape = gain.value().shape;
    std::vector<int64_t> bias_shape = bias.value().shape;
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        if (gx) {
            Tensor dx = Tensor::zeros({rows, cols});
            for (int64_t r = 0; r < rows; ++r) {
                double mean_w = 0.0;
                double mean_wx = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    double w = g.at(r, c) * gv->data[static_cast<size_t>(c)];
                    mean_w += w;
                    mean_wx += w * xhat->at(r, c);
                }
                mean_w /= static_cast<double>(cols);
                mean_wx /= static_cast<double>(cols);
                double is = (*inv_std)[static_cast<size_t>(r)];
                for (int64_t c = 0; c < cols; ++c) {
                    double w = g.at(r, c) * gv->data[static_cast<size_t>(c)];
                    dx.at(r, c) = (w - mean_w - xhat->at(r, c) * mean_wx) * is;
                }
            }
            t.accumulate(xn, dx);
        }
        if (gg) {
            Tensor dg = Tensor::zeros(gain_shape);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t c = 0; c < cols; ++c) {
                    dg.data[static_cast<size_t>(c)] += g.at(r, c) * xhat->at(r, c);
                }
            }
            t.accumulate(gn, dg);
        }
        if (gb) {
            Tensor db = Tensor::zeros(bias_shape);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t c = 0; c < cols; ++c) {
                    db.data[static_cast<size_t>(c)] += g.at(r, c);
                }
            }
            t.accumulate(bn, db);
        }
    });
}

Var concat_cols(const Var & a, const Var & b) {
    check_defined(a, "concat_cols");
    check_defined(b, "concat_cols");
    const Tensor & x = a.value();
    const Tensor & y = b.value();
    if (x.rows() != y.rows()) {
        throw ShapeError("concat_cols: row mismatch");
    }
    const int64_t rows = x.rows();
    const int64_t ca = x.cols();
    const int64_t cb = y.cols();
    Tensor out = Tensor::zeros({rows, ca + cb});
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < ca; ++c) {
            out.at(r, c) = x.at(r, c);
        }
        for (int64_t c = 0; c < cb; ++c) {
            out.at(r, ca + c) = y.at(r, c);
        }
    }
    Tape * tape = joint_tape(a, b);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    int an = VarAccess::node(a);
    int bn = VarAccess::node(b);
    bool ga = VarAccess::tape(a) != nullptr;
    bool gb = VarAccess::tape(b) != nullptr;
    std::vector<int64_t> ash = x.shape;
    std::vector<int64_t> bsh = y.shape;
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        if (ga) {
            Tensor da = Tensor::zeros(ash);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t c = 0; c < ca; ++c) {
                    da.at(r, c) = g.at(r, c);
                }
            }
            t.accumulate(an, da);
        }
        if (gb) {
            Tensor db = Tensor::zeros(bsh);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t c = 0; c < cb; ++c) {
                    db.at(r, c) = g.at(r, ca + c);
                }
            }
            t.accumulate(bn, db);
        }
    });
}

Var slice_cols(const Var & a, int64_t first, int64_t count) {
    check_defined(a, "slice_cols");
    const Tensor & x = a.value();
    if (first < 0 || count <= 0 || first + count > x.cols()) {
        throw ShapeError("slice_cols: range out of bounds");
    }
    const int64_t rows = x.rows();
    Tensor out = Tensor::zeros({rows, count});
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < count; ++c) {
            out.at(r, c) = x.at(r, first + c);
        }
    }
    Tape * tape = VarAccess::tape(a);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    int an = VarAccess::node(a);
    std::vector<int64_t> ash = x.shape;
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        Tensor da = Tensor::zeros(ash);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < count; ++c) {
                da.at(r, first + c) = g.at(r, c);
            }
        }
        t.accumulate(an, da);
    });
}

Var repeat_rows(const Var & a, int64_t times) {
    check_defined(a, "repeat_rows");
    const Tensor & x = a.value();
    if (x.rows() != 1 || times < 1) {
        throw ShapeError("repeat_rows: need a single row and times >= 1");
    }
    const int64_t cols = x.cols();
    Tensor out = Tensor::zeros({times, cols});
    for (int64_t r = 0; r < times; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            out.at(r, c) = x.at(0, c);
        }
    }
    Tape * tape = VarAccess::tape(a);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    int an = VarAccess::node(a);
    std::vector<int64_t> ash = x.shape;
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        Tensor da = Tensor::zeros(ash);
        for (int64_t r = 0; r < times; ++r) {
            for (int64_t c = 0; c < cols; ++c) {
                da.data[static_cast<size_t>(c)] += g.at(r, c);
            }
        }
        t.accumulate(an, da);
    });
}

Var sum_all(const Var & a) {
    check_defined(a, "sum_all");
    double s = 0.0;
    for (double v : a.value().data) {
        s += v;
    }
    Tensor out = Tensor::matrix(1, 1, {s});
    Tape * tape = VarAccess::tape(a);
    if (tape == nullptr) {
        return Var(std::move(out));
    }
    int an = VarAccess::node(a);
    std::vector<int64_t> ash = a.value().shape;
    return VarAccess::wrap(tape, std::move(out), [=](Tape & t, const Tensor & g) {
        t.accumulate(an, Tensor::full(ash, g.data[0]));
    });
}

Var mean_all(const Var & a) {
    check_defined(a, "mean_all");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.value().numel()));
}

double scalar_value(const Var & a) {
    if (!a.defined() || a.value().numel() != 1) {
        throw ShapeError("scalar_value: not a scalar");
    }
    return a.value().data[0];
}

} // namespace gazediff
