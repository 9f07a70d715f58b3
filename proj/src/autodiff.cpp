#include "pertnet/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace pertnet {

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::mul_scalar: return "mul_scalar";
        case OpKind::affine: return "affine";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::reshape: return "reshape";
        case OpKind::pick_sum: return "pick_sum";
        case OpKind::relu: return "relu";
        case OpKind::maxpool: return "maxpool";
        case OpKind::conv: return "conv";
        case OpKind::conv_transpose: return "conv_transpose";
        case OpKind::dense: return "dense";
        case OpKind::softmax: return "softmax";
        case OpKind::cross_entropy: return "cross_entropy";
        case OpKind::l1_distance: return "l1_distance";
        case OpKind::mse: return "mse";
        case OpKind::frame_continuity: return "frame_continuity";
    }
    return "?";
}

const Tensor& GradMap::at(Var v) const {
    for (const auto& [id, g] : entries_)
        if (id == v.id) return g;
    throw std::invalid_argument("no gradient recorded for node " + std::to_string(v.id));
}

bool GradMap::contains(Var v) const noexcept {
    for (const auto& [id, g] : entries_)
        if (id == v.id) return true;
    return false;
}

void Tape::check_on_tape(Var v, const char* op) const {
    if (!v.valid() || v.id >= size())
        throw std::invalid_argument(std::string(op) + ": variable id " + std::to_string(v.id) +
                                    " is not on this tape");
}

Var Tape::leaf(Tensor value, bool trainable) {
    if (!value.all_finite())
        throw std::domain_error("leaf: non-finite values in tensor of shape " + shape_str(value.shape()));
    nodes_.push_back(Node{OpKind::leaf, std::move(value), trainable, nullptr});
    requires_.push_back(trainable ? 1 : 0);
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(OpKind kind, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    char req = 0;
    for (Var in : inputs) {
        check_on_tape(in, op_name(kind));
        req |= requires_[static_cast<std::size_t>(in.id)];
    }
    if (!value.all_finite())
        throw std::domain_error(std::string(op_name(kind)) + ": produced non-finite values");
    nodes_.push_back(Node{kind, std::move(value), false, std::move(backward)});
    requires_.push_back(req);
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Eigen::ArrayXf& Tape::grad_buffer(int id) {
    auto i = static_cast<std::size_t>(id);
    if (!grad_set_[i]) {
        grads_[i] = Eigen::ArrayXf::Zero(nodes_[i].value.size());
        grad_set_[i] = 1;
    }
    return grads_[i];
}

const Tensor& Tape::value(Var v) const {
    check_on_tape(v, "value");
    return nodes_[static_cast<std::size_t>(v.id)].value;
}

OpKind Tape::kind(Var v) const {
    check_on_tape(v, "kind");
    return nodes_[static_cast<std::size_t>(v.id)].kind;
}

bool Tape::trainable(Var v) const {
    check_on_tape(v, "trainable");
    return nodes_[static_cast<std::size_t>(v.id)].trainable;
}

GradMap Tape::backward(Var loss) {
    check_on_tape(loss, "backward");
    if (nodes_[static_cast<std::size_t>(loss.id)].value.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(nodes_[static_cast<std::size_t>(loss.id)].value.shape()));
    grads_.assign(nodes_.size(), Eigen::ArrayXf());
    grad_set_.assign(nodes_.size(), 0);

    if (requires_[static_cast<std::size_t>(loss.id)]) {
        grads_[static_cast<std::size_t>(loss.id)] = Eigen::ArrayXf::Ones(1);
        grad_set_[static_cast<std::size_t>(loss.id)] = 1;
    }

    for (int id = loss.id; id >= 0; --id) {
        auto i = static_cast<std::size_t>(id);
        if (!grad_set_[i] || !nodes_[i].backward) continue;
        nodes_[i].backward(*this, id);
    }

    GradMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].trainable) continue;
        const Shape& shape = nodes_[i].value.shape();
        Tensor g = grad_set_[i] ? Tensor(shape, grads_[i]) : Tensor(shape);
        out.entries_.emplace_back(static_cast<int>(i), std::move(g));
    }
    return out;
}

GradMap backward(Tape& t, Var loss) { return t.backward(loss); }

namespace {

void require_same_shape(const Tape& t, Var a, Var b, const char* op) {
    if (!t.value(a).same_shape(t.value(b)))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(t.value(a).shape()) +
                                    " vs " + shape_str(t.value(b).shape()));
}

/// Sum a float array in f64.
double sum64(const Eigen::ArrayXf& a) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]);
    return s;
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
    t.check_on_tape(a, "add");
    t.check_on_tape(b, "add");
    require_same_shape(t, a, b, "add");
    Tensor out(t.value(a).shape(), t.value(a).flat() + t.value(b).flat());
    int ia = a.id, ib = b.id;
    Var inputs[] = {a, b};
    return t.record(OpKind::add, std::move(out), inputs, [ia, ib](Tape& tp, int id) {
        const auto& g = tp.grad_flat(id);
        tp.accum_grad(ia, g);
        tp.accum_grad(ib, g);
    });
}

Var sub(Tape& t, Var a, Var b) {
    t.check_on_tape(a, "sub");
    t.check_on_tape(b, "sub");
    require_same_shape(t, a, b, "sub");
    Tensor out(t.value(a).shape(), t.value(a).flat() - t.value(b).flat());
    int ia = a.id, ib = b.id;
    Var inputs[] = {a, b};
    return t.record(OpKind::sub, std::move(out), inputs, [ia, ib](Tape& tp, int id) {
        const auto& g = tp.grad_flat(id);
        tp.accum_grad(ia, g);
        tp.accum_grad(ib, (-g).eval());
    });
}

Var mul(Tape& t, Var a, Var b) {
    t.check_on_tape(a, "mul");
    t.check_on_tape(b, "mul");
    require_same_shape(t, a, b, "mul");
    Tensor out(t.value(a).shape(), t.value(a).flat() * t.value(b).flat());
    int ia = a.id, ib = b.id;
    Var inputs[] = {a, b};
    return t.record(OpKind::mul, std::move(out), inputs, [ia, ib](Tape& tp, int id) {
        const auto& g = tp.grad_flat(id);
        tp.accum_grad(ia, (g * tp.value(Var{ib}).flat()).eval());
        tp.accum_grad(ib, (g * tp.value(Var{ia}).flat()).eval());
    });
}

Var mul_scalar(Tape& t, Var a, Var c) {
    t.check_on_tape(a, "mul_scalar");
    t.check_on_tape(c, "mul_scalar");
    if (t.value(c).size() != 1)
        throw std::invalid_argument("mul_scalar: scale must be one-element, got shape " +
                                    shape_str(t.value(c).shape()));
    float cv = t.value(c).item();
    Tensor out(t.value(a).shape(), t.value(a).flat() * cv);
    int ia = a.id, ic = c.id;
    Var inputs[] = {a, c};
    return t.record(OpKind::mul_scalar, std::move(out), inputs, [ia, ic, cv](Tape& tp, int id) {
        const auto& g = tp.grad_flat(id);
        tp.accum_grad(ia, (g * cv).eval());
        double dc = 0.0;
        const auto& av = tp.value(Var{ia}).flat();
        for (Eigen::Index i = 0; i < g.size(); ++i) dc += static_cast<double>(g[i]) * static_cast<double>(av[i]);
        Eigen::ArrayXf gc(1);
        gc[0] = static_cast<float>(dc);
        tp.accum_grad(ic, gc);
    });
}

Var mul_scalar(Tape& t, Var a, float c) { return mul_scalar(t, a, t.leaf(Tensor::scalar(c), false)); }

Var affine(Tape& t, Var a, float scale, float shift) {
    t.check_on_tape(a, "affine");
    Tensor out(t.value(a).shape(), t.value(a).flat() * scale + shift);
    int ia = a.id;
    Var inputs[] = {a};
    return t.record(OpKind::affine, std::move(out), inputs, [ia, scale](Tape& tp, int id) {
        tp.accum_grad(ia, (tp.grad_flat(id) * scale).eval());
    });
}

Var sum(Tape& t, Var a) {
    t.check_on_tape(a, "sum");
    Tensor out = Tensor::scalar(static_cast<float>(sum64(t.value(a).flat())));
    int ia = a.id;
    Var inputs[] = {a};
    return t.record(OpKind::sum, std::move(out), inputs, [ia](Tape& tp, int id) {
        float g = tp.grad_flat(id)[0];
        tp.accum_grad(ia, Eigen::ArrayXf::Constant(tp.value(Var{ia}).size(), g));
    });
}

Var mean(Tape& t, Var a) {
    t.check_on_tape(a, "mean");
    const auto n = static_cast<double>(t.value(a).size());
    Tensor out = Tensor::scalar(static_cast<float>(sum64(t.value(a).flat()) / n));
    int ia = a.id;
    Var inputs[] = {a};
    return t.record(OpKind::mean, std::move(out), inputs, [ia, n](Tape& tp, int id) {
        float g = static_cast<float>(static_cast<double>(tp.grad_flat(id)[0]) / n);
        tp.accum_grad(ia, Eigen::ArrayXf::Constant(tp.value(Var{ia}).size(), g));
    });
}

Var reshape(Tape& t, Var a, Shape shape) {
    t.check_on_tape(a, "reshape");
    if (shape_numel(shape) != t.value(a).size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(t.value(a).shape()) + " as " +
                                    shape_str(shape));
    Tensor out(std::move(shape), t.value(a).flat());
    int ia = a.id;
    Var inputs[] = {a};
    return t.record(OpKind::reshape, std::move(out), inputs, [ia](Tape& tp, int id) {
        tp.accum_grad(ia, tp.grad_flat(id));
    });
}

Var pick_sum(Tape& t, Var a, std::span<const int> indices) {
    t.check_on_tape(a, "pick_sum");
    const Tensor& av = t.value(a);
    if (indices.empty()) throw std::invalid_argument("pick_sum: empty index list");
    std::vector<int> idx(indices.begin(), indices.end());
    std::vector<char> seen(static_cast<std::size_t>(av.size()), 0);
    double s = 0.0;
    for (int i : idx) {
        if (i < 0 || i >= av.size())
            throw std::invalid_argument("pick_sum: index " + std::to_string(i) + " out of range for shape " +
                                        shape_str(av.shape()));
        if (seen[static_cast<std::size_t>(i)])
            throw std::invalid_argument("pick_sum: duplicate index " + std::to_string(i));
        seen[static_cast<std::size_t>(i)] = 1;
        s += static_cast<double>(av[i]);
    }
    Tensor out = Tensor::scalar(static_cast<float>(s));
    int ia = a.id;
    Var inputs[] = {a};
    return t.record(OpKind::pick_sum, std::move(out), inputs, [ia, idx = std::move(idx)](Tape& tp, int id) {
        float g = tp.grad_flat(id)[0];
        Eigen::ArrayXf ga = Eigen::ArrayXf::Zero(tp.value(Var{ia}).size());
        for (int i : idx) ga[i] += g;
        tp.accum_grad(ia, ga);
    });
}

Var forward_op(Tape& t, OpKind kind, std::span<const Var> inputs) {
    auto want = [&](std::size_t n) {
        if (inputs.size() != n)
            throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                                        " inputs, got " + std::to_string(inputs.size()));
    };
    switch (kind) {
        case OpKind::add: want(2); return add(t, inputs[0], inputs[1]);
        case OpKind::sub: want(2); return sub(t, inputs[0], inputs[1]);
        case OpKind::mul: want(2); return mul(t, inputs[0], inputs[1]);
        case OpKind::mul_scalar: want(2); return mul_scalar(t, inputs[0], inputs[1]);
        case OpKind::sum: want(1); return sum(t, inputs[0]);
        case OpKind::mean: want(1); return mean(t, inputs[0]);
        default:
            throw std::invalid_argument(std::string("forward_op: ") + op_name(kind) +
                                        " has a dedicated constructor");
    }
}

double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");

    auto eval = [&](const Tensor& at) {
        Tape t;
        Var out = f(t, t.leaf(at, false));
        const Tensor& v = t.value(out);
        if (v.size() != 1)
            throw std::invalid_argument("finite_diff_check: f must return a scalar, got shape " +
                                        shape_str(v.shape()));
        float r = v.item();
        if (!std::isfinite(r)) throw std::domain_error("finite_diff_check: f produced a non-finite value");
        return r;
    };

    float f0 = eval(x);
    float f1 = eval(x);
    if (std::memcmp(&f0, &f1, 4) != 0)
        throw std::domain_error("finite_diff_check: f is not deterministic");

    Tape t;
    Var leaf = t.leaf(x, true);
    Var out = f(t, leaf);
    if (t.value(out).size() != 1)
        throw std::invalid_argument("finite_diff_check: f must return a scalar");
    if (!std::isfinite(t.value(out).item()))
        throw std::domain_error("finite_diff_check: f produced a non-finite value");
    GradMap grads = t.backward(out);
    const Tensor& analytic = grads.at(leaf);

    double max_rel = 0.0;
    Tensor probe = x;
    for (int64_t i = 0; i < x.size(); ++i) {
        float orig = probe[i];
        probe[i] = static_cast<float>(static_cast<double>(orig) + step);
        double fp = eval(probe);
        probe[i] = static_cast<float>(static_cast<double>(orig) - step);
        double fm = eval(probe);
        probe[i] = orig;
        double central = (fp - fm) / (2.0 * step);
        double a = static_cast<double>(analytic[i]);
        double denom = std::max({std::abs(a), std::abs(central), 1e-8});
        max_rel = std::max(max_rel, std::abs(a - central) / denom);
    }
    return max_rel;
}

}  // namespace pertnet
