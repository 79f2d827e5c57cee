#include "fragvqa/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace fragvqa::ad {

namespace {

std::atomic<std::uint64_t> g_seq{1};
thread_local int g_no_grad_depth = 0;

double f_add(double a, double b) { return a + b; }
double f_sub(double a, double b) { return a - b; }
double f_mul(double a, double b) { return a * b; }
double f_div(double a, double b) { return a / b; }

Var wrap(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    bool req = false;
    if (grad_enabled()) {
        for (const auto& p : parents) req = req || p->requires_grad;
    }
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    if (req) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

}  // namespace

Tensor& Node::ensure_grad() {
    if (!has_grad()) grad = Tensor::zeros(value.shape());
    return grad;
}

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }
Var constant(double value) { return leaf(Tensor::scalar(value), false); }

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    return wrap(std::move(value), std::move(parents), std::move(backward_fn));
}

void add_grad(const Var& v, const Tensor& g) {
    if (!v->requires_grad) return;
    Tensor reduced = g.shape() == v->value.shape() ? g : reduce_to_shape(g, v->value.shape());
    Tensor& acc = v->ensure_grad();
    double* pa = acc.data();
    const double* pg = reduced.data();
    std::int64_t n = acc.numel();
    for (std::int64_t i = 0; i < n; ++i) pa[i] += pg[i];
}

void backward(const Var& root) {
    check(root->value.numel() == 1, "backward root must be scalar");
    if (!root->requires_grad) return;
    // Iterative DFS; graphs can be thousands of nodes deep.
    std::vector<Node*> order;
    std::vector<Node*> stack{root.get()};
    std::unordered_set<Node*> seen{root.get()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });
    root->ensure_grad().fill(1.0);
    for (Node* n : order) {
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    return wrap(broadcast_binary(a->value, b->value, f_add), {a, b}, [](Node& n) {
        add_grad(n.parents[0], n.grad);
        add_grad(n.parents[1], n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    return wrap(broadcast_binary(a->value, b->value, f_sub), {a, b}, [](Node& n) {
        add_grad(n.parents[0], n.grad);
        Tensor gneg = map_unary(n.grad, [](double x) { return -x; });
        add_grad(n.parents[1], gneg);
    });
}

Var mul(const Var& a, const Var& b) {
    return wrap(broadcast_binary(a->value, b->value, f_mul), {a, b}, [](Node& n) {
        add_grad(n.parents[0], broadcast_binary(n.grad, n.parents[1]->value, f_mul));
        add_grad(n.parents[1], broadcast_binary(n.grad, n.parents[0]->value, f_mul));
    });
}

Var divide(const Var& a, const Var& b) {
    return wrap(broadcast_binary(a->value, b->value, f_div), {a, b}, [](Node& n) {
        add_grad(n.parents[0], broadcast_binary(n.grad, n.parents[1]->value, f_div));
        Tensor u = broadcast_binary(n.parents[0]->value, n.parents[1]->value,
                                    [](double x, double y) { return -x / (y * y); });
        add_grad(n.parents[1], broadcast_binary(n.grad, u, f_mul));
    });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double s) {
    Tensor v = map_unary(a->value, [](double x) { return x; });
    double* p = v.data();
    for (std::int64_t i = 0; i < v.numel(); ++i) p[i] += s;
    return wrap(std::move(v), {a}, [](Node& n) { add_grad(n.parents[0], n.grad); });
}

Var mul_scalar(const Var& a, double s) {
    Tensor v(a->value.shape());
    const double* pa = a->value.data();
    double* pv = v.data();
    for (std::int64_t i = 0; i < v.numel(); ++i) pv[i] = pa[i] * s;
    return wrap(std::move(v), {a}, [s](Node& n) {
        Tensor g(n.grad.shape());
        const double* pg = n.grad.data();
        double* po = g.data();
        for (std::int64_t i = 0; i < g.numel(); ++i) po[i] = pg[i] * s;
        add_grad(n.parents[0], g);
    });
}

Var matmul(const Var& a, const Var& b) {
    return wrap(fragvqa::matmul(a->value, b->value), {a, b}, [](Node& n) {
        add_grad(n.parents[0], fragvqa::matmul(n.grad, transpose2d(n.parents[1]->value)));
        add_grad(n.parents[1], fragvqa::matmul(transpose2d(n.parents[0]->value), n.grad));
    });
}

Var bmm(const Var& a, const Var& b) {
    return wrap(fragvqa::bmm(a->value, b->value), {a, b}, [](Node& n) {
        add_grad(n.parents[0], fragvqa::bmm_nt(n.grad, n.parents[1]->value));
        add_grad(n.parents[1], fragvqa::bmm_tn(n.parents[0]->value, n.grad));
    });
}

Var bmm_nt(const Var& a, const Var& b) {
    return wrap(fragvqa::bmm_nt(a->value, b->value), {a, b}, [](Node& n) {
        add_grad(n.parents[0], fragvqa::bmm(n.grad, n.parents[1]->value));
        add_grad(n.parents[1], fragvqa::bmm_tn(n.grad, n.parents[0]->value));
    });
}

Var transpose(const Var& a) {
    return wrap(transpose2d(a->value), {a},
                [](Node& n) { add_grad(n.parents[0], transpose2d(n.grad)); });
}

Var reshape(const Var& a, std::vector<std::int64_t> shape) {
    Tensor v = a->value.reshaped(shape);
    return wrap(std::move(v), {a}, [](Node& n) {
        add_grad(n.parents[0], n.grad.reshaped(n.parents[0]->value.shape()));
    });
}

Var gather_flat(const Var& a, std::shared_ptr<const std::vector<std::int64_t>> idx,
                std::vector<std::int64_t> out_shape) {
    check(static_cast<std::int64_t>(idx->size()) == shape_numel(out_shape),
          "gather_flat: index count does not match output shape");
    Tensor v(std::move(out_shape));
    const double* pa = a->value.data();
    double* pv = v.data();
    std::int64_t an = a->value.numel();
    for (std::size_t i = 0; i < idx->size(); ++i) {
        std::int64_t j = (*idx)[i];
        check(j >= 0 && j < an, "gather_flat: index out of range");
        pv[i] = pa[j];
    }
    return wrap(std::move(v), {a}, [idx](Node& n) {
        Tensor g = Tensor::zeros(n.parents[0]->value.shape());
        double* pg = g.data();
        const double* po = n.grad.data();
        for (std::size_t i = 0; i < idx->size(); ++i) pg[(*idx)[i]] += po[i];
        add_grad(n.parents[0], g);
    });
}

Var index_rows(const Var& a, const std::vector<std::int64_t>& rows) {
    check(a->value.rank() == 2, "index_rows expects rank-2 input");
    std::int64_t c = a->value.size(1);
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(rows.size() * static_cast<std::size_t>(c));
    for (auto r : rows) {
        check(r >= 0 && r < a->value.size(0), "index_rows: row out of range");
        for (std::int64_t j = 0; j < c; ++j) idx->push_back(r * c + j);
    }
    return gather_flat(a, idx, {static_cast<std::int64_t>(rows.size()), c});
}

Var slice_rows(const Var& a, std::int64_t r0, std::int64_t r1) {
    check(a->value.rank() == 2 && r0 >= 0 && r1 <= a->value.size(0) && r0 < r1,
          "slice_rows: bad range");
    std::vector<std::int64_t> rows;
    for (std::int64_t r = r0; r < r1; ++r) rows.push_back(r);
    return index_rows(a, rows);
}

Var concat_rows(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_rows: empty input");
    std::int64_t c = parts[0]->value.size(1);
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        check(p->value.rank() == 2 && p->value.size(1) == c, "concat_rows: column mismatch");
        rows += p->value.size(0);
    }
    Tensor v({rows, c});
    double* pv = v.data();
    for (const auto& p : parts) {
        const double* pp = p->value.data();
        std::copy(pp, pp + p->value.numel(), pv);
        pv += p->value.numel();
    }
    return wrap(std::move(v), parts, [](Node& n) {
        const double* pg = n.grad.data();
        for (const auto& p : n.parents) {
            Tensor g(p->value.shape());
            std::copy(pg, pg + g.numel(), g.data());
            pg += g.numel();
            add_grad(p, g);
        }
    });
}

Var sum_all(const Var& a) {
    double s = 0.0;
    const double* pa = a->value.data();
    for (std::int64_t i = 0; i < a->value.numel(); ++i) s += pa[i];
    return wrap(Tensor::scalar(s), {a}, [](Node& n) {
        add_grad(n.parents[0], Tensor::full(n.parents[0]->value.shape(), n.grad.item()));
    });
}

Var mean_all(const Var& a) {
    check(a->value.numel() > 0, "mean_all: empty tensor");
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a->value.numel()));
}

Var sum_axis(const Var& a, int axis, bool keepdim) {
    const auto& sh = a->value.shape();
    int r = a->value.rank();
    if (axis < 0) axis += r;
    check(axis >= 0 && axis < r, "sum_axis: axis out of range");
    std::vector<std::int64_t> out_shape = sh;
    out_shape[static_cast<std::size_t>(axis)] = 1;

    std::int64_t inner = 1;
    for (int d = axis + 1; d < r; ++d) inner *= sh[static_cast<std::size_t>(d)];
    std::int64_t n_axis = sh[static_cast<std::size_t>(axis)];
    std::int64_t outer = a->value.numel() / (inner * std::max<std::int64_t>(n_axis, 1));

    Tensor v(out_shape);
    const double* pa = a->value.data();
    double* pv = v.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t k = 0; k < n_axis; ++k)
            for (std::int64_t i = 0; i < inner; ++i)
                pv[o * inner + i] += pa[(o * n_axis + k) * inner + i];

    auto out = wrap(std::move(v), {a}, [inner, n_axis, outer](Node& n) {
        Tensor g(n.parents[0]->value.shape());
        const double* pg = n.grad.data();
        double* po = g.data();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t k = 0; k < n_axis; ++k)
                for (std::int64_t i = 0; i < inner; ++i)
                    po[(o * n_axis + k) * inner + i] = pg[o * inner + i];
        add_grad(n.parents[0], g);
    });
    if (!keepdim) {
        std::vector<std::int64_t> squeezed;
        for (int d = 0; d < r; ++d)
            if (d != axis) squeezed.push_back(sh[static_cast<std::size_t>(d)]);
        out = reshape(out, squeezed);
    }
    return out;
}

Var softmax_last(const Var& a) {
    check(a->value.rank() >= 1, "softmax_last: need rank >= 1");
    std::int64_t c = a->value.shape().back();
    std::int64_t rows = a->value.numel() / c;
    Tensor v(a->value.shape());
    const double* pa = a->value.data();
    double* pv = v.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = pa + r * c;
        double* y = pv + r * c;
        double m = x[0];
        for (std::int64_t j = 1; j < c; ++j) m = std::max(m, x[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - m);
            z += y[j];
        }
        for (std::int64_t j = 0; j < c; ++j) y[j] /= z;
    }
    return wrap(std::move(v), {a}, [c, rows](Node& n) {
        Tensor g(n.value.shape());
        const double* py = n.value.data();
        const double* pg = n.grad.data();
        double* po = g.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = py + r * c;
            const double* gr = pg + r * c;
            double dot = 0.0;
            for (std::int64_t j = 0; j < c; ++j) dot += y[j] * gr[j];
            for (std::int64_t j = 0; j < c; ++j) po[r * c + j] = y[j] * (gr[j] - dot);
        }
        add_grad(n.parents[0], g);
    });
}

Var masked_softmax_last(const Var& a, std::shared_ptr<const Tensor> mask, int repeat) {
    check(a->value.rank() == 3, "masked_softmax_last: need [B, L, L]");
    check(repeat >= 1, "masked_softmax_last: repeat must be positive");
    const std::int64_t b = a->value.size(0), l = a->value.size(1);
    check(a->value.size(2) == l, "masked_softmax_last: square attention expected");
    check(b % repeat == 0, "masked_softmax_last: batch not divisible by repeat");
    check(mask && mask->shape() == std::vector<std::int64_t>{b / repeat, l, l},
          "masked_softmax_last: mask shape mismatch");

    Tensor v(a->value.shape());
    const double* pa = a->value.data();
    const double* pm = mask->data();
    double* pv = v.data();
    for (std::int64_t batch = 0; batch < b; ++batch) {
        const double* mrow = pm + (batch / repeat) * l * l;
        for (std::int64_t r = 0; r < l; ++r) {
            const double* x = pa + (batch * l + r) * l;
            const double* mk = mrow + r * l;
            double* y = pv + (batch * l + r) * l;
            double m = x[0] + mk[0];
            for (std::int64_t j = 1; j < l; ++j) m = std::max(m, x[j] + mk[j]);
            double z = 0.0;
            for (std::int64_t j = 0; j < l; ++j) {
                y[j] = std::exp(x[j] + mk[j] - m);
                z += y[j];
            }
            for (std::int64_t j = 0; j < l; ++j) y[j] /= z;
        }
    }
    const std::int64_t rows = b * l;
    return wrap(std::move(v), {a}, [l, rows](Node& n) {
        Tensor g(n.value.shape());
        const double* py = n.value.data();
        const double* pg = n.grad.data();
        double* po = g.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = py + r * l;
            const double* gr = pg + r * l;
            double dot = 0.0;
            for (std::int64_t j = 0; j < l; ++j) dot += y[j] * gr[j];
            for (std::int64_t j = 0; j < l; ++j) po[r * l + j] = y[j] * (gr[j] - dot);
        }
        add_grad(n.parents[0], g);
    });
}

namespace {

Var unary(const Var& a, double (*f)(double), Tensor (*df)(const Node&)) {
    return wrap(map_unary(a->value, f), {a}, [df](Node& n) {
        add_grad(n.parents[0], broadcast_binary(n.grad, df(n), f_mul));
    });
}

}  // namespace

Var vexp(const Var& a) {
    return unary(a, [](double x) { return std::exp(x); },
                 [](const Node& n) { return n.value; });
}

Var vlog(const Var& a) {
    return unary(a, [](double x) { return std::log(x); },
                 [](const Node& n) {
                     return map_unary(n.parents[0]->value, [](double x) { return 1.0 / x; });
                 });
}

Var vsqrt(const Var& a) {
    return unary(a, [](double x) { return std::sqrt(x); },
                 [](const Node& n) {
                     return map_unary(n.value, [](double y) { return 0.5 / y; });
                 });
}

Var vtanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](const Node& n) {
                     return map_unary(n.value, [](double y) { return 1.0 - y * y; });
                 });
}

Var relu(const Var& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](const Node& n) {
                     return map_unary(n.parents[0]->value,
                                      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
                 });
}

Var gelu(const Var& a) {
    // Exact erf form; derivative is Phi(x) + x phi(x).
    return unary(a,
                 [](double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)); },
                 [](const Node& n) {
                     return map_unary(n.parents[0]->value, [](double x) {
                         double phi = 0.3989422804014327 * std::exp(-0.5 * x * x);
                         double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
                         return cdf + x * phi;
                     });
                 });
}

Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; },
                 [](const Node& n) {
                     return map_unary(n.parents[0]->value, [](double x) { return 2.0 * x; });
                 });
}

Var stopgrad(const Var& a) { return constant(a->value); }

Var straight_through(const Var& soft, double hard) {
    check(soft->value.numel() == 1, "straight_through expects scalar soft value");
    return wrap(Tensor::scalar(hard), {soft},
                [](Node& n) { add_grad(n.parents[0], n.grad.reshaped(n.parents[0]->value.shape())); });
}

Var cosine_rows(const Var& q, const Var& p, double eps) {
    check(q->value.rank() == 1, "cosine_rows: query must be rank-1");
    check(p->value.rank() == 2, "cosine_rows: rows must be rank-2");
    std::int64_t c = q->value.size(0);
    check(p->value.size(1) == c, "cosine_rows: width mismatch");
    std::int64_t nrows = p->value.size(0);

    const double* pq = q->value.data();
    const double* pp = p->value.data();
    double qn = 0.0;
    for (std::int64_t j = 0; j < c; ++j) qn += pq[j] * pq[j];
    qn = std::sqrt(qn);

    Tensor v({nrows});
    auto guarded = std::make_shared<std::vector<bool>>(static_cast<std::size_t>(nrows), false);
    auto row_norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(nrows), 0.0);
    for (std::int64_t i = 0; i < nrows; ++i) {
        double rn = 0.0;
        for (std::int64_t j = 0; j < c; ++j) rn += pp[i * c + j] * pp[i * c + j];
        rn = std::sqrt(rn);
        (*row_norms)[static_cast<std::size_t>(i)] = rn;
        if (qn < eps || rn < eps) {
            (*guarded)[static_cast<std::size_t>(i)] = true;
            v[i] = 0.0;
            emit_warning("cosine_rows: degenerate feature at row " + std::to_string(i) +
                         ", score set to 0");
        } else {
            double dot = 0.0;
            for (std::int64_t j = 0; j < c; ++j) dot += pq[j] * pp[i * c + j];
            v[i] = dot / (qn * rn);
        }
    }

    return wrap(std::move(v), {q, p}, [guarded, row_norms, qn, c, nrows](Node& n) {
        const double* pq = n.parents[0]->value.data();
        const double* pp = n.parents[1]->value.data();
        const double* ps = n.value.data();
        const double* pg = n.grad.data();
        Tensor gq = Tensor::zeros(n.parents[0]->value.shape());
        Tensor gp = Tensor::zeros(n.parents[1]->value.shape());
        for (std::int64_t i = 0; i < nrows; ++i) {
            if ((*guarded)[static_cast<std::size_t>(i)]) continue;
            double rn = (*row_norms)[static_cast<std::size_t>(i)];
            double g = pg[i], s = ps[i];
            for (std::int64_t j = 0; j < c; ++j) {
                gq[j] += g * (pp[i * c + j] / (qn * rn) - s * pq[j] / (qn * qn));
                gp[i * c + j] += g * (pq[j] / (qn * rn) - s * pp[i * c + j] / (rn * rn));
            }
        }
        add_grad(n.parents[0], gq);
        add_grad(n.parents[1], gp);
    });
}

}  // namespace fragvqa::ad
