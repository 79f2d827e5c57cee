#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "fragvqa/tensor.hpp"

namespace fragvqa::ad {

// Reverse-mode tape over Tensor values. Nodes are created eagerly by the op
// functions below; backward() walks reachable nodes in reverse creation order,
// which is a valid topological order because inputs always predate outputs.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // empty until touched; empty means all-zero
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    bool has_grad() const { return grad.numel() == static_cast<std::int64_t>(value.numel()); }
    Tensor& ensure_grad();
};

// While a guard is alive, ops do not record parents or backward closures;
// forward values are still computed. Used for evaluation passes.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);
Var constant(double value);

// Factory for custom ops (differentiable selection, cosine scoring).
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Accumulates g into v->grad, sum-reducing broadcast dims first. No-op when v
// does not require grad.
void add_grad(const Var& v, const Tensor& g);

// Seeds root (which must be scalar) with grad 1 and propagates.
void backward(const Var& root);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);

Var matmul(const Var& a, const Var& b);
Var bmm(const Var& a, const Var& b);
Var bmm_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, std::vector<std::int64_t> shape);

// out[i] = a.flat[idx[i]]; the workhorse behind slicing, window partition,
// head split/merge and fragment gathers. Backward scatter-adds.
Var gather_flat(const Var& a, std::shared_ptr<const std::vector<std::int64_t>> idx,
                std::vector<std::int64_t> out_shape);
Var index_rows(const Var& a, const std::vector<std::int64_t>& rows);
Var slice_rows(const Var& a, std::int64_t r0, std::int64_t r1);
Var concat_rows(const std::vector<Var>& parts);

Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var sum_axis(const Var& a, int axis, bool keepdim);

// softmax over the last axis of a [nW*repeat, L, L] batch with an additive
// [nW, L, L] mask shared across each run of `repeat` consecutive batch
// entries; fused so the masked logits are never materialized.
Var masked_softmax_last(const Var& a, std::shared_ptr<const Tensor> mask, int repeat);
Var softmax_last(const Var& a);

Var vexp(const Var& a);
Var vlog(const Var& a);
Var vsqrt(const Var& a);
Var vtanh(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var square(const Var& a);

Var stopgrad(const Var& a);
// Forward value `hard`, backward identity into `soft` (both scalar).
Var straight_through(const Var& soft, double hard);

// Row-wise cosine against a single query: out[i] = <q, p_i> / (|q| |p_i|).
// Rows where either norm falls below `eps` score 0 with a warning; those rows
// also get zero gradient.
Var cosine_rows(const Var& q, const Var& p, double eps = 1e-8);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return divide(a, b); }

}  // namespace fragvqa::ad
