#include "fragvqa/tensor.hpp"

#include <Eigen/Dense>

#include <iostream>
#include <mutex>
#include <sstream>

namespace fragvqa {

namespace {
std::function<void(const std::string&)> g_warning_handler;
std::mutex g_warning_mutex;
}  // namespace

void emit_warning(const std::string& msg) {
    std::lock_guard<std::mutex> lock(g_warning_mutex);
    if (g_warning_handler) {
        g_warning_handler(msg);
    } else {
        std::cerr << "[warn] " << msg << "\n";
    }
}

void set_warning_handler(std::function<void(const std::string&)> h) {
    std::lock_guard<std::mutex> lock(g_warning_mutex);
    g_warning_handler = std::move(h);
}

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        check(d >= 0, "negative dimension");
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), 0.0) {}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check(shape_numel(shape_) == static_cast<std::int64_t>(data_.size()),
          "tensor data size does not match shape " + shape_to_string(shape_));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

double Tensor::item() const {
    check(numel() == 1, "item() requires a single-element tensor, got " + shape_str());
    return data_[0];
}

std::vector<std::int64_t> Tensor::strides() const {
    std::vector<std::int64_t> s(shape_.size());
    std::int64_t acc = 1;
    for (int i = static_cast<int>(shape_.size()) - 1; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = acc;
        acc *= shape_[static_cast<std::size_t>(i)];
    }
    return s;
}

double& Tensor::at(const std::vector<std::int64_t>& idx) {
    check(idx.size() == shape_.size(), "index rank mismatch");
    auto st = strides();
    std::int64_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < shape_[i], "index out of range");
        off += idx[i] * st[i];
    }
    return data_[static_cast<std::size_t>(off)];
}

double Tensor::at(const std::vector<std::int64_t>& idx) const {
    return const_cast<Tensor*>(this)->at(idx);
}

Tensor Tensor::reshaped(std::vector<std::int64_t> new_shape) const {
    check(shape_numel(new_shape) == numel(),
          "reshape " + shape_str() + " -> " + shape_to_string(new_shape) + " changes element count");
    return Tensor(std::move(new_shape), data_);
}

void Tensor::fill(double v) {
    for (auto& x : data_) x = v;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::vector<std::int64_t> broadcast_shape(const std::vector<std::int64_t>& a,
                                          const std::vector<std::int64_t>& b) {
    std::size_t r = std::max(a.size(), b.size());
    std::vector<std::int64_t> out(r);
    for (std::size_t i = 0; i < r; ++i) {
        std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da == db || da == 1 || db == 1) {
            out[i] = std::max(da, db);
        } else {
            throw InvalidArgument("shapes " + shape_to_string(a) + " and " + shape_to_string(b) +
                                  " do not broadcast");
        }
    }
    return out;
}

namespace {

// Strides of `shape` expanded to broadcast against `out_shape`; broadcast dims
// get stride 0.
std::vector<std::int64_t> expanded_strides(const std::vector<std::int64_t>& shape,
                                           const std::vector<std::int64_t>& out_shape) {
    std::vector<std::int64_t> st(out_shape.size(), 0);
    std::int64_t acc = 1;
    std::size_t off = out_shape.size() - shape.size();
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        std::size_t oi = off + static_cast<std::size_t>(i);
        if (shape[static_cast<std::size_t>(i)] != 1) {
            st[oi] = acc;
        }
        acc *= shape[static_cast<std::size_t>(i)];
    }
    return st;
}

}  // namespace

Tensor broadcast_binary(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
    if (a.same_shape(b)) {
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    auto os = broadcast_shape(a.shape(), b.shape());
    Tensor out(os);
    auto sa = expanded_strides(a.shape(), os);
    auto sb = expanded_strides(b.shape(), os);
    std::size_t r = os.size();
    std::vector<std::int64_t> idx(r, 0);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    std::int64_t n = out.numel();
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        po[i] = f(pa[oa], pb[ob]);
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            std::size_t ud = static_cast<std::size_t>(d);
            ++idx[ud];
            oa += sa[ud];
            ob += sb[ud];
            if (idx[ud] < os[ud]) break;
            oa -= sa[ud] * os[ud];
            ob -= sb[ud] * os[ud];
            idx[ud] = 0;
        }
    }
    return out;
}

Tensor reduce_to_shape(const Tensor& t, const std::vector<std::int64_t>& target) {
    if (t.shape() == target) return t;
    check(shape_numel(target) <= t.numel(), "reduce_to_shape cannot grow");
    Tensor out(target);
    auto st = expanded_strides(target, t.shape());
    const auto& os = t.shape();
    std::size_t r = os.size();
    std::vector<std::int64_t> idx(r, 0);
    const double* pt = t.data();
    double* po = out.data();
    std::int64_t n = t.numel();
    std::int64_t ot = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        po[ot] += pt[i];
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            std::size_t ud = static_cast<std::size_t>(d);
            ++idx[ud];
            ot += st[ud];
            if (idx[ud] < os[ud]) break;
            ot -= st[ud] * os[ud];
            idx[ud] = 0;
        }
    }
    return out;
}

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 operands");
    check(a.size(1) == b.size(0),
          "matmul inner dims differ: " + a.shape_str() + " x " + b.shape_str());
    Tensor out({a.size(0), b.size(1)});
    MapC ma(a.data(), a.size(0), a.size(1));
    MapC mb(b.data(), b.size(0), b.size(1));
    MapM mo(out.data(), out.size(0), out.size(1));
    mo.noalias() = ma * mb;
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    check(a.rank() == 3 && b.rank() == 3, "bmm expects rank-3 operands");
    check(a.size(0) == b.size(0) && a.size(2) == b.size(1),
          "bmm shape mismatch: " + a.shape_str() + " x " + b.shape_str());
    std::int64_t bs = a.size(0), m = a.size(1), k = a.size(2), n = b.size(2);
    Tensor out({bs, m, n});
    for (std::int64_t i = 0; i < bs; ++i) {
        MapC ma(a.data() + i * m * k, m, k);
        MapC mb(b.data() + i * k * n, k, n);
        MapM mo(out.data() + i * m * n, m, n);
        mo.noalias() = ma * mb;
    }
    return out;
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    check(a.rank() == 3 && b.rank() == 3, "bmm_nt expects rank-3 operands");
    check(a.size(0) == b.size(0) && a.size(2) == b.size(2),
          "bmm_nt shape mismatch: " + a.shape_str() + " x " + b.shape_str());
    std::int64_t bs = a.size(0), m = a.size(1), k = a.size(2), n = b.size(1);
    Tensor out({bs, m, n});
    for (std::int64_t i = 0; i < bs; ++i) {
        MapC ma(a.data() + i * m * k, m, k);
        MapC mb(b.data() + i * n * k, n, k);
        MapM mo(out.data() + i * m * n, m, n);
        mo.noalias() = ma * mb.transpose();
    }
    return out;
}

Tensor bmm_tn(const Tensor& a, const Tensor& b) {
    check(a.rank() == 3 && b.rank() == 3, "bmm_tn expects rank-3 operands");
    check(a.size(0) == b.size(0) && a.size(1) == b.size(1),
          "bmm_tn shape mismatch: " + a.shape_str() + " x " + b.shape_str());
    std::int64_t bs = a.size(0), k = a.size(1), m = a.size(2), n = b.size(2);
    Tensor out({bs, m, n});
    for (std::int64_t i = 0; i < bs; ++i) {
        MapC ma(a.data() + i * k * m, k, m);
        MapC mb(b.data() + i * k * n, k, n);
        MapM mo(out.data() + i * m * n, m, n);
        mo.noalias() = ma.transpose() * mb;
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    check(a.rank() == 2, "transpose2d expects rank-2 operand");
    Tensor out({a.size(1), a.size(0)});
    MapC ma(a.data(), a.size(0), a.size(1));
    MapM mo(out.data(), out.size(0), out.size(1));
    mo = ma.transpose();
    return out;
}

Tensor map_unary(const Tensor& a, double (*f)(double)) {
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
    return out;
}

}  // namespace fragvqa
