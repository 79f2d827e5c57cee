#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fragvqa/common.hpp"

namespace fragvqa {

// Dense row-major tensor of doubles. Rank 0 is a scalar with one element.
// Double precision everywhere: the oracle comparisons in the test suite run at
// 1e-10 and finite-difference gradient audits at 1e-4 relative error, neither
// of which survives float32 accumulation.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape);
    Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::int64_t> shape, double v);
    static Tensor ones(std::vector<std::int64_t> shape) { return full(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return Tensor({}, {v}); }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t size(int dim) const { return shape_.at(static_cast<std::size_t>(dim)); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

    double item() const;

    // Multi-index access; slow path, meant for tests and setup code.
    double& at(const std::vector<std::int64_t>& idx);
    double at(const std::vector<std::int64_t>& idx) const;

    std::vector<std::int64_t> strides() const;

    Tensor reshaped(std::vector<std::int64_t> new_shape) const;

    void fill(double v);
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

private:
    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);
std::string shape_to_string(const std::vector<std::int64_t>& shape);

// NumPy-style broadcasting, right-aligned; size-1 dims stretch.
std::vector<std::int64_t> broadcast_shape(const std::vector<std::int64_t>& a,
                                          const std::vector<std::int64_t>& b);

Tensor broadcast_binary(const Tensor& a, const Tensor& b, double (*f)(double, double));

// Sum-reduces `t` onto `target` shape; inverse of broadcasting, used by
// gradient accumulation.
Tensor reduce_to_shape(const Tensor& t, const std::vector<std::int64_t>& target);

Tensor matmul(const Tensor& a, const Tensor& b);    // [m,k] x [k,n]
Tensor bmm(const Tensor& a, const Tensor& b);       // [b,m,k] x [b,k,n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);    // [b,m,k] x [b,n,k]^T
Tensor bmm_tn(const Tensor& a, const Tensor& b);    // [b,k,m]^T x [b,k,n]
Tensor transpose2d(const Tensor& a);

Tensor map_unary(const Tensor& a, double (*f)(double));

}  // namespace fragvqa
