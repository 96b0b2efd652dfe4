#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace gazediff {

// Dense row-major tensor, 64-bit throughout. Rank is dynamic; most of the
// model math treats tensors as matrices via rows()/cols().
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> shp, std::vector<double> buf);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor matrix(int64_t rows, int64_t cols, std::initializer_list<double> values);
    static Tensor row(std::initializer_list<double> values);

    int64_t numel() const;
    int rank() const { return static_cast<int>(shape.size()); }

    // Matrix view: rank-1 tensors count as a single row.
    int64_t rows() const;
    int64_t cols() const;

    double & at(int64_t r, int64_t c);
    double at(int64_t r, int64_t c) const;

    bool same_shape(const Tensor & other) const { return shape == other.shape; }
    bool all_finite() const;
    std::string shape_str() const;

    Tensor reshaped(std::vector<int64_t> shape) const;
};

// out = a(^T) * b(^T); accumulate adds into out instead of overwriting.
void gemm(const Tensor & a, bool trans_a, const Tensor & b, bool trans_b, Tensor & out,
          bool accumulate = false);

Tensor matmul(const Tensor & a, const Tensor & b);

void require_shape(const Tensor & t, const std::vector<int64_t> & shape, const char * what);

} // namespace gazediff
