#include "tensor.hpp"

#include "errors.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numeric>
#include <sstream>

namespace gazediff {

namespace {

int64_t shape_numel(const std::vector<int64_t> & shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) {
            throw ShapeError("tensor dimensions must be positive, got " + std::to_string(d));
        }
        n *= d;
    }
    return n;
}

using MatConst = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MatMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

} // namespace

Tensor::Tensor(std::vector<int64_t> shp, std::vector<double> buf)
    : shape(std::move(shp)), data(std::move(buf)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("tensor buffer size does not match shape " + shape_str());
    }
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    int64_t n = shape_numel(shape);
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(n), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::initializer_list<double> values) {
    Tensor t;
    t.shape = {rows, cols};
    t.data.assign(values);
    if (static_cast<int64_t>(t.data.size()) != rows * cols) {
        throw ShapeError("matrix literal has wrong element count");
    }
    return t;
}

Tensor Tensor::row(std::initializer_list<double> values) {
    return matrix(1, static_cast<int64_t>(values.size()), values);
}

int64_t Tensor::numel() const {
    return static_cast<int64_t>(data.size());
}

int64_t Tensor::rows() const {
    if (shape.empty()) {
        return 0;
    }
    return shape.size() == 1 ? 1 : shape[0];
}

int64_t Tensor::cols() const {
    if (shape.empty()) {
        return 0;
    }
    return shape.size() == 1 ? shape[0] : numel() / shape[0];
}

double & Tensor::at(int64_t r, int64_t c) {
    return data[static_cast<size_t>(r * cols() + c)];
}

double Tensor::at(int64_t r, int64_t c) const {
    return data[static_cast<size_t>(r * cols() + c)];
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        os << shape[i] << (i + 1 < shape.size() ? "," : "");
    }
    os << ")";
    return os.str();
}

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw ShapeError("reshape " + shape_str() + " to incompatible element count");
    }
    Tensor t;
    t.shape = std::move(new_shape);
    t.data = data;
    return t;
}

void gemm(const Tensor & a, bool trans_a, const Tensor & b, bool trans_b, Tensor & out,
          bool accumulate) {
    const int64_t am = trans_a ? a.cols() : a.rows();
    const int64_t ak = trans_a ? a.rows() : a.cols();
    const int64_t bk = trans_b ? b.cols() : b.rows();
    const int64_t bn = trans_b ? b.rows() : b.cols();
    if (ak != bk) {
        throw ShapeError("gemm inner dimension mismatch " + a.shape_str() + " x " + b.shape_str());
    }
    if (!accumulate) {
        out = Tensor::zeros({am, bn});
    } else if (out.rows() != am || out.cols() != bn) {
        throw ShapeError("gemm accumulate target has wrong shape");
    }
    MatConst ma(a.data.data(), a.rows(), a.cols());
    MatConst mb(b.data.data(), b.rows(), b.cols());
    MatMut mo(out.data.data(), am, bn);
    if (!trans_a && !trans_b) {
        mo.noalias() += ma * mb;
    } else if (trans_a && !trans_b) {
        mo.noalias() += ma.transpose() * mb;
    } else if (!trans_a && trans_b) {
        mo.noalias() += ma * mb.transpose();
    } else {
        mo.noalias() += ma.transpose() * mb.transpose();
    }
}

Tensor matmul(const Tensor & a, const Tensor & b) {
    Tensor out;
    gemm(a, false, b, false, out);
    return out;
}

void require_shape(const Tensor & t, const std::vector<int64_t> & shape, const char * what) {
    if (t.shape != shape) {
        Tensor probe;
        probe.shape = shape;
        throw ShapeError(std::string(what) + ": expected shape " + probe.shape_str() + ", got " +
                         t.shape_str());
    }
}

} // namespace gazediff
