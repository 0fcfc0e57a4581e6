// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace tuka {

/// Rows whose Euclidean norm falls below this are treated as degenerate.
inline constexpr double kNormEpsilon = 1e-12;

/// Dense N-dimensional array of doubles, row-major (last index fastest).
class DenseTensor {
public:
    DenseTensor() = default;
    explicit DenseTensor(std::vector<std::size_t> shape);
    DenseTensor(std::vector<std::size_t> shape, std::vector<double> data);

    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::vector<std::size_t> strides() const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }
    double& at(std::initializer_list<std::size_t> index);
    double at(std::initializer_list<std::size_t> index) const;

    bool operator==(const DenseTensor&) const = default;

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const;

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Row-major dense matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    /// 1 x n matrix holding `row`.
    static Matrix row_vector(std::span<const double> row);
    static Matrix from_tensor(const DenseTensor& t);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    DenseTensor as_tensor() const;
    Matrix transposed() const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Matrix arithmetic

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ · b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a · bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
/// y = m · x
std::vector<double> matvec(const Matrix& m, std::span<const double> x);

// ---------------------------------------------------------------------------
// Tensor algebra

/// Contracts axis `mode` of `t` against the columns of `m`.
/// The result has `t.shape()` with `shape[mode]` replaced by `m.rows()`.
DenseTensor mode_n_product(const DenseTensor& t, const Matrix& m, std::size_t mode);

/// core ×₀ factors[0] ×₁ factors[1] … over every mode in order.
DenseTensor tucker_reconstruct(const DenseTensor& core, std::span<const Matrix> factors);

/// Contracts modes 2..rank-1 of `core` against one row vector each and
/// squeezes them, leaving the r₁ × r₂ interaction matrix.
Matrix contract_core_rows(const DenseTensor& core, std::span<const std::span<const double>> rows);

/// Gradients of contract_core_rows. Accumulates into `core_grad` and
/// `row_grads` (which must be sized like `core` and `rows`).
void contract_core_rows_backward(const DenseTensor& core,
                                 std::span<const std::span<const double>> rows,
                                 const Matrix& grad_out,
                                 DenseTensor& core_grad,
                                 std::span<const std::span<double>> row_grads);

/// ΔW = U¹ · (𝒢 ×₃ u3_row ×₄ u4_row) · (U²)ᵀ for a fourth-order core.
Matrix contract_adapter(const DenseTensor& core,
                        const Matrix& u1,
                        const Matrix& u2,
                        std::span<const double> u3_row,
                        std::span<const double> u4_row);

/// Scales each row to unit Euclidean norm. Rows with norm below
/// kNormEpsilon are returned unchanged.
Matrix row_normalize(const Matrix& m);

double frobenius_norm_sq(const DenseTensor& t);
double frobenius_norm_sq(std::span<const double> values);
DenseTensor hadamard(const DenseTensor& a, const DenseTensor& b);

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace tuka
