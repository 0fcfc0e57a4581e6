// SPDX-License-Identifier: Apache-2.0
#include "tuka/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "tuka/error.hpp"

namespace tuka {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

void check_shape(const std::vector<std::size_t>& shape) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == 0) {
            throw DimensionError("tensor shape " + shape_string(shape) + " has a zero extent at axis " +
                                 std::to_string(i));
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// DenseTensor

DenseTensor::DenseTensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_product(shape_), 0.0);
}

DenseTensor::DenseTensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_product(shape_) != data_.size()) {
        throw DimensionError("tensor shape " + shape_string(shape_) + " needs " +
                             std::to_string(shape_product(shape_)) + " values, got " +
                             std::to_string(data_.size()));
    }
}

std::vector<std::size_t> DenseTensor::strides() const {
    std::vector<std::size_t> s(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
    return s;
}

std::size_t DenseTensor::offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
        throw DimensionError("index of rank " + std::to_string(index.size()) + " into tensor of rank " +
                             std::to_string(shape_.size()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= shape_[axis]) {
            throw IndexError("index " + std::to_string(i) + " out of range for axis " + std::to_string(axis) +
                             " of size " + std::to_string(shape_[axis]));
        }
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return flat;
}

double& DenseTensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double DenseTensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ * cols_ != data_.size()) {
        throw DimensionError("matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) + " needs " +
                             std::to_string(rows_ * cols_) + " values, got " + std::to_string(data_.size()));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::row_vector(std::span<const double> row) {
    return Matrix(1, row.size(), std::vector<double>(row.begin(), row.end()));
}

Matrix Matrix::from_tensor(const DenseTensor& t) {
    if (t.rank() != 2) throw DimensionError("matrix view needs a rank-2 tensor, got rank " + std::to_string(t.rank()));
    return Matrix(t.dim(0), t.dim(1), t.storage());
}

DenseTensor Matrix::as_tensor() const { return DenseTensor({rows_, cols_}, data_); }

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                             std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: row counts " + std::to_string(a.rows()) + " and " +
                             std::to_string(b.rows()) + " differ");
    }
    Matrix c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        auto arow = a.row(k);
        auto brow = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            auto out = c.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aki * brow[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: column counts " + std::to_string(a.cols()) + " and " +
                             std::to_string(b.cols()) + " differ");
    }
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
    return c;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("matrix sum: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.storage()[i] += b.storage()[i];
    return c;
}

Matrix operator*(double s, const Matrix& a) {
    Matrix c = a;
    for (double& v : c.storage()) v *= s;
    return c;
}

std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    if (m.cols() != x.size()) {
        throw DimensionError("matvec: matrix has " + std::to_string(m.cols()) + " columns, vector has " +
                             std::to_string(x.size()) + " entries");
    }
    std::vector<double> y(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) y[i] = dot(m.row(i), x);
    return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("dot: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// ---------------------------------------------------------------------------
// Tensor algebra

DenseTensor mode_n_product(const DenseTensor& t, const Matrix& m, std::size_t mode) {
    if (mode >= t.rank()) {
        throw DimensionError("mode_n_product: mode " + std::to_string(mode) + " out of range for rank " +
                             std::to_string(t.rank()));
    }
    const std::size_t n = t.dim(mode);
    if (m.cols() != n) {
        throw DimensionError("mode_n_product: mode " + std::to_string(mode) + " has size " + std::to_string(n) +
                             " but matrix has " + std::to_string(m.cols()) + " columns");
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < mode; ++i) outer *= t.dim(i);
    std::size_t inner = 1;
    for (std::size_t i = mode + 1; i < t.rank(); ++i) inner *= t.dim(i);

    std::vector<std::size_t> shape = t.shape();
    shape[mode] = m.rows();
    DenseTensor out(shape);
    const auto src = t.data();
    auto dst = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        const double* in_block = src.data() + o * n * inner;
        double* out_block = dst.data() + o * m.rows() * inner;
        for (std::size_t i = 0; i < m.rows(); ++i) {
            double* out_row = out_block + i * inner;
            for (std::size_t j = 0; j < n; ++j) {
                const double w = m(i, j);
                if (w == 0.0) continue;
                const double* in_row = in_block + j * inner;
                for (std::size_t k = 0; k < inner; ++k) out_row[k] += w * in_row[k];
            }
        }
    }
    return out;
}

DenseTensor tucker_reconstruct(const DenseTensor& core, std::span<const Matrix> factors) {
    if (factors.size() != core.rank()) {
        throw DimensionError("tucker_reconstruct: core of rank " + std::to_string(core.rank()) + " with " +
                             std::to_string(factors.size()) + " factors");
    }
    DenseTensor result = core;
    for (std::size_t mode = 0; mode < factors.size(); ++mode) result = mode_n_product(result, factors[mode], mode);
    return result;
}

namespace {

void check_core_rows(const DenseTensor& core, std::span<const std::span<const double>> rows) {
    if (core.rank() < 2 || rows.size() + 2 != core.rank()) {
        throw DimensionError("contract_core_rows: core of rank " + std::to_string(core.rank()) + " with " +
                             std::to_string(rows.size()) + " expert rows");
    }
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k].size() != core.dim(k + 2)) {
            throw DimensionError("contract_core_rows: mode " + std::to_string(k + 2) + " has size " +
                                 std::to_string(core.dim(k + 2)) + " but expert row has " +
                                 std::to_string(rows[k].size()) + " entries");
        }
    }
}

// Outer product of the rows, flattened row-major over the tail modes.
std::vector<double> tail_weights(std::span<const std::span<const double>> rows) {
    std::vector<double> w{1.0};
    for (const auto& row : rows) {
        std::vector<double> next(w.size() * row.size());
        for (std::size_t a = 0; a < w.size(); ++a)
            for (std::size_t b = 0; b < row.size(); ++b) next[a * row.size() + b] = w[a] * row[b];
        w = std::move(next);
    }
    return w;
}

}  // namespace

Matrix contract_core_rows(const DenseTensor& core, std::span<const std::span<const double>> rows) {
    check_core_rows(core, rows);
    const std::vector<double> w = tail_weights(rows);
    const std::size_t r1 = core.dim(0);
    const std::size_t r2 = core.dim(1);
    const std::size_t tail = w.size();
    Matrix c(r1, r2);
    const auto g = core.data();
    for (std::size_t ij = 0; ij < r1 * r2; ++ij) {
        const double* block = g.data() + ij * tail;
        double s = 0.0;
        for (std::size_t k = 0; k < tail; ++k) s += block[k] * w[k];
        c.storage()[ij] = s;
    }
    return c;
}

void contract_core_rows_backward(const DenseTensor& core,
                                 std::span<const std::span<const double>> rows,
                                 const Matrix& grad_out,
                                 DenseTensor& core_grad,
                                 std::span<const std::span<double>> row_grads) {
    check_core_rows(core, rows);
    const std::size_t r1 = core.dim(0);
    const std::size_t r2 = core.dim(1);
    if (grad_out.rows() != r1 || grad_out.cols() != r2) throw DimensionError("contract_core_rows_backward: grad shape");
    if (core_grad.shape() != core.shape()) throw DimensionError("contract_core_rows_backward: core grad shape");
    if (row_grads.size() != rows.size()) throw DimensionError("contract_core_rows_backward: row grad count");

    const std::vector<double> w = tail_weights(rows);
    const std::size_t tail = w.size();
    const auto g = core.data();
    auto dg = core_grad.data();

    // h[τ] = Σ_ij dC[i,j] G[i,j,τ]
    std::vector<double> h(tail, 0.0);
    for (std::size_t ij = 0; ij < r1 * r2; ++ij) {
        const double d = grad_out.storage()[ij];
        if (d == 0.0) continue;
        const double* block = g.data() + ij * tail;
        double* dblock = dg.data() + ij * tail;
        for (std::size_t k = 0; k < tail; ++k) {
            dblock[k] += d * w[k];
            h[k] += d * block[k];
        }
    }

    // Walk the tail multi-index; each row gradient collects h[τ] times the
    // product of the other rows at τ.
    std::vector<std::size_t> idx(rows.size(), 0);
    for (std::size_t flat = 0; flat < tail; ++flat) {
        for (std::size_t k = 0; k < rows.size(); ++k) {
            double p = h[flat];
            for (std::size_t other = 0; other < rows.size(); ++other)
                if (other != k) p *= rows[other][idx[other]];
            row_grads[k][idx[k]] += p;
        }
        for (std::size_t k = rows.size(); k-- > 0;) {
            if (++idx[k] < rows[k].size()) break;
            idx[k] = 0;
        }
    }
}

Matrix contract_adapter(const DenseTensor& core,
                        const Matrix& u1,
                        const Matrix& u2,
                        std::span<const double> u3_row,
                        std::span<const double> u4_row) {
    if (core.rank() != 4) throw DimensionError("contract_adapter: core must be rank 4, got " + std::to_string(core.rank()));
    const std::size_t r1 = core.dim(0), r2 = core.dim(1), r3 = core.dim(2), r4 = core.dim(3);
    if (u1.cols() != r1) {
        throw DimensionError("contract_adapter: mode 0 has size " + std::to_string(r1) + " but U1 has " +
                             std::to_string(u1.cols()) + " columns");
    }
    if (u2.cols() != r2) {
        throw DimensionError("contract_adapter: mode 1 has size " + std::to_string(r2) + " but U2 has " +
                             std::to_string(u2.cols()) + " columns");
    }
    if (u3_row.size() != r3 || u4_row.size() != r4) {
        throw DimensionError("contract_adapter: expert rows of length " + std::to_string(u3_row.size()) + "/" +
                             std::to_string(u4_row.size()) + " for core modes " + std::to_string(r3) + "/" +
                             std::to_string(r4));
    }

    Matrix c(r1, r2);
    const auto g = core.data();
    for (std::size_t ij = 0; ij < r1 * r2; ++ij) {
        const double* block = g.data() + ij * r3 * r4;
        double s = 0.0;
        for (std::size_t k = 0; k < r3; ++k) {
            const double uk = u3_row[k];
            if (uk == 0.0) continue;
            const double* line = block + k * r4;
            double inner = 0.0;
            for (std::size_t m = 0; m < r4; ++m) inner += line[m] * u4_row[m];
            s += uk * inner;
        }
        c.storage()[ij] = s;
    }
    return matmul_nt(matmul(u1, c), u2);
}

Matrix row_normalize(const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto row = out.row(i);
        const double norm = std::sqrt(dot(row, row));
        if (norm < kNormEpsilon) continue;
        for (double& v : row) v /= norm;
    }
    return out;
}

double frobenius_norm_sq(std::span<const double> values) {
    double s = 0.0;
    for (double v : values) s += v * v;
    return s;
}

double frobenius_norm_sq(const DenseTensor& t) { return frobenius_norm_sq(t.data()); }

DenseTensor hadamard(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("hadamard: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
    }
    DenseTensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

}  // namespace tuka
