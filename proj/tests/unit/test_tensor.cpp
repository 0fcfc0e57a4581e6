// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "oracles.hpp"
#include "tuka/error.hpp"
#include "tuka/tensor.hpp"

using namespace tuka;
using namespace tuka::testing;

TEST_CASE("mode_n_product with identity leaves a matrix unchanged") {
    DenseTensor t({2, 2}, {1, 2, 3, 4});
    CHECK(mode_n_product(t, Matrix::identity(2), 0) == t);
    CHECK(mode_n_product(t, Matrix::identity(2), 1) == t);
}

TEST_CASE("mode_n_product matches a triple-loop contraction") {
    std::mt19937_64 rng(11);
    const DenseTensor t = random_tensor(rng, {2, 3, 4});
    const Matrix m = random_matrix(rng, 5, 3);
    const DenseTensor r = mode_n_product(t, m, 1);
    REQUIRE(r.shape() == std::vector<std::size_t>{2, 5, 4});
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t c = 0; c < 4; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < 3; ++j) s += m(i, j) * t.at({a, j, c});
                CHECK(r.at({a, i, c}) == doctest::Approx(s).epsilon(1e-14));
            }
}

TEST_CASE("mode_n_product of zeros is zeros") {
    std::mt19937_64 rng(3);
    const DenseTensor zeros({2, 2, 2});
    const DenseTensor r = mode_n_product(zeros, random_matrix(rng, 3, 2), 2);
    CHECK(r.shape() == std::vector<std::size_t>{2, 2, 3});
    for (double v : r.data()) CHECK(v == 0.0);
}

TEST_CASE("mode_n_product reports the offending mode") {
    DenseTensor t({2, 3, 4});
    try {
        mode_n_product(t, Matrix(2, 2), 1);
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        const std::string what = e.what();
        CHECK(what.find("mode 1") != std::string::npos);
        CHECK(what.find("size 3") != std::string::npos);
    }
    CHECK_THROWS_AS(mode_n_product(t, Matrix(3, 3), 3), DimensionError);
}

TEST_CASE("identity is neutral for every mode, ranks 2 to 5") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> dim(1, 4);
    for (std::size_t rank = 2; rank <= 5; ++rank) {
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<std::size_t> shape(rank);
            for (auto& d : shape) d = dim(rng);
            const DenseTensor t = random_tensor(rng, shape);
            for (std::size_t mode = 0; mode < rank; ++mode)
                CHECK(mode_n_product(t, Matrix::identity(shape[mode]), mode) == t);
        }
    }
}

TEST_CASE("mode products along distinct modes commute") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const DenseTensor t = random_tensor(rng, {3, 2, 4, 2});
        const Matrix a = random_matrix(rng, 2, 3);
        const Matrix b = random_matrix(rng, 5, 4);
        const DenseTensor ab = mode_n_product(mode_n_product(t, a, 0), b, 2);
        const DenseTensor ba = mode_n_product(mode_n_product(t, b, 2), a, 0);
        CHECK(max_abs_diff(ab.data(), ba.data()) < 1e-12);
    }
}

TEST_CASE("tucker_reconstruct") {
    std::mt19937_64 rng(21);

    SUBCASE("identity factors return the core") {
        const DenseTensor core = random_tensor(rng, {2, 3, 2, 4});
        std::vector<Matrix> eye;
        for (auto d : core.shape()) eye.push_back(Matrix::identity(d));
        CHECK(tucker_reconstruct(core, eye) == core);
    }

    SUBCASE("matches the nested-loop expansion on random instances") {
        std::uniform_int_distribution<std::size_t> dim(1, 4);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<std::size_t> ranks(4);
            for (auto& r : ranks) r = dim(rng);
            const DenseTensor core = random_tensor(rng, ranks);
            std::vector<Matrix> factors;
            for (auto r : ranks) factors.push_back(random_matrix(rng, dim(rng), r));
            const DenseTensor fast = tucker_reconstruct(core, factors);
            const DenseTensor slow = brute_force_tucker(core, factors);
            REQUIRE(fast.shape() == slow.shape());
            CHECK(max_abs_diff(fast.data(), slow.data()) < 1e-10);
        }
    }

    SUBCASE("is linear in the core") {
        const DenseTensor core = random_tensor(rng, {2, 2, 2, 2});
        std::vector<Matrix> factors;
        for (int k = 0; k < 4; ++k) factors.push_back(random_matrix(rng, 3, 2));
        DenseTensor scaled = core;
        for (double& v : scaled.data()) v *= -2.5;
        const DenseTensor x = tucker_reconstruct(core, factors);
        const DenseTensor y = tucker_reconstruct(scaled, factors);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(-2.5 * x[i]).epsilon(1e-12));
    }

    SUBCASE("dimension errors carry the mode") {
        const DenseTensor core({2, 2, 2, 2});
        std::vector<Matrix> factors(4, Matrix(3, 2));
        factors[2] = Matrix(3, 5);
        CHECK_THROWS_WITH_AS(tucker_reconstruct(core, factors), doctest::Contains("mode 2"), DimensionError);
        factors.pop_back();
        CHECK_THROWS_AS(tucker_reconstruct(core, factors), DimensionError);
    }
}

TEST_CASE("contract_adapter") {
    std::mt19937_64 rng(34);

    SUBCASE("zero scene row gives zero delta") {
        const DenseTensor core = random_tensor(rng, {2, 3, 2, 2});
        const std::vector<double> zero(2, 0.0);
        const auto u4 = random_vector(rng, 2);
        const Matrix dw = contract_adapter(core, random_matrix(rng, 4, 2), random_matrix(rng, 5, 3), zero, u4);
        CHECK(dw.rows() == 4);
        CHECK(dw.cols() == 5);
        for (double v : dw.data()) CHECK(v == 0.0);
    }

    SUBCASE("rank-1 case is a scaled outer product") {
        const DenseTensor core({1, 1, 1, 1}, {1.5});
        const Matrix v(3, 1, {1, 2, 3});
        const Matrix w(2, 1, {4, -1});
        const std::vector<double> one{1.0};
        const Matrix dw = contract_adapter(core, v, w, one, one);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j) CHECK(dw(i, j) == doctest::Approx(1.5 * v(i, 0) * w(j, 0)));
    }

    SUBCASE("equals full reconstruction with 1 x r row factors") {
        for (int trial = 0; trial < 20; ++trial) {
            const DenseTensor core = random_tensor(rng, {3, 2, 4, 3});
            const Matrix u1 = random_matrix(rng, 4, 3);
            const Matrix u2 = random_matrix(rng, 3, 2);
            const auto u3 = random_vector(rng, 4);
            const auto u4 = random_vector(rng, 3);
            const DenseTensor full =
                tucker_reconstruct(core, std::vector<Matrix>{u1, u2, Matrix::row_vector(u3), Matrix::row_vector(u4)});
            const Matrix dw = contract_adapter(core, u1, u2, u3, u4);
            CHECK(max_abs_diff(dw.data(), full.data()) < 1e-10);
            CHECK(max_abs_diff(dw.data(), brute_force_adapter(core, u1, u2, u3, u4).data()) < 1e-10);
        }
    }

    SUBCASE("superposition in each expert row") {
        const DenseTensor core = random_tensor(rng, {2, 2, 3, 3});
        const Matrix u1 = random_matrix(rng, 3, 2);
        const Matrix u2 = random_matrix(rng, 4, 2);
        const auto a = random_vector(rng, 3), b = random_vector(rng, 3), v = random_vector(rng, 3);
        std::vector<double> mix(3);
        for (int k = 0; k < 3; ++k) mix[k] = 0.7 * a[k] - 1.3 * b[k];
        const Matrix lhs3 = contract_adapter(core, u1, u2, mix, v);
        const Matrix rhs3 = 0.7 * contract_adapter(core, u1, u2, a, v) + (-1.3) * contract_adapter(core, u1, u2, b, v);
        CHECK(max_abs_diff(lhs3.data(), rhs3.data()) < 1e-12);
        const Matrix lhs4 = contract_adapter(core, u1, u2, v, mix);
        const Matrix rhs4 = 0.7 * contract_adapter(core, u1, u2, v, a) + (-1.3) * contract_adapter(core, u1, u2, v, b);
        CHECK(max_abs_diff(lhs4.data(), rhs4.data()) < 1e-12);
    }

    SUBCASE("shape errors") {
        const DenseTensor core({2, 2, 2, 2});
        const std::vector<double> two(2, 1.0), three(3, 1.0);
        CHECK_THROWS_AS(contract_adapter(core, Matrix(3, 2), Matrix(3, 2), three, two), DimensionError);
        CHECK_THROWS_AS(contract_adapter(core, Matrix(3, 3), Matrix(3, 2), two, two), DimensionError);
        CHECK_THROWS_AS(contract_adapter(DenseTensor({2, 2, 2}), Matrix(3, 2), Matrix(3, 2), two, two), DimensionError);
    }
}

TEST_CASE("contract_core_rows backward matches finite differences") {
    std::mt19937_64 rng(55);
    DenseTensor core = random_tensor(rng, {2, 3, 2, 3, 2});
    std::vector<std::vector<double>> rows{random_vector(rng, 2), random_vector(rng, 3), random_vector(rng, 2)};
    const Matrix weight = random_matrix(rng, 2, 3);
    auto loss = [&](const DenseTensor& g, const std::vector<std::vector<double>>& r) {
        std::vector<std::span<const double>> views(r.begin(), r.end());
        const Matrix c = contract_core_rows(g, views);
        return dot(c.data(), weight.data());
    };

    DenseTensor core_grad(core.shape());
    std::vector<std::vector<double>> row_grads{std::vector<double>(2), std::vector<double>(3), std::vector<double>(2)};
    std::vector<std::span<const double>> views(rows.begin(), rows.end());
    std::vector<std::span<double>> grad_views(row_grads.begin(), row_grads.end());
    contract_core_rows_backward(core, views, weight, core_grad, grad_views);

    const auto numeric_core = central_differences(core.storage(), [&](const std::vector<double>& x) {
        return loss(DenseTensor(core.shape(), x), rows);
    });
    CHECK(max_abs_diff(core_grad.data(), numeric_core) < 1e-8);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto numeric = central_differences(rows[k], [&](const std::vector<double>& x) {
            auto r = rows;
            r[k] = x;
            return loss(core, r);
        });
        CHECK(max_abs_diff(row_grads[k], numeric) < 1e-8);
    }
}

TEST_CASE("row_normalize") {
    const Matrix m(1, 2, {3, 4});
    const Matrix n = row_normalize(m);
    CHECK(n(0, 0) == doctest::Approx(0.6));
    CHECK(n(0, 1) == doctest::Approx(0.8));
    CHECK(row_normalize(Matrix::identity(3)) == Matrix::identity(3));

    const Matrix with_zero(2, 2, {0, 0, 1, 1});
    const Matrix z = row_normalize(with_zero);
    CHECK(z(0, 0) == 0.0);
    CHECK(z(0, 1) == 0.0);

    std::mt19937_64 rng(9);
    const Matrix r = row_normalize(random_matrix(rng, 20, 7));
    for (std::size_t i = 0; i < r.rows(); ++i) CHECK(std::abs(std::sqrt(dot(r.row(i), r.row(i))) - 1.0) < 1e-12);
}

TEST_CASE("frobenius norm and hadamard") {
    CHECK(frobenius_norm_sq(DenseTensor({2, 2}, {1, 2, 2, 0})) == 9.0);
    std::mt19937_64 rng(1);
    const DenseTensor x = random_tensor(rng, {2, 3});
    CHECK(hadamard(x, DenseTensor({2, 3}, std::vector<double>(6, 1.0))) == x);
    const DenseTensor zeros = hadamard(x, DenseTensor({2, 3}));
    for (double v : zeros.data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(hadamard(x, DenseTensor({3, 2})), DimensionError);
}

TEST_CASE("tensor construction invariants") {
    CHECK_THROWS_AS(DenseTensor({2, 0}), DimensionError);
    CHECK_THROWS_AS(DenseTensor({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Matrix(2, 2, {1}), DimensionError);
    DenseTensor t({2, 3});
    CHECK_THROWS_AS(t.at({2, 0}), IndexError);
}
