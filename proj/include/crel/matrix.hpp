#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace crel {

// Dense row-major matrix. Deliberately minimal: the trainers only need row
// views, fills, and a handful of BLAS-1 style helpers.
template <typename Real>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = Real(1);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<Real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

    template <typename Other>
    Matrix<Other> cast() const {
        Matrix<Other> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<Other>(data_[i]);
        return out;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Real> data_;
};

// The helpers below accept any contiguous sequences (spans, vectors) with a
// common element type.

template <typename SeqA, typename SeqB>
inline auto dot(const SeqA& a, const SeqB& b) {
    using Real = std::remove_cvref_t<decltype(a[0])>;
    assert(a.size() == b.size());
    Real s = Real(0);
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// y += alpha * x
template <typename Real, typename SeqX, typename SeqY>
inline void axpy(Real alpha, const SeqX& x, SeqY&& y) {
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// out = M * x  (M is rows x cols, x has cols entries, out has rows entries)
template <typename Real, typename SeqX, typename SeqOut>
inline void matvec(const Matrix<Real>& m, const SeqX& x, SeqOut&& out) {
    assert(x.size() == m.cols() && out.size() == m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), x);
}

// C = A * B
template <typename Real>
inline Matrix<Real> matmul(const Matrix<Real>& a, const Matrix<Real>& b) {
    assert(a.cols() == b.rows());
    Matrix<Real> c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const Real aik = a(i, k);
            if (aik == Real(0)) continue;
            axpy(aik, b.row(k), c.row(i));
        }
    }
    return c;
}

template <typename SeqA, typename SeqB>
inline double cosine(const SeqA& a, const SeqB& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return num / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace crel
