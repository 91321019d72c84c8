#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "cncd/core/errors.hpp"

namespace cncd {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw UsageError("Matrix: data length " + std::to_string(data_.size()) +
                             " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw UsageError("Matrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix from_rows(const std::vector<Vector>& rows) {
        if (rows.empty()) return {};
        Matrix m(rows.size(), rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != m.cols_) throw UsageError("Matrix::from_rows: ragged rows");
            std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    Vector row_vector(std::size_t r) const {
        auto s = row(r);
        return {s.begin(), s.end()};
    }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw UsageError("dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a) {
    return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}
inline bool all_finite(const Matrix& m) { return all_finite(m.data()); }

/// a·b / (‖a‖‖b‖), clipped to [-1, 1].
inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw UsageError("cosine_sim: dimension mismatch");
    const double na = norm(a);
    const double nb = norm(b);
    if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateInputError("cosine_sim: zero-norm input");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Temperature-scaled softmax with max subtraction.
inline Vector softmax(std::span<const double> scores, double temperature = 1.0) {
    if (!(temperature > 0.0)) throw ParameterError("softmax: temperature must be > 0");
    if (scores.empty()) return {};
    if (!all_finite(scores)) throw UsageError("softmax: non-finite score");
    const double mx = *std::max_element(scores.begin(), scores.end());
    Vector out(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp((scores[i] - mx) / temperature);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

inline double leaky_relu(double x, double slope = 0.01) { return x >= 0.0 ? x : slope * x; }

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw UsageError("matmul: " + shape_str(a) + " * " + shape_str(b));
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* o = out.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* br = b.row(k).data();
            for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// Copies each row scaled to unit L2 norm.
inline Matrix normalize_rows(const Matrix& a) {
    Matrix out = a;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double n = norm(a.row(r));
        if (!(n > 0.0)) throw DegenerateInputError("normalize_rows: zero-norm row " + std::to_string(r));
        for (double& v : out.row(r)) v /= n;
    }
    return out;
}

/// Pairwise cosine similarities between rows of `a` and rows of `b`.
inline Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw UsageError("cosine_matrix: dimension mismatch");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = cosine_sim(a.row(i), b.row(j));
    return out;
}

inline Matrix select_rows(const Matrix& a, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), a.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        auto src = a.row(idx[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

inline Matrix vstack(const std::vector<const Matrix*>& parts) {
    std::size_t rows = 0;
    std::size_t cols = parts.empty() ? 0 : parts.front()->cols();
    for (const Matrix* p : parts) {
        if (p->cols() != cols && p->rows() > 0) throw UsageError("vstack: column mismatch");
        rows += p->rows();
    }
    Matrix out(rows, cols);
    std::size_t at = 0;
    for (const Matrix* p : parts) {
        std::copy(p->data().begin(), p->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at * cols));
        at += p->rows();
    }
    return out;
}

/// Index of the maximum; ties go to the smallest index.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace cncd
