#ifndef WSSL_MATRIX_HPP
#define WSSL_MATRIX_HPP

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace wssl {

// Dense row-major matrix of 64-bit floats. Carries feature batches,
// activations, gradients, and parameter tensors.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<const double> values() const { return data_; }
    std::span<double> values() { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool is_finite() const;
    // Throws invalid_argument naming `what` when a NaN/Inf entry is present.
    void ensure_finite(const std::string& what) const;

    Matrix transposed() const;
    Matrix row(std::size_t r) const;

    // this (r x k) times rhs (k x c).
    Matrix matmul(const Matrix& rhs) const;

    Matrix& operator+=(const Matrix& rhs);
    Matrix& operator-=(const Matrix& rhs);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

    std::string shape_str() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Matrix& a, const Matrix& b);

} // namespace wssl

#endif
