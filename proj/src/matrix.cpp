#include "matrix.hpp"

#include <cmath>

#include "error.hpp"

namespace wssl {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_)
            fail_invalid("matrix initializer rows have unequal lengths");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

bool Matrix::is_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Matrix::ensure_finite(const std::string& what) const {
    if (!is_finite())
        fail_invalid(what + " contains a non-finite value");
}

Matrix Matrix::transposed() const {
    Matrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c)
            out.at(c, r) = at(r, c);
    return out;
}

Matrix Matrix::row(std::size_t r) const {
    if (r >= rows_) fail_invalid("row index out of range");
    Matrix out(1, cols_);
    for (std::size_t c = 0; c < cols_; ++c) out.at(0, c) = at(r, c);
    return out;
}

Matrix Matrix::matmul(const Matrix& rhs) const {
    if (cols_ != rhs.rows_)
        fail_invalid("matmul shape mismatch: " + shape_str() + " x " + rhs.shape_str());
    Matrix out(rows_, rhs.cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
        const double* lrow = data_.data() + r * cols_;
        double* orow = out.data() + r * rhs.cols_;
        for (std::size_t k = 0; k < cols_; ++k) {
            double lv = lrow[k];
            const double* rrow = rhs.data() + k * rhs.cols_;
            for (std::size_t c = 0; c < rhs.cols_; ++c)
                orow[c] += lv * rrow[c];
        }
    }
    return out;
}

Matrix& Matrix::operator+=(const Matrix& rhs) {
    if (!same_shape(rhs))
        fail_invalid("matrix add shape mismatch: " + shape_str() + " vs " + rhs.shape_str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += rhs.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& rhs) {
    if (!same_shape(rhs))
        fail_invalid("matrix sub shape mismatch: " + shape_str() + " vs " + rhs.shape_str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= rhs.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        fail_invalid("max_abs_diff shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a.values()[i] - b.values()[i]));
    return m;
}

} // namespace wssl
