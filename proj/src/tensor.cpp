#include "mata/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "mata/errors.hpp"

namespace mata {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("ragged matrix literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void Matrix::append_rows(std::span<const double> values) {
    if (cols_ == 0 || values.size() % cols_ != 0) {
        throw ShapeError("cannot append " + std::to_string(values.size()) +
                         " values to matrix " + shape_string());
    }
    data_.insert(data_.end(), values.begin(), values.end());
    rows_ += values.size() / cols_;
}

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " + a.shape_string() + " times " +
                         b.shape_string());
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            auto src = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
        }
    }
    return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_transposed shape mismatch: " + a.shape_string() + " times (" +
                         b.shape_string() + ")^T");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ar = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto br = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < ar.size(); ++k) acc += ar[k] * br[k];
            out(i, j) = acc;
        }
    }
    return out;
}

void softmax_row_inplace(std::span<double> scores) {
    double max = kMaskSentinel;
    for (double s : scores) max = std::max(max, s);
    if (scores.empty() || max == kMaskSentinel) {
        throw DegenerateRowError("softmax over a row with no unmasked entries");
    }
    double total = 0.0;
    for (double& s : scores) {
        s = s == kMaskSentinel ? 0.0 : std::exp(s - max);
        total += s;
    }
    for (double& s : scores) s /= total;
}

std::vector<double> softmax_row(std::span<const double> scores) {
    std::vector<double> out(scores.begin(), scores.end());
    softmax_row_inplace(out);
    return out;
}

std::vector<double> rms_norm(std::span<const double> x, std::span<const double> gain, double eps) {
    if (x.size() != gain.size()) {
        throw ShapeError("rms_norm length mismatch: x has " + std::to_string(x.size()) +
                         ", gain has " + std::to_string(gain.size()));
    }
    if (x.empty()) throw EmptyInputError("rms_norm of empty vector");
    double sum_sq = 0.0;
    for (double v : x) sum_sq += v * v;
    const double inv = 1.0 / std::sqrt(sum_sq / static_cast<double>(x.size()) + eps);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
    return out;
}

Matrix rope_apply(const Matrix& q_or_k, std::size_t position_offset) {
    const std::size_t dim = q_or_k.cols();
    if (dim % 2 != 0) {
        throw ShapeError("rope_apply needs an even column count, got " + q_or_k.shape_string());
    }
    Matrix out = q_or_k;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        const double pos = static_cast<double>(position_offset + r);
        auto row = out.row(r);
        for (std::size_t d = 0; d < dim / 2; ++d) {
            const double freq =
                std::pow(10000.0, -2.0 * static_cast<double>(d) / static_cast<double>(dim));
            const double angle = pos * freq;
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            const double x0 = row[2 * d];
            const double x1 = row[2 * d + 1];
            row[2 * d] = x0 * c - x1 * s;
            row[2 * d + 1] = x0 * s + x1 * c;
        }
    }
    return out;
}

std::size_t argmax_tie_low(std::span<const double> v) {
    if (v.empty()) throw EmptyInputError("argmax of empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

}  // namespace mata
