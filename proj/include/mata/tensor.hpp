#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace mata {

/// Score value marking a causally masked (key after query) position.
inline constexpr double kMaskSentinel = -std::numeric_limits<double>::infinity();

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    /// Appends rows from a row-major buffer whose length is a multiple of cols().
    void append_rows(std::span<const double> values);

    /// "RxC" for diagnostics.
    std::string shape_string() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// a * b^T without materializing the transpose.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

/// Numerically stable softmax. Sentinel entries map to exactly 0.
/// Throws DegenerateRowError when every entry is the sentinel.
std::vector<double> softmax_row(std::span<const double> scores);

/// In-place variant used by the attention kernel.
void softmax_row_inplace(std::span<double> scores);

std::vector<double> rms_norm(std::span<const double> x, std::span<const double> gain, double eps);

/// Rotary position embedding. Row r is treated as absolute position
/// position_offset + r; pair (2d, 2d+1) rotates by pos * 10000^(-2d/cols).
Matrix rope_apply(const Matrix& q_or_k, std::size_t position_offset);

/// Index of the maximum; ties go to the lowest index.
std::size_t argmax_tie_low(std::span<const double> v);

}  // namespace mata
