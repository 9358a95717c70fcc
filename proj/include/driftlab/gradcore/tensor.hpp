#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Rows/cols view a tensor as a matrix: leading dim by the rest.
    std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_.front(); }
    std::size_t cols() const noexcept { return rows() == 0 ? 0 : data_.size() / rows(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) noexcept { return std::span(data_).subspan(r * cols(), cols()); }
    std::span<const double> row(std::size_t r) const noexcept {
        return std::span(data_).subspan(r * cols(), cols());
    }

    Tensor reshaped(Shape shape) const;
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// out[B,N] = x[B,K] * w[K,N]. Each output element is accumulated over k in
/// increasing order, independent of B, so a row's result never depends on
/// which other rows share the batch.
void gemm(std::span<const double> x, std::size_t batch, std::size_t inner, std::span<const double> w,
          std::size_t out_cols, std::span<double> out);

/// Row-major transpose of a rows x cols matrix.
std::vector<double> transpose(std::span<const double> m, std::size_t rows, std::size_t cols);

}  // namespace dlab
