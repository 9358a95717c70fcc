#include "driftlab/gradcore/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

std::size_t shape_size(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    for (auto d : shape_)
        if (d == 0) throw ConfigError("tensor dimensions must be positive: " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_)
        if (d == 0) throw ConfigError("tensor dimensions must be positive: " + shape_string(shape_));
    if (shape_size(shape_) != data_.size())
        throw ConfigError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                          shape_string(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

template <std::size_t R>
void rows_kernel(const double* x, std::size_t inner, const double* w, std::size_t n, double* out) {
    constexpr std::size_t J = 32;
    std::size_t j0 = 0;
    for (; j0 + J <= n; j0 += J) {
        double acc[R][J] = {};
        for (std::size_t k = 0; k < inner; ++k) {
            const double* wr = w + k * n + j0;
            for (std::size_t r = 0; r < R; ++r) {
                const double xv = x[r * inner + k];
                for (std::size_t j = 0; j < J; ++j) acc[r][j] += xv * wr[j];
            }
        }
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t j = 0; j < J; ++j) out[r * n + j0 + j] = acc[r][j];
    }
    for (; j0 < n; ++j0) {
        for (std::size_t r = 0; r < R; ++r) {
            double acc = 0.0;
            for (std::size_t k = 0; k < inner; ++k) acc += x[r * inner + k] * w[k * n + j0];
            out[r * n + j0] = acc;
        }
    }
}

}  // namespace

void gemm(std::span<const double> x, std::size_t batch, std::size_t inner, std::span<const double> w,
          std::size_t out_cols, std::span<double> out) {
    if (x.size() != batch * inner || w.size() != inner * out_cols || out.size() != batch * out_cols)
        throw ConfigError("gemm: operand sizes do not match");
    std::size_t b = 0;
    for (; b + 4 <= batch; b += 4)
        rows_kernel<4>(x.data() + b * inner, inner, w.data(), out_cols, out.data() + b * out_cols);
    for (; b < batch; ++b) rows_kernel<1>(x.data() + b * inner, inner, w.data(), out_cols, out.data() + b * out_cols);
}

std::vector<double> transpose(std::span<const double> m, std::size_t rows, std::size_t cols) {
    std::vector<double> t(m.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = m[r * cols + c];
    return t;
}

}  // namespace dlab
