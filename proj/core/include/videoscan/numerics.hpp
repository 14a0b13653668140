#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "videoscan/error.hpp"

namespace videoscan {

// Dense row-major matrix. float is the runtime precision; double exists for
// the gradient-check mirror of every kernel.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data);
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows);

  static BasicMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  void fill(T value);
  void append_row(std::span<const T> values);
  void erase_row(std::size_t r);
  void resize_rows(std::size_t rows);

  template <typename U>
  BasicMatrix<U> cast() const {
    BasicMatrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.flat()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool all_finite() const noexcept;

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using Matrix64 = BasicMatrix<double>;

// Multiply-add counter used for cost accounting. One counter per thread, so
// the kernels stay pure with respect to each other.
std::uint64_t& flop_counter() noexcept;

class FlopScope {
 public:
  FlopScope() : start_(flop_counter()) {}
  std::uint64_t elapsed() const noexcept { return flop_counter() - start_; }

 private:
  std::uint64_t start_;
};

// C = A * B. Every output element accumulates over the inner index in
// ascending order, so repeated calls are bit-identical.
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

// C = A * B^T
template <typename T>
BasicMatrix<T> matmul_bt(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

// C = A^T * B
template <typename T>
BasicMatrix<T> matmul_at(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

template <typename T>
void add_inplace(BasicMatrix<T>& dst, const BasicMatrix<T>& src);

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& m);

template <typename T>
T dot(std::span<const T> a, std::span<const T> b);

// In-place softmax of one row. allow[j] == 0 drops entry j (its output is
// exactly zero). An empty allow span means every entry is visible.
template <typename T>
void softmax_row(std::span<T> row, std::span<const std::uint8_t> allow = {});

// Row-wise softmax. allow, when non-empty, is a rows x cols 0/1 grid.
template <typename T>
BasicMatrix<T> softmax_rows(const BasicMatrix<T>& m, std::span<const std::uint8_t> allow = {});

template <typename T>
std::vector<T> layer_norm(std::span<const T> v, std::span<const T> gain, std::span<const T> bias,
                          T eps);

template <typename T>
T cosine_similarity(std::span<const T> a, std::span<const T> b);

// Exact (erf-based) GELU and its derivative.
template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(3.14159265358979323846));
  return cdf + x * pdf;
}

extern template class BasicMatrix<float>;
extern template class BasicMatrix<double>;

}  // namespace videoscan
