#include "videoscan/numerics.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace videoscan {

namespace {

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kShape, "matrix data length " + std::to_string(data_.size()) +
                                       " does not match " + dims(rows, cols));
  }
}

template <typename T>
BasicMatrix<T>::BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error(ErrorCode::kShape, "ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::identity(std::size_t n) {
  BasicMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
  return m;
}

template <typename T>
void BasicMatrix<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void BasicMatrix<T>::append_row(std::span<const T> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) {
    throw Error(ErrorCode::kShape, "append_row: expected " + std::to_string(cols_) +
                                       " values, got " + std::to_string(values.size()));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

template <typename T>
void BasicMatrix<T>::erase_row(std::size_t r) {
  if (r >= rows_) throw Error(ErrorCode::kShape, "erase_row out of range");
  const auto first = data_.begin() + static_cast<std::ptrdiff_t>(r * cols_);
  data_.erase(first, first + static_cast<std::ptrdiff_t>(cols_));
  --rows_;
}

template <typename T>
void BasicMatrix<T>::resize_rows(std::size_t rows) {
  data_.resize(rows * cols_, T(0));
  rows_ = rows;
}

template <typename T>
bool BasicMatrix<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class BasicMatrix<float>;
template class BasicMatrix<double>;

std::uint64_t& flop_counter() noexcept {
  thread_local std::uint64_t counter = 0;
  return counter;
}

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kShape,
                "matmul " + dims(a.rows(), a.cols()) + " by " + dims(b.rows(), b.cols()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  BasicMatrix<T> c(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    T* out = c.data() + i * m;
    const T* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) out[j] += av * brow[j];
    }
  }
  flop_counter() += 2ULL * n * k * m;
  return c;
}

template <typename T>
BasicMatrix<T> matmul_bt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kShape,
                "matmul_bt " + dims(a.rows(), a.cols()) + " by " + dims(b.rows(), b.cols()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  BasicMatrix<T> c(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      c(i, j) = dot<T>(a.row(i), b.row(j));
    }
  }
  flop_counter() += 2ULL * n * k * m;
  return c;
}

template <typename T>
BasicMatrix<T> matmul_at(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::kShape,
                "matmul_at " + dims(a.rows(), a.cols()) + " by " + dims(b.rows(), b.cols()));
  }
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  BasicMatrix<T> c(n, m);
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a.data() + p * n;
    const T* brow = b.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const T av = arow[i];
      T* out = c.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) out[j] += av * brow[j];
    }
  }
  flop_counter() += 2ULL * n * k * m;
  return c;
}

template <typename T>
void add_inplace(BasicMatrix<T>& dst, const BasicMatrix<T>& src) {
  if (dst.rows() != src.rows() || dst.cols() != src.cols()) {
    throw Error(ErrorCode::kShape, "add " + dims(dst.rows(), dst.cols()) + " and " +
                                       dims(src.rows(), src.cols()));
  }
  auto d = dst.flat();
  auto s = src.flat();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& m) {
  BasicMatrix<T> t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShape, "dot length mismatch");
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void softmax_row(std::span<T> row, std::span<const std::uint8_t> allow) {
  if (!allow.empty() && allow.size() != row.size()) {
    throw Error(ErrorCode::kShape, "softmax mask length mismatch");
  }
  const auto visible = [&](std::size_t j) { return allow.empty() || allow[j] != 0; };
  T max_v = -std::numeric_limits<T>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (visible(j)) {
      max_v = any ? std::max(max_v, row[j]) : row[j];
      any = true;
    }
  }
  if (!any) throw Error(ErrorCode::kDegenerateRow, "softmax row has no visible entry");
  T sum = T(0);
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (visible(j)) {
      row[j] = std::exp(row[j] - max_v);
      sum += row[j];
    } else {
      row[j] = T(0);
    }
  }
  const T inv = T(1) / sum;
  for (std::size_t j = 0; j < row.size(); ++j) row[j] *= inv;
}

template <typename T>
BasicMatrix<T> softmax_rows(const BasicMatrix<T>& m, std::span<const std::uint8_t> allow) {
  if (!allow.empty() && allow.size() != m.size()) {
    throw Error(ErrorCode::kShape, "softmax mask shape does not match " + dims(m.rows(), m.cols()));
  }
  BasicMatrix<T> out = m;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    softmax_row<T>(out.row(i), allow.empty() ? allow : allow.subspan(i * m.cols(), m.cols()));
  }
  return out;
}

template <typename T>
std::vector<T> layer_norm(std::span<const T> v, std::span<const T> gain, std::span<const T> bias,
                          T eps) {
  if (v.size() != gain.size() || v.size() != bias.size() || v.empty()) {
    throw Error(ErrorCode::kShape, "layer_norm length mismatch");
  }
  if (!(eps > T(0))) throw Error(ErrorCode::kConfig, "layer_norm eps must be positive");
  const T n = static_cast<T>(v.size());
  T mean = T(0);
  for (T x : v) mean += x;
  mean /= n;
  T var = T(0);
  for (T x : v) var += (x - mean) * (x - mean);
  var /= n;
  const T inv = T(1) / std::sqrt(var + eps);
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) * inv * gain[i] + bias[i];
  return out;
}

template <typename T>
T cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShape, "cosine_similarity length mismatch");
  const T na = std::sqrt(dot(a, a));
  const T nb = std::sqrt(dot(b, b));
  if (!(na > T(0)) || !(nb > T(0))) {
    throw Error(ErrorCode::kDegenerateVector, "cosine_similarity of a zero-norm vector");
  }
  return std::clamp(dot(a, b) / (na * nb), T(-1), T(1));
}

#define VIDEOSCAN_INSTANTIATE(T)                                                            \
  template BasicMatrix<T> matmul(const BasicMatrix<T>&, const BasicMatrix<T>&);             \
  template BasicMatrix<T> matmul_bt(const BasicMatrix<T>&, const BasicMatrix<T>&);          \
  template BasicMatrix<T> matmul_at(const BasicMatrix<T>&, const BasicMatrix<T>&);          \
  template void add_inplace(BasicMatrix<T>&, const BasicMatrix<T>&);                        \
  template BasicMatrix<T> transpose(const BasicMatrix<T>&);                                 \
  template T dot(std::span<const T>, std::span<const T>);                                   \
  template void softmax_row(std::span<T>, std::span<const std::uint8_t>);                   \
  template BasicMatrix<T> softmax_rows(const BasicMatrix<T>&, std::span<const std::uint8_t>); \
  template std::vector<T> layer_norm(std::span<const T>, std::span<const T>,                \
                                     std::span<const T>, T);                                \
  template T cosine_similarity(std::span<const T>, std::span<const T>);

VIDEOSCAN_INSTANTIATE(float)
VIDEOSCAN_INSTANTIATE(double)

#undef VIDEOSCAN_INSTANTIATE

}  // namespace videoscan
