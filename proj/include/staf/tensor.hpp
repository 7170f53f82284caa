#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace staf {

using RowMatXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

/// Thrown when a computation produces non-finite values (as opposed to a
/// caller passing malformed inputs, which is std::invalid_argument).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of 64-bit reals. Storage is shared and treated as
/// immutable once constructed, so copies are O(1) and aliasing is safe.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::int64_t> dims, std::vector<double> data)
      : dims_(std::move(dims)),
        data_(std::make_shared<const std::vector<double>>(std::move(data))) {
    require(static_cast<std::int64_t>(data_->size()) == count(dims_),
            "tensor data length does not match dims");
  }

  static Tensor zeros(std::vector<std::int64_t> dims) {
    std::vector<double> d(static_cast<std::size_t>(count(dims)), 0.0);
    return Tensor(std::move(dims), std::move(d));
  }

  static Tensor full(std::vector<std::int64_t> dims, double v) {
    std::vector<double> d(static_cast<std::size_t>(count(dims)), v);
    return Tensor(std::move(dims), std::move(d));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor vector(std::vector<double> data) {
    auto n = static_cast<std::int64_t>(data.size());
    return Tensor({n}, std::move(data));
  }

  static Tensor matrix(std::int64_t rows, std::int64_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  bool empty() const { return !data_; }
  const std::vector<std::int64_t>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  std::int64_t dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  const double* data() const { return data_ ? data_->data() : nullptr; }
  double at(std::int64_t flat) const { return (*data_)[static_cast<std::size_t>(flat)]; }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

  bool all_finite() const {
    if (!data_) return true;
    for (double v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Same storage, new shape (element count must match).
  Tensor reshaped(std::vector<std::int64_t> dims) const {
    require(count(dims) == size(), "reshape changes element count");
    Tensor t;
    t.dims_ = std::move(dims);
    t.data_ = data_;
    return t;
  }

  Eigen::Map<const RowMatXd> mat() const {
    require(rank() == 2, "mat() requires a rank-2 tensor");
    return {data(), dims_[0], dims_[1]};
  }

  /// View the flat buffer as rows×cols without changing the tensor.
  Eigen::Map<const RowMatXd> mat_view(std::int64_t rows, std::int64_t cols) const {
    require(rows * cols == size(), "mat_view element count mismatch");
    return {data(), rows, cols};
  }

  Eigen::Map<const Eigen::VectorXd> vec() const { return {data(), size()}; }

  static std::int64_t count(const std::vector<std::int64_t>& dims) {
    std::int64_t n = 1;
    for (auto d : dims) {
      require(d > 0, "tensor dims must be positive");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<std::int64_t> dims_;
  std::shared_ptr<const std::vector<double>> data_;
};

inline std::string dims_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.dims().size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.dims()[i]);
  }
  return s + "]";
}

}  // namespace staf
