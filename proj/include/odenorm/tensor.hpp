#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace odenorm {

using Shape = std::vector<int64_t>;

// Raised on any incompatible operand shapes; the message names the op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a computation produces NaN/Inf where finite values are required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. Storage is shared between copies and
// treated as immutable; mutable_data() detaches before handing out a writable
// view, so a Tensor behaves as a value.
class Tensor {
 public:
  // A single zero of shape {1}.
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return full({1}, value); }
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const;
  int64_t size() const { return static_cast<int64_t>(storage_->size()); }

  std::span<const double> data() const { return *storage_; }
  std::span<double> mutable_data();

  double operator[](int64_t i) const { return (*storage_)[static_cast<size_t>(i)]; }
  // The only element of a one-element tensor.
  double item() const;

  // Same storage, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> storage_;
};

// Largest |a_i - b_i|; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

// Deterministic RNG substream derived from a root seed and a stream label.
std::mt19937_64 make_rng(uint64_t seed, std::string_view stream);

}  // namespace odenorm
