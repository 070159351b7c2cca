#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace idguard {

using Scalar = double;

// Dense (batch, channels, height, width) tensor, row-major.
// Vectors and per-sample scalars use trailing singleton dims, e.g. (B, D, 1, 1).
struct Shape {
  int b = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(b) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s) : shape_(s), v_(static_cast<size_t>(s.numel()), 0.0) {}
  Tensor(int b, int c, int h, int w) : Tensor(Shape{b, c, h, w}) {}

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(v_.size()); }
  bool empty() const { return v_.empty(); }

  Scalar* data() { return v_.data(); }
  const Scalar* data() const { return v_.data(); }

  Scalar& operator[](std::int64_t i) { return v_[static_cast<size_t>(i)]; }
  Scalar operator[](std::int64_t i) const { return v_[static_cast<size_t>(i)]; }

  Scalar& at(int b, int c, int h, int w) {
    return v_[static_cast<size_t>(((static_cast<std::int64_t>(b) * shape_.c + c) * shape_.h + h) * shape_.w + w)];
  }
  Scalar at(int b, int c, int h, int w) const {
    return v_[static_cast<size_t>(((static_cast<std::int64_t>(b) * shape_.c + c) * shape_.h + h) * shape_.w + w)];
  }

  // Pointer to the (b, c) plane of h*w scalars.
  Scalar* plane(int b, int c) {
    return v_.data() + (static_cast<std::int64_t>(b) * shape_.c + c) * shape_.h * shape_.w;
  }
  const Scalar* plane(int b, int c) const {
    return v_.data() + (static_cast<std::int64_t>(b) * shape_.c + c) * shape_.h * shape_.w;
  }

  // Pointer to sample b (c*h*w scalars).
  Scalar* sample(int b) { return v_.data() + static_cast<std::int64_t>(b) * shape_.c * shape_.h * shape_.w; }
  const Scalar* sample(int b) const {
    return v_.data() + static_cast<std::int64_t>(b) * shape_.c * shape_.h * shape_.w;
  }

  void fill(Scalar v) { std::fill(v_.begin(), v_.end(), v); }
  void zero() { fill(0.0); }

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(Scalar s);
  void add_scaled(const Tensor& o, Scalar s);  // *this += s * o

  Scalar max_abs() const;
  Scalar sum() const;
  Scalar dot(const Tensor& o) const;
  bool all_finite() const;

  bool same_values(const Tensor& o) const;  // bit-exact comparison

 private:
  Shape shape_;
  std::vector<Scalar> v_;
};

// Elementwise helpers used across the pipeline.
Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, Scalar s);
Tensor hadamard(Tensor a, const Tensor& b);
Tensor clamp(Tensor a, Scalar lo, Scalar hi);
Tensor sign(Tensor a);  // sign(0) = 0

// Channel concat / split of (B, C, H, W) tensors with equal spatial dims.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int c_front, Tensor& ga, Tensor& gb);

// Replicates a (1, C, H, W) tensor across a batch.
Tensor broadcast_batch(const Tensor& one, int batch);
// Sums a (B, C, H, W) tensor over the batch dim into (1, C, H, W).
Tensor sum_batch(const Tensor& t);

// Rows of (B, C, H, W) selected by index; out has shape (idx.size(), C, H, W).
Tensor gather_samples(const Tensor& t, const std::vector<int>& idx);

// Raw binary round-trip (little-endian doubles + shape header).
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace idguard
