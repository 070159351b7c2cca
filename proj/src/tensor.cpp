#include "idguard/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace idguard {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << b << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
  }
}
}  // namespace

Tensor& Tensor::operator+=(const Tensor& o) {
  check_same_shape(*this, o, "Tensor::operator+=");
  for (size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  check_same_shape(*this, o, "Tensor::operator-=");
  for (size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
  return *this;
}

Tensor& Tensor::operator*=(Scalar s) {
  for (auto& v : v_) v *= s;
  return *this;
}

void Tensor::add_scaled(const Tensor& o, Scalar s) {
  check_same_shape(*this, o, "Tensor::add_scaled");
  for (size_t i = 0; i < v_.size(); ++i) v_[i] += s * o.v_[i];
}

Scalar Tensor::max_abs() const {
  Scalar m = 0.0;
  for (auto v : v_) m = std::max(m, std::abs(v));
  return m;
}

Scalar Tensor::sum() const {
  Scalar s = 0.0;
  for (auto v : v_) s += v;
  return s;
}

Scalar Tensor::dot(const Tensor& o) const {
  check_same_shape(*this, o, "Tensor::dot");
  Scalar s = 0.0;
  for (size_t i = 0; i < v_.size(); ++i) s += v_[i] * o.v_[i];
  return s;
}

bool Tensor::all_finite() const {
  for (auto v : v_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::same_values(const Tensor& o) const {
  if (!(shape_ == o.shape_)) return false;
  return std::memcmp(v_.data(), o.v_.data(), v_.size() * sizeof(Scalar)) == 0;
}

Tensor operator+(Tensor a, const Tensor& b) {
  a += b;
  return a;
}

Tensor operator-(Tensor a, const Tensor& b) {
  a -= b;
  return a;
}

Tensor operator*(Tensor a, Scalar s) {
  a *= s;
  return a;
}

Tensor hadamard(Tensor a, const Tensor& b) {
  check_same_shape(a, b, "hadamard");
  for (std::int64_t i = 0; i < a.size(); ++i) a[i] *= b[i];
  return a;
}

Tensor clamp(Tensor a, Scalar lo, Scalar hi) {
  for (std::int64_t i = 0; i < a.size(); ++i) a[i] = std::min(std::max(a[i], lo), hi);
  return a;
}

Tensor sign(Tensor a) {
  for (std::int64_t i = 0; i < a.size(); ++i) a[i] = (a[i] > 0.0) ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0);
  return a;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.b != sb.b || sa.h != sb.h || sa.w != sb.w) {
    throw std::invalid_argument("concat_channels: incompatible shapes " + sa.str() + " vs " + sb.str());
  }
  Tensor out(sa.b, sa.c + sb.c, sa.h, sa.w);
  const std::int64_t plane = static_cast<std::int64_t>(sa.h) * sa.w;
  for (int n = 0; n < sa.b; ++n) {
    std::memcpy(out.sample(n), a.sample(n), sizeof(Scalar) * sa.c * plane);
    std::memcpy(out.sample(n) + sa.c * plane, b.sample(n), sizeof(Scalar) * sb.c * plane);
  }
  return out;
}

void split_channels(const Tensor& g, int c_front, Tensor& ga, Tensor& gb) {
  const Shape& s = g.shape();
  ga = Tensor(s.b, c_front, s.h, s.w);
  gb = Tensor(s.b, s.c - c_front, s.h, s.w);
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  for (int n = 0; n < s.b; ++n) {
    std::memcpy(ga.sample(n), g.sample(n), sizeof(Scalar) * c_front * plane);
    std::memcpy(gb.sample(n), g.sample(n) + c_front * plane, sizeof(Scalar) * (s.c - c_front) * plane);
  }
}

Tensor broadcast_batch(const Tensor& one, int batch) {
  const Shape& s = one.shape();
  if (s.b != 1) throw std::invalid_argument("broadcast_batch: expected batch dim 1, got " + s.str());
  Tensor out(batch, s.c, s.h, s.w);
  const std::int64_t n = s.numel();
  for (int i = 0; i < batch; ++i) std::memcpy(out.sample(i), one.data(), sizeof(Scalar) * n);
  return out;
}

Tensor sum_batch(const Tensor& t) {
  const Shape& s = t.shape();
  Tensor out(1, s.c, s.h, s.w);
  const std::int64_t n = out.size();
  for (int b = 0; b < s.b; ++b) {
    const Scalar* src = t.sample(b);
    for (std::int64_t i = 0; i < n; ++i) out[i] += src[i];
  }
  return out;
}

Tensor gather_samples(const Tensor& t, const std::vector<int>& idx) {
  const Shape& s = t.shape();
  Tensor out(static_cast<int>(idx.size()), s.c, s.h, s.w);
  const std::int64_t n = static_cast<std::int64_t>(s.c) * s.h * s.w;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= s.b) throw std::out_of_range("gather_samples: index out of range");
    std::memcpy(out.sample(static_cast<int>(i)), t.sample(idx[i]), sizeof(Scalar) * n);
  }
  return out;
}

namespace {
constexpr char kMagic[4] = {'I', 'D', 'G', 'T'};
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  std::int32_t dims[4] = {t.shape().b, t.shape().c, t.shape().h, t.shape().w};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("read_tensor: bad magic");
  std::int32_t dims[4];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  Tensor t(dims[0], dims[1], dims[2], dims[3]);
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
  if (!is) throw std::runtime_error("read_tensor: truncated stream");
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_tensor: cannot open " + path);
  write_tensor(os, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_tensor: cannot open " + path);
  return read_tensor(is);
}

}  // namespace idguard
