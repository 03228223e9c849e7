#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace freeup {

/// Thrown when an input array, sample or checkpoint has the wrong shape.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planes x rows x cols, the shape of a traffic sample (P x H x W).
struct Shape3 {
  int planes = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(planes) * static_cast<std::size_t>(rows) *
           static_cast<std::size_t>(cols);
  }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }
  bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape3& s);

/// Dense row-major P x H x W array.
template <typename T>
struct Array3 {
  Shape3 shape;
  std::vector<T> data;

  Array3() = default;
  explicit Array3(Shape3 s, T fill = T{}) : shape(s), data(s.size(), fill) {}
  Array3(Shape3 s, std::vector<T> values) : shape(s), data(std::move(values)) {
    if (data.size() != shape.size()) {
      throw ShapeError("array data length does not match shape " + to_string(shape));
    }
  }

  T& at(int p, int h, int w) {
    return data[(static_cast<std::size_t>(p) * shape.rows + h) * shape.cols + w];
  }
  const T& at(int p, int h, int w) const {
    return data[(static_cast<std::size_t>(p) * shape.rows + h) * shape.cols + w];
  }
  std::span<T> plane(int p) {
    return std::span<T>(data).subspan(p * shape.plane_size(), shape.plane_size());
  }
  std::span<const T> plane(int p) const {
    return std::span<const T>(data).subspan(p * shape.plane_size(), shape.plane_size());
  }
  std::size_t size() const { return data.size(); }
};

using Volume = Array3<double>;

/// Batched activations in N x C x H x W layout.
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t image_size() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  float* image(int i) { return data.data() + i * image_size(); }
  const float* image(int i) const { return data.data() + i * image_size(); }
  float* plane(int i, int ch) { return image(i) + ch * plane_size(); }
  const float* plane(int i, int ch) const { return image(i) + ch * plane_size(); }
  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

std::string shape_string(const Tensor4& t);

inline void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": " + shape_string(a) + " vs " + shape_string(b));
  }
}

}  // namespace freeup
