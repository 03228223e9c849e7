#include "freeup/tensor.hpp"

namespace freeup {

std::string to_string(const Shape3& s) {
  return std::to_string(s.planes) + "x" + std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

std::string shape_string(const Tensor4& t) {
  return std::to_string(t.n) + "x" + std::to_string(t.c) + "x" + std::to_string(t.h) + "x" +
         std::to_string(t.w);
}

}  // namespace freeup
