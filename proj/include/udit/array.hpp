#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "udit/common.hpp"

namespace udit {

// Dense row-major n-d array. Feature maps are NCHW, matrices are [rows,cols],
// vectors are [n], scalars are [1]. Deliberately minimal: all numerical work
// lives in the kernel functions, which operate on raw pointers.
template <typename T>
struct Array {
  std::vector<int> shape;
  std::vector<T> v;

  Array() = default;
  explicit Array(std::vector<int> s) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(count(shape)), T(0));
  }
  Array(std::vector<int> s, std::vector<T> data)
      : shape(std::move(s)), v(std::move(data)) {
    require<ShapeError>(static_cast<int64_t>(v.size()) == count(shape),
                        "array data size ", v.size(), " does not match shape ",
                        shape_str(shape));
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      require<ShapeError>(d >= 0, "negative dimension in shape ",
                          shape_str(s));
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool empty() const { return v.empty(); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  template <typename U>
  Array<U> cast() const {
    Array<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <typename T>
void check_4d(const Array<T>& a, const char* what) {
  require<ShapeError>(a.ndim() == 4, what, " expects an NCHW array, got ",
                      shape_str(a.shape));
}

}  // namespace udit
