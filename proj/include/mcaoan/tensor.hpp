#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "mcaoan/errors.hpp"

namespace mcaoan {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::vector<std::int64_t> row_major_strides(const Shape& shape) {
  std::vector<std::int64_t> st(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * shape[i + 1];
  return st;
}

// Dense row-major tensor. Copies are shallow: they share element storage.
// `node` ties a value to the tape node that produced it (-1 = constant, not
// recorded on any tape). Precision is the template parameter, so one
// computation graph can never mix 32- and 64-bit values.
template <typename T>
struct Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds float or double");

  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  int node = -1;

  Tensor() : data(std::make_shared<std::vector<T>>()) {}
  Tensor(Shape s, std::shared_ptr<std::vector<T>> d, int n = -1)
      : shape(std::move(s)), data(std::move(d)), node(n) {}

  static Tensor zeros(Shape s) {
    auto d = std::make_shared<std::vector<T>>(numel(s), T(0));
    return Tensor(std::move(s), std::move(d));
  }
  static Tensor full(Shape s, T v) {
    auto d = std::make_shared<std::vector<T>>(numel(s), v);
    return Tensor(std::move(s), std::move(d));
  }
  static Tensor scalar(T v) { return full({}, v); }
  static Tensor from(Shape s, std::vector<T> values) {
    if (numel(s) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("tensor init: shape " + shape_str(s) + " expects " +
                       std::to_string(numel(s)) + " values, got " +
                       std::to_string(values.size()));
    auto d = std::make_shared<std::vector<T>>(std::move(values));
    return Tensor(std::move(s), std::move(d));
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data->size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t extent(int axis) const {
    return shape[axis < 0 ? shape.size() + axis : axis];
  }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T& operator[](std::int64_t i) { return (*data)[i]; }
  const T& operator[](std::int64_t i) const { return (*data)[i]; }

  T& at(std::initializer_list<std::int64_t> idx) {
    return (*data)[flat_index(idx)];
  }
  const T& at(std::initializer_list<std::int64_t> idx) const {
    return (*data)[flat_index(idx)];
  }

  // Scalar fetch; the value must have exactly one element.
  T item() const {
    if (size() != 1)
      throw ContractError("item() on non-scalar tensor " + shape_str(shape));
    return (*data)[0];
  }

  // Same storage, no tape node.
  Tensor detached() const { return Tensor(shape, data); }

  // Deep copy with converted precision.
  template <typename U>
  Tensor<U> cast() const {
    auto d = std::make_shared<std::vector<U>>(data->begin(), data->end());
    return Tensor<U>(shape, std::move(d));
  }

  Tensor clone() const {
    return Tensor(shape, std::make_shared<std::vector<T>>(*data));
  }

 private:
  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
    auto st = row_major_strides(shape);
    std::int64_t flat = 0;
    std::size_t k = 0;
    for (auto i : idx) flat += i * st[k++];
    return flat;
  }
};

}  // namespace mcaoan
