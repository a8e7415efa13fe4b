#pragma once

#include <cstddef>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "emi/errors.hpp"

namespace emi {

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

inline size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= size_t(e);
  }
  return n;
}

template <class S>
struct TensorStorageT {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until ensure_grad()
  bool requires_grad = false;
  int node = -1;                  // index on the recording tape
  const void* tape = nullptr;     // identity of that tape
};

// Dense row-major tensor with shared storage. Values are treated as
// immutable once an op has consumed them; only grad buffers mutate.
template <class S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    TensorT t;
    t.d_ = std::make_shared<TensorStorageT<S>>();
    t.d_->shape = std::move(shape);
    t.d_->value.assign(shape_numel(t.d_->shape), S(0));
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static TensorT from_data(std::vector<int> shape, std::vector<S> value,
                           bool requires_grad = false) {
    if (shape_numel(shape) != value.size())
      throw ShapeError("tensor data length " + std::to_string(value.size()) +
                       " does not match shape " + shape_str(shape));
    TensorT t;
    t.d_ = std::make_shared<TensorStorageT<S>>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(value);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static TensorT scalar(S v) { return from_data({1}, {v}); }

  bool defined() const { return bool(d_); }
  const std::vector<int>& shape() const { return d_->shape; }
  int ndim() const { return int(d_->shape.size()); }
  int extent(int axis) const { return d_->shape[size_t(axis)]; }
  size_t numel() const { return d_->value.size(); }

  std::vector<S>& value() { return d_->value; }
  const std::vector<S>& value() const { return d_->value; }

  S& at(int i) { return d_->value[size_t(i)]; }
  S at(int i) const { return d_->value[size_t(i)]; }
  S& at(int i, int j) { return d_->value[size_t(i) * extent(1) + j]; }
  S at(int i, int j) const { return d_->value[size_t(i) * extent(1) + j]; }

  S item() const {
    if (numel() != 1)
      throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return d_->value[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<S>& grad() { return d_->grad; }
  const std::vector<S>& grad() const { return d_->grad; }

  void ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(numel(), S(0));
  }
  void zero_grad() { d_->grad.clear(); }

  int node() const { return d_->node; }
  const void* tape() const { return d_->tape; }
  void set_node(int node, const void* tape) {
    d_->node = node;
    d_->tape = tape;
  }

  // Identity (aliasing) comparison.
  bool same_storage(const TensorT& other) const { return d_ == other.d_; }

 private:
  std::shared_ptr<TensorStorageT<S>> d_;
};

using Real = float;
using Tensor = TensorT<Real>;

}  // namespace emi
