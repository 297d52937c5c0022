#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace hbmcn {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor with an optional same-shape gradient buffer.
/// Copies are shallow: they share storage, so a Tensor handle can live both
/// inside a module and inside the parameter registry.
template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, S value);
  static Tensor from_values(Shape shape, std::vector<S> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int64_t extent(int axis) const;
  int64_t numel() const;

  S* data();
  const S* data() const;
  std::vector<S>& values();
  const std::vector<S>& values() const;

  bool requires_grad() const;
  void set_requires_grad(bool enable);
  S* grad();
  const S* grad() const;
  std::vector<S>& grad_values();
  const std::vector<S>& grad_values() const;
  void zero_grad();

  /// Value of a single-element tensor; throws otherwise.
  S item() const;
  bool all_finite() const;

  bool shares_storage_with(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // sized like data iff requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Reverse-mode tape. Ops append one backward closure per recorded node in
/// execution order; backward() seeds the root gradient with 1 and replays the
/// closures once, in reverse. Gradients accumulate additively, so fan-out
/// falls out of the replay for free. A tape is confined to one thread and one
/// forward pass: zero the relevant grads and clear() before reusing it.
template <class S>
class Tape {
 public:
  void record(std::function<void()> step);
  void backward(const Tensor<S>& root);
  size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace hbmcn
