#include "hbmcn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hbmcn {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_to_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class S>
Tensor<S>::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  const int64_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(n), S(0));
  if (requires_grad) {
    impl_->requires_grad = true;
    impl_->grad.assign(static_cast<size_t>(n), S(0));
  }
}

template <class S>
Tensor<S> Tensor<S>::zeros(Shape shape) {
  return Tensor(std::move(shape));
}

template <class S>
Tensor<S> Tensor<S>::full(Shape shape, S value) {
  Tensor t(std::move(shape));
  for (S& v : t.impl_->data) v = value;
  return t;
}

template <class S>
Tensor<S> Tensor<S>::from_values(Shape shape, std::vector<S> values) {
  const int64_t n = shape_numel(shape);
  if (static_cast<int64_t>(values.size()) != n) {
    throw std::invalid_argument("from_values: " + std::to_string(values.size()) +
                                " values for shape " + shape_to_string(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  return t;
}

template <class S>
const Shape& Tensor<S>::shape() const {
  return impl_->shape;
}

template <class S>
int Tensor<S>::rank() const {
  return static_cast<int>(impl_->shape.size());
}

template <class S>
int64_t Tensor<S>::extent(int axis) const {
  if (axis < 0 || axis >= rank()) throw std::invalid_argument("extent: axis out of range");
  return impl_->shape[static_cast<size_t>(axis)];
}

template <class S>
int64_t Tensor<S>::numel() const {
  return static_cast<int64_t>(impl_->data.size());
}

template <class S>
S* Tensor<S>::data() {
  return impl_->data.data();
}

template <class S>
const S* Tensor<S>::data() const {
  return impl_->data.data();
}

template <class S>
std::vector<S>& Tensor<S>::values() {
  return impl_->data;
}

template <class S>
const std::vector<S>& Tensor<S>::values() const {
  return impl_->data;
}

template <class S>
bool Tensor<S>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <class S>
void Tensor<S>::set_requires_grad(bool enable) {
  impl_->requires_grad = enable;
  if (enable) {
    impl_->grad.assign(impl_->data.size(), S(0));
  } else {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

template <class S>
S* Tensor<S>::grad() {
  if (!requires_grad()) throw std::logic_error("grad: tensor does not require grad");
  return impl_->grad.data();
}

template <class S>
const S* Tensor<S>::grad() const {
  if (!requires_grad()) throw std::logic_error("grad: tensor does not require grad");
  return impl_->grad.data();
}

template <class S>
std::vector<S>& Tensor<S>::grad_values() {
  if (!requires_grad()) throw std::logic_error("grad_values: tensor does not require grad");
  return impl_->grad;
}

template <class S>
const std::vector<S>& Tensor<S>::grad_values() const {
  if (!requires_grad()) throw std::logic_error("grad_values: tensor does not require grad");
  return impl_->grad;
}

template <class S>
void Tensor<S>::zero_grad() {
  if (requires_grad()) impl_->grad.assign(impl_->data.size(), S(0));
}

template <class S>
S Tensor<S>::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
  }
  return impl_->data[0];
}

template <class S>
bool Tensor<S>::all_finite() const {
  for (S v : impl_->data) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <class S>
void Tape<S>::record(std::function<void()> step) {
  steps_.push_back(std::move(step));
}

template <class S>
void Tape<S>::backward(const Tensor<S>& root) {
  if (!root.defined() || !root.requires_grad()) {
    throw std::logic_error("backward: root was not produced by a recorded forward pass");
  }
  if (root.numel() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                shape_to_string(root.shape()));
  }
  Tensor<S> r = root;  // shallow handle; seed d(root)/d(root) = 1
  r.grad()[0] += S(1);
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace hbmcn
