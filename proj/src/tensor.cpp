#include "pagkd/tensor.hpp"

#include <sstream>

#include "pagkd/error.hpp"

namespace pagkd {
namespace {
thread_local GradTape* t_active_tape = nullptr;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::detach() const {
  auto t = from(impl_->shape, impl_->data, false);
  t.set_name(impl_->name);
  return t;
}

void GradTape::record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
                      BackwardFn fn) {
  if (consumed_) throw TapeError("cannot record '" + std::string(op) + "' on a consumed tape");
  entries_.push_back(Entry{std::string(op), std::move(inputs), std::move(output), std::move(fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward called twice without reset");
  if (loss.numel() != 1) {
    throw DimensionError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw TapeError("loss does not depend on any tensor requiring grad");
  consumed_ = true;

  // Every tensor that participates with requires_grad ends up with a grad
  // buffer of its own shape, even if no gradient reaches it.
  for (auto& e : entries_) {
    e.output.mutable_grad();
    for (auto& in : e.inputs) {
      if (in.requires_grad()) in.mutable_grad();
    }
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward(it->output.grad());
  }
}

void GradTape::reset() {
  entries_.clear();
  consumed_ = false;
}

std::vector<std::string> GradTape::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op);
  return names;
}

TapeScope::TapeScope(GradTape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(t_active_tape) { t_active_tape = nullptr; }
NoGradScope::~NoGradScope() { t_active_tape = previous_; }

GradTape* active_tape() { return t_active_tape; }

}  // namespace pagkd
