#include "storm/tensor/tensor.hpp"

#include <sstream>

namespace storm::inline STORM_PREC_NS {

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

Tensor::Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  STORM_CHECK(shape_numel(shape) == data.size(), ErrorKind::kDimension,
              "tensor shape ", shape_str(shape), " does not match ", data.size(),
              " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, Scalar{0}), requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, value), requires_grad);
}

Tensor Tensor::scalar(Scalar value) { return Tensor({1}, {value}); }

Scalar Tensor::item() const {
  STORM_CHECK(numel() == 1, ErrorKind::kContract, "item() on tensor of shape ",
              shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data, false);
}

namespace {
thread_local Tape* tls_tape = nullptr;
}

Tape* active_tape() { return tls_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(tls_tape) { tls_tape = &tape; }
TapeScope::~TapeScope() { tls_tape = previous_; }

NoGradScope::NoGradScope() : previous_(tls_tape) { tls_tape = nullptr; }
NoGradScope::~NoGradScope() { tls_tape = previous_; }

void Tape::record(const char* op, Backward fn) {
  nodes_.push_back(std::move(fn));
  names_.push_back(op);
}

void Tape::backward(const Tensor& loss) {
  STORM_CHECK(loss.defined() && loss.numel() == 1, ErrorKind::kContract,
              "backward requires a scalar loss, got ",
              loss.defined() ? shape_str(loss.shape()) : std::string("undefined"));
  loss.mutable_grad()[0] += Scalar{1};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  nodes_.clear();
  names_.clear();
}

}  // namespace storm::inline STORM_PREC_NS
