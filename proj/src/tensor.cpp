#include "gemdepth/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gemdepth {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

Tensor Tensor::make(Shape shape, std::vector<float> data, bool rg) {
  for (int64_t d : shape) {
    if (d <= 0)
      throw std::invalid_argument("tensor: nonpositive dimension in " +
                                  shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument(
        "tensor: data size " + std::to_string(data.size()) +
        " does not match shape " + shape_str(shape));
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = rg;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool rg) {
  std::vector<float> d(static_cast<size_t>(shape_numel(shape)), 0.0f);
  return make(std::move(shape), std::move(d), rg);
}

Tensor Tensor::full(Shape shape, float value, bool rg) {
  std::vector<float> d(static_cast<size_t>(shape_numel(shape)), value);
  return make(std::move(shape), std::move(d), rg);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool rg) {
  return make(std::move(shape), std::move(data), rg);
}

Tensor Tensor::scalar(float value, bool rg) {
  return make({1}, {value}, rg);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, float stddev,
                     bool rg) {
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> d(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : d) v = dist(rng);
  return make(std::move(shape), std::move(d), rg);
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, float lo, float hi,
                       bool rg) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> d(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : d) v = dist(rng);
  return make(std::move(shape), std::move(d), rg);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("tensor: undefined");
  return impl_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int64_t Tensor::dim(int axis) const {
  const Shape& s = shape();
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw std::invalid_argument("tensor: axis " + std::to_string(axis) +
                                " out of range for " + shape_str(s));
  return s[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const {
  return static_cast<int64_t>(impl_ ? impl_->data.size() : 0);
}

std::span<const float> Tensor::data() const {
  if (!impl_) throw std::logic_error("tensor: undefined");
  return impl_->data;
}

std::span<float> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("tensor: undefined");
  return impl_->data;
}

float Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("tensor: item() requires numel()==1, shape " +
                                shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
  if (!impl_) throw std::logic_error("tensor: undefined");
  impl_->requires_grad = rg;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad != nullptr; }

std::span<float> Tensor::grad() {
  if (!impl_) throw std::logic_error("tensor: undefined");
  if (!impl_->grad)
    impl_->grad =
        std::make_unique<std::vector<float>>(impl_->data.size(), 0.0f);
  return *impl_->grad;
}

std::span<const float> Tensor::grad_view() const {
  if (impl_ && impl_->grad) return *impl_->grad;
  return {};
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.reset();
}

void Tensor::seed_grad() {
  auto g = grad();
  for (auto& v : g) v = 1.0f;
}

Tensor Tensor::detach_copy() const {
  if (!impl_) throw std::logic_error("tensor: undefined");
  return make(impl_->shape, impl_->data, false);
}

namespace {
thread_local Tape* g_active_tape = nullptr;
bool g_debug_finite = false;
}  // namespace

void Tape::push(const char* op_name, std::function<void()> backward_fn) {
  nodes_.push_back(Node{op_name, std::move(backward_fn)});
}

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  loss.seed_grad();
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
}

void Tape::clear() { nodes_.clear(); }

Tape* Tape::current() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = prev_; }

void set_debug_check_finite(bool on) { g_debug_finite = on; }
bool debug_check_finite_enabled() { return g_debug_finite; }

namespace detail {

void check_finite_or_throw(const Tensor& t, const char* op_name) {
  for (float v : t.data()) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite value produced by op '") +
                               op_name + "'");
  }
}

bool any_requires_grad(std::initializer_list<Tensor> inputs) {
  for (const auto& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

void record_op(const char* name, std::initializer_list<Tensor> inputs,
               Tensor& out, std::function<void()> backward_fn) {
  if (debug_check_finite_enabled()) check_finite_or_throw(out, name);
  Tape* tape = Tape::current();
  if (tape && any_requires_grad(inputs)) {
    out.set_requires_grad(true);
    tape->push(name, std::move(backward_fn));
  }
}

}  // namespace detail

}  // namespace gemdepth
