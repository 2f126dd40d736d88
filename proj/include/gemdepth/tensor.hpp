#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gemdepth {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Dense row-major f32 tensor. Copies are shallow (shared storage); ops
/// never mutate their inputs. Gradient buffer is allocated lazily during
/// backward and has the same shape as the data.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  /// Normal(0, stddev) init through the provided stream.
  static Tensor randn(Shape shape, std::mt19937_64& rng, float stddev,
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, float lo, float hi,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  /// dim(-1) is the last axis.
  int64_t dim(int axis) const;
  int64_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;  // numel()==1 only

  bool requires_grad() const;
  void set_requires_grad(bool rg);

  bool has_grad() const;
  /// Allocates (zero-filled) on first use.
  std::span<float> grad();
  std::span<const float> grad_view() const;  // empty span when absent
  void zero_grad();   // drops the buffer
  void seed_grad();   // fills grad with ones (scalar backward seed)

  /// Deep copy of data; fresh storage, no grad, requires_grad=false.
  Tensor detach_copy() const;

  bool same_storage(const Tensor& other) const {
    return impl_ == other.impl_;
  }

 private:
  struct Impl {
    Shape shape;
    std::vector<float> data;
    std::unique_ptr<std::vector<float>> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  static Tensor make(Shape shape, std::vector<float> data, bool rg);
};

/// Define-by-run gradient tape. Ops record their backward closures onto the
/// active tape in execution order; backward() replays them once, in reverse.
/// One tape per forward pass; single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void push(const char* op_name, std::function<void()> backward_fn);
  /// Seeds d(loss)/d(loss)=1 and runs every recorded closure in reverse.
  /// Contract error if loss is not scalar.
  void backward(Tensor& loss);
  size_t size() const { return nodes_.size(); }
  void clear();

  static Tape* current();

 private:
  friend class TapeScope;
  struct Node {
    const char* name;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
};

/// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

/// Opt-in debug mode: every op output is scanned for NaN/Inf and the first
/// offender aborts with the producing op's name.
void set_debug_check_finite(bool on);
bool debug_check_finite_enabled();

namespace detail {
void check_finite_or_throw(const Tensor& t, const char* op_name);
/// Shared by every op: propagates requires_grad and records the closure
/// when a tape is active and any input is tracked.
void record_op(const char* name, std::initializer_list<Tensor> inputs,
               Tensor& out, std::function<void()> backward_fn);
bool any_requires_grad(std::initializer_list<Tensor> inputs);
}  // namespace detail

}  // namespace gemdepth
