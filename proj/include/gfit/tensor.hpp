// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle; copies alias the same buffer. Buffers are
// treated as immutable once produced by an op. The only sanctioned in-place
// writers are optimizer updates and checkpoint loading (`assign`,
// `mutable_data`).
//
// Every differentiable op whose inputs require gradients appends one node to
// the calling thread's tape. Nodes are appended after their inputs were
// produced, so the tape is topologically ordered by construction and
// `backward` simply walks it in reverse.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace gfit {

class Rng;

enum class DType : std::uint8_t { F32, F64 };

const char* dtype_name(DType dt);

/// Dtype used for newly created tensors. f32 by default; switch to f64 for
/// gradient checking. The setting is process-wide.
DType default_dtype();
void set_default_dtype(DType dt);

/// Restores the previous default dtype on scope exit.
class DTypeScope {
 public:
  explicit DTypeScope(DType dt) : previous_(default_dtype()) { set_default_dtype(dt); }
  ~DTypeScope() { set_default_dtype(previous_); }
  DTypeScope(const DTypeScope&) = delete;
  DTypeScope& operator=(const DTypeScope&) = delete;

 private:
  DType previous_;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// 64-byte aligned storage. Vectorized kernels peel a data-dependent number
/// of leading elements on unaligned input, which would make results depend
/// on where the allocator placed a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

using Buffer = std::variant<AlignedVector<float>, AlignedVector<double>>;

struct TensorImpl {
  Shape shape;
  DType dtype = DType::F32;
  Buffer data;
  Buffer grad;  // empty vector until a gradient arrives
  bool requires_grad = false;
  std::uint64_t id = 0;

  std::size_t numel() const { return shape_numel(shape); }
  bool has_grad() const;
};

template <class T>
AlignedVector<T>& buffer_as(Buffer& b) {
  return std::get<AlignedVector<T>>(b);
}
template <class T>
const AlignedVector<T>& buffer_as(const Buffer& b) {
  return std::get<AlignedVector<T>>(b);
}

/// Calls `f.template operator()<T>()` with T = float or double.
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::F32) return f.template operator()<float>();
  return f.template operator()<double>();
}

class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape, DType dtype = default_dtype());

  static Tensor zeros(Shape shape, DType dtype = default_dtype()) { return Tensor(std::move(shape), dtype); }
  static Tensor full(Shape shape, double value, DType dtype = default_dtype());
  static Tensor from_values(Shape shape, std::span<const double> values, DType dtype = default_dtype());
  static Tensor from_values(Shape shape, std::initializer_list<double> values, DType dtype = default_dtype());
  static Tensor scalar(double value, DType dtype = default_dtype()) { return full({}, value, dtype); }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, DType dtype = default_dtype());
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, DType dtype = default_dtype());

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;
  DType dtype() const;
  std::uint64_t id() const;

  bool requires_grad() const;
  /// Marks a leaf as a parameter. Turning it off drops any gradient buffer.
  Tensor& set_requires_grad(bool on);

  template <class T>
  std::span<const T> data() const {
    return buffer_as<T>(impl_->data);
  }
  /// In-place access for optimizer updates and loaders only.
  template <class T>
  std::span<T> mutable_data() {
    return buffer_as<T>(impl_->data);
  }

  /// Element values converted to double (copy).
  std::vector<double> values() const;
  double at(std::size_t flat_index) const;
  /// Value of a one-element tensor.
  double item() const;

  bool has_grad() const;
  /// Gradient as a detached tensor; zeros if none accumulated yet.
  Tensor grad() const;
  template <class T>
  std::span<const T> grad_data() const {
    return buffer_as<T>(impl_->grad);
  }
  template <class T>
  std::span<T> mutable_grad_data() {
    return buffer_as<T>(impl_->grad);
  }
  void zero_grad();

  /// Detached deep copy.
  Tensor clone() const;
  Tensor to(DType dtype) const;
  /// Overwrites values in place from a same-shape tensor (dtype converted).
  void assign(const Tensor& src);

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Bitwise equality of shape, dtype and data.
bool bit_equal(const Tensor& a, const Tensor& b);
/// Largest |a_i - b_i|; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
/// FNV-1a hash of the raw data bytes.
std::uint64_t checksum(const Tensor& t);

// ---------------------------------------------------------------------------
// Tape

/// Backward closure. Receives the node's output, whose gradient is populated,
/// and accumulates into the gradients of the node's inputs.
using BackwardFn = std::function<void(TensorImpl& out)>;

struct TapeNode {
  const char* kind = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  BackwardFn backward;
};

class Tape {
 public:
  void record(const char* kind, std::vector<std::shared_ptr<TensorImpl>> inputs,
              const std::shared_ptr<TensorImpl>& output, BackwardFn fn);
  const std::vector<TapeNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Seeds d(loss)/d(loss) = 1, visits every node once in reverse order, then
  /// clears the tape. Leaf gradients accumulate across calls until zeroed.
  void backward(const Tensor& loss);

 private:
  std::vector<TapeNode> nodes_;
};

/// The calling thread's tape.
Tape& tape();
inline void backward(const Tensor& loss) { tape().backward(loss); }

bool grad_enabled();

/// Disables recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// True when recording is on and any input requires a gradient.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Gradient buffer of `impl`, zero-allocated on first use. Callers must only
/// ask for tensors with requires_grad set.
template <class T>
std::span<T> grad_buffer(TensorImpl& impl) {
  auto& g = buffer_as<T>(impl.grad);
  if (g.empty()) g.assign(impl.numel(), T(0));
  return g;
}

}  // namespace detail

}  // namespace gfit
