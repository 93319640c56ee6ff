// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include "gfit/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "gfit/error.hpp"
#include "gfit/rng.hpp"

namespace gfit {

namespace {

std::atomic<DType> g_default_dtype{DType::F32};
std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

Buffer make_buffer(DType dt, std::size_t n) {
  if (dt == DType::F32) return AlignedVector<float>(n, 0.0f);
  return AlignedVector<double>(n, 0.0);
}

Buffer empty_buffer(DType dt) {
  if (dt == DType::F32) return AlignedVector<float>{};
  return AlignedVector<double>{};
}

std::shared_ptr<TensorImpl> make_impl(Shape shape, DType dt) {
  auto impl = std::make_shared<TensorImpl>();
  const std::size_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->dtype = dt;
  impl->data = make_buffer(dt, n);
  impl->grad = empty_buffer(dt);
  impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return impl;
}

}  // namespace

const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

DType default_dtype() { return g_default_dtype.load(); }
void set_default_dtype(DType dt) { g_default_dtype.store(dt); }

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

bool TensorImpl::has_grad() const {
  return std::visit([](const auto& v) { return !v.empty(); }, grad);
}

Tensor::Tensor(Shape shape, DType dtype) : impl_(make_impl(std::move(shape), dtype)) {}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  dispatch(dtype, [&]<class T>() {
    auto d = t.mutable_data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  Tensor t(std::move(shape), dtype);
  if (values.size() != t.numel()) {
    throw DimensionError("from_values: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(t.shape()));
  }
  dispatch(dtype, [&]<class T>() {
    auto d = t.mutable_data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, DType dtype) {
  Tensor t(std::move(shape), dtype);
  dispatch(dtype, [&]<class T>() {
    for (auto& x : t.mutable_data<T>()) x = static_cast<T>(stddev * rng.normal());
  });
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, DType dtype) {
  Tensor t(std::move(shape), dtype);
  dispatch(dtype, [&]<class T>() {
    for (auto& x : t.mutable_data<T>()) x = static_cast<T>(rng.uniform(lo, hi));
  });
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= impl_->shape.size()) throw IndexError("dim " + std::to_string(i) + " of " + shape_str(impl_->shape));
  return impl_->shape[i];
}

std::size_t Tensor::numel() const { return impl_->numel(); }
DType Tensor::dtype() const { return impl_->dtype; }
std::uint64_t Tensor::id() const { return impl_->id; }
bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) impl_->grad = empty_buffer(impl_->dtype);
  return *this;
}

std::vector<double> Tensor::values() const {
  return dispatch(dtype(), [&]<class T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw IndexError("flat index " + std::to_string(i) + " out of " + shape_str(shape()));
  return dispatch(dtype(), [&]<class T>() { return static_cast<double>(data<T>()[i]); });
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

bool Tensor::has_grad() const { return impl_->has_grad(); }

Tensor Tensor::grad() const {
  Tensor g(shape(), dtype());
  if (has_grad()) {
    dispatch(dtype(), [&]<class T>() {
      auto src = grad_data<T>();
      std::copy(src.begin(), src.end(), g.mutable_data<T>().begin());
    });
  }
  return g;
}

void Tensor::zero_grad() { impl_->grad = empty_buffer(impl_->dtype); }

Tensor Tensor::clone() const {
  Tensor c(shape(), dtype());
  c.impl_->data = impl_->data;
  return c;
}

Tensor Tensor::to(DType dt) const {
  Tensor c(shape(), dt);
  c.assign(*this);
  return c;
}

void Tensor::assign(const Tensor& src) {
  if (src.shape() != shape()) {
    throw DimensionError("assign: " + shape_str(src.shape()) + " into " + shape_str(shape()));
  }
  dispatch(dtype(), [&]<class T>() {
    auto dst = mutable_data<T>();
    dispatch(src.dtype(), [&]<class S>() {
      auto s = src.data<S>();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(s[i]);
    });
  });
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  return dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    return std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) == 0;
  });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto x = a.values();
  const auto y = b.values();
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

std::uint64_t checksum(const Tensor& t) {
  return dispatch(t.dtype(), [&]<class T>() {
    auto d = t.data<T>();
    return fnv1a64(d.data(), d.size() * sizeof(T));
  });
}

// ---------------------------------------------------------------------------

void Tape::record(const char* kind, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  const std::shared_ptr<TensorImpl>& output, BackwardFn fn) {
  output->requires_grad = true;
  nodes_.push_back(TapeNode{kind, std::move(inputs), output, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward: loss must be a one-element tensor");
  }
  if (!loss.requires_grad()) {
    clear();
    return;
  }
  auto& root = *loss.impl();
  dispatch(root.dtype, [&]<class T>() { detail::grad_buffer<T>(root)[0] += T(1); });
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output->has_grad()) continue;  // not on a path to the loss
    it->backward(*it->output);
  }
  clear();
}

Tape& tape() {
  thread_local Tape t;
  return t;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace detail {

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!t_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace detail

}  // namespace gfit
