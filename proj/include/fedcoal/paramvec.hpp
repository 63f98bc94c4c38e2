#pragma once

// Flat parameter vectors and the weight-space algebra the aggregators use:
// Euclidean distance, barycenters, and flatten/unflatten against a shape.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <ranges>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "fedcoal/error.hpp"

namespace fedcoal {

/// A model's full parameter set as one flat vector of doubles.
///
/// Invariant: dim() > 0 and every entry is finite.
class ParamVector {
 public:
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw InvalidArgument("ParamVector: dimension must be positive");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw InvalidArgument("ParamVector: non-finite entry at index " + std::to_string(i));
      }
    }
  }

  ParamVector(std::initializer_list<double> values) : ParamVector(std::vector<double>(values)) {}

  /// n zeros.
  static ParamVector zeros(std::size_t n) { return ParamVector(std::vector<double>(n, 0.0)); }

  std::size_t dim() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }

  /// Consumes the vector. The moved-from object must not be used again.
  std::vector<double> release() && noexcept { return std::move(values_); }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

namespace detail {

inline const ParamVector& as_param(const ParamVector& v) noexcept { return v; }
inline const ParamVector& as_param(std::reference_wrapper<const ParamVector> v) noexcept {
  return v.get();
}
inline const ParamVector& as_param(const ParamVector* v) noexcept { return *v; }

}  // namespace detail

/// Ranges whose elements are ParamVector, const ParamVector* or
/// reference_wrapper<const ParamVector>.
template <typename R>
concept ParamRange = std::ranges::forward_range<R> && requires(std::ranges::range_reference_t<R> e) {
  { detail::as_param(e) } -> std::same_as<const ParamVector&>;
};

/// sqrt(sum_i (a_i - b_i)^2), accumulated in index order.
inline double euclidean_distance(const ParamVector& a, const ParamVector& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch(a.dim(), b.dim(), "euclidean_distance");
  const auto x = a.values();
  const auto y = b.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - y[i];
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

/// Elementwise arithmetic mean of the vectors, in range order.
///
/// Uses the running-mean recurrence m_k = m_{k-1} + (x_k - m_{k-1}) / k, so a
/// set of identical vectors has a barycenter bitwise equal to each of them.
template <ParamRange R>
ParamVector barycenter(R&& vectors) {
  auto it = std::ranges::begin(vectors);
  const auto end = std::ranges::end(vectors);
  if (it == end) throw InvalidArgument("barycenter of empty coalition");

  const ParamVector& first = detail::as_param(*it);
  std::vector<double> mean(first.values().begin(), first.values().end());
  std::size_t count = 1;
  for (++it; it != end; ++it) {
    const ParamVector& v = detail::as_param(*it);
    if (v.dim() != mean.size()) throw DimensionMismatch(mean.size(), v.dim(), "barycenter");
    ++count;
    const double inv = 1.0 / static_cast<double>(count);
    const auto x = v.values();
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (x[i] - mean[i]) * inv;
  }
  return ParamVector(std::move(mean));
}

inline ParamVector barycenter(std::initializer_list<ParamVector> vectors) {
  return barycenter(std::span<const ParamVector>(vectors.begin(), vectors.size()));
}

/// Weighted mean sum_i (w_i / W) x_i with positive weights, in range order.
/// Same running-mean form as barycenter().
template <ParamRange R>
ParamVector weighted_mean(R&& vectors, std::span<const double> weights) {
  const auto n = static_cast<std::size_t>(std::ranges::distance(vectors));
  if (n == 0) throw InvalidArgument("weighted_mean: empty input");
  if (weights.size() != n) throw DimensionMismatch(n, weights.size(), "weighted_mean weights");
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw InvalidArgument("weighted_mean: weights must be positive");
  }

  auto it = std::ranges::begin(vectors);
  const ParamVector& first = detail::as_param(*it);
  std::vector<double> mean(first.values().begin(), first.values().end());
  double total = weights[0];
  std::size_t k = 1;
  for (++it; k < n; ++it, ++k) {
    const ParamVector& v = detail::as_param(*it);
    if (v.dim() != mean.size()) throw DimensionMismatch(mean.size(), v.dim(), "weighted_mean");
    total += weights[k];
    const double frac = weights[k] / total;
    const auto x = v.values();
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (x[i] - mean[i]) * frac;
  }
  return ParamVector(std::move(mean));
}

/// a + alpha * b.
inline ParamVector axpy(const ParamVector& a, double alpha, const ParamVector& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch(a.dim(), b.dim(), "axpy");
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * y[i];
  return ParamVector(std::move(out));
}

/// Named tensor extents, e.g. {"fc1.weight", {64, 784}}.
struct TensorShape {
  std::string name;
  std::vector<std::size_t> extents;

  std::size_t size() const {
    return std::accumulate(extents.begin(), extents.end(), std::size_t{1}, std::multiplies<>{});
  }
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

/// Ordered tensor list. flatten/unflatten both walk tensors in this order.
class ShapeDescriptor {
 public:
  ShapeDescriptor() = default;
  explicit ShapeDescriptor(std::vector<TensorShape> tensors) : tensors_(std::move(tensors)) {
    for (const auto& t : tensors_) {
      for (std::size_t e : t.extents) {
        if (e == 0) throw InvalidArgument("ShapeDescriptor: zero extent in tensor '" + t.name + "'");
      }
    }
  }

  const std::vector<TensorShape>& tensors() const noexcept { return tensors_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  /// Offset of the named tensor inside the flat vector.
  std::size_t offset_of(std::string_view name) const {
    std::size_t off = 0;
    for (const auto& t : tensors_) {
      if (t.name == name) return off;
      off += t.size();
    }
    throw InvalidArgument("ShapeDescriptor: no tensor named '" + std::string(name) + "'");
  }

  friend bool operator==(const ShapeDescriptor&, const ShapeDescriptor&) = default;

 private:
  std::vector<TensorShape> tensors_;
};

/// One tensor of a structured model, row-major.
struct Tensor {
  TensorShape shape;
  std::vector<double> values;
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

using StructuredWeights = std::vector<Tensor>;

inline ParamVector flatten(const StructuredWeights& weights, const ShapeDescriptor& shape) {
  const auto& tensors = shape.tensors();
  if (weights.size() != tensors.size()) {
    throw DimensionMismatch(tensors.size(), weights.size(), "flatten: tensor count");
  }
  std::vector<double> flat;
  flat.reserve(shape.total_size());
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    if (weights[t].shape != tensors[t] || weights[t].values.size() != tensors[t].size()) {
      throw InvalidArgument("flatten: tensor '" + weights[t].shape.name +
                            "' does not match descriptor entry '" + tensors[t].name + "'");
    }
    flat.insert(flat.end(), weights[t].values.begin(), weights[t].values.end());
  }
  return ParamVector(std::move(flat));
}

inline StructuredWeights unflatten(const ParamVector& v, const ShapeDescriptor& shape) {
  if (v.dim() != shape.total_size()) {
    throw DimensionMismatch(shape.total_size(), v.dim(), "unflatten: element count");
  }
  StructuredWeights out;
  out.reserve(shape.tensors().size());
  auto src = v.values().begin();
  for (const auto& t : shape.tensors()) {
    const auto n = static_cast<std::ptrdiff_t>(t.size());
    out.push_back(Tensor{t, std::vector<double>(src, src + n)});
    src += n;
  }
  return out;
}

}  // namespace fedcoal
