#pragma once

// Datasets, the IDX reader, the Gaussian-blob generator and client partitioning.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedcoal/error.hpp"
#include "fedcoal/rng.hpp"

namespace fedcoal {

/// Row-major feature matrix plus integer labels.
struct LabeledDataset {
  std::size_t input_dim = 0;
  std::size_t class_count = 0;
  std::vector<double> features;  // size() * input_dim
  std::vector<std::uint32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const double> row(std::size_t i) const noexcept {
    return std::span<const double>(features).subspan(i * input_dim, input_dim);
  }

  /// Throws if the row count or any label is inconsistent.
  void validate() const {
    if (input_dim == 0) throw InvalidArgument("LabeledDataset: input_dim must be positive");
    if (features.size() != labels.size() * input_dim) {
      throw InvalidArgument("LabeledDataset: feature rows (" +
                            std::to_string(features.size() / input_dim) +
                            ") != label count (" + std::to_string(labels.size()) + ")");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= class_count) {
        throw InvalidArgument("LabeledDataset: label " + std::to_string(labels[i]) +
                              " at sample " + std::to_string(i) + " >= class_count " +
                              std::to_string(class_count));
      }
    }
  }

  std::vector<std::size_t> class_histogram() const {
    std::vector<std::size_t> h(class_count, 0);
    for (auto l : labels) ++h[l];
    return h;
  }
};

/// A client's shard: indices into a shared parent dataset.
struct ClientDataset {
  std::size_t client_id = 0;
  std::shared_ptr<const LabeledDataset> parent;
  std::vector<std::size_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
  bool empty() const noexcept { return indices.empty(); }

  std::vector<std::size_t> class_histogram() const {
    std::vector<std::size_t> h(parent->class_count, 0);
    for (auto i : indices) ++h[parent->labels[i]];
    return h;
  }
};

/// View over all samples of `data`, in order.
inline ClientDataset whole(std::shared_ptr<const LabeledDataset> data, std::size_t client_id = 0) {
  std::vector<std::size_t> idx(data->size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return ClientDataset{client_id, std::move(data), std::move(idx)};
}

/// Appends b after a. Both must share input_dim; class_count is the max.
inline LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.input_dim != b.input_dim) throw DimensionMismatch(a.input_dim, b.input_dim, "concat");
  LabeledDataset out = a;
  out.class_count = std::max(a.class_count, b.class_count);
  out.features.insert(out.features.end(), b.features.begin(), b.features.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset,
                               const std::string& file) {
  if (offset + 4 > bytes.size()) throw FormatError(file + ": truncated header", bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Parses an IDX image/label pair already in memory. Pixels are scaled by 1/255.
inline LabeledDataset parse_idx(std::span<const std::uint8_t> images,
                                std::span<const std::uint8_t> labels,
                                std::size_t class_count = 10) {
  const std::uint32_t img_magic = detail::read_be32(images, 0, "images");
  if (img_magic != kIdxImagesMagic) throw FormatError("images: bad magic number", 0);
  const std::uint32_t lbl_magic = detail::read_be32(labels, 0, "labels");
  if (lbl_magic != kIdxLabelsMagic) throw FormatError("labels: bad magic number", 0);

  const std::size_t n_img = detail::read_be32(images, 4, "images");
  const std::size_t rows = detail::read_be32(images, 8, "images");
  const std::size_t cols = detail::read_be32(images, 12, "images");
  const std::size_t n_lbl = detail::read_be32(labels, 4, "labels");
  if (n_img != n_lbl) {
    throw FormatError("labels: count " + std::to_string(n_lbl) + " does not match image count " +
                          std::to_string(n_img),
                      4);
  }
  if (rows == 0 || cols == 0) throw FormatError("images: zero image extent", 8);

  const std::size_t dim = rows * cols;
  if (images.size() < 16 + n_img * dim) throw FormatError("images: truncated pixel data", images.size());
  if (labels.size() < 8 + n_lbl) throw FormatError("labels: truncated label data", labels.size());

  LabeledDataset out;
  out.input_dim = dim;
  out.class_count = class_count;
  out.features.resize(n_img * dim);
  out.labels.resize(n_img);
  for (std::size_t i = 0; i < n_img * dim; ++i) out.features[i] = images[16 + i] / 255.0;
  for (std::size_t i = 0; i < n_lbl; ++i) {
    out.labels[i] = labels[8 + i];
    if (out.labels[i] >= class_count) {
      throw FormatError("labels: label " + std::to_string(out.labels[i]) + " out of range", 8 + i);
    }
  }
  return out;
}

inline LabeledDataset load_idx(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path,
                               std::size_t class_count = 10) {
  const auto images = detail::read_file(images_path);
  const auto labels = detail::read_file(labels_path);
  return parse_idx(images, labels, class_count);
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Gaussian blobs: class c has unit-variance samples centered at
/// separation * e_c. Samples are grouped by class, class 0 first.
inline LabeledDataset synth_blobs(std::size_t class_count, std::size_t per_class,
                                  std::size_t input_dim, double separation, std::uint64_t seed) {
  if (class_count == 0 || per_class == 0 || input_dim == 0) {
    throw InvalidArgument("synth_blobs: counts must be positive");
  }
  if (class_count > input_dim) {
    throw InvalidArgument("synth_blobs: class_count (" + std::to_string(class_count) +
                          ") exceeds input_dim (" + std::to_string(input_dim) + ")");
  }
  if (!std::isfinite(separation)) throw InvalidArgument("synth_blobs: separation must be finite");

  CounterRng rng(derive_seed(seed, "synth-blobs"));
  LabeledDataset out;
  out.input_dim = input_dim;
  out.class_count = class_count;
  out.features.reserve(class_count * per_class * input_dim);
  out.labels.reserve(class_count * per_class);
  for (std::size_t c = 0; c < class_count; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      for (std::size_t d = 0; d < input_dim; ++d) {
        out.features.push_back(rng.normal() + (d == c ? separation : 0.0));
      }
      out.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning

enum class PartitionScheme { IidEqual, Dirichlet, ClassBalanced };

struct PartitionPlan {
  PartitionScheme scheme = PartitionScheme::IidEqual;
  double alpha = 0.5;           // Dirichlet concentration
  std::size_t client_count = 10;
  std::uint64_t seed = 0;
  std::size_t per_class = 0;    // class-balanced: samples per class per client; 0 = largest feasible

  void validate() const {
    if (client_count == 0) throw InvalidArgument("PartitionPlan: client_count must be >= 1");
    if (scheme == PartitionScheme::Dirichlet && !(alpha > 0.0 && std::isfinite(alpha))) {
      throw InvalidArgument("PartitionPlan: dirichlet alpha must be positive");
    }
  }
};

inline constexpr int kMaxDirichletRedraws = 100;

namespace detail {

inline std::vector<std::vector<std::size_t>> indices_by_class(const LabeledDataset& data) {
  std::vector<std::vector<std::size_t>> by_class(data.class_count);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  return by_class;
}

inline std::vector<std::vector<std::size_t>> partition_iid(const LabeledDataset& data,
                                                           const PartitionPlan& plan) {
  const std::size_t k = plan.client_count;
  const std::size_t share = data.size() / k;
  if (share == 0) {
    throw InvalidArgument("partition: " + std::to_string(data.size()) +
                          " samples cannot give each of " + std::to_string(k) + " clients one");
  }
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng rng(derive_seed(plan.seed, "partition-iid"));
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<std::vector<std::size_t>> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    out[c].assign(order.begin() + static_cast<std::ptrdiff_t>(c * share),
                  order.begin() + static_cast<std::ptrdiff_t>((c + 1) * share));
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> partition_class_balanced(const LabeledDataset& data,
                                                                      const PartitionPlan& plan) {
  const std::size_t k = plan.client_count;
  auto by_class = indices_by_class(data);
  std::size_t per_class = plan.per_class;
  if (per_class == 0) {
    per_class = data.size();
    for (const auto& c : by_class) per_class = std::min(per_class, c.size() / k);
    if (per_class == 0) throw InvalidArgument("partition: class-balanced infeasible, some class has fewer samples than clients");
  }
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < per_class * k) {
      throw InvalidArgument("partition: class-balanced infeasible, class " + std::to_string(c) +
                            " has " + std::to_string(by_class[c].size()) + " samples, needs " +
                            std::to_string(per_class * k));
    }
  }

  std::vector<std::vector<std::size_t>> out(k);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    CounterRng rng(derive_seed(plan.seed, "partition-balanced", 0, c));
    rng.shuffle(std::span<std::size_t>(by_class[c]));
    for (std::size_t client = 0; client < k; ++client) {
      auto first = by_class[c].begin() + static_cast<std::ptrdiff_t>(client * per_class);
      out[client].insert(out[client].end(), first, first + static_cast<std::ptrdiff_t>(per_class));
    }
  }
  for (auto& shard : out) std::sort(shard.begin(), shard.end());
  return out;
}

/// Per class: shuffle its indices, draw client proportions p ~ Dir(alpha),
/// and cut the shuffled list at floor(n_c * cumsum(p)). Redrawn with the
/// next attempt index until every client is nonempty.
inline std::vector<std::vector<std::size_t>> partition_dirichlet(const LabeledDataset& data,
                                                                 const PartitionPlan& plan) {
  const std::size_t k = plan.client_count;
  const auto by_class = indices_by_class(data);

  for (int attempt = 0; attempt < kMaxDirichletRedraws; ++attempt) {
    CounterRng rng(derive_seed(plan.seed, "partition-dirichlet", static_cast<std::uint64_t>(attempt)));
    std::vector<std::vector<std::size_t>> out(k);
    bool degenerate = false;
    for (const auto& members : by_class) {
      std::vector<std::size_t> shuffled = members;
      rng.shuffle(std::span<std::size_t>(shuffled));

      std::vector<double> g(k);
      double total = 0.0;
      for (auto& x : g) {
        x = rng.gamma(plan.alpha);
        total += x;
      }
      if (!(total > 0.0)) {
        degenerate = true;
        break;
      }

      const double n = static_cast<double>(shuffled.size());
      double cum = 0.0;
      std::size_t begin = 0;
      for (std::size_t client = 0; client < k; ++client) {
        cum += g[client];
        std::size_t end = client + 1 == k ? shuffled.size()
                                          : static_cast<std::size_t>(std::floor(n * (cum / total)));
        end = std::clamp(end, begin, shuffled.size());
        out[client].insert(out[client].end(), shuffled.begin() + static_cast<std::ptrdiff_t>(begin),
                           shuffled.begin() + static_cast<std::ptrdiff_t>(end));
        begin = end;
      }
    }
    if (degenerate) continue;
    if (std::none_of(out.begin(), out.end(), [](const auto& s) { return s.empty(); })) {
      for (auto& shard : out) std::sort(shard.begin(), shard.end());
      return out;
    }
  }
  throw Error("partition: dirichlet redraws exhausted (" + std::to_string(kMaxDirichletRedraws) +
              ") without every client receiving a sample");
}

}  // namespace detail

/// Splits `data` into plan.client_count disjoint nonempty shards.
inline std::vector<ClientDataset> partition(std::shared_ptr<const LabeledDataset> data,
                                            const PartitionPlan& plan) {
  plan.validate();
  if (!data || data->empty()) throw InvalidArgument("partition: dataset is empty");

  std::vector<std::vector<std::size_t>> shards;
  switch (plan.scheme) {
    case PartitionScheme::IidEqual: shards = detail::partition_iid(*data, plan); break;
    case PartitionScheme::Dirichlet: shards = detail::partition_dirichlet(*data, plan); break;
    case PartitionScheme::ClassBalanced: shards = detail::partition_class_balanced(*data, plan); break;
  }

  std::vector<ClientDataset> out;
  out.reserve(shards.size());
  for (std::size_t c = 0; c < shards.size(); ++c) out.push_back(ClientDataset{c, data, std::move(shards[c])});
  return out;
}

/// Shannon entropy (nats) of a shard's label distribution.
inline double label_entropy(const ClientDataset& shard) {
  const auto h = shard.class_histogram();
  const double n = static_cast<double>(shard.size());
  double e = 0.0;
  for (auto count : h) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / n;
    e -= p * std::log(p);
  }
  return e;
}

}  // namespace fedcoal
