#pragma once

// Dense softmax classifiers over flat parameter vectors, with analytic
// gradients and a mini-batch SGD client trainer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedcoal/data.hpp"
#include "fedcoal/error.hpp"
#include "fedcoal/paramvec.hpp"
#include "fedcoal/rng.hpp"

namespace fedcoal {

enum class ModelKind { Logistic, Mlp, CnnReference };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Logistic: return "logistic";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::CnnReference: return "cnn-reference";
  }
  return "?";
}

struct ModelSpec {
  ModelKind kind = ModelKind::Logistic;
  std::size_t input_dim = 1;
  std::size_t class_count = 2;
  std::vector<std::size_t> hidden_dims;  // mlp only
  std::uint64_t init_seed = 0;

  void validate() const {
    if (class_count < 2) throw InvalidArgument("ModelSpec: class_count must be >= 2");
    if (input_dim < 1) throw InvalidArgument("ModelSpec: input_dim must be >= 1");
    if (kind == ModelKind::Mlp) {
      if (hidden_dims.empty()) throw InvalidArgument("ModelSpec: mlp needs at least one hidden layer");
      for (auto h : hidden_dims) {
        if (h == 0) throw InvalidArgument("ModelSpec: hidden layer width must be positive");
      }
    }
  }
};

struct TrainConfig {
  std::size_t local_epochs = 5;
  std::size_t batch_size = 10;
  double learning_rate = 0.01;
  std::uint64_t shuffle_seed = 0;

  void validate() const {
    if (local_epochs == 0) throw InvalidArgument("TrainConfig: local_epochs must be positive");
    if (batch_size == 0) throw InvalidArgument("TrainConfig: batch_size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw InvalidArgument("TrainConfig: learning_rate must be a finite non-negative number");
    }
  }
};

/// Tensor layout of a model. Dense layers are fc1..fcN, each a (out x in)
/// row-major weight followed by its bias.
///
/// cnn-reference describes conv(5x5, 32) -> pool 2 -> conv(5x5, 64) -> pool 2
/// -> fc 512 -> fc 10 on 28x28 inputs with unpadded convolutions. It is
/// descriptive only; init_model rejects it.
inline ShapeDescriptor parameter_shape(const ModelSpec& spec) {
  spec.validate();
  std::vector<TensorShape> t;
  if (spec.kind == ModelKind::CnnReference) {
    t.push_back({"conv1.weight", {32, 1, 5, 5}});
    t.push_back({"conv1.bias", {32}});
    t.push_back({"conv2.weight", {64, 32, 5, 5}});
    t.push_back({"conv2.bias", {64}});
    t.push_back({"fc1.weight", {512, 64 * 4 * 4}});
    t.push_back({"fc1.bias", {512}});
    t.push_back({"fc2.weight", {spec.class_count, 512}});
    t.push_back({"fc2.bias", {spec.class_count}});
    return ShapeDescriptor(std::move(t));
  }
  std::vector<std::size_t> widths{spec.input_dim};
  if (spec.kind == ModelKind::Mlp) widths.insert(widths.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  widths.push_back(spec.class_count);
  for (std::size_t l = 1; l < widths.size(); ++l) {
    const std::string name = "fc" + std::to_string(l);
    t.push_back({name + ".weight", {widths[l], widths[l - 1]}});
    t.push_back({name + ".bias", {widths[l]}});
  }
  return ShapeDescriptor(std::move(t));
}

/// Weights uniform in +-sqrt(1/fan_in) per weight tensor, biases zero.
inline ParamVector init_model(const ModelSpec& spec) {
  spec.validate();
  if (spec.kind == ModelKind::CnnReference) {
    throw InvalidArgument("init_model: unsupported kind '" + to_string(spec.kind) + "'");
  }
  StructuredWeights w = unflatten(ParamVector::zeros(parameter_shape(spec).total_size()),
                                  parameter_shape(spec));
  for (std::size_t t = 0; t < w.size(); t += 2) {
    auto& weight = w[t];
    const double bound = std::sqrt(1.0 / static_cast<double>(weight.shape.extents[1]));
    CounterRng rng(derive_seed(spec.init_seed, "init", t / 2));
    for (auto& x : weight.values) x = rng.uniform(-bound, bound);
  }
  return flatten(w, parameter_shape(spec));
}

namespace detail {

struct DenseLayer {
  std::size_t in;
  std::size_t out;
  std::size_t weight_offset;
  std::size_t bias_offset;
};

inline std::vector<DenseLayer> dense_layers(const ModelSpec& spec) {
  if (spec.kind == ModelKind::CnnReference) {
    throw InvalidArgument("unsupported kind '" + to_string(spec.kind) + "'");
  }
  const auto shape = parameter_shape(spec);
  std::vector<DenseLayer> layers;
  std::size_t off = 0;
  const auto& ts = shape.tensors();
  for (std::size_t t = 0; t < ts.size(); t += 2) {
    const std::size_t out = ts[t].extents[0];
    const std::size_t in = ts[t].extents[1];
    layers.push_back({in, out, off, off + in * out});
    off += in * out + out;
  }
  return layers;
}

struct BatchResult {
  double loss = 0.0;           // mean cross-entropy
  std::size_t correct = 0;
  std::vector<double> grad;    // mean gradient; empty unless requested
};

/// One pass over the given samples in order. Gradients accumulate per sample
/// in that order and are divided by the sample count at the end.
inline BatchResult evaluate(std::span<const double> params, const std::vector<DenseLayer>& layers,
                            const LabeledDataset& data, std::span<const std::size_t> indices,
                            bool want_grad) {
  BatchResult r;
  if (want_grad) r.grad.assign(params.size(), 0.0);

  std::vector<std::vector<double>> act(layers.size() + 1);  // act[0] = input, act[l+1] = layer l output
  std::vector<std::vector<double>> delta(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    act[l + 1].resize(layers[l].out);
    delta[l].resize(layers[l].out);
  }

  for (std::size_t s : indices) {
    const auto x = data.row(s);
    act[0].assign(x.begin(), x.end());
    const std::size_t label = data.labels[s];

    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      const double* W = params.data() + L.weight_offset;
      const double* b = params.data() + L.bias_offset;
      const bool hidden = l + 1 < layers.size();
      for (std::size_t o = 0; o < L.out; ++o) {
        double z = b[o];
        const double* row = W + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) z += row[i] * act[l][i];
        act[l + 1][o] = hidden ? std::max(z, 0.0) : z;
      }
    }

    const auto& logits = act.back();
    std::size_t best = 0;
    double zmax = logits[0];
    for (std::size_t c = 1; c < logits.size(); ++c) {
      if (logits[c] > zmax) {
        zmax = logits[c];
        best = c;
      }
    }
    if (best == label) ++r.correct;
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - zmax);
    const double log_norm = zmax + std::log(sum);
    r.loss += log_norm - logits[label];

    if (!want_grad) continue;

    auto& top = delta.back();
    for (std::size_t c = 0; c < logits.size(); ++c) {
      top[c] = std::exp(logits[c] - log_norm) - (c == label ? 1.0 : 0.0);
    }
    for (std::size_t l = layers.size(); l-- > 0;) {
      const auto& L = layers[l];
      double* gW = r.grad.data() + L.weight_offset;
      double* gb = r.grad.data() + L.bias_offset;
      const auto& d = delta[l];
      const auto& a_in = act[l];
      for (std::size_t o = 0; o < L.out; ++o) {
        gb[o] += d[o];
        double* grow = gW + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) grow[i] += d[o] * a_in[i];
      }
      if (l == 0) break;
      const double* W = params.data() + L.weight_offset;
      auto& below = delta[l - 1];
      std::fill(below.begin(), below.end(), 0.0);
      for (std::size_t o = 0; o < L.out; ++o) {
        const double* row = W + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) below[i] += row[i] * d[o];
      }
      for (std::size_t i = 0; i < below.size(); ++i) {
        if (!(act[l][i] > 0.0)) below[i] = 0.0;  // ReLU'(z) = 0 for z <= 0
      }
    }
  }

  const double n = static_cast<double>(indices.size());
  r.loss /= n;
  if (want_grad) {
    for (auto& g : r.grad) g /= n;
  }
  return r;
}

inline void check_batch(const ParamVector& w, const ModelSpec& spec, const LabeledDataset& data,
                        std::span<const std::size_t> indices, const char* where) {
  const std::size_t expected = parameter_shape(spec).total_size();
  if (w.dim() != expected) throw DimensionMismatch(expected, w.dim(), where);
  if (data.input_dim != spec.input_dim) throw DimensionMismatch(spec.input_dim, data.input_dim, where);
  if (data.class_count > spec.class_count) {
    throw InvalidArgument(std::string(where) + ": dataset has more classes than the model");
  }
  if (indices.empty()) throw InvalidArgument(std::string(where) + ": empty dataset");
}

}  // namespace detail

struct LossAccuracy {
  double loss;
  double accuracy;
};

/// Mean softmax cross-entropy and argmax accuracy (ties go to the lowest class).
inline LossAccuracy loss_and_accuracy(const ParamVector& w, const ModelSpec& spec,
                                      const LabeledDataset& data, std::span<const std::size_t> indices) {
  detail::check_batch(w, spec, data, indices, "loss_and_accuracy");
  const auto r = detail::evaluate(w.values(), detail::dense_layers(spec), data, indices, false);
  return {r.loss, static_cast<double>(r.correct) / static_cast<double>(indices.size())};
}

inline LossAccuracy loss_and_accuracy(const ParamVector& w, const ModelSpec& spec, const ClientDataset& data) {
  if (!data.parent) throw InvalidArgument("loss_and_accuracy: empty dataset");
  return loss_and_accuracy(w, spec, *data.parent, data.indices);
}

/// Analytic gradient of the mean cross-entropy over the batch.
inline ParamVector gradient(const ParamVector& w, const ModelSpec& spec, const LabeledDataset& data,
                            std::span<const std::size_t> batch) {
  detail::check_batch(w, spec, data, batch, "gradient");
  auto r = detail::evaluate(w.values(), detail::dense_layers(spec), data, batch, true);
  return ParamVector(std::move(r.grad));
}

/// Local training: `cfg.local_epochs` passes of mini-batch SGD starting from
/// `w_global`. Batch order is reshuffled every epoch from a stream keyed by
/// (shuffle_seed, round, stream_id); the final partial batch is kept.
inline ParamVector client_update(const ParamVector& w_global, const ModelSpec& spec,
                                 const ClientDataset& data, const TrainConfig& cfg,
                                 std::uint64_t round, std::uint64_t stream_id) {
  cfg.validate();
  if (!data.parent) throw InvalidArgument("client_update: empty dataset");
  detail::check_batch(w_global, spec, *data.parent, data.indices, "client_update");

  const auto layers = detail::dense_layers(spec);
  std::vector<double> w(w_global.values().begin(), w_global.values().end());
  std::vector<std::size_t> order = data.indices;
  CounterRng rng(derive_seed(cfg.shuffle_seed, "client-shuffle", round, stream_id));

  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const auto batch = std::span<const std::size_t>(order).subspan(start, len);
      const auto r = detail::evaluate(w, layers, *data.parent, batch, true);
      bool finite = std::isfinite(r.loss);
      for (std::size_t i = 0; finite && i < r.grad.size(); ++i) finite = std::isfinite(r.grad[i]);
      if (!finite) throw TrainingDiverged(data.client_id, epoch, batch_index);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * r.grad[i];
    }
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w[i])) throw TrainingDiverged(data.client_id, cfg.local_epochs - 1, 0);
  }
  return ParamVector(std::move(w));
}

inline ParamVector client_update(const ParamVector& w_global, const ModelSpec& spec,
                                 const ClientDataset& data, const TrainConfig& cfg,
                                 std::uint64_t round) {
  return client_update(w_global, spec, data, cfg, round, data.client_id);
}

}  // namespace fedcoal
