#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fedcoal/coalition.hpp"
#include "fedcoal/error.hpp"
#include "fedcoal/paramvec.hpp"

namespace fedcoal {

enum class FedAvgWeighting { Uniform, BySize };

inline std::string to_string(FedAvgWeighting w) {
  return w == FedAvgWeighting::Uniform ? "uniform" : "by-size";
}

/// FedAvg global model: mean of client weights in ascending client-id order,
/// either plain or weighted by n_i / N.
inline ParamVector fedavg_aggregate(const ClientWeights& weights, const std::vector<std::size_t>& sizes,
                                    FedAvgWeighting weighting) {
  if (weights.empty()) throw InvalidArgument("fedavg_aggregate: no clients");
  if (weighting == FedAvgWeighting::Uniform) return barycenter(weights);

  if (sizes.size() != weights.size()) throw DimensionMismatch(weights.size(), sizes.size(), "fedavg_aggregate sizes");
  std::size_t total = 0;
  for (auto n : sizes) total += n;
  if (total == 0) throw InvalidArgument("fedavg_aggregate: total sample count is zero");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw InvalidArgument("fedavg_aggregate: client " + std::to_string(i) + " has size 0");
  }
  std::vector<double> w(sizes.begin(), sizes.end());
  return weighted_mean(weights, w);
}

}  // namespace fedcoal
