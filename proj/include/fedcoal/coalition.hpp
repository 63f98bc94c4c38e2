#pragma once

// Coalition formation over client weight vectors.
//
// One round, given the previous centers v_j and the clients' current weights:
//   1. every non-center client joins the coalition of its nearest center;
//   2. each coalition's barycenter b_j is the mean of its members' weights,
//      center included;
//   3. the member closest to b_j becomes the next center of coalition j;
//   4. the global model is the unweighted mean of the K barycenters.
// All ties go to the lowest coalition index / client id.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedcoal/error.hpp"
#include "fedcoal/paramvec.hpp"
#include "fedcoal/rng.hpp"

namespace fedcoal {

using ClientId = std::size_t;

/// Client weights indexed by client id.
using ClientWeights = std::vector<ParamVector>;

struct CoalitionState {
  std::uint64_t round = 0;
  std::vector<ClientId> anchors;                 // centers used for this round's assignment
  std::vector<std::vector<ClientId>> members;    // ascending client ids per coalition
  std::vector<ParamVector> barycenters;          // empty before the first round
  std::vector<ClientId> centers;                 // centers for the next round

  std::size_t k() const noexcept { return centers.size(); }
};

struct GlobalModel {
  std::uint64_t round = 0;
  ParamVector theta;
};

class DegenerateWeights : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void check_weights(const ClientWeights& weights, const char* where) {
  if (weights.empty()) throw InvalidArgument(std::string(where) + ": no clients");
  for (const auto& w : weights) {
    if (w.dim() != weights.front().dim()) throw DimensionMismatch(weights.front().dim(), w.dim(), where);
  }
}

inline void check_centers(std::span<const ClientId> centers, std::size_t n_clients, const char* where) {
  if (centers.size() < 1) throw InvalidArgument(std::string(where) + ": need at least one center");
  std::vector<bool> seen(n_clients, false);
  for (ClientId c : centers) {
    if (c >= n_clients) throw InvalidArgument(std::string(where) + ": center id " + std::to_string(c) + " out of range");
    if (seen[c]) throw InvalidArgument(std::string(where) + ": duplicate center id " + std::to_string(c));
    seen[c] = true;
  }
}

inline bool pairwise_distinct(const ClientWeights& weights, std::span<const ClientId> ids) {
  for (std::size_t a = 0; a < ids.size(); ++a) {
    for (std::size_t b = a + 1; b < ids.size(); ++b) {
      if (!(euclidean_distance(weights[ids[a]], weights[ids[b]]) > 0.0)) return false;
    }
  }
  return true;
}

/// Lexicographic enumeration of k-subsets of [0, n); stops at the first that
/// satisfies pred.
template <typename Pred>
bool any_subset(std::size_t n, std::size_t k, Pred&& pred) {
  std::vector<ClientId> idx(k);
  std::iota(idx.begin(), idx.end(), ClientId{0});
  for (;;) {
    if (pred(std::span<const ClientId>(idx))) return true;
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + (i - 1)) --i;
    if (i == 0) return false;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace detail

inline constexpr int kMaxCenterDraws = 10000;

/// K distinct initial centers with pairwise nonzero weight distance, drawn
/// uniformly without replacement and resampled until the distance condition
/// holds. Throws DegenerateWeights when no valid K-subset exists.
inline std::vector<ClientId> init_centers(const ClientWeights& weights, std::size_t k, std::uint64_t seed) {
  detail::check_weights(weights, "init_centers");
  const std::size_t n = weights.size();
  if (k < 1 || k > n) {
    throw InvalidArgument("init_centers: need 1 <= K <= clients (K=" + std::to_string(k) +
                          ", clients=" + std::to_string(n) + ")");
  }

  for (int draw = 0; draw < kMaxCenterDraws; ++draw) {
    CounterRng rng(derive_seed(seed, "init-centers", static_cast<std::uint64_t>(draw)));
    std::vector<ClientId> pool(n);
    std::iota(pool.begin(), pool.end(), ClientId{0});
    // Partial Fisher-Yates: the first k slots are a uniform k-sample in draw order.
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.below(n - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    if (detail::pairwise_distinct(weights, pool)) return pool;

    // Only after a rejection: make sure a valid subset exists at all.
    if (draw == 0 && !detail::any_subset(n, k, [&](std::span<const ClientId> s) {
          return detail::pairwise_distinct(weights, s);
        })) {
      throw DegenerateWeights("init_centers: degenerate weight set, no " + std::to_string(k) +
                              " clients have pairwise distinct weights");
    }
  }
  throw DegenerateWeights("init_centers: no valid center set found after " +
                          std::to_string(kMaxCenterDraws) + " draws");
}

/// Nearest-center assignment. Centers stay in their own coalition.
inline std::vector<std::vector<ClientId>> assign_members(const ClientWeights& weights,
                                                         std::span<const ClientId> centers) {
  detail::check_weights(weights, "assign_members");
  detail::check_centers(centers, weights.size(), "assign_members");

  std::vector<std::vector<ClientId>> members(centers.size());
  std::vector<std::ptrdiff_t> center_slot(weights.size(), -1);
  for (std::size_t j = 0; j < centers.size(); ++j) center_slot[centers[j]] = static_cast<std::ptrdiff_t>(j);

  for (ClientId i = 0; i < weights.size(); ++i) {
    if (center_slot[i] >= 0) {
      members[static_cast<std::size_t>(center_slot[i])].push_back(i);
      continue;
    }
    std::size_t best = 0;
    double best_d = euclidean_distance(weights[i], weights[centers[0]]);
    for (std::size_t j = 1; j < centers.size(); ++j) {
      const double d = euclidean_distance(weights[i], weights[centers[j]]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    members[best].push_back(i);
  }
  return members;
}

/// b_j = mean of member weights in ascending client-id order.
inline std::vector<ParamVector> coalition_barycenters(const ClientWeights& weights,
                                                      const std::vector<std::vector<ClientId>>& members) {
  detail::check_weights(weights, "coalition_barycenters");
  std::vector<ParamVector> out;
  out.reserve(members.size());
  for (std::size_t j = 0; j < members.size(); ++j) {
    if (members[j].empty()) {
      throw InvalidArgument("coalition_barycenters: coalition " + std::to_string(j) + " is empty");
    }
    std::vector<ClientId> sorted = members[j];
    std::sort(sorted.begin(), sorted.end());
    std::vector<const ParamVector*> refs;
    refs.reserve(sorted.size());
    for (ClientId id : sorted) {
      if (id >= weights.size()) throw InvalidArgument("coalition_barycenters: client id out of range");
      refs.push_back(&weights[id]);
    }
    out.push_back(barycenter(refs));
  }
  return out;
}

/// Next center of each coalition: the member nearest its barycenter.
inline std::vector<ClientId> elect_centers(const ClientWeights& weights,
                                           const std::vector<std::vector<ClientId>>& members,
                                           const std::vector<ParamVector>& barycenters) {
  if (members.size() != barycenters.size()) {
    throw DimensionMismatch(members.size(), barycenters.size(), "elect_centers: coalition count");
  }
  std::vector<ClientId> centers;
  centers.reserve(members.size());
  for (std::size_t j = 0; j < members.size(); ++j) {
    if (members[j].empty()) throw InvalidArgument("elect_centers: coalition " + std::to_string(j) + " is empty");
    std::optional<ClientId> best;
    double best_d = 0.0;
    for (ClientId id : members[j]) {
      const double d = euclidean_distance(weights.at(id), barycenters[j]);
      if (!best || d < best_d || (d == best_d && id < *best)) {
        best = id;
        best_d = d;
      }
    }
    centers.push_back(*best);
  }
  return centers;
}

/// Unweighted mean of the coalition barycenters, j = 1..K.
inline ParamVector aggregate_global(std::span<const ParamVector> barycenters) {
  if (barycenters.empty()) throw InvalidArgument("aggregate_global: no barycenters");
  return barycenter(barycenters);
}

struct CoalitionRoundResult {
  CoalitionState state;
  GlobalModel global;
};

/// One full round: assign with prev.centers, barycenters, elect the next
/// centers, aggregate. The returned global model carries round prev.round + 1.
inline CoalitionRoundResult coalition_round(const ClientWeights& weights, const CoalitionState& prev) {
  detail::check_weights(weights, "coalition_round");
  detail::check_centers(prev.centers, weights.size(), "coalition_round");

  CoalitionState next;
  next.round = prev.round + 1;
  next.anchors = prev.centers;
  next.members = assign_members(weights, prev.centers);
  next.barycenters = coalition_barycenters(weights, next.members);
  next.centers = elect_centers(weights, next.members, next.barycenters);
  GlobalModel global{next.round, aggregate_global(next.barycenters)};
  return {std::move(next), std::move(global)};
}

/// Initial state holding only the round-0 centers.
inline CoalitionState initial_state(std::vector<ClientId> centers) {
  CoalitionState s;
  s.round = 0;
  s.centers = std::move(centers);
  return s;
}

}  // namespace fedcoal
